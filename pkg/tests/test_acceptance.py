"""Acceptance suite: one test per criterion, each printing a PASS line with
the measured numbers (run with `pytest -s tests/test_acceptance.py` to see
them).  Tolerances are pinned here and nowhere else.
"""

import math
from fractions import Fraction

import numpy as np
import pytest

from softex.cli import main as cli_main
from softex.expu import error_stats, expp_bits, exps_bits
from softex.gelu import gelu_bits, gelu_reference, sum_exp_bits
from softex.mesh import (
    MeshConfig,
    max_of_two_triangular_mean,
    mesh_sweep,
    path_delay_oracle,
)
from softex.minimax import MinimaxProblem, q_reference, residual, solve_minimax
from softex.numerics import bf16_from_wide, bf16_to_f64
from softex.perf import SoftexConfig, expected_rescales, softmax_cycles, sumexp_cycles
from softex.softmax import (
    SoftmaxState,
    accumulate_chunk,
    expp_as_f64,
    invert_denominator,
    online_twopass_exact_equal,
    softmax_rows_bits,
)


@pytest.fixture(scope="module")
def exp_stats_1e7():
    n = 10_000_000
    fp = lambda b: bf16_to_f64(expp_bits(b))
    fs = lambda b: bf16_to_f64(exps_bits(b))
    return (error_stats(fp, -88.7, 88.7, n, seed=7),
            error_stats(fs, -88.7, 88.7, n, seed=7))


@pytest.fixture(scope="module")
def fitted_solutions():
    return {n: solve_minimax(MinimaxProblem(n_terms=n)) for n in range(1, 6)}


def test_criterion_01_expp_accuracy(exp_stats_1e7):
    """Corrected exponential: mre in [0.10%, 0.20%], max <= 0.85%."""
    st_p, _ = exp_stats_1e7
    assert 0.0010 <= st_p["mre"] <= 0.0020
    assert st_p["max_re"] <= 0.0085
    print(f"\nACCEPTANCE 1 PASS: expp mre={st_p['mre']:.4%} (in [0.10%,0.20%]) "
          f"max={st_p['max_re']:.4%} (<=0.85%)")


def test_criterion_02_improvement_ratios(exp_stats_1e7):
    """>=10x lower mean and >=3x lower max error than the baseline."""
    st_p, st_s = exp_stats_1e7
    mre_ratio = st_s["mre"] / st_p["mre"]
    max_ratio = st_s["max_re"] / st_p["max_re"]
    assert mre_ratio >= 10.0
    assert max_ratio >= 3.0
    print(f"ACCEPTANCE 2 PASS: mre ratio {mre_ratio:.1f}x (>=10x), "
          f"max ratio {max_ratio:.1f}x (>=3x)")


def test_criterion_03_softmax_fidelity():
    """1000 standard-normal length-1024 rows: per-row MRE <= 1%, sums in the
    stated band; running max bit-exact on every row and on sorted-ascending
    adversarial variants."""
    rng = np.random.default_rng(2024)
    mat = bf16_from_wide(rng.standard_normal((1000, 1024)))
    out, _, run_max = softmax_rows_bits(mat, lanes=16)

    x = bf16_to_f64(mat)
    e = np.exp(x - x.max(axis=1, keepdims=True))
    ref = e / e.sum(axis=1, keepdims=True)
    got = bf16_to_f64(out)
    mre_rows = np.mean(np.abs(got - ref) / ref, axis=1)
    assert float(mre_rows.max()) <= 0.01

    sums = got.sum(axis=1)
    lo, hi = 1 - 1024 * 2.0 ** -7, 1 + 1024 * 2.0 ** -7
    assert np.all((sums >= lo) & (sums <= hi))
    assert np.array_equal(bf16_to_f64(run_max), x.max(axis=1))

    # adversarial monotone-increasing rows: every group raises the maximum,
    # yet the streamed maximum stays bit-exact and the outputs remain sane
    adv = mat[:32][np.arange(32)[:, None],
                   np.argsort(x[:32], axis=1, kind="stable")]
    assert np.all(np.diff(bf16_to_f64(adv), axis=1) >= 0)
    adv_out, adv_resc, adv_max = softmax_rows_bits(adv, lanes=16)
    assert np.array_equal(bf16_to_f64(adv_max), bf16_to_f64(adv).max(axis=1))
    # nearly every group raises the maximum (ties between groups excepted)
    assert np.all((adv_resc >= 50) & (adv_resc <= 63))
    adv_sums = bf16_to_f64(adv_out).sum(axis=1)
    assert np.all((adv_sums >= lo) & (adv_sums <= hi))

    print(f"ACCEPTANCE 3 PASS: worst row MRE {mre_rows.max():.4%} (<=1%), "
          f"max |sum-1| {np.abs(sums - 1).max():.2e}, running max exact on "
          f"1000 rows + 32 sorted-ascending rows")


def test_criterion_04_online_twopass_equivalence():
    """Exact-rational equality on 1e4 dyadic vectors; implemented-precision
    denominators within 2^-7 on length-512 vectors."""
    rng = np.random.default_rng(4)
    for _ in range(10_000):
        length = int(rng.integers(1, 17))
        mbits = int(rng.integers(0, 5))
        vals = [Fraction(int(rng.integers(-128, 129)), 1 << mbits)
                for _ in range(length)]
        assert online_twopass_exact_equal(vals, lanes=int(rng.integers(1, 9)))

    worst = 0.0
    for _ in range(100):
        v = bf16_to_f64(bf16_from_wide(rng.standard_normal(512)))
        st = SoftmaxState(lanes=16)
        accumulate_chunk(st, bf16_from_wide(v))
        twopass = expp_as_f64()(v - v.max()).sum()
        worst = max(worst, abs(float(st.denom) - twopass) / twopass)
    assert worst <= 2.0 ** -7
    print(f"ACCEPTANCE 4 PASS: 10000 exact-rational equalities; "
          f"worst denominator deviation {worst:.2e} (<=2^-7)")


def test_criterion_05_reciprocal():
    """Newton reciprocal: <=2^-7 on 1e6 log-uniform inputs; bitwise fixtures."""
    assert float(invert_denominator(np.float32(1.0))) == 0.99609375
    assert float(invert_denominator(np.float32(2.0))) == 0.498046875
    rng = np.random.default_rng(5)
    d = np.exp(rng.uniform(np.log(1e-30), np.log(1e30), 1_000_000)).astype(np.float32)
    y = invert_denominator(d)
    rel = np.abs(y.astype(np.float64) * d.astype(np.float64) - 1.0)
    assert float(rel.max()) <= 2.0 ** -7
    print(f"ACCEPTANCE 5 PASS: fixtures bitwise; worst of 1e6 "
          f"{float(rel.max()):.3e} (<=2^-7={2.0**-7:.3e})")


def test_criterion_06_minimax_fitter(fitted_solutions):
    """Equioscillation conditions at 1e-8 for N=1..5; r_max strictly down."""
    prev = math.inf
    for n in range(1, 6):
        sol = fitted_solutions[n]
        r = sol.err_max
        assert abs(float(residual(sol.a, sol.b, 0.0, "relative")) + r) <= 1e-8
        assert abs(float(residual(sol.a, sol.b, 2.8, "relative")) + r) <= 1e-8
        assert abs(sol.a.sum() - (0.5 - r / 2)) <= 1e-8
        lev = residual(sol.a, sol.b, sol.extrema, "relative")
        assert np.all(np.abs(np.abs(lev) - r) <= 1e-8)
        assert np.all(np.sign(lev)[1:] != np.sign(lev)[:-1])
        assert r < prev
        prev = r
    rs = ", ".join(f"N={n}:{fitted_solutions[n].err_max:.3e}" for n in range(1, 6))
    print(f"ACCEPTANCE 6 PASS: equioscillation at 1e-8; r_max {rs}")


def test_criterion_07_gelu_error_budget(fitted_solutions):
    """Max |gelu - x*Phi(x)| on a 1e5 grid within the assembled budget;
    accumulator refinement improves 14-bit over 8-bit lanes."""
    from softex.minimax import solution_to_params

    sol = fitted_solutions[4]
    params = solution_to_params(sol)
    r_max = sol.err_max  # 6.3480e-3 (regression-pinned in test_minimax)

    xs = np.linspace(-6.0, 6.0, 100_001)
    bits = bf16_from_wide(xs)
    x_exact = bf16_to_f64(bits)
    ref = gelu_reference(x_exact)
    got = bf16_to_f64(gelu_bits(bits, params, acc_bits=14))
    max_err = float(np.abs(got - ref).max())

    # Threshold per the stated budget: 2*r_max*max|x*Q(x)| over the grid
    # plus 6 lane-accumulator ulps times the grid's |x| bound.  The first
    # factor is dominated by the negative end, where Q -> 1.
    max_xq = float(np.abs(x_exact * q_reference(x_exact)).max())
    assert max_xq == pytest.approx(6.0, abs=1e-6)
    threshold = 2 * r_max * max_xq + 6 * 2.0 ** -14 * 6.0
    assert threshold == pytest.approx(0.0783735, abs=1e-6)  # frozen fixture
    assert max_err <= threshold

    # the fit+quantization components alone (r_max on |x|Q(|x|) <= 0.17,
    # lane truncation, BF16 weight/complement/output casts) bound the
    # observed error far more tightly; keep a regression lid at that scale
    assert max_err <= 0.012

    err8 = float(np.abs(bf16_to_f64(gelu_bits(bits, params, acc_bits=8)) - ref).max())
    assert max_err <= err8  # monotone improvement, 14 vs 8 bits
    # the accumulator's own truncation refines pointwise with width
    s_prev = None
    small = bits[::50]
    for acc_bits in range(8, 15):
        s = bf16_to_f64(sum_exp_bits(small, params, acc_bits))
        if s_prev is not None:
            assert np.all(s >= s_prev - 1e-12)
        s_prev = s
    print(f"ACCEPTANCE 7 PASS: max |err| {max_err:.5f} <= {threshold:.5f}; "
          f"14-bit {max_err:.5f} <= 8-bit {err8:.5f}")


def test_criterion_08_latency_ratios():
    """Speedup bands at length 2048."""
    ev = expected_rescales(2048)

    def s(lanes):
        return softmax_cycles(2048, ev, SoftexConfig(lanes=lanes))

    def e(lanes):
        return sumexp_cycles(2048, 4, SoftexConfig(lanes=lanes))

    r48 = s(4) / s(8)
    r3264 = s(32) / s(64)
    assert 1.8 <= r48 <= 2.05
    assert 1.35 <= r3264 <= 1.65
    sum_ratios = {}
    for k in (4, 8, 16, 32):
        rk = e(k) / e(2 * k)
        sum_ratios[k] = rk
        assert 1.9 <= rk <= 2.05
    print(f"ACCEPTANCE 8 PASS: softmax 4->8 {r48:.2f}, 32->64 {r3264:.2f}; "
          f"sumexp {', '.join(f'{k}->{2*k} {v:.2f}' for k, v in sum_ratios.items())}")


def test_criterion_09_mesh_model():
    """Slowdown and throughput bands; estimator vs exhaustive-path oracle."""
    cfg = MeshConfig(trials=1 << 16, seed=1)
    rows = {r["n"]: r for r in mesh_sweep([1, 2, 3, 8], cfg)}
    assert rows[1]["slowdown"] == 0.0
    assert rows[2]["slowdown"] < 0.02 and rows[3]["slowdown"] < 0.02
    assert 0.12 <= rows[8]["slowdown"] <= 0.22
    ratio = rows[8]["aggregate_gops"] / rows[1]["aggregate_gops"]
    assert 47 <= ratio <= 58

    for n in (1, 2, 3, 4):
        o = path_delay_oracle(MeshConfig(n=n, trials=1 << 13, seed=4))
        assert o["matches_dp"]  # same draws: enumeration == estimator
    o2 = path_delay_oracle(MeshConfig(n=2, trials=1 << 16, seed=6))
    se = o2["std"] / math.sqrt(1 << 16)
    assert abs(o2["mean"] - max_of_two_triangular_mean()) <= 3 * se
    print(f"ACCEPTANCE 9 PASS: slowdown n=3 {rows[3]['slowdown']:.3%}, "
          f"n=8 {rows[8]['slowdown']:.3%} (in [12%,22%]); agg ratio {ratio:.1f}x; "
          f"oracle within {abs(o2['mean'] - max_of_two_triangular_mean())/se:.2f} sigma")


def test_criterion_10_cli_determinism(tmp_path, capsys):
    """Every subcommand, run twice with identical flags, emits byte-identical
    reports."""
    invocations = {
        "exp-accuracy": ["exp-accuracy", "--n", "30000", "--seed", "9"],
        "softmax-bench": ["softmax-bench", "--rows", "16", "--cols", "128",
                          "--seed", "3"],
        "gelu-sweep": ["gelu-sweep", "--bits-min", "13", "--bits-max", "14",
                       "--terms-min", "2", "--terms-max", "3",
                       "--grid-points", "2001"],
        "fit-gelu": ["fit-gelu", "--terms", "3"],
        "fit-expp": ["fit-expp", "--trials", "200", "--seed", "5"],
        "latency-sweep": ["latency-sweep"],
        "mesh-sim": ["mesh-sim", "--n", "1,2,4", "--trials", "2048",
                     "--seed", "1"],
    }
    for name, args in invocations.items():
        outs = []
        for k in (0, 1):
            out = tmp_path / f"{name}.{k}"
            assert cli_main(args + ["--out", str(out)]) == 0, name
            outs.append(out.read_bytes())
        assert outs[0] == outs[1], f"{name} not byte-identical"
    capsys.readouterr()  # swallow the CLI's path echoes
    print(f"\nACCEPTANCE 10 PASS: {len(invocations)} subcommands byte-identical "
          f"across repeated runs")

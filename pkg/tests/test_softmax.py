"""Softmax engine tests: phase fixtures, oracles, and batch equivalence."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from softex.numerics import bf16_from_wide, bf16_to_f64
from softex.softmax import (
    SoftmaxState,
    accumulate_chunk,
    expp_as_f64,
    exps_as_f64,
    invert_denominator,
    normalize_chunk,
    online_twopass_exact_equal,
    read_matrix,
    reference_softmax,
    softmax,
    softmax_accuracy_report,
    softmax_bits,
    softmax_rows_bits,
    tree_sum_f32,
    write_matrix,
)


# ----------------------------------------------------------------------
# accumulation
# ----------------------------------------------------------------------

def test_accumulate_all_zeros():
    st_ = SoftmaxState(lanes=4)
    accumulate_chunk(st_, bf16_from_wide([0.0, 0.0, 0.0, 0.0]))
    assert float(st_.denom) == 4.0
    assert st_.running_max_value == 0.0
    assert st_.elements_seen == 4
    assert st_.rescale_log == []


def test_accumulate_single_element():
    st_ = SoftmaxState(lanes=16)
    accumulate_chunk(st_, bf16_from_wide([3.25]))
    assert float(st_.denom) == 1.0  # x - max(x) = 0
    assert st_.running_max_value == 3.25


def test_accumulate_monotone_one_at_a_time():
    # every element raises the maximum; the rescaled denominator must stay
    # within 2^-7 of the two-pass value computed with the same exponential
    st_ = SoftmaxState(lanes=1)
    vals = [float(v) for v in range(1, 17)]
    for v in vals:
        accumulate_chunk(st_, bf16_from_wide([v]))
    assert len(st_.rescale_log) == 15
    x = bf16_to_f64(bf16_from_wide(vals))
    twopass = expp_as_f64()(x - x.max()).sum()
    assert abs(float(st_.denom) - twopass) / twopass <= 2.0 ** -7
    # rescale events strictly increase in the new maximum
    new_maxes = [ev[1] for ev in st_.rescale_log]
    assert all(b > a for a, b in zip(new_maxes, new_maxes[1:]))


def test_running_max_is_exact_bitwise():
    rng = np.random.default_rng(7)
    vals = rng.standard_normal(257)
    bits = bf16_from_wide(vals)
    st_ = SoftmaxState(lanes=16)
    accumulate_chunk(st_, bits)
    assert st_.running_max_value == bf16_to_f64(bits).max()


def test_nan_rejected_at_ingest():
    st_ = SoftmaxState(lanes=4)
    with pytest.raises(ValueError):
        accumulate_chunk(st_, bf16_from_wide([1.0, float("nan")]))


def test_tie_does_not_rescale():
    st_ = SoftmaxState(lanes=1)
    accumulate_chunk(st_, bf16_from_wide([2.0]))
    accumulate_chunk(st_, bf16_from_wide([2.0]))  # equal max: no event
    assert st_.rescale_log == []
    # -0 then +0 is also not an increase in the total order used for max
    st2 = SoftmaxState(lanes=1)
    accumulate_chunk(st2, bf16_from_wide([-0.0]))
    accumulate_chunk(st2, bf16_from_wide([0.0]))
    assert len(st2.rescale_log) == 1  # +0 > -0 strictly, so it does rescale
    assert st2.rescale_log[0] == (-0.0, 0.0)


def test_tree_sum_is_balanced_and_deterministic():
    v = np.arange(16, dtype=np.float32)
    assert float(tree_sum_f32(v)) == 120.0
    m = np.arange(32, dtype=np.float32).reshape(2, 16)
    assert np.array_equal(tree_sum_f32(m, axis=1),
                          np.array([120.0, 376.0], dtype=np.float32))


# ----------------------------------------------------------------------
# inversion
# ----------------------------------------------------------------------

def test_invert_hand_traced_fixtures():
    # d=1: seed 0.75 -> 0.9375 -> 0.99609375, exact dyadics at every step
    assert float(invert_denominator(np.float32(1.0))) == 0.99609375
    # d=2: seed 0.375 -> 0.46875 -> 0.498046875
    assert float(invert_denominator(np.float32(2.0))) == 0.498046875


def test_invert_seed_exponent_is_exact():
    for e in range(-30, 31):
        d = np.float32(2.0 ** e)
        y = float(invert_denominator(d))
        assert abs(y * float(d) - 1.0) <= 2.0 ** -7


def test_invert_rejects_bad_inputs():
    for bad in (0.0, -1.0, float("inf"), float("nan"), 1e-45):
        with pytest.raises(ValueError):
            invert_denominator(np.float32(bad))


def test_invert_bound_log_uniform():
    rng = np.random.default_rng(5)
    d = np.exp(rng.uniform(np.log(1e-30), np.log(1e30), 200_000)).astype(np.float32)
    y = invert_denominator(d)
    rel = np.abs(y.astype(np.float64) * d.astype(np.float64) - 1.0)
    assert float(rel.max()) <= 2.0 ** -7


# ----------------------------------------------------------------------
# normalization and the driver
# ----------------------------------------------------------------------

def test_softmax_two_equal():
    out = softmax([0.0, 0.0], lanes=4)
    assert np.allclose(out, 0.5, rtol=2 ** -7)
    assert out[0] == out[1]


def test_softmax_extreme_spread_is_stable():
    out = softmax([40.0, -40.0], lanes=4)
    assert abs(out[0] - 1.0) <= 2.0 ** -7
    assert 0.0 <= out[1] <= 1e-30
    assert np.all(np.isfinite(out))


def test_softmax_single_element():
    out = softmax([5.0], lanes=16)
    assert abs(out[0] - 1.0) <= 2.0 ** -7  # one ulp at 1.0


def test_softmax_all_equal_length():
    # Newton undershoot puts the output within one BF16 ulp of 1/L (exactly
    # 1/L for non-dyadic L once rounded)
    for L in (3, 4, 7):
        out = softmax([1.25] * L, lanes=4)
        assert np.all(np.abs(out - 1.0 / L) <= 2.0 ** -7 / L + 1e-12)


def test_softmax_empty_rejected():
    with pytest.raises(ValueError):
        softmax_bits(np.array([], dtype=np.uint16))


def test_softmax_matches_two_pass_reference_with_expp():
    rng = np.random.default_rng(11)
    vals = rng.standard_normal(512)
    bits = bf16_from_wide(vals)
    out = bf16_to_f64(softmax_bits(bits, lanes=16))
    ref = reference_softmax(bf16_to_f64(bits), exp_fn=expp_as_f64())
    # element-wise within 2 BF16 ulps of the reference value
    ulp = 2.0 ** (np.floor(np.log2(np.maximum(ref, 1e-300))) - 7)
    assert np.all(np.abs(out - ref) <= 2 * ulp + 1e-30)


def test_argmax_preserved_unique_max():
    rng = np.random.default_rng(13)
    for _ in range(20):
        vals = rng.standard_normal(100)
        vals[rng.integers(100)] += 8.0  # unique max far above the rest
        bits = bf16_from_wide(vals)
        out = bf16_to_f64(softmax_bits(bits, lanes=16))
        assert np.argmax(out) == np.argmax(bf16_to_f64(bits))


def test_reference_softmax_sums_to_one():
    rng = np.random.default_rng(17)
    x = rng.standard_normal(300)
    s = reference_softmax(x).sum()
    assert abs(s - 1.0) <= 4 * 300 * np.finfo(np.float64).eps
    assert reference_softmax([0.0]) == [1.0]
    with pytest.raises(ValueError):
        reference_softmax([])


def test_reference_softmax_expp_beats_exps():
    rng = np.random.default_rng(19)
    xs = rng.standard_normal((50, 1024))
    mre_p, mre_s = [], []
    for row in xs:
        x = bf16_to_f64(bf16_from_wide(row))
        ref = reference_softmax(x)
        mre_p.append(np.mean(np.abs(reference_softmax(x, expp_as_f64()) - ref) / ref))
        mre_s.append(np.mean(np.abs(reference_softmax(x, exps_as_f64()) - ref) / ref))
    assert np.mean(mre_s) / np.mean(mre_p) >= 2.0


def test_normalize_requires_accumulated_state():
    st_ = SoftmaxState(lanes=4)
    with pytest.raises(ValueError):
        normalize_chunk(st_, bf16_from_wide([1.0]), 0x3F80)


# ----------------------------------------------------------------------
# exact online/two-pass oracle and the batch engine
# ----------------------------------------------------------------------

def test_online_twopass_exact_on_dyadic_vectors():
    rng = np.random.default_rng(23)
    for _ in range(500):
        length = int(rng.integers(1, 17))
        mbits = int(rng.integers(0, 7))
        vals = [Fraction(int(rng.integers(-512, 513)), 1 << mbits)
                for _ in range(length)]
        lanes = int(rng.integers(1, 9))
        assert online_twopass_exact_equal(vals, lanes)


def test_online_twopass_exact_adversarial_orders():
    inc = [Fraction(k, 4) for k in range(16)]
    assert online_twopass_exact_equal(inc, lanes=3)
    assert online_twopass_exact_equal(list(reversed(inc)), lanes=3)


def test_batch_matches_scalar_bitwise():
    rng = np.random.default_rng(29)
    mat = bf16_from_wide(rng.standard_normal((8, 100)))
    out, rescales, run_max = softmax_rows_bits(mat, lanes=16)
    for i in range(8):
        st_ = SoftmaxState(lanes=16)
        row = softmax_bits(mat[i], lanes=16, state_out=st_)
        assert np.array_equal(out[i], row)
        assert rescales[i] == len(st_.rescale_log)
        assert int(run_max[i]) == st_.running_max


def test_batch_running_max_exact():
    rng = np.random.default_rng(31)
    mat = bf16_from_wide(rng.standard_normal((20, 256)))
    mat[3] = np.sort(mat[3])  # pathological monotone row survives too
    _, _, run_max = softmax_rows_bits(mat, lanes=16)
    assert np.array_equal(bf16_to_f64(run_max), bf16_to_f64(mat).max(axis=1))


def test_accuracy_report_schema():
    rng = np.random.default_rng(37)
    mat = bf16_from_wide(rng.standard_normal((5, 64)))
    rows = softmax_accuracy_report(mat)
    assert [r["row"] for r in rows] == [0, 1, 2, 3, 4]
    assert all(0 <= r["mre"] <= 0.02 and abs(r["sum_dev"]) < 0.05 for r in rows)


def test_matrix_file_roundtrip(tmp_path):
    rng = np.random.default_rng(41)
    mat = bf16_from_wide(rng.standard_normal((7, 33)))
    path = tmp_path / "scores.bin"
    write_matrix(path, mat)
    assert np.array_equal(read_matrix(path), mat)
    # header is 8 bytes: rows, cols little-endian u32
    raw = path.read_bytes()
    assert len(raw) == 8 + 7 * 33 * 2
    bad = tmp_path / "trunc.bin"
    bad.write_bytes(raw[:-2])
    with pytest.raises(ValueError):
        read_matrix(bad)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(min_value=-20, max_value=20, allow_nan=False,
                          allow_infinity=False), min_size=1, max_size=64),
       st.sampled_from([1, 3, 4, 16]))
def test_softmax_output_sum_property(vals, lanes):
    out = softmax(vals, lanes=lanes)
    L = len(vals)
    assert 1 - L * 2.0 ** -7 <= float(out.sum()) <= 1 + L * 2.0 ** -7
    assert np.all(out >= 0)

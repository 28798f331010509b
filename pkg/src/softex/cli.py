"""Command-line front door for the reproduction experiments.

Every subcommand drives one module and writes a CSV or JSON report with the
seed recorded in a comment header; identical invocations produce
byte-identical files.  All randomness flows from the --seed flag through
named per-module substreams, so adding a subcommand never perturbs
another's results.  The default output directory comes from SOFTEX_OUT_DIR
(falling back to the working directory).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

VERSION = "0.1.0"

# Fixed substream tags: one per module, independent of CLI flag order.
STREAMS = {
    "expu": 1,
    "softmax": 2,
    "gelu": 3,
    "mesh": 4,
    "fit": 5,
}


def substream_seed(seed: int, module: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, STREAMS[module]])


def emit_report(rows, columns, path, seed, extra_comment: str = "") -> None:
    """CSV with a reproducibility comment line; UTF-8, LF endings."""
    lines = [f"# softex-report v{VERSION} seed={seed}"
             + (f" {extra_comment}" if extra_comment else "")]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_format(row[c]) for c in columns))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def _format(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _out_path(args, default_name: str) -> str:
    if args.out:
        return args.out
    base = os.environ.get("SOFTEX_OUT_DIR", ".")
    return os.path.join(base, default_name)


def _cmd_exp_accuracy(args) -> int:
    from .expu import exp_error_report

    rows = exp_error_report(args.n, args.seed, args.lo, args.hi)
    path = _out_path(args, "exp_accuracy.csv")
    emit_report(rows, ["fn", "n", "lo", "hi", "mre", "max_re"], path, args.seed)
    print(path)
    return 0


def _cmd_softmax_bench(args) -> int:
    from .numerics import bf16_from_wide
    from .softmax import read_matrix, softmax_accuracy_report

    if args.input:
        matrix = read_matrix(args.input)
    else:
        rng = np.random.default_rng(substream_seed(args.seed, "softmax"))
        matrix = bf16_from_wide(rng.standard_normal((args.rows, args.cols)))
    rows = softmax_accuracy_report(matrix, lanes=args.lanes)
    path = _out_path(args, "softmax_bench.csv")
    emit_report(rows, ["row", "mre", "max_re", "sum_dev"], path, args.seed,
                extra_comment=f"lanes={args.lanes}")
    print(path)
    return 0


def _fit_param_sets(term_counts, x_end):
    from .minimax import fit_gelu_params

    return {n: fit_gelu_params(n, x_end=x_end)[0] for n in term_counts}


def _cmd_gelu_sweep(args) -> int:
    from .gelu import bits_terms_sweep

    terms = range(args.terms_min, args.terms_max + 1)
    params = _fit_param_sets(terms, args.x_end)
    rows = bits_terms_sweep(params,
                            acc_bits_range=range(args.bits_min, args.bits_max + 1),
                            grid_points=args.grid_points)
    path = _out_path(args, "gelu_sweep.csv")
    emit_report(rows, ["bits", "terms", "max_abs_err", "mean_abs_err", "max_rel_err"],
                path, args.seed)
    print(path)
    return 0


def _cmd_fit_gelu(args) -> int:
    from .minimax import MinimaxProblem, save_fit, solve_minimax

    sol = solve_minimax(MinimaxProblem(n_terms=args.terms, x_end=args.x_end,
                                       metric=args.metric, r0_mode=args.r0_mode))
    params_path = args.out or _out_path(args, f"gelu_params_n{args.terms}.json")
    report_path = args.report or None
    save_fit(sol, params_path, report_path)
    print(params_path)
    if report_path:
        print(report_path)
    return 0


def _cmd_fit_expp(args) -> int:
    from .expu import fit_expp_params

    params = fit_expp_params(args.trials, args.seed)
    path = args.out or _out_path(args, "expp_params.json")
    params.save(path)
    print(path)
    return 0


def _cmd_latency_sweep(args) -> int:
    from .perf import SoftexConfig, lane_sweep

    lengths = [int(v) for v in args.lens.split(",")]
    lanes = [int(v) for v in args.lanes.split(",")]
    rows = lane_sweep(lengths, lanes, n_w=args.n_w, base_cfg=SoftexConfig())
    path = _out_path(args, "latency_sweep.csv")
    emit_report(rows, ["lanes", "len", "kernel", "cycles",
                       "throughput_elems_per_cycle"], path, args.seed)
    print(path)
    return 0


def _cmd_mesh_sim(args) -> int:
    from .mesh import MeshConfig, mesh_sweep

    n_list = [int(v) for v in args.n.split(",")]
    cfg = MeshConfig(trials=args.trials, seed=args.seed)
    rows = mesh_sweep(n_list, cfg)
    path = _out_path(args, "mesh_sim.csv")
    emit_report(rows, ["n", "aggregate_gops", "per_cluster_gops", "slowdown",
                       "bandwidth_gbps"], path, args.seed,
                extra_comment=f"trials={args.trials}")
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="softex",
        description="Bit-accurate softmax/GELU datapath model: reproduction "
                    "experiments and parameter fitters.")
    sub = p.add_subparsers(dest="command", required=True)
    F = argparse.ArgumentDefaultsHelpFormatter

    s = sub.add_parser("exp-accuracy", formatter_class=F,
                       help="relative-error stats of the approximate exponentials")
    s.add_argument("--n", type=int, default=10_000_000, help="sample count")
    s.add_argument("--lo", type=float, default=-88.7, help="range low end")
    s.add_argument("--hi", type=float, default=88.7, help="range high end")
    s.add_argument("--seed", type=int, default=7, help="RNG seed")
    s.add_argument("--out", default=None, help="output CSV path")
    s.set_defaults(func=_cmd_exp_accuracy)

    s = sub.add_parser("softmax-bench", formatter_class=F,
                       help="per-row softmax accuracy against the float64 reference")
    s.add_argument("--rows", type=int, default=1000, help="number of vectors")
    s.add_argument("--cols", type=int, default=1024, help="vector length")
    s.add_argument("--lanes", type=int, default=16, help="datapath lanes")
    s.add_argument("--seed", type=int, default=7, help="RNG seed")
    s.add_argument("--input", default=None,
                   help="binary matrix file (header rows,cols as <u4; BF16 patterns)")
    s.add_argument("--out", default=None, help="output CSV path")
    s.set_defaults(func=_cmd_softmax_bench)

    s = sub.add_parser("gelu-sweep", formatter_class=F,
                       help="GELU error over accumulator bits x term count")
    s.add_argument("--bits-min", type=int, default=8)
    s.add_argument("--bits-max", type=int, default=14)
    s.add_argument("--terms-min", type=int, default=1)
    s.add_argument("--terms-max", type=int, default=6)
    s.add_argument("--x-end", type=float, default=2.8, help="fit truncation point")
    s.add_argument("--grid-points", type=int, default=20001)
    s.add_argument("--seed", type=int, default=7, help="recorded in the report")
    s.add_argument("--out", default=None, help="output CSV path")
    s.set_defaults(func=_cmd_gelu_sweep)

    s = sub.add_parser("fit-gelu", formatter_class=F,
                       help="solve the equioscillation system for the GELU weights")
    s.add_argument("--terms", type=int, default=4, help="number of exponentials")
    s.add_argument("--x-end", type=float, default=2.8, help="endpoint of the fit range")
    s.add_argument("--metric", choices=["relative", "absolute"], default="relative")
    s.add_argument("--r0-mode", choices=["zero", "minus_rmax"], default="minus_rmax")
    s.add_argument("--seed", type=int, default=7, help="recorded in the report")
    s.add_argument("--out", default=None, help="parameter JSON path")
    s.add_argument("--report", default=None, help="fit report JSON path")
    s.set_defaults(func=_cmd_fit_gelu)

    s = sub.add_parser("fit-expp", formatter_class=F,
                       help="Monte Carlo search for the mantissa-correction constants")
    s.add_argument("--trials", type=int, default=1_000_000, help="search trials")
    s.add_argument("--seed", type=int, default=7, help="RNG seed")
    s.add_argument("--out", default=None, help="parameter JSON path")
    s.set_defaults(func=_cmd_fit_expp)

    s = sub.add_parser("latency-sweep", formatter_class=F,
                       help="cycle model over vector lengths and lane counts")
    s.add_argument("--lens", default="128,512,2048", help="comma-separated lengths")
    s.add_argument("--lanes", default="4,8,16,32,64", help="comma-separated lane counts")
    s.add_argument("--n-w", type=int, default=4, help="sum-of-exponentials terms")
    s.add_argument("--seed", type=int, default=7, help="recorded in the report")
    s.add_argument("--out", default=None, help="output CSV path")
    s.set_defaults(func=_cmd_latency_sweep)

    s = sub.add_parser("mesh-sim", formatter_class=F,
                       help="Monte Carlo mesh contention model")
    s.add_argument("--n", default="8", help="comma-separated mesh sides")
    s.add_argument("--trials", type=int, default=1 << 16, help="Monte Carlo trials")
    s.add_argument("--seed", type=int, default=1, help="RNG seed")
    s.add_argument("--out", default=None, help="output CSV path")
    s.set_defaults(func=_cmd_mesh_sim)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except Exception as e:  # machine-readable error record on stderr
        record = {"error": type(e).__name__, "message": str(e),
                  "command": args.command}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

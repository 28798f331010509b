"""Bit-accurate model and verification harness for a BF16 softmax/GELU
accelerator datapath: approximate exponentials, streaming softmax,
sum-of-exponentials GELU with fixed-point lane accumulation, the minimax
weight fitter, and latency/mesh scaling models."""

from .expu import (
    DEFAULT_PARAMS,
    ExppParams,
    correct_mantissa,
    error_stats,
    expp,
    expp_bits,
    exps,
    exps_bits,
    fit_expp_params,
)
from .gelu import (
    SumExpParams,
    bits_terms_sweep,
    gelu,
    gelu_bits,
    gelu_reference,
    gelu_sigmoid_baseline,
    gelu_tanh_baseline,
    sum_exp_bits,
)
from .mesh import MeshConfig, MeshReport, WorkloadSpec, mesh_sweep, path_delay_oracle, simulate_mesh
from .minimax import (
    MinimaxConvergenceError,
    MinimaxProblem,
    MinimaxSolution,
    chiani_init,
    fit_gelu_params,
    q_reference,
    residual,
    solve_minimax,
)
from .numerics import (
    FIXED14,
    FixedFormat,
    bf16_from_wide,
    bf16_to_f32,
    bf16_to_f64,
    fixed14_from_wide,
    fixed14_sat_add,
    fixed14_to_bf16,
)
from .perf import SoftexConfig, expected_rescales, lane_sweep, softmax_cycles, sumexp_cycles
from .softmax import (
    SoftmaxState,
    accumulate_chunk,
    invert_denominator,
    normalize_chunk,
    reference_softmax,
    softmax,
    softmax_bits,
    softmax_rows_bits,
)

__version__ = "0.1.0"

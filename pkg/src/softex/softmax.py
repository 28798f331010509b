"""Streaming softmax over BF16 vectors, modelled at the accelerator's
precision boundaries.

The computation runs in the datapath's three phases:

  accumulation:  inputs consumed N per cycle; the running maximum offsets
                 every score (BF16 subtract), the offsets are exponentiated,
                 and an N-way balanced tree sums them at FP32 into the
                 denominator accumulator.  When a group raises the maximum,
                 the partial denominator is first rescaled by
                 expp(old_max - new_max); the tag mechanism in the hardware
                 exists to make that rescale atomic, so the model applies it
                 between groups and logs the event.
  inversion:     Newton-Raphson reciprocal of the FP32 denominator; the seed
                 exponent is exact (2B - 1 - E) and the seed significand is
                 the parabola 1 + (1-M)^2 / 2.  Two iterations at FP32.
  normalization: expp(x - max) times the reciprocal (cast to BF16), output
                 in input order, multiply in BF16.

The row-batched variant runs the same group recurrence across many rows at
once; it is bit-identical to the scalar path and exists because accuracy
sweeps over thousands of rows would otherwise crawl.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .expu import ExppParams, DEFAULT_PARAMS, expp_bits
from .numerics import (
    bf16_from_wide,
    bf16_is_nan,
    bf16_mul,
    bf16_sub,
    bf16_to_f32,
    bf16_to_f64,
    bf16_total_order_key,
)


@dataclass
class SoftmaxState:
    """Running accumulation state for one vector."""

    lanes: int
    params: ExppParams = DEFAULT_PARAMS
    running_max: int | None = None          # BF16 pattern of the max so far
    denom: np.float32 = np.float32(0.0)
    rescale_log: list = field(default_factory=list)  # (old_max, new_max) values
    elements_seen: int = 0

    @property
    def running_max_value(self) -> float:
        if self.running_max is None:
            raise ValueError("no elements accumulated")
        return float(bf16_to_f64(np.uint16(self.running_max)))


def tree_sum_f32(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Balanced pairwise FP32 sum in a fixed order (models the adder tree)."""
    v = np.asarray(values, dtype=np.float32)
    v = np.moveaxis(v, axis, -1)
    while v.shape[-1] > 1:
        n = v.shape[-1]
        even = v[..., 0:n - 1:2]
        odd = v[..., 1:n:2]
        s = even + odd
        if n % 2:
            s = np.concatenate([s, v[..., n - 1:]], axis=-1)
        v = s
    return v[..., 0]


def _group_slices(n: int, lanes: int):
    for start in range(0, n, lanes):
        yield slice(start, min(start + lanes, n))


def accumulate_chunk(state: SoftmaxState, chunk, lanes: int | None = None) -> SoftmaxState:
    """Consume a chunk of BF16 patterns in groups of N lanes."""
    lanes = state.lanes if lanes is None else lanes
    if lanes < 1:
        raise ValueError("need at least one lane")
    bits = np.asarray(chunk, dtype=np.uint16)
    if bits.size == 0:
        return state
    if np.any(bf16_is_nan(bits)):
        raise ValueError("NaN score rejected at ingest")

    for sl in _group_slices(bits.size, lanes):
        group = bits[sl]
        keys = bf16_total_order_key(group)
        gmax = group[int(np.argmax(keys))]
        if state.running_max is None:
            state.running_max = int(gmax)
        elif int(bf16_total_order_key(gmax)) > int(bf16_total_order_key(np.uint16(state.running_max))):
            old = np.uint16(state.running_max)
            delta = bf16_sub(old, gmax)  # <= -0, BF16 subtract in the MAU
            factor = bf16_to_f32(expp_bits(delta, state.params))
            state.rescale_log.append((float(bf16_to_f64(old)), float(bf16_to_f64(gmax))))
            state.denom = np.float32(state.denom * factor)
            state.running_max = int(gmax)
        diffs = bf16_sub(group, np.uint16(state.running_max))
        exps = bf16_to_f32(expp_bits(diffs, state.params))
        state.denom = np.float32(state.denom + tree_sum_f32(exps))
        state.elements_seen += group.size
    return state


def invert_denominator(d, params: ExppParams = DEFAULT_PARAMS) -> np.ndarray:
    """Newton-Raphson reciprocal of a positive normal FP32 value.

    Seed: biased exponent 2B - 1 - E (exact), significand 1 + (1-M)^2 / 2.
    Two iterations y <- y * (2 - d*y); the 2 - d*y step is fused (the
    product and subtraction are exact in float64, then rounded once).
    """
    df = np.asarray(d, dtype=np.float32)
    bits = df.view(np.uint32)
    e = ((bits >> 23) & 0xFF).astype(np.int64)
    if np.any((df <= 0) | (e == 0) | (e == 0xFF)):
        raise ValueError("reciprocal needs a positive normal input")
    m_int = (bits & 0x7FFFFF).astype(np.int64)
    one_minus_m = (0x800000 - m_int).astype(np.float64) / 0x800000
    sig = 1.0 + 0.5 * one_minus_m * one_minus_m  # exact in float64
    y = np.ldexp(sig, (126 - e).astype(np.int32)).astype(np.float32)
    for _ in range(2):
        r = (2.0 - df.astype(np.float64) * y.astype(np.float64)).astype(np.float32)
        y = (y.astype(np.float64) * r.astype(np.float64)).astype(np.float32)
    return y if y.shape else np.float32(y)


def normalize_chunk(state: SoftmaxState, chunk, inv_den: int) -> np.ndarray:
    """Multiply expp(x - max) by the BF16 reciprocal, preserving order."""
    bits = np.asarray(chunk, dtype=np.uint16)
    if state.running_max is None:
        raise ValueError("state has no accumulated maximum")
    diffs = bf16_sub(bits, np.uint16(state.running_max))
    e = expp_bits(diffs, state.params)
    return bf16_mul(e, np.uint16(inv_den))


def softmax_bits(x, lanes: int = 16, params: ExppParams = DEFAULT_PARAMS,
                 state_out: SoftmaxState | None = None) -> np.ndarray:
    """Full three-phase softmax over one BF16 vector (patterns in/out)."""
    bits = np.asarray(x, dtype=np.uint16)
    if bits.size == 0:
        raise ValueError("softmax of an empty vector")
    state = SoftmaxState(lanes=lanes, params=params) if state_out is None else state_out
    accumulate_chunk(state, bits)
    inv = invert_denominator(state.denom, params)
    inv_bits = bf16_from_wide(inv)
    out = np.empty_like(bits)
    for sl in _group_slices(bits.size, lanes):
        out[sl] = normalize_chunk(state, bits[sl], int(inv_bits))
    return out


def softmax(x, lanes: int = 16, params: ExppParams = DEFAULT_PARAMS) -> np.ndarray:
    """Float convenience wrapper: rounds inputs to BF16, returns float64."""
    bits = bf16_from_wide(np.asarray(x, dtype=np.float64))
    return bf16_to_f64(softmax_bits(bits, lanes, params))


def reference_softmax(x, exp_fn=np.exp) -> np.ndarray:
    """Two-pass softmax at float64 with a pluggable exponential.

    `exp_fn` maps float64 arrays to float64 (use `np.exp` for the oracle, or
    wrap expp/exps to study the approximation inside the exact dataflow).
    """
    xs = np.asarray(x, dtype=np.float64)
    if xs.size == 0:
        raise ValueError("softmax of an empty vector")
    e = exp_fn(xs - xs.max())
    return e / e.sum()


def expp_as_f64(params: ExppParams = DEFAULT_PARAMS):
    """expp lifted to a float64->float64 function (through the BF16 grid)."""
    def fn(x):
        return bf16_to_f64(expp_bits(bf16_from_wide(x), params))
    return fn


def exps_as_f64():
    from .expu import exps_bits

    def fn(x):
        return bf16_to_f64(exps_bits(bf16_from_wide(x)))
    return fn


# ----------------------------------------------------------------------
# Row-batched engine (bit-identical to the scalar path)
# ----------------------------------------------------------------------

def softmax_rows_bits(matrix, lanes: int = 16,
                      params: ExppParams = DEFAULT_PARAMS
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Softmax of every row of a (rows, cols) BF16 pattern matrix.

    Returns (outputs, rescale_counts, running_max_bits).  The group
    recurrence is vectorised across rows; each row sees exactly the same
    arithmetic as softmax_bits.
    """
    m = np.asarray(matrix, dtype=np.uint16)
    if m.ndim != 2 or m.shape[1] == 0:
        raise ValueError("need a (rows, cols) matrix with cols >= 1")
    if np.any(bf16_is_nan(m)):
        raise ValueError("NaN score rejected at ingest")
    rows, cols = m.shape

    run_max = np.full(rows, 0xFF80, dtype=np.uint16)  # -inf: below every score
    denom = np.zeros(rows, dtype=np.float32)
    rescales = np.zeros(rows, dtype=np.int64)
    started = np.zeros(rows, dtype=bool)

    for sl in _group_slices(cols, lanes):
        group = m[:, sl]
        keys = bf16_total_order_key(group)
        gmax = np.take_along_axis(group, np.argmax(keys, axis=1)[:, None], axis=1)[:, 0]
        newer = bf16_total_order_key(gmax) > bf16_total_order_key(run_max)
        delta = bf16_sub(run_max, gmax)
        factor = bf16_to_f32(expp_bits(delta, params))
        denom = np.where(newer, denom * factor, denom).astype(np.float32)
        rescales += (newer & started).astype(np.int64)
        run_max = np.where(newer, gmax, run_max)
        started |= True
        diffs = bf16_sub(group, run_max[:, None])
        denom = (denom + tree_sum_f32(bf16_to_f32(expp_bits(diffs, params)), axis=1)).astype(np.float32)

    inv_bits = bf16_from_wide(invert_denominator(denom, params))
    out = np.empty_like(m)
    for sl in _group_slices(cols, lanes):
        diffs = bf16_sub(m[:, sl], run_max[:, None])
        out[:, sl] = bf16_mul(expp_bits(diffs, params), inv_bits[:, None])
    return out, rescales, run_max


def softmax_accuracy_report(matrix_bits, lanes: int = 16,
                            params: ExppParams = DEFAULT_PARAMS) -> list[dict]:
    """Per-row accuracy of the engine against the float64 reference."""
    m = np.asarray(matrix_bits, dtype=np.uint16)
    out, _, _ = softmax_rows_bits(m, lanes, params)
    x = bf16_to_f64(m)
    got = bf16_to_f64(out)
    rows = []
    for i in range(m.shape[0]):
        ref = reference_softmax(x[i])
        rel = np.abs(got[i] - ref) / ref
        rows.append({
            "row": i,
            "mre": float(rel.mean()),
            "max_re": float(rel.max()),
            "sum_dev": float(got[i].sum() - 1.0),
        })
    return rows


# ----------------------------------------------------------------------
# Batch input file format: 8-byte header (rows, cols as <u4) then
# rows*cols little-endian BF16 patterns, row-major.
# ----------------------------------------------------------------------

def write_matrix(path, matrix_bits) -> None:
    m = np.asarray(matrix_bits, dtype=np.uint16)
    if m.ndim != 2:
        raise ValueError("need a (rows, cols) matrix")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", m.shape[0], m.shape[1]))
        f.write(m.astype("<u2").tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(8)
        if len(header) != 8:
            raise ValueError(f"{path}: truncated header")
        rows, cols = struct.unpack("<II", header)
        data = np.frombuffer(f.read(), dtype="<u2")
    if data.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} elements, found {data.size}")
    return data.reshape(rows, cols).astype(np.uint16)


# ----------------------------------------------------------------------
# Exact online/two-pass equivalence oracle
# ----------------------------------------------------------------------

def online_twopass_exact_equal(values, lanes: int) -> bool:
    """Run the online denominator recurrence in exact rational arithmetic.

    Works on dyadic inputs: with the common denominator 2^m, the exponential
    is replaced by the exact homomorphism E(d) = 2^(d * 2^m), which obeys
    E(a + b) = E(a) * E(b) just like the real one.  The online recurrence
    (rescale by E(old - new) on each new maximum) must then reproduce the
    two-pass denominator exactly, independent of grouping.
    """
    from fractions import Fraction

    vals = [Fraction(v) for v in values]
    if not vals:
        raise ValueError("empty vector")
    mbits = max((v.denominator - 1).bit_length() for v in vals)
    scale = 1 << mbits

    def exp_exact(d: Fraction) -> Fraction:
        q = d * scale
        assert q.denominator == 1
        k = int(q)
        return Fraction(2) ** k

    den = Fraction(0)
    cur = None
    for start in range(0, len(vals), lanes):
        group = vals[start:start + lanes]
        gmax = max(group)
        if cur is None:
            cur = gmax
        elif gmax > cur:
            den *= exp_exact(cur - gmax)
            cur = gmax
        den += sum(exp_exact(v - cur) for v in group)

    true_max = max(vals)
    twopass = sum(exp_exact(v - true_max) for v in vals)
    # Undo the final scaling difference if the online max never reached the
    # true max (cannot happen; kept as a consistency guard).
    assert cur == true_max
    return den == twopass

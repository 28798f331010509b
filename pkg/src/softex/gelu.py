"""GELU via a weighted sum of Gaussians, at the lane datapath's precision.

Per element: square the input (BF16), multiply by each -b_i weight (BF16),
exponentiate with the corrected approximate exponential, weight by a_i at
the exact product precision, truncate into the fixed-point lane accumulator,
and finally select  x*(1-s)  for x >= 0 or  x*s  for x < 0 (multiplies and
the complement in BF16).  The weights live in the datapath as BF16 values.

The a_i/b_i pairs come from the Gaussian-tail minimax fit; Sum(a_i) <= 1/2
bounds the accumulated value, which is what licenses the unsigned
fixed-point accumulator in the first place.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .expu import ExppParams, DEFAULT_PARAMS, expp_bits
from .numerics import (
    BF16_ONE,
    FixedFormat,
    bf16_from_wide,
    bf16_mul,
    bf16_sub,
    bf16_to_f64,
)


@dataclass(frozen=True)
class SumExpParams:
    """(a_i, b_i) weight pairs for the sum of exponentials.

    Terms are stored widest-first (largest b first), matching the weight
    buffer; the hardware replays the buffer in reverse on alternate passes,
    which is harmless because the fixed-point accumulation is
    order-independent short of saturation (asserted in the tests).
    """

    terms: tuple
    r_max: float | None = None
    fit_meta: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.terms:
            raise ValueError("need at least one term")
        a = np.array([t[0] for t in self.terms], dtype=np.float64)
        b = np.array([t[1] for t in self.terms], dtype=np.float64)
        if np.any(a <= 0) or np.any(b <= 0):
            raise ValueError("weights must be positive")
        if a.sum() > 0.5 + 1e-12:
            raise ValueError(f"sum(a) = {a.sum()} exceeds 1/2")

    @property
    def n_w(self) -> int:
        return len(self.terms)

    @property
    def a(self) -> np.ndarray:
        return np.array([t[0] for t in self.terms], dtype=np.float64)

    @property
    def b(self) -> np.ndarray:
        return np.array([t[1] for t in self.terms], dtype=np.float64)

    def to_json(self) -> dict:
        doc = {"terms": [{"a": float(a), "b": float(b)} for a, b in self.terms]}
        if self.r_max is not None:
            doc["r_max"] = float(self.r_max)
        if self.fit_meta:
            doc["fit_meta"] = self.fit_meta
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "SumExpParams":
        return cls(terms=tuple((t["a"], t["b"]) for t in doc["terms"]),
                   r_max=doc.get("r_max"), fit_meta=doc.get("fit_meta"))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "SumExpParams":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def sum_exp_bits(x_bits, p: SumExpParams, acc_bits: int = 14,
                 exp_params: ExppParams = DEFAULT_PARAMS,
                 reverse_weights: bool = False) -> np.ndarray:
    """Fixed-point lane accumulation of sum_i a_i * expp(-b_i * x^2).

    Every multiply ahead of the exponential runs in BF16; the a_i weighting
    uses the exact product of two BF16 operands (a 16-bit significand, what
    the lane's floating multiplier emits) and is then truncated onto the
    accumulator grid.  Returns BF16 patterns of the accumulated value.
    """
    fmt = FixedFormat(acc_bits)
    xb = np.asarray(x_bits, dtype=np.uint16)
    xsq = bf16_mul(xb, xb)
    neg_b = bf16_from_wide(-p.b)
    a_val = bf16_to_f64(bf16_from_wide(p.a))
    order = range(p.n_w - 1, -1, -1) if reverse_weights else range(p.n_w)
    acc = np.zeros(xb.shape, dtype=np.int64)
    for i in order:
        arg = bf16_mul(np.uint16(neg_b[i]), xsq)
        e = bf16_to_f64(expp_bits(arg, exp_params))
        q = np.floor(a_val[i] * e * fmt.scale).astype(np.int64)  # exact product, truncated
        acc = fmt.sat_add(acc, q)
    return fmt.to_bf16(acc)


def gelu_bits(x_bits, p: SumExpParams, acc_bits: int = 14,
              exp_params: ExppParams = DEFAULT_PARAMS) -> np.ndarray:
    """BF16 GELU: x*(1-s) for non-negative x, x*s otherwise (-0 included)."""
    xb = np.asarray(x_bits, dtype=np.uint16)
    s = sum_exp_bits(xb, p, acc_bits, exp_params)
    comp = bf16_sub(np.uint16(BF16_ONE), s)
    negative = (xb & 0x8000) != 0
    sel = np.where(negative, s, comp)
    return bf16_mul(xb, sel.astype(np.uint16))


def gelu(x, p: SumExpParams, acc_bits: int = 14,
         exp_params: ExppParams = DEFAULT_PARAMS) -> np.ndarray:
    """Float convenience wrapper (rounds inputs to BF16, returns float64)."""
    bits = bf16_from_wide(np.asarray(x, dtype=np.float64))
    return bf16_to_f64(gelu_bits(bits, p, acc_bits, exp_params))


# ----------------------------------------------------------------------
# Reference evaluations
# ----------------------------------------------------------------------

def gelu_reference(x) -> np.ndarray:
    """x * Phi(x) with the Gaussian CDF at double precision."""
    from scipy.special import erfc

    xs = np.asarray(x, dtype=np.float64)
    return xs * 0.5 * erfc(-xs / math.sqrt(2.0))


def gelu_tanh_baseline(x) -> np.ndarray:
    """Hyperbolic-tangent approximation (cubic argument), wide precision."""
    xs = np.asarray(x, dtype=np.float64)
    return 0.5 * xs * (1.0 + np.tanh(math.sqrt(2.0 / math.pi)
                                     * (xs + 0.044715 * xs ** 3)))


def gelu_sigmoid_baseline(x) -> np.ndarray:
    """x * sigmoid(1.702 x), wide precision."""
    xs = np.asarray(x, dtype=np.float64)
    return xs / (1.0 + np.exp(-1.702 * xs))


# ----------------------------------------------------------------------
# Accumulator-width / term-count sweep
# ----------------------------------------------------------------------

def bits_terms_sweep(param_sets: dict, acc_bits_range=range(8, 15),
                     grid_points: int = 20001, x_lo: float = -6.0,
                     x_hi: float = 6.0, terms=None,
                     exp_params: ExppParams = DEFAULT_PARAMS) -> list[dict]:
    """Error of the quantized GELU against the CDF oracle.

    `param_sets` maps term count -> SumExpParams (fitted upstream); `terms`
    selects which counts to sweep (default: everything provided) and a
    selected count without a fitted set is a configuration error.  One row
    per (acc_bits, terms) pair.  Relative error is measured where the
    reference magnitude clears one minimum subnormal step, which excludes
    only the immediate neighbourhood of zero.
    """
    wanted = sorted(param_sets) if terms is None else sorted(terms)
    missing = [t for t in wanted if t not in param_sets]
    if missing:
        raise KeyError(f"no fitted parameter set for term count(s) {missing}")
    xs = np.linspace(x_lo, x_hi, grid_points)
    bits = bf16_from_wide(xs)
    x_exact = bf16_to_f64(bits)
    ref = gelu_reference(x_exact)
    rel_mask = np.abs(ref) > 2.0 ** -30
    rows = []
    for n_terms in wanted:
        p = param_sets[n_terms]
        for acc_bits in acc_bits_range:
            got = bf16_to_f64(gelu_bits(bits, p, acc_bits, exp_params))
            err = np.abs(got - ref)
            rows.append({
                "bits": int(acc_bits),
                "terms": int(n_terms),
                "max_abs_err": float(err.max()),
                "mean_abs_err": float(err.mean()),
                "max_rel_err": float((err[rel_mask] / np.abs(ref[rel_mask])).max()),
            })
    return rows

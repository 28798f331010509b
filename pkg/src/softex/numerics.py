"""Bit-exact BF16 and fixed-point primitives shared by the datapath models.

BF16 layout: 1 sign bit, 8 exponent bits (bias 127), 7 mantissa bits.
Values are carried around as uint16 bit patterns; decoding to float is exact
because every finite BF16 is representable in float32 (and float64).

The wide accumulator format of the datapath is IEEE single precision (FP32).
Conversions from Python floats therefore round float64 -> float32 -> BF16;
the float32 step is the wide format's own rounding, and the final BF16
rounding is round-to-nearest-even via the usual add-half-ulp bit trick.

The fixed-point format used by the GELU lane accumulators is unsigned with
`bits` fractional bits (scale 2**-bits, range [0, 1 - 2**-bits]).  Addition
saturates, conversion from float truncates toward zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BF16_SIGN_MASK = 0x8000
BF16_EXP_MASK = 0x7F80
BF16_MANT_MASK = 0x007F
BF16_EXP_BIAS = 127
BF16_MANT_BITS = 7

BF16_ONE = 0x3F80
BF16_POS_INF = 0x7F80
BF16_NEG_INF = 0xFF80
BF16_NAN = 0x7FC0
BF16_MAX_FINITE = 0x7F7F


def _as_u16(bits) -> np.ndarray:
    return np.asarray(bits, dtype=np.uint16)


def bf16_to_f32(bits) -> np.ndarray:
    """Exact decode: widen the 16-bit pattern into the top half of a float32."""
    b = _as_u16(bits)
    return (b.astype(np.uint32) << 16).view(np.float32)


def bf16_to_f64(bits) -> np.ndarray:
    # signaling-NaN patterns raise the IEEE invalid flag when widened; the
    # quieted NaN is exactly what we want
    with np.errstate(invalid="ignore"):
        return bf16_to_f32(bits).astype(np.float64)


def f32_to_bf16(x) -> np.ndarray:
    """Round float32 to the nearest BF16 pattern (ties to even).

    The classic trick: add 0x7FFF plus the LSB of the would-be result and
    drop the low 16 bits.  Works across normals, subnormals and infinities;
    NaN needs a guard because the carry can overflow its payload into the
    exponent.
    """
    xf = np.asarray(x, dtype=np.float32)
    u = xf.view(np.uint32)
    rounded = ((u + 0x7FFF + ((u >> 16) & 1)) >> 16).astype(np.uint16)
    return np.where(np.isnan(xf), np.uint16(BF16_NAN), rounded)


def bf16_from_wide(x) -> np.ndarray:
    """Convert a wide float (array) to BF16, round-to-nearest-even.

    Inputs wider than FP32 are first rounded to FP32 (the datapath's wide
    format); overflow saturates to +/-inf, NaN stays NaN.
    """
    with np.errstate(over="ignore"):
        return f32_to_bf16(np.asarray(x, dtype=np.float64).astype(np.float32))


def bf16_fields(bits):
    """Split patterns into (sign, exponent_field, mantissa_field)."""
    b = _as_u16(bits)
    return (b >> 15) & 0x1, (b >> 7) & 0xFF, b & 0x7F


def bf16_is_nan(bits) -> np.ndarray:
    _, e, m = bf16_fields(bits)
    return (e == 0xFF) & (m != 0)


def bf16_is_finite(bits) -> np.ndarray:
    _, e, _ = bf16_fields(bits)
    return e != 0xFF


def bf16_total_order_key(bits) -> np.ndarray:
    """Monotone uint16 key: -inf < ... < -0 < +0 < ... < +inf.

    NaN patterns map above +inf on the positive side; callers reject NaN
    before comparisons.
    """
    b = _as_u16(bits).astype(np.int32)
    neg = (b & BF16_SIGN_MASK) != 0
    return np.where(neg, 0x7FFF - (b & 0x7FFF), 0x8000 + (b & 0x7FFF)).astype(np.uint16)


def _binop(a_bits, b_bits, op):
    # Exact in float64 for any BF16 pair (or within a half-ulp guard band of
    # the result), so f64 -> f32 -> BF16 reproduces a correctly rounded
    # single BF16 FPU operation.
    a = bf16_to_f64(a_bits)
    b = bf16_to_f64(b_bits)
    return bf16_from_wide(op(a, b))


def bf16_add(a_bits, b_bits) -> np.ndarray:
    return _binop(a_bits, b_bits, np.add)


def bf16_sub(a_bits, b_bits) -> np.ndarray:
    return _binop(a_bits, b_bits, np.subtract)


def bf16_mul(a_bits, b_bits) -> np.ndarray:
    return _binop(a_bits, b_bits, np.multiply)


def bf16_neg(bits) -> np.ndarray:
    return _as_u16(bits) ^ np.uint16(BF16_SIGN_MASK)


# ----------------------------------------------------------------------
# Unsigned fixed-point lane-accumulator format
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class FixedFormat:
    """Unsigned fixed-point format with `bits` fractional bits.

    The accumulated sum-of-exponentials is bounded by 0.5, so a full-unit
    unsigned format leaves one guard bit of headroom; `bits` is a parameter
    so accumulator-width sweeps are a single knob.
    """

    bits: int = 14

    def __post_init__(self):
        if not 8 <= self.bits <= 16:
            raise ValueError(f"accumulator width {self.bits} outside 8..16")

    @property
    def scale(self) -> int:
        return 1 << self.bits

    @property
    def max_value(self) -> int:
        return self.scale - 1

    def from_wide(self, x) -> np.ndarray:
        """Truncate a float in [0, 1) onto the fixed-point grid."""
        xf = np.asarray(x, dtype=np.float64)
        if np.any((xf < 0.0) | (xf >= 1.0) | ~np.isfinite(xf)):
            raise ValueError("fixed-point input outside [0, 1)")
        return np.minimum(np.floor(xf * self.scale).astype(np.int64), self.max_value)

    def sat_add(self, a, b) -> np.ndarray:
        s = np.asarray(a, dtype=np.int64) + np.asarray(b, dtype=np.int64)
        return np.minimum(s, self.max_value)

    def to_f64(self, v) -> np.ndarray:
        return np.asarray(v, dtype=np.float64) / self.scale

    def to_bf16(self, v) -> np.ndarray:
        # v * 2**-bits is exact in float64 (and float32 for bits <= 16),
        # so the only rounding is the final BF16 one.
        return bf16_from_wide(self.to_f64(v))


FIXED14 = FixedFormat(14)


def fixed14_from_wide(x):
    return FIXED14.from_wide(x)


def fixed14_to_bf16(v):
    return FIXED14.to_bf16(v)


def fixed14_sat_add(a, b):
    return FIXED14.sat_add(a, b)


# ----------------------------------------------------------------------
# Wide (FP32) helpers
# ----------------------------------------------------------------------

def f32(x) -> np.ndarray:
    """Round to the wide accumulator format."""
    return np.asarray(x, dtype=np.float32)


def all_bf16_patterns() -> np.ndarray:
    return np.arange(1 << 16, dtype=np.uint16)

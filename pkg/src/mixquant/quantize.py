"""Uniform fake quantization with separate pre- and post-scales.

A tensor is quantized by mapping it through a pre-scale into the unit
interval, clipping, rounding onto a signed integer lattice, and mapping
back through a post-scale:

    q(x) = round(clip(alpha * x, -1, 1) * 2**(bits-1)) / 2**(bits-1) * gamma

Keeping the two scales separate lets the input normalization and the
output magnitude be trained independently after the initial max-value
calibration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

MIN_BITS = 2
MAX_BITS = 16


@dataclass(frozen=True)
class QuantSpec:
    """Quantizer state for one tensor.

    alpha is the pre-scale applied before clipping, gamma the post-scale
    applied after rounding, bits the signed lattice resolution. Both
    scales must be finite and strictly positive.
    """

    alpha: float
    gamma: float
    bits: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.alpha) and self.alpha > 0.0):
            raise ValueError(f"alpha must be finite and > 0, got {self.alpha!r}")
        if not (math.isfinite(self.gamma) and self.gamma > 0.0):
            raise ValueError(f"gamma must be finite and > 0, got {self.gamma!r}")
        if not isinstance(self.bits, int) or not MIN_BITS <= self.bits <= MAX_BITS:
            raise ValueError(
                f"bits must be an integer in [{MIN_BITS}, {MAX_BITS}], got {self.bits!r}"
            )

    def with_bits(self, bits: int) -> "QuantSpec":
        """Same scales at a different bit width."""
        return replace(self, bits=bits)


def _round_half_away(y: np.ndarray) -> np.ndarray:
    # Ties round away from zero; np.round would round them to even.
    return np.copysign(np.floor(np.abs(y) + 0.5), y)


def _apply(x: np.ndarray, alpha: float, gamma: float, bits: int) -> np.ndarray:
    half = float(2 ** (bits - 1))
    clipped = np.clip(alpha * x, -1.0, 1.0)
    levels = _round_half_away(clipped * half)
    # levels / half is exact: integer-valued numerator, power-of-two denominator.
    return levels / half * gamma


def quantize(x: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """Fake-quantize ``x`` onto the ``spec.bits``-bit grid.

    Returns a new float array whose every element lies on the grid
    ``{k / 2**(bits-1) * gamma : k integer, |k| <= 2**(bits-1)}``. The
    input is never modified.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("quantize requires a finite tensor")
    return _apply(x, spec.alpha, spec.gamma, spec.bits)


def quantization_grid(spec: QuantSpec) -> np.ndarray:
    """All representable values of ``spec``, ascending.

    Computed with the same operation order as :func:`quantize`, so grid
    membership of quantized output is exact, not approximate.
    """
    half = float(2 ** (spec.bits - 1))
    levels = np.arange(-half, half + 1.0)
    return levels / half * spec.gamma


@dataclass(frozen=True)
class QuantTape:
    """Forward-pass record needed to backpropagate through a quantizer."""

    x: np.ndarray
    scaled: np.ndarray  # round(clip(alpha*x)*half)/half, i.e. output before gamma
    in_range: np.ndarray  # where |alpha*x| <= 1, the pass-through region of clip


def quantize_with_tape(x: np.ndarray, spec: QuantSpec) -> tuple[np.ndarray, QuantTape]:
    """Quantize and keep what the straight-through backward pass needs."""
    x = np.asarray(x, dtype=np.float64)
    half = float(2 ** (spec.bits - 1))
    pre = spec.alpha * x
    in_range = np.abs(pre) <= 1.0
    scaled = _round_half_away(np.clip(pre, -1.0, 1.0) * half) / half
    return scaled * spec.gamma, QuantTape(x=x, scaled=scaled, in_range=in_range)


def quantize_backward(
    tape: QuantTape, spec: QuantSpec, grad_out: np.ndarray
) -> tuple[np.ndarray, float, float]:
    """Gradients of a quantizer output under the straight-through estimator.

    Rounding is treated as identity; clipping passes gradient where
    ``|alpha*x| <= 1`` and blocks it outside. Returns ``(grad_x,
    grad_alpha, grad_gamma)`` with the scale gradients summed over all
    elements.
    """
    gated = grad_out * tape.in_range
    grad_x = gated * (spec.gamma * spec.alpha)
    grad_alpha = float(np.sum(gated * tape.x) * spec.gamma)
    grad_gamma = float(np.sum(grad_out * tape.scaled))
    return grad_x, grad_alpha, grad_gamma


def quantization_error(x: np.ndarray, spec: QuantSpec) -> float:
    """Root-mean-square quantization error, normalized by max magnitude.

    Raises ValueError on an all-zero tensor, where the normalization is
    undefined.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("quantization_error requires a finite tensor")
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if peak == 0.0:
        raise ValueError("quantization_error is undefined for an all-zero tensor")
    err = quantize(x, spec) - x
    return float(np.sqrt(np.mean(np.square(err))) / peak)

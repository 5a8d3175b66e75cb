"""Filter binarization: zero-inclusive signs plus one real scale per filter.

A real-valued filter ``w`` of length n is approximated by ``scale * signs``
with ``signs`` in {-1, +1}^n.  Taking ``signs = sign(w)`` (with sign(0) = +1)
and ``scale = mean(|w|)`` minimizes the L2 reconstruction error over every
sign pattern with its own best scale; :func:`brute_force_optimum` verifies
that closed form by exhaustive enumeration and serves as its oracle.

The reconstruction objective is reported as the L2 norm itself, not its
square.  The minimizing sign pattern and scale are identical either way, so
nothing downstream depends on the choice; it is fixed here for clarity.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericsError, ShapeError

MAX_ENUMERATION_BITS = 16
WORD_BITS = 64


def _require_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericsError(f"{what} contains NaN or Inf")


def _float_dtype(x: np.ndarray) -> np.dtype:
    return x.dtype if np.issubdtype(x.dtype, np.floating) else np.dtype(np.float32)


def sign_binarize(w: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) = +1, in the input's float dtype."""
    w = np.asarray(w)
    _require_finite(w, "sign_binarize input")
    return np.where(w >= 0, 1.0, -1.0).astype(_float_dtype(w))


def hard_sigmoid(x: np.ndarray) -> np.ndarray:
    """clip((x + 1) / 2, 0, 1): the probability of drawing +1."""
    return np.clip((np.asarray(x, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


def stochastic_binarize(w: np.ndarray, rng_seed: int) -> np.ndarray:
    """Draw each sign as +1 with probability hard_sigmoid(w_i), else -1.

    Bit-reproducible for a fixed seed.  Provided for completeness; the
    training path always uses the deterministic :func:`sign_binarize`.
    """
    w = np.asarray(w)
    _require_finite(w, "stochastic_binarize input")
    rng = np.random.default_rng(int(rng_seed))
    u = rng.random(size=w.shape)
    return np.where(u < hard_sigmoid(w), 1.0, -1.0).astype(_float_dtype(w))


def optimal_scale(w_filter: np.ndarray) -> float:
    """Best per-filter scale for a sign approximation: mean absolute weight."""
    w = np.asarray(w_filter)
    if w.size == 0:
        raise ShapeError("cannot compute a scale for an empty filter")
    _require_finite(w, "optimal_scale input")
    return float(np.mean(np.abs(w.astype(np.float64, copy=False))))


def binarize_filter(w_filter: np.ndarray) -> tuple[np.ndarray, float]:
    """Binarize one filter: (sign pattern, mean-absolute-value scale).

    An all-zero filter binarizes to scale 0 (all +1 signs); this is flagged
    with a warning since such a layer contributes nothing.
    """
    w = np.asarray(w_filter)
    signs = sign_binarize(w)
    a = optimal_scale(w)
    if a == 0.0:
        warnings.warn(
            "all-zero filter: binarized output is identically zero",
            RuntimeWarning,
            stacklevel=2,
        )
    return signs, a


def reconstruction_error(w_filter: np.ndarray, signs: np.ndarray, scale: float) -> float:
    """L2 norm of (w - scale * signs)."""
    w = np.asarray(w_filter, dtype=np.float64).ravel()
    b = np.asarray(signs, dtype=np.float64).ravel()
    if w.shape != b.shape:
        raise ShapeError(
            f"filter has {w.size} entries but sign pattern has {b.size}"
        )
    if not np.all(np.abs(b) == 1.0):
        raise DomainError("sign pattern entries must be exactly -1 or +1")
    return float(np.linalg.norm(w - float(scale) * b))


@functools.lru_cache(maxsize=24)
def _all_sign_patterns(n: int) -> np.ndarray:
    """Every pattern in {-1,+1}^n as a read-only [2^n, n] float64 array."""
    codes = np.arange(2 ** n, dtype=np.uint32)[:, None]
    bits = (codes >> np.arange(n, dtype=np.uint32)[None, :]) & 1
    patterns = np.where(bits == 1, 1.0, -1.0)
    patterns.setflags(write=False)
    return patterns


def brute_force_optimum(w_filter: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Exhaustive minimizer of the reconstruction error for one filter.

    Enumerates all 2^n sign patterns, pairs each with its own best scale
    (w . signs)/n, and returns (signs, scale, error) for the minimizer.
    Ties (a pattern and its negation always tie) are broken toward the
    nonnegative scale.  Ground-truth oracle for :func:`binarize_filter`;
    guarded to n <= 16.
    """
    w = np.asarray(w_filter, dtype=np.float64).ravel()
    n = w.size
    if n == 0:
        raise ShapeError("cannot binarize an empty filter")
    if n > MAX_ENUMERATION_BITS:
        raise ShapeError(
            f"brute-force enumeration is limited to {MAX_ENUMERATION_BITS} weights, got {n}"
        )
    _require_finite(w, "brute_force_optimum input")
    patterns = _all_sign_patterns(n)
    scales = (patterns @ w) / n
    errors = np.linalg.norm(w[None, :] - scales[:, None] * patterns, axis=1)
    best = np.lexsort((-scales, errors))[0]
    return patterns[best].copy(), float(scales[best]), float(errors[best])


def pack_signs(signs: np.ndarray) -> np.ndarray:
    """Pack rows of {-1,+1} signs into little-endian 64-bit words.

    Bit i of row f (LSB-first) is 1 for +1 and 0 for -1; each row is padded
    with zero bits to a word boundary.  Returns a [F, ceil(n/64)] array of
    dtype '<u8'.
    """
    s = np.asarray(signs)
    if s.ndim != 2:
        raise ShapeError(f"expected [filters, weights] signs, got shape {tuple(s.shape)}")
    if not np.all(np.abs(s) == 1):
        raise DomainError("sign entries must be exactly -1 or +1")
    f, n = s.shape
    words = (n + WORD_BITS - 1) // WORD_BITS
    bits = np.zeros((f, words * WORD_BITS), dtype=np.uint8)
    bits[:, :n] = s > 0
    packed_bytes = np.packbits(bits, axis=1, bitorder="little")
    return np.ascontiguousarray(packed_bytes).view("<u8")


def unpack_signs(packed: np.ndarray, bits_per_filter: int) -> np.ndarray:
    """Inverse of :func:`pack_signs`: [F, words] '<u8' -> float32 signs [F, n]."""
    mask = unpack_bitmask(packed, bits_per_filter)
    return np.where(mask, 1.0, -1.0).astype(np.float32)


def unpack_bitmask(packed: np.ndarray, bits_per_filter: int) -> np.ndarray:
    """Unpack words to a boolean [F, n] mask (True where the sign is +1)."""
    p = np.asarray(packed)
    if p.ndim != 2 or p.dtype != np.dtype("<u8"):
        raise ShapeError("packed signs must be a 2-d array of little-endian uint64 words")
    needed = (bits_per_filter + WORD_BITS - 1) // WORD_BITS
    if p.shape[1] != needed:
        raise ShapeError(
            f"{bits_per_filter} bits need {needed} words per filter, got {p.shape[1]}"
        )
    as_bytes = np.ascontiguousarray(p).view(np.uint8).reshape(p.shape[0], -1)
    bits = np.unpackbits(as_bytes, axis=1, bitorder="little")
    return bits[:, :bits_per_filter].astype(bool)


def _padding_bits_zero(packed: np.ndarray, bits_per_filter: int) -> bool:
    as_bytes = np.ascontiguousarray(packed).view(np.uint8).reshape(packed.shape[0], -1)
    bits = np.unpackbits(as_bytes, axis=1, bitorder="little")
    return not bits[:, bits_per_filter:].any()


@dataclass(frozen=True)
class BinaryFilterBank:
    """Packed sign bits plus one scale per filter for one binarized layer.

    ``packed`` holds filter-major little-endian 64-bit words, LSB-first
    within each word, padded with zero bits per filter; ``scales`` are the
    nonnegative per-filter magnitudes.  ``filter_shape`` is the dense shape
    of a single filter (e.g. (C, kh, kw)), with prod == bits_per_filter.
    """

    num_filters: int
    bits_per_filter: int
    packed: np.ndarray
    scales: np.ndarray
    filter_shape: tuple[int, ...]

    def __post_init__(self):
        if self.num_filters < 1 or self.bits_per_filter < 1:
            raise ShapeError("a filter bank needs at least one filter and one weight")
        if int(np.prod(self.filter_shape)) != self.bits_per_filter:
            raise ShapeError(
                f"filter shape {self.filter_shape} does not hold {self.bits_per_filter} weights"
            )
        words = (self.bits_per_filter + WORD_BITS - 1) // WORD_BITS
        if self.packed.shape != (self.num_filters, words):
            raise ShapeError(
                f"packed words have shape {tuple(self.packed.shape)}, "
                f"expected {(self.num_filters, words)}"
            )
        if self.packed.dtype != np.dtype("<u8"):
            raise ShapeError("packed words must have dtype '<u8'")
        if self.scales.shape != (self.num_filters,):
            raise ShapeError(
                f"expected {self.num_filters} scales, got shape {tuple(self.scales.shape)}"
            )
        _require_finite(self.scales, "filter scales")
        if np.any(self.scales < 0):
            raise DomainError("filter scales must be nonnegative")
        if not _padding_bits_zero(self.packed, self.bits_per_filter):
            raise ShapeError("padding bits beyond each filter's sign bits must be zero")
        self.packed.setflags(write=False)
        self.scales.setflags(write=False)

    @classmethod
    def from_weights(cls, weights: np.ndarray) -> "BinaryFilterBank":
        """Binarize a dense [F, ...] weight tensor, one scale per filter."""
        w = np.asarray(weights)
        if w.ndim < 2:
            raise ShapeError(
                f"expected [filters, ...] weights with ndim >= 2, got shape {tuple(w.shape)}"
            )
        f = w.shape[0]
        flat = w.reshape(f, -1)
        signs = sign_binarize(flat)
        scales = np.empty(f, dtype=np.float32)
        for i in range(f):
            _, scales[i] = binarize_filter(flat[i])
        return cls(
            num_filters=f,
            bits_per_filter=flat.shape[1],
            packed=pack_signs(signs),
            scales=scales,
            filter_shape=tuple(int(e) for e in w.shape[1:]),
        )

    def signs(self) -> np.ndarray:
        """Dense float32 {-1,+1} sign matrix [F, n]."""
        return unpack_signs(self.packed, self.bits_per_filter)

    def bitmask(self) -> np.ndarray:
        """Boolean [F, n] mask, True where the stored sign is +1."""
        return unpack_bitmask(self.packed, self.bits_per_filter)

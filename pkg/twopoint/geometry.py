"""
Finite-dimensional l^r space models, norms and duality mappings.

Primal and dual vectors are plain numpy coordinate arrays; which norm applies
is decided by the caller (``norm`` for primal, ``dual_norm`` for dual).
"""

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


class DimensionMismatchError(ValueError):
    """Raised when a vector does not live in the expected space."""


class NonFiniteError(ValueError):
    """Raised when coordinates contain NaN or Inf."""


@dataclass(frozen=True)
class SpaceModel:
    """R^dim equipped with the l^r norm, r > 1."""

    dim: int
    r: float

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"Space dimension must be a positive integer, got {self.dim}")
        if not self.r > 1:
            raise ValueError(f"Norm exponent must be > 1, got {self.r}")

    @property
    def dual_exponent(self):
        """Conjugate exponent r* = r / (r - 1)"""
        return self.r / (self.r - 1.0)

    def dual(self):
        """The dual space model (same dimension, exponent r*)"""
        return SpaceModel(self.dim, self.dual_exponent)


def coords(space, x):
    """Validate ``x`` as a finite coordinate array of ``space``"""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != space.dim:
        raise DimensionMismatchError(
            f"Expected a vector of length {space.dim}, got shape {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("Vector has non-finite coordinates")
    return x


def _lr_norm(x, r):
    return float(np.sum(np.abs(x) ** r) ** (1.0 / r))


def norm(space, x):
    """l^r norm of a primal vector"""
    return _lr_norm(coords(space, x), space.r)


def dual_norm(space, xi):
    """l^{r*} norm of a dual vector"""
    return _lr_norm(coords(space, xi), space.dual_exponent)


def duality_map(space, s, x):
    """
    Single-valued duality mapping J_s with gauge t -> t^(s-1).

    Returns y with <y, x> = |x|^s and |y|_* = |x|^(s-1); J_s(0) = 0.
    """
    if not s > 1:
        raise ValueError(f"Gauge exponent must be > 1, got {s}")
    x = coords(space, x)
    size = _lr_norm(x, space.r)
    if size == 0.0:
        return np.zeros_like(x)
    r = space.r
    return size ** (s - r) * np.sign(x) * np.abs(x) ** (r - 1.0)


def pairing(gamma, x):
    """Dual pairing <gamma, x>"""
    gamma = np.asarray(gamma, dtype=float)
    x = np.asarray(x, dtype=float)
    if gamma.shape != x.shape:
        raise DimensionMismatchError(
            f"Cannot pair vectors of shapes {gamma.shape} and {x.shape}"
        )
    return float(np.dot(gamma, x))


def sample_ball(space, center, radius, rng):
    """Random point of the closed l^r ball B(center, radius)"""
    center = coords(space, center)
    direction = rng.standard_normal(space.dim)
    length = _lr_norm(direction, space.r)
    if length == 0.0:
        return center.copy()
    scale = radius * rng.random() ** (1.0 / space.dim)
    return center + scale * direction / length

"""
p-convex penalty functionals with closed-form conjugate gradients.

Two kinds are supported:

- ``power-norm``:   phi(u) = (1/p) |u|_p^p on l^p, p >= 2
- ``quadratic-l1``: phi(u) = 1/2 |u|_2^2 + beta |u|_1 on l^2 (p = 2, c0 = 1/2)
"""

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import SpaceModel, coords, pairing

logger = logging.getLogger(__name__)

POWER_NORM = "power-norm"
QUADRATIC_L1 = "quadratic-l1"
KINDS = (POWER_NORM, QUADRATIC_L1)

# Negative Bregman values below this are reported as an invalid subgradient
BREGMAN_FLAG_TOL = 1e-12


class PenaltyError(ValueError):
    """Invalid penalty description."""


@dataclass(frozen=True)
class BregmanRecord:
    """Bregman distance D_gamma phi(utilde, u) together with its arguments"""

    value: float
    utilde: np.ndarray
    u: np.ndarray
    gamma: np.ndarray
    valid: bool = True


@dataclass(frozen=True)
class Penalty:
    """Uniformly convex penalty descriptor (immutable)."""

    kind: str
    p: float
    c0: float
    space: SpaceModel
    beta: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PenaltyError(f"Unknown penalty kind: {self.kind}")
        if not self.p >= 2:
            raise PenaltyError(f"Convexity order p must be >= 2, got {self.p}")
        if not self.c0 > 0:
            raise PenaltyError(f"Convexity constant c0 must be positive, got {self.c0}")
        if self.beta < 0:
            raise PenaltyError(f"l1 weight beta must be nonnegative, got {self.beta}")
        if self.kind == POWER_NORM and self.space.r != self.p:
            raise PenaltyError(
                f"power-norm penalty needs the l^p space (r = p = {self.p}), got r = {self.space.r}"
            )
        if self.kind == QUADRATIC_L1 and (self.p != 2 or self.space.r != 2):
            raise PenaltyError("quadratic-l1 penalty lives on l^2 with p = 2")

    @property
    def dim(self):
        return self.space.dim

    @property
    def dual_exponent(self):
        """p* = p / (p - 1)"""
        return self.p / (self.p - 1.0)

    @property
    def conjugate_bound_factor(self):
        """1 / (p* (2 c0)^(p* - 1))"""
        ps = self.dual_exponent
        return 1.0 / (ps * (2.0 * self.c0) ** (ps - 1.0))

    def phi(self, u):
        u = coords(self.space, u)
        if self.kind == POWER_NORM:
            return float(np.sum(np.abs(u) ** self.p) / self.p)
        return float(0.5 * np.dot(u, u) + self.beta * np.sum(np.abs(u)))

    def subgradient(self, u):
        """Element of the subdifferential; sign(0) = 0 at l1 kinks"""
        u = coords(self.space, u)
        if self.kind == POWER_NORM:
            return np.sign(u) * np.abs(u) ** (self.p - 1.0)
        return u + self.beta * np.sign(u)

    def conjugate_grad(self, xi):
        """argmin_w phi(w) - <xi, w>"""
        xi = coords(self.space, xi)
        if self.kind == POWER_NORM:
            return np.sign(xi) * np.abs(xi) ** (1.0 / (self.p - 1.0))
        return np.sign(xi) * np.maximum(np.abs(xi) - self.beta, 0.0)

    def conjugate(self, xi):
        """Fenchel conjugate phi*(xi), evaluated through the maximiser"""
        w = self.conjugate_grad(xi)
        return pairing(xi, w) - self.phi(w)

    def bregman(self, utilde, u, gamma):
        utilde = coords(self.space, utilde)
        u = coords(self.space, u)
        gamma = coords(self.space, gamma)
        value = self.phi(utilde) - self.phi(u) - pairing(gamma, utilde - u)
        if value < -BREGMAN_FLAG_TOL:
            logger.warning(
                f"Negative Bregman distance {value:.3e}: gamma is not a subgradient at u"
            )
            return BregmanRecord(value, utilde, u, gamma, valid=False)
        return BregmanRecord(max(value, 0.0), utilde, u, gamma)

    def distance(self, utilde, u, gamma):
        """Shorthand for ``bregman(...).value``"""
        return self.bregman(utilde, u, gamma).value


def check_three_point(pen, u, u1, u2, gamma1, gamma2):
    """
    Residual of the three point identity

        D_g2(u, u2) - D_g1(u, u1) = D_g2(u1, u2) + <g2 - g1, u1 - u>
    """
    lhs = pen.distance(u, u2, gamma2) - pen.distance(u, u1, gamma1)
    rhs = pen.distance(u1, u2, gamma2) + pairing(
        np.asarray(gamma2) - np.asarray(gamma1), np.asarray(u1) - np.asarray(u)
    )
    return abs(lhs - rhs)


def default_c0(p):
    return 2.0 ** (1.0 - p) / p


def _sampled_convexity(p, rng, dim, samples):
    """Bregman distances and p-th power gaps of random pairs, row-wise"""
    u = rng.standard_normal((samples, dim))
    ut = rng.standard_normal((samples, dim))
    grad = np.sign(u) * np.abs(u) ** (p - 1.0)
    dist = (
        np.sum(np.abs(ut) ** p, axis=1) / p
        - np.sum(np.abs(u) ** p, axis=1) / p
        - np.sum(grad * (ut - u), axis=1)
    )
    gap = np.sum(np.abs(u - ut) ** p, axis=1)
    return dist, gap


def power_norm(dim, p, c0=None, rng=None, samples=10_000):
    """
    Power-norm penalty (1/p)|.|_p^p on l^p.

    The convexity constant defaults to 2^(1-p)/p and is validated on sampled
    pairs; it is shrunk by 0.9 until the p-convexity bound holds on all of them.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    p = float(p)
    c0 = default_c0(p) if c0 is None else float(c0)
    pen = Penalty(POWER_NORM, p, c0, SpaceModel(dim, p))

    dist, gap = _sampled_convexity(p, rng, dim, samples)
    slack = 1e-12 * np.maximum(1.0, gap)
    shrinks = 0
    while np.any(dist < c0 * gap - slack):
        c0 *= 0.9
        shrinks += 1
    if shrinks:
        pen = Penalty(POWER_NORM, p, c0, pen.space)
        logger.warning(f"Convexity constant shrunk {shrinks} times to c0 = {c0:.4g}")
    logger.debug(f"power-norm penalty p={p} c0={c0:.4g} on dim {dim}")
    return pen


def quadratic_l1(dim, beta):
    """Elastic-net type penalty 1/2|.|_2^2 + beta|.|_1 (sparsity promoting)"""
    return Penalty(QUADRATIC_L1, 2.0, 0.5, SpaceModel(dim, 2.0), beta=float(beta))


def penalty_from_config(section, dim, rng=None):
    kind = section.get("kind", POWER_NORM)
    if kind == POWER_NORM:
        return power_norm(dim, section.get("p", 2.0), c0=section.get("c0"), rng=rng)
    if kind == QUADRATIC_L1:
        return quadratic_l1(dim, section.get("beta", 0.0))
    raise PenaltyError(f"Unknown penalty kind: {kind}")

"""
Forward problems F(u) = v and estimators for their structural constants.

A problem carries its operator, the derivative family L(u) (taken to be the
Frechet derivative), the adjoint action, the initial guess u0 with a
subgradient gamma0, the ball radius eps and the constants

    eta     tangential cone constant, eta < 1
    C0      bound on |L(u)| over B(u0, 3 eps)
    C_stab  Lipschitz stability constant: D phi(ut, u) <= C_stab |F(ut) - F(u)|^p

Constants are estimated by sampling with a 1.1 safety factor. Problems are
immutable; estimators return values and ``calibrate`` returns a new problem.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import svdvals, toeplitz
from scipy.optimize import brentq

from .geometry import SpaceModel, coords, norm, NonFiniteError, sample_ball
from .penalty import power_norm

logger = logging.getLogger(__name__)

SAFETY_FACTOR = 1.1
BALL_SLACK = 1e-9
# Default sigma of the diagonal exponential map; keeps |F(u_dagger)| near 2
DIAGEXP_SCALE = 30.0


class ProblemError(ValueError):
    """Invalid problem construction or degenerate estimation."""


def _frozen(x):
    if x is None:
        return None
    x = np.array(x, dtype=float)
    x.flags.writeable = False
    return x


@dataclass(frozen=True)
class ForwardProblem:
    """Operator equation F(u) = v between l^r models (abstract actions)."""

    name: str
    domain: SpaceModel
    data_space: SpaceModel
    u0: np.ndarray
    gamma0: np.ndarray
    eps: float
    eta: float = 0.0
    C0: float = 1.0
    C_stab: float = 1.0
    u_dagger: Optional[np.ndarray] = None

    is_linear = False

    def __post_init__(self):
        for name in ("u0", "gamma0", "u_dagger"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        coords(self.domain, self.u0)
        coords(self.domain, self.gamma0)
        if self.u_dagger is not None:
            coords(self.domain, self.u_dagger)
        if not self.eps > 0:
            raise ProblemError(f"Ball radius must be positive, got {self.eps}")
        if not 0 <= self.eta < 1:
            raise ProblemError(f"Tangential cone constant must lie in [0, 1), got {self.eta}")
        if not (self.C0 > 0 and self.C_stab > 0):
            raise ProblemError("Constants C0 and C_stab must be positive")

    # Actions implemented by the concrete problems
    def _forward(self, u):
        raise NotImplementedError

    def _derivative(self, u, h):
        raise NotImplementedError

    def _adjoint(self, u, xi):
        raise NotImplementedError

    def in_ball(self, u, factor=3.0):
        return norm(self.domain, np.asarray(u) - self.u0) <= factor * self.eps + BALL_SLACK

    def _check_point(self, u):
        u = coords(self.domain, u)
        if not self.in_ball(u):
            logger.warning(
                f"{self.name}: evaluation point outside B(u0, 3 eps) "
                f"(distance {norm(self.domain, u - self.u0):.4g}, 3 eps = {3 * self.eps:.4g})"
            )
        return u

    def apply(self, u):
        """F(u)"""
        v = self._forward(self._check_point(u))
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(f"{self.name}: F(u) is not finite")
        return v

    def deriv_apply(self, u, h):
        """L(u) h"""
        u = self._check_point(u)
        return self._derivative(u, coords(self.domain, h))

    def deriv_adjoint(self, u, xi):
        """L(u)* xi, a dual vector of the domain"""
        u = self._check_point(u)
        return self._adjoint(u, coords(self.data_space, xi))

    def derivative_matrix(self, u):
        """Dense matrix of L(u), one column per domain coordinate"""
        u = coords(self.domain, u)
        eye = np.eye(self.domain.dim)
        return np.column_stack([self._derivative(u, e) for e in eye])

    def exact_data(self):
        if self.u_dagger is None:
            raise ProblemError(f"{self.name}: no known solution to synthesise data from")
        return self.apply(self.u_dagger)


@dataclass(frozen=True)
class LinearDeconv(ForwardProblem):
    """F(u) = A u with A a discretised Fredholm kernel."""

    matrix: np.ndarray = field(default=None, repr=False)

    is_linear = True

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix))
        if self.matrix is None or self.matrix.shape != (self.data_space.dim, self.domain.dim):
            raise ProblemError("Kernel matrix shape does not match the spaces")
        super().__post_init__()

    def _forward(self, u):
        return self.matrix @ u

    def _derivative(self, u, h):
        return self.matrix @ h

    def _adjoint(self, u, xi):
        return self.matrix.T @ xi

    def derivative_matrix(self, u):
        return np.array(self.matrix)


@dataclass(frozen=True)
class DiagonalExp(ForwardProblem):
    """F(u)_i = sigma_i (exp(u_i) - 1), a smooth nonlinear diagonal operator."""

    scales: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "scales", _frozen(self.scales))
        if self.scales is None or self.scales.shape != (self.domain.dim,):
            raise ProblemError("Need one positive scale per coordinate")
        if np.any(self.scales <= 0):
            raise ProblemError("Scales must be positive")
        if self.data_space.dim != self.domain.dim:
            raise ProblemError("Diagonal operator needs equal domain and data dimensions")
        super().__post_init__()

    def _forward(self, u):
        return self.scales * np.expm1(u)

    def _derivative(self, u, h):
        return self.scales * np.exp(u) * h

    def _adjoint(self, u, xi):
        return self.scales * np.exp(u) * xi


def _sample_pairs(fp, samples, rng):
    for _ in range(samples):
        u = sample_ball(fp.domain, fp.u0, 3.0 * fp.eps, rng)
        ut = sample_ball(fp.domain, fp.u0, 3.0 * fp.eps, rng)
        yield u, ut


def estimate_eta(fp, samples=1000, rng=None):
    """Sampled tangential cone constant over B(u0, 3 eps), times 1.1"""
    if samples < 100:
        raise ProblemError("Need at least 100 samples to estimate eta")
    if fp.is_linear:
        return 0.0
    rng = np.random.default_rng(0) if rng is None else rng
    worst, used = 0.0, 0
    for u, ut in _sample_pairs(fp, samples, rng):
        diff = fp.apply(ut) - fp.apply(u)
        denom = norm(fp.data_space, diff)
        if denom == 0.0:
            continue
        used += 1
        remainder = diff - fp.deriv_apply(u, ut - u)
        worst = max(worst, norm(fp.data_space, remainder) / denom)
    if used == 0:
        raise ProblemError("All sampled pairs were degenerate while estimating eta")
    return SAFETY_FACTOR * worst


def estimate_stability(fp, pen, samples=1000, rng=None):
    """Sampled max of D_gamma phi(ut, u) / |F(ut) - F(u)|^p, times 1.1"""
    if samples < 100:
        raise ProblemError("Need at least 100 samples to estimate the stability constant")
    rng = np.random.default_rng(0) if rng is None else rng
    worst, used = 0.0, 0
    for u, ut in _sample_pairs(fp, samples, rng):
        denom = norm(fp.data_space, fp.apply(ut) - fp.apply(u)) ** pen.p
        if denom == 0.0:
            continue
        used += 1
        worst = max(worst, pen.distance(ut, u, pen.subgradient(u)) / denom)
    if used == 0 or worst == 0.0:
        raise ProblemError("Degenerate samples while estimating the stability constant")
    return SAFETY_FACTOR * worst


def _operator_norm(fp, mat, rng, directions=64):
    """|mat| from l^{r_U} to l^{r_V}; exact for r_U = r_V = 2, sampled otherwise"""
    if fp.domain.r == 2 and fp.data_space.r == 2:
        return float(svdvals(mat)[0])
    _, _, vt = np.linalg.svd(mat)
    candidates = list(np.eye(fp.domain.dim)) + [vt[0]]
    candidates += [rng.standard_normal(fp.domain.dim) for _ in range(directions)]
    best = 0.0
    for h in candidates:
        size = norm(fp.domain, h)
        if size > 0:
            best = max(best, norm(fp.data_space, mat @ h) / size)
    return best


def estimate_derivative_bound(fp, samples=100, rng=None):
    """Sampled sup of |L(u)| over B(u0, 3 eps), times 1.1"""
    rng = np.random.default_rng(0) if rng is None else rng
    if fp.is_linear:
        return SAFETY_FACTOR * _operator_norm(fp, fp.derivative_matrix(fp.u0), rng)
    worst = _operator_norm(fp, fp.derivative_matrix(fp.u0), rng)
    for _ in range(samples):
        u = sample_ball(fp.domain, fp.u0, 3.0 * fp.eps, rng)
        worst = max(worst, _operator_norm(fp, fp.derivative_matrix(u), rng))
    return SAFETY_FACTOR * worst


def fit_radius(fp, pen, margin=SAFETY_FACTOR):
    """Radius with D_gamma0 phi(u_dagger, u0) <= c0 eps^p, inflated by ``margin``"""
    if fp.u_dagger is None:
        return fp.eps
    dist = pen.distance(fp.u_dagger, fp.u0, fp.gamma0)
    if dist == 0.0:
        return fp.eps
    return margin * (dist / pen.c0) ** (1.0 / pen.p)


def calibrate(fp, pen, samples=1000, rng=None, eps=None, eta=None, C0=None, C_stab=None):
    """
    Return a copy of ``fp`` with eps, eta, C0 and C_stab filled in.

    Explicit values win over estimates; eps defaults to ``fit_radius``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    fp = dataclasses.replace(fp, eps=fit_radius(fp, pen) if eps is None else float(eps))
    changes = {
        "eta": estimate_eta(fp, samples, rng) if eta is None else float(eta),
        "C0": estimate_derivative_bound(fp, max(10, samples // 10), rng) if C0 is None else float(C0),
        "C_stab": estimate_stability(fp, pen, samples, rng) if C_stab is None else float(C_stab),
    }
    if changes["eta"] >= 1:
        raise ProblemError(
            f"{fp.name}: tangential cone constant {changes['eta']:.3f} is not below 1 "
            f"on B(u0, 3 eps); shrink eps"
        )
    fp = dataclasses.replace(fp, **changes)
    logger.info(
        f"{fp.name}: eps={fp.eps:.4g} eta={fp.eta:.4g} C0={fp.C0:.4g} C_stab={fp.C_stab:.4g}"
    )
    return fp


def _piecewise_profile(n):
    x = (np.arange(n) + 0.5) / n
    profile = np.zeros(n)
    profile[(x >= 0.2) & (x < 0.45)] = 1.0
    profile[(x >= 0.45) & (x < 0.7)] = -0.5
    profile[(x >= 0.7) & (x < 0.85)] = 0.75
    return profile


def deconv_matrix(n, kernel_width):
    """A_ij = (1/n) exp(-((i - j)/n)^2 / (2 w^2)), symmetric Toeplitz"""
    offsets = np.arange(n) / n
    return toeplitz(np.exp(-(offsets**2) / (2.0 * kernel_width**2)) / n)


def make_deconv(
    n,
    kernel_width,
    penalty=None,
    amplitude=10.0,
    data_exponent=2.0,
    samples=1000,
    seed=0,
    **overrides,
):
    """
    Gaussian-kernel deconvolution on a uniform grid of n points.

    The truth is a piecewise-constant profile, u0 = 0; constants are
    calibrated against ``penalty`` (power-norm p = 2 when omitted).
    """
    if int(n) != n or n < 8:
        raise ProblemError(f"Deconvolution needs n >= 8 grid points, got {n}")
    if not kernel_width > 0:
        raise ProblemError(f"Kernel width must be positive, got {kernel_width}")
    n = int(n)
    rng = np.random.default_rng(seed)
    pen = power_norm(n, 2.0, rng=rng) if penalty is None else penalty
    matrix = deconv_matrix(n, kernel_width)
    rank = np.linalg.matrix_rank(matrix)
    if rank < n:
        logger.warning(f"Deconvolution kernel is numerically rank deficient (rank {rank} < {n})")

    u0 = np.zeros(n)
    u_dagger = amplitude * _piecewise_profile(n)
    fp = LinearDeconv(
        name="deconv",
        domain=pen.space,
        data_space=SpaceModel(n, float(data_exponent)),
        u0=u0,
        gamma0=pen.subgradient(u0),
        eps=max(1.0, 1.5 * norm(pen.space, u_dagger)),
        u_dagger=u_dagger,
        matrix=matrix,
    )
    return calibrate(fp, pen, samples=samples, rng=rng, **overrides)


def make_diagexp(
    n,
    scales=None,
    eps=0.15,
    amplitude=0.5,
    penalty=None,
    data_exponent=2.0,
    samples=1000,
    seed=0,
    **overrides,
):
    """
    Diagonal exponential problem with a smooth bump as truth.

    The bump is scaled so that D_gamma0 phi(u_dagger, u0) = amplitude * c0 eps^p,
    which keeps the truth inside the radius required of it. ``scales`` is a
    vector of sigma_i or one number for every coordinate, DIAGEXP_SCALE when
    omitted.
    """
    if int(n) != n or n < 1:
        raise ProblemError(f"Need a positive dimension, got {n}")
    if not 0 < amplitude < 1:
        raise ProblemError("Amplitude is a fraction of the admissible Bregman budget, in (0, 1)")
    n = int(n)
    rng = np.random.default_rng(seed)
    pen = power_norm(n, 2.0, rng=rng) if penalty is None else penalty
    if scales is None:
        scales = DIAGEXP_SCALE
    if np.ndim(scales) == 0:
        scales = np.full(n, float(scales))
    scales = np.asarray(scales, dtype=float)

    u0 = np.zeros(n)
    gamma0 = pen.subgradient(u0)
    x = (np.arange(n) + 0.5) / n
    bump = np.sin(np.pi * x) ** 2 - 0.4 * np.sin(3 * np.pi * x)
    target = amplitude * pen.c0 * eps**pen.p
    t = brentq(lambda t: pen.distance(t * bump, u0, gamma0) - target, 0.0, 1e3)

    fp = DiagonalExp(
        name="diagexp",
        domain=pen.space,
        data_space=SpaceModel(n, float(data_exponent)),
        u0=u0,
        gamma0=gamma0,
        eps=float(eps),
        u_dagger=t * bump,
        scales=scales,
    )
    overrides.setdefault("eps", eps)
    return calibrate(fp, pen, samples=samples, rng=rng, **overrides)


def problem_from_config(section, pen, data_exponent=2.0, seed=0):
    """Build and calibrate a problem from the ``problem`` config section"""
    section = {key: value for key, value in section.items() if value is not None}
    kind = section.get("kind")
    overrides = {
        key: section[key]
        for key in ("eta", "C0", "C_stab")
        if section.get(key) is not None
    }
    common = dict(
        penalty=pen,
        data_exponent=data_exponent,
        samples=section.get("samples", 1000),
        seed=seed,
        **overrides,
    )
    if kind == "deconv":
        if section.get("eps") is not None:
            common["eps"] = section["eps"]
        return make_deconv(
            section.get("n", 64),
            section.get("kernel_width", 0.02),
            amplitude=section.get("amplitude", 10.0),
            **common,
        )
    if kind == "diagexp":
        return make_diagexp(
            section.get("n", 32),
            scales=section.get("scales"),
            eps=section.get("eps", 0.15),
            amplitude=section.get("amplitude", 0.5),
            **common,
        )
    raise ProblemError(f"Unknown problem kind: {kind}")

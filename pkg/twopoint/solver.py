"""
Two-point gradient iteration with a convex penalty.

One step, for k = 0, 1, 2, ...:

    Xi_k      = gamma_k + lambda_k (gamma_k - gamma_{k-1})
    w_k       = grad phi*(Xi_k)
    r_k       = F(w_k) - v_delta
    gamma_k+1 = (1 - alpha_k) Xi_k - upsilon_k L(w_k)* J_s(r_k) + alpha_k Xi_0
    u_k+1     = grad phi*(gamma_k+1)

The iteration stops at the first k with |r_k| <= tau * delta and returns u_k.
With lambda = alpha = 0 it is the Landweber iteration with convex penalty.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.optimize import brentq

from .geometry import coords, dual_norm, duality_map, norm

logger = logging.getLogger(__name__)

LAMBDA_STRATEGIES = ("zero", "nesterov", "dbts")
ALPHA_STRATEGIES = ("zero", "rule")

STOP_DISCREPANCY = "discrepancy"
STOP_KMAX = "k_max"
STOP_THETA5 = "theta5_violation"

# Relative slack for the admissibility inequalities (root-finding round-off)
ADMISSIBLE_RTOL = 1e-12


class Theta5Error(ValueError):
    """The descent constant is not positive; the run is refused."""

    def __init__(self, value, terms):
        self.value = value
        self.terms = terms
        self.dominant = max(terms, key=terms.get)
        listing = ", ".join(f"{name}={val:.4g}" for name, val in terms.items())
        super().__init__(
            f"theta5 = {value:.4g} <= 0; largest subtracted term is '{self.dominant}' ({listing})"
        )


class NumericalBlowupError(ArithmeticError):
    """A non-finite quantity appeared during the iteration."""

    def __init__(self, k, quantity):
        self.k = k
        self.quantity = quantity
        super().__init__(f"Non-finite {quantity} at iteration {k}")


@dataclass(frozen=True)
class SolverConfig:
    """Constants of the step-size, combination and stopping rules."""

    tau: float = 5.0
    s: float = 2.0
    theta1: float = 0.2
    theta2bar: float = 0.1
    theta3: float = 1.0
    theta4: float = 0.05
    zeta: float = 2.0
    sigma_nesterov: float = 3.0
    lambda_strategy: str = "dbts"
    alpha_strategy: str = "rule"
    k_max: int = 5000
    jmax: int = 5
    h_scale: float = 1.0
    alpha_summable_scale: float = 1.0
    keep_iterates: bool = False

    def __post_init__(self):
        checks = [
            (self.tau > 1, f"tau must be > 1, got {self.tau}"),
            (self.s > 1, f"s must be > 1, got {self.s}"),
            (self.theta1 > 0, "theta1 must be positive"),
            (0 < self.theta2bar < self.theta1, "theta2bar must lie in (0, theta1)"),
            (self.theta3 > 0, "theta3 must be positive"),
            (self.theta4 > 0, "theta4 must be positive"),
            (self.zeta > 1, f"zeta must be > 1, got {self.zeta}"),
            (self.sigma_nesterov >= 3, "sigma_nesterov must be >= 3"),
            (self.lambda_strategy in LAMBDA_STRATEGIES, f"unknown lambda strategy {self.lambda_strategy!r}"),
            (self.alpha_strategy in ALPHA_STRATEGIES, f"unknown alpha strategy {self.alpha_strategy!r}"),
            (int(self.k_max) == self.k_max and self.k_max >= 0, "k_max must be a nonnegative integer"),
            (int(self.jmax) == self.jmax and self.jmax >= 1, "jmax must be a positive integer"),
            (self.h_scale > 0, "h_scale must be positive"),
            (self.alpha_summable_scale > 0, "alpha_summable_scale must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ValueError(message)
        object.__setattr__(self, "k_max", int(self.k_max))
        object.__setattr__(self, "jmax", int(self.jmax))

    @classmethod
    def landweber(cls, **overrides):
        """Plain Landweber iteration with convex penalty (lambda = alpha = 0)"""
        overrides.update(lambda_strategy="zero", alpha_strategy="zero")
        return cls(**overrides)

    @property
    def effective_theta4(self):
        """theta4 as it enters the descent constant; zero when alpha is off"""
        return self.theta4 if self.alpha_strategy == "rule" else 0.0

    def h(self, i):
        """Summable non-increasing sequence of the backtracking search"""
        return self.h_scale / (i + 1.0) ** 2


@dataclass
class Probe:
    """Quantities of the extrapolated point for one trial lambda."""

    lam: float
    xi: np.ndarray
    w: np.ndarray
    residual: np.ndarray
    residual_norm: float
    grad: np.ndarray
    grad_norm: float
    t_k: float
    theta2_k: float
    upsilon: float


@dataclass
class IterationState:
    k: int
    gamma_prev: np.ndarray
    gamma_cur: np.ndarray
    xi0: np.ndarray
    u_cur: np.ndarray
    i_dbts: int = 0
    probe: Optional[Probe] = None
    alpha: float = 0.0

    @property
    def w_cur(self):
        return None if self.probe is None else self.probe.w


@dataclass(frozen=True)
class StepRecord:
    k: int
    residual_norm: float
    upsilon: float
    lam: float
    alpha: float
    t_k: float
    bregman_to_truth: float
    theta_k: float
    dgamma_norm: float = 0.0
    i_dbts: int = 0
    admissible_descent: bool = True
    admissible_ball: bool = True
    dist_u: float = 0.0
    dist_w: float = 0.0
    alpha_partial: float = 0.0
    lambda_partial: float = 0.0


@dataclass
class IterationTrace:
    """Append-only record of one run."""

    problem: str
    delta: float
    tau: float
    lambda_strategy: str
    alpha_strategy: str
    theta5: float
    bregman_initial: float
    records: List[StepRecord] = field(default_factory=list)
    stop_index: Optional[int] = None
    stop_reason: Optional[str] = None
    u_final: Optional[np.ndarray] = None
    w_final: Optional[np.ndarray] = None
    gamma_final: Optional[np.ndarray] = None
    iterates: list = field(default_factory=list)

    def append(self, record):
        if self.records and record.k <= self.records[-1].k:
            raise ValueError(f"Trace indices must increase ({record.k} after {self.records[-1].k})")
        self.records.append(record)

    @property
    def final(self):
        return self.records[-1] if self.records else None

    def column(self, name):
        return np.array([getattr(rec, name) for rec in self.records])


def theta5_terms(cfg, pen, fp):
    """Subtracted terms of the descent constant theta5, by name"""
    ps = pen.dual_exponent
    alpha_term = (fp.C_stab / pen.c0) ** (1.0 / pen.p) * cfg.effective_theta4
    return {
        "alpha": alpha_term,
        "eta": fp.eta,
        "step": cfg.theta1 ** (ps - 1.0) * pen.conjugate_bound_factor,
        "discrepancy": (alpha_term + 1.0 + fp.eta) / cfg.tau,
    }


def theta5(cfg, pen, fp):
    return 1.0 - sum(theta5_terms(cfg, pen, fp).values())


def theta6_noisefree(cfg, pen, fp):
    """Descent constant of the exact-data iteration (no discrepancy term)"""
    terms = theta5_terms(cfg, pen, fp)
    return 1.0 - terms["alpha"] - terms["eta"] - terms["step"]


def kappa_h(cfg, pen, fp, theta5_value):
    """Constant of the Nesterov-capped combination rule"""
    ps = pen.dual_exponent
    spread = (cfg.theta1 ** (ps - 1.0) - cfg.theta2bar ** (ps - 1.0)) ** (1.0 / (ps - 1.0))
    return (
        ps * (2.0 * pen.c0) ** (ps - 1.0) * theta5_value * cfg.tau**pen.p / (2.0 * cfg.zeta)
    ) * min(spread / (2.0 * fp.C0**pen.p), cfg.theta3)


def select_theta2k(cfg, pen, residual_norm, t_k):
    """theta_{2,k} with theta_{2,k} t_k^p* = theta2bar^(p*-1) |r_k|^s"""
    if t_k <= 0.0:
        return 0.0
    ps = pen.dual_exponent
    return cfg.theta2bar ** (ps - 1.0) * residual_norm**cfg.s / t_k**ps


def step_size(cfg, pen, residual_norm, t_k, theta2_k, grad_norm, delta):
    """
    Step size upsilon_k; zero once the discrepancy principle is met.

    For exact data (delta = 0) the step vanishes only when the residual does.
    """
    if delta == 0.0:
        if residual_norm == 0.0:
            return 0.0
    elif residual_norm <= cfg.tau * delta:
        return 0.0
    ps = pen.dual_exponent
    radicand = cfg.theta1 ** (ps - 1.0) * residual_norm**cfg.s - theta2_k * t_k**ps
    assert radicand >= 0.0, f"negative step radicand {radicand}"
    cap = cfg.theta3 * residual_norm ** (pen.p - cfg.s)
    if grad_norm == 0.0:
        return cap
    return min(0.5 * radicand ** (1.0 / (ps - 1.0)) / grad_norm**pen.p, cap)


def select_alpha(cfg, pen, upsilon, residual_norm, t_k, theta2_k, k=0, noise_free=False):
    if cfg.alpha_strategy == "zero" or upsilon == 0.0 or t_k == 0.0:
        return 0.0
    ps = pen.dual_exponent
    alpha = min(
        cfg.theta4 * upsilon * residual_norm ** (cfg.s - 1.0) / t_k,
        2.0 ** ((1.0 - ps) / ps) * (theta2_k * upsilon) ** (1.0 / ps),
        1.0,
    )
    if noise_free:
        alpha = min(alpha, cfg.alpha_summable_scale / (k + 1.0) ** 2)
    return alpha


def _combination_cost(pen, lam, dgamma_norm):
    """(lambda + lambda^p*) |dgamma|^p* / (p* (2 c0)^(p*-1))"""
    ps = pen.dual_exponent
    return (lam + lam**ps) * dgamma_norm**ps * pen.conjugate_bound_factor


def check_lambda_admissible(cfg, pen, lam, dgamma_norm, upsilon, residual_norm, theta5_value, eps):
    """
    Return (descent, ball) admissibility of a combination parameter.

    descent: cost <= theta5 * upsilon * |r|^s / zeta
    ball:    cost <= c0 * eps^p
    """
    cost = _combination_cost(pen, lam, dgamma_norm)
    descent = theta5_value * upsilon * residual_norm**cfg.s / cfg.zeta
    ball = pen.c0 * eps**pen.p
    return (
        cost <= descent * (1.0 + ADMISSIBLE_RTOL),
        cost <= ball * (1.0 + ADMISSIBLE_RTOL),
    )


def _clamp_to_ball(pen, lam, dgamma_norm, eps):
    budget = pen.c0 * eps**pen.p
    if _combination_cost(pen, lam, dgamma_norm) <= budget:
        return lam
    root = brentq(lambda x: _combination_cost(pen, x, dgamma_norm) - budget, 0.0, lam)
    while root > 0.0 and _combination_cost(pen, root, dgamma_norm) > budget:
        root *= 1.0 - 1e-9
    return root


def select_lambda_nesterov(cfg, pen, fp, k, delta, dgamma_norm, theta5_value):
    """Nesterov weight k/(k + sigma), capped by the noise level and the ball budget"""
    cap = k / (k + cfg.sigma_nesterov)
    if k == 0 or dgamma_norm == 0.0:
        return cap
    ps = pen.dual_exponent
    lam = min(kappa_h(cfg, pen, fp, theta5_value) * delta**pen.p / dgamma_norm**ps, cap)
    return _clamp_to_ball(pen, lam, dgamma_norm, fp.eps)


def probe(cfg, pen, fp, state, lam, delta, v_delta):
    """Evaluate the extrapolated point for a trial lambda"""
    xi = state.gamma_cur + lam * (state.gamma_cur - state.gamma_prev)
    w = pen.conjugate_grad(xi)
    residual = fp.apply(w) - v_delta
    residual_norm = norm(fp.data_space, residual)
    t_k = dual_norm(fp.domain, xi - state.xi0)
    theta2_k = select_theta2k(cfg, pen, residual_norm, t_k)
    active = residual_norm > 0.0 if delta == 0.0 else residual_norm > cfg.tau * delta
    if active:
        grad = fp.deriv_adjoint(w, duality_map(fp.data_space, cfg.s, residual))
        grad_norm = dual_norm(fp.domain, grad)
    else:
        grad = np.zeros_like(xi)
        grad_norm = 0.0
    upsilon = step_size(cfg, pen, residual_norm, t_k, theta2_k, grad_norm, delta)
    for name, value in (("extrapolated point", w), ("residual", residual), ("gradient", grad)):
        if not np.all(np.isfinite(value)):
            raise NumericalBlowupError(state.k, name)
    return Probe(lam, xi, w, residual, residual_norm, grad, grad_norm, t_k, theta2_k, upsilon)


def select_lambda_dbts(cfg, pen, fp, state, delta, v_delta, theta5_value):
    """
    Discrete backtracking search for lambda.

    Returns (lambda, index, probe) with 1 <= index - state.i_dbts <= jmax.
    """
    start = state.i_dbts
    dgamma_norm = dual_norm(fp.domain, state.gamma_cur - state.gamma_prev)
    if dgamma_norm == 0.0:
        return 0.0, start + 1, probe(cfg, pen, fp, state, 0.0, delta, v_delta)

    ps = pen.dual_exponent
    k = state.k
    ball_cap = ps * (2.0 * pen.c0) ** ps * fp.eps**pen.p / (4.0 * dgamma_norm**ps)
    nesterov_cap = k / (k + cfg.sigma_nesterov)

    def pi(i):
        return min(cfg.h(i) / dgamma_norm, ball_cap, nesterov_cap)

    for j in range(1, cfg.jmax + 1):
        lam = pi(start + j)
        trial = probe(cfg, pen, fp, state, lam, delta, v_delta)
        if trial.residual_norm <= cfg.tau * delta:
            return 0.0, start + j, probe(cfg, pen, fp, state, 0.0, delta, v_delta)
        descent_ok, _ = check_lambda_admissible(
            cfg, pen, lam, dgamma_norm, trial.upsilon, trial.residual_norm, theta5_value, fp.eps
        )
        if descent_ok:
            return lam, start + j, trial

    lam = select_lambda_nesterov(cfg, pen, fp, k, delta, dgamma_norm, theta5_value)
    logger.debug(f"k={k}: backtracking exhausted, falling back to capped Nesterov lambda={lam:.3e}")
    return lam, start + cfg.jmax, probe(cfg, pen, fp, state, lam, delta, v_delta)


def _select(cfg, pen, fp, state, delta, v_delta, theta5_value, dgamma_norm):
    if state.k == 0 or cfg.lambda_strategy == "zero":
        return 0.0, state.i_dbts, probe(cfg, pen, fp, state, 0.0, delta, v_delta)
    if cfg.lambda_strategy == "nesterov":
        lam = select_lambda_nesterov(cfg, pen, fp, state.k, delta, dgamma_norm, theta5_value)
        return lam, state.i_dbts, probe(cfg, pen, fp, state, lam, delta, v_delta)
    return select_lambda_dbts(cfg, pen, fp, state, delta, v_delta, theta5_value)


def iterate(cfg, pen, fp, v_delta, delta):
    """
    Run the two-point gradient iteration until the discrepancy principle
    (or k_max) stops it. Refuses to start when theta5 <= 0.
    """
    if delta < 0:
        raise ValueError(f"Noise level must be nonnegative, got {delta}")
    terms = theta5_terms(cfg, pen, fp)
    descent = 1.0 - sum(terms.values())
    if descent <= 0.0:
        raise Theta5Error(descent, terms)
    v_delta = coords(fp.data_space, v_delta)
    noise_free = delta == 0.0
    truth = fp.u_dagger

    state = IterationState(
        k=0,
        gamma_prev=np.array(fp.gamma0),
        gamma_cur=np.array(fp.gamma0),
        xi0=np.array(fp.gamma0),
        u_cur=np.array(fp.u0),
    )
    bregman_prev = pen.distance(truth, state.u_cur, state.gamma_cur) if truth is not None else math.nan
    trace = IterationTrace(
        problem=fp.name,
        delta=float(delta),
        tau=cfg.tau,
        lambda_strategy=cfg.lambda_strategy,
        alpha_strategy=cfg.alpha_strategy,
        theta5=descent,
        bregman_initial=bregman_prev,
    )
    logger.info(
        f"{fp.name}: starting {cfg.lambda_strategy}/{cfg.alpha_strategy} run, "
        f"delta={delta:g}, theta5={descent:.4f}"
    )

    bregman_cur = bregman_prev
    alpha_partial = lambda_partial = 0.0
    for k in range(cfg.k_max + 1):
        state.k = k
        dgamma_norm = dual_norm(fp.domain, state.gamma_cur - state.gamma_prev)
        lam, index, trial = _select(cfg, pen, fp, state, delta, v_delta, descent, dgamma_norm)
        flags = check_lambda_admissible(
            cfg, pen, lam, dgamma_norm, trial.upsilon, trial.residual_norm, descent, fp.eps
        )
        if lam > 0.0 and not all(flags):
            logger.warning(
                f"k={k}: lambda={lam:.3e} violates admissibility {flags}, using lambda=0"
            )
            lam = 0.0
            trial = probe(cfg, pen, fp, state, 0.0, delta, v_delta)
            flags = (True, True)
        state.probe = trial
        state.i_dbts = index

        stopped = trial.residual_norm == 0.0 if noise_free else trial.residual_norm <= cfg.tau * delta
        alpha = 0.0
        if not stopped and k < cfg.k_max:
            alpha = select_alpha(
                cfg, pen, trial.upsilon, trial.residual_norm, trial.t_k, trial.theta2_k, k, noise_free
            )
        state.alpha = alpha
        lambda_partial += lam * dgamma_norm
        alpha_partial += alpha * dual_norm(fp.domain, state.xi0 - state.gamma_cur)

        trace.append(
            StepRecord(
                k=k,
                residual_norm=trial.residual_norm,
                upsilon=trial.upsilon,
                lam=lam,
                alpha=alpha,
                t_k=trial.t_k,
                bregman_to_truth=bregman_cur,
                theta_k=bregman_cur - bregman_prev,
                dgamma_norm=dgamma_norm,
                i_dbts=index,
                admissible_descent=flags[0],
                admissible_ball=flags[1],
                dist_u=norm(fp.domain, state.u_cur - fp.u0),
                dist_w=norm(fp.domain, trial.w - fp.u0),
                alpha_partial=alpha_partial,
                lambda_partial=lambda_partial,
            )
        )
        if cfg.keep_iterates:
            trace.iterates.append((state.gamma_cur.copy(), state.u_cur.copy(), trial.w.copy()))
        logger.debug(
            f"k={k} |r|={trial.residual_norm:.4e} upsilon={trial.upsilon:.3e} "
            f"lambda={lam:.3e} alpha={alpha:.3e}"
        )

        if stopped or k == cfg.k_max:
            trace.stop_index = k
            trace.stop_reason = STOP_DISCREPANCY if stopped else STOP_KMAX
            break

        gamma_next = (1.0 - alpha) * trial.xi - trial.upsilon * trial.grad + alpha * state.xi0
        if not np.all(np.isfinite(gamma_next)):
            raise NumericalBlowupError(k, "dual iterate")
        state.gamma_prev = state.gamma_cur
        state.gamma_cur = gamma_next
        state.u_cur = pen.conjugate_grad(gamma_next)
        if truth is not None:
            bregman_prev = bregman_cur
            bregman_cur = pen.distance(truth, state.u_cur, state.gamma_cur)

    trace.u_final = state.u_cur
    trace.w_final = state.probe.w
    trace.gamma_final = state.gamma_cur
    logger.info(
        f"{fp.name}: stopped at k={trace.stop_index} ({trace.stop_reason}), "
        f"|r|={trace.final.residual_norm:.4e}"
    )
    return trace


def with_strategy(cfg, lambda_strategy=None, alpha_strategy=None):
    """Copy of ``cfg`` with other combination rules"""
    changes = {}
    if lambda_strategy is not None:
        changes["lambda_strategy"] = lambda_strategy
    if alpha_strategy is not None:
        changes["alpha_strategy"] = alpha_strategy
    return dataclasses.replace(cfg, **changes)

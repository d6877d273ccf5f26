"""Trial-offer market equilibria (TOME): closed form, fixed-point solver, checks.

A share vector ``phi`` is an equilibrium when the next-purchase distribution
reproduces it, ``p(phi) == phi``.
"""

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from .exceptions import DomainError, NoConvergence, ShapeError
from .market import (
    MarketConfig,
    _intensity,
    _normalize,
    next_purchase_probabilities,
    social_signal,
)
from .validation import check_shares

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000
DEFAULT_DAMPING = 0.5

LEVEL_SET_NOTE = ("feedback exponent >= 1: equilibria form a level set "
                  "(possibly on the boundary); no unique interior equilibrium")


class Method(str, enum.Enum):
    CLOSED_FORM = "ClosedForm"
    FIXED_POINT = "FixedPointIteration"
    HOMOGENIZED = "Homogenized"


@dataclass(frozen=True)
class TomeResult:
    shares: np.ndarray
    residual: float
    method: Method
    iterations: int = 0
    tol: float = DEFAULT_TOL

    def to_dict(self):
        return {
            "shares": [float(x) for x in self.shares],
            "residual": float(self.residual),
            "method": self.method.value,
            "iterations": int(self.iterations),
            "tol": float(self.tol),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["shares"], dtype=float), float(d["residual"]),
                   Method(d["method"]), int(d.get("iterations", 0)),
                   float(d.get("tol", DEFAULT_TOL)))


@dataclass(frozen=True)
class ExPostWeights:
    a_star: np.ndarray = field(repr=True)


def fixed_point_residual(cfg, phi):
    """L-infinity distance between ``p(phi)`` and ``phi``."""
    return float(np.max(np.abs(next_purchase_probabilities(cfg, phi) - phi)))


def _require_feedback_below_one(cfg):
    r = cfg.feedback
    if np.any(r >= 1):
        raise DomainError(LEVEL_SET_NOTE)
    if np.any(r <= 0):
        raise DomainError("feedback exponents must be > 0 for a unique interior equilibrium")


def homogeneous_tome(cfg, tol=DEFAULT_TOL):
    """Closed-form equilibrium of a single-type market with 0 < r < 1.

    The equilibrium share of item j is proportional to
    ``(v_j q_j) ** (1 / (1 - r))``.
    """
    if not cfg.is_homogeneous:
        raise ShapeError("homogeneous_tome needs a single user type; see homogenize()")
    _require_feedback_below_one(cfg)
    r = cfg.feedback[0]
    vq = cfg.visibility[0] * cfg.quality[0]
    with np.errstate(divide="ignore"):
        logits = np.log(vq) / (1.0 - r)
    shares = softmax(logits)
    return TomeResult(shares, fixed_point_residual(cfg, shares), Method.CLOSED_FORM, 0, tol)


def heterogeneous_tome(cfg, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                       damping=DEFAULT_DAMPING, init=None):
    """Damped fixed-point iteration ``phi <- (1 - d) phi + d p(phi)``.

    Starts from the uniform share vector unless ``init`` is given. Use
    ``damping=1`` for the plain iteration ``phi <- p(phi)``.

    Raises
    ------
    NoConvergence
        If the residual is still above ``tol`` after ``max_iter`` steps; the
        best iterate is attached to the exception.
    """
    _require_feedback_below_one(cfg)
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    if tol <= 0:
        raise ValueError("tol must be positive")
    w, v, q, r = cfg.weights, cfg.visibility, cfg.quality, cfg.feedback
    if init is None:
        phi = np.full(cfg.num_items, 1.0 / cfg.num_items)
    else:
        phi = check_shares(init, cfg.num_items).copy()
    best_phi, best_res = phi, np.inf
    for it in range(max_iter + 1):
        p = _normalize(_intensity(w, v, q, r, phi))
        res = float(np.max(np.abs(p - phi)))
        if res < best_res:
            best_phi, best_res = phi, res
        if res <= tol:
            return TomeResult(phi, res, Method.FIXED_POINT, it, tol)
        phi = (1.0 - damping) * phi + damping * p
        phi = phi / phi.sum()
    result = TomeResult(best_phi, best_res, Method.FIXED_POINT, max_iter, tol)
    raise NoConvergence(
        f"fixed-point iteration did not reach tol={tol:g} in {max_iter} steps "
        f"(best residual {best_res:.3e})", result)


def solve_tome(cfg, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, damping=DEFAULT_DAMPING):
    """Closed form when possible, then homogenization, then fixed-point iteration."""
    if cfg.is_homogeneous:
        return homogeneous_tome(cfg, tol)
    if cfg.has_common_feedback and cfg.has_common_visibility:
        res = homogeneous_tome(homogenize(cfg), tol)
        shares = res.shares
        return TomeResult(shares, fixed_point_residual(cfg, shares), Method.HOMOGENIZED, 0, tol)
    return heterogeneous_tome(cfg, tol, max_iter, damping)


def verify_tome(cfg, phi, tol=DEFAULT_TOL):
    """Returns ``(is_equilibrium, residual)``."""
    phi = check_shares(phi, cfg.num_items)
    res = fixed_point_residual(cfg, phi)
    return res <= tol, res


def homogenize(cfg):
    """Collapse a market whose types share visibility and feedback into one type.

    The purchase probability of the merged type is the population-weighted
    average of the per-type qualities.
    """
    if not cfg.has_common_feedback:
        raise ShapeError("homogenize requires identical feedback exponents")
    if not cfg.has_common_visibility:
        raise ShapeError("homogenize requires identical visibility rows")
    q_avg = cfg.weights @ cfg.quality
    return MarketConfig(np.ones(1), cfg.visibility[:1].copy(), q_avg[None, :],
                        cfg.feedback[:1].copy())


def expost_weights(cfg, tome):
    """Per-type exponents that make the equilibrium optimal for the Nash welfare product."""
    if np.any(cfg.feedback <= 0):
        raise DomainError("expost_weights needs positive feedback exponents")
    phi = np.asarray(tome.shares if isinstance(tome, TomeResult) else tome, dtype=float)
    sig = social_signal(phi, cfg.feedback)
    num = (cfg.quality * cfg.visibility * sig).sum(axis=1)
    den = (cfg.visibility * sig).sum(axis=1)
    return ExPostWeights(num / den / cfg.feedback)


def nash_welfare_gradient(cfg, phi, weights):
    """Gradient of the log of the ex-post weighted Nash welfare objective."""
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0):
        raise DomainError("nash welfare gradient needs an interior point")
    a = weights.a_star if isinstance(weights, ExPostWeights) else np.asarray(weights)
    r = cfg.feedback
    qv = cfg.quality * cfg.visibility
    util = (qv * social_signal(phi, r)).sum(axis=1)
    coef = cfg.weights * a * r / util
    return (coef[:, None] * qv * np.exp((r[:, None] - 1.0) * np.log(phi)[None, :])).sum(axis=0)


def nash_sw_kkt_residual(cfg, tome, weights):
    """Relative spread of the welfare gradient across items.

    Zero exactly when the gradient is constant over items, which is the
    stationarity condition on the simplex at an interior point.
    """
    phi = tome.shares if isinstance(tome, TomeResult) else tome
    g = nash_welfare_gradient(cfg, phi, weights)
    if np.ptp(g) == 0:
        return 0.0
    mean = g.mean()
    return float(np.max(np.abs(g - mean)) / mean)

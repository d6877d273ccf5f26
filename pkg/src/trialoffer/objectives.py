"""Convex objectives whose maximizers are market equilibria, and KL mirror descent.

Three objectives are supported:

``TOTAL_UTILITY``
    ``sum_j qbar_j phi_j ** r`` over the simplex (single user type).
``EFFICIENCY_ENTROPY``
    ``sum_j phi_j log qbar_j + (1 - r) H(phi)`` over the simplex, a weighted
    sum of efficiency and share entropy (single user type).
``HETERO_GAMMA``
    The multi-type objective for markets where every type shares the same
    quality ``q_j``. It is written in the transformed variables
    ``x_ij = b_ij / q_j`` with row sums ``x_i. = w_i``.

:func:`evaluate` and :func:`gradient` return the maximization objective by
default. Mirror descent minimizes, so :func:`bregman_remainder`,
:func:`md_step` and :func:`ct_bound_check` work with the negated objective.
"""

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import kl_div, logsumexp, rel_entr, softmax, xlogy

from .exceptions import DomainError, NoConvergence, ShapeError
from .market import MarketConfig, social_signal, _trial_matrix
from .validation import check_interior, check_matrix, check_vector

MIN_ITERATE = 1e-300


class Kind(str, enum.Enum):
    TOTAL_UTILITY = "TotalUtility"
    EFFICIENCY_ENTROPY = "EfficiencyEntropy"
    HETERO_GAMMA = "HeteroGamma"


class Divergence(str, enum.Enum):
    NEG_ENTROPY = "NegEntropy"


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    """An objective together with the market parameters it depends on.

    Use the constructors :meth:`total_utility`, :meth:`efficiency_entropy`,
    :meth:`hetero_gamma` or :meth:`from_market`.
    """

    kind: Kind
    r: float
    qbar: np.ndarray = None
    weights: np.ndarray = None
    visibility: np.ndarray = None
    quality: np.ndarray = None

    @classmethod
    def total_utility(cls, qbar, r):
        qbar = check_vector(qbar, "qbar", nonneg=True)
        return cls(Kind.TOTAL_UTILITY, float(r), qbar=qbar)

    @classmethod
    def efficiency_entropy(cls, qbar, r):
        qbar = check_vector(qbar, "qbar")
        if np.any(qbar <= 0):
            raise DomainError("EfficiencyEntropy needs qbar > 0 for every item")
        return cls(Kind.EFFICIENCY_ENTROPY, float(r), qbar=qbar)

    @classmethod
    def hetero_gamma(cls, weights, visibility, quality, r):
        v = check_matrix(visibility, "visibility", lo=0.0)
        w = check_vector(weights, "weights", length=v.shape[0])
        q = check_vector(quality, "quality", length=v.shape[1])
        if abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("weights must sum to 1")
        if np.any(q <= 0):
            raise DomainError("HeteroGamma needs positive common quality")
        return cls(Kind.HETERO_GAMMA, float(r), weights=w, visibility=v, quality=q)

    @classmethod
    def from_market(cls, cfg, kind):
        kind = Kind(kind)
        if kind is Kind.HETERO_GAMMA:
            if not cfg.has_common_quality:
                raise ShapeError("HeteroGamma requires quality common to all types")
            if not cfg.has_common_feedback:
                raise ShapeError("HeteroGamma requires a common feedback exponent")
            return cls.hetero_gamma(cfg.weights, cfg.visibility, cfg.quality[0], cfg.feedback[0])
        if not cfg.is_homogeneous:
            raise ShapeError(f"{kind.value} is defined for single-type markets")
        qbar = cfg.visibility[0] * cfg.quality[0]
        if kind is Kind.TOTAL_UTILITY:
            return cls.total_utility(qbar, cfg.feedback[0])
        return cls.efficiency_entropy(qbar, cfg.feedback[0])

    def market(self):
        """A market whose equilibrium is this objective's maximizer."""
        if self.kind is Kind.HETERO_GAMMA:
            n_types = self.visibility.shape[0]
            return MarketConfig(self.weights, self.visibility,
                                np.tile(self.quality, (n_types, 1)),
                                np.full(n_types, self.r))
        return MarketConfig.homogeneous(self.qbar, np.ones_like(self.qbar), self.r)


def spending_to_transformed(b, quality):
    """``x_ij = b_ij / q_j``."""
    return np.asarray(b, dtype=float) / np.asarray(quality, dtype=float)[None, :]


def transformed_to_spending(x, quality):
    """``b_ij = q_j x_ij``."""
    return np.asarray(x, dtype=float) * np.asarray(quality, dtype=float)[None, :]


def _hetero_min_value(obj, x):
    x = np.asarray(x, dtype=float)
    if x.shape != obj.visibility.shape:
        raise ShapeError(f"point must have shape {obj.visibility.shape}")
    if np.any((x > 0) & (obj.visibility == 0)):
        raise DomainError("spending on an item with zero visibility")
    xj = x.sum(axis=0)
    safe_v = np.where(obj.visibility > 0, obj.visibility, 1.0)
    return (-obj.r * xlogy(xj, xj * obj.quality).sum()
            + (xlogy(x, x) - xlogy(x, safe_v)).sum())


def evaluate(obj, point, minimize=False):
    """Objective value at ``point``; the maximization form unless ``minimize``."""
    if obj.kind is Kind.HETERO_GAMMA:
        val = -_hetero_min_value(obj, point)
    else:
        phi = np.asarray(point, dtype=float)
        if phi.shape != obj.qbar.shape:
            raise ShapeError(f"point must have shape {obj.qbar.shape}")
        if obj.kind is Kind.TOTAL_UTILITY:
            val = float((obj.qbar * social_signal(phi, obj.r)).sum())
        else:
            if np.any((phi > 0) & (obj.qbar == 0)):
                raise DomainError("positive share on an item with qbar == 0")
            val = float((xlogy(phi, obj.qbar) - (1.0 - obj.r) * xlogy(phi, phi)).sum())
    return -val if minimize else float(val)


def gradient(obj, point, minimize=False):
    """Analytic gradient at a strictly interior point."""
    x = check_interior(point)
    r = obj.r
    if obj.kind is Kind.TOTAL_UTILITY:
        g = r * obj.qbar * np.exp((r - 1.0) * np.log(x))
    elif obj.kind is Kind.EFFICIENCY_ENTROPY:
        g = np.log(obj.qbar) - (1.0 - r) * (1.0 + np.log(x))
    else:
        if np.any(obj.visibility <= 0):
            raise DomainError("HeteroGamma gradient needs positive visibility")
        xj = x.sum(axis=0)
        g = -(-r * np.log(xj * obj.quality)[None, :] + np.log(x / obj.visibility) + 1.0 - r)
    return -g if minimize else g


def kl_divergence(x, y, generalized=False):
    """``sum x log(x / y)``; with ``generalized`` adds ``- sum x + sum y``.

    Uses ``0 log 0 = 0``. The two forms agree when ``x`` and ``y`` have the
    same total mass.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ShapeError("x and y must have the same shape")
    if np.any(y <= 0):
        raise DomainError("y must be strictly positive")
    if np.any(x < 0):
        raise DomainError("x must be nonnegative")
    terms = kl_div(x, y) if generalized else rel_entr(x, y)
    return float(terms.sum())


def _neg_entropy(z):
    return float((xlogy(z, z) - z).sum())


def bregman_divergence(h_kind, x, y):
    """Bregman divergence ``h(x) - h(y) - <grad h(y), x - y>``.

    Only the negative-entropy generator ``h(z) = sum z log z - z`` is
    provided; its divergence is the generalized KL divergence.
    """
    if Divergence(h_kind) is not Divergence.NEG_ENTROPY:
        raise ValueError(f"unsupported generator {h_kind!r}")
    x = np.asarray(x, dtype=float)
    y = check_interior(y, "y")
    return _neg_entropy(x) - _neg_entropy(y) - float((np.log(y) * (x - y)).sum())


def bregman_remainder(obj, x, y):
    """First-order Taylor remainder of the minimization objective at ``y``."""
    y = check_interior(y, "y")
    x = np.asarray(x, dtype=float)
    fx = evaluate(obj, x, minimize=True)
    fy = evaluate(obj, y, minimize=True)
    return fx - fy - float((gradient(obj, y, minimize=True) * (x - y)).sum())


def md_step(obj, current, step=1.0):
    """One KL mirror-descent step on the minimization objective.

    The minimizer of ``<grad f(x), z - x> + KL(z, x) / step`` over the
    feasible set is ``z ∝ x * exp(-step * grad f(x))``, normalized to the
    simplex (single type) or to row sums ``w_i`` (``HETERO_GAMMA``).
    """
    if obj.kind is Kind.TOTAL_UTILITY:
        raise ValueError("mirror descent is provided for EfficiencyEntropy and HeteroGamma")
    x = check_interior(current)
    g = gradient(obj, x, minimize=True)
    logits = np.log(x) - step * g
    if obj.kind is Kind.EFFICIENCY_ENTROPY:
        out = softmax(logits)
    else:
        out = obj.weights[:, None] * softmax(logits, axis=1)
    return np.maximum(out, MIN_ITERATE)


def md_step_closed_form(obj, current):
    """Unit-step mirror descent written out for each objective.

    Single type: ``z_j ∝ qbar_j x_j ** r``. Multi-type:
    ``z_ij = w_i v_ij (q_j x_j) ** r / sum_k v_ik (q_k x_k) ** r``.
    """
    x = check_interior(current)
    if obj.kind is Kind.EFFICIENCY_ENTROPY:
        y = obj.qbar * x ** obj.r
        return y / y.sum()
    if obj.kind is Kind.HETERO_GAMMA:
        attn = obj.quality * x.sum(axis=0)
        num = obj.visibility * attn[None, :] ** obj.r
        return obj.weights[:, None] * num / num.sum(axis=1, keepdims=True)
    raise ValueError("no closed-form mirror step for TotalUtility")


def optimum(obj, tol=1e-14):
    """Maximizer of the objective (feasible point in the objective's variables).

    For a single type with ``r < 1`` this is the closed-form equilibrium;
    with ``r == 1`` a point mass on the best item (one member of the optimal
    level set). For ``HETERO_GAMMA`` the equilibrium is found by fixed-point
    iteration and mapped to transformed spending.
    """
    from .equilibrium import heterogeneous_tome

    if obj.kind is Kind.HETERO_GAMMA:
        if not 0 < obj.r < 1:
            raise DomainError("HeteroGamma optimum computed only for 0 < r < 1")
        try:
            phi = heterogeneous_tome(obj.market(), tol=tol).shares
        except NoConvergence as exc:
            phi = exc.result.shares
        return obj.weights[:, None] * _trial_matrix(obj.visibility, np.full(obj.weights.size, obj.r), phi)
    r = obj.r
    if r <= 0 or r > 1:
        raise DomainError("optimum computed only for 0 < r <= 1")
    if r == 1:
        out = np.zeros_like(obj.qbar)
        out[np.argmax(obj.qbar)] = 1.0
        return out
    with np.errstate(divide="ignore"):
        return softmax(np.log(obj.qbar) / (1.0 - r))


@dataclass
class CTReport:
    """Outcome of a Chen-Teboulle bound check along a mirror-descent run."""

    gaps: np.ndarray
    bounds: np.ndarray
    max_violation: float
    n_violations: int
    max_gap_increase: float
    optimum_value: float
    slack: float

    @property
    def ok(self):
        return self.n_violations == 0

    @property
    def nonincreasing(self):
        return self.max_gap_increase <= self.slack

    def to_dict(self):
        return {
            "T": int(self.gaps.size),
            "max_violation": float(self.max_violation),
            "n_violations": int(self.n_violations),
            "max_gap_increase": float(self.max_gap_increase),
            "optimum_value": float(self.optimum_value),
            "final_gap": float(self.gaps[-1]) if self.gaps.size else 0.0,
        }


def ct_bound_check(obj, start, T, L=1.0, x_star=None, slack=1e-9):
    """Run ``T`` unit mirror-descent steps and check ``gap_t <= L KL(x*, x0) / t``.

    Gaps are measured on the minimization objective. ``slack`` absorbs
    rounding in both the bound and the monotonicity check.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    x = check_interior(np.array(start, dtype=float), "start")
    if x_star is None:
        x_star = optimum(obj)
    f_star = evaluate(obj, x_star, minimize=True)
    d0 = kl_divergence(np.ravel(x_star), np.ravel(x), generalized=True)
    t = np.arange(1, T + 1)
    gaps = np.empty(T)
    for k in range(T):
        x = md_step(obj, x)
        gaps[k] = evaluate(obj, x, minimize=True) - f_star
    bounds = L * d0 / t
    over = gaps - bounds
    incr = np.diff(gaps)
    return CTReport(
        gaps=gaps,
        bounds=bounds,
        max_violation=float(max(over.max(), 0.0)),
        n_violations=int(np.count_nonzero(over > slack)),
        max_gap_increase=float(incr.max()) if incr.size else 0.0,
        optimum_value=-f_star,
        slack=slack,
    )


def max_value(obj):
    """Maximum of the single-type EfficiencyEntropy objective without solving for the maximizer.

    Equals ``(1 - r) log sum_j qbar_j ** (1 / (1 - r))`` for ``0 < r < 1``.
    """
    if obj.kind is not Kind.EFFICIENCY_ENTROPY:
        raise ValueError("defined for EfficiencyEntropy only")
    if not 0 < obj.r < 1:
        raise DomainError("closed-form maximum needs 0 < r < 1")
    return (1.0 - obj.r) * float(logsumexp(np.log(obj.qbar) / (1.0 - obj.r)))

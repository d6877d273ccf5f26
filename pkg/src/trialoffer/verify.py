"""Battery of numerical identity checks run by ``trialoffer verify``.

Each check reports the largest deviation it saw and the tolerance it was
held to. Checks that need an interior equilibrium are skipped, with the
reason recorded, when some feedback exponent is outside (0, 1).
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import deterministic_step, induced_spending, rma_reconstruction_defect, run_stochastic
from .equilibrium import expost_weights, nash_sw_kkt_residual, solve_tome
from .market import MarketConfig, next_purchase_probabilities
from .objectives import (
    Kind,
    ObjectiveSpec,
    bregman_remainder,
    ct_bound_check,
    evaluate,
    gradient,
    kl_divergence,
    md_step,
    transformed_to_spending,
)

TOLERANCES = {
    "gradient": 1e-6,
    "md_step_equality": 1e-12,
    "hetero_md_equality": 1e-12,
    "bregman_psi": 1e-12,
    "bregman_gamma": 1e-12,
    "spending_round_trip": 1e-12,
    "ct_bound": 1e-9,
    "nash_kkt": 1e-8,
    "rma_reconstruction": 1e-14,
}


@dataclass
class CheckResult:
    name: str
    max_deviation: float = 0.0
    tol: float = 0.0
    n: int = 0
    skipped: str = None
    note: str = None

    @property
    def passed(self):
        return self.skipped is not None or self.max_deviation <= self.tol

    def update(self, dev):
        dev = float(dev)
        if not np.isfinite(dev):
            dev = np.inf
        self.max_deviation = max(self.max_deviation, dev)
        self.n += 1

    def to_dict(self):
        return {"max_deviation": self.max_deviation, "tol": self.tol, "n": self.n,
                "passed": self.passed, "skipped": self.skipped, "note": self.note}


def random_market(rng, n_types=None, n_items=None, common_quality=False, r=None):
    """Random market with entries bounded away from zero."""
    n_types = int(rng.integers(1, 4)) if n_types is None else n_types
    n_items = int(rng.integers(2, 11)) if n_items is None else n_items
    w = rng.dirichlet(np.ones(n_types))
    w = w / w.sum()
    v = rng.uniform(0.1, 1.0, (n_types, n_items))
    if common_quality:
        q = np.tile(rng.uniform(0.1, 1.0, n_items), (n_types, 1))
    else:
        q = rng.uniform(0.1, 1.0, (n_types, n_items))
    r = rng.uniform(0.1, 0.9, n_types) if r is None else np.full(n_types, float(r))
    if common_quality:
        r = np.full(n_types, r[0])
    return MarketConfig(w, v, q, r)


def _interior_point(rng, n):
    return rng.dirichlet(np.ones(n))


def _fd_gradient(obj, x, rel_step=1e-4):
    """Central differences with a step proportional to each coordinate."""
    g = np.zeros_like(x)
    flat = x.ravel()
    for k in range(flat.size):
        e = np.zeros_like(flat)
        e[k] = rel_step * flat[k]
        g.ravel()[k] = (evaluate(obj, (flat + e).reshape(x.shape))
                        - evaluate(obj, (flat - e).reshape(x.shape))) / (2 * e[k])
    return g


def _objectives(cfg):
    """Objectives defined on ``cfg`` (possibly none)."""
    out = []
    if cfg.is_homogeneous:
        qbar = cfg.visibility[0] * cfg.quality[0]
        if np.all(qbar > 0):
            out.append(ObjectiveSpec.efficiency_entropy(qbar, cfg.feedback[0]))
    if (cfg.has_common_quality and cfg.has_common_feedback and np.all(cfg.quality[0] > 0)
            and np.all(cfg.visibility > 0)):
        out.append(ObjectiveSpec.hetero_gamma(cfg.weights, cfg.visibility, cfg.quality[0],
                                              cfg.feedback[0]))
    return out


def _interior_feedback(cfg):
    return bool(np.all((cfg.feedback > 0) & (cfg.feedback < 1)))


def check_market(cfg, checks, rng, n_points=20, grad_fn=gradient, T_ct=200,
                 rma_purchases=2000, seed=0):
    """Run every applicable check on ``cfg``, folding results into ``checks``."""
    objs = _objectives(cfg)
    for obj in objs:
        for _ in range(3):
            if obj.kind is Kind.EFFICIENCY_ENTROPY:
                x = _interior_point(rng, cfg.num_items)
            else:
                x = obj.weights[:, None] * rng.dirichlet(np.ones(cfg.num_items), cfg.num_types)
            g = grad_fn(obj, x)
            fd = _fd_gradient(obj, x)
            checks["gradient"].update(np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(fd))))

    for obj in objs:
        for _ in range(n_points):
            if obj.kind is Kind.EFFICIENCY_ENTROPY:
                phi = _interior_point(rng, cfg.num_items)
                checks["md_step_equality"].update(
                    np.max(np.abs(md_step(obj, phi) - next_purchase_probabilities(cfg, phi))))
                other = _interior_point(rng, cfg.num_items)
                rem = bregman_remainder(obj, other, phi)
                checks["bregman_psi"].update(
                    abs(rem - (1 - obj.r) * kl_divergence(other, phi)))
            else:
                x = obj.weights[:, None] * rng.dirichlet(np.ones(cfg.num_items), cfg.num_types)
                b = transformed_to_spending(x, obj.quality)
                lhs = transformed_to_spending(md_step(obj, x), obj.quality)
                checks["hetero_md_equality"].update(np.max(np.abs(lhs - deterministic_step(cfg, b))))
                y = obj.weights[:, None] * rng.dirichlet(np.ones(cfg.num_items), cfg.num_types)
                rem = bregman_remainder(obj, x, y)
                kl = kl_divergence(x, y)
                expected = kl - obj.r * kl_divergence(x.sum(axis=0), y.sum(axis=0))
                dev = abs(rem - expected)
                # the remainder is sandwiched in [0, KL] only for r in [0, 1]
                sandwich = 0.0 <= obj.r <= 1.0
                if sandwich and (rem < -TOLERANCES["bregman_gamma"] or rem > kl + TOLERANCES["bregman_gamma"]):
                    dev = max(dev, abs(rem) + kl)
                checks["bregman_gamma"].update(dev)

    interior = _interior_feedback(cfg)
    reason = None if interior else "feedback exponent outside (0, 1): no unique interior equilibrium"
    if interior:
        tome = solve_tome(cfg, tol=1e-14, max_iter=200_000)
        b = induced_spending(cfg, tome.shares)
        back = b.sum(axis=0) / b.sum()
        checks["spending_round_trip"].update(np.max(np.abs(back - tome.shares)))
        weights = expost_weights(cfg, tome)
        checks["nash_kkt"].update(nash_sw_kkt_residual(cfg, tome, weights))
        for obj in objs:
            if obj.kind is Kind.EFFICIENCY_ENTROPY:
                rep = ct_bound_check(obj, _interior_point(rng, cfg.num_items), T_ct)
                checks["ct_bound"].update(max(rep.max_violation, rep.max_gap_increase, 0.0))
    else:
        for name in ("spending_round_trip", "nash_kkt", "ct_bound"):
            if checks[name].note is None:
                checks[name].note = f"skipped on a market: {reason}"

    tr = run_stochastic(cfg, T_purchases=rma_purchases, seed=seed, record_every=1)
    checks["rma_reconstruction"].update(rma_reconstruction_defect(cfg, tr))
    return checks


def run_battery(cfg, n_random=20, seed=0, corrupt_gradient=False):
    """Checks on ``cfg`` plus ``n_random`` random markets; returns a dict report."""
    checks = {name: CheckResult(name, tol=tol) for name, tol in TOLERANCES.items()}
    grad_fn = gradient
    if corrupt_gradient:
        def grad_fn(obj, x, minimize=False):
            return gradient(obj, x, minimize) + 1e-3

    rng = np.random.default_rng(seed)
    check_market(cfg, checks, rng, grad_fn=grad_fn, seed=seed)
    for k in range(n_random):
        kind = k % 3
        if kind == 0:
            m = random_market(rng, n_types=1)
        elif kind == 1:
            m = random_market(rng, n_types=int(rng.integers(2, 4)), common_quality=True)
        else:
            m = random_market(rng)
        check_market(m, checks, rng, n_points=5, grad_fn=grad_fn, T_ct=100,
                     rma_purchases=500, seed=seed + k + 1)
    for c in checks.values():
        if c.n == 0:
            c.skipped = c.note or "not applicable to the supplied markets"
    failed = sorted(name for name, c in checks.items() if not c.passed)
    return {"passed": not failed, "failed": failed,
            "n_random_markets": int(n_random), "seed": int(seed),
            "checks": {name: c.to_dict() for name, c in checks.items()}}

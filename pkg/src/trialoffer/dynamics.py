"""Deterministic and stochastic trial-offer dynamics.

Randomness: every stochastic run owns a ``numpy.random.default_rng(seed)``
generator (PCG64 seeded through ``SeedSequence``). Runs are bit-reproducible
for a given seed, numpy version and numba version; see ``_kernels`` for the
order in which uniforms are consumed.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .exceptions import DomainError, ShapeError, ZeroColumn
from .market import (
    PurchaseLedger,
    _intensity,
    _normalize,
    _trial_matrix,
    next_purchase_probabilities,
)
from .objectives import Kind, ObjectiveSpec, evaluate, spending_to_transformed
from .validation import check_matrix, check_shares

MAX_TRIALS = 10**8


@dataclass(frozen=True)
class SimulationEvent:
    step: int
    user_type: int
    tried_item: int
    purchased: bool


@dataclass
class Trajectory:
    """Recorded states of one run.

    ``times`` counts purchases for stochastic runs and update steps for
    deterministic runs. ``rma_times`` holds the interpolation clock
    ``tau_t = sum_{s <= t} 1 / (N0 + s)`` of the stochastic process (equal to
    ``t`` for deterministic runs, whose step size is one).
    """

    times: np.ndarray
    shares: np.ndarray
    efficiency: np.ndarray
    entropy: np.ndarray
    objective: np.ndarray
    residual: np.ndarray
    rma_times: np.ndarray
    spendings: np.ndarray = None
    trials: np.ndarray = None
    events: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.size

    @property
    def final_shares(self):
        return self.shares[-1]

    def to_csv(self, path):
        n_items = self.shares.shape[1]
        header = (["t"] + [f"phi_{j + 1}" for j in range(n_items)]
                  + ["efficiency", "entropy", "objective", "residual"])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k in range(self.times.size):
                row = [str(int(self.times[k]))]
                row += [fmt(x) for x in self.shares[k]]
                row += [fmt(self.efficiency[k]), fmt(self.entropy[k]),
                        fmt(self.objective[k]), fmt(self.residual[k])]
                writer.writerow(row)

    def events_to_csv(self, path):
        if self.events is None:
            raise ValueError("run was not recorded with log_events=True")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "type", "item", "purchased"])
            for k, (i, j, b) in enumerate(self.events, start=1):
                writer.writerow([k, int(i), int(j), int(b)])

    def event_list(self):
        if self.events is None:
            return []
        return [SimulationEvent(k, int(i), int(j), bool(b))
                for k, (i, j, b) in enumerate(self.events, start=1)]


def fmt(x):
    """17 significant digits, so CSV values round-trip exactly."""
    return f"{float(x):.17g}"


# ---------------------------------------------------------------------------
# metrics along a trajectory

def _entropy_rows(shares):
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(shares > 0, -shares * np.log(np.where(shares > 0, shares, 1.0)), 0.0)
    return terms.sum(axis=1)


def objective_for(cfg):
    """Objective tracked along trajectories of ``cfg``, or None.

    Single-type markets track the efficiency-entropy objective of the
    shares; common-quality multi-type markets track the spending objective.
    """
    if cfg.is_homogeneous:
        qbar = cfg.visibility[0] * cfg.quality[0]
        if np.all(qbar > 0):
            return ObjectiveSpec.efficiency_entropy(qbar, cfg.feedback[0])
        return None
    if cfg.has_common_quality and cfg.has_common_feedback and np.all(cfg.quality[0] > 0):
        return ObjectiveSpec.hetero_gamma(cfg.weights, cfg.visibility, cfg.quality[0],
                                          cfg.feedback[0])
    return None


def induced_spending(cfg, phi):
    """Spending ``b_ij = w_i q_ij * trial_ij(phi)``; at an equilibrium this is a fixed point."""
    return cfg.weights[:, None] * cfg.quality * _trial_matrix(cfg.visibility, cfg.feedback, phi)


def tome_to_spending(cfg, phi):
    """Map an equilibrium share vector to the fixed point of the deterministic dynamic."""
    return induced_spending(cfg, check_shares(phi, cfg.num_items))


def spending_to_shares(b):
    """Share vector induced by a spending matrix: column totals, normalized."""
    b = np.asarray(b, dtype=float)
    col = b.sum(axis=0)
    total = col.sum()
    if total <= 0:
        raise ZeroColumn("spending matrix is identically zero")
    return col / total


def _objective_value(obj, cfg, phi, b=None):
    if obj is None:
        return np.nan
    if obj.kind is Kind.EFFICIENCY_ENTROPY:
        return evaluate(obj, phi)
    if b is None:
        b = induced_spending(cfg, phi)
    x = spending_to_transformed(b, obj.quality)
    if np.any(np.abs(x.sum(axis=1) - cfg.weights) > 1e-9):
        return np.nan
    return evaluate(obj, x)


def _metrics(cfg, shares, spendings=None):
    obj = objective_for(cfg)
    n = shares.shape[0]
    eff = np.empty(n)
    res = np.empty(n)
    val = np.empty(n)
    for k in range(n):
        phi = shares[k]
        y = _intensity(cfg.weights, cfg.visibility, cfg.quality, cfg.feedback, phi)
        eff[k] = y.sum()
        res[k] = np.max(np.abs(_normalize(y) - phi)) if eff[k] > 0 else np.nan
        b = None if spendings is None else spendings[k]
        val[k] = _objective_value(obj, cfg, phi, b)
    return eff, _entropy_rows(shares), val, res


# ---------------------------------------------------------------------------
# deterministic dynamic

def deterministic_step(cfg, prev):
    """One step of the deterministic spending dynamic.

    ``b_ij <- w_i q_ij v_ij b_j ** r_i / sum_k v_ik b_k ** r_i`` where ``b_j``
    is the column total of ``prev``. Only ratios of column totals matter.
    """
    b = check_matrix(prev, "spending", shape=(cfg.num_types, cfg.num_items), lo=0.0)
    col = b.sum(axis=0)
    dead = col <= 0
    if np.any(dead):
        reachable = (cfg.visibility[:, dead] > 0) & (cfg.feedback[:, None] > 0)
        if np.any(reachable):
            raise ZeroColumn(f"items {np.flatnonzero(dead).tolist()} have zero spending; prune them")
    return induced_spending(cfg, col / col.sum())


def initial_spending(cfg):
    """Uniform-trial spending ``b_ij = w_i q_ij / n_items``."""
    return cfg.weights[:, None] * cfg.quality / cfg.num_items


def run_deterministic(cfg, b0=None, T=1000, record_every=1):
    """Iterate :func:`deterministic_step` ``T`` times, recording every ``record_every`` steps."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    b = initial_spending(cfg) if b0 is None else check_matrix(
        b0, "b0", shape=(cfg.num_types, cfg.num_items), lo=0.0)
    times, spend = [0], [b]
    for t in range(1, T + 1):
        b = deterministic_step(cfg, b)
        if t % record_every == 0 or t == T:
            times.append(t)
            spend.append(b)
    spend = np.array(spend)
    shares = spend.sum(axis=1)
    shares = shares / shares.sum(axis=1, keepdims=True)
    eff, ent, val, res = _metrics(cfg, shares, spend)
    times = np.array(times, dtype=np.int64)
    return Trajectory(times, shares, eff, ent, val, res, times.astype(float),
                      spendings=spend, meta={"kind": "deterministic"})


# ---------------------------------------------------------------------------
# stochastic dynamic

def _cum_weights(cfg):
    return np.cumsum(cfg.weights)


def stochastic_step(cfg, ledger, rng):
    """One arriving user: draw a type, a tried item, and a purchase decision.

    Returns ``(event, ledger, rng)``; the ledger is a new object and ``rng``
    is advanced in place. Trial weights use purchase counts, which give the
    same logit probabilities as the shares.
    """
    if ledger.counts.size != cfg.num_items:
        raise ShapeError("ledger and market disagree on the number of items")
    counts = np.asarray(ledger.counts, dtype=np.int64)
    sig = _kernels.signal_table(cfg.visibility, cfg.feedback, counts)
    buf = np.empty(cfg.num_items)
    i, j, bought = _kernels.one_trial(rng, _cum_weights(cfg), sig, cfg.quality, buf)
    event = SimulationEvent(ledger.num_purchases + 1 if bought else ledger.num_purchases,
                            int(i), int(j), bool(bought))
    if bought:
        ledger = ledger.add_purchase(j)
    return event, ledger, rng


def rma_times(initial_total, purchase_times):
    """Interpolation clock ``tau_t = sum_{s=1..t} 1 / (N0 + s)``."""
    t = np.asarray(purchase_times, dtype=np.int64)
    if t.size == 0:
        return np.zeros(0)
    steps = 1.0 / (initial_total + np.arange(1, t.max() + 1))
    tau = np.concatenate([[0.0], np.cumsum(steps)])
    return tau[t]


def run_stochastic(cfg, d0=None, T_purchases=1000, seed=0, record_every=1,
                   log_events=False, max_trials=MAX_TRIALS):
    """Simulate arrivals until ``T_purchases`` purchases have occurred.

    The clock advances only on purchases. Records are taken every
    ``record_every`` purchases and at the end.
    """
    if T_purchases < 1:
        raise ValueError("T_purchases must be >= 1")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    ledger = PurchaseLedger.ones(cfg.num_items) if d0 is None else d0
    if not isinstance(ledger, PurchaseLedger):
        ledger = PurchaseLedger.initial(ledger)
    rng = np.random.default_rng(seed)
    counts = np.array(ledger.counts, dtype=np.int64)
    (rec_counts, rec_t, rec_trials, ev_type, ev_item, ev_buy,
     trials, status) = _kernels.run_purchases(
        rng, _cum_weights(cfg), cfg.visibility, cfg.quality, cfg.feedback, counts,
        int(T_purchases), int(record_every), int(max_trials), bool(log_events))
    if status != 0:
        raise RuntimeError(
            f"aborted after {trials} trials with {int(rec_t[-1])} purchases: "
            "purchase probability too small for this market")
    shares = rec_counts / rec_counts.sum(axis=1, keepdims=True)
    eff, ent, val, res = _metrics(cfg, shares)
    events = None
    if log_events:
        events = np.column_stack([ev_type, ev_item, ev_buy.astype(np.int64)])
    n0 = ledger.total
    return Trajectory(rec_t, shares, eff, ent, val, res, rma_times(n0, rec_t),
                      trials=rec_trials, events=events,
                      meta={"kind": "stochastic", "seed": seed, "initial_total": n0,
                            "total_trials": int(trials), "counts": rec_counts})


def sample_frozen(cfg, phi, n, rng):
    """Draw ``n`` independent arrivals at a fixed share vector.

    Returns arrays ``(types, items, purchased)``. Useful for Monte Carlo
    checks of the purchase distribution and efficiency.
    """
    phi = check_shares(phi, cfg.num_items)
    trial = _trial_matrix(cfg.visibility, cfg.feedback, phi)
    types = rng.choice(cfg.num_types, size=n, p=cfg.weights)
    cum = np.cumsum(trial, axis=1)
    u = rng.random(n)
    items = np.minimum((u[:, None] * cum[types, -1:] >= cum[types]).sum(axis=1),
                       cfg.num_items - 1)
    bought = rng.random(n) < cfg.quality[types, items]
    return types, items, bought


# ---------------------------------------------------------------------------
# Robbins-Monro bookkeeping

def rma_decomposition(prev_shares, event, ledger_total_before, p):
    """Split one purchase into drift ``p - phi`` and martingale noise ``e - p``.

    The share update satisfies ``phi_t - phi_{t-1} = (drift + noise) / (N + 1)``
    where ``N`` is the purchase total before the event.
    """
    if not event.purchased:
        raise DomainError("rma_decomposition applies to purchase events only")
    phi = np.asarray(prev_shares, dtype=float)
    p = np.asarray(p, dtype=float)
    e = np.zeros_like(phi)
    e[event.tried_item] = 1.0
    return p - phi, e - p


def rma_reconstruction_defect(cfg, trajectory):
    """Max deviation of the share increments from their drift+noise form.

    Needs a trajectory recorded with ``record_every=1``.
    """
    counts = trajectory.meta["counts"]
    if not np.all(np.diff(trajectory.times) == 1):
        raise ValueError("trajectory must be recorded at every purchase")
    totals = counts.sum(axis=1)
    shares = counts / totals[:, None]
    prev = shares[:-1]
    steps = np.diff(counts, axis=0)
    worst = 0.0
    for k in range(prev.shape[0]):
        item = int(np.argmax(steps[k]))
        event = SimulationEvent(int(trajectory.times[k + 1]), -1, item, True)
        p = next_purchase_probabilities(cfg, prev[k])
        drift, noise = rma_decomposition(prev[k], event, int(totals[k]), p)
        lhs = shares[k + 1] - prev[k]
        rhs = (drift + noise) / totals[k + 1]
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


# ---------------------------------------------------------------------------
# convergence diagnostics

@dataclass
class ConvergenceReport:
    times: np.ndarray
    distance: np.ndarray
    gap: np.ndarray
    efficiency: np.ndarray
    entropy: np.ndarray
    nonmonotone_times: list

    QUANTILES = (25, 50, 75)

    @property
    def median_distance(self):
        return self.distance[:, 1]

    @property
    def median_gap(self):
        return self.gap[:, 1]

    @property
    def gap_monotone(self):
        return not self.nonmonotone_times

    def rows(self):
        for k in range(self.times.size):
            yield [int(self.times[k]), *self.distance[k], *self.gap[k],
                   *self.efficiency[k], *self.entropy[k]]

    def header(self):
        cols = ["t"]
        for name in ("dist", "gap", "eff", "ent"):
            cols += [f"{name}_p{q}" for q in self.QUANTILES]
        return cols

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            for row in self.rows():
                writer.writerow([row[0]] + [fmt(x) for x in row[1:]])


def _optimum_value(cfg, target):
    obj = objective_for(cfg)
    if obj is None:
        return np.nan
    phi = target.shares
    if obj.kind is Kind.EFFICIENCY_ENTROPY:
        return evaluate(obj, phi)
    return evaluate(obj, spending_to_transformed(induced_spending(cfg, phi), obj.quality))


def convergence_report(trajectories, target, cfg=None):
    """Quantiles across runs of the L1 distance to ``target`` and of the objective gap.

    Trajectories must share their record times. The objective gap is the
    optimum minus the recorded objective; it is NaN when ``cfg`` is omitted
    or has no tracked objective. ``target=None`` (no equilibrium available)
    gives NaN distances and gaps.
    """
    if len(trajectories) < 2:
        raise ValueError("need at least two trajectories")
    times = trajectories[0].times
    for tr in trajectories[1:]:
        if not np.array_equal(tr.times, times):
            raise ShapeError("trajectories have different record times")
    if target is None:
        phi_star = np.full(trajectories[0].shares.shape[1], np.nan)
        best = np.nan
    else:
        phi_star = np.asarray(target.shares)
        best = np.nan if cfg is None else _optimum_value(cfg, target)
    dist = np.array([np.abs(tr.shares - phi_star).sum(axis=1) for tr in trajectories])
    gap = np.array([best - tr.objective for tr in trajectories])
    eff = np.array([tr.efficiency for tr in trajectories])
    ent = np.array([tr.entropy for tr in trajectories])
    q = ConvergenceReport.QUANTILES

    def quant(a):
        return np.percentile(a, q, axis=0).T

    gap_q = quant(gap)
    med = gap_q[:, 1]
    bad = [int(times[k + 1]) for k in range(med.size - 1)
           if np.isfinite(med[k]) and med[k + 1] > med[k]]
    return ConvergenceReport(times, quant(dist), gap_q, quant(eff), quant(ent), bad)

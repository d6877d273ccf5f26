"""Ranking experiments on preference data.

Pipeline: load a completed preference matrix with its observation mask,
group users, estimate per-group visibility (mean of observed entries) and
quality (mean of imputed entries), then simulate arrivals under a ranking
strategy that scales each item's visibility by a position-bias factor.
"""

import csv
import enum
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans

from . import _kernels
from .dynamics import fmt
from .exceptions import ParseError, RangeError, ShapeError
from .market import MarketConfig, prune_dead_items

DEFAULT_CUTOFF = 50
DEFAULT_WINDOW = 1000


class EmptyCellWarning(UserWarning):
    """An estimation cell had no entries to average and was set to zero."""


class Format(str, enum.Enum):
    DENSE = "DenseCsv"
    TRIPLET = "TripletCsv"


class RankingStrategy(str, enum.Enum):
    RANDOM = "Random"
    POPULARITY = "Popularity"
    QUALITY = "Quality"

    @property
    def code(self):
        return {"Random": _kernels.RANDOM, "Popularity": _kernels.POPULARITY,
                "Quality": _kernels.QUALITY}[self.value]


@dataclass(frozen=True, eq=False)
class PreferenceData:
    """Completed preference matrix ``gamma`` in [0, 1] and its observation mask."""

    gamma: np.ndarray
    observed_mask: np.ndarray

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float)
        m = np.array(self.observed_mask, dtype=bool)
        if g.ndim != 2 or g.size == 0:
            raise ShapeError("gamma must be a non-empty matrix")
        if m.shape != g.shape:
            raise ShapeError(f"mask shape {m.shape} differs from gamma shape {g.shape}")
        if not np.all(np.isfinite(g)) or g.min() < 0 or g.max() > 1:
            raise RangeError("preferences must lie in [0, 1]")
        empty = np.flatnonzero(~m.any(axis=1))
        if empty.size:
            raise RangeError(f"users {empty.tolist()} have no observed entries")
        g.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "observed_mask", m)

    @property
    def n_users(self):
        return self.gamma.shape[0]

    @property
    def n_items(self):
        return self.gamma.shape[1]


@dataclass(frozen=True, eq=False)
class GroupAssignment:
    group_of: np.ndarray
    M: int

    def __post_init__(self):
        g = np.asarray(self.group_of)
        if g.ndim != 1 or not np.issubdtype(g.dtype, np.integer):
            raise ShapeError("group_of must be an integer vector")
        M = int(self.M)
        if g.size and (g.min() < 0 or g.max() >= M):
            raise RangeError(f"group labels must lie in [0, {M})")
        sizes = np.bincount(g, minlength=M)
        if np.any(sizes == 0):
            raise RangeError(f"groups {np.flatnonzero(sizes == 0).tolist()} are empty")
        g = g.astype(np.int64)
        g.setflags(write=False)
        object.__setattr__(self, "group_of", g)
        object.__setattr__(self, "M", M)

    @property
    def sizes(self):
        return np.bincount(self.group_of, minlength=self.M)

    @property
    def weights(self):
        return self.sizes / self.group_of.size

    @classmethod
    def single(cls, n_users):
        return cls(np.zeros(n_users, dtype=np.int64), 1)


@dataclass(frozen=True, eq=False)
class PositionWeights:
    """Nonincreasing position-bias weights, positive on the first ``cutoff`` positions."""

    iota: np.ndarray

    def __post_init__(self):
        iota = np.array(self.iota, dtype=float)
        if iota.ndim != 1 or iota.size == 0:
            raise ShapeError("iota must be a non-empty vector")
        if np.any(iota < 0) or not np.all(np.isfinite(iota)):
            raise RangeError("position weights must be finite and >= 0")
        if np.any(np.diff(iota) > 0):
            raise RangeError("position weights must be nonincreasing")
        if iota[0] <= 0:
            raise RangeError("the top position must have positive weight")
        iota.setflags(write=False)
        object.__setattr__(self, "iota", iota)

    @property
    def cutoff(self):
        return int(np.count_nonzero(self.iota))

    @classmethod
    def reciprocal(cls, n_items, cutoff=DEFAULT_CUTOFF):
        """``iota_k = 1 / k`` for ``k <= cutoff``, zero beyond."""
        k = np.arange(1, n_items + 1, dtype=float)
        return cls(np.where(k <= cutoff, 1.0 / k, 0.0))

    @classmethod
    def from_file(cls, path, n_items=None):
        """One weight per line; padded with zeros (or truncated) to ``n_items``."""
        vals = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                try:
                    vals.append(float(line))
                except ValueError:
                    raise ParseError(f"not a number: {line!r}", row=lineno) from None
        iota = np.array(vals)
        if n_items is not None:
            iota = np.concatenate([iota, np.zeros(max(0, n_items - iota.size))])[:n_items]
        return cls(iota)

    def resize(self, n_items):
        iota = np.concatenate([self.iota, np.zeros(max(0, n_items - self.iota.size))])
        return PositionWeights(iota[:n_items])


# ---------------------------------------------------------------------------
# ingestion

def _read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [r for r in rows if any(c.strip() for c in r)]


def _to_float(text, row, column):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", row=row, column=column) from None


def _minmax(values):
    lo, hi = np.min(values), np.max(values)
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def _load_triplets(path):
    rows = _read_rows(path)
    if not rows:
        raise ParseError("empty file", row=1)
    header = [h.strip().lower() for h in rows[0]]
    for col in ("user", "item", "value"):
        if col not in header:
            raise ParseError(f"missing column {col!r}", row=1)
    iu, ii, iv = header.index("user"), header.index("item"), header.index("value")
    io = header.index("observed") if "observed" in header else None
    users, items, values, observed = [], [], [], []
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", row=n)
        users.append(row[iu].strip())
        items.append(row[ii].strip())
        values.append(_to_float(row[iv], n, "value"))
        if io is None:
            observed.append(True)
        else:
            flag = row[io].strip().lower()
            if flag not in ("0", "1", "true", "false"):
                raise ParseError(f"observed flag must be 0/1, got {flag!r}", row=n, column="observed")
            observed.append(flag in ("1", "true"))
    return users, items, np.array(values), np.array(observed, dtype=bool)


def _label_index(labels):
    """Sorted unique labels; numeric labels sort numerically."""
    uniq = set(labels)
    try:
        order = sorted(uniq, key=lambda s: (float(s), s))
    except ValueError:
        order = sorted(uniq)
    pos = {lab: k for k, lab in enumerate(order)}
    return order, np.array([pos[lab] for lab in labels], dtype=np.int64)


def _load_dense(path):
    rows = _read_rows(path)
    out = []
    width = None
    for n, row in enumerate(rows, start=1):
        vals = [_to_float(c, n, k + 1) for k, c in enumerate(row)]
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise ParseError(f"expected {width} fields, got {len(vals)}", row=n)
        out.append(vals)
    if not out:
        raise ParseError("empty file", row=1)
    return np.array(out)


def load_preferences(path, format=Format.TRIPLET, mask_path=None, normalize=False):
    """Read a completed preference matrix.

    ``TripletCsv``: header ``user,item,value`` plus an optional ``observed``
    column (0/1, default 1). Cells absent from the file are unobserved with
    value 0. ``DenseCsv``: a headerless numeric matrix; the 0/1 mask must be
    given in a companion file ``mask_path``. With ``normalize`` the values are
    min-max scaled to [0, 1].
    """
    fmt_ = Format(format)
    if fmt_ is Format.TRIPLET:
        users, items, values, observed = _load_triplets(path)
        if normalize:
            values = _minmax(values)
        _, ui = _label_index(users)
        _, ii = _label_index(items)
        shape = (ui.max() + 1, ii.max() + 1)
        gamma = np.zeros(shape)
        mask = np.zeros(shape, dtype=bool)
        seen = np.zeros(shape, dtype=bool)
        for n, (u, i) in enumerate(zip(ui, ii), start=2):
            if seen[u, i]:
                raise ParseError(f"duplicate entry for user {users[n - 2]!r}, item {items[n - 2]!r}", row=n)
            seen[u, i] = True
        gamma[ui, ii] = values
        mask[ui, ii] = observed
        missing = int((~seen).sum())
        if missing:
            warnings.warn(f"{missing} cells absent from {path}; treated as unobserved with value 0",
                          EmptyCellWarning, stacklevel=2)
    else:
        if mask_path is None:
            raise ParseError("dense preference files need a companion mask file (mask_path)")
        gamma = _load_dense(path)
        mask_vals = _load_dense(mask_path)
        if mask_vals.shape != gamma.shape:
            raise ShapeError(f"mask shape {mask_vals.shape} differs from matrix shape {gamma.shape}")
        if not np.all(np.isin(mask_vals, (0.0, 1.0))):
            raise ParseError("mask entries must be 0 or 1")
        mask = mask_vals.astype(bool)
        if normalize:
            gamma = _minmax(gamma)
    if gamma.min() < 0 or gamma.max() > 1:
        bad = np.argwhere((gamma < 0) | (gamma > 1))[0]
        raise RangeError(f"value {gamma[tuple(bad)]!r} at user {bad[0]}, item {bad[1]} "
                         "outside [0, 1]; pass normalize=True to rescale")
    return PreferenceData(gamma, mask)


def load_groups(path, n_users=None):
    """Read a ``user,group`` CSV with 0-based integer users and groups."""
    rows = _read_rows(path)
    if not rows or [h.strip().lower() for h in rows[0][:2]] != ["user", "group"]:
        raise ParseError("expected header 'user,group'", row=1)
    pairs = {}
    for n, row in enumerate(rows[1:], start=2):
        if len(row) < 2:
            raise ParseError("expected 2 fields", row=n)
        u = _to_float(row[0], n, "user")
        g = _to_float(row[1], n, "group")
        if u != int(u) or g != int(g) or u < 0 or g < 0:
            raise ParseError("user and group must be nonnegative integers", row=n)
        pairs[int(u)] = int(g)
    size = max(pairs) + 1 if n_users is None else n_users
    if set(pairs) != set(range(size)):
        raise ParseError(f"group file must list every user 0..{size - 1} exactly once")
    group_of = np.array([pairs[u] for u in range(size)], dtype=np.int64)
    _, relabeled = np.unique(group_of, return_inverse=True)
    return GroupAssignment(relabeled, int(relabeled.max()) + 1)


def save_groups(groups, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "group"])
        for u, g in enumerate(groups.group_of):
            writer.writerow([u, int(g)])


# ---------------------------------------------------------------------------
# estimation

def _group_means(data, groups, select, what):
    if groups.group_of.size != data.n_users:
        raise ShapeError("group assignment and data disagree on the number of users")
    onehot = np.zeros((groups.M, data.n_users))
    onehot[groups.group_of, np.arange(data.n_users)] = 1.0
    sel = select.astype(float)
    total = onehot @ (data.gamma * sel)
    count = onehot @ sel
    empty = count == 0
    if np.any(empty):
        warnings.warn(f"{int(empty.sum())} {what} cells have no entries; set to 0",
                      EmptyCellWarning, stacklevel=3)
    return np.where(empty, 0.0, total / np.where(empty, 1.0, count))


def estimate_visibility(data, groups):
    """Per-group mean of the observed preferences, shape (M, n_items)."""
    return _group_means(data, groups, data.observed_mask, "visibility")


def estimate_quality(data, groups):
    """Per-group mean of the imputed (unobserved) preferences, shape (M, n_items)."""
    return _group_means(data, groups, ~data.observed_mask, "quality")


def cluster_users(data, M, seed=0, assignment_path=None):
    """K-means (Lloyd) on the preference rows, or a precomputed assignment.

    Deterministic given ``seed``. Empty clusters are reseeded by scikit-learn
    with the points farthest from their centers.
    """
    if assignment_path is not None:
        return load_groups(assignment_path, data.n_users)
    if not 1 <= M <= data.n_users:
        raise ValueError(f"M must lie in [1, {data.n_users}]")
    if M == 1:
        return GroupAssignment.single(data.n_users)
    if M == data.n_users:
        return GroupAssignment(np.arange(M), M)
    km = KMeans(n_clusters=M, algorithm="lloyd", n_init=10, random_state=seed)
    labels = km.fit_predict(data.gamma)
    # relabel by first appearance so group ids do not depend on center order
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    relabel = np.empty(M, dtype=np.int64)
    relabel[labels[first[order]]] = np.arange(order.size)
    labels = relabel[labels]
    if np.unique(labels).size < M:
        raise RuntimeError("k-means returned empty clusters")
    return GroupAssignment(labels, M)


# ---------------------------------------------------------------------------
# ranking

def ranking_factors(strategy, iota, phi=None, quality_row=None, rng=None):
    """Position factor ``eta_j = iota[position of j]`` for one arriving user.

    ``Random`` needs ``rng`` (one fresh permutation per call), ``Popularity``
    ranks by descending ``phi`` and ``Quality`` by descending ``quality_row``;
    ties go to the lower item index.
    """
    strategy = RankingStrategy(strategy)
    iota = iota.iota if isinstance(iota, PositionWeights) else np.asarray(iota, dtype=float)
    if strategy is RankingStrategy.RANDOM:
        if rng is None:
            raise ValueError("Random ranking needs an rng")
        n = iota.size if phi is None else np.asarray(phi).size
        pos = np.empty(n, dtype=np.int64)
        _kernels.random_positions(rng, pos)
    elif strategy is RankingStrategy.POPULARITY:
        pos = _kernels.descending_positions(np.asarray(phi, dtype=float))
    else:
        pos = _kernels.descending_positions(np.asarray(quality_row, dtype=float))
    if iota.size < pos.size:
        raise ShapeError("iota is shorter than the item list")
    return iota[pos]


@dataclass
class RankingTrajectory:
    """Record of a ranked simulation on the arrival clock."""

    times: np.ndarray
    counts: np.ndarray
    purchases: np.ndarray
    window_efficiency: np.ndarray
    seed: int = None
    keep: np.ndarray = None

    @property
    def shares(self):
        return self.counts / self.counts.sum(axis=1, keepdims=True)

    @property
    def efficiency(self):
        """Cumulative purchases over cumulative arrivals (NaN at t = 0)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.times > 0, self.purchases / np.maximum(self.times, 1), np.nan)

    @property
    def entropy(self):
        s = self.shares
        with np.errstate(divide="ignore", invalid="ignore"):
            return -np.where(s > 0, s * np.log(np.where(s > 0, s, 1.0)), 0.0).sum(axis=1)

    def to_csv(self, path, n_items=None):
        shares = self.shares
        if self.keep is not None:
            full = np.zeros((shares.shape[0], self.keep.size))
            full[:, self.keep] = shares
            shares = full
        header = (["t", "purchases", "efficiency", "window_efficiency", "entropy"]
                  + [f"phi_{j + 1}" for j in range(shares.shape[1])])
        eff, ent = self.efficiency, self.entropy
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k in range(self.times.size):
                writer.writerow([int(self.times[k]), int(self.purchases[k]), fmt(eff[k]),
                                 fmt(self.window_efficiency[k]), fmt(ent[k])]
                                + [fmt(x) for x in shares[k]])


def simulate_ranking(cfg, strategy, iota, T, seed, record_every=1, d0=None,
                     window=DEFAULT_WINDOW, allowed=None):
    """Simulate ``T`` arrivals with visibility scaled by ranking position.

    ``strategy=None`` disables ranking (every factor is one), which reproduces
    the plain trial-offer process on the arrival clock.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if record_every < 1 or window < 1:
        raise ValueError("record_every and window must be >= 1")
    n = cfg.num_items
    if strategy is None:
        code = _kernels.FIXED
        iota_arr = np.ones(n)
    else:
        code = RankingStrategy(strategy).code
        pw = iota if isinstance(iota, PositionWeights) else PositionWeights(iota)
        iota_arr = np.ascontiguousarray(pw.resize(n).iota)
    counts = np.ones(n, dtype=np.int64) if d0 is None else np.array(d0, dtype=np.int64)
    if counts.shape != (n,) or np.any(counts < 1):
        raise RangeError("initial counts must be >= 1 for every item")
    q_pos = np.empty(cfg.quality.shape, dtype=np.int64)
    for i in range(cfg.num_types):
        q_pos[i] = _kernels.descending_positions(np.ascontiguousarray(cfg.quality[i]))
    allowed = np.ones(cfg.visibility.shape) if allowed is None else np.asarray(allowed, dtype=float)
    rng = np.random.default_rng(seed)
    rec_counts, rec_t, rec_buys, rec_win = _kernels.run_ranked(
        rng, np.cumsum(cfg.weights), cfg.visibility, cfg.quality, cfg.feedback, counts,
        int(T), int(record_every), int(window), code, iota_arr, q_pos, allowed)
    return RankingTrajectory(rec_t, rec_counts, rec_buys, rec_win, seed=seed)


def build_market(data, groups, r, unseen_only=False):
    """Estimated market and the mask of items kept after pruning.

    With ``unseen_only`` a group cannot try items all of its members have
    already rated.
    """
    v = estimate_visibility(data, groups)
    q = estimate_quality(data, groups)
    if unseen_only:
        unseen = _unseen_cells(data, groups)
        v = np.where(unseen, v, 0.0)
    keep = prune_dead_items(v, q)
    if not keep.any():
        raise RangeError("no item has positive visibility and quality for any group")
    M = groups.M
    cfg = MarketConfig(groups.weights, v[:, keep], q[:, keep], np.full(M, float(r)))
    return cfg, keep


def _unseen_cells(data, groups):
    onehot = np.zeros((groups.M, data.n_users))
    onehot[groups.group_of, np.arange(data.n_users)] = 1.0
    return (onehot @ (~data.observed_mask).astype(float)) > 0


def reachable_items(cfg):
    """Items some group can both try and buy."""
    return np.any((cfg.visibility > 0) & (cfg.quality > 0), axis=0)


@dataclass
class ExperimentResult:
    strategy: str
    trajectories: list
    cfg: MarketConfig
    keep: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def times(self):
        return self.trajectories[0].times

    def quantiles(self, q=(25, 50, 75)):
        """Percentiles across seeds of cumulative efficiency and entropy per record time."""
        eff = np.array([tr.efficiency for tr in self.trajectories])
        ent = np.array([tr.entropy for tr in self.trajectories])
        return np.percentile(eff, q, axis=0).T, np.percentile(ent, q, axis=0).T

    def aggregate_rows(self, label=None):
        label = self.strategy if label is None else label
        eff, ent = self.quantiles()
        for k, t in enumerate(self.times):
            if t == 0:
                continue
            yield [int(t), label] + [fmt(x) for x in eff[k]] + [fmt(x) for x in ent[k]]


AGGREGATE_HEADER = ["t", "strategy", "eff_p25", "eff_p50", "eff_p75",
                    "ent_p25", "ent_p50", "ent_p75"]


def write_aggregate(results, path, labels=None):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_HEADER)
        for n, res in enumerate(results):
            label = None if labels is None else labels[n]
            writer.writerows(res.aggregate_rows(label))


def run_experiment(data, groups, strategy, iota=None, r=0.5, T=10000, seeds=(0,),
                   record_every=100, unseen_only=False, jobs=1, window=DEFAULT_WINDOW):
    """Run one ranking strategy over several seeds on the estimated market."""
    if not 0 <= r < 1:
        raise RangeError("feedback exponent must lie in [0, 1)")
    if T < 1:
        raise ValueError("T must be >= 1")
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    cfg, keep = build_market(data, groups, r, unseen_only)
    if iota is None:
        iota = PositionWeights.reciprocal(cfg.num_items)
    strategy = RankingStrategy(strategy)

    def one(seed):
        tr = simulate_ranking(cfg, strategy, iota, T, seed, record_every, window=window)
        tr.keep = keep
        return tr

    if jobs > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            trajs = list(pool.map(one, seeds))
    else:
        trajs = [one(s) for s in seeds]
    meta = {"r": float(r), "M": groups.M, "T": int(T), "seeds": seeds,
            "n_items": int(keep.sum()), "n_pruned": int((~keep).sum()),
            "cutoff": (iota if isinstance(iota, PositionWeights) else PositionWeights(iota)).cutoff,
            "unseen_only": bool(unseen_only)}
    return ExperimentResult(strategy.value, trajs, cfg, keep, meta)


def fixture_path(name):
    """Path of a data file shipped with the package, e.g. ``"synthetic_2x20.csv"``."""
    from importlib.resources import files

    return files("trialoffer") / "data" / name

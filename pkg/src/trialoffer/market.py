"""Market parameterization, logit choice probabilities and market metrics.

Every function here is a pure function of its inputs. Matrices are stored
row-major by user type: ``visibility[i, j]`` is the visibility of item ``j``
to users of type ``i``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import entr

from .exceptions import RangeError, ShapeError, ZeroIntensity
from .validation import check_matrix, check_shares, check_vector

WEIGHT_ATOL = 1e-12
RENORM_ATOL = 1e-9


@dataclass(frozen=True, eq=False)
class MarketConfig:
    """Parameters of a trial-offer market with ``num_types`` user types.

    Parameters
    ----------
    weights : array of shape (n_types,)
        Population fraction of each user type; must sum to one.
    visibility : array of shape (n_types, n_items)
        Nonnegative appeal/visibility factors.
    quality : array of shape (n_types, n_items)
        Purchase probabilities after a trial, in [0, 1].
    feedback : array of shape (n_types,)
        Nonnegative feedback exponents.

    Every item must have ``visibility * quality > 0`` for at least one type;
    use :func:`prune_dead_items` to drop items that do not.
    """

    weights: np.ndarray
    visibility: np.ndarray
    quality: np.ndarray
    feedback: np.ndarray

    def __post_init__(self):
        v = check_matrix(self.visibility, "visibility", lo=0.0)
        n_types, n_items = v.shape
        q = check_matrix(self.quality, "quality", shape=v.shape, lo=0.0, hi=1.0)
        w = check_vector(self.weights, "weights", length=n_types)
        r = check_vector(self.feedback, "feedback", length=n_types, nonneg=True)
        if np.any(w <= 0) or np.any(w > 1):
            raise RangeError("weights must lie in (0, 1]")
        if abs(w.sum() - 1.0) > WEIGHT_ATOL:
            raise RangeError(f"weights must sum to 1 (got {w.sum()!r})")
        dead = ~np.any(v * q > 0, axis=0)
        if np.any(dead):
            raise RangeError(
                "items %s have visibility*quality == 0 for every type; prune them"
                % np.flatnonzero(dead).tolist())
        for name, arr in (("weights", w), ("visibility", v), ("quality", q), ("feedback", r)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def homogeneous(cls, visibility, quality, feedback):
        """Single user type market."""
        v = np.atleast_2d(np.asarray(visibility, dtype=float))
        q = np.atleast_2d(np.asarray(quality, dtype=float))
        return cls(np.ones(1), v, q, np.array([float(feedback)]))

    @property
    def num_types(self):
        return self.visibility.shape[0]

    @property
    def num_items(self):
        return self.visibility.shape[1]

    @property
    def is_homogeneous(self):
        return self.num_types == 1

    @property
    def has_common_quality(self):
        return bool(np.all(self.quality == self.quality[0]))

    @property
    def has_common_visibility(self):
        return bool(np.all(self.visibility == self.visibility[0]))

    @property
    def has_common_feedback(self):
        return bool(np.all(self.feedback == self.feedback[0]))

    def __repr__(self):
        return (f"MarketConfig(num_types={self.num_types}, num_items={self.num_items}, "
                f"feedback={self.feedback.tolist()})")


@dataclass(frozen=True, eq=False)
class PurchaseLedger:
    """Purchase counts per item; the market share is ``counts / counts.sum()``."""

    counts: np.ndarray
    initial_total: int

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size == 0:
            raise ShapeError("counts must be a non-empty vector")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(counts == np.round(counts)):
                raise RangeError("counts must be integers")
        counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise RangeError("counts must be nonnegative")
        if int(self.initial_total) < 1:
            raise RangeError("initial_total must be positive")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "initial_total", int(self.initial_total))

    @classmethod
    def initial(cls, counts):
        """Starting ledger; every item must have been purchased at least once."""
        counts = np.asarray(counts, dtype=np.int64)
        if np.any(counts < 1):
            raise RangeError("initial purchase counts must all be >= 1")
        return cls(counts, int(counts.sum()))

    @classmethod
    def ones(cls, n_items):
        return cls.initial(np.ones(n_items, dtype=np.int64))

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def num_purchases(self):
        return self.total - self.initial_total

    @property
    def shares(self):
        return self.counts / self.counts.sum()

    def add_purchase(self, item):
        counts = self.counts.copy()
        counts[item] += 1
        return PurchaseLedger(counts, self.initial_total)


def social_signal(phi, r):
    """Elementwise ``phi ** r`` with ``0 ** r = 0`` for r > 0 and ``0 ** 0 = 1``.

    ``r`` may be a scalar or a vector of per-type exponents, in which case
    the result has shape (n_types, n_items).
    """
    phi = np.asarray(phi, dtype=float)
    r = np.asarray(r, dtype=float)
    pos = phi > 0
    logphi = np.log(np.where(pos, phi, 1.0))
    if r.ndim == 0:
        out = np.exp(r * logphi)
        return np.where(pos, out, 1.0 if r == 0 else 0.0)
    out = np.exp(r[:, None] * logphi[None, :])
    zero_val = np.where(r == 0, 1.0, 0.0)[:, None]
    return np.where(pos[None, :], out, zero_val)


def _trial_matrix(visibility, feedback, phi):
    num = visibility * social_signal(phi, feedback)
    den = num.sum(axis=1, keepdims=True)
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, num / safe, 0.0)


def _intensity(weights, visibility, quality, feedback, phi):
    return (weights[:, None] * quality * _trial_matrix(visibility, feedback, phi)).sum(axis=0)


def _normalize(y):
    total = y.sum()
    if total <= 0:
        raise ZeroIntensity("total purchase intensity is zero at this market share")
    p = y / total
    dev = abs(p.sum() - 1.0)
    if dev > RENORM_ATOL:
        raise ArithmeticError(f"normalization failed (deviation {dev:g})")
    return p


def trial_matrix(cfg, phi):
    """Trial probabilities for every user type, shape (n_types, n_items)."""
    phi = check_shares(phi, cfg.num_items)
    return _trial_matrix(cfg.visibility, cfg.feedback, phi)


def trial_probabilities(cfg, type_index, phi):
    """Multinomial-logit trial distribution of one user type.

    Returns the all-zero vector when no item has positive weight.
    """
    if not 0 <= type_index < cfg.num_types:
        raise IndexError(f"type_index {type_index} out of range")
    phi = check_shares(phi, cfg.num_items)
    row = slice(type_index, type_index + 1)
    return _trial_matrix(cfg.visibility[row], cfg.feedback[row], phi)[0]


def purchase_intensity(cfg, phi):
    """Probability that each item is tried and then bought by the next arrival."""
    phi = check_shares(phi, cfg.num_items)
    return _intensity(cfg.weights, cfg.visibility, cfg.quality, cfg.feedback, phi)


def next_purchase_probabilities(cfg, phi):
    """Distribution of the next purchased item, ``p(phi)``.

    Raises
    ------
    ZeroIntensity
        If no item can be purchased at ``phi``.
    """
    return _normalize(purchase_intensity(cfg, phi))


def market_efficiency(cfg, phi):
    """Probability that the next arriving user makes a purchase."""
    return float(purchase_intensity(cfg, phi).sum())


def share_entropy(phi):
    """Shannon entropy of a share vector in nats, with ``0 log 0 = 0``."""
    phi = check_shares(phi)
    return float(entr(phi).sum())


def prune_dead_items(visibility, quality):
    """Boolean mask of items with ``visibility * quality > 0`` for some type."""
    v = np.atleast_2d(np.asarray(visibility, dtype=float))
    q = np.atleast_2d(np.asarray(quality, dtype=float))
    return np.any(v * q > 0, axis=0)


def embed_shares(shares, keep, n_items=None):
    """Place shares of a pruned market back into the full item index, zeros elsewhere."""
    keep = np.asarray(keep, dtype=bool)
    out = np.zeros(keep.size if n_items is None else n_items)
    out[keep] = shares
    return out

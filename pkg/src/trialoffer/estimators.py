"""scikit-learn style wrappers around the functional API."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dynamics import run_stochastic
from .equilibrium import DEFAULT_DAMPING, DEFAULT_MAX_ITER, DEFAULT_TOL, solve_tome
from .experiments import (
    GroupAssignment,
    PreferenceData,
    build_market,
    cluster_users,
    estimate_quality,
    estimate_visibility,
)
from .market import MarketConfig


def _as_market(cfg):
    if not isinstance(cfg, MarketConfig):
        raise TypeError(f"expected a MarketConfig, got {type(cfg).__name__}")
    return cfg


class TomeSolver(BaseEstimator):
    """Equilibrium solver. ``fit(cfg)`` sets ``shares_``, ``residual_``, ``method_``, ``n_iter_``."""

    def __init__(self, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, damping=DEFAULT_DAMPING):
        self.tol = tol
        self.max_iter = max_iter
        self.damping = damping

    def fit(self, cfg, y=None):
        res = solve_tome(_as_market(cfg), tol=self.tol, max_iter=self.max_iter,
                         damping=self.damping)
        self.result_ = res
        self.shares_ = res.shares
        self.residual_ = res.residual
        self.method_ = res.method
        self.n_iter_ = res.iterations
        return self

    def predict(self, cfg=None):
        check_is_fitted(self, "shares_")
        return self.shares_.copy()


class TrialOfferSimulator(BaseEstimator):
    """Purchase-clock simulation; ``fit(cfg)`` stores ``trajectory_`` and final ``shares_``."""

    def __init__(self, T_purchases=1000, seed=0, record_every=1, log_events=False):
        self.T_purchases = T_purchases
        self.seed = seed
        self.record_every = record_every
        self.log_events = log_events

    def fit(self, cfg, y=None, d0=None):
        tr = run_stochastic(_as_market(cfg), d0, self.T_purchases, self.seed,
                            self.record_every, self.log_events)
        self.trajectory_ = tr
        self.shares_ = tr.final_shares
        self.n_trials_ = tr.meta["total_trials"]
        return self


class MarketEstimator(TransformerMixin, BaseEstimator):
    """Estimate a grouped market from a preference matrix.

    ``fit(X, observed_mask=...)`` clusters the rows of ``X`` into
    ``n_groups`` groups and estimates per-group visibility and quality.
    ``transform`` returns squared distances of new users to the group mean
    preference rows, and ``predict`` the nearest group.
    """

    def __init__(self, n_groups=1, feedback=0.5, seed=0, unseen_only=False):
        self.n_groups = n_groups
        self.feedback = feedback
        self.seed = seed
        self.unseen_only = unseen_only

    def fit(self, X, y=None, observed_mask=None, groups=None):
        X = check_array(X, dtype=float)
        if observed_mask is None:
            raise ValueError("observed_mask is required")
        data = PreferenceData(X, observed_mask)
        if groups is None:
            groups = cluster_users(data, self.n_groups, seed=self.seed)
        elif not isinstance(groups, GroupAssignment):
            labels = np.asarray(groups, dtype=np.int64)
            groups = GroupAssignment(labels, int(labels.max()) + 1)
        self.labels_ = groups.group_of.copy()
        self.weights_ = groups.weights
        self.visibility_ = estimate_visibility(data, groups)
        self.quality_ = estimate_quality(data, groups)
        onehot = np.zeros((groups.M, data.n_users))
        onehot[groups.group_of, np.arange(data.n_users)] = 1.0
        self.group_means_ = (onehot @ data.gamma) / groups.sizes[:, None]
        self.market_, self.keep_ = build_market(data, groups, self.feedback, self.unseen_only)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "group_means_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} items, expected {self.n_features_in_}")
        diff = X[:, None, :] - self.group_means_[None, :, :]
        return np.einsum("ukj,ukj->uk", diff, diff)

    def predict(self, X):
        return np.argmin(self.transform(X), axis=1)

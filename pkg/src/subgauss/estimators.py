"""scikit-learn style estimators wrapping the sweep-and-select pipeline.

These are thin adapters: `fit` runs the bandwidth sweep (or the benchmark
EM), keeps the per-level records on the instance, and exposes the selected
model through the usual predict/predict_proba/transform surface so the
method composes with sklearn pipelines and model selection tools.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import cgmm, mda
from .dataset import LabeledDataset, class_stats, feature_sigma_hat
from .pipeline import sweep_fit
from .subspace import Subspace, _orth, discriminant_subspace

__all__ = [
    "ConstrainedGMMClassifier",
    "ConstrainedGMMClusterer",
    "ReducedRankMDAClassifier",
    "ReducedRankMDAClusterer",
    "ProjectedMDAClassifier",
]


def _encode_labels(y):
    classes = np.unique(y)
    if classes.shape[0] < 2:
        raise ValueError("need at least two classes")
    return classes, np.searchsorted(classes, y) + 1


def _grid(X, lo, hi, count):
    sigma_hat = feature_sigma_hat(X)
    if sigma_hat <= 0:
        raise ValueError("features have zero spread; no bandwidth grid possible")
    return np.linspace(lo * sigma_hat, hi * sigma_hat, count)


class _SweepParams:
    """Shared constructor surface for the sweep-based estimators."""

    def __init__(self, subspace_method="mpca", subspace_dim=2, cov_flavor="full",
                 gamma=60.0, bandwidth_lo=0.1, bandwidth_hi=2.0, n_bandwidths=20,
                 inner_cm=3, max_outer=500, tol=1e-6, n_init=1, random_state=0,
                 n_jobs=1):
        self.subspace_method = subspace_method
        self.subspace_dim = subspace_dim
        self.cov_flavor = cov_flavor
        self.gamma = gamma
        self.bandwidth_lo = bandwidth_lo
        self.bandwidth_hi = bandwidth_hi
        self.n_bandwidths = n_bandwidths
        self.inner_cm = inner_cm
        self.max_outer = max_outer
        self.tol = tol
        self.n_init = n_init
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _sweep(self, ds, n_components, flavor=cgmm.SHARED, center_ladder=False):
        sigmas = _grid(ds.X, self.bandwidth_lo, self.bandwidth_hi, self.n_bandwidths)
        return sweep_fit(
            ds, subspace_method=self.subspace_method, d=self.subspace_dim,
            n_components=n_components, flavor=flavor, cov_flavor=self.cov_flavor,
            gamma=self.gamma, sigmas=sigmas, center_ladder=center_ladder,
            seed=self.random_state, inner_cm=self.inner_cm,
            max_outer=self.max_outer, tol=self.tol, n_init=self.n_init,
            n_jobs=self.n_jobs)


class ConstrainedGMMClassifier(ClassifierMixin, TransformerMixin, _SweepParams,
                               BaseEstimator):
    """Mixture classifier whose component means live in a learned subspace.

    ``fit`` sweeps the bandwidth ladder, fits the constrained mixture under
    each candidate subspace and keeps the model with the highest training
    log-likelihood. ``transform`` projects onto the fitted discriminant
    basis, the only directions that matter for the class posterior, which
    makes the estimator usable as a supervised dimension reducer.

    Parameters mirror the pipeline configuration; ``per_class_shift`` ties
    each class's component means to its own parallel copy of the subspace
    (the ladder is then built on class-centered data). A pre-chosen
    ``user_subspace`` skips the sweep entirely.
    """

    def __init__(self, subspace_method="mpca", subspace_dim=2, n_components=3,
                 per_class_shift=False, cov_flavor="full", gamma=60.0,
                 bandwidth_lo=0.1, bandwidth_hi=2.0, n_bandwidths=20,
                 inner_cm=3, max_outer=500, tol=1e-6, n_init=1, random_state=0,
                 n_jobs=1, user_subspace=None):
        super().__init__(subspace_method, subspace_dim, cov_flavor, gamma,
                         bandwidth_lo, bandwidth_hi, n_bandwidths, inner_cm,
                         max_outer, tol, n_init, random_state, n_jobs)
        self.n_components = n_components
        self.per_class_shift = per_class_shift
        self.user_subspace = user_subspace

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, encoded = _encode_labels(y)
        ds = LabeledDataset(X, encoded, len(self.classes_))
        flavor = cgmm.PER_CLASS if self.per_class_shift else cgmm.SHARED
        if self.user_subspace is not None:
            sub = self.user_subspace
            if not isinstance(sub, Subspace):
                sub = Subspace(np.asarray(sub), _null_complement(np.asarray(sub)))
            model, trace = cgmm.gem_fit(
                ds, sub, self.n_components, flavor=flavor,
                cov_flavor=self.cov_flavor, seed=self.random_state,
                max_outer=self.max_outer, inner_cm=self.inner_cm, tol=self.tol)
            self.levels_ = []
            self.selected_level_ = None
        else:
            levels, best = self._sweep(ds, self.n_components, flavor,
                                       center_ladder=self.per_class_shift)
            self.levels_ = levels
            self.selected_level_ = levels[best].level
            model = levels[best].model
        self.model_ = model
        self.subspace_ = model.subspace
        self.train_log_likelihood_ = model.fit_trace[-1]
        self.discriminant_basis_ = _informative_basis(model, ds)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        labels, _ = cgmm.classify(self.model_, X)
        return self.classes_[labels - 1]

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        return cgmm.classify(self.model_, X)[1]

    def transform(self, X):
        check_is_fitted(self, "discriminant_basis_")
        X = check_array(X)
        return X @ self.discriminant_basis_


def _null_complement(v_constrained: np.ndarray) -> np.ndarray:
    """Orthonormal complement of a (p, d) orthonormal basis."""
    p, d = v_constrained.shape
    U, _, _ = np.linalg.svd(v_constrained, full_matrices=True)
    return U[:, d:] if d < p else np.zeros((p, 0))


def _informative_basis(model: cgmm.ConstrainedGmm, ds: LabeledDataset) -> np.ndarray:
    """Directions the class posterior depends on, as an orthonormal basis.

    Shared flavor: the discriminant subspace of the constrained basis. The
    per-class flavor adds the class-mean offsets, giving up to d + K - 1
    directions.
    """
    if model.flavor == cgmm.SHARED or model.K == 1:
        return discriminant_subspace(model.subspace, model.covariance)
    stats = class_stats(ds)
    offsets = (stats.means[1:] - stats.means[0]).T
    stacked = np.hstack([model.subspace.v_constrained, offsets])
    mapped = np.linalg.solve(model.covariance, stacked)
    return _orth(mapped)


class ConstrainedGMMClusterer(ClusterMixin, _SweepParams, BaseEstimator):
    """One-class constrained mixture for clustering.

    ``fit`` selects the bandwidth level by training log-likelihood and
    stores hard component assignments (1-based) in ``labels_``.
    """

    def __init__(self, n_clusters=5, subspace_dim=2, cov_flavor="full",
                 bandwidth_lo=0.1, bandwidth_hi=2.0, n_bandwidths=20,
                 inner_cm=3, max_outer=500, tol=1e-6, n_init=10, random_state=0,
                 n_jobs=1):
        super().__init__("mpca", subspace_dim, cov_flavor, 60.0, bandwidth_lo,
                         bandwidth_hi, n_bandwidths, inner_cm, max_outer, tol,
                         n_init, random_state, n_jobs)
        self.n_clusters = n_clusters

    def fit(self, X, y=None):
        X = check_array(X)
        ds = LabeledDataset(X)
        levels, best = self._sweep(ds, self.n_clusters)
        self.levels_ = levels
        self.selected_level_ = levels[best].level
        self.model_ = levels[best].model
        self.subspace_ = self.model_.subspace
        self.train_log_likelihood_ = self.model_.fit_trace[-1]
        self.discriminant_basis_ = discriminant_subspace(
            self.model_.subspace, self.model_.covariance)
        self.labels_ = cgmm.cluster(self.model_, X)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return cgmm.cluster(self.model_, check_array(X))


class ReducedRankMDAClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Mixture discriminant classifier with rank-restricted component means."""

    def __init__(self, n_components=3, rank=2, cov_flavor="full",
                 max_iter=500, tol=1e-6, n_init=1, random_state=0):
        self.n_components = n_components
        self.rank = rank
        self.cov_flavor = cov_flavor
        self.max_iter = max_iter
        self.tol = tol
        self.n_init = n_init
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, encoded = _encode_labels(y)
        ds = LabeledDataset(X, encoded, len(self.classes_))
        self.model_, trace = mda.fit_rr_mda(
            ds, self.n_components, self.rank, self.random_state,
            cov_flavor=self.cov_flavor, max_iter=self.max_iter, tol=self.tol,
            n_init=self.n_init)
        self.train_log_likelihood_ = float(trace[-1])
        self.discriminant_basis_ = self.model_.discriminant_basis
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        labels, _ = mda.classify_rr(self.model_, check_array(X))
        return self.classes_[labels - 1]

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return mda.classify_rr(self.model_, check_array(X))[1]

    def transform(self, X):
        check_is_fitted(self, "discriminant_basis_")
        return check_array(X) @ self.discriminant_basis_


class ReducedRankMDAClusterer(ClusterMixin, BaseEstimator):
    """One-class reduced-rank mixture for clustering comparisons."""

    def __init__(self, n_clusters=5, rank=2, cov_flavor="full",
                 max_iter=500, tol=1e-6, n_init=10, random_state=0):
        self.n_clusters = n_clusters
        self.rank = rank
        self.cov_flavor = cov_flavor
        self.max_iter = max_iter
        self.tol = tol
        self.n_init = n_init
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X)
        ds = LabeledDataset(X)
        self.model_, trace = mda.fit_rr_mda(
            ds, self.n_clusters, self.rank, self.random_state,
            cov_flavor=self.cov_flavor, max_iter=self.max_iter, tol=self.tol,
            n_init=self.n_init)
        self.train_log_likelihood_ = float(trace[-1])
        self.discriminant_basis_ = self.model_.discriminant_basis
        self.labels_ = cgmm.cluster(self.model_, X)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return cgmm.cluster(self.model_, check_array(X))


class ProjectedMDAClassifier(ClassifierMixin, _SweepParams, BaseEstimator):
    """Plain mixture discriminant fit on the selected constrained subspace.

    Runs the same sweep as :class:`ConstrainedGMMClassifier` to pick the
    subspace, then projects the data onto it and fits an unconstrained
    per-class mixture with a pooled covariance there.
    """

    def __init__(self, subspace_method="mpca", subspace_dim=2, n_components=3,
                 cov_flavor="full", gamma=60.0, bandwidth_lo=0.1,
                 bandwidth_hi=2.0, n_bandwidths=20, inner_cm=3, max_outer=500,
                 tol=1e-6, n_init=1, random_state=0, n_jobs=1):
        super().__init__(subspace_method, subspace_dim, cov_flavor, gamma,
                         bandwidth_lo, bandwidth_hi, n_bandwidths, inner_cm,
                         max_outer, tol, n_init, random_state, n_jobs)
        self.n_components = n_components

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, encoded = _encode_labels(y)
        ds = LabeledDataset(X, encoded, len(self.classes_))
        levels, best = self._sweep(ds, self.n_components)
        self.levels_ = levels
        self.selected_level_ = levels[best].level
        self.subspace_ = levels[best].subspace
        proj = LabeledDataset(X @ self.subspace_.v_constrained, encoded,
                              len(self.classes_))
        self.model_ = cgmm.fit_unconstrained(
            proj, self.n_components, self.random_state,
            cov_flavor=self.cov_flavor, n_init=self.n_init)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        labels, _ = cgmm.classify(self.model_, X @ self.subspace_.v_constrained)
        return self.classes_[labels - 1]

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        return cgmm.classify(self.model_, X @ self.subspace_.v_constrained)[1]

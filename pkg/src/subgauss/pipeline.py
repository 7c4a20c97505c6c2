"""Experiment orchestration: bandwidth sweeps, model selection, reports.

A sweep builds the mode ladder on the training data, turns each usable
level into a candidate subspace, fits the constrained mixture under every
candidate from one shared initialization, and keeps the model with the
highest training log-likelihood (ties to the smaller bandwidth). The
benchmark estimators and the data generators used by the acceptance runs
live here too.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from . import cgmm, mda
from .dataset import (
    LabeledDataset,
    center_by_class,
    class_stats,
    feature_sigma_hat,
    split_folds,
)
from .evaluate import EvalResult, classification_error, clustering_error
from .modes import hmac_ladder
from .subspace import Subspace, closeness, mpca, mpca_mean

__all__ = [
    "METHODS",
    "ExperimentConfig",
    "FitReport",
    "LevelFit",
    "PipelineError",
    "run_method",
    "cross_validate",
    "sweep_fit",
    "gen_waveform",
    "gen_constrained_synthetic",
    "emit_report",
    "emit_plotdata",
    "save_model",
    "load_model",
]

METHODS = (
    "gmm-mpca",
    "gmm-mpca-mean",
    "gmm-mpca-sep",
    "mda-rr",
    "mda-dr-mpca",
    "mda-dr-mpca-mean",
)

CLUSTER_METHODS = ("gmm-mpca", "mda-rr", "mda-dr-mpca")


class PipelineError(RuntimeError):
    """Configuration or orchestration failure."""


@dataclass
class ExperimentConfig:
    """Knobs of one experiment; JSON round-trippable, CLI flags mirror it.

    ``d`` is the constrained-subspace dimension (for ``gmm-mpca-sep`` the
    per-class dimension, for ``mda-rr`` the mean-restriction rank). The
    bandwidth grid is ``n_bandwidths`` points equally spaced between
    ``bandwidth_lo`` and ``bandwidth_hi`` times the largest per-feature
    sample standard deviation.
    """

    method: str = "gmm-mpca"
    task: str = "classify"
    d: int = 2
    n_components: int = 3
    cov_flavor: str = "full"
    gamma: float = 60.0
    bandwidth_lo: float = 0.1
    bandwidth_hi: float = 2.0
    n_bandwidths: int = 20
    folds: int = 5
    seed: int = 0
    inner_cm: int = 3
    max_outer: int = 500
    tol: float = 1e-6
    n_init: int | None = None
    standardize: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise PipelineError(f"unknown method {self.method!r}; pick one of {METHODS}")
        if self.task not in ("classify", "cluster"):
            raise PipelineError(f"task must be classify or cluster, got {self.task!r}")
        if self.task == "cluster" and self.method not in CLUSTER_METHODS:
            raise PipelineError(
                f"clustering supports {CLUSTER_METHODS}, not {self.method!r}")
        if self.d < 1:
            raise PipelineError("d must be at least 1")
        if not self.bandwidth_lo < self.bandwidth_hi:
            raise PipelineError("bandwidth grid needs lo < hi")
        if self.n_bandwidths < 1:
            raise PipelineError("need at least one bandwidth")
        if not 0 <= self.gamma <= 100:
            raise PipelineError("gamma is a percentage")
        if self.n_init is not None and self.n_init < 1:
            raise PipelineError("n_init must be at least 1")

    @property
    def resolved_n_init(self) -> int:
        """Initializations per EM fit: clustering defaults to a multi-start."""
        if self.n_init is not None:
            return self.n_init
        return 10 if self.task == "cluster" else 1

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise PipelineError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def grid(self, sigma_hat: float) -> np.ndarray:
        if sigma_hat <= 0:
            raise PipelineError("data has zero spread; cannot build a bandwidth grid")
        return np.linspace(self.bandwidth_lo * sigma_hat,
                           self.bandwidth_hi * sigma_hat, self.n_bandwidths)


@dataclass
class LevelFit:
    """One bandwidth level of a sweep (or the fixed class-means candidate)."""

    level: int
    sigma: float | None
    n_modes: int | None
    skipped: bool
    skip_reason: str | None = None
    provenance: str | None = None
    subspace: Subspace | None = None
    model: object | None = None
    train_loglik: float | None = None
    closeness_prev_mean: float | None = None
    test_error: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "level": self.level,
            "sigma": self.sigma,
            "n_modes": self.n_modes,
            "skipped": self.skipped,
            "skip_reason": self.skip_reason,
            "provenance": self.provenance,
            "train_loglik": self.train_loglik,
            "closeness_prev_mean": self.closeness_prev_mean,
            "test_error": self.test_error,
        }


@dataclass
class FitReport:
    """Everything one `run_method` call produced, JSON-serializable.

    The fitted model object rides along in ``model`` but is persisted
    separately (``model_path``); the selected level always attains the
    maximum training log-likelihood among the non-skipped levels.
    """

    method: str
    task: str
    config: dict
    n_train: int
    n_test: int | None
    levels: list[LevelFit]
    selected_level: int | None
    selected_sigma: float | None
    selected_provenance: str | None
    train_loglik: float
    discriminant_dim: int
    eval_kind: str | None = None
    evaluation: EvalResult | None = None
    label_names: tuple[str, ...] | None = None
    feature_scale: list[float] | None = None
    model_path: str | None = None
    model: object = field(default=None, repr=False)
    schema: int = 1

    def to_json_dict(self) -> dict:
        return {
            "schema": self.schema,
            "method": self.method,
            "task": self.task,
            "config": self.config,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "levels": [lv.to_json_dict() for lv in self.levels],
            "selected_level": self.selected_level,
            "selected_sigma": self.selected_sigma,
            "selected_provenance": self.selected_provenance,
            "train_loglik": self.train_loglik,
            "discriminant_dim": self.discriminant_dim,
            "eval_kind": self.eval_kind,
            "evaluation": self.evaluation.to_json_dict() if self.evaluation else None,
            "label_names": list(self.label_names) if self.label_names else None,
            "feature_scale": self.feature_scale,
            "model_path": self.model_path,
        }


def sweep_fit(train: LabeledDataset, *, subspace_method: str, d: int,
              n_components, flavor: str = cgmm.SHARED, cov_flavor: str = "full",
              gamma: float = 60.0, sigmas=None, center_ladder: bool = False,
              seed: int = 0, inner_cm: int = 3, max_outer: int = 500,
              tol: float = 1e-6, n_init: int = 1,
              n_jobs: int = 1) -> tuple[list[LevelFit], int]:
    """Fit the constrained mixture under every candidate subspace.

    Returns the per-level records and the index of the selected level.
    ``subspace_method`` is ``mpca`` or ``mpca-mean``; with ``mpca-mean`` and
    ``d < K`` the single fixed class-means subspace is the only candidate
    and no ladder is built. A level is skipped when its mode clustering
    equals the preceding level's partition or it has fewer than 3 modes.
    """
    if subspace_method not in ("mpca", "mpca-mean"):
        raise PipelineError(f"unknown subspace method {subspace_method!r}")
    stats = class_stats(train) if train.labeled else None
    if subspace_method == "mpca-mean":
        if stats is None:
            raise PipelineError("mpca-mean needs class labels")
        if d < train.K:
            sub = mpca_mean(None, stats, d, gamma)
            levels = [LevelFit(level=0, sigma=None, n_modes=None, skipped=False,
                               provenance=sub.provenance, subspace=sub)]
            _fit_levels(levels, train, n_components, flavor, cov_flavor, seed,
                        inner_cm, max_outer, tol, n_init, n_jobs)
            return levels, 0

    if sigmas is None:
        raise PipelineError("a bandwidth grid is required for mode-based subspaces")
    ladder_data = center_by_class(train) if center_ladder else train
    ladder = hmac_ladder(ladder_data.X, sigmas)

    levels: list[LevelFit] = []
    prev_key = None
    for idx, ms in enumerate(ladder):
        rec = LevelFit(level=idx + 1, sigma=ms.sigma, n_modes=ms.n_modes, skipped=False)
        key = ms.partition_key()
        if idx > 0 and key == prev_key:
            rec.skipped, rec.skip_reason = True, "same clustering as preceding bandwidth"
        elif ms.n_modes < 3:
            rec.skipped, rec.skip_reason = True, "fewer than 3 modes"
        else:
            sub = (mpca(ms, d) if subspace_method == "mpca"
                   else mpca_mean(ms, stats, d, gamma))
            rec.subspace = sub
            rec.provenance = sub.provenance
        prev_key = key
        levels.append(rec)

    if all(rec.skipped for rec in levels):
        raise PipelineError(
            "every bandwidth level was skipped; widen the bandwidth grid")
    _fit_levels(levels, train, n_components, flavor, cov_flavor, seed,
                inner_cm, max_outer, tol, n_init, n_jobs)

    active = [rec for rec in levels if not rec.skipped]
    for i, rec in enumerate(active):
        if i > 0:
            rec.closeness_prev_mean = float(np.mean(
                [closeness(rec.subspace, other.subspace) for other in active[:i]]))

    best = max(range(len(levels)),
               key=lambda i: (-np.inf if levels[i].skipped else levels[i].train_loglik))
    return levels, best


def _fit_levels(levels, train, n_components, flavor, cov_flavor, seed,
                inner_cm, max_outer, tol, n_init, n_jobs):
    """One shared unconstrained initialization, then one GEM fit per level."""
    init = cgmm.fit_unconstrained(train, n_components, seed, cov_flavor=cov_flavor,
                                  n_init=n_init)
    todo = [rec for rec in levels if not rec.skipped]

    def one(rec: LevelFit):
        return cgmm.gem_fit(train, rec.subspace, n_components, flavor=flavor,
                            cov_flavor=cov_flavor, seed=seed, max_outer=max_outer,
                            inner_cm=inner_cm, tol=tol, init=init)

    if n_jobs != 1 and len(todo) > 1:
        results = Parallel(n_jobs=n_jobs)(delayed(one)(rec) for rec in todo)
    else:
        results = [one(rec) for rec in todo]
    for rec, (model, trace) in zip(todo, results):
        rec.model = model
        rec.train_loglik = float(trace[-1])


def _standardize(train: LabeledDataset, test: LabeledDataset | None):
    scale = np.std(train.X, axis=0, ddof=1)
    scale[scale <= 0] = 1.0
    new_train = LabeledDataset(train.X / scale, train.y, train.K,
                               train.feature_names, train.label_names)
    new_test = None
    if test is not None:
        new_test = LabeledDataset(test.X / scale, test.y, test.K,
                                  test.feature_names, test.label_names)
    return new_train, new_test, scale.tolist()


def _projected_mda(train, test_X, subspace, n_components, cov_flavor, seed,
                   n_init=1):
    """Plain mixture discriminant fit on the constrained-subspace coordinates."""
    V = subspace.v_constrained
    train_proj = LabeledDataset(train.X @ V, train.y, train.K,
                                label_names=train.label_names)
    model = cgmm.fit_unconstrained(train_proj, n_components, seed,
                                   cov_flavor=cov_flavor, n_init=n_init)
    preds = None
    if test_X is not None:
        preds = cgmm.classify(model, test_X @ V)[0] if train.K > 1 else None
    return model, preds


def run_method(config: ExperimentConfig, train: LabeledDataset,
               test: LabeledDataset | None = None) -> FitReport:
    """Execute one configured method on a train (and optional test) set.

    Classification evaluates the selected model on ``test`` when given;
    clustering fits a one-class model and scores the matched clustering
    error against the training labels when present. Per-level test errors
    are recorded for the plot emitter.
    """
    feature_scale = None
    if config.standardize:
        train, test, feature_scale = _standardize(train, test)

    if config.task == "cluster":
        report = _run_clustering(config, train)
    else:
        report = _run_classification(config, train, test)
    report.feature_scale = feature_scale
    report.label_names = train.label_names
    return report


def _run_classification(config, train, test) -> FitReport:
    if not train.labeled or train.K < 2:
        raise PipelineError("classification needs labeled training data")
    if test is not None and test.labeled and test.K > train.K:
        raise PipelineError("test set uses labels the training set never saw")
    method = config.method
    seed = config.seed

    if method == "mda-rr":
        model, trace = mda.fit_rr_mda(
            train, config.n_components, config.d, seed,
            cov_flavor=config.cov_flavor, max_iter=config.max_outer,
            tol=config.tol, n_init=config.resolved_n_init)
        levels: list[LevelFit] = []
        report = FitReport(
            method=method, task="classify", config=config.to_json_dict(),
            n_train=train.n, n_test=test.n if test is not None else None,
            levels=levels, selected_level=None, selected_sigma=None,
            selected_provenance="MDA-RR", train_loglik=float(trace[-1]),
            discriminant_dim=config.d, model=model)
        _evaluate_classifier(report, model, test)
        return report

    sigma_hat = feature_sigma_hat(train.X)
    sigmas = config.grid(sigma_hat)
    sep = method == "gmm-mpca-sep"
    sub_method = "mpca-mean" if method.endswith("mpca-mean") else "mpca"
    levels, best = sweep_fit(
        train, subspace_method=sub_method, d=config.d,
        n_components=config.n_components,
        flavor=cgmm.PER_CLASS if sep else cgmm.SHARED,
        cov_flavor=config.cov_flavor, gamma=config.gamma, sigmas=sigmas,
        center_ladder=sep, seed=seed, inner_cm=config.inner_cm,
        max_outer=config.max_outer, tol=config.tol,
        n_init=config.resolved_n_init, n_jobs=config.n_jobs)
    selected = levels[best]

    if method.startswith("mda-dr"):
        model = None
        score_all = test is not None and test.labeled
        for rec in levels:
            if rec.skipped or not (score_all or rec is selected):
                continue
            m, preds = _projected_mda(train, test.X if test is not None else None,
                                      rec.subspace, config.n_components,
                                      config.cov_flavor, seed)
            if score_all and preds is not None:
                rec.test_error = classification_error(test.y, preds).error_rate
            if rec is selected:
                model = m
        discriminant_dim = config.d
        final_subspace = selected.subspace
    else:
        for rec in levels:
            if rec.skipped or test is None or not test.labeled:
                continue
            rec.test_error = classification_error(
                test.y, cgmm.classify(rec.model, test.X)[0]).error_rate
        model = selected.model
        discriminant_dim = config.d + (train.K - 1 if sep else 0)
        final_subspace = selected.subspace

    report = FitReport(
        method=method, task="classify", config=config.to_json_dict(),
        n_train=train.n, n_test=test.n if test is not None else None,
        levels=levels, selected_level=selected.level,
        selected_sigma=selected.sigma, selected_provenance=selected.provenance,
        train_loglik=selected.train_loglik, discriminant_dim=discriminant_dim,
        model=model)
    if method.startswith("mda-dr"):
        report.eval_kind = "test-classification"
        if test is not None and test.labeled:
            report.evaluation = EvalResult(
                error_rate=selected.test_error,
                confusion=_confusion_for(model, final_subspace, test))
        else:
            report.eval_kind = None
    else:
        _evaluate_classifier(report, model, test)
    return report


def _confusion_for(model, subspace, test):
    preds = cgmm.classify(model, test.X @ subspace.v_constrained)[0]
    return classification_error(test.y, preds).confusion


def _evaluate_classifier(report: FitReport, model, test):
    if test is None or not test.labeled:
        return
    labels = cgmm.classify(model, test.X)[0]
    report.evaluation = classification_error(test.y, labels)
    report.eval_kind = "test-classification"


def _run_clustering(config, train) -> FitReport:
    unlabeled = LabeledDataset(train.X)
    seed = config.seed

    if config.method == "mda-rr":
        model, trace = mda.fit_rr_mda(
            unlabeled, config.n_components, config.d, seed,
            cov_flavor=config.cov_flavor, max_iter=config.max_outer,
            tol=config.tol, n_init=config.resolved_n_init)
        levels: list[LevelFit] = []
        selected_level = selected_sigma = None
        provenance = "MDA-RR"
        train_loglik = float(trace[-1])
        assignments = cgmm.cluster(model, train.X)
    else:
        sigmas = config.grid(feature_sigma_hat(train.X))
        levels, best = sweep_fit(
            unlabeled, subspace_method="mpca", d=config.d,
            n_components=config.n_components, flavor=cgmm.SHARED,
            cov_flavor=config.cov_flavor, sigmas=sigmas, seed=seed,
            inner_cm=config.inner_cm, max_outer=config.max_outer,
            tol=config.tol, n_init=config.resolved_n_init,
            n_jobs=config.n_jobs)
        selected = levels[best]
        selected_level, selected_sigma = selected.level, selected.sigma
        provenance = selected.provenance
        train_loglik = selected.train_loglik
        if config.method == "mda-dr-mpca":
            model, _ = _projected_mda(unlabeled, None, selected.subspace,
                                      config.n_components, config.cov_flavor,
                                      seed, n_init=config.resolved_n_init)
            assignments = cgmm.cluster(model, train.X @ selected.subspace.v_constrained)
        else:
            model = selected.model
            assignments = cgmm.cluster(model, train.X)

    report = FitReport(
        method=config.method, task="cluster", config=config.to_json_dict(),
        n_train=train.n, n_test=None, levels=levels,
        selected_level=selected_level, selected_sigma=selected_sigma,
        selected_provenance=provenance, train_loglik=train_loglik,
        discriminant_dim=config.d, model=model)
    if train.labeled:
        n_clusters = int(np.sum(config.n_components)) if not np.isscalar(config.n_components) \
            else int(config.n_components)
        K = max(train.K, n_clusters, int(assignments.max()))
        report.evaluation = clustering_error(train.y, assignments, K)
        report.eval_kind = "train-clustering"
    return report


def cross_validate(config: ExperimentConfig, ds: LabeledDataset) -> dict:
    """Stratified k-fold cross-validation of one method on one dataset.

    Returns a JSON-ready summary with the per-fold reports and the mean
    test error, following the fold protocol used for the benchmark tables.
    """
    folds = split_folds(ds, config.folds, config.seed)
    fold_reports = []
    errors = []
    for f in range(config.folds):
        train = ds.subset(np.flatnonzero(folds != f))
        test = ds.subset(np.flatnonzero(folds == f))
        report = run_method(config, train, test)
        fold_reports.append(report)
        errors.append(report.evaluation.error_rate)
    return {
        "schema": 1,
        "config": config.to_json_dict(),
        "folds": config.folds,
        "per_fold_error": errors,
        "mean_error": float(np.mean(errors)),
        "fold_reports": [r.to_json_dict() for r in fold_reports],
    }


def gen_waveform(n: int, seed: int = 0, noiseless: bool = False) -> LabeledDataset:
    """Three-class waveform benchmark data: 21 features per row.

    Each row is a uniform convex combination of two of three triangular
    base waves plus unit Gaussian noise; classes are balanced and the draw
    is deterministic for a given seed. ``noiseless`` omits the noise (test
    hook).
    """
    if n < 3:
        raise ValueError("need at least one row per class")
    grid = np.arange(1, 22)
    h1 = np.maximum(6.0 - np.abs(grid - 11), 0.0)
    h2 = np.maximum(6.0 - np.abs(grid - 15), 0.0)
    h3 = np.maximum(6.0 - np.abs(grid - 7), 0.0)
    pairs = ((h1, h2), (h1, h3), (h2, h3))
    sizes = [n // 3 + (1 if c < n % 3 else 0) for c in range(3)]
    rng = np.random.default_rng(seed)
    blocks, labels = [], []
    for cls, ((wave_a, wave_b), m) in enumerate(zip(pairs, sizes), start=1):
        u = rng.uniform(size=(m, 1))
        block = u * wave_a + (1.0 - u) * wave_b
        if not noiseless:
            block = block + rng.standard_normal((m, 21))
        blocks.append(block)
        labels.extend([cls] * m)
    return LabeledDataset.from_arrays(np.vstack(blocks), np.asarray(labels))


def gen_constrained_synthetic(means_subspace_dim: int = 2, n_clusters: int = 5,
                              scale: float = 0.125, n_per: int = 200,
                              seed: int = 0, ambient_dim: int = 32,
                              mean_spread: float = 16.0,
                              ) -> tuple[LabeledDataset, Subspace]:
    """Gaussian clusters with identity covariance and subspace-confined means.

    The cluster means sit exactly in a random ``means_subspace_dim``-dim
    subspace of R^ambient_dim, scaled by ``scale`` (so doubling the scale
    doubles every pairwise mean distance exactly). Returns the data with
    true cluster labels plus the generating subspace for closeness checks.
    """
    if n_clusters < 1 or n_per < 1 or not 1 <= means_subspace_dim < ambient_dim:
        raise ValueError("invalid generator sizes")
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((ambient_dim, ambient_dim)))
    Q = Q * np.sign(np.diag(R))
    basis = Subspace(Q[:, :means_subspace_dim], Q[:, means_subspace_dim:],
                     provenance="USER")
    coords = rng.standard_normal((n_clusters, means_subspace_dim)) * mean_spread
    base_means = coords @ basis.v_constrained.T
    blocks, labels = [], []
    for k in range(n_clusters):
        blocks.append(scale * base_means[k]
                      + rng.standard_normal((n_per, ambient_dim)))
        labels.extend([k + 1] * n_per)
    return LabeledDataset.from_arrays(np.vstack(blocks), np.asarray(labels)), basis


def _report_json(report) -> str:
    doc = report if isinstance(report, dict) else report.to_json_dict()
    return json.dumps(doc, sort_keys=True, indent=2)


def emit_report(report, path) -> None:
    """Write the report as deterministic, exact-float JSON."""
    Path(path).write_text(_report_json(report) + "\n")


def emit_plotdata(report: FitReport, path) -> None:
    """Write per-level sweep data as CSV: level, sigma, loglik, test_error, closeness."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "sigma", "loglik", "test_error", "closeness"])
        for rec in report.levels:
            if rec.skipped:
                continue
            writer.writerow([
                rec.level,
                "" if rec.sigma is None else repr(float(rec.sigma)),
                repr(float(rec.train_loglik)),
                "" if rec.test_error is None else repr(float(rec.test_error)),
                "" if rec.closeness_prev_mean is None
                else repr(float(rec.closeness_prev_mean)),
            ])


def save_model(model, path, feature_scale=None) -> None:
    """Persist a fitted model as exact-float JSON (round-trips bit-identically)."""
    doc = model.to_json_dict()
    if feature_scale is not None:
        doc["feature_scale"] = list(feature_scale)
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def load_model(path):
    """Load a model saved by :func:`save_model`.

    Returns ``(model, feature_scale)``; the flavor key picks the class.
    """
    doc = json.loads(Path(path).read_text())
    scale = doc.pop("feature_scale", None)
    if doc.get("flavor") == "MDA-RR":
        return mda.RrMdaModel.from_json_dict(doc), scale
    return cgmm.ConstrainedGmm.from_json_dict(doc), scale

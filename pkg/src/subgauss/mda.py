"""Reduced-rank mixture discriminant analysis (benchmark estimator).

EM for a per-class Gaussian mixture with one pooled covariance, where every
M-step re-solves a weighted discriminant problem over all components and
flattens the component means onto its leading ``rank`` directions. Unlike
the subspace-constrained estimator, the restriction subspace is re-derived
from the current responsibilities at every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cgmm import (
    MONOTONE_SLACK,
    Responsibilities,
    _apply_ridge,
    _as_components_per_class,
    _reseed_empty,
    classify,
    e_step,
    fit_unconstrained,
    log_likelihood,
    m_step_priors,
)
from .dataset import LabeledDataset
from .subspace import _canonical_sign, _orth, _sorted_eigh

__all__ = ["RrMdaModel", "fit_rr_mda", "classify_rr"]


@dataclass(frozen=True)
class RrMdaModel:
    """Mixture with rank-restricted component means.

    Same mixture fields as the constrained model (no subspace); ``rank`` is
    the mean-restriction rank and ``discriminant_basis`` an orthonormal
    p x rank basis of the discriminant directions, kept for reporting and
    projection.
    """

    class_priors: np.ndarray
    component_priors: tuple[np.ndarray, ...]
    means: tuple[np.ndarray, ...]
    covariance: np.ndarray
    rank: int
    discriminant_basis: np.ndarray
    cov_flavor: str = "full"
    fit_trace: tuple[float, ...] = ()
    seed: int | None = None

    @property
    def K(self) -> int:
        return self.class_priors.shape[0]

    @property
    def p(self) -> int:
        return self.means[0].shape[1]

    @property
    def n_components(self) -> tuple[int, ...]:
        return tuple(m.shape[0] for m in self.means)

    def to_json_dict(self) -> dict:
        return {
            "flavor": "MDA-RR",
            "K": self.K,
            "R_k": list(self.n_components),
            "a": self.class_priors.tolist(),
            "pi": [w.tolist() for w in self.component_priors],
            "mu": [m.tolist() for m in self.means],
            "Sigma": self.covariance.tolist(),
            "cov_flavor": self.cov_flavor,
            "rank": self.rank,
            "discriminant_basis": self.discriminant_basis.tolist(),
            "fit_trace": list(self.fit_trace),
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RrMdaModel":
        return cls(
            class_priors=np.asarray(doc["a"], dtype=float),
            component_priors=tuple(np.asarray(w, dtype=float) for w in doc["pi"]),
            means=tuple(np.asarray(m, dtype=float) for m in doc["mu"]),
            covariance=np.asarray(doc["Sigma"], dtype=float),
            rank=int(doc["rank"]),
            discriminant_basis=np.asarray(doc["discriminant_basis"], dtype=float),
            cov_flavor=doc["cov_flavor"],
            fit_trace=tuple(doc.get("fit_trace", ())),
            seed=doc.get("seed"),
        )


def _rank_restricted_m_step(ds: LabeledDataset, resp: Responsibilities,
                            rank: int, cov_flavor: str):
    """Weighted discriminant step: returns (restricted means, covariance, basis)."""
    p = ds.p
    mass = np.concatenate(resp.mass)
    raw_means = np.vstack(resp.weighted_means)
    n = float(mass.sum())
    overall = mass @ raw_means / n

    W = np.zeros((p, p))
    for rows, q, mu_k in zip(resp.class_rows, resp.posteriors, resp.weighted_means):
        Xk = ds.X[rows]
        for r in range(mu_k.shape[0]):
            diff = Xk - mu_k[r]
            W += (diff * q[:, r][:, None]).T @ diff
    W /= n
    if cov_flavor == "diagonal":
        W = np.diag(np.diag(W))
    W = _apply_ridge(W)

    centered = raw_means - overall
    B = (centered * mass[:, None]).T @ centered / n

    vals_w, vecs_w = np.linalg.eigh(W)
    w_inv_half = vecs_w / np.sqrt(vals_w)          # V D^-1/2
    B_star = w_inv_half.T @ B @ w_inv_half
    _, vecs_b = _sorted_eigh(B_star)
    V = w_inv_half @ vecs_b[:, :rank]              # p x rank, W-metric directions

    proj = W @ V @ V.T
    restricted = overall + centered @ proj.T
    extra = restricted - raw_means                  # = mu_hat - mu
    Sigma = W + (extra * mass[:, None]).T @ extra / n
    if cov_flavor == "diagonal":
        Sigma = np.diag(np.diag(Sigma))
    Sigma = _apply_ridge(Sigma)

    sizes = [m.shape[0] for m in resp.weighted_means]
    split = np.cumsum(sizes)[:-1]
    means = tuple(np.vsplit(restricted, split))
    return means, Sigma, _canonical_sign(_orth(V))


def fit_rr_mda(ds: LabeledDataset, n_components, rank: int, seed: int = 0, *,
               cov_flavor: str = "full", max_iter: int = 500,
               tol: float = 1e-6, n_init: int = 1,
               init=None) -> tuple[RrMdaModel, np.ndarray]:
    """EM fit with the component means flattened to ``rank`` dimensions.

    Requires ``1 <= rank <= min(p, R - 1)`` for R total components. With
    unlabeled data everything sits in one class and the restriction acts on
    the cluster means. Returns the model and its log-likelihood trace.
    """
    K = ds.K if ds.labeled else 1
    R_k = _as_components_per_class(n_components, K)
    R = sum(R_k)
    if not 1 <= rank <= min(ds.p, R - 1):
        raise ValueError(
            f"rank must lie in 1..min(p, R-1) = min({ds.p}, {R - 1}), got {rank}")
    if init is None:
        init = fit_unconstrained(ds, n_components, seed, cov_flavor=cov_flavor,
                                 n_init=n_init)

    model_like = init
    trace: list[float] = []
    slack = MONOTONE_SLACK * ds.n
    baseline = -np.inf
    prev = None
    out = None
    for _ in range(max_iter):
        resp = e_step(model_like, ds)
        reseeded = _reseed_empty(resp, model_like, ds)
        if reseeded is not None:
            resp = reseeded
            baseline = -np.inf
        pis = m_step_priors(resp)
        means, Sigma, basis = _rank_restricted_m_step(ds, resp, rank, cov_flavor)
        out = RrMdaModel(
            class_priors=np.asarray(model_like.class_priors, dtype=float),
            component_priors=pis, means=means, covariance=Sigma,
            rank=rank, discriminant_basis=basis, cov_flavor=cov_flavor,
            seed=seed)
        model_like = out
        ll = log_likelihood(out, ds)
        if ll < baseline - slack:
            raise RuntimeError(
                f"log-likelihood decreased {baseline - ll:.3g} > slack {slack:.3g}; "
                "this indicates an implementation bug")
        trace.append(ll)
        if prev is not None and ll - prev < tol * (abs(prev) + 1.0):
            break
        baseline = max(baseline, ll)
        prev = ll
    out = replace(out, fit_trace=tuple(trace))
    return out, np.asarray(trace)


def classify_rr(model: RrMdaModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bayes-rule labels and class posteriors; same contract as `classify`."""
    return classify(model, X)

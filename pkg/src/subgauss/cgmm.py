"""Gaussian mixture estimation with component means tied to a subspace.

All classes share one covariance matrix. Component means are free inside the
constrained subspace but must share their projection onto the null basis:
globally (``shared`` flavor) or within each class (``per-class`` flavor,
which shifts each class's copy of the subspace by its own offset). The
M-step for the means has a closed form obtained by whitening, rotating the
null directions onto the leading coordinates, and pooling those coordinates
across components; the covariance is then updated conditionally, which makes
the outer loop a generalized EM with a non-decreasing likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .dataset import LabeledDataset
from .subspace import Subspace, full_space

__all__ = [
    "ConstrainedGmm",
    "Responsibilities",
    "DegenerateFitError",
    "SHARED",
    "PER_CLASS",
    "fit_unconstrained",
    "e_step",
    "m_step_priors",
    "solve_constrained_means",
    "solve_constrained_means_per_class",
    "m_step_covariance",
    "gem_fit",
    "log_likelihood",
    "classify",
    "cluster",
]

SHARED = "shared"
PER_CLASS = "per-class"

CONSTRAINT_TOL = 1e-6
RIDGE_SCALE = 1e-6
EMPTY_MASS = 1e-8
MONOTONE_SLACK = 1e-8  # per observation


class DegenerateFitError(RuntimeError):
    """Estimation collapsed (empty components) beyond the retry cap."""


@dataclass(frozen=True)
class ConstrainedGmm:
    """Fitted mixture: class priors, per-class components, shared covariance.

    ``component_priors[k]`` and ``means[k]`` hold class k+1's mixing weights
    (length R_k) and component means (R_k x p). ``flavor`` is ``shared`` or
    ``per-class`` and states which components must agree on their null-space
    projection. K = 1 is the clustering ("one-class") case.
    """

    class_priors: np.ndarray
    component_priors: tuple[np.ndarray, ...]
    means: tuple[np.ndarray, ...]
    covariance: np.ndarray
    subspace: Subspace
    flavor: str = SHARED
    cov_flavor: str = "full"
    fit_trace: tuple[float, ...] = ()
    seed: int | None = None

    def __post_init__(self):
        a = np.asarray(self.class_priors, dtype=float)
        pis = tuple(np.asarray(w, dtype=float) for w in self.component_priors)
        mus = tuple(np.atleast_2d(np.asarray(m, dtype=float)) for m in self.means)
        Sigma = np.asarray(self.covariance, dtype=float)
        if self.flavor not in (SHARED, PER_CLASS):
            raise ValueError(f"unknown flavor {self.flavor!r}")
        if self.cov_flavor not in ("full", "diagonal"):
            raise ValueError(f"unknown cov_flavor {self.cov_flavor!r}")
        if len(pis) != a.shape[0] or len(mus) != a.shape[0]:
            raise ValueError("need component priors and means for every class")
        if abs(a.sum() - 1.0) > 1e-10 or np.any(a < -1e-12):
            raise ValueError("class priors must be a probability vector")
        for w in pis:
            if abs(w.sum() - 1.0) > 1e-10 or np.any(w < -1e-12):
                raise ValueError("component priors must sum to 1 within each class")
        if not np.allclose(Sigma, Sigma.T, atol=1e-10):
            raise ValueError("covariance must be symmetric")
        residual = _constraint_residual(mus, self.subspace, self.flavor)
        if residual > CONSTRAINT_TOL:
            raise ValueError(
                f"means violate the {self.flavor} subspace constraint "
                f"(residual {residual:.3g})")
        object.__setattr__(self, "class_priors", a)
        object.__setattr__(self, "component_priors", pis)
        object.__setattr__(self, "means", mus)
        object.__setattr__(self, "covariance", Sigma)

    @property
    def K(self) -> int:
        return self.class_priors.shape[0]

    @property
    def p(self) -> int:
        return self.means[0].shape[1]

    @property
    def n_components(self) -> tuple[int, ...]:
        return tuple(m.shape[0] for m in self.means)

    def constraint_residual(self) -> float:
        """Largest spread of the null-space projections the flavor ties."""
        return _constraint_residual(self.means, self.subspace, self.flavor)

    def marginal_components(self) -> tuple[np.ndarray, np.ndarray]:
        """Flatten to one mixture: weights a_k * pi_kr and stacked means."""
        w = np.concatenate([a * pi for a, pi in zip(self.class_priors, self.component_priors)])
        mu = np.vstack(self.means)
        return w, mu

    def to_json_dict(self) -> dict:
        return {
            "flavor": self.flavor,
            "K": self.K,
            "R_k": list(self.n_components),
            "a": self.class_priors.tolist(),
            "pi": [w.tolist() for w in self.component_priors],
            "mu": [m.tolist() for m in self.means],
            "Sigma": self.covariance.tolist(),
            "cov_flavor": self.cov_flavor,
            "subspace": self.subspace.to_json_dict(),
            "fit_trace": list(self.fit_trace),
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ConstrainedGmm":
        return cls(
            class_priors=np.asarray(doc["a"], dtype=float),
            component_priors=tuple(np.asarray(w, dtype=float) for w in doc["pi"]),
            means=tuple(np.asarray(m, dtype=float) for m in doc["mu"]),
            covariance=np.asarray(doc["Sigma"], dtype=float),
            subspace=Subspace.from_json_dict(doc["subspace"]),
            flavor=doc["flavor"],
            cov_flavor=doc["cov_flavor"],
            fit_trace=tuple(doc.get("fit_trace", ())),
            seed=doc.get("seed"),
        )


def _constraint_residual(means, subspace: Subspace, flavor: str) -> float:
    if subspace.q == 0:
        return 0.0
    vn = subspace.v_null
    if flavor == SHARED:
        proj = np.vstack([m @ vn for m in means])
        groups = [proj]
    else:
        groups = [m @ vn for m in means]
    worst = 0.0
    for g in groups:
        if g.shape[0] > 1:
            worst = max(worst, float(np.max(g.max(axis=0) - g.min(axis=0))))
    return worst


@dataclass(frozen=True)
class Responsibilities:
    """Per-class posterior weights and the sufficient statistics they imply.

    ``posteriors[k]`` is (n_k, R_k) with rows summing to 1; ``mass[k]`` its
    column sums l_kr; ``weighted_means[k]`` the responsibility-weighted
    sample means (R_k x p). ``class_rows[k]`` are the dataset row indices of
    class k+1 (a single group covers everything in the one-class case).
    """

    class_rows: tuple[np.ndarray, ...]
    mass: tuple[np.ndarray, ...]
    weighted_means: tuple[np.ndarray, ...]
    posteriors: tuple[np.ndarray, ...] | None = None
    n: int = 0

    @property
    def class_sizes(self) -> np.ndarray:
        return np.array([len(rows) for rows in self.class_rows])


def _chol_logdet(Sigma: np.ndarray) -> tuple[np.ndarray, float]:
    L = np.linalg.cholesky(Sigma)
    return L, 2.0 * float(np.sum(np.log(np.diag(L))))


def _component_log_density(X: np.ndarray, means_k: np.ndarray, L: np.ndarray,
                           logdet: float) -> np.ndarray:
    """Log N(x | mu_r, Sigma) for every row of X and every component r."""
    p = X.shape[1]
    out = np.empty((X.shape[0], means_k.shape[0]))
    for r, mu in enumerate(means_k):
        Z = solve_triangular(L, (X - mu).T, lower=True)
        out[:, r] = -0.5 * np.sum(Z * Z, axis=0)
    return out - 0.5 * (p * np.log(2.0 * np.pi) + logdet)


def _class_groups(model, ds: LabeledDataset) -> list[np.ndarray]:
    if model.K == 1:
        return [np.arange(ds.n)]
    if not ds.labeled or ds.K != model.K:
        raise ValueError(
            f"model has {model.K} classes but dataset has "
            f"{ds.K if ds.labeled else 'no'} labels")
    return [ds.rows_of_class(k) for k in range(1, ds.K + 1)]


def e_step(model, ds: LabeledDataset) -> Responsibilities:
    """Posterior component weights within each observation's class.

    Computed in log space; responsibilities are floored at 1e-300 before
    normalizing so a far-out observation still yields a valid row.
    """
    L, logdet = _chol_logdet(model.covariance)
    groups = _class_groups(model, ds)
    posteriors, mass, wmeans = [], [], []
    for k, rows in enumerate(groups):
        Xk = ds.X[rows]
        logq = _component_log_density(Xk, model.means[k], L, logdet)
        logq += np.log(np.maximum(model.component_priors[k], 1e-300))
        q = np.exp(logq - logsumexp(logq, axis=1, keepdims=True))
        q = np.maximum(q, 1e-300)
        q /= q.sum(axis=1, keepdims=True)
        l = q.sum(axis=0)
        posteriors.append(q)
        mass.append(l)
        wmeans.append((q.T @ Xk) / np.maximum(l, 1e-300)[:, None])
    return Responsibilities(
        class_rows=tuple(groups),
        mass=tuple(mass),
        weighted_means=tuple(wmeans),
        posteriors=tuple(posteriors),
        n=ds.n,
    )


def m_step_priors(resp: Responsibilities) -> tuple[np.ndarray, ...]:
    """Component priors pi_kr = l_kr / n_k."""
    out = []
    for l, rows in zip(resp.mass, resp.class_rows):
        if len(rows) == 0:
            raise ValueError("empty class")
        out.append(l / len(rows))
    return tuple(out)


def _whitening_maps(Sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Square-root factors: returns (to_white, from_white).

    ``to_white = (Sigma^-1/2)^t`` maps data to identity covariance;
    ``from_white = (Sigma^1/2)^t`` maps back, with Sigma = S^t S for
    S = D^1/2 V^t from the eigendecomposition.
    """
    vals, vecs = np.linalg.eigh(Sigma)
    if vals.min() <= 0:
        raise np.linalg.LinAlgError(
            "covariance is not positive definite; ridge floor missing")
    to_white = (vecs / np.sqrt(vals)).T        # D^-1/2 V^t
    from_white = vecs * np.sqrt(vals)          # V D^1/2 = (Sigma^1/2)^t
    return to_white, from_white


def _solve_means(resp: Responsibilities, Sigma: np.ndarray, subspace: Subspace,
                 pool_per_class: bool) -> tuple[np.ndarray, ...]:
    q = subspace.q
    if q == 0:
        return tuple(m.copy() for m in resp.weighted_means)
    to_white, from_white = _whitening_maps(Sigma)
    # Rotate so the constraint sits on the first q coordinates of the
    # whitened space: B = Sigma^1/2 V_null, U from its SVD, augmented to a
    # full orthonormal basis.
    B = from_white.T @ subspace.v_null
    U, sv, _ = np.linalg.svd(B, full_matrices=True)
    if sv.min() <= sv.max() * 1e-12:
        raise AssertionError("Sigma^1/2 V_null lost rank; covariance not SPD?")
    transform = U.T @ to_white
    back = from_white @ U

    # Pooled coordinates are the mass-weighted average; the mass sums equal
    # the class (or total) row counts whenever responsibilities are proper.
    breve = [wm @ transform.T for wm in resp.weighted_means]  # (R_k, p) each
    if pool_per_class:
        solved = []
        for xk, l in zip(breve, resp.mass):
            pooled = (l @ xk[:, :q]) / l.sum()
            mu = xk.copy()
            mu[:, :q] = pooled
            solved.append(mu @ back.T)
        return tuple(solved)
    total = sum(l.sum() for l in resp.mass)
    pooled = sum(l @ xk[:, :q] for xk, l in zip(breve, resp.mass)) / total
    solved = []
    for xk in breve:
        mu = xk.copy()
        mu[:, :q] = pooled
        solved.append(mu @ back.T)
    return tuple(solved)


def solve_constrained_means(resp: Responsibilities, Sigma: np.ndarray,
                            subspace: Subspace) -> tuple[np.ndarray, ...]:
    """Optimal component means under the shared-projection constraint.

    Minimizes the responsibility-weighted Mahalanobis distance between the
    means and the weighted sample means, subject to all components (across
    all classes) sharing their projection onto the null basis. The null
    coordinates are pooled over every component; the constrained-space
    coordinates stay component-wise.
    """
    return _solve_means(resp, Sigma, subspace, pool_per_class=False)


def solve_constrained_means_per_class(resp: Responsibilities, Sigma: np.ndarray,
                                      subspace: Subspace) -> tuple[np.ndarray, ...]:
    """Same solver with the null coordinates pooled within each class only.

    Each class's components share one projection onto the null basis, so the
    classes occupy parallel translates of the constrained subspace.
    """
    return _solve_means(resp, Sigma, subspace, pool_per_class=True)


def m_step_covariance(ds: LabeledDataset, resp: Responsibilities, means,
                      cov_flavor: str = "full") -> np.ndarray:
    """Pooled covariance of the residuals around the component means.

    Divides by n (maximum likelihood). The diagonal flavor zeroes the
    off-diagonal entries. A ridge of eps * I with
    eps = 1e-6 * mean eigenvalue is added whenever the smallest eigenvalue
    falls below eps (with an absolute floor when the scatter vanishes).
    """
    p = ds.p
    S = np.zeros((p, p))
    for rows, q, mu_k in zip(resp.class_rows, resp.posteriors, means):
        Xk = ds.X[rows]
        for r in range(mu_k.shape[0]):
            diff = Xk - mu_k[r]
            S += (diff * q[:, r][:, None]).T @ diff
    S /= ds.n
    if cov_flavor == "diagonal":
        S = np.diag(np.diag(S))
    return _apply_ridge(S)


def _apply_ridge(S: np.ndarray) -> np.ndarray:
    tr = float(np.trace(S))
    eps = RIDGE_SCALE * (tr / S.shape[0]) if tr > 0 else RIDGE_SCALE
    min_eig = float(np.linalg.eigvalsh(S)[0])
    if min_eig < eps:
        S = S + eps * np.eye(S.shape[0])
    return S


def log_likelihood(model, ds: LabeledDataset) -> float:
    """Training log-likelihood of the model on the dataset.

    Labeled data with a matching class count score the joint
    sum_i log(a_{y_i} f_{y_i}(x_i)); a one-class model scores the plain
    mixture log-density; otherwise the class-marginal mixture is used.
    """
    L, logdet = _chol_logdet(model.covariance)
    if ds.labeled and model.K == ds.K and model.K > 1:
        total = 0.0
        for k in range(model.K):
            rows = ds.rows_of_class(k + 1)
            logf = _log_class_density(ds.X[rows], model, k, L, logdet)
            total += float(np.sum(logf + np.log(model.class_priors[k])))
        return total
    if model.K == 1:
        return float(np.sum(_log_class_density(ds.X, model, 0, L, logdet)))
    per_class = np.stack([
        _log_class_density(ds.X, model, k, L, logdet)
        + np.log(np.maximum(model.class_priors[k], 1e-300))
        for k in range(model.K)
    ])
    return float(np.sum(logsumexp(per_class, axis=0)))


def _log_class_density(X: np.ndarray, model, k: int, L: np.ndarray,
                       logdet: float) -> np.ndarray:
    logd = _component_log_density(X, model.means[k], L, logdet)
    logd += np.log(np.maximum(model.component_priors[k], 1e-300))
    return logsumexp(logd, axis=1)


def classify(model, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Most probable class for each row, plus the class posteriors.

    Labels are 1-based; exact ties go to the smallest class index.
    """
    if model.K < 2:
        raise ValueError("classification needs a model with at least 2 classes")
    X = _check_width(model, X)
    L, logdet = _chol_logdet(model.covariance)
    logjoint = np.stack([
        _log_class_density(X, model, k, L, logdet)
        + np.log(np.maximum(model.class_priors[k], 1e-300))
        for k in range(model.K)
    ], axis=1)
    labels = np.argmax(logjoint, axis=1) + 1
    post = np.exp(logjoint - logsumexp(logjoint, axis=1, keepdims=True))
    return labels, post


def cluster(model, X: np.ndarray) -> np.ndarray:
    """Most probable component for each row of a one-class model (1-based)."""
    if model.K != 1:
        raise ValueError("clustering needs a one-class model")
    X = _check_width(model, X)
    L, logdet = _chol_logdet(model.covariance)
    logq = _component_log_density(X, model.means[0], L, logdet)
    logq += np.log(np.maximum(model.component_priors[0], 1e-300))
    return np.argmax(logq, axis=1) + 1


def _check_width(model, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.p:
        raise ValueError(
            f"model expects {model.p} features, data has {X.shape[1]} "
            "(is a label column being read as a feature?)")
    return X


def _kmeanspp_centers(X: np.ndarray, R: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    for _ in range(1, R):
        d2 = np.min(
            [np.sum((X - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(n)])
            continue
        centers.append(X[rng.choice(n, p=d2 / total)])
    return np.vstack(centers)


def _hard_init(ds: LabeledDataset, groups, R_k, rng, cov_flavor):
    """Distance-based seeding: centers by k-means++, one-hot assignment."""
    p = ds.p
    pis, means, S = [], [], np.zeros((p, p))
    for rows, R in zip(groups, R_k):
        Xk = ds.X[rows]
        if len(rows) < R:
            raise DegenerateFitError(
                f"class with {len(rows)} rows cannot hold {R} components")
        centers = _kmeanspp_centers(Xk, R, rng)
        d2 = np.stack([np.sum((Xk - c) ** 2, axis=1) for c in centers], axis=1)
        assign = np.argmin(d2, axis=1)
        mu = np.empty((R, p))
        pi = np.empty(R)
        for r in range(R):
            members = np.flatnonzero(assign == r)
            mu[r] = Xk[members].mean(axis=0) if members.size else centers[r]
            pi[r] = max(members.size, 1)
            S += (Xk[members] - mu[r]).T @ (Xk[members] - mu[r])
        pis.append(pi / pi.sum())
        means.append(mu)
    S /= ds.n
    if cov_flavor == "diagonal":
        S = np.diag(np.diag(S))
    return tuple(pis), tuple(means), _apply_ridge(S)


def _as_components_per_class(R_k, K: int) -> tuple[int, ...]:
    if np.isscalar(R_k):
        return (int(R_k),) * K
    out = tuple(int(r) for r in R_k)
    if len(out) != K:
        raise ValueError(f"need one component count per class, got {len(out)} for K={K}")
    return out


def fit_unconstrained(ds: LabeledDataset, n_components, seed: int = 0, *,
                      cov_flavor: str = "full", max_iter: int = 200,
                      tol: float = 1e-6, restarts: int = 5,
                      n_init: int = 1, select_iters: int = 10) -> ConstrainedGmm:
    """Standard per-class EM with one covariance pooled across all classes.

    Used to initialize the constrained fits and as the plain mixture
    classifier on projected data. Deterministic for a given seed; a fit that
    collapses a component is restarted with a fresh stream, up to
    ``restarts`` times.

    With ``n_init > 1``, every distance-based seeding gets a short EM run of
    ``select_iters`` iterations, the highest-likelihood candidate continues
    to convergence, and the rest are dropped. Multi-starts matter mostly for
    one-class (clustering) fits where EM local optima are common.
    """
    if n_init <= 1:
        return _fit_unconstrained_once(ds, n_components, seed, 0, cov_flavor,
                                       max_iter, tol, restarts)
    best_index, best_ll = 0, -np.inf
    for i in range(n_init):
        probe = _fit_unconstrained_once(ds, n_components, seed, i, cov_flavor,
                                        select_iters, tol, restarts)
        if probe.fit_trace[-1] > best_ll:
            best_index, best_ll = i, probe.fit_trace[-1]
    return _fit_unconstrained_once(ds, n_components, seed, best_index,
                                   cov_flavor, max_iter, tol, restarts)


def _fit_unconstrained_once(ds, n_components, seed, init_index, cov_flavor,
                            max_iter, tol, restarts) -> ConstrainedGmm:
    K = ds.K if ds.labeled else 1
    R_k = _as_components_per_class(n_components, K)
    groups = [ds.rows_of_class(k) for k in range(1, K + 1)] if K > 1 else [np.arange(ds.n)]
    sizes = np.array([len(rows) for rows in groups])
    class_priors = sizes / ds.n

    for attempt in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, init_index, attempt]))
        pis, means, Sigma = _hard_init(ds, groups, R_k, rng, cov_flavor)
        model = ConstrainedGmm(class_priors, pis, means, Sigma,
                               full_space(ds.p), flavor=SHARED,
                               cov_flavor=cov_flavor, seed=seed)
        trace: list[float] = []
        degenerate = False
        for _ in range(max_iter):
            resp = e_step(model, ds)
            if any(l.min() < EMPTY_MASS for l in resp.mass):
                degenerate = True
                break
            pis = m_step_priors(resp)
            means = tuple(m.copy() for m in resp.weighted_means)
            Sigma = m_step_covariance(ds, resp, means, cov_flavor)
            model = replace(model, component_priors=pis, means=means,
                            covariance=Sigma, fit_trace=tuple(trace))
            ll = log_likelihood(model, ds)
            trace.append(ll)
            if len(trace) > 1 and trace[-1] - trace[-2] < tol * (abs(trace[-2]) + 1.0):
                break
        if not degenerate:
            return replace(model, fit_trace=tuple(trace))
    raise DegenerateFitError(
        f"component collapsed in every one of {restarts} restarts")


def gem_fit(ds: LabeledDataset, subspace: Subspace, n_components, *,
            flavor: str = SHARED, cov_flavor: str = "full", seed: int = 0,
            max_outer: int = 500, inner_cm: int = 3, tol: float = 1e-6,
            n_init: int = 1,
            init: ConstrainedGmm | None = None) -> tuple[ConstrainedGmm, np.ndarray]:
    """Constrained mixture fit by generalized EM with conditional updates.

    Each outer iteration recomputes responsibilities and priors, then
    alternates ``inner_cm`` times between the closed-form constrained means
    (covariance held fixed) and the covariance update (means held fixed).
    Stops when the relative likelihood gain drops below ``tol``. Returns the
    model and its log-likelihood trace (one entry per outer iteration); a
    decrease beyond 1e-8 per observation raises, since the update is
    provably monotone.

    ``init`` may carry a previously fitted unconstrained model to skip the
    initialization EM, e.g. when the same start is reused across a
    bandwidth sweep.
    """
    if subspace.p != ds.p:
        raise ValueError(f"subspace lives in R^{subspace.p}, data in R^{ds.p}")
    if init is None:
        init = fit_unconstrained(ds, n_components, seed, cov_flavor=cov_flavor,
                                 n_init=n_init)
    solver = (solve_constrained_means_per_class if flavor == PER_CLASS
              else solve_constrained_means)

    model = init
    Sigma = init.covariance
    means = init.means
    trace: list[float] = []
    slack = MONOTONE_SLACK * ds.n
    baseline = -np.inf
    prev = None
    for _ in range(max_outer):
        resp = e_step(model, ds)
        reseeded = _reseed_empty(resp, model, ds)
        if reseeded is not None:
            resp = reseeded
            baseline = -np.inf
        pis = m_step_priors(resp)
        for _ in range(max(1, inner_cm)):
            means = solver(resp, Sigma, subspace)
            Sigma = m_step_covariance(ds, resp, means, cov_flavor)
        model = ConstrainedGmm(model.class_priors, pis, means, Sigma, subspace,
                               flavor=flavor, cov_flavor=cov_flavor, seed=seed)
        ll = log_likelihood(model, ds)
        if ll < baseline - slack:
            raise RuntimeError(
                f"log-likelihood decreased {baseline - ll:.3g} > slack {slack:.3g}; "
                "this indicates an implementation bug")
        trace.append(ll)
        if prev is not None and ll - prev < tol * (abs(prev) + 1.0):
            prev = ll
            break
        baseline = max(baseline, ll)
        prev = ll
    model = replace(model, fit_trace=tuple(trace))
    return model, np.asarray(trace)


def _reseed_empty(resp: Responsibilities, model, ds: LabeledDataset):
    """Hard-assign the worst-explained datum to any emptied component.

    Returns refreshed responsibilities, or None when nothing was empty.
    Operating on the responsibilities keeps the subsequent M-step's means
    inside the constraint.
    """
    empty = [(k, np.flatnonzero(l < EMPTY_MASS)) for k, l in enumerate(resp.mass)]
    if not any(idx.size for _, idx in empty):
        return None
    L, logdet = _chol_logdet(model.covariance)
    posteriors = [q.copy() for q in resp.posteriors]
    for k, idx in empty:
        if idx.size == 0:
            continue
        rows = resp.class_rows[k]
        logf = _log_class_density(ds.X[rows], model, k, L, logdet)
        order = np.argsort(logf)
        for j, r in enumerate(idx):
            i = order[min(j, len(order) - 1)]
            posteriors[k][i, :] = 0.0
            posteriors[k][i, r] = 1.0
    mass, wmeans = [], []
    for q, rows in zip(posteriors, resp.class_rows):
        l = q.sum(axis=0)
        mass.append(l)
        wmeans.append((q.T @ ds.X[rows]) / np.maximum(l, 1e-300)[:, None])
    return Responsibilities(resp.class_rows, tuple(mass), tuple(wmeans),
                            tuple(posteriors), resp.n)

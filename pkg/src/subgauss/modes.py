"""Gaussian kernel density, modal-EM mode seeking, and the bandwidth ladder.

A mode is a local maximum of a density. For a Gaussian mixture with a shared
covariance the modal-EM update is a posterior-weighted mean of the component
means, so every iterate (and hence every mode) is a convex combination of
them. The ladder ascends the data under a growing sequence of kernel
bandwidths, merging modes as the density smooths out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

__all__ = [
    "KernelDensity",
    "ModeSet",
    "ModeLadder",
    "ModalEmError",
    "kde_log_density",
    "modal_em_ascend",
    "mixture_modal_ascent",
    "hmac_ladder",
]

STEP_TOL = 1e-8
MAX_ITER = 500
MERGE_TOL_SCALE = 1e-4


class ModalEmError(RuntimeError):
    """Ascent failed to converge within the iteration cap."""


@dataclass(frozen=True)
class KernelDensity:
    """Gaussian kernel density with spherical covariance sigma^2 * I.

    Each data row is a kernel center with weight 1/n.
    """

    centers: np.ndarray
    sigma: float

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        object.__setattr__(self, "centers", centers)
        if not self.sigma > 0:
            raise ValueError("bandwidth must be positive")

    @property
    def n(self) -> int:
        return self.centers.shape[0]

    @property
    def p(self) -> int:
        return self.centers.shape[1]


@dataclass(frozen=True)
class ModeSet:
    """Modes found at one bandwidth, with their data-fraction weights.

    ``assignment[i]`` is the index of the mode that data row i ascends to
    (chained through all coarser levels of the ladder so far); ``weights[r]``
    is the fraction of data rows assigned to mode r.
    """

    sigma: float
    modes: np.ndarray
    weights: np.ndarray
    assignment: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]

    def partition_key(self) -> tuple:
        """Canonical form of the induced clustering, invariant to mode order."""
        first_seen: dict[int, int] = {}
        out = []
        for m in self.assignment:
            m = int(m)
            if m not in first_seen:
                first_seen[m] = len(first_seen)
            out.append(first_seen[m])
        return tuple(out)

    def to_json_dict(self) -> dict:
        return {
            "sigma": float(self.sigma),
            "modes": self.modes.tolist(),
            "weights": self.weights.tolist(),
            "assignment": self.assignment.tolist(),
        }


@dataclass(frozen=True)
class ModeLadder:
    """Mode sets for a strictly increasing sequence of bandwidths."""

    levels: tuple[ModeSet, ...]

    def __post_init__(self):
        sigmas = [ms.sigma for ms in self.levels]
        if any(b <= a for a, b in zip(sigmas, sigmas[1:])):
            raise ValueError("ladder bandwidths must be strictly increasing")

    def __len__(self) -> int:
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    def __getitem__(self, i) -> ModeSet:
        return self.levels[i]

    def to_json_dict(self) -> dict:
        return {"levels": [ms.to_json_dict() for ms in self.levels]}


def _kde_log_density_many(kd: KernelDensity, points: np.ndarray) -> np.ndarray:
    """Log KDE at each row of ``points`` via log-sum-exp (no underflow)."""
    sq = _sq_distances(points, kd.centers)
    expo = -0.5 * sq / (kd.sigma ** 2)
    norm = -0.5 * kd.p * np.log(2.0 * np.pi * kd.sigma ** 2) - np.log(kd.n)
    return logsumexp(expo, axis=1) + norm


def kde_log_density(kd: KernelDensity, x: np.ndarray):
    """Log of the kernel density at ``x``.

    Accepts a single point (returns a scalar) or a stack of points (returns
    a vector). Computed with log-sum-exp so that exponents as small as -700
    per kernel do not underflow the total.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return float(_kde_log_density_many(kd, x[None, :])[0])
    return _kde_log_density_many(kd, x)


def _sq_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, clipped at zero."""
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * A @ B.T
    return np.maximum(sq, 0.0)


def modal_em_ascend(kd: KernelDensity, start: np.ndarray, *, tol: float = STEP_TOL,
                    max_iter: int = MAX_ITER, return_trajectory: bool = False):
    """Climb the kernel density from ``start`` to the nearest mode.

    Alternates the posterior weights p_i of each kernel at the current point
    with the weighted-mean update x <- sum_i p_i c_i, which never decreases
    the density. Stops when the step length drops below ``tol``.

    Returns the mode, or ``(mode, trajectory)`` when ``return_trajectory``
    is set (trajectory includes the start point).
    """
    x = np.asarray(start, dtype=float).copy()
    traj = [x.copy()] if return_trajectory else None
    two_s2 = 2.0 * kd.sigma ** 2
    for _ in range(max_iter):
        expo = -_sq_distances(x[None, :], kd.centers)[0] / two_s2
        expo -= expo.max()
        w = np.exp(expo)
        x_new = w @ kd.centers / w.sum()
        step = float(np.linalg.norm(x_new - x))
        x = x_new
        if traj is not None:
            traj.append(x.copy())
        if step < tol:
            return (x, np.array(traj)) if return_trajectory else x
    raise ModalEmError(f"no convergence within {max_iter} iterations (tol={tol})")


def mixture_modal_ascent(means: np.ndarray, weights: np.ndarray, covariance: np.ndarray,
                         start: np.ndarray, *, tol: float = STEP_TOL,
                         max_iter: int = MAX_ITER) -> np.ndarray:
    """Mode of a finite Gaussian mixture with a shared covariance matrix.

    Same ascent as :func:`modal_em_ascend`; with a common covariance the
    maximization step reduces to the posterior-weighted mean regardless of
    the covariance.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    weights = np.asarray(weights, dtype=float)
    cf = cho_factor(np.asarray(covariance, dtype=float), lower=True)
    logw = np.log(np.maximum(weights, 1e-300))
    x = np.asarray(start, dtype=float).copy()
    for _ in range(max_iter):
        diff = x[None, :] - means
        maha = np.einsum("rp,rp->r", diff, cho_solve(cf, diff.T).T)
        logp = logw - 0.5 * maha
        logp -= logp.max()
        post = np.exp(logp)
        post /= post.sum()
        x_new = post @ means
        step = float(np.linalg.norm(x_new - x))
        x = x_new
        if step < tol:
            return x
    raise ModalEmError(f"no convergence within {max_iter} iterations (tol={tol})")


def _batch_ascend(kd: KernelDensity, starts: np.ndarray, tol: float,
                  max_iter: int) -> np.ndarray:
    """Ascend many start points at once; rows converge independently."""
    X = np.atleast_2d(np.asarray(starts, dtype=float)).copy()
    active = np.arange(X.shape[0])
    two_s2 = 2.0 * kd.sigma ** 2
    for _ in range(max_iter):
        cur = X[active]
        expo = -_sq_distances(cur, kd.centers) / two_s2
        expo -= expo.max(axis=1, keepdims=True)
        W = np.exp(expo)
        nxt = (W @ kd.centers) / W.sum(axis=1, keepdims=True)
        steps = np.linalg.norm(nxt - cur, axis=1)
        X[active] = nxt
        active = active[steps >= tol]
        if active.size == 0:
            return X
    raise ModalEmError(
        f"{active.size} ascents did not converge within {max_iter} iterations")


def _merge_converged(points: np.ndarray, log_density: np.ndarray,
                     tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Group converged points within ``tol`` (single linkage, to fixpoint).

    Returns (representatives, group index per input point). The group
    representative is its member of highest density (ties: lowest index),
    so representatives stay pairwise separated by more than ``tol``.
    """
    m = points.shape[0]
    parent = np.arange(m)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    close = _sq_distances(points, points) < tol ** 2
    for i in range(m):
        for j in np.flatnonzero(close[i, i + 1:]) + i + 1:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)

    roots = np.array([find(i) for i in range(m)])
    reps = []
    group_of = np.empty(m, dtype=int)
    for g, root in enumerate(np.unique(roots)):
        members = np.flatnonzero(roots == root)
        best = members[np.argmax(log_density[members])]
        reps.append(best)
        group_of[members] = g
    reps = np.array(reps)

    # Chains of near-tolerance merges can leave representatives closer than
    # tol to each other; merge again until separation holds.
    if reps.size > 1:
        rep_pts = points[reps]
        if np.any(_sq_distances(rep_pts, rep_pts)[np.triu_indices(reps.size, 1)] < tol ** 2):
            sub_reps, sub_groups = _merge_converged(rep_pts, log_density[reps], tol)
            return points[reps[sub_reps]], sub_groups[group_of]
    return points[reps], group_of


def hmac_ladder(data, sigmas, *, merge_tol_scale: float = MERGE_TOL_SCALE,
                tol: float = STEP_TOL, max_iter: int = 10_000) -> ModeLadder:
    """Modes of the kernel density at each bandwidth of an increasing grid.

    Level 0 conceptually has every data point as its own mode. At each
    bandwidth the previous level's modes are ascended under the kernel
    density of the *original* data and merged when closer than
    ``merge_tol_scale * sigma``; each data row's assignment is chained
    through the levels and mode weights are the assigned data fractions.

    ``data`` may be a raw (n, p) matrix or anything with an ``X`` attribute.
    The ascent budget is larger than the single-ascent default because
    plateau crossings legitimately take thousands of tiny steps.
    """
    X = np.asarray(getattr(data, "X", data), dtype=float)
    sigmas = [float(s) for s in np.atleast_1d(sigmas)]
    if not sigmas:
        raise ValueError("need at least one bandwidth")
    if any(s <= 0 for s in sigmas):
        raise ValueError("bandwidths must be positive")
    if any(b <= a for a, b in zip(sigmas, sigmas[1:])):
        raise ValueError("bandwidths must be strictly increasing")

    n = X.shape[0]
    reps = X
    chain = np.arange(n)  # data row -> current mode index
    levels = []
    for sigma in sigmas:
        kd = KernelDensity(X, sigma)
        converged = _batch_ascend(kd, reps, tol, max_iter)
        logd = _kde_log_density_many(kd, converged)
        modes, group_of = _merge_converged(converged, logd, merge_tol_scale * sigma)
        chain = group_of[chain]
        weights = np.bincount(chain, minlength=modes.shape[0]) / n
        levels.append(ModeSet(sigma=sigma, modes=modes, weights=weights,
                              assignment=chain.copy()))
        reps = modes
    return ModeLadder(tuple(levels))

"""Constrained subspaces from weighted PCA over modes and/or class means.

A :class:`Subspace` splits R^p into a d-dimensional constrained part (where
mixture component means are allowed to spread) and its q = p - d null part
(where all component means share one projection). Bases carry a canonical
sign so serialized subspaces are reproducible.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

__all__ = [
    "Subspace",
    "WeightedPointSet",
    "weighted_pca",
    "mpca",
    "mpca_mean",
    "closeness",
    "discriminant_subspace",
    "full_space",
]

ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class Subspace:
    """Orthonormal split of R^p into constrained and null directions.

    ``v_constrained`` is p x d, ``v_null`` is p x q with d + q = p. The
    provenance tag records how the subspace was produced, e.g.
    ``MPCA(sigma=0.5)``, ``MPCA-MEAN(sigma=0.5,gamma=60)``, ``CLASS-MEANS``
    or ``USER``.
    """

    v_constrained: np.ndarray
    v_null: np.ndarray
    provenance: str = "USER"

    def __post_init__(self):
        vc = np.atleast_2d(np.asarray(self.v_constrained, dtype=float))
        vn = np.atleast_2d(np.asarray(self.v_null, dtype=float))
        p = max(vc.shape[0], vn.shape[0])
        if vc.size == 0:
            vc = vc.reshape(p, 0)
        if vn.size == 0:
            vn = vn.reshape(p, 0)
        if vc.shape[0] != vn.shape[0] or vc.shape[1] + vn.shape[1] != vc.shape[0]:
            raise ValueError(
                f"bases must split R^p: got {vc.shape} and {vn.shape}")
        both = np.hstack([vc, vn])
        if not np.allclose(both.T @ both, np.eye(p), atol=ORTHO_TOL):
            raise ValueError("basis columns are not orthonormal")
        vc.setflags(write=False)
        vn.setflags(write=False)
        object.__setattr__(self, "v_constrained", vc)
        object.__setattr__(self, "v_null", vn)

    @property
    def p(self) -> int:
        return self.v_constrained.shape[0]

    @property
    def d(self) -> int:
        return self.v_constrained.shape[1]

    @property
    def q(self) -> int:
        return self.v_null.shape[1]

    def to_json_dict(self) -> dict:
        return {
            "d": self.d,
            "q": self.q,
            "provenance": self.provenance,
            "v_constrained": self.v_constrained.tolist(),
            "v_null": self.v_null.tolist(),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Subspace":
        p = len(doc["v_constrained"]) or len(doc["v_null"])
        vc = np.asarray(doc["v_constrained"], dtype=float).reshape(p, doc["d"])
        vn = np.asarray(doc["v_null"], dtype=float).reshape(p, doc["q"])
        return cls(vc, vn, doc.get("provenance", "USER"))


@dataclass(frozen=True)
class WeightedPointSet:
    """Points with a probability weight per point."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (pts.shape[0],):
            raise ValueError("need one weight per point")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def scatter(self) -> np.ndarray:
        """Weighted covariance around the weighted mean."""
        mu = self.weights @ self.points
        centered = self.points - mu
        return (centered * self.weights[:, None]).T @ centered


def _canonical_sign(V: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive."""
    V = V.copy()
    for j in range(V.shape[1]):
        i = int(np.argmax(np.abs(V[:, j])))
        if V[i, j] < 0:
            V[:, j] = -V[:, j]
    return V


def _sorted_eigh(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition with descending eigenvalues and canonical signs.

    Exact eigenvalue ties are broken by lexicographic comparison of the
    sign-normalized eigenvectors, so the basis is reproducible.
    """
    vals, vecs = np.linalg.eigh(S)
    order = np.argsort(vals, kind="stable")[::-1]
    vals, vecs = vals[order], _canonical_sign(vecs[:, order])
    i = 0
    while i < len(vals):
        j = i + 1
        while j < len(vals) and vals[j] == vals[i]:
            j += 1
        if j - i > 1:
            block = vecs[:, i:j]
            lex = np.lexsort(block[::-1])  # compare first entries first
            vecs[:, i:j] = block[:, lex]
        i = j
    return vals, vecs


def _principal_split(scatter: np.ndarray, d: int, provenance: str) -> Subspace:
    p = scatter.shape[0]
    vals, vecs = _sorted_eigh(scatter)
    rank = int(np.sum(vals > max(vals[0], 0.0) * 1e-12)) if vals[0] > 0 else 0
    if rank < d:
        warnings.warn(
            f"scatter has rank {rank} < d={d}; basis completed deterministically "
            "from the zero-variance eigenvectors",
            stacklevel=3,
        )
    return Subspace(vecs[:, :d], vecs[:, d:], provenance)


def weighted_pca(ps: WeightedPointSet, d: int, provenance: str = "USER") -> Subspace:
    """Split R^p along the weighted principal axes of a point set.

    The top-d eigenvectors of the weighted scatter span the constrained
    subspace, the remaining p - d its null complement. Rank-deficient
    scatters are completed from the zero-eigenvalue eigenvectors with a
    warning.
    """
    m, p = ps.points.shape
    if m < 2:
        raise ValueError("need at least 2 points")
    if not 1 <= d < p:
        raise ValueError(f"need 1 <= d < p, got d={d}, p={p}")
    return _principal_split(ps.scatter(), d, provenance)


def mpca(mode_set, d: int) -> Subspace | None:
    """Constrained subspace from the weighted PCA of a bandwidth's modes.

    Returns None (a skip signal, not an error) when the mode set has fewer
    than 3 modes and cannot usefully span a subspace.
    """
    if mode_set.n_modes < 3:
        return None
    ps = WeightedPointSet(mode_set.modes, mode_set.weights)
    return weighted_pca(ps, d, provenance=f"MPCA(sigma={mode_set.sigma:g})")


def mpca_mean(mode_set, cs, d: int, gamma: float = 60.0) -> Subspace:
    """Constrained subspace from class means, or a mean/mode blend.

    When ``d < K`` the subspace comes from the weighted PCA of the class
    means alone (weights = class priors; modes are ignored and ``mode_set``
    may be None). Otherwise gamma percent of the total weight goes to the
    class means and the rest to the modes, each group centered at its own
    weighted mean, and the blended scatter is eigendecomposed.
    """
    if not 0.0 <= gamma <= 100.0:
        raise ValueError("gamma is a percentage in [0, 100]")
    K = cs.priors.shape[0]
    p = cs.means.shape[1]
    if d >= p:
        raise ValueError(f"need d < p, got d={d}, p={p}")
    if d < K:
        if K < 2:
            raise ValueError("class-means subspace needs at least 2 classes")
        ps = WeightedPointSet(cs.means, cs.priors)
        return weighted_pca(ps, d, provenance="CLASS-MEANS")
    if mode_set is None:
        raise ValueError("d >= K requires a mode set to blend with the class means")
    g = gamma / 100.0
    mean_scatter = WeightedPointSet(cs.means, cs.priors).scatter()
    mode_scatter = WeightedPointSet(mode_set.modes, mode_set.weights).scatter()
    blended = g * mean_scatter + (1.0 - g) * mode_scatter
    return _principal_split(
        blended, d, provenance=f"MPCA-MEAN(sigma={mode_set.sigma:g},gamma={gamma:g})")


def closeness(s1: Subspace, s2: Subspace) -> float:
    """Similarity of two equal-dimension subspaces, in [0, d].

    Sum over basis pairs of the squared projections; d when the spans are
    identical, 0 when orthogonal, symmetric in its arguments.
    """
    if s1.d != s2.d:
        raise ValueError(f"dimension mismatch: {s1.d} vs {s2.d}")
    return float(np.sum((s1.v_constrained.T @ s2.v_constrained) ** 2))


def _orth(A: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the column span of A, deterministic signs."""
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    rank = int(np.sum(s > s[0] * 1e-12))
    return _canonical_sign(U[:, :rank])


def discriminant_subspace(s: Subspace, Sigma: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the directions informative for classification.

    For component means confined to ``s`` under a shared covariance, only
    the projection of the data onto span(Sigma^-1 v) for constrained basis
    vectors v carries class information; this returns an orthonormal p x d
    basis of that span.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    try:
        cf = cho_factor(Sigma, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "covariance is singular; apply the estimator's ridge floor before "
            "taking the discriminant subspace") from exc
    mapped = cho_solve(cf, s.v_constrained)
    basis = _orth(mapped)
    if basis.shape[1] != s.d:
        raise ValueError("covariance is numerically singular on the constrained span")
    return basis


def full_space(p: int) -> Subspace:
    """The unconstrained subspace (d = p, empty null basis)."""
    return Subspace(np.eye(p), np.zeros((p, 0)), provenance="USER")

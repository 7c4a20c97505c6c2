import json

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from subgauss.cgmm import (
    ConstrainedGmm,
    DegenerateFitError,
    Responsibilities,
    classify,
    cluster,
    e_step,
    fit_unconstrained,
    gem_fit,
    log_likelihood,
    m_step_covariance,
    m_step_priors,
    solve_constrained_means,
    solve_constrained_means_per_class,
)
from subgauss.dataset import LabeledDataset
from subgauss.modes import mixture_modal_ascent
from subgauss.subspace import Subspace, full_space


def random_spd(rng, p, jitter=0.5):
    A = rng.normal(size=(p, p))
    return A @ A.T + jitter * np.eye(p)


def random_split(rng, p, q):
    Q, _ = np.linalg.qr(rng.normal(size=(p, p)))
    return Subspace(Q[:, q:], Q[:, :q])


def make_resp(rng, p, q_dim, K, R_k, n_scale=20.0):
    """Synthetic responsibilities (mass + weighted means only)."""
    rows, mass, wmeans = [], [], []
    start = 0
    for k in range(K):
        R = R_k[k]
        l = rng.uniform(0.5, 1.0, size=R) * n_scale
        n_k = int(np.ceil(l.sum()))
        rows.append(np.arange(start, start + n_k))
        start += n_k
        mass.append(l)
        wmeans.append(rng.normal(size=(R, p)) * 3)
    return Responsibilities(tuple(rows), tuple(mass), tuple(wmeans), None, start)


def kkt_oracle(resp, Sigma, subspace, per_class):
    """Equality-constrained weighted least squares via the KKT system.

    Independent of the solver's whitening/SVD construction: stacks the
    stationarity and constraint equations for every group and solves the
    dense linear system directly.
    """
    A = subspace.v_null.T  # (q, p)
    q, p = A.shape
    Sinv = np.linalg.inv(Sigma)
    mass = [l for l in resp.mass]
    xbar = [m for m in resp.weighted_means]
    if per_class:
        groups = [[(k, r) for r in range(len(mass[k]))] for k in range(len(mass))]
    else:
        groups = [[(k, r) for k in range(len(mass)) for r in range(len(mass[k]))]]

    solution = [np.zeros_like(m) for m in xbar]
    for group in groups:
        m = len(group)
        n_unknown = m * p + (m - 1) * q
        M = np.zeros((n_unknown, n_unknown))
        b = np.zeros(n_unknown)
        for j, (k, r) in enumerate(group):
            sl = slice(j * p, (j + 1) * p)
            M[sl, sl] = 2 * mass[k][r] * Sinv
            b[sl] = 2 * mass[k][r] * Sinv @ xbar[k][r]
            if j >= 1:
                lam = slice(m * p + (j - 1) * q, m * p + j * q)
                M[sl, lam] = A.T
                M[slice(0, p), lam] = -A.T  # reference component c0
                M[lam, sl] = A
                M[lam, slice(0, p)] = -A
        mu = np.linalg.solve(M, b)
        for j, (k, r) in enumerate(group):
            solution[k][r] = mu[j * p:(j + 1) * p]
    return solution


def naive_em_iterations(ds, init, n_iters):
    """Plain per-class EM oracle (scipy densities), returns the trace."""
    K = init.K
    groups = ([np.arange(ds.n)] if K == 1
              else [ds.rows_of_class(k) for k in range(1, K + 1)])
    pis = [np.asarray(w, float) for w in init.component_priors]
    mus = [np.asarray(m, float) for m in init.means]
    Sigma = np.asarray(init.covariance, float)
    trace = []
    for _ in range(n_iters):
        qs = []
        for k, rows in enumerate(groups):
            dens = np.stack([
                pis[k][r] * multivariate_normal.pdf(ds.X[rows], mus[k][r], Sigma)
                for r in range(len(pis[k]))], axis=1)
            qs.append(dens / dens.sum(axis=1, keepdims=True))
        S = np.zeros((ds.p, ds.p))
        for k, rows in enumerate(groups):
            l = qs[k].sum(axis=0)
            pis[k] = l / len(rows)
            mus[k] = (qs[k].T @ ds.X[rows]) / l[:, None]
            for r in range(len(l)):
                diff = ds.X[rows] - mus[k][r]
                S += (diff * qs[k][:, r][:, None]).T @ diff
        Sigma = S / ds.n
        ll = 0.0
        for k, rows in enumerate(groups):
            dens = np.stack([
                pis[k][r] * multivariate_normal.pdf(ds.X[rows], mus[k][r], Sigma)
                for r in range(len(pis[k]))], axis=1)
            ll += np.sum(np.log(dens.sum(axis=1)))
            if K > 1:
                ll += len(rows) * np.log(init.class_priors[k])
        trace.append(float(ll))
    return trace


def sample_from_model(rng, model, n_per_class):
    """Draw labeled data from a mixture model (oracle generator)."""
    blocks, labels = [], []
    for k in range(model.K):
        comp = rng.choice(len(model.component_priors[k]), size=n_per_class,
                          p=model.component_priors[k])
        noise = rng.multivariate_normal(np.zeros(model.p), model.covariance,
                                        size=n_per_class)
        blocks.append(model.means[k][comp] + noise)
        labels.extend([k + 1] * n_per_class)
    return LabeledDataset.from_arrays(np.vstack(blocks), np.asarray(labels))


class TestFitUnconstrained:
    def test_single_component_closed_form(self):
        rng = np.random.default_rng(50)
        X = rng.normal(size=(40, 3))
        y = np.array([1] * 25 + [2] * 15)
        ds = LabeledDataset.from_arrays(X, y)
        model = fit_unconstrained(ds, 1, seed=0)
        for k in (1, 2):
            assert np.allclose(model.means[k - 1][0],
                               X[y == k].mean(axis=0), atol=1e-10)
        pooled = np.zeros((3, 3))
        for k in (1, 2):
            diff = X[y == k] - X[y == k].mean(axis=0)
            pooled += diff.T @ diff
        assert np.allclose(model.covariance, pooled / 40, atol=1e-10)
        assert np.allclose(model.class_priors, [25 / 40, 15 / 40])

    def test_two_blob_recovery(self):
        rng = np.random.default_rng(51)
        centers = np.array([[0.0, 0.0], [8.0, 8.0]])
        X = np.vstack([rng.normal(size=(150, 2)) * 0.5 + c for c in centers])
        ds = LabeledDataset(X)
        model = fit_unconstrained(ds, 2, seed=3)
        got = np.array(sorted(model.means[0].tolist()))
        assert np.allclose(got, centers, atol=0.1)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(52)
        ds = LabeledDataset.from_arrays(rng.normal(size=(30, 2)),
                                        [1] * 15 + [2] * 15)
        a = fit_unconstrained(ds, 2, seed=9)
        b = fit_unconstrained(ds, 2, seed=9)
        assert np.array_equal(a.covariance, b.covariance)
        assert all(np.array_equal(x, y) for x, y in zip(a.means, b.means))

    def test_too_many_components(self):
        ds = LabeledDataset.from_arrays(np.eye(3), [1, 1, 2])
        with pytest.raises(DegenerateFitError):
            fit_unconstrained(ds, 3, seed=0)


class TestEStep:
    def test_single_component_gives_ones(self):
        rng = np.random.default_rng(53)
        ds = LabeledDataset.from_arrays(rng.normal(size=(10, 2)), [1] * 10)
        model = fit_unconstrained(ds, 1, seed=0)
        resp = e_step(model, ds)
        assert np.allclose(resp.posteriors[0], 1.0)

    def test_equidistant_symmetry(self):
        means = (np.array([[[-1.0, 0.0], [1.0, 0.0]]]))[0]
        model = ConstrainedGmm(np.array([1.0]), (np.array([0.5, 0.5]),),
                               (means,), np.eye(2), full_space(2))
        ds = LabeledDataset(np.array([[0.0, 5.0]]))
        resp = e_step(model, ds)
        assert np.allclose(resp.posteriors[0][0], [0.5, 0.5])

    def test_matches_naive_density_ratio(self):
        rng = np.random.default_rng(54)
        p, K = 3, 2
        Sigma = random_spd(rng, p)
        model = ConstrainedGmm(
            np.array([0.4, 0.6]),
            (np.array([0.3, 0.7]), np.array([0.5, 0.5])),
            (rng.normal(size=(2, p)), rng.normal(size=(2, p))),
            Sigma, full_space(p))
        ds = LabeledDataset.from_arrays(rng.normal(size=(20, p)),
                                        rng.integers(1, K + 1, size=20))
        resp = e_step(model, ds)
        for k in range(K):
            rows = ds.rows_of_class(k + 1)
            dens = np.stack([
                model.component_priors[k][r]
                * multivariate_normal.pdf(ds.X[rows], model.means[k][r], Sigma)
                for r in range(2)], axis=1)
            oracle = dens / dens.sum(axis=1, keepdims=True)
            assert np.allclose(resp.posteriors[k], oracle, atol=1e-10)


class TestMStepPriors:
    def test_hard_counts(self):
        resp = Responsibilities(
            (np.arange(4),), (np.array([3.0, 1.0]),), (np.zeros((2, 1)),), None, 4)
        assert np.allclose(m_step_priors(resp)[0], [0.75, 0.25])

    def test_uniform(self):
        resp = Responsibilities(
            (np.arange(6),), (np.array([3.0, 3.0]),), (np.zeros((2, 1)),), None, 6)
        assert np.allclose(m_step_priors(resp)[0], [0.5, 0.5])

    def test_normalized(self):
        rng = np.random.default_rng(55)
        resp = make_resp(rng, 2, 1, 2, [3, 2])
        for pi, l in zip(m_step_priors(resp), resp.mass):
            assert np.isclose(pi.sum(), l.sum() / l.sum() * pi.sum())
            assert np.all(pi >= 0)


class TestSolveConstrainedMeans:
    def test_fully_constrained_collapses_to_global_mean(self):
        rng = np.random.default_rng(56)
        p = 3
        resp = make_resp(rng, p, p, 2, [2, 2])
        Sigma = random_spd(rng, p)
        sub = Subspace(np.zeros((p, 0)), np.eye(p))
        solved = solve_constrained_means(resp, Sigma, sub)
        total_mass = sum(l.sum() for l in resp.mass)
        global_mean = sum(l @ m for l, m in zip(resp.mass, resp.weighted_means))
        global_mean /= total_mass
        for mu in solved:
            assert np.allclose(mu, global_mean, atol=1e-8)

    def test_identity_covariance_is_projection(self):
        rng = np.random.default_rng(57)
        p, q = 4, 2
        sub = random_split(rng, p, q)
        resp = make_resp(rng, p, q, 2, [2, 1])
        solved = solve_constrained_means(resp, np.eye(p), sub)
        null_proj = np.vstack([m @ sub.v_null for m in solved])
        assert np.max(null_proj.max(axis=0) - null_proj.min(axis=0)) < 1e-10
        for mu, xbar in zip(solved, resp.weighted_means):
            assert np.allclose(mu @ sub.v_constrained,
                               xbar @ sub.v_constrained, atol=1e-10)

    def test_unconstrained_passthrough(self):
        rng = np.random.default_rng(58)
        resp = make_resp(rng, 3, 0, 1, [2])
        solved = solve_constrained_means(resp, np.eye(3), full_space(3))
        assert np.allclose(solved[0], resp.weighted_means[0])

    @pytest.mark.parametrize("trial", range(10))
    def test_matches_kkt_oracle(self, trial):
        rng = np.random.default_rng(600 + trial)
        p = int(rng.integers(2, 7))
        q = int(rng.integers(1, p))
        K = int(rng.integers(1, 4))
        R_k = [int(rng.integers(1, 4)) for _ in range(K)]
        sub = random_split(rng, p, q)
        Sigma = random_spd(rng, p)
        resp = make_resp(rng, p, q, K, R_k)
        solved = solve_constrained_means(resp, Sigma, sub)
        oracle = kkt_oracle(resp, Sigma, sub, per_class=False)
        for a, b in zip(solved, oracle):
            assert np.max(np.abs(a - b)) < 1e-6

    @pytest.mark.parametrize("trial", range(10))
    def test_per_class_matches_kkt_oracle(self, trial):
        rng = np.random.default_rng(700 + trial)
        p = int(rng.integers(2, 7))
        q = int(rng.integers(1, p))
        K = int(rng.integers(2, 4))
        R_k = [int(rng.integers(1, 4)) for _ in range(K)]
        sub = random_split(rng, p, q)
        Sigma = random_spd(rng, p)
        resp = make_resp(rng, p, q, K, R_k)
        solved = solve_constrained_means_per_class(resp, Sigma, sub)
        oracle = kkt_oracle(resp, Sigma, sub, per_class=True)
        for a, b in zip(solved, oracle):
            assert np.max(np.abs(a - b)) < 1e-6

    def test_per_class_single_class_equals_shared(self):
        rng = np.random.default_rng(59)
        p, q = 4, 2
        sub = random_split(rng, p, q)
        Sigma = random_spd(rng, p)
        resp = make_resp(rng, p, q, 1, [3])
        a = solve_constrained_means(resp, Sigma, sub)
        b = solve_constrained_means_per_class(resp, Sigma, sub)
        assert np.allclose(a[0], b[0], atol=1e-12)

    def test_per_class_fully_constrained_collapses_to_class_means(self):
        rng = np.random.default_rng(60)
        p = 3
        resp = make_resp(rng, p, p, 2, [2, 2])
        Sigma = random_spd(rng, p)
        sub = Subspace(np.zeros((p, 0)), np.eye(p))
        solved = solve_constrained_means_per_class(resp, Sigma, sub)
        for mu, l, m in zip(solved, resp.mass, resp.weighted_means):
            class_mean = l @ m / l.sum()
            assert np.allclose(mu, class_mean[None, :], atol=1e-8)


class TestMStepCovariance:
    def test_reduces_to_mle(self):
        rng = np.random.default_rng(61)
        X = rng.normal(size=(25, 3))
        ds = LabeledDataset(X)
        mean = X.mean(axis=0)
        resp = Responsibilities((np.arange(25),), (np.array([25.0]),),
                                (mean[None, :],), (np.ones((25, 1)),), 25)
        S = m_step_covariance(ds, resp, (mean[None, :],))
        centered = X - mean
        assert np.allclose(S, centered.T @ centered / 25, atol=1e-12)

    def test_zero_scatter_hits_ridge_floor(self):
        X = np.tile([1.0, 2.0], (5, 1))
        ds = LabeledDataset(X)
        resp = Responsibilities((np.arange(5),), (np.array([5.0]),),
                                (X[:1],), (np.ones((5, 1)),), 5)
        S = m_step_covariance(ds, resp, (X[:1],))
        assert np.allclose(S, 1e-6 * np.eye(2))

    def test_diagonal_flavor(self):
        rng = np.random.default_rng(62)
        X = rng.normal(size=(30, 3)) @ random_spd(rng, 3)
        ds = LabeledDataset(X)
        mean = X.mean(axis=0)
        resp = Responsibilities((np.arange(30),), (np.array([30.0]),),
                                (mean[None, :],), (np.ones((30, 1)),), 30)
        S = m_step_covariance(ds, resp, (mean[None, :],), cov_flavor="diagonal")
        off = S - np.diag(np.diag(S))
        assert np.all(off == 0.0)


def constrained_model(rng, p=4, q=2, K=2, R=2, scale=3.0):
    sub = random_split(rng, p, q)
    common = rng.normal(size=q)
    means = []
    for _ in range(K):
        coords = rng.normal(size=(R, p - q)) * scale
        means.append(sub.v_null @ common + coords @ sub.v_constrained.T)
    pis = tuple(np.full(R, 1.0 / R) for _ in range(K))
    priors = np.full(K, 1.0 / K)
    Sigma = random_spd(rng, p, jitter=1.0)
    return ConstrainedGmm(priors, pis, tuple(means), Sigma, sub)


class TestGemFit:
    def test_likelihood_dominates_generator(self):
        rng = np.random.default_rng(63)
        truth = constrained_model(rng)
        ds = sample_from_model(rng, truth, 60)
        model, trace = gem_fit(ds, truth.subspace, 2, seed=1)
        assert trace[-1] >= log_likelihood(truth, ds) - 1e-6 * ds.n

    def test_full_space_matches_plain_em(self):
        rng = np.random.default_rng(64)
        ds = LabeledDataset.from_arrays(
            np.vstack([rng.normal(size=(30, 2)), rng.normal(size=(30, 2)) + 2]),
            [1] * 30 + [2] * 30)
        init = fit_unconstrained(ds, 2, seed=5, max_iter=3)
        model, trace = gem_fit(ds, full_space(2), 2, seed=5, init=init,
                               max_outer=6, tol=0.0)
        oracle = naive_em_iterations(ds, init, len(trace))
        assert np.allclose(trace, oracle, atol=1e-8)

    def test_constraint_holds_at_convergence(self):
        rng = np.random.default_rng(65)
        truth = constrained_model(rng, p=5, q=2)
        ds = sample_from_model(rng, truth, 50)
        model, _ = gem_fit(ds, truth.subspace, 2, seed=2)
        assert model.constraint_residual() <= 1e-6

    def test_per_class_flavor_constraint(self):
        rng = np.random.default_rng(66)
        truth = constrained_model(rng, p=5, q=2, K=3)
        ds = sample_from_model(rng, truth, 40)
        model, _ = gem_fit(ds, truth.subspace, 2, flavor="per-class", seed=2)
        for m in model.means:
            proj = m @ model.subspace.v_null
            assert np.max(proj.max(axis=0) - proj.min(axis=0)) <= 1e-6

    def test_traces_monotone(self):
        rng = np.random.default_rng(67)
        for trial in range(4):
            truth = constrained_model(rng, p=3, q=1)
            ds = sample_from_model(rng, truth, 40)
            _, trace = gem_fit(ds, truth.subspace, 2, seed=trial)
            assert np.all(np.diff(trace) >= -1e-8 * ds.n)

    def test_invalid_means_rejected_by_model_type(self):
        rng = np.random.default_rng(68)
        sub = random_split(rng, 3, 1)
        means = (rng.normal(size=(2, 3)) * 5,)
        with pytest.raises(ValueError, match="constraint"):
            ConstrainedGmm(np.array([1.0]), (np.array([0.5, 0.5]),), means,
                           np.eye(3), sub)


class TestLogLikelihood:
    def test_density_peak_value(self):
        rng = np.random.default_rng(69)
        Sigma = random_spd(rng, 3)
        x = rng.normal(size=3)
        model = ConstrainedGmm(np.array([1.0]), (np.array([1.0]),),
                               (x[None, :],), Sigma, full_space(3))
        ds = LabeledDataset(x[None, :])
        expected = -0.5 * np.log((2 * np.pi) ** 3 * np.linalg.det(Sigma))
        assert np.isclose(log_likelihood(model, ds), expected, rtol=1e-10)

    def test_duplication_doubles(self):
        rng = np.random.default_rng(70)
        truth = constrained_model(rng)
        ds = sample_from_model(rng, truth, 20)
        doubled = LabeledDataset.from_arrays(
            np.vstack([ds.X, ds.X]), np.concatenate([ds.y, ds.y]))
        assert np.isclose(log_likelihood(truth, doubled),
                          2 * log_likelihood(truth, ds), rtol=1e-12)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(71)
        truth = constrained_model(rng, p=3, q=1)
        ds = sample_from_model(rng, truth, 15)
        naive = 0.0
        for i in range(ds.n):
            k = ds.y[i] - 1
            dens = sum(
                truth.component_priors[k][r]
                * multivariate_normal.pdf(ds.X[i], truth.means[k][r],
                                          truth.covariance)
                for r in range(2))
            naive += np.log(truth.class_priors[k] * dens)
        assert np.isclose(log_likelihood(truth, ds), naive, atol=1e-9)


class TestClassify:
    def test_tie_goes_to_first_class(self):
        means = (np.array([[-1.0, 0.0]]), np.array([[1.0, 0.0]]))
        model = ConstrainedGmm(np.array([0.5, 0.5]),
                               (np.array([1.0]), np.array([1.0])),
                               means, np.eye(2), full_space(2))
        labels, post = classify(model, np.array([[0.0, 3.0]]))
        assert labels[0] == 1
        assert np.allclose(post[0], [0.5, 0.5])

    def test_dominant_prior_wins(self):
        means = (np.array([[0.0, 0.0]]), np.array([[0.2, 0.0]]))
        model = ConstrainedGmm(np.array([0.999, 0.001]),
                               (np.array([1.0]), np.array([1.0])),
                               means, np.eye(2), full_space(2))
        labels, _ = classify(model, np.array([[0.2, 0.0]]))
        assert labels[0] == 1

    @pytest.mark.parametrize("identity_cov", [True, False])
    def test_projected_bayes_rule_agrees(self, identity_cov):
        from subgauss.subspace import discriminant_subspace

        rng = np.random.default_rng(72)
        truth = constrained_model(rng, p=5, q=2, K=3, R=2)
        ds = sample_from_model(rng, truth, 40)
        if identity_cov:
            model = ConstrainedGmm(truth.class_priors, truth.component_priors,
                                   truth.means, np.eye(5), truth.subspace)
        else:
            model, _ = gem_fit(ds, truth.subspace, 2, seed=0)
        probes = rng.normal(size=(200, 5)) * 2
        full_labels, _ = classify(model, probes)
        basis = discriminant_subspace(model.subspace, model.covariance)
        proj_model = ConstrainedGmm(
            model.class_priors, model.component_priors,
            tuple(m @ basis for m in model.means),
            basis.T @ model.covariance @ basis,
            full_space(basis.shape[1]))
        proj_labels, _ = classify(proj_model, probes @ basis)
        assert np.array_equal(full_labels, proj_labels)


class TestCluster:
    def make_model(self):
        means = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        return ConstrainedGmm(np.array([1.0]), (np.full(3, 1 / 3),),
                              (means,), np.eye(2), full_space(2))

    def test_component_mean_assignment(self):
        model = self.make_model()
        labels = cluster(model, np.array([[10.0, 0.0]]))
        assert labels[0] == 2

    def test_tie_to_first(self):
        model = self.make_model()
        labels = cluster(model, np.array([[5.0, 0.0]]))
        assert labels[0] == 1

    def test_matches_e_step_argmax(self):
        rng = np.random.default_rng(73)
        model = self.make_model()
        X = rng.normal(size=(25, 2)) * 4
        ds = LabeledDataset(X)
        resp = e_step(model, ds)
        assert np.array_equal(cluster(model, X),
                              np.argmax(resp.posteriors[0], axis=1) + 1)


class TestTheorem31OnFittedModels:
    def test_modes_share_null_projection(self):
        rng = np.random.default_rng(74)
        truth = constrained_model(rng, p=4, q=2, K=2, R=2)
        ds = sample_from_model(rng, truth, 50)
        model, _ = gem_fit(ds, truth.subspace, 2, seed=0)
        weights, means = model.marginal_components()
        projections = []
        for _ in range(10):
            start = rng.normal(size=4) * 3
            mode = mixture_modal_ascent(means, weights, model.covariance, start,
                                        max_iter=5000)
            projections.append(model.subspace.v_null.T @ mode)
        projections = np.array(projections)
        assert np.max(projections.max(axis=0) - projections.min(axis=0)) < 1e-5


class TestPersistence:
    def test_json_roundtrip_bit_identical(self):
        rng = np.random.default_rng(75)
        truth = constrained_model(rng)
        ds = sample_from_model(rng, truth, 30)
        model, _ = gem_fit(ds, truth.subspace, 2, seed=4)
        text = json.dumps(model.to_json_dict())
        back = ConstrainedGmm.from_json_dict(json.loads(text))
        assert np.array_equal(back.covariance, model.covariance)
        for a, b in zip(back.means, model.means):
            assert np.array_equal(a, b)
        assert np.array_equal(back.subspace.v_null, model.subspace.v_null)
        assert back.fit_trace == model.fit_trace
        assert back.seed == model.seed

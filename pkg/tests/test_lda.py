import warnings

import numpy as np
import pytest
import scipy.linalg

from flowlda import lda
from flowlda.dataset import LabeledDataset
from flowlda.errors import ContractError, ConvergenceWarning, DimensionError


def make_gaussian_data(rng, n_per_class=3000, dim=3, class_dim=2, num_classes=3, mix=None):
    """Homoscedastic class Gaussians with mean-split latent structure."""
    latent_means = np.zeros((num_classes, dim))
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    latent_means[:, 0] = 3.0 * np.cos(angles)
    latent_means[:, 1] = 3.0 * np.sin(angles)
    latent_means -= latent_means.mean(axis=0)
    z = np.concatenate(
        [latent_means[c] + rng.standard_normal((n_per_class, dim)) for c in range(num_classes)]
    )
    labels = np.repeat(np.arange(num_classes), n_per_class)
    if mix is None:
        mix = np.eye(dim) + 0.3 * rng.standard_normal((dim, dim))
    x = z @ np.linalg.inv(mix).T  # x = mix^-1 z, so the generating projection is mix
    return LabeledDataset(x, labels), mix, latent_means


class TestScatter:
    def test_hand_example(self):
        x = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0], [2.0, 1.0]])
        y = np.array([0, 0, 1, 1])
        sc = lda.scatter_matrices(x, y)
        assert np.allclose(sc.within, [[4.0, 0.0], [0.0, 0.0]])
        assert np.allclose(sc.between, [[0.0, 0.0], [0.0, 1.0]])

    def test_within_plus_between_is_total(self, rng):
        x = rng.normal(size=(200, 4))
        y = rng.integers(0, 3, 200)
        sc = lda.scatter_matrices(x, y)
        dev = x - x.mean(axis=0)
        assert np.abs(sc.total - dev.T @ dev).max() < 1e-8


class TestFisher:
    def test_symmetry_forced_direction(self, rng):
        n = 3000
        a = rng.standard_normal((n, 2)) * 0.4
        b = rng.standard_normal((n, 2)) * 0.4 + [1.0, 0.0]
        data = LabeledDataset(np.vstack([a, b]), np.r_[np.zeros(n), np.ones(n)].astype(int))
        model = lda.fit_fisher(data, 1)
        direction = model.projection[0] / np.linalg.norm(model.projection[0])
        assert abs(abs(direction[0]) - 1.0) < 0.05

    def test_hand_scatter_direction(self):
        x = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0], [2.0, 1.0]])
        data = LabeledDataset(x, np.array([0, 0, 1, 1]))
        model = lda.fit_fisher(data, 1)
        direction = model.projection[0] / np.linalg.norm(model.projection[0])
        assert abs(direction[1]) > 0.999

    def test_orthonormal_on_isotropic_classes(self, rng):
        data, _, _ = make_gaussian_data(rng, n_per_class=10000, mix=np.eye(3))
        model = lda.fit_fisher(data, 2)
        gram = model.projection @ model.projection.T
        assert np.abs(gram - np.eye(3)).max() < 1e-2

    def test_rayleigh_ratio_matches_eigenvalues(self, rng):
        data, _, _ = make_gaussian_data(rng, n_per_class=500, dim=4, num_classes=4)
        sc = lda.scatter_matrices(data.features, data.labels)
        model = lda.fit_fisher(data, 2)
        vals = scipy.linalg.eigh(sc.between, sc.within, eigvals_only=True)[::-1]
        for i in range(2):
            v = model.projection[i]
            ratio = (v @ sc.between @ v) / (v @ sc.within @ v)
            assert abs(ratio - vals[i]) < 1e-8 * max(1.0, vals[i])

    def test_affine_reparameterization_invariance(self, rng):
        data, _, _ = make_gaussian_data(rng, n_per_class=400, dim=4, num_classes=3)
        t = np.eye(4) + 0.4 * rng.standard_normal((4, 4))
        mapped = LabeledDataset(data.features @ t.T, data.labels)
        m1 = lda.fit_fisher(data, 2)
        m2 = lda.fit_fisher(mapped, 2)
        # The latent discriminant subspaces coincide: projections of the same
        # points agree up to an orthogonal transform, so compare spans.
        a = m1.projection[:2]
        b = m2.projection[:2] @ t
        angles = scipy.linalg.subspace_angles(a.T, b.T)
        assert np.degrees(angles).max() < 0.1

    def test_preconditions(self, rng):
        x = rng.normal(size=(10, 3))
        with pytest.raises(ContractError):
            lda.fit_fisher(LabeledDataset(x, np.zeros(10, dtype=int)), 1)
        with pytest.raises(ContractError):
            lda.fit_fisher(LabeledDataset(x, np.r_[np.zeros(9), 1].astype(int)), 1)
        data = LabeledDataset(x, np.r_[np.zeros(5), np.ones(5)].astype(int))
        with pytest.raises(ContractError):
            lda.fit_fisher(data, 2)  # p > classes - 1


class TestMl:
    def test_reaches_generating_likelihood(self, rng):
        data, mix, latent_means = make_gaussian_data(rng)
        model = lda.fit_ml(data, 2)
        z = data.features @ mix.T
        mu_rows = latent_means[data.labels]
        generating = (
            -0.5 * ((z - mu_rows) ** 2).sum(axis=1).mean()
            - 0.5 * 3 * np.log(2 * np.pi)
            + np.linalg.slogdet(mix)[1]
        )
        achieved = model.objective_trace[-1]
        assert achieved >= generating - 0.01 * abs(generating)

    def test_matches_fisher_subspace(self, rng):
        data, _, _ = make_gaussian_data(rng, n_per_class=4000)
        ml = lda.fit_ml(data, 2)
        fisher = lda.fit_fisher(data, 2)
        angles = scipy.linalg.subspace_angles(ml.projection[:2].T, fisher.projection[:2].T)
        assert np.degrees(angles).max() < 5.0

    def test_single_class_whitens(self, rng):
        chol = np.array([[1.0, 0.0], [0.7, 0.5]])
        x = rng.standard_normal((10000, 2)) @ chol.T
        data = LabeledDataset(x, np.zeros(10000, dtype=int))
        model = lda.fit_ml(data, 1)
        z = model.transform(x)
        cov = np.cov(z, rowvar=False)
        assert np.abs(cov - np.eye(2)).max() < 5e-2

    def test_trace_monotone(self, rng):
        data, _, _ = make_gaussian_data(rng, n_per_class=300)
        model = lda.fit_ml(data, 2)
        assert np.all(np.diff(model.objective_trace) >= -1e-9)

    def test_warns_when_not_converged(self, rng):
        data, _, _ = make_gaussian_data(rng, n_per_class=200)
        with pytest.warns(ConvergenceWarning):
            lda.fit_ml(data, 2, max_iter=3)

    def test_latent_mean_invariant(self, rng):
        data, _, _ = make_gaussian_data(rng, n_per_class=500)
        model = lda.fit_ml(data, 2)
        # stored class means are the exact latent means mapped back
        latent = model.latent_means()
        assert np.abs(latent[:, 2]).max() < 1e-12  # shared tail pinned at zero
        z = model.transform(data.features)
        for i, c in enumerate(model.classes):
            observed = z[data.labels == c, :2].mean(axis=0)
            assert np.abs(observed - latent[i, :2]).max() < 1e-9


class TestModelSurface:
    def test_project_identity(self):
        model = lda.LdaModel(
            projection=np.eye(3),
            class_means=np.zeros((2, 3)),
            covariance=np.eye(3),
            reduced_dim=3,
            classes=np.array([0, 1]),
        )
        x = np.array([3.0, 4.0, 5.0])
        assert np.array_equal(model.project(x), x)
        model.reduced_dim = 1
        assert np.array_equal(model.project(x), [3.0])

    def test_project_matches_matmul_truncate(self, rng):
        proj = rng.normal(size=(4, 4)) + np.eye(4)
        model = lda.LdaModel(
            projection=proj,
            class_means=np.zeros((2, 4)),
            covariance=np.eye(4),
            reduced_dim=2,
            classes=np.array([0, 1]),
        )
        x = rng.normal(size=(7, 4))
        assert np.array_equal(model.project(x), (x @ proj.T)[:, :2])

    def test_project_dim_mismatch(self):
        model = lda.LdaModel(
            projection=np.eye(3),
            class_means=np.zeros((2, 3)),
            covariance=np.eye(3),
            reduced_dim=2,
            classes=np.array([0, 1]),
        )
        with pytest.raises(DimensionError):
            model.project(np.zeros(4))

    def test_density_consistency(self, rng):
        """Latent-space density times the volume term equals the observation
        density of the Gaussian with covariance implied by the projection."""
        data, _, _ = make_gaussian_data(rng, n_per_class=400)
        for fit in (lda.fit_ml, lda.fit_fisher):
            model = fit(data, 2)
            sigma = np.linalg.inv(model.projection) @ np.linalg.inv(model.projection).T
            x = data.features[:50]
            c = int(model.classes[1])
            via_latent = model.log_prob(x, c)
            nu = model.class_means[1]
            dev = x - nu
            solve = np.linalg.solve(sigma, dev.T).T
            direct = (
                -0.5 * np.einsum("ij,ij->i", dev, solve)
                - 0.5 * 3 * np.log(2 * np.pi)
                - 0.5 * np.linalg.slogdet(sigma)[1]
            )
            assert np.abs(via_latent - direct).max() < 1e-6

    def test_log_prob_unknown_class(self, rng):
        data, _, _ = make_gaussian_data(rng, n_per_class=100)
        model = lda.fit_fisher(data, 2)
        with pytest.raises(ContractError):
            model.log_prob(data.features[0], 99)

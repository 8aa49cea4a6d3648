import numpy as np
import pytest

from flowlda import diffcore as dc
from flowlda import flows, lda
from flowlda.dataset import LabeledDataset
from flowlda.dnf import ClassPrior, DnfModel, init_class_means
from flowlda.errors import ContractError

from conftest import central_difference, max_relative_error


def identity_model(dim=3, num_classes=1, class_dim=None):
    return DnfModel(flows.FlowStack([], dim=dim), ClassPrior(num_classes, dim, class_dim))


class TestLogProb:
    def test_standard_normal_at_mode(self):
        model = identity_model()
        assert model.log_prob(np.zeros(3), 0) == pytest.approx(-2.75682, abs=1e-5)

    def test_unit_offset(self):
        model = identity_model()
        x = np.array([1.0, 0.0, 0.0])
        assert model.log_prob(x, 0) == pytest.approx(-2.75682 - 0.5, abs=1e-5)

    def test_linear_change_of_variables(self):
        flow = flows.FlowStack([flows.LinearFlow(1, weight=[[0.5]])])
        model = DnfModel(flow, ClassPrior(1, 1))
        assert model.log_prob(np.array([2.0]), 0) == pytest.approx(-2.11209, abs=1e-5)

    def test_invalid_class(self):
        model = identity_model(num_classes=2)
        with pytest.raises(ContractError):
            model.log_prob(np.zeros(3), 5)

    def test_single_class_equals_flow_likelihood(self, rng):
        """With one class and a zero mean this is exactly the vanilla
        change-of-variables likelihood."""
        flow = flows.maf_stack(3, 4, width=16, seed=3, init="random", init_scale=0.4)
        model = DnfModel(flow, ClassPrior(1, 3))
        x = flow.forward(rng.normal(size=(20, 3)))
        z, ld = flow.inverse_with_logdet(x)
        vanilla = -0.5 * (z**2).sum(axis=1) - 1.5 * np.log(2 * np.pi) + ld
        assert np.abs(model.log_prob(x, np.zeros(20, dtype=int)) - vanilla).max() < 1e-12


class TestNllLoss:
    def test_single_point(self):
        model = identity_model()
        loss = model.nll_loss(np.zeros((1, 3)), [0])
        assert float(loss.value) == pytest.approx(2.75682, abs=1e-5)

    def test_duplication_invariance(self, rng):
        model = identity_model(num_classes=2)
        x = rng.normal(size=(8, 3))
        y = rng.integers(0, 2, 8)
        single = float(model.nll_loss(x, y).value)
        doubled = float(model.nll_loss(np.vstack([x, x]), np.r_[y, y]).value)
        assert doubled == pytest.approx(single, abs=1e-12)

    def test_empty_batch(self):
        model = identity_model()
        with pytest.raises(ContractError):
            model.nll_loss(np.empty((0, 3)), [])

    def test_mean_gradient_matches_finite_differences(self, rng):
        flow = flows.maf_stack(3, 2, width=8, seed=5, init="random", init_scale=0.3)
        model = DnfModel(flow, ClassPrior(3, 3, class_dim=2))
        model.prior.means.value[...] = rng.normal(size=(3, 2))
        x = rng.normal(size=(12, 3))
        y = rng.integers(0, 3, 12)

        def loss_value():
            return float(model.nll_loss(x, y).value)

        dc.backward(model.nll_loss(x, y))
        numeric = central_difference(loss_value, model.prior.means)
        assert max_relative_error(model.prior.means.grad, numeric) < 1e-4

    def test_matches_mean_log_prob(self, rng):
        flow = flows.coupling_stack(3, 4, width=16, seed=6, init="random", init_scale=0.4)
        model = DnfModel(flow, ClassPrior(2, 3, class_dim=2))
        x = flow.forward(rng.normal(size=(30, 3)))
        y = rng.integers(0, 2, 30)
        assert float(model.nll_loss(x, y).value) == pytest.approx(
            -model.log_prob(x, y).mean(), abs=1e-12
        )


class TestNormalizeReduce:
    def test_identity_flow(self, rng):
        model = identity_model()
        x = rng.normal(size=(5, 3))
        assert np.array_equal(model.normalize(x), x)

    def test_reduce_truncates(self):
        model = identity_model(class_dim=2)
        assert np.array_equal(model.reduce(np.array([3.0, 4.0, 5.0])), [3.0, 4.0])

    def test_reduce_requires_subspace(self):
        model = identity_model()  # class_dim == dim
        with pytest.raises(ContractError):
            model.reduce(np.zeros(3))

    def test_normalize_roundtrip(self, rng):
        flow = flows.maf_stack(3, 4, width=16, seed=8, init="random", init_scale=0.4)
        model = DnfModel(flow, ClassPrior(2, 3, class_dim=2))
        x = flow.forward(rng.normal(size=(40, 3)))
        z = model.normalize(x)
        assert np.abs(model.flow.forward(z) - x).max() < 1e-6


class TestGenerate:
    def test_identity_flow_moments(self):
        model = identity_model()
        n = 4000
        sample = model.generate(0, n, seed=3)
        assert np.abs(sample.mean(axis=0)).max() < 4.0 / np.sqrt(n)

    def test_linear_flow_variance(self):
        flow = flows.FlowStack([flows.LinearFlow(1, weight=[[0.5]])])  # x = 2 z
        model = DnfModel(flow, ClassPrior(1, 1))
        sample = model.generate(0, 10000, seed=4)
        assert np.var(sample) == pytest.approx(4.0, rel=0.1)

    def test_seed_determinism(self, rng):
        flow = flows.coupling_stack(2, 3, width=8, seed=9, init="random", init_scale=0.3)
        model = DnfModel(flow, ClassPrior(2, 2, class_dim=1))
        model.prior.means.value[...] = [[1.0], [-1.0]]
        a = model.generate(1, 64, seed=7)
        b = model.generate(1, 64, seed=7)
        assert np.array_equal(a, b)

    def test_invalid_class(self):
        model = identity_model(num_classes=2)
        with pytest.raises(ContractError):
            model.generate(3, 10)


class TestLinearEquivalence:
    def test_single_linear_block_is_ml_lda(self, rng):
        """A one-linear-block model evaluates exactly the linear Gaussian
        density of the matching discriminant model."""
        proj = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
        latent_means = np.zeros((2, 3))
        latent_means[:, :2] = rng.normal(size=(2, 2))
        lda_model = lda.LdaModel(
            projection=proj,
            class_means=latent_means @ np.linalg.inv(proj).T,
            covariance=np.linalg.inv(proj) @ np.linalg.inv(proj).T,
            reduced_dim=2,
            classes=np.array([0, 1]),
        )
        flow = flows.FlowStack([flows.LinearFlow(3, weight=proj)])
        model = DnfModel(flow, ClassPrior(2, 3, class_dim=2, means=latent_means[:, :2]))
        x = rng.normal(size=(25, 3)) * 2.0
        for c in (0, 1):
            a = model.log_prob(x, np.full(25, c))
            b = lda_model.log_prob(x, c)
            assert np.abs(a - b).max() < 1e-10


def test_per_class_density_integrates_to_one(rng):
    flow = flows.coupling_stack(2, 4, width=16, seed=11, init="random", init_scale=0.4)
    model = DnfModel(flow, ClassPrior(2, 2, class_dim=1, means=[[1.5], [-1.5]]))
    for c in (0, 1):
        sample = model.generate(c, 4000, seed=20 + c)
        mu, sd = sample.mean(axis=0), sample.std(axis=0)
        axes = [np.linspace(m - 8 * s, m + 8 * s, 351) for m, s in zip(mu, sd)]
        gx, gy = np.meshgrid(axes[0], axes[1], indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        dens = np.exp(model.log_prob(pts, np.full(len(pts), c))).reshape(351, 351)
        mass = np.trapezoid(np.trapezoid(dens, axes[1], axis=1), axes[0])
        assert mass == pytest.approx(1.0, abs=2e-2)


def test_init_class_means_uses_latent_means(rng):
    flow = flows.maf_stack(3, 3, width=8, seed=13, init="random", init_scale=0.3)
    model = DnfModel(flow, ClassPrior(2, 3, class_dim=2))
    x = rng.normal(size=(50, 3))
    y = rng.integers(0, 2, 50)
    init_class_means(model, x, y)
    z = model.normalize(x)
    for c in range(2):
        expected = z[y == c, :2].mean(axis=0)
        assert np.allclose(model.prior.means.value[c], expected)

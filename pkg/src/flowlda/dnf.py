"""Class-conditional normalizing flow: the nonlinear generative discriminant model.

A :class:`DnfModel` pairs an invertible transform ``f`` with a latent prior in
which every class is a unit-covariance Gaussian. Only the class-dependent
block of each latent mean (the first ``class_dim`` coordinates) is trainable;
the shared tail is pinned at zero, which is what turns maximum likelihood into
a nonlinear dimension reduction: the first ``class_dim`` coordinates of
``f^{-1}(x)`` carry the class structure and the rest become residual.

With a single linear block this is exactly the maximum-likelihood formulation
of classic LDA; with ``num_classes == 1`` it degenerates to a vanilla
normalizing flow.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .errors import ContractError, DimensionError

LOG_2PI = float(np.log(2.0 * np.pi))


class ClassPrior:
    """Per-class latent means with identity covariance.

    ``means`` holds the trainable class-dependent coordinates, one row per
    class and ``class_dim`` columns; coordinates past ``class_dim`` share a
    fixed zero mean across classes.
    """

    def __init__(self, num_classes, dim, class_dim=None, means=None):
        self.num_classes = int(num_classes)
        self.dim = int(dim)
        self.class_dim = int(class_dim) if class_dim is not None else self.dim
        if self.num_classes < 1:
            raise ContractError("need at least one class")
        if not 1 <= self.class_dim <= self.dim:
            raise ContractError(f"class_dim must be in [1, dim], got {self.class_dim}")
        if means is None:
            means = np.zeros((self.num_classes, self.class_dim))
        means = np.asarray(means, dtype=np.float64)
        if means.shape != (self.num_classes, self.class_dim):
            raise DimensionError(
                f"means shape {means.shape} != ({self.num_classes}, {self.class_dim})"
            )
        self.means = dc.parameter(means)

    def full_means(self):
        """(num_classes, dim) array with the fixed zero tail appended."""
        tail = np.zeros((self.num_classes, self.dim - self.class_dim))
        return np.concatenate([self.means.value, tail], axis=1)

    def full_means_node(self):
        if self.class_dim == self.dim:
            return self.means
        tail = dc.constant(np.zeros((self.num_classes, self.dim - self.class_dim)))
        return dc.concat_cols([self.means, tail])


class DnfModel:
    """An invertible transform with a class-conditional standard-normal prior."""

    def __init__(self, flow, prior):
        if flow.dim != prior.dim:
            raise DimensionError(f"flow dim {flow.dim} != prior dim {prior.dim}")
        self.flow = flow
        self.prior = prior

    @property
    def dim(self):
        return self.prior.dim

    @property
    def num_classes(self):
        return self.prior.num_classes

    @property
    def class_dim(self):
        return self.prior.class_dim

    def parameters(self):
        return self.flow.parameters() + [self.prior.means]

    def _check_labels(self, labels):
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ContractError(
                f"labels must lie in [0, {self.num_classes}), got range "
                f"[{labels.min()}, {labels.max()}]"
            )
        return labels.astype(np.int64)

    def nll_loss(self, features, labels):
        """Mean negative log-likelihood over a batch, as a differentiable scalar."""
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        labels = self._check_labels(labels)
        if len(features) == 0:
            raise ContractError("empty batch")
        if len(labels) != len(features):
            raise DimensionError("one label per feature row required")
        z, ld = self.flow.inverse_nodes(dc.constant(features))
        mu = dc.gather_rows(self.prior.full_means_node(), labels)
        diff = z - mu
        quad = (diff * diff).sum(axis=1, keepdims=True)
        log_prob = -0.5 * quad + ld - 0.5 * self.dim * LOG_2PI
        return -log_prob.mean()

    def log_prob(self, x, y):
        """Log density of one observation under its class, or of a batch
        when ``x`` is 2-D and ``y`` is a matching label array."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        ys = np.full(len(xb), y, dtype=np.int64) if np.isscalar(y) else np.asarray(y, dtype=np.int64)
        ys = self._check_labels(ys)
        z, ld = self.flow.inverse_with_logdet(xb)
        mu = self.prior.full_means()[ys]
        quad = ((z - mu) ** 2).sum(axis=1)
        lp = -0.5 * quad + ld - 0.5 * self.dim * LOG_2PI
        return float(lp[0]) if single else lp

    def normalize(self, x):
        """Map observations to latent space; no labels needed."""
        z, _ = self.flow.inverse_with_logdet(x)
        return z

    def reduce(self, x):
        """Class-space coordinates of the latent code (the dimension-reduced output)."""
        if self.class_dim == self.dim:
            raise ContractError("class_dim equals dim; nothing to reduce")
        z = self.normalize(np.asarray(x, dtype=np.float64))
        return z[..., : self.class_dim]

    def residual(self, x):
        """Latent coordinates past the class space."""
        z = self.normalize(np.asarray(x, dtype=np.float64))
        return z[..., self.class_dim :]

    def generate(self, y, n, seed=0):
        """Draw ``n`` samples of class ``y``; deterministic for a given seed."""
        ys = self._check_labels(np.array([y]))
        rng = np.random.default_rng(seed)
        mu = self.prior.full_means()[ys[0]]
        z = mu + rng.standard_normal((int(n), self.dim))
        return self.flow.forward(z)


def init_class_means(model, features, labels):
    """Set prior means from per-class latent sample means under the current flow."""
    labels = model._check_labels(labels)
    z = model.normalize(np.asarray(features, dtype=np.float64))
    means = np.zeros((model.num_classes, model.class_dim))
    for c in range(model.num_classes):
        rows = z[labels == c]
        if len(rows):
            means[c] = rows[:, : model.class_dim].mean(axis=0)
    model.prior.means.value[...] = means
    return model

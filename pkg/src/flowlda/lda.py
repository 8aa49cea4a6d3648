"""Classic linear discriminant analysis, in both its Fisher and
maximum-likelihood forms.

The ML form treats LDA as a linear Gaussian generative model: an invertible
matrix maps observations to a latent space where every class is a
unit-covariance Gaussian and only the first ``reduced_dim`` latent mean
coordinates differ across classes. Maximizing the data log-likelihood in that
parameterization recovers the usual discriminant directions, and the first
``reduced_dim`` rows of the matrix are the dimension-reducing transform.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .dnf import LOG_2PI
from .errors import ContractError, ConvergenceWarning, DecompositionError, DimensionError

_SW_REG = 1e-6


@dataclass
class ScatterPair:
    """Within/between-class scatter sums and the per-class sample counts."""

    within: np.ndarray
    between: np.ndarray
    counts: dict

    @property
    def total(self):
        return self.within + self.between


@dataclass
class LdaModel:
    """Fitted linear discriminant model.

    ``projection`` maps observations to the latent space (full rank, d x d);
    ``class_means`` are per-class observation-space means (one row per class,
    ordered by ``classes``); ``covariance`` is the shared within-class
    covariance implied by the projection.
    """

    projection: np.ndarray
    class_means: np.ndarray
    covariance: np.ndarray
    reduced_dim: int
    classes: np.ndarray
    objective_trace: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def dim(self):
        return self.projection.shape[0]

    def latent_means(self):
        """Class means in latent space."""
        return self.class_means @ self.projection.T

    def transform(self, x):
        return np.asarray(x, dtype=np.float64) @ self.projection.T

    def project(self, x):
        """First ``reduced_dim`` latent coordinates; accepts (d,) or (n, d)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"expected dim {self.dim}, got {x.shape[-1]}")
        return self.transform(x)[..., : self.reduced_dim]

    def residual(self, x):
        return self.transform(x)[..., self.reduced_dim :]

    def log_prob(self, x, y):
        """Per-class log density via the latent standard-normal plus the
        volume term of the projection."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        z = np.atleast_2d(self.transform(x))
        row = np.searchsorted(self.classes, y)
        if row >= len(self.classes) or self.classes[row] != y:
            raise ContractError(f"unknown class {y!r}")
        mu = self.latent_means()[row]
        quad = ((z - mu) ** 2).sum(axis=1)
        lp = -0.5 * quad - 0.5 * self.dim * LOG_2PI + np.linalg.slogdet(self.projection)[1]
        return float(lp[0]) if single else lp


def scatter_matrices(features, labels):
    """Within- and between-class scatter sums (unnormalized)."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    classes = np.unique(y)
    overall = x.mean(axis=0)
    d = x.shape[1]
    sw = np.zeros((d, d))
    sb = np.zeros((d, d))
    counts = {}
    for c in classes:
        rows = x[y == c]
        counts[int(c)] = len(rows)
        mu = rows.mean(axis=0)
        dev = rows - mu
        sw += dev.T @ dev
        gap = (mu - overall)[:, None]
        sb += len(rows) * (gap @ gap.T)
    return ScatterPair(sw, sb, counts)


def _validate(data, p, min_classes):
    if data.num_classes < min_classes:
        raise ContractError(f"need at least {min_classes} classes, got {data.num_classes}")
    for c, idx in data.class_indices().items():
        if len(idx) < 2:
            raise ContractError(f"class {c} has fewer than 2 samples")


def fit_fisher(data, p):
    """Closed-form LDA: top generalized eigenvectors of the scatter pencil.

    The returned projection is full rank: discriminant directions first
    (descending eigenvalue), completed by the remaining generalized
    eigenvectors. Rows are scaled so the latent within-class covariance is the
    identity.
    """
    _validate(data, p, min_classes=2)
    d = data.dim
    if not 1 <= p <= min(d, data.num_classes - 1):
        raise ContractError(
            f"p must be in [1, min(dim, classes-1)] = [1, {min(d, data.num_classes - 1)}], got {p}"
        )
    scatter = scatter_matrices(data.features, data.labels)
    n_eff = len(data) - data.num_classes
    cov_w = scatter.within / max(n_eff, 1)
    cov_w = cov_w + (_SW_REG * np.trace(cov_w) / d + 1e-300) * np.eye(d)
    try:
        chol = np.linalg.cholesky(cov_w)
    except np.linalg.LinAlgError as err:
        raise DecompositionError(f"within-class covariance not SPD: {err}") from err
    # Generalized problem Sb v = lambda Sw v via the symmetric reduction.
    inner = scipy.linalg.solve_triangular(chol, scatter.between, lower=True)
    inner = scipy.linalg.solve_triangular(chol, inner.T, lower=True)
    inner = 0.5 * (inner + inner.T)
    w, u = np.linalg.eigh(inner)
    order = np.argsort(w)[::-1]
    vecs = scipy.linalg.solve_triangular(chol.T, u[:, order], lower=False)
    projection = vecs.T  # rows v satisfy v @ cov_w @ v.T == I by construction
    classes = np.unique(data.labels)
    class_means = np.stack([data.features[data.labels == c].mean(axis=0) for c in classes])
    inv = np.linalg.inv(projection)
    return LdaModel(
        projection=projection,
        class_means=class_means,
        covariance=inv @ inv.T,
        reduced_dim=int(p),
        classes=classes,
    )


def _ml_objective(x, m, mu_rows):
    z = x @ m.T
    quad = ((z - mu_rows) ** 2).sum(axis=1).mean()
    return -0.5 * quad - 0.5 * x.shape[1] * LOG_2PI + np.linalg.slogdet(m)[1]


def _ml_class_means(x, m, labels, classes, p):
    """Exact coordinate maximization of the latent means under the mean split."""
    z = x @ m.T
    mu = np.zeros((len(classes), x.shape[1]))
    for i, c in enumerate(classes):
        mu[i, :p] = z[labels == c, :p].mean(axis=0)
    return mu


def fit_ml(data, p, learning_rate=1e-2, max_iter=2000, tol=1e-6):
    """Maximum-likelihood LDA by full-batch adaptive gradient ascent.

    The latent class means are re-solved in closed form after every accepted
    matrix step; steps that would lower the objective are retried with a
    halved length, so the returned objective trace is non-decreasing.
    """
    _validate(data, p, min_classes=1)
    d = data.dim
    if not 1 <= p <= d:
        raise ContractError(f"p must be in [1, dim], got {p}")
    x = data.features
    n = len(x)
    classes = np.unique(data.labels)
    labels = data.labels

    # Start at the whitening transform of the total covariance.
    total_cov = np.cov(x, rowvar=False, bias=True) + _SW_REG * np.eye(d)
    m = np.linalg.inv(np.linalg.cholesky(total_cov))

    mu = _ml_class_means(x, m, labels, classes, p)
    mu_rows = mu[np.searchsorted(classes, labels)]
    objective = _ml_objective(x, m, mu_rows)
    trace = [objective]

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    mom = np.zeros_like(m)
    vel = np.zeros_like(m)
    grad_norm = np.inf
    for t in range(1, max_iter + 1):
        z = x @ m.T
        grad = -((z - mu_rows).T @ x) / n + np.linalg.inv(m).T
        grad_norm = np.abs(grad).max()
        if grad_norm < tol:
            break
        mom = beta1 * mom + (1 - beta1) * grad
        vel = beta2 * vel + (1 - beta2) * grad * grad
        direction = (mom / (1 - beta1**t)) / (np.sqrt(vel / (1 - beta2**t)) + eps)
        step = learning_rate
        for _ in range(60):
            m_new = m + step * direction
            if np.linalg.slogdet(m_new)[0] != 0:
                cand = _ml_objective(x, m_new, mu_rows)
                if cand >= objective - 1e-9:
                    break
            step *= 0.5
        else:
            m_new, cand = m, objective
        m = m_new
        mu = _ml_class_means(x, m, labels, classes, p)
        mu_rows = mu[np.searchsorted(classes, labels)]
        objective = _ml_objective(x, m, mu_rows)
        trace.append(objective)
    else:
        warnings.warn(
            ConvergenceWarning(
                f"fit_ml hit max_iter={max_iter} with gradient inf-norm {grad_norm:.3e}",
                gradient_norm=float(grad_norm),
            )
        )

    inv = np.linalg.inv(m)
    return LdaModel(
        projection=m,
        class_means=mu @ inv.T,
        covariance=inv @ inv.T,
        reduced_dim=int(p),
        classes=classes,
        objective_trace=np.asarray(trace),
    )

"""Evaluation metrics: verification scoring, cluster recovery, Gaussianity,
and residual class-information leakage.

Everything here is a pure function of its inputs (plus an explicit seed where
an algorithm is randomized), so repeated calls reproduce results bitwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.stats
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_rand_score

from .errors import ContractError, DecompositionError, DimensionError

_EPS_SCALE = 1e-6


@dataclass
class TrialScoreSet:
    """Scores of genuine (same-class) and impostor (cross-class) trials."""

    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64).ravel()
        self.impostor = np.asarray(self.impostor, dtype=np.float64).ravel()
        if len(self.genuine) == 0 or len(self.impostor) == 0:
            raise ContractError("both genuine and impostor scores must be non-empty")
        if not (np.all(np.isfinite(self.genuine)) and np.all(np.isfinite(self.impostor))):
            raise ContractError("scores must be finite")


def eer(scores):
    """Equal error rate of a score set, in [0, 1].

    Sweeps thresholds over the observed scores with FAR(t) = fraction of
    impostor scores >= t and FRR(t) = fraction of genuine scores < t, and
    returns the rate at the FAR/FRR crossing, linearly interpolated between
    the two adjacent operating points (midpoint when they meet exactly).
    """
    gen, imp = scores.genuine, scores.impostor
    thresholds = np.unique(np.concatenate([gen, imp]))
    prev_far, prev_frr = 1.0, 0.0
    sweep = np.append(thresholds, thresholds[-1] + 1.0)
    for t in sweep:
        far = float(np.mean(imp >= t))
        frr = float(np.mean(gen < t))
        diff = far - frr
        if diff == 0.0:
            return 0.5 * (far + frr)
        if diff < 0.0:
            prev_diff = prev_far - prev_frr
            alpha = prev_diff / (prev_diff - diff)
            far_x = prev_far + alpha * (far - prev_far)
            frr_x = prev_frr + alpha * (frr - prev_frr)
            return 0.5 * (far_x + frr_x)
        prev_far, prev_frr = far, frr
    return 0.5 * (prev_far + prev_frr)  # pragma: no cover - crossing always found


@dataclass
class PldaModel:
    """Two-covariance PLDA: class centers ~ N(mean, between), observations
    scatter around their center with the within covariance."""

    mean: np.ndarray
    between: np.ndarray
    within: np.ndarray


def fit_plda(data):
    """Moment-based two-covariance fit.

    ``between`` is the bias-corrected covariance of the class means,
    ``within`` the pooled within-class covariance; both are ridge-regularized
    to keep downstream solves well posed.
    """
    if data.num_classes < 2:
        raise ContractError("PLDA needs at least 2 classes")
    d = data.dim
    means = []
    pooled = np.zeros((d, d))
    n_within = 0
    for c, idx in data.class_indices().items():
        if len(idx) < 2:
            raise ContractError(f"class {c} has fewer than 2 samples")
        rows = data.features[idx]
        mu = rows.mean(axis=0)
        means.append(mu)
        dev = rows - mu
        pooled += dev.T @ dev
        n_within += len(idx) - 1
    means = np.stack(means)
    between = np.cov(means, rowvar=False, ddof=1).reshape(d, d)
    within = pooled / n_within
    eye = np.eye(d)
    between = between + (_EPS_SCALE * np.trace(between) / d + 1e-12) * eye
    within = within + (_EPS_SCALE * np.trace(within) / d + 1e-12) * eye
    return PldaModel(mean=means.mean(axis=0), between=between, within=within)


def _plda_terms(model):
    t = model.within + model.between
    sum_cov = t + model.between  # covariance of (a-m)+(b-m) under same-class
    dif_cov = model.within       # covariance of (a-m)-(b-m) under same-class
    try:
        f_sum = scipy.linalg.cho_factor(sum_cov, lower=True)
        f_dif = scipy.linalg.cho_factor(dif_cov, lower=True)
        f_tot = scipy.linalg.cho_factor(t, lower=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as err:
        raise DecompositionError(f"PLDA covariance not SPD: {err}") from err
    logdet = lambda f: 2.0 * np.sum(np.log(np.diag(f[0])))
    const = -0.5 * (logdet(f_sum) + logdet(f_dif) - 2.0 * logdet(f_tot))
    return f_sum, f_dif, f_tot, const


def score_plda_pairs(model, a, b):
    """Log-likelihood ratio of same-class vs different-class for row-aligned
    pairs; vectorized over rows."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64)) - model.mean
    b = np.atleast_2d(np.asarray(b, dtype=np.float64)) - model.mean
    if a.shape != b.shape or a.shape[1] != len(model.mean):
        raise DimensionError("pair sides must share the model's dimension")
    f_sum, f_dif, f_tot, const = _plda_terms(model)
    u = a + b
    w = a - b
    quad = lambda f, v: np.einsum("ij,ij->i", v, scipy.linalg.cho_solve(f, v.T).T)
    q_same = 0.5 * quad(f_sum, u) + 0.5 * quad(f_dif, w)
    q_diff = 0.5 * quad(f_tot, u) + 0.5 * quad(f_tot, w)
    return -0.5 * (q_same - q_diff) + const


def score_plda(model, a, b):
    """Symmetric verification score for a single pair."""
    return float(score_plda_pairs(model, np.atleast_2d(a), np.atleast_2d(b))[0])


def cluster_recovery(codes, labels, seed=0, restarts=20, max_iter=300):
    """k-means (k = number of distinct labels) then adjusted Rand index."""
    codes = np.asarray(codes, dtype=np.float64)
    labels = np.asarray(labels)
    k = len(np.unique(labels))
    if k < 2:
        raise ContractError("need at least 2 distinct labels")
    if len(codes) < k:
        raise ContractError("fewer points than clusters")
    km = KMeans(n_clusters=k, n_init=restarts, max_iter=max_iter, random_state=seed)
    assignment = km.fit_predict(codes)
    return float(adjusted_rand_score(labels, assignment))


@dataclass
class GaussianityResult:
    skewness_stat: float
    kurtosis_stat: float
    skewness_threshold: float
    kurtosis_threshold: float
    skewness_ok: bool
    kurtosis_ok: bool

    @property
    def passed(self):
        return self.skewness_ok and self.kurtosis_ok


def gaussianity(codes, alpha=0.01):
    """Mardia's multivariate skewness and kurtosis test.

    The skewness statistic ``n*b1/6`` is referred to a chi-square with
    d(d+1)(d+2)/6 degrees of freedom; the kurtosis statistic is the normal
    z-score of ``b2`` against its null moments. Both are affine invariant.
    """
    x = np.asarray(codes, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("codes must be a 2-D array")
    n, d = x.shape
    if n <= d:
        raise ContractError(f"need more samples than dimensions, got {n} <= {d}")
    centered = x - x.mean(axis=0)
    cov = (centered.T @ centered) / n
    try:
        factor = scipy.linalg.cho_factor(cov, lower=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as err:
        raise DecompositionError(f"singular sample covariance: {err}") from err
    white = scipy.linalg.cho_solve(factor, centered.T)  # (d, n)

    # b1 averages the cubed pairwise Mahalanobis inner products; chunked to
    # keep the n x n Gram matrix out of memory for large samples.
    b1_sum = 0.0
    chunk = 1024
    for start in range(0, n, chunk):
        part = centered[start : start + chunk] @ white
        b1_sum += float(np.sum(part**3))
    b1 = b1_sum / (n * n)
    skew_stat = n * b1 / 6.0

    mahal = np.einsum("ij,ji->i", centered, white)
    b2 = float(np.mean(mahal**2))
    kurt_stat = (b2 - d * (d + 2)) / np.sqrt(8.0 * d * (d + 2) / n)

    df = d * (d + 1) * (d + 2) / 6.0
    skew_threshold = float(scipy.stats.chi2.ppf(1.0 - alpha, df))
    kurt_threshold = float(scipy.stats.norm.ppf(1.0 - alpha / 2.0))
    return GaussianityResult(
        skewness_stat=float(skew_stat),
        kurtosis_stat=float(kurt_stat),
        skewness_threshold=skew_threshold,
        kurtosis_threshold=kurt_threshold,
        skewness_ok=bool(skew_stat <= skew_threshold),
        kurtosis_ok=bool(abs(kurt_stat) <= kurt_threshold),
    )


def residual_leakage(codes, labels, seed=0, epochs=500, ridge=1e-3, learning_rate=0.05):
    """Held-out accuracy of a deliberately small linear probe.

    Multinomial logistic regression trained by full-batch adaptive gradient
    on a seeded 80/20 split; standardization and the ridge penalty keep the
    probe from overfitting its way into fake leakage.
    """
    x = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    if x.shape[0] != len(labels):
        raise DimensionError("one label per code required")
    labels = np.asarray(labels)
    classes, y = np.unique(labels, return_inverse=True)
    if len(classes) < 2:
        raise ContractError("need at least 2 classes")
    n = len(x)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    cut = max(1, int(round(0.8 * n)))
    tr, te = perm[:cut], perm[cut:]
    if len(te) == 0:
        raise ContractError("dataset too small for an 80/20 split")
    if len(np.unique(y[tr])) != len(classes):
        raise ContractError("a class is absent from the train split")

    mu = x[tr].mean(axis=0)
    sd = x[tr].std(axis=0)
    sd[sd == 0] = 1.0
    xs = (x - mu) / sd
    xtr, ytr = xs[tr], y[tr]
    k = len(classes)
    w = np.zeros((x.shape[1], k))
    bias = np.zeros(k)
    onehot = np.eye(k)[ytr]

    mw = np.zeros_like(w)
    vw = np.zeros_like(w)
    mb = np.zeros_like(bias)
    vb = np.zeros_like(bias)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for t in range(1, epochs + 1):
        logits = xtr @ w + bias
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        gl = (p - onehot) / len(xtr)
        gw = xtr.T @ gl + 2.0 * ridge * w
        gb = gl.sum(axis=0)
        mw = b1 * mw + (1 - b1) * gw
        vw = b2 * vw + (1 - b2) * gw * gw
        mb = b1 * mb + (1 - b1) * gb
        vb = b2 * vb + (1 - b2) * gb * gb
        w -= learning_rate * (mw / (1 - b1**t)) / (np.sqrt(vw / (1 - b2**t)) + eps)
        bias -= learning_rate * (mb / (1 - b1**t)) / (np.sqrt(vb / (1 - b2**t)) + eps)

    pred = (xs[te] @ w + bias).argmax(axis=1)
    return float(np.mean(pred == y[te]))


def metric_report(metric, value, config=None, seed=None):
    """Flat JSON-ready record for one metric evaluation."""
    return {"metric": metric, "value": value, "config": config or {}, "seed": seed}


def save_reports(reports, path):
    with open(path, "w") as fh:
        json.dump(list(reports), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_trial_csv(path, labels_a, labels_b, genuine, scores):
    """Trial list as CSV: label_a,label_b,is_genuine,score."""
    with open(path, "w") as fh:
        fh.write("label_a,label_b,is_genuine,score\n")
        for la, lb, g, s in zip(labels_a, labels_b, genuine, scores):
            fh.write(f"{int(la)},{int(lb)},{int(bool(g))},{s:.17g}\n")

"""Seeded end-to-end experiment recipes.

Each function is a pure pipeline from a spec plus configuration to a flat
dict of metric values; running one twice with the same arguments reproduces
every value bitwise. The command-line ``pipeline`` mode wraps the simulation
recipe and adds artifact files.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import datasim, flows, lda, metrics, trainer
from .dataset import LabeledDataset
from .dnf import ClassPrior, DnfModel, init_class_means
from .errors import ContractError


def build_flow(kind, dim, num_blocks, width=None, seed=0):
    if kind == "maf":
        return flows.maf_stack(dim, num_blocks, width=width, seed=seed)
    if kind == "coupling":
        return flows.coupling_stack(dim, num_blocks, width=width, seed=seed)
    if kind == "linear":
        return flows.FlowStack([flows.LinearFlow(dim)], dim=dim)
    raise ContractError(f"unknown flow kind {kind!r}")


def whitening_block(features, labels=None):
    """Linear block initialized to whiten the given data (trainable).

    With labels, whitens by the pooled within-class covariance, which keeps
    between-class separation intact in the initial latent space; the prior
    means then start far apart instead of collapsed, which matters for
    escaping poor likelihood basins.
    """
    d = features.shape[1]
    if labels is None:
        cov = np.cov(features, rowvar=False, bias=True)
    else:
        cov = np.zeros((d, d))
        for c in np.unique(labels):
            rows = features[labels == c]
            dev = rows - rows.mean(axis=0)
            cov += dev.T @ dev
        cov /= len(features)
    cov += 1e-6 * np.trace(cov) / d * np.eye(d)
    weight = np.linalg.inv(np.linalg.cholesky(cov))
    bias = -(weight @ features.mean(axis=0)).reshape(1, d)
    return flows.LinearFlow(d, weight=weight, bias=bias)


def build_dnf(
    data, num_classes, class_dim,
    flow_kind="maf", num_blocks=10, width=None, seed=0, whiten=True,
):
    """Model with identity-initialized flow blocks behind a data-whitening
    linear block, and prior means set from per-class latent means."""
    if flow_kind == "linear":
        flow = build_flow(flow_kind, data.dim, num_blocks, width=width, seed=seed)
    else:
        stack = build_flow(flow_kind, data.dim, num_blocks, width=width, seed=seed)
        blocks = list(stack.blocks)
        if whiten:
            blocks.append(whitening_block(data.features, data.labels))
        flow = flows.compose(blocks, dim=data.dim)
    model = DnfModel(flow, ClassPrior(num_classes, data.dim, class_dim))
    return init_class_means(model, data.features, data.labels)


@dataclass
class SimulationResult:
    metrics: dict
    latent: LabeledDataset
    observed: LabeledDataset
    generator: object
    dnf_subspace: DnfModel
    dnf_full: DnfModel
    lda_model: lda.LdaModel
    traces: dict = field(default_factory=dict)


def run_simulation_experiment(
    spec=None,
    train_cfg=None,
    flow_kind="maf",
    num_blocks=10,
    width=64,
    model_seed=1,
    metric_seed=0,
    workers=1,
):
    """Simulation study: recover planar latent class structure from warped data.

    Trains a subspace model, an unconstrained model, and ML-LDA on the same
    observations, then scores cluster recovery of the class-space coordinates
    and linear-probe leakage of the residual coordinates. The three fits share
    only read-only data, so ``workers > 1`` may run them concurrently without
    changing any result.
    """
    spec = spec or datasim.SimulationSpec()
    cfg = train_cfg or trainer.TrainConfig(seed=model_seed)
    z_ds, x_ds, generator = datasim.generate_simulation(spec)

    def fit(class_dim, seed_offset):
        model = build_dnf(
            x_ds, spec.num_classes, class_dim,
            flow_kind=flow_kind, num_blocks=num_blocks, width=width,
            seed=model_seed + seed_offset,
        )
        return trainer.train(model, x_ds, cfg)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=min(workers, 3)) as pool:
            fut_s = pool.submit(fit, spec.class_dim, 0)
            fut_f = pool.submit(fit, spec.dim, 1)
            fut_l = pool.submit(lda.fit_ml, x_ds, spec.class_dim)
            dnf_s, trace_s = fut_s.result()
            dnf_f, trace_f = fut_f.result()
            lda_model = fut_l.result()
    else:
        dnf_s, trace_s = fit(spec.class_dim, 0)
        dnf_f, trace_f = fit(spec.dim, 1)
        lda_model = lda.fit_ml(x_ds, spec.class_dim)

    x, y = x_ds.features, x_ds.labels
    result = {
        "ari_dnf_subspace": metrics.cluster_recovery(dnf_s.reduce(x), y, seed=metric_seed),
        "ari_dnf": metrics.cluster_recovery(dnf_f.normalize(x), y, seed=metric_seed),
        "ari_lda": metrics.cluster_recovery(lda_model.project(x), y, seed=metric_seed),
        "probe_residual_dnf_subspace": metrics.residual_leakage(
            dnf_s.residual(x), y, seed=metric_seed
        ),
        "probe_residual_lda": metrics.residual_leakage(
            lda_model.residual(x), y, seed=metric_seed
        ),
        "probe_chance": 1.0 / spec.num_classes,
        "nll_dnf_subspace": trainer.evaluate_nll(dnf_s, x_ds),
        "nll_dnf": trainer.evaluate_nll(dnf_f, x_ds),
    }
    return SimulationResult(
        metrics=result,
        latent=z_ds,
        observed=x_ds,
        generator=generator,
        dnf_subspace=dnf_s,
        dnf_full=dnf_f,
        lda_model=lda_model,
        traces={"dnf_subspace": trace_s, "dnf": trace_f},
    )


def make_mixture(num_classes=3, radius=2.0, samples_per_class=1500, heldout_per_class=500, seed=0):
    """2-D Gaussian mixture with means on a circle; returns (train, heldout)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes + np.pi / 2.0
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    feats, labels = [], []
    n = samples_per_class + heldout_per_class
    for c in range(num_classes):
        feats.append(means[c] + rng.standard_normal((n, 2)))
        labels.append(np.full(n, c))
    feats, labels = np.concatenate(feats), np.concatenate(labels)
    perm = rng.permutation(len(labels))
    feats, labels = feats[perm], labels[perm]
    cut = num_classes * samples_per_class
    return (
        LabeledDataset(feats[:cut], labels[:cut]),
        LabeledDataset(feats[cut:], labels[cut:]),
    )


def run_mixture_contrast(
    num_classes=3,
    radius=2.0,
    samples_per_class=1500,
    heldout_per_class=500,
    data_seed=0,
    model_seed=1,
    train_cfg=None,
    flow_kind="maf",
    num_blocks=10,
    width=64,
):
    """Vanilla flow vs class-conditional flow on one Gaussian mixture.

    The single-class model must Gaussianize the pooled data; the
    class-conditional model must Gaussianize every class separately and win
    on held-out per-class likelihood.
    """
    train, heldout = make_mixture(
        num_classes, radius, samples_per_class, heldout_per_class, seed=data_seed
    )
    cfg = train_cfg or trainer.TrainConfig(epochs=300, seed=model_seed)

    nf = build_dnf(
        LabeledDataset(train.features, np.zeros(len(train), dtype=int)),
        1, 2, flow_kind=flow_kind, num_blocks=num_blocks, width=width, seed=model_seed,
    )
    nf, _ = trainer.train(
        nf, LabeledDataset(train.features, np.zeros(len(train), dtype=int)), cfg
    )
    dnf = build_dnf(
        train, num_classes, 2,
        flow_kind=flow_kind, num_blocks=num_blocks, width=width, seed=model_seed + 1,
    )
    dnf, _ = trainer.train(dnf, train, cfg)

    nf_latent = nf.normalize(heldout.features)
    nf_gauss = metrics.gaussianity(nf_latent)
    per_class = []
    for c in range(num_classes):
        rows = heldout.features[heldout.labels == c]
        per_class.append(metrics.gaussianity(dnf.normalize(rows)))

    nf_heldout = LabeledDataset(heldout.features, np.zeros(len(heldout), dtype=int))
    nf_nll = trainer.evaluate_nll(nf, nf_heldout)
    dnf_nll = trainer.evaluate_nll(dnf, heldout)
    return {
        "nf_gaussianity": nf_gauss,
        "dnf_gaussianity_per_class": per_class,
        "nf_heldout_nll": nf_nll,
        "dnf_heldout_nll": dnf_nll,
        "nll_gain": nf_nll - dnf_nll,
        "models": {"nf": nf, "dnf": dnf},
    }


def run_verification_experiment(
    spec=None,
    reduced_dim=10,
    train_cfg=None,
    flow_kind="maf",
    num_blocks=10,
    width=None,
    model_seed=1,
):
    """Verification stand-in: PLDA scoring on raw, linearly reduced, and
    flow-reduced embeddings over one genuine/impostor trial list."""
    spec = spec or datasim.EmbeddingSpec()
    data = datasim.generate_embeddings(spec)
    cfg = train_cfg or trainer.TrainConfig(epochs=50, seed=model_seed)

    model = build_dnf(
        data.train, spec.num_classes, reduced_dim,
        flow_kind=flow_kind, num_blocks=num_blocks, width=width, seed=model_seed,
    )
    model, _ = trainer.train(model, data.train, cfg)
    lda_model = lda.fit_ml(data.train, reduced_dim)

    def eer_of(transform):
        train_t = LabeledDataset(transform(data.train.features), data.train.labels)
        plda = metrics.fit_plda(train_t)
        trial_t = transform(data.trial.features)
        scores = metrics.score_plda_pairs(
            plda, trial_t[data.trials.left], trial_t[data.trials.right]
        )
        return float(
            metrics.eer(
                metrics.TrialScoreSet(
                    scores[data.trials.genuine], scores[~data.trials.genuine]
                )
            )
        )

    return {
        "eer_raw": eer_of(lambda f: f),
        "eer_lda": eer_of(lda_model.project),
        "eer_dnf_subspace": eer_of(model.reduce),
        "model": model,
        "lda_model": lda_model,
        "data": data,
    }

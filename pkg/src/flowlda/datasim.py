"""Synthetic data generators.

Two experiment families: a low-dimensional simulation in which class
Gaussians with planar means are pushed through a randomly initialized flow,
and a heteroscedastic "embedding" stand-in for verification experiments where
per-class Gaussians with random covariances are warped by a fixed flow and
scored over genuine/impostor trial pairs.

Both are pure functions of (spec, seed): identical specs produce bitwise
identical datasets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import flows
from .dataset import LabeledDataset
from .errors import ContractError

GENERATOR_KINDS = ("coupling-20-blocks", "maf-10-blocks", "identity")


@dataclass
class SimulationSpec:
    dim: int = 3
    num_classes: int = 4
    class_dim: int = 2
    mean_radius: float = 5.0
    samples_per_class: int = 2000
    generator_flow: str = "coupling-20-blocks"
    seed: int = 0

    def __post_init__(self):
        if self.generator_flow not in GENERATOR_KINDS:
            raise ContractError(f"generator_flow must be one of {GENERATOR_KINDS}")
        if self.class_dim >= self.dim:
            raise ContractError("class_dim must be smaller than dim")
        if self.num_classes < 2 or self.samples_per_class < 1:
            raise ContractError("need >= 2 classes and >= 1 sample per class")

    def class_means(self):
        """Means on a circle in the first two coordinates, zero elsewhere."""
        angles = 2.0 * np.pi * np.arange(self.num_classes) / self.num_classes
        means = np.zeros((self.num_classes, self.dim))
        means[:, 0] = self.mean_radius * np.cos(angles)
        means[:, 1] = self.mean_radius * np.sin(angles)
        return means


def _build_generator(spec, rng):
    if spec.generator_flow == "identity":
        return flows.FlowStack([], dim=spec.dim)
    if spec.generator_flow == "coupling-20-blocks":
        return flows.coupling_stack(spec.dim, 20, rng=rng, init="random", init_scale=0.5)
    return flows.maf_stack(spec.dim, 10, rng=rng, init="random", init_scale=0.5)


def generate_simulation(spec=None):
    """Sample latent class Gaussians and warp them with a random flow.

    Returns ``(latent, observed, generator)`` so the generator can serve as a
    perfect-recovery reference in downstream checks.
    """
    spec = spec or SimulationSpec()
    seq = np.random.SeedSequence(spec.seed)
    rng_z, rng_gen = [np.random.default_rng(s) for s in seq.spawn(2)]

    means = spec.class_means()
    n = spec.samples_per_class
    z = np.concatenate(
        [means[c] + rng_z.standard_normal((n, spec.dim)) for c in range(spec.num_classes)]
    )
    labels = np.repeat(np.arange(spec.num_classes), n)
    generator = _build_generator(spec, rng_gen)
    x = generator.forward(z)
    return LabeledDataset(z, labels), LabeledDataset(x, labels), generator


@dataclass
class EmbeddingSpec:
    dim: int = 20
    num_classes: int = 50
    trial_classes: int = 20
    covariance_scale_range: tuple = (0.3, 1.2)
    mean_scale: float = 3.0
    warp_depth: int = 4
    samples_per_class: int = 100
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.covariance_scale_range
        if not 0 < lo <= hi:
            raise ContractError("covariance_scale_range must be positive and ordered")
        if self.num_classes < 2 or self.trial_classes < 2:
            raise ContractError("need >= 2 train and >= 2 trial classes")
        if self.samples_per_class < 2:
            raise ContractError("need >= 2 samples per class")


class TrialList(NamedTuple):
    """Index pairs into the trial dataset plus genuine/impostor flags."""

    left: np.ndarray
    right: np.ndarray
    genuine: np.ndarray


class EmbeddingData(NamedTuple):
    train: LabeledDataset
    trial: LabeledDataset
    trials: TrialList


def _random_spd(rng, dim, scale_range):
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    scales = rng.uniform(scale_range[0], scale_range[1], dim)
    return (q * scales**2) @ q.T


def _sample_classes(rng, spec, num_classes, label_offset=0):
    feats = []
    labels = []
    for c in range(num_classes):
        mean = rng.standard_normal(spec.dim) * spec.mean_scale
        cov = _random_spd(rng, spec.dim, spec.covariance_scale_range)
        chol = np.linalg.cholesky(cov)
        pts = mean + rng.standard_normal((spec.samples_per_class, spec.dim)) @ chol.T
        feats.append(pts)
        labels.append(np.full(spec.samples_per_class, label_offset + c))
    return np.concatenate(feats), np.concatenate(labels)


def _make_trials(rng, labels, genuine_per_class=40, impostor_total=None):
    classes = np.unique(labels)
    by_class = {c: np.flatnonzero(labels == c) for c in classes}
    left, right, flags = [], [], []
    for c in classes:
        idx = by_class[c]
        for _ in range(genuine_per_class):
            a, b = rng.choice(idx, 2, replace=False)
            left.append(a)
            right.append(b)
            flags.append(True)
    impostor_total = impostor_total or len(left)
    for _ in range(impostor_total):
        ca, cb = rng.choice(classes, 2, replace=False)
        left.append(rng.choice(by_class[ca]))
        right.append(rng.choice(by_class[cb]))
        flags.append(False)
    return TrialList(np.asarray(left), np.asarray(right), np.asarray(flags))


def generate_embeddings(spec=None):
    """Heteroscedastic class Gaussians warped by one fixed random flow.

    Train and trial classes are disjoint; the same warp is applied to both.
    """
    spec = spec or EmbeddingSpec()
    seq = np.random.SeedSequence(spec.seed)
    rng_train, rng_trial, rng_warp, rng_pairs = [np.random.default_rng(s) for s in seq.spawn(4)]

    train_x, train_y = _sample_classes(rng_train, spec, spec.num_classes)
    trial_x, trial_y = _sample_classes(rng_trial, spec, spec.trial_classes, label_offset=spec.num_classes)

    if spec.warp_depth > 0:
        warp = flows.coupling_stack(
            spec.dim, spec.warp_depth, rng=rng_warp, init="random", init_scale=0.5
        )
        train_x = warp.forward(train_x)
        trial_x = warp.forward(trial_x)

    trials = _make_trials(rng_pairs, trial_y)
    return EmbeddingData(
        train=LabeledDataset(train_x, train_y),
        trial=LabeledDataset(trial_x, trial_y),
        trials=trials,
    )

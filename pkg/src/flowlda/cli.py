"""Command-line front end.

Subcommands: ``simulate``, ``train``, ``eval``, ``reduce``, ``figure``, and
``pipeline`` (the full simulation study). Options may come from a JSON config
file via ``--config``; explicit flags override file values, which override
defaults. Every run writes a ``manifest.json`` recording the effective
config, input content hashes, and produced files.

Exit codes: 0 success, 1 usage/config error, 2 numeric failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import checkpoint, dataset, datasim, experiments, figures, lda, metrics, trainer
from .dnf import DnfModel
from .errors import ContractError, FlowLdaError, NumericError

MODEL_KINDS = ("lda-fisher", "lda-ml", "nf", "dnf", "dnf-subspace")


class CliUsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    mode: str = "pipeline"
    data: str = ""
    heldout: str = ""
    checkpoint: str = ""
    out: str = "out"
    model: str = "dnf-subspace"
    flow: str = "maf"
    blocks: int = 10
    width: int = 0  # 0 -> per-dimension default
    class_dim: int = 2
    batch_size: int = 256
    epochs: int = 200
    learning_rate: float = 1e-3
    optimizer: str = "adaptive-moment"
    seed: int = 0
    format: str = "dnfv1"
    axes: str = "0,1"
    samples_per_class: int = 2000
    generator: str = "coupling-20-blocks"
    mean_radius: float = 5.0

    def validate(self):
        if self.model not in MODEL_KINDS:
            raise CliUsageError(f"--model must be one of {MODEL_KINDS}")
        if self.format not in ("dnfv1", "csv"):
            raise CliUsageError("--format must be dnfv1 or csv")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliUsageError(message)


def _build_parser():
    parser = _Parser(prog="flowlda", description=__doc__)
    sub = parser.add_subparsers(dest="mode")
    common = [
        ("--config", str), ("--seed", int), ("--out", str), ("--model", str),
        ("--blocks", int), ("--width", int), ("--class-dim", int), ("--format", str),
    ]
    for mode in ("simulate", "train", "eval", "reduce", "figure", "pipeline"):
        p = sub.add_parser(mode, add_help=True)
        for flag, typ in common:
            p.add_argument(flag, type=typ, default=None)
        p.add_argument("--data", type=str, default=None)
        p.add_argument("--heldout", type=str, default=None)
        p.add_argument("--checkpoint", type=str, default=None)
        p.add_argument("--flow", type=str, default=None, choices=(None, "maf", "coupling", "linear"))
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--learning-rate", type=float, default=None)
        p.add_argument("--optimizer", type=str, default=None)
        p.add_argument("--axes", type=str, default=None)
        p.add_argument("--samples-per-class", type=int, default=None)
        p.add_argument("--generator", type=str, default=None)
        p.add_argument("--mean-radius", type=float, default=None)
    return parser


def _merge_config(args):
    values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise CliUsageError(f"config file not found: {path}")
        try:
            values.update(json.loads(path.read_text()))
        except json.JSONDecodeError as err:
            raise CliUsageError(f"config file {path} is not valid JSON: {err}")
    names = {f.name for f in fields(ExperimentConfig)}
    unknown = set(values) - names
    if unknown:
        raise CliUsageError(f"unknown config keys: {sorted(unknown)}")
    for f in fields(ExperimentConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    values["mode"] = args.mode
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def _git_blob_hash(path):
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


class _Manifest:
    def __init__(self, cfg):
        self.cfg = cfg
        self.inputs = {}
        self.outputs = []

    def add_input(self, path):
        self.inputs[str(path)] = _git_blob_hash(path)

    def add_output(self, path):
        self.outputs.append(str(path))

    def write(self, out_dir):
        path = Path(out_dir) / "manifest.json"
        doc = {
            "config": asdict(self.cfg),
            "seed": self.cfg.seed,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
        }
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


def _require_file(path, what):
    if not path:
        raise CliUsageError(f"missing required --{what}")
    if not Path(path).exists():
        raise CliUsageError(f"{what} file not found: {path}")
    return path


def _load_data(cfg, manifest, attr="data"):
    path = _require_file(getattr(cfg, attr), attr)
    manifest.add_input(path)
    return dataset.load(path)


def _ext(cfg):
    return "csv" if cfg.format == "csv" else "dnfv"


def _train_config(cfg):
    return trainer.TrainConfig(
        batch_size=cfg.batch_size,
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        optimizer=cfg.optimizer,
        seed=cfg.seed,
    )


def _width(cfg):
    return None if cfg.width == 0 else cfg.width


def cmd_simulate(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest(cfg)
    spec = datasim.SimulationSpec(
        mean_radius=cfg.mean_radius,
        samples_per_class=cfg.samples_per_class,
        generator_flow=cfg.generator,
        seed=cfg.seed,
    )
    latent, observed, generator = datasim.generate_simulation(spec)
    for name, ds in (("latent", latent), ("observed", observed)):
        path = out / f"{name}.{_ext(cfg)}"
        dataset.save(ds, path, cfg.format)
        manifest.add_output(path)
    gen_model = DnfModel(
        generator,
        _prior_for(spec, latent),
    )
    gen_path = out / "generator.dnfm"
    checkpoint.save_model(gen_model, gen_path)
    manifest.add_output(gen_path)
    manifest.add_output(manifest.write(out))
    return 0


def _prior_for(spec, latent):
    from .dnf import ClassPrior

    prior = ClassPrior(spec.num_classes, spec.dim, spec.class_dim)
    prior.means.value[...] = spec.class_means()[:, : spec.class_dim]
    return prior


def _fit_model(cfg, data, heldout=None):
    width = _width(cfg)
    tcfg = _train_config(cfg)
    if cfg.model == "lda-fisher":
        return lda.fit_fisher(data, cfg.class_dim), None
    if cfg.model == "lda-ml":
        return lda.fit_ml(data, cfg.class_dim), None
    num_classes = 1 if cfg.model == "nf" else data.num_classes
    class_dim = data.dim if cfg.model in ("nf", "dnf") else cfg.class_dim
    labels = data.labels if cfg.model != "nf" else np.zeros(len(data), dtype=int)
    train_ds = dataset.LabeledDataset(data.features, labels)
    model = experiments.build_dnf(
        train_ds, num_classes, class_dim,
        flow_kind=cfg.flow, num_blocks=cfg.blocks, width=width, seed=cfg.seed,
    )
    model, trace = trainer.train(model, train_ds, tcfg, heldout=heldout)
    return model, trace


def cmd_train(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest(cfg)
    data = _load_data(cfg, manifest)
    heldout = None
    if cfg.heldout:
        heldout = _load_data(cfg, manifest, "heldout")
    model, trace = _fit_model(cfg, data, heldout)
    ckpt = out / "model.dnfm"
    checkpoint.save_model(model, ckpt)
    manifest.add_output(ckpt)
    if trace is not None:
        trace_path = out / "trace.csv"
        trace.to_csv(trace_path)
        manifest.add_output(trace_path)
    manifest.add_output(manifest.write(out))
    return 0


def _model_codes(model, features):
    if isinstance(model, lda.LdaModel):
        return model.project(features), model.residual(features)
    if model.class_dim < model.dim:
        return model.reduce(features), model.residual(features)
    return model.normalize(features), None


def cmd_eval(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest(cfg)
    data = _load_data(cfg, manifest)
    ckpt = _require_file(cfg.checkpoint, "checkpoint")
    manifest.add_input(ckpt)
    model = checkpoint.load_model(ckpt)
    reports = []
    seed = cfg.seed
    conf = {"checkpoint": str(ckpt), "data": str(cfg.data)}
    codes, residual = _model_codes(model, data.features)
    if isinstance(model, DnfModel):
        nll = trainer.evaluate_nll(model, data)
        reports.append(metrics.metric_report("nll", nll, conf, seed))
    reports.append(
        metrics.metric_report(
            "ari", metrics.cluster_recovery(codes, data.labels, seed=seed), conf, seed
        )
    )
    gauss = metrics.gaussianity(codes)
    reports.append(metrics.metric_report("mardia_skewness", gauss.skewness_stat, conf, seed))
    reports.append(metrics.metric_report("mardia_kurtosis", gauss.kurtosis_stat, conf, seed))
    reports.append(metrics.metric_report("mardia_pass_1pct", bool(gauss.passed), conf, seed))
    if residual is not None and residual.shape[1] > 0:
        reports.append(
            metrics.metric_report(
                "residual_probe_accuracy",
                metrics.residual_leakage(residual, data.labels, seed=seed),
                conf, seed,
            )
        )
    path = out / "metrics.json"
    metrics.save_reports(reports, path)
    manifest.add_output(path)
    manifest.add_output(manifest.write(out))
    return 0


def cmd_reduce(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest(cfg)
    data = _load_data(cfg, manifest)
    ckpt = _require_file(cfg.checkpoint, "checkpoint")
    manifest.add_input(ckpt)
    model = checkpoint.load_model(ckpt)
    codes, _ = _model_codes(model, data.features)
    path = out / "reduced.csv"
    dataset.save_csv(dataset.LabeledDataset(codes, data.labels), path)
    manifest.add_output(path)
    manifest.add_output(manifest.write(out))
    return 0


def cmd_figure(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest(cfg)
    data = _load_data(cfg, manifest)
    try:
        ax, ay = (int(v) for v in cfg.axes.split(","))
    except ValueError:
        raise CliUsageError(f"--axes must be 'i,j', got {cfg.axes!r}")
    path = out / "scatter.svg"
    figures.emit_scatter_svg(data.features, data.labels, (ax, ay), path)
    manifest.add_output(path)
    manifest.add_output(manifest.write(out))
    return 0


def _worker_count():
    raw = os.environ.get("FLOWLDA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise CliUsageError(f"FLOWLDA_THREADS must be an integer, got {raw!r}")


def cmd_pipeline(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest(cfg)
    spec = datasim.SimulationSpec(
        mean_radius=cfg.mean_radius,
        samples_per_class=cfg.samples_per_class,
        generator_flow=cfg.generator,
        seed=cfg.seed,
    )
    result = experiments.run_simulation_experiment(
        spec=spec,
        train_cfg=_train_config(cfg),
        flow_kind=cfg.flow,
        num_blocks=cfg.blocks,
        width=_width(cfg) or 64,
        workers=_worker_count(),
    )
    for name, ds in (("latent", result.latent), ("observed", result.observed)):
        path = out / f"{name}.{_ext(cfg)}"
        dataset.save(ds, path, cfg.format)
        manifest.add_output(path)
    for name, model in (
        ("dnf_subspace", result.dnf_subspace),
        ("dnf", result.dnf_full),
        ("lda", result.lda_model),
    ):
        path = out / f"{name}.dnfm"
        checkpoint.save_model(model, path)
        manifest.add_output(path)
    for name, trace in result.traces.items():
        path = out / f"trace_{name}.csv"
        trace.to_csv(path)
        manifest.add_output(path)

    conf = {"spec_seed": spec.seed, "generator": spec.generator_flow}
    reports = [
        metrics.metric_report(key, value, conf, cfg.seed)
        for key, value in result.metrics.items()
    ]
    metrics_path = out / "metrics.json"
    metrics.save_reports(reports, metrics_path)
    manifest.add_output(metrics_path)

    x = result.observed.features
    y = result.observed.labels
    fig_specs = {
        "latent.svg": (result.latent.features, result.latent.labels),
        "observed.svg": (x, y),
        "recovered_dnf_subspace.svg": (result.dnf_subspace.normalize(x), y),
        "recovered_dnf.svg": (result.dnf_full.normalize(x), y),
        "recovered_lda.svg": (result.lda_model.transform(x), y),
    }
    for name, (pts, labels) in fig_specs.items():
        path = out / name
        figures.emit_scatter_svg(pts, labels, (0, 1), path)
        manifest.add_output(path)
    manifest.add_output(manifest.write(out))
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "reduce": cmd_reduce,
    "figure": cmd_figure,
    "pipeline": cmd_pipeline,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.mode is None:
            raise CliUsageError("a subcommand is required (see --help)")
        cfg = _merge_config(args)
        return _COMMANDS[cfg.mode](cfg)
    except CliUsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (NumericError, FloatingPointError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 2
    except ContractError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except FlowLdaError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Every subcommand reads a JSON config (optional), applies ``--set key=value``
and shortcut flag overrides, runs one analysis and writes its artifacts to
the output directory. Exit codes: 0 success, 2 usage/config error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DatasetNotFoundError, WavesimError
from .graph import export_dot, isolation_scores
from .ingest import load_dataset
from .numerics import condition_number, pivoted_qr, select_columns, zero_columns
from .pipeline import (
    algorithm1,
    algorithm2,
    cross_set_report,
    dedupe_by_threshold,
    to_jsonable,
)
from .similarity import SsimParams, similarity_matrix
from .wavelet import decompose_dataset

logger = logging.getLogger("wavesim")

OUTPUT_ENV = "WAVESIM_OUTPUT_DIR"


@dataclass
class DatasetConfig:
    format: str = "cifar100"
    path: str = ""
    split: str = "train"
    test_split: str = "test"
    test_path: str = None
    class_filter: object = None
    label_mode: str = "fine"
    image_size: list = None


@dataclass
class WaveletConfig:
    basis: str = "db2"
    levels: int = 2


@dataclass
class SelectionConfig:
    tau: float = 1e5
    stop_ratio: float = 1e-5
    mode: str = "auto"


@dataclass
class ClusteringConfig:
    method: str = "kmeans"
    n_c: int = None
    seed: int = 0
    distance_cutoff: float = None


@dataclass
class SsimConfig:
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0
    window_size: int = 11
    window_sigma: float = 1.5
    component_weights: list = field(default_factory=lambda: [1.0, 1.0, 1.0])


@dataclass
class SimilarityConfig:
    measure: str = "ssim"
    ssim: SsimConfig = field(default_factory=SsimConfig)
    sigma: object = "auto"


@dataclass
class GraphConfig:
    gamma: float = 0.4
    laplacian: str = "unnormalized"
    edge_threshold: float = 0.5


@dataclass
class ThresholdConfig:
    near_identical: float = 0.9
    dedupe: float = 0.95


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    wavelet: WaveletConfig = field(default_factory=WaveletConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    output_dir: str = None
    workers: int = None

    def ssim_params(self):
        s = self.similarity.ssim
        return SsimParams(s.k1, s.k2, s.dynamic_range, s.window_size, s.window_sigma,
                          tuple(s.component_weights))

    def measure_params(self):
        if self.similarity.measure == "ssim":
            return self.ssim_params()
        return {"basis": self.wavelet.basis, "levels": self.wavelet.levels,
                "sigma": self.similarity.sigma}

    def n_jobs(self):
        return self.workers or os.cpu_count() or 1


def _build(cls, data, prefix=""):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {prefix or '<root>'} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown config key: {prefix}{key}")
    kwargs = {}
    for key, value in data.items():
        factory = names[key].default_factory
        default = factory() if factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{prefix}{key}.")
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data):
    """Strictly parse a nested dict into :class:`RunConfig`."""
    return _build(RunConfig, data)


def _set_path(data, dotted, value):
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {k} is not a section")
    node[keys[-1]] = value


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _defaults_listing():
    lines = []

    def walk(obj, prefix):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if dataclasses.is_dataclass(value):
                walk(value, f"{prefix}{f.name}.")
            else:
                lines.append(f"  {prefix}{f.name} = {json.dumps(value)}")

    walk(RunConfig(), "")
    return "config keys and defaults:\n" + "\n".join(lines)


SHORTCUTS = {
    "dataset_path": "dataset.path",
    "format": "dataset.format",
    "class_filter": "dataset.class_filter",
    "n_c": "clustering.n_c",
    "seed": "clustering.seed",
    "gamma": "graph.gamma",
    "measure": "similarity.measure",
    "basis": "wavelet.basis",
    "levels": "wavelet.levels",
    "edge_threshold": "graph.edge_threshold",
    "output_dir": "output_dir",
    "workers": "workers",
}


def load_config(args):
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
    for assignment in args.set or []:
        if "=" not in assignment:
            raise ConfigError(f"--set expects key=value, got {assignment!r}")
        key, value = assignment.split("=", 1)
        _set_path(data, key, _parse_value(value))
    for attr, dotted in SHORTCUTS.items():
        value = getattr(args, attr, None)
        if value is not None:
            _set_path(data, dotted, value)
    config = config_from_dict(data)
    if config.output_dir is None:
        config.output_dir = os.environ.get(OUTPUT_ENV, "wavesim-out")
    return config


def _load(config, split=None, path=None):
    ds = config.dataset
    path = path or ds.path
    if not path or not Path(path).exists():
        raise DatasetNotFoundError(f"dataset not found: {path!r}")
    size = tuple(ds.image_size) if ds.image_size else None
    data = load_dataset(ds.format, path, split or ds.split, ds.label_mode, size)
    if ds.class_filter is not None:
        data = data.filter_class(ds.class_filter)
    logger.info("loaded %d images of shape %s", len(data), data.image_shape)
    return data


def _out(config):
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _write_report(out, report):
    (out / "report.json").write_text(report.to_json())
    report.write_kept_csv(out / "kept_ids.csv")
    report.write_groups_csv(out / "groups.csv")


def cmd_alg1(config):
    data = _load(config)
    report = algorithm1(
        data, config.wavelet.basis, config.wavelet.levels, config.selection.tau,
        config.clustering.method, config.clustering.n_c, config.clustering.seed,
        config.selection.mode, config.clustering.distance_cutoff, config.graph.gamma,
        config.graph.laplacian, n_jobs=config.n_jobs())
    report.details["class_size"] = len(data)
    _write_report(_out(config), report)
    return 0


def cmd_alg2(config):
    data = _load(config)
    report = algorithm2(
        data, config.similarity.measure, config.measure_params(), config.graph.gamma,
        config.clustering.n_c, config.clustering.seed, config.graph.laplacian,
        n_jobs=config.n_jobs())
    out = _out(config)
    report.details["class_size"] = len(data)
    _write_report(out, report)
    S = getattr(report, "similarity", None)
    if S is not None:
        S.save(out / "similarity")
        S.to_csv(out / "similarity.csv")
        with open(out / "spectrum.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "eigenvalue"])
            for i, ev in enumerate(report.spectrum.eigenvalues):
                writer.writerow([i, f"{ev:.10g}"])
    _write_json(out / "n_c.json", {"n_c": report.n_clusters,
                                   "eigen_gap_n_c": report.details.get("eigen_gap_n_c"),
                                   "override": config.clustering.n_c})
    return 0


def cmd_cross(config):
    train = _load(config, config.dataset.split)
    test = _load(config, config.dataset.test_split, config.dataset.test_path)
    report, C = cross_set_report(train, test, config.similarity.measure,
                                 config.measure_params(), config.thresholds.near_identical,
                                 n_jobs=config.n_jobs())
    out = _out(config)
    (out / "cross_report.json").write_text(report.to_json())
    C.save(out / "cross_matrix")
    C.to_csv(out / "cross_matrix.csv")
    return 0


def cmd_dedupe(config):
    data = _load(config)
    S = similarity_matrix(data, config.similarity.measure, config.measure_params(),
                          n_jobs=config.n_jobs())
    report = dedupe_by_threshold(S, data.labels, config.thresholds.dedupe, data.source_ids)
    out = _out(config)
    _write_report(out, report)
    S.save(out / "similarity")
    return 0


def cmd_graph(config):
    threshold = config.graph.edge_threshold
    if not -1.0 <= threshold <= 1.0:
        raise ConfigError(f"graph.edge_threshold={threshold} is out of range [-1, 1]")
    data = _load(config)
    S = similarity_matrix(data, config.similarity.measure, config.measure_params(),
                          n_jobs=config.n_jobs())
    out = _out(config)
    (out / "graph.dot").write_text(export_dot(S, threshold, data.source_ids))
    scores, ranking = isolation_scores(S)
    with open(out / "isolation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "source_id", "max_similarity"])
        for rank, i in enumerate(ranking):
            writer.writerow([rank, data.source_ids[i], f"{scores[i]:.6g}"])
    S.save(out / "similarity")
    S.to_csv(out / "similarity.csv")
    return 0


def coefficient_stats(W, tau, stop_ratio, drops=(100, 200, 300)):
    """Summary of a coefficient matrix: zeros, conditioning and column selection."""
    n, d = W.shape
    zeros = zero_columns(W)
    nonzero = np.setdiff1d(np.arange(d), zeros)
    stats = {"n": n, "d": d, "zero_columns": int(zeros.size)}
    if n >= d:
        cond = condition_number(W, "exact")
        stats["condition_number"] = {"value": cond.value, "raw": cond.raw, "mode": cond.mode,
                                     "rank_deficient": cond.rank_deficient}
    if nonzero.size and n >= nonzero.size:
        cond = condition_number(W[:, nonzero], "exact")
        stats["condition_number_without_zero_columns"] = {
            "value": cond.value, "raw": cond.raw, "mode": cond.mode,
            "rank_deficient": cond.rank_deficient}
    if nonzero.size:
        qr = pivoted_qr(W[:, nonzero])
        stats["numerical_rank"] = qr.numerical_rank(stop_ratio)
        stats["stop_ratio"] = stop_ratio
        stats["condition_estimate_after_dropping"] = {
            str(k): qr.condition_estimate(qr.r_diagonal.size - k)
            for k in drops if qr.r_diagonal.size - k >= 1}
    try:
        sel = select_columns(W, tau)
        stats["selected_m"] = sel.m
        stats["selected_condition_estimate"] = sel.condition_estimate()
    except WavesimError as exc:
        stats["selected_m"] = None
        stats["selection_note"] = str(exc)
    stats["tau"] = tau
    return stats


def cmd_stats(config):
    data = _load(config)
    coeffs = decompose_dataset(data, config.wavelet.basis, config.wavelet.levels,
                               n_jobs=config.n_jobs())
    stats = coefficient_stats(coeffs.values, config.selection.tau, config.selection.stop_ratio)
    stats.update(basis=coeffs.basis, levels=coeffs.levels)
    _write_json(_out(config) / "coeff_stats.json", stats)
    return 0


COMMANDS = {
    "alg1": (cmd_alg1, "wavelet coefficients, RRQR selection and clustering"),
    "alg2": (cmd_alg2, "similarity matrix, Laplacian eigen-gaps, spectral clustering"),
    "cross": (cmd_cross, "train-vs-test similarity report"),
    "dedupe": (cmd_dedupe, "threshold-based duplicate grouping"),
    "graph": (cmd_graph, "DOT graphical model and isolation ranking"),
    "stats": (cmd_stats, "coefficient-matrix statistics"),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wavesim",
        description="Analyze redundancy and similarity inside image-classification datasets.",
        epilog=_defaults_listing(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text,
                           epilog=_defaults_listing(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key, e.g. graph.gamma=0.3 (repeatable)")
        p.add_argument("--dataset-path", dest="dataset_path")
        p.add_argument("--format", choices=["cifar10", "cifar100", "mnist", "image_dir"])
        p.add_argument("--class-filter", dest="class_filter")
        p.add_argument("--n-c", dest="n_c", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--gamma", type=float)
        p.add_argument("--measure", choices=["ssim", "cosine", "gaussian"])
        p.add_argument("--basis", choices=["haar", "db2"])
        p.add_argument("--levels", type=int)
        p.add_argument("--edge-threshold", dest="edge_threshold", type=float)
        p.add_argument("--output-dir", dest="output_dir",
                       help=f"defaults to ${OUTPUT_ENV} or ./wavesim-out")
        p.add_argument("--workers", type=int, help="worker threads (default: all cores)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args)
        return COMMANDS[args.command][0](config)
    except WavesimError as exc:
        print(f"wavesim {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (TypeError, ValueError) as exc:
        print(f"wavesim {args.command}: invalid config: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

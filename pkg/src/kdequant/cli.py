"""Command-line entry point and experiment orchestration.

Subcommands: `run` (full experiment with model selection), `sweep`
(hyperparameter sensitivity), `synth` (synthetic dataset generation) and
`eval` (single-method quick path). Every config key can be overridden by an
environment variable with the ``KDEQUANT_`` prefix (nested keys joined with
``__``), and CLI flags override both.
"""

from __future__ import annotations

import itertools
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import click
import jsonschema
import numpy as np
import yaml

from . import __version__
from .core import LabelledDataset, concat_datasets
from .dataio import (
    SyntheticSpec,
    circle_means,
    generate_synthetic,
    load_csv,
    stratified_split,
    write_csv,
)
from .protocol import (
    TEST_SEED_OFFSET,
    GridSearchResult,
    ProtocolConfig,
    SelectionLoss,
    evaluate_protocol,
    grid_search,
)
from .quantifiers import METHOD_NAMES, build_quantifier

ENV_PREFIX = "KDEQUANT_"

# Hyperparameter grids used for model selection when a config asks for the
# full ranges by writing the string "full" instead of a list.
FULL_GRIDS = {
    "C": [10.0**k for k in range(-3, 4)],
    "class_weight": ["balanced", "none"],
    "h": [round(0.01 * k, 2) for k in range(1, 21)],
    "b": list(range(2, 11)) + list(range(12, 33, 2)) + [64],
}

RESULT_RECORD_SCHEMA = {
    "type": "object",
    "required": [
        "method",
        "bag_index",
        "true_prevalence",
        "estimated_prevalence",
        "ae",
        "rae",
    ],
    "properties": {
        "method": {"type": "string"},
        "bag_index": {"type": "integer", "minimum": 0},
        "true_prevalence": {"type": "array", "items": {"type": "number"}},
        "estimated_prevalence": {"type": "array", "items": {"type": "number"}},
        "ae": {"type": "number", "minimum": 0},
        "rae": {"type": "number", "minimum": 0},
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    pass


@dataclass
class MethodSpec:
    name: str
    grid: list[dict]


@dataclass
class ProtocolSettings:
    val_bags: int = 100
    val_bag_size: int = 200
    test_bags: int = 200
    test_bag_size: int = 200


@dataclass
class ExperimentConfig:
    dataset: dict
    methods: list[MethodSpec]
    protocol: ProtocolSettings
    loss: SelectionLoss = SelectionLoss.MAE
    seed: int = 0
    out_dir: Path = Path("results")
    jobs: int = 1
    extend_bandwidth: bool = False
    validation_fraction: float = 0.4
    raw: dict = field(default_factory=dict)


def apply_env_overrides(mapping: dict, environ=os.environ, prefix=ENV_PREFIX) -> dict:
    """Overlay KDEQUANT_* environment variables onto a config mapping.

    Nested keys use double underscores: KDEQUANT_PROTOCOL__TEST_BAGS=50.
    Values are parsed as YAML scalars.
    """
    out = json.loads(json.dumps(mapping))  # deep copy of plain data
    for key, value in sorted(environ.items()):
        if not key.startswith(prefix):
            continue
        path = key[len(prefix):].lower().split("__")
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = yaml.safe_load(value)
    return out


def _expand_grid(grid_spec: dict | None) -> list[dict]:
    if not grid_spec:
        return [{}]
    keys, value_lists = [], []
    for key, values in grid_spec.items():
        if isinstance(values, str) and values == "full":
            values = FULL_GRIDS[key]
        if not isinstance(values, (list, tuple)):
            values = [values]
        keys.append(key)
        value_lists.append(list(values))
    return [dict(zip(keys, combo)) for combo in itertools.product(*value_lists)]


def parse_experiment_config(mapping: dict) -> ExperimentConfig:
    if "dataset" not in mapping:
        raise ConfigError("config needs a 'dataset' section")
    raw_methods = mapping.get("methods") or []
    if not raw_methods:
        raise ConfigError("config lists no methods")
    methods = []
    for entry in raw_methods:
        if isinstance(entry, str):
            entry = {"name": entry}
        name = str(entry.get("name", "")).lower()
        if name not in METHOD_NAMES:
            raise ConfigError(f"unknown method {name!r}; known: {', '.join(METHOD_NAMES)}")
        methods.append(MethodSpec(name, _expand_grid(entry.get("grid"))))
    proto_map = mapping.get("protocol") or {}
    protocol = ProtocolSettings(
        val_bags=int(proto_map.get("val_bags", 100)),
        val_bag_size=int(proto_map.get("val_bag_size", 200)),
        test_bags=int(proto_map.get("test_bags", 200)),
        test_bag_size=int(proto_map.get("test_bag_size", 200)),
    )
    for v in (protocol.val_bags, protocol.val_bag_size, protocol.test_bags, protocol.test_bag_size):
        if v < 1:
            raise ConfigError("protocol sizes must be at least 1")
    try:
        loss = SelectionLoss(str(mapping.get("loss", "mae")).lower())
    except ValueError as exc:
        raise ConfigError(f"loss must be mae or mrae: {exc}") from None
    return ExperimentConfig(
        dataset=mapping["dataset"],
        methods=methods,
        protocol=protocol,
        loss=loss,
        seed=int(mapping.get("seed", 0)),
        out_dir=Path(mapping.get("out", "results")),
        jobs=int(mapping.get("jobs", 1)),
        extend_bandwidth=bool(mapping.get("extend_bandwidth", False)),
        validation_fraction=float(mapping.get("validation_fraction", 0.4)),
        raw=mapping,
    )


def _spec_from_mapping(ds: dict) -> SyntheticSpec:
    n = int(ds.get("classes", 3))
    d = int(ds.get("dim", 2))
    blob_classes = ds.get("blob_classes")
    means = ds.get("means")
    if means is None:
        if blob_classes is not None:
            raise ConfigError("blob_classes requires explicit means")
        means = circle_means(n, d, float(ds.get("separation", 2.2)))
    scales = np.asarray(ds.get("scales", 1.0), dtype=float)
    beta = np.asarray(ds.get("beta", np.full(n, 1.0 / n)), dtype=float)
    return SyntheticSpec(
        classes=n,
        dim=d,
        means=np.asarray(means, dtype=float),
        scales=scales,
        train_size=int(ds.get("train_size", 1000)),
        test_pool_size=int(ds.get("test_pool_size", 3000)),
        beta=beta,
        blob_classes=None if blob_classes is None else np.asarray(blob_classes, dtype=int),
    )


def resolve_dataset(config: ExperimentConfig):
    """Returns (train, val_pool, test_pool, dataset_id)."""
    ds = config.dataset
    if "synthetic" in ds:
        spec = _spec_from_mapping(ds["synthetic"])
        train_full, test_pool = generate_synthetic(spec, config.seed)
        train, val_pool = stratified_split(
            train_full, config.validation_fraction, config.seed
        )
        return train, val_pool, test_pool, ds.get("id", "synthetic")
    if "csv" in ds:
        csv_cfg = ds["csv"]
        label_col = csv_cfg.get("label_column", "label")
        train_full, names = load_csv(csv_cfg["train"], label_col)
        test_pool, _ = load_csv(csv_cfg["test"], label_col, label_names=names)
        if "validation" in csv_cfg:
            val_pool, _ = load_csv(csv_cfg["validation"], label_col, label_names=names)
            train = train_full
        else:
            train, val_pool = stratified_split(
                train_full, config.validation_fraction, config.seed
            )
        return train, val_pool, test_pool, ds.get("id", Path(csv_cfg["train"]).stem)
    raise ConfigError("dataset section needs a 'synthetic' or 'csv' entry")


def _extend_bandwidth_grid(grid: list[dict]) -> list[dict]:
    """Points above the current h ceiling, 50% further in the same step."""
    values = sorted({p["h"] for p in grid if "h" in p})
    if len(values) < 2:
        return []
    step = values[-1] - values[-2]
    top = values[-1]
    extra_values = []
    v = top + step
    while v <= 1.5 * top + 1e-12:
        extra_values.append(round(v, 10))
        v += step
    base = [dict(p) for p in grid if p.get("h") == top]
    out = []
    for v in extra_values:
        for b in base:
            q = dict(b)
            q["h"] = v
            out.append(q)
    return out


@dataclass
class MethodOutcome:
    name: str
    params: dict | None
    report: object | None
    error: str | None
    grid_scores: tuple


def _run_method(
    spec: MethodSpec,
    config: ExperimentConfig,
    train: LabelledDataset,
    val_pool: LabelledDataset,
    test_pool: LabelledDataset,
    bundle_cache: dict,
    echo=lambda msg: None,
) -> MethodOutcome:
    def builder(params: dict):
        q = build_quantifier(spec.name, params, config.seed)
        if hasattr(q, "bundle_cache"):
            q.bundle_cache = bundle_cache
        return q

    val_cfg = ProtocolConfig(config.protocol.val_bags, config.protocol.val_bag_size, config.seed)
    test_cfg = ProtocolConfig(
        config.protocol.test_bags,
        config.protocol.test_bag_size,
        config.seed ^ TEST_SEED_OFFSET,
    )
    try:
        result: GridSearchResult = grid_search(
            builder, spec.grid, train, val_pool, val_cfg, config.loss,
            jobs=config.jobs, refit=False,
        )
        scores = result.scores
        best = result.best_params
        h_values = sorted({p["h"] for p in spec.grid if "h" in p})
        if len(h_values) > 1 and best.get("h") == h_values[-1]:
            echo(
                f"warning: {spec.name} selected the bandwidth grid boundary h={best['h']}"
            )
            if config.extend_bandwidth:
                extra = _extend_bandwidth_grid(spec.grid)
                if extra:
                    echo(f"extending bandwidth grid by {len(extra)} points")
                    more = grid_search(
                        builder, extra, train, val_pool, val_cfg, config.loss,
                        jobs=config.jobs, refit=False,
                    )
                    scores = scores + more.scores
                    candidates = [s for s in scores if s.score is not None]
                    best = min(candidates, key=lambda s: s.score).params
        final = builder(dict(best))
        final.fit(concat_datasets(train, val_pool))
        report = evaluate_protocol(
            final,
            test_pool,
            test_cfg,
            method_id=spec.name,
            dataset_id="",
            jobs=config.jobs,
        )
        return MethodOutcome(spec.name, dict(best), report, None, tuple(scores))
    except Exception as exc:  # noqa: BLE001 - one method must not kill the run
        return MethodOutcome(spec.name, None, None, repr(exc), ())


def _format_sig(x: float, digits: int = 6) -> str:
    return f"{x:.{digits}g}"


def write_outputs(config: ExperimentConfig, outcomes: list[MethodOutcome], dataset_id: str):
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)

    results_path = out / "results.jsonl"
    with results_path.open("w", encoding="utf-8") as f:
        for oc in outcomes:
            if oc.report is None:
                continue
            for bag in oc.report.per_bag:
                record = {
                    "method": oc.name,
                    "bag_index": bag.bag_index,
                    "true_prevalence": [float(v) for v in bag.true_prevalence],
                    "estimated_prevalence": [float(v) for v in bag.estimated_prevalence],
                    "ae": float(bag.ae),
                    "rae": float(bag.rae),
                }
                jsonschema.validate(record, RESULT_RECORD_SCHEMA)
                f.write(json.dumps(record, separators=(",", ":")) + "\n")

    succeeded = [oc for oc in outcomes if oc.report is not None]
    key = (lambda oc: oc.report.mean_ae) if config.loss is SelectionLoss.MAE else (
        lambda oc: oc.report.mean_rae
    )
    winner = min(succeeded, key=key).name if succeeded else None

    summary = {
        "dataset": dataset_id,
        "loss": config.loss.value,
        "winner": winner,
        "methods": [
            {
                "name": oc.name,
                "params": oc.params,
                "mae": None if oc.report is None else oc.report.mean_ae,
                "mrae": None if oc.report is None else oc.report.mean_rae,
                "error": oc.error,
            }
            for oc in outcomes
        ],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")

    lines = [f"dataset: {dataset_id}   selection loss: {config.loss.value}", ""]
    lines.append(f"{'method':<10} {'MAE':>12} {'MRAE':>12}  params")
    for oc in outcomes:
        mark = "*" if oc.name == winner else " "
        if oc.report is None:
            lines.append(f"{oc.name:<10} {'failed':>12} {'':>12}  {oc.error}")
        else:
            lines.append(
                f"{oc.name:<10}{mark}{_format_sig(oc.report.mean_ae):>12}"
                f" {_format_sig(oc.report.mean_rae):>12}  {oc.params}"
            )
    (out / "table.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    manifest = {
        "seed": config.seed,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python_version": sys.version.split()[0],
        "config": config.raw,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return summary


def run_experiment(config: ExperimentConfig, echo=lambda msg: None) -> dict:
    """Grid-search, refit and evaluate every configured method.

    Writes results.jsonl, summary.json, table.txt and manifest.json into the
    output directory; returns the summary mapping. Raises RuntimeError when
    every method failed.
    """
    train, val_pool, test_pool, dataset_id = resolve_dataset(config)
    bundle_cache: dict = {}
    outcomes = []
    for spec in config.methods:
        echo(f"running {spec.name} ({len(spec.grid)} grid points)")
        outcome = _run_method(spec, config, train, val_pool, test_pool, bundle_cache, echo)
        if outcome.error is not None:
            echo(f"  {spec.name} failed: {outcome.error}")
        else:
            echo(
                f"  {spec.name}: MAE={outcome.report.mean_ae:.6g}"
                f" MRAE={outcome.report.mean_rae:.6g} params={outcome.params}"
            )
        outcomes.append(outcome)
    summary = write_outputs(config, outcomes, dataset_id)
    if all(oc.report is None for oc in outcomes):
        raise RuntimeError("all methods failed")
    return summary


def sensitivity_sweep(
    config: ExperimentConfig,
    method_name: str,
    axis: str,
    values: list[float],
    echo=lambda msg: None,
) -> list[dict]:
    """Evaluate one method across axis values on identical test bags.

    Hyperparameters other than the axis come from the method's first grid
    point; the model is fitted on the full training data (train plus
    validation pool) for every value.
    """
    if axis not in ("h", "b"):
        raise ConfigError("axis must be 'h' or 'b'")
    if not values:
        raise ConfigError("sweep needs at least one value")
    spec = next((m for m in config.methods if m.name == method_name), None)
    if spec is None:
        raise ConfigError(f"method {method_name!r} is not in the config")
    base = dict(spec.grid[0])
    train, val_pool, test_pool, _ = resolve_dataset(config)
    full_train = concat_datasets(train, val_pool)
    test_cfg = ProtocolConfig(
        config.protocol.test_bags,
        config.protocol.test_bag_size,
        config.seed ^ TEST_SEED_OFFSET,
    )
    bundle_cache: dict = {}
    rows = []
    for v in values:
        params = dict(base)
        params[axis] = int(v) if axis == "b" else float(v)
        try:
            q = build_quantifier(method_name, params, config.seed)
            if hasattr(q, "bundle_cache"):
                q.bundle_cache = bundle_cache
            q.fit(full_train)
            report = evaluate_protocol(q, test_pool, test_cfg, jobs=config.jobs)
            rows.append(
                {"value": params[axis], "mae": report.mean_ae, "mrae": report.mean_rae}
            )
            echo(f"{axis}={params[axis]}: MAE={report.mean_ae:.6g}")
        except Exception as exc:  # noqa: BLE001
            rows.append({"value": params[axis], "error": repr(exc)})
            echo(f"{axis}={params[axis]}: failed: {exc!r}")
    return rows


def write_sweep(out_dir: Path, method: str, axis: str, rows: list[dict]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"method": method, "axis": axis, "rows": rows}
    (out_dir / "sweep.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    lines = [f"{axis:>10} {'MAE':>12} {'MRAE':>12}"]
    for row in rows:
        if "error" in row:
            lines.append(f"{row['value']:>10} {'failed':>12} {row['error']}")
        else:
            lines.append(
                f"{row['value']:>10} {_format_sig(row['mae']):>12}"
                f" {_format_sig(row['mrae']):>12}"
            )
    (out_dir / "sweep.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_config(path: str, overrides: dict) -> ExperimentConfig:
    mapping = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    mapping = apply_env_overrides(mapping)
    for key, value in overrides.items():
        if value is not None:
            mapping[key] = value
    try:
        return parse_experiment_config(mapping)
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from None


@click.group()
@click.version_option(__version__)
def main():
    """Class-prevalence estimation experiments."""


_common = [
    click.option("--seed", type=int, default=None, help="override the config seed"),
    click.option("--jobs", type=int, default=None, help="parallel bag evaluation"),
    click.option(
        "--loss", type=click.Choice(["mae", "mrae"]), default=None,
        help="model-selection loss",
    ),
    click.option("--out", type=click.Path(), default=None, help="output directory"),
]


def _with_common(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
@_with_common
def run(config_path, seed, jobs, loss, out):
    """Run the experiment described by a YAML config."""
    config = _load_config(
        config_path, {"seed": seed, "jobs": jobs, "loss": loss, "out": out}
    )
    try:
        run_experiment(config, echo=click.echo)
    except RuntimeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"wrote {config.out_dir}/results.jsonl")


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--method", required=True, help="method name from the config")
@click.option("--axis", type=click.Choice(["h", "b"]), required=True)
@click.option("--values", required=True, help="comma-separated axis values")
@_with_common
def sweep(config_path, method, axis, values, seed, jobs, loss, out):
    """Sensitivity sweep of one hyperparameter on identical bags."""
    config = _load_config(
        config_path, {"seed": seed, "jobs": jobs, "loss": loss, "out": out}
    )
    value_list = [float(v) for v in values.split(",") if v.strip()]
    rows = sensitivity_sweep(config, method.lower(), axis, value_list, echo=click.echo)
    write_sweep(config.out_dir, method.lower(), axis, rows)
    click.echo(f"wrote {config.out_dir}/sweep.json")


@main.command()
@click.argument("spec_path", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), required=True, help="output directory")
@click.option("--seed", type=int, default=0)
def synth(spec_path, out, seed):
    """Generate a synthetic dataset (train.csv and test_pool.csv)."""
    mapping = yaml.safe_load(Path(spec_path).read_text(encoding="utf-8")) or {}
    mapping = apply_env_overrides(mapping)
    spec = _spec_from_mapping(mapping)
    train, pool = generate_synthetic(spec, seed)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "train.csv", train)
    write_csv(out_dir / "test_pool.csv", pool)
    click.echo(f"wrote {out_dir}/train.csv ({train.size} rows) and test_pool.csv ({pool.size} rows)")


@main.command("eval")
@click.option("--method", required=True, type=click.Choice(list(METHOD_NAMES)))
@click.option("--train", "train_path", required=True, type=click.Path(exists=True))
@click.option("--pool", "pool_path", required=True, type=click.Path(exists=True))
@click.option("--label-column", default="label")
@click.option("--bags", type=int, default=100)
@click.option("--bag-size", type=int, default=200)
@click.option("--seed", type=int, default=0)
@click.option("--jobs", type=int, default=1)
@click.option("--h", "bandwidth", type=float, default=None, help="KDE bandwidth")
@click.option("--bins", type=int, default=None, help="DM histogram bins")
@click.option("--trials", type=int, default=None, help="Monte Carlo trials")
@click.option("--c", "c_value", type=float, default=None, help="LR regularization C")
@click.option("--class-weight", type=click.Choice(["balanced", "none"]), default=None)
def eval_cmd(method, train_path, pool_path, label_column, bags, bag_size, seed, jobs,
             bandwidth, bins, trials, c_value, class_weight):
    """Fit one method on a CSV and score it on APP bags from a pool."""
    params: dict = {}
    if bandwidth is not None:
        params["h"] = bandwidth
    if bins is not None:
        params["b"] = bins
    if trials is not None:
        params["t"] = trials
    if c_value is not None:
        params["C"] = c_value
    if class_weight is not None:
        params["class_weight"] = class_weight
    train, names = load_csv(train_path, label_column)
    pool, _ = load_csv(pool_path, label_column, label_names=names)
    q = build_quantifier(method, params, seed)
    q.fit(train)
    report = evaluate_protocol(
        q, pool, ProtocolConfig(bags, bag_size, seed ^ TEST_SEED_OFFSET), jobs=jobs
    )
    click.echo(f"{method}: MAE={report.mean_ae:.6g} MRAE={report.mean_rae:.6g}")


if __name__ == "__main__":
    main()

"""Configuration-driven experiment runner.

Usage:
    fedsim run <config.json> [--out DIR] [--seeds a,b,c] [--override k=v ...]

The config is a single JSON document; see README for the schema.  A config
may name a preset (``{"preset": "champion"}``) and override any of its
top-level keys.  Each (experiment, seed) pair writes one JSONL telemetry
file; a summary CSV and a run manifest are written at the end.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence,
4 output/IO error.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from .baselines import BaselineConfig
from .engine import DatasetSpec, ExperimentConfig, RoundRecord, run_experiment
from .errors import ConfigError, DivergenceError, FedSimError, OutputError
from .metrics import ExperimentSummary, summarize
from .model import TrainConfig
from .scoring import SelectorConfig

_SUMMARY_HEADER = "label,seed,peak_acc,final_acc,stable_acc,stability_drop,selection_std"


@dataclass
class RunManifest:
    config_sha256: str
    seeds: list[int]
    output_dir: str
    labels: list[str]


def _desk_dataset() -> dict:
    return {
        "kind": "synthetic",
        "n_classes": 10,
        "n_features": 32,
        "n_per_class": 120,
        "class_separation": 3.0,
        "seed": 7,
    }


def _champion_preset() -> dict:
    return {
        "seeds": [1, 2, 3],
        "experiments": [
            {
                "label": "champion",
                "dataset": _desk_dataset(),
                "n_clients": 12,
                "dirichlet_alpha": 0.1,
                "rounds": 60,
                "clients_per_round": 6,
                "selector": {
                    "kind": "hetero_select",
                    "composition": "additive",
                    "staleness_gamma": 0.7,
                    "fairness_eta": 0.3,
                    "base_temperature": 2.0,
                },
                "train": {
                    "local_epochs": 2,
                    "learning_rate": 0.05,
                    "proximal_mu": 0.1,
                    "batch_size": 32,
                },
            }
        ],
    }


def _ablation_gamma_preset() -> dict:
    experiments = []
    for gamma in (0.0, 0.3, 0.7, 1.0):
        experiments.append(
            {
                "label": f"gamma-{gamma}",
                "dataset": _desk_dataset(),
                "n_clients": 12,
                "dirichlet_alpha": 0.1,
                "rounds": 50,
                "clients_per_round": 6,
                "selector": {
                    "kind": "hetero_select",
                    "composition": "additive",
                    "staleness_gamma": gamma,
                    "fairness_eta": 0.3,
                    "base_temperature": 1.0,
                },
                "train": {
                    "local_epochs": 2,
                    "learning_rate": 0.05,
                    "proximal_mu": 0.01,
                    "batch_size": 32,
                },
            }
        )
    return {"seeds": [1, 2, 3], "experiments": experiments}


PRESETS = {
    "champion": _champion_preset,
    "ablation-gamma": _ablation_gamma_preset,
}


def _take(d: dict, allowed: dict, what: str) -> dict:
    """Pop known keys with defaults; reject unknown ones."""
    out = {}
    d = dict(d)
    for key, default in allowed.items():
        out[key] = d.pop(key, default)
    if d:
        raise ConfigError(f"unknown field '{next(iter(d))}' in {what}")
    return out


_REQUIRED = object()


def _require(d: dict, key: str, what: str, alias: str = ""):
    if key not in d or d[key] is _REQUIRED:
        note = f" ({alias})" if alias else ""
        raise ConfigError(f"missing required field '{key}'{note} in {what}")
    return d[key]


def _parse_selector(raw: dict) -> SelectorConfig | BaselineConfig:
    raw = dict(raw)
    kind = raw.pop("kind", "hetero_select")
    if kind == "hetero_select":
        fields = _take(
            raw,
            {
                "weight_info": 1.0,
                "weight_diversity": 1.0,
                "weight_momentum": 1.0,
                "weight_fairness": 1.0,
                "weight_staleness": 1.0,
                "weight_norm": 1.0,
                "fairness_eta": 0.3,
                "staleness_gamma": 0.7,
                "norm_alpha": 0.5,
                "base_temperature": 2.0,
                "staleness_cap": 20,
                "epsilon": 1e-8,
                "composition": "additive",
                "subset_size": 6,
                "schedule_horizon": 100,
            },
            "selector",
        )
        return SelectorConfig(**fields)
    if kind in ("random", "power_of_choice", "oort_like"):
        fields = _take(
            raw,
            {"candidate_count": None, "exploration_fraction": 0.2},
            "selector",
        )
        return BaselineConfig(kind=kind, **fields)
    raise ConfigError(f"unknown selector kind '{kind}'")


def _parse_experiment(raw: dict) -> tuple[str, ExperimentConfig]:
    raw = dict(raw)
    label = raw.pop("label", "experiment")
    n_clients = _require(raw, "n_clients", f"experiment '{label}'", alias="K")
    rounds = _require(raw, "rounds", f"experiment '{label}'", alias="T")
    clients_per_round = _require(
        raw, "clients_per_round", f"experiment '{label}'", alias="m"
    )
    fields = _take(
        raw,
        {
            "n_clients": None,
            "rounds": None,
            "clients_per_round": None,
            "dataset": _desk_dataset(),
            "dirichlet_alpha": 0.1,
            "selector": {"kind": "hetero_select"},
            "train": {},
            "test_fraction": 0.2,
            "parallelism": 1,
            "sample_weighted_aggregation": False,
            "sample_weighted_peer_average": False,
        },
        f"experiment '{label}'",
    )
    dataset = DatasetSpec(
        **_take(
            fields["dataset"],
            {
                "kind": "synthetic",
                "n_classes": 10,
                "n_features": 32,
                "n_per_class": 120,
                "class_separation": 3.0,
                "seed": 7,
                "path": None,
            },
            "dataset",
        )
    )
    train = TrainConfig(
        **_take(
            fields["train"],
            {
                "local_epochs": 2,
                "learning_rate": 0.05,
                "proximal_mu": 0.1,
                "batch_size": 32,
            },
            "train",
        )
    )
    selector = _parse_selector(fields["selector"])
    if isinstance(selector, SelectorConfig):
        selector.subset_size = int(clients_per_round)
    cfg = ExperimentConfig(
        dataset=dataset,
        n_clients=int(n_clients),
        dirichlet_alpha=float(fields["dirichlet_alpha"]),
        rounds=int(rounds),
        clients_per_round=int(clients_per_round),
        selector=selector,
        train=train,
        test_fraction=float(fields["test_fraction"]),
        parallelism=int(fields["parallelism"]),
        sample_weighted_aggregation=bool(fields["sample_weighted_aggregation"]),
        sample_weighted_peer_average=bool(fields["sample_weighted_peer_average"]),
    )
    return label, cfg


def _apply_override(config: dict, spec: str) -> None:
    if "=" not in spec:
        raise ConfigError(f"override '{spec}' is not of the form key=value")
    path, raw_value = spec.split("=", 1)
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    keys = path.split(".")
    targets: list[dict]
    if keys[0] in ("seeds", "experiments"):
        targets = [config]
    else:
        targets = config["experiments"]
    for target in targets:
        node = target
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path '{path}' crosses a non-object")
        node[keys[-1]] = value


def load_config(config_path: str, overrides: list[str] | None = None) -> dict:
    """Read, preset-expand, and override a config file into canonical form."""
    try:
        with open(config_path, encoding="utf-8") as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {config_path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{config_path}: invalid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"{config_path}: top level must be a JSON object")

    preset_name = user.pop("preset", None)
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigError(
                f"unknown preset '{preset_name}' (have: {', '.join(sorted(PRESETS))})"
            )
        config = PRESETS[preset_name]()
        config.update(copy.deepcopy(user))
    else:
        config = copy.deepcopy(user)

    if "experiments" not in config:
        seeds = config.pop("seeds", [0])
        config = {"seeds": seeds, "experiments": [config]}
    config.setdefault("seeds", [0])
    for spec in overrides or []:
        _apply_override(config, spec)
    return config


def emit_summary(rows: list[tuple[str, int, ExperimentSummary]], path: Path) -> None:
    """Write the per-(experiment, seed) summary CSV, 6-decimal fixed point."""
    lines = [_SUMMARY_HEADER]
    for label, seed, s in rows:
        lines.append(
            f"{label},{seed},{s.peak_accuracy:.6f},{s.final_accuracy:.6f},"
            f"{s.stable_accuracy:.6f},{s.stability_drop:.6f},"
            f"{s.selection_count_std:.6f}"
        )
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write summary {path}: {exc}") from exc


def emit_plotdata(records: list[RoundRecord], path: Path) -> None:
    """Write one JSON object per round; optional fields are omitted."""
    lines = []
    for r in records:
        obj: dict = {
            "round": r.round_index,
            "accuracy": r.global_accuracy,
            "selected": list(r.selected),
        }
        if r.temperature is not None:
            obj["temperature"] = r.temperature
        if r.probabilities is not None:
            obj["probabilities"] = list(r.probabilities)
        lines.append(json.dumps(obj))
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write telemetry {path}: {exc}") from exc


def execute(config: dict, out_dir: Path) -> RunManifest:
    """Run every configured (experiment, seed) pair and write outputs."""
    seeds = [int(s) for s in config["seeds"]]
    if not seeds:
        raise ConfigError("seeds list is empty")
    parsed = [_parse_experiment(e) for e in config["experiments"]]
    labels = [label for label, _ in parsed]
    if len(set(labels)) != len(labels):
        raise ConfigError("experiment labels must be unique")

    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output dir {out_dir}: {exc}") from exc

    rows = []
    for label, base_cfg in parsed:
        for seed in seeds:
            cfg = replace(base_cfg, master_seed=seed)
            result = run_experiment(cfg)
            emit_plotdata(result.records, out_dir / f"{label}_seed{seed}.jsonl")
            rows.append((label, seed, summarize(result.records)))
    emit_summary(rows, out_dir / "summary.csv")

    manifest = RunManifest(
        config_sha256=hashlib.sha256(
            json.dumps(config, sort_keys=True).encode()
        ).hexdigest(),
        seeds=seeds,
        output_dir=str(out_dir),
        labels=labels,
    )
    try:
        (out_dir / "manifest.json").write_text(
            json.dumps(manifest.__dict__, indent=2) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise OutputError(f"cannot write manifest: {exc}") from exc
    return manifest


def run(config_path: str, overrides: list[str] | None = None,
        out_dir: str = "results", seeds: str | None = None) -> int:
    """CLI core: returns the process exit code, printing diagnostics."""
    try:
        config = load_config(config_path, overrides)
        if seeds:
            try:
                config["seeds"] = [int(s) for s in seeds.split(",") if s]
            except ValueError:
                raise ConfigError(f"--seeds expects integers, got '{seeds}'")
        manifest = execute(config, Path(out_dir))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return 3
    except (OutputError, OSError) as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return 4
    except FedSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(
        f"wrote {len(manifest.labels) * len(manifest.seeds)} telemetry files"
        f" and summary.csv to {manifest.output_dir}"
    )
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fedsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run experiments from a JSON config")
    run_p.add_argument("config", help="path to the config JSON")
    run_p.add_argument("--out", default="results", help="output directory")
    run_p.add_argument("--seeds", default=None, help="comma-separated seed list")
    run_p.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config field (dotted path, applied to every experiment)",
    )
    args = parser.parse_args(argv)
    return run(args.config, args.override, args.out, args.seeds)


if __name__ == "__main__":
    sys.exit(main())

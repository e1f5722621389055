"""``laa-detect`` command line: generate, train, evaluate, attack-impact, detect.

Exit codes: 0 on success, 1 on a domain failure (non-convergence, divergence),
2 on usage, IO or parse errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .attack import AttackConfig, inject_laa
from .config import RunConfig, load_config
from .dataset import (
    FEATURE_COUNT, NormalizationStats, ScenarioBuilder, ScenarioConfig, apply_normalizer, assign_labels,
    day_index_for, extract_features, fit_normalizer, ingest_prices, layout_hash, load_scenario, peak_day,
    read_manifest, save_scenario, split_indices, write_manifest,
)
from .errors import DomainError, InputError
from .grid import NetworkModel, congested_hours, default_network, load_network
from .market import Population, aggregate_schedules, build_population, dso_tariff_loop, hourly_power_flow, \
    load_roster, optimize_population
from .metrics import confusion, report, report_csv
from .nn import mlp_predict, mlp_train, predict, train
from .nn.lstm import sequence_forward
from .nn.mlp import mlp_forward
from .nn.serialize import load_model, save_model, write_history

MODEL_KINDS = ("lstm", "mlp")
IMPACT_COLUMNS = ["hour", "clean_flow_kva", "attacked_flow_kva", "capacity_kva",
                  "clean_price", "attacked_price", "clean_congested", "attacked_congested"]


# --- shared setup -------------------------------------------------------------


def _network(cfg: RunConfig) -> NetworkModel:
    if cfg.network is None:
        return default_network()
    with _open(cfg.network) as fh:
        return load_network(fh)


def _population(cfg: RunConfig, net: NetworkModel) -> Population:
    if cfg.roster is None:
        return build_population(net, cfg.master_seed)
    with _open(cfg.roster) as fh:
        pop = load_roster(fh, net.bus_count)
    pop.aggregators.check_coverage(net)
    return pop


def _prices(cfg: RunConfig):
    if cfg.prices is None:
        return None
    with _open(cfg.prices) as fh:
        return ingest_prices(fh)


def _open(path):
    try:
        return open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc.strerror}") from None


def scenario_config(cfg: RunConfig) -> ScenarioConfig:
    return ScenarioConfig(
        gamma=cfg.gamma, min_compromised=cfg.min_compromised, max_compromised=cfg.max_compromised,
        compromised=cfg.compromised, weather_noise=cfg.weather_noise,
        noise_day=cfg.noise_day, noise_hour=cfg.noise_hour,
    )


def _manifest_path(cfg: RunConfig) -> Path:
    return cfg.out_dir / "manifest.csv"


def _model_path(cfg: RunConfig, kind: str) -> Path:
    return cfg.out_dir / "models" / f"{kind}.json"


def _load_split(cfg: RunConfig, split: str) -> tuple[np.ndarray, np.ndarray]:
    manifest = _manifest_path(cfg)
    if not manifest.exists():
        raise InputError(f"manifest not found: {manifest}")
    rows = [r for r in read_manifest(manifest) if r[2] == split]
    if not rows:
        raise InputError(f"the {split} split of {manifest} is empty")
    days = [load_scenario(manifest.parent / name) for name, _, _ in rows]
    x = np.stack([extract_features(d) for d in days])
    y = np.array([d.label for d in days])
    return x, y


# --- commands -----------------------------------------------------------------


def cmd_generate(cfg: RunConfig) -> list[tuple[str, int, str]]:
    """Write one JSON file per day plus ``manifest.csv`` with the stratified split."""
    net = _network(cfg)
    pop = _population(cfg, net)
    builder = ScenarioBuilder(net, pop, cfg.master_seed, scenario_config(cfg), _prices(cfg))
    labels = assign_labels(cfg.master_seed, cfg.day_count)
    _, test = split_indices(labels, cfg.master_seed, cfg.test_count)
    test_set = set(test.tolist())
    folder = cfg.out_dir / "scenarios"
    folder.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, label in enumerate(labels):
        day = builder.build(day_index_for(i), bool(label))
        name = f"day_{day.date_index:05d}.json"
        save_scenario(day, folder / name)
        rows.append((f"scenarios/{name}", int(label), "test" if i in test_set else "train"))
    write_manifest(rows, _manifest_path(cfg))
    return rows


def cmd_train(cfg: RunConfig, kinds: Sequence[str] = MODEL_KINDS) -> dict[str, float]:
    """Fit each detector on the train split; return its best validation accuracy."""
    x, y = _load_split(cfg, "train")
    val_count = max(2, round(cfg.validation_fraction * len(y)))
    fit_idx, val_idx = split_indices(y, cfg.master_seed, val_count, stream=1)
    stats = fit_normalizer(x)
    z = apply_normalizer(stats, x)
    train_set, val_set = (z[fit_idx], y[fit_idx]), (z[val_idx], y[val_idx])
    folder = cfg.out_dir / "models"
    folder.mkdir(parents=True, exist_ok=True)
    best = {}
    for kind in kinds:
        tc = cfg.lstm if kind == "lstm" else cfg.mlp
        params, history = (train if kind == "lstm" else mlp_train)(train_set, val_set, tc)
        extra = {"normalization": stats.to_dict(), "layout_hash": layout_hash(), "train_config": tc.to_dict()}
        save_model(_model_path(cfg, kind), kind, params, tc.decision_threshold, extra)
        write_history(folder / f"{kind}_history.csv", history)
        best[kind] = max(r.val_acc for r in history) if history else float("nan")
    return best


def _load_detector(path: Path):
    kind, params, doc = load_model(path)
    if doc.get("layout_hash") != layout_hash():
        raise InputError(f"{path} was trained on a different feature layout")
    try:
        stats = NormalizationStats.from_dict(doc["normalization"])
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path} lacks normalization statistics: {exc}") from None
    if stats.minimum.shape != (FEATURE_COUNT,):
        raise InputError(f"{path} normalization has the wrong width")
    return kind, params, float(doc["threshold"]), stats


def cmd_evaluate(cfg: RunConfig, model_paths: Sequence[Path] | None = None, split: str = "test") -> str:
    """Confusion matrices for each model on ``split``; writes report.txt and report.csv."""
    if model_paths is None:
        model_paths = [p for p in (_model_path(cfg, k) for k in MODEL_KINDS) if p.exists()]
        if not model_paths:
            raise InputError(f"no trained models under {cfg.out_dir / 'models'}")
    if split == "train":
        print("warning: evaluating on the training split; accuracy is optimistic", file=sys.stderr)
    x, y = _load_split(cfg, split)
    matrices = {}
    for path in model_paths:
        kind, params, threshold, stats = _load_detector(Path(path))
        z = apply_normalizer(stats, x)
        preds = (predict if kind == "lstm" else mlp_predict)(z, params, threshold)
        matrices[kind.upper()] = confusion(preds, y)
    text = report(matrices)
    (cfg.out_dir / "report.txt").write_text(text, encoding="utf-8")
    (cfg.out_dir / "report.csv").write_text(report_csv(matrices), encoding="utf-8")
    return text


def attack_impact_rows(cfg: RunConfig, net: NetworkModel, pop: Population, prices=None) -> list[dict]:
    """Peak-day comparison of the clean and attacked cases, one row per hour.

    Flows are the schedules the DSO receives before any tariff; prices are
    base price plus the tariff each case's congestion loop settles on.
    """
    weather, price, plan = peak_day(pop, cfg.master_seed, prices)
    attack = AttackConfig(frozenset(cfg.impact_aggregators), cfg.gamma, cfg.master_seed)
    flex, _ = optimize_population(pop, plan, price, weather)
    clean_sched = aggregate_schedules(flex, plan.base, pop.aggregators)
    attacked_sched = inject_laa(clean_sched, pop.aggregators, attack)
    line = net.feeder_line
    flows = {}
    for name, sched in (("clean", clean_sched), ("attacked", attacked_sched)):
        results = hourly_power_flow(net, sched)
        bad = [h for h, r in enumerate(results) if not r.converged]
        if bad:
            raise DomainError(f"power flow did not converge at hour {bad[0]}")
        flows[name] = np.array([r.line_flow for r in results])
    clean_loop = dso_tariff_loop(net, pop, plan, price, weather, cfg.tariff_step, cfg.max_rounds)
    attacked_loop = dso_tariff_loop(net, pop, plan, price, weather, cfg.tariff_step, cfg.max_rounds, attack)
    congested = {k: {h for h, l in congested_hours(v, net) if l == line} for k, v in flows.items()}
    capacity = float(net.capacities[line])
    return [{
        "hour": h,
        "clean_flow_kva": float(flows["clean"][h, line]),
        "attacked_flow_kva": float(flows["attacked"][h, line]),
        "capacity_kva": capacity,
        "clean_price": float(clean_loop.price[h]),
        "attacked_price": float(attacked_loop.price[h]),
        "clean_congested": int(h in congested["clean"]),
        "attacked_congested": int(h in congested["attacked"]),
    } for h in range(len(price))]


def cmd_attack_impact(cfg: RunConfig) -> list[dict]:
    net = _network(cfg)
    pop = _population(cfg, net)
    rows = attack_impact_rows(cfg, net, pop, _prices(cfg))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=IMPACT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    (cfg.out_dir / "attack_impact.csv").write_text(buf.getvalue(), encoding="utf-8")
    return rows


def cmd_detect(model_path: Path, scenario_path: Path) -> dict:
    kind, params, threshold, stats = _load_detector(Path(model_path))
    day = load_scenario(Path(scenario_path))
    z = apply_normalizer(stats, extract_features(day))
    prob = float((sequence_forward if kind == "lstm" else mlp_forward)(z, params))
    decision = (predict if kind == "lstm" else mlp_predict)(z, params, threshold)
    return {"decision": int(decision), "probability": prob, "model": kind}


# --- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")

    parser = argparse.ArgumentParser(prog="laa-detect", description="Load-altering attack detection workbench.")
    sub = parser.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("generate", parents=[common], help="simulate labelled scenario days")
    gen.add_argument("--days", type=int, help="number of days (overrides the config)")
    tr = sub.add_parser("train", parents=[common], help="train the detectors on the train split")
    tr.add_argument("--model", choices=MODEL_KINDS, action="append", help="train only this kind (repeatable)")
    ev = sub.add_parser("evaluate", parents=[common], help="confusion matrices on a split")
    ev.add_argument("--model", action="append", type=Path, help="model file (repeatable)")
    ev.add_argument("--split", choices=("test", "train"), default="test")
    sub.add_parser("attack-impact", parents=[common], help="peak-day flows and prices with and without attack")
    det = sub.add_parser("detect", parents=[common], help="classify one scenario day")
    det.add_argument("--model", type=Path, required=True)
    det.add_argument("--scenario", type=Path, required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(
            master_seed=args.seed, out=args.out, day_count=getattr(args, "days", None))
        if args.command == "generate":
            rows = cmd_generate(cfg)
            print(f"wrote {len(rows)} scenario days to {cfg.out_dir}")
        elif args.command == "train":
            best = cmd_train(cfg, args.model or MODEL_KINDS)
            for kind, acc in best.items():
                print(f"{kind}: best validation accuracy {acc:.4f}")
        elif args.command == "evaluate":
            print(cmd_evaluate(cfg, args.model, args.split), end="")
        elif args.command == "attack-impact":
            rows = cmd_attack_impact(cfg)
            print(f"wrote {len(rows)} hours to {cfg.out_dir / 'attack_impact.csv'}")
        elif args.command == "detect":
            print(json.dumps(cmd_detect(args.model, args.scenario)))
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

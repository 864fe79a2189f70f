"""Command-line pipeline: extract -> split -> train -> grid -> eval.

Every subcommand accepts ``--config run.json``; explicit flags override the
file. Exit codes: 0 success, 1 data error, 2 config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Mapping, Sequence
from dataclasses import fields
from pathlib import Path

from .corpus import DEFAULT_RATIOS, TASK_ABBREV, TASKS, load_manifest, read_split_manifest, read_wav, split_speaker_disjoint, validate_split
from .dsp import DspConfig, extract, read_feature_cache, write_feature_cache
from .errors import ConfigError, DataError, MissingEntryError, SpartaError
from .evaluation import per_dataset_report
from .features import MEL, MFCC, SEQUENCE_KINDS, VECTOR_KINDS, canonical_vector_kind
from .ivector import concat_vectors, load_external_vectors
from .network import Model, NetworkConfig, build_network, expected_shapes, make_config, with_tasks
from .nn import load_checkpoint, save_checkpoint
from .train import TaskData, TrainConfig, dev_scores, grid_search, train, write_grid_table

RUN_KEYS = {"manifest", "split", "caches", "out", "feature", "network", "train", "dsp", "seed", "tasks", "mode",
            "ratios", "space", "budget", "checkpoint"}


# --------------------------------------------------------------------------- config plumbing


def _load_json(path: str | Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataError(f"{path}: file not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def run_config(args) -> dict:
    """Merge the optional JSON run config with command-line flags (flags win)."""
    cfg = dict(_load_json(args.config)) if getattr(args, "config", None) else {}
    unknown = set(cfg) - RUN_KEYS
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")
    for key in ("manifest", "split", "out", "feature", "seed", "mode", "space", "budget", "checkpoint"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "cache", None):
        cfg["caches"] = _parse_caches(args.cache)
    if getattr(args, "tasks", None):
        cfg["tasks"] = args.tasks
    if getattr(args, "ratios", None):
        cfg["ratios"] = args.ratios
    return cfg


def _parse_caches(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, path = item.partition("=")
        if not sep:
            key, path = "", item
        if key in out:
            raise ConfigError(f"--cache: {key or 'unnamed'} cache given twice")
        out[key] = path
    return out


def _parse_tasks(value) -> tuple[str, ...]:
    items = value.split(",") if isinstance(value, str) else list(value)
    tasks = []
    for item in items:
        item = item.strip()
        task = TASK_ABBREV.get(item, item)
        if task not in TASKS:
            raise ConfigError(f"tasks: unknown task {item!r} (use g, e, d)")
        if task in tasks:
            raise ConfigError(f"tasks: {task} listed twice")
        tasks.append(task)
    return tuple(t for t in TASKS if t in tasks)


def _resolve_tasks(cfg: Mapping) -> tuple[str, ...]:
    mode = cfg.get("mode", "mtl")
    if mode not in ("stl", "mtl"):
        raise ConfigError(f"mode: {mode!r} not in ['stl', 'mtl']")
    tasks = _parse_tasks(cfg["tasks"]) if "tasks" in cfg else None
    if mode == "stl":
        if tasks is None or len(tasks) != 1:
            raise ConfigError("tasks: stl mode needs exactly one task, e.g. --tasks g")
        return tasks
    return tasks or TASKS


def _parse_ratios(value) -> tuple[float, float, float]:
    try:
        items = value.split(",") if isinstance(value, str) else list(value)
        ratios = tuple(float(v) for v in items)
    except ValueError as exc:
        raise ConfigError(f"ratios: {exc}") from exc
    if len(ratios) != 3:
        raise ConfigError("ratios: need three comma-separated fractions")
    return ratios


def _dsp_config(cfg: Mapping) -> DspConfig:
    raw = dict(cfg.get("dsp", {}))
    allowed = {f.name for f in fields(DspConfig)}
    if set(raw) - allowed:
        raise ConfigError(f"dsp: unknown keys {sorted(set(raw) - allowed)}")
    return DspConfig(**raw)


def _require(cfg: Mapping, key: str, flag: str):
    if key not in cfg:
        raise ConfigError(f"{key}: missing (pass {flag} or set it in --config)")
    return cfg[key]


def _feature_kind(cfg: Mapping) -> str:
    feature = cfg.get("feature") or cfg.get("network", {}).get("feature")
    if feature is None:
        raise ConfigError("feature: missing (pass --features)")
    if feature.lower() in ("mel", "mfcc"):
        return feature.upper()
    kind = canonical_vector_kind(feature)
    if kind not in VECTOR_KINDS:
        raise ConfigError(f"feature: unknown feature {feature!r}")
    return kind


def _network_config(cfg: Mapping, feature: str, tasks: Sequence[str]) -> NetworkConfig:
    raw = dict(cfg.get("network", {}))
    if "trunk_layers" in raw:
        raw["feature"] = feature
        net = NetworkConfig.from_dict(raw)
        return with_tasks(net, tasks).validate()
    raw.pop("feature", None)
    raw.pop("tasks", None)
    try:
        return make_config(feature, tasks=tasks, **raw)
    except TypeError as exc:
        raise ConfigError(f"network: {exc}") from exc


def _train_config(cfg: Mapping, seed: int) -> TrainConfig:
    raw = dict(cfg.get("train", {}))
    raw.setdefault("seed", seed)
    return TrainConfig.from_dict(raw)


def _load_features(cfg: Mapping, feature: str, corpus_ids: Sequence[str], vector_dims=None) -> dict:
    caches = dict(_require(cfg, "caches", "--cache"))
    if feature in SEQUENCE_KINDS:
        path = caches.get(feature.lower()) or caches.get("")
        if path is None:
            raise ConfigError(f"caches: no {feature.lower()} cache (pass --cache {feature.lower()}=PATH)")
        store = read_feature_cache(path)
        wrong = [k for k, v in store.items() if v.kind != feature]
        if wrong:
            raise DataError(f"{path}: entry {wrong[0]!r} is not a {feature} matrix")
        missing = [u for u in corpus_ids if u not in store]
        if missing:
            raise MissingEntryError(f"utterance {missing[0]!r} missing from the {feature} cache {path}")
        return {u: store[u] for u in corpus_ids}
    stores = {}
    for part in feature:
        path = caches.get(part) or (caches.get("") if len(feature) == 1 else None)
        if path is None:
            raise ConfigError(f"caches: no {part}-vector store (pass --cache {part}=PATH)")
        stores[part] = load_external_vectors(path, part, vector_dims)
    return {u: concat_vectors(feature, stores, u) for u in corpus_ids}


def _task_data(cfg: Mapping, feature: str, vector_dims=None) -> tuple[TaskData, object]:
    corpus = load_manifest(_require(cfg, "manifest", "--manifest"))
    split = read_split_manifest(_require(cfg, "split", "--split"))
    report = validate_split(corpus, split)
    if report.speaker_overlap:
        raise DataError(f"split leaks speakers across sets: {report.overlapping_speakers[:3]}")
    features = _load_features(cfg, feature, corpus.ids, vector_dims)
    return TaskData.from_corpus(corpus, split, features), corpus


def _out_dir(cfg: Mapping) -> Path:
    out = Path(_require(cfg, "out", "--out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


# --------------------------------------------------------------------------- commands


def cmd_extract(args) -> int:
    cfg = run_config(args)
    kind = _feature_kind(cfg)
    if kind not in (MEL, MFCC):
        raise ConfigError(f"feature: extract produces mel or mfcc, not {kind!r}")
    dsp = _dsp_config(cfg)
    corpus = load_manifest(_require(cfg, "manifest", "--manifest"))
    out = Path(_require(cfg, "out", "--out"))
    entries, failures = {}, []
    for rec in corpus:
        try:
            entries[rec.id] = extract(read_wav(rec.audio_path), kind, dsp)
        except (SpartaError, OSError) as exc:
            failures.append(f"{rec.audio_path}: {exc}")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_feature_cache(out, entries)
    print(f"extracted {len(entries)} {kind} matrices to {out}")
    if failures:
        for line in failures:
            print(f"error: {line}", file=sys.stderr)
        print(f"error: {len(failures)} file(s) failed", file=sys.stderr)
        return 1
    return 0


def cmd_split(args) -> int:
    cfg = run_config(args)
    corpus = load_manifest(_require(cfg, "manifest", "--manifest"))
    ratios = _parse_ratios(cfg.get("ratios", DEFAULT_RATIOS))
    manifest = split_speaker_disjoint(corpus, ratios, int(cfg.get("seed", 0)))
    report = validate_split(corpus, manifest)
    out = Path(_require(cfg, "out", "--out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest.write(out)
    print(report.format_table())
    return 0


def _summary(model: Model, data: TaskData) -> str:
    lines = []
    for set_name in ("dev", "test"):
        present = [t for t in model.config.active_tasks if data.labeled_ids(t, set_name)]
        scores = dev_scores(with_model_tasks(model, present), data, set_name) if present else {}
        lines.append(f"{set_name} macro-F1: " + ", ".join(f"{t}={s:.4f}" for t, s in scores.items()))
    return "\n".join(lines)


def with_model_tasks(model: Model, tasks: Sequence[str]) -> Model:
    return Model(with_tasks(model.config, tasks), model.params)


def cmd_train(args) -> int:
    cfg = run_config(args)
    seed = int(cfg.get("seed", 0))
    feature = _feature_kind(cfg)
    tasks = _resolve_tasks(cfg)
    net = _network_config(cfg, feature, tasks)
    tr = _train_config(cfg, seed)
    data, _ = _task_data(cfg, feature, net.vector_dims)
    out = _out_dir(cfg)
    best, history = train(build_network(net, seed), data, tr)
    save_checkpoint(out / "model.sprt", best.params)
    _write(out / "network.json", net.to_json())
    _write(out / "train_config.json", json.dumps(tr.to_dict(), indent=2) + "\n")
    _write(out / "history.json", history.to_json())
    print(f"best epoch {history.best_epoch} (selection score {history.best_score:.4f})")
    print(_summary(best, data))
    return 0


def cmd_grid(args) -> int:
    cfg = run_config(args)
    seed = int(cfg.get("seed", 0))
    feature = _feature_kind(cfg)
    tasks = _resolve_tasks(cfg)
    space = cfg.get("space")
    if space is None:
        raise ConfigError("space: missing (pass --space FILE or set it in --config)")
    if isinstance(space, str):
        space = _load_json(space)
    if not isinstance(space, Mapping):
        raise ConfigError("space: expected an object mapping hyperparameters to lists")
    base_net = {k: v for k, v in dict(cfg.get("network", {})).items() if k != "feature"}
    base_net["feature"] = feature
    tr = _train_config(cfg, seed)
    dims = base_net.pop("vector_dims", None)
    data, _ = _task_data(cfg, feature, dims)
    budget = cfg.get("budget")
    results = grid_search(space, data, None if budget is None else int(budget), base_net, tr, tasks, seed, dims)
    out = _out_dir(cfg)
    write_grid_table(out / "grid.tsv", results, tasks)
    print((out / "grid.tsv").read_text(encoding="utf-8"), end="")
    return 0


def cmd_eval(args) -> int:
    cfg = run_config(args)
    ckpt = Path(_require(cfg, "checkpoint", "--checkpoint"))
    ckpt_dir = ckpt if ckpt.is_dir() else ckpt.parent
    model_file = ckpt_dir / "model.sprt" if ckpt.is_dir() else ckpt
    net = NetworkConfig.from_json((ckpt_dir / "network.json").read_text(encoding="utf-8")).validate()
    params = load_checkpoint(model_file, expected_shapes(net))
    model = Model(net, params)
    data, _ = _task_data(cfg, net.feature, net.vector_dims)
    report = per_dataset_report(model, data, "test")
    out = _out_dir(cfg)
    report.write(out)
    print(report.to_tsv(), end="")
    return 0


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparta", description="Multi-task speech classification pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, split=True, cache=True, tasks=True):
        p.add_argument("--config", help="JSON run config; flags override its values")
        p.add_argument("--manifest", help="JSON-lines corpus manifest")
        p.add_argument("--out", help="output file or directory")
        p.add_argument("--seed", type=int)
        if split:
            p.add_argument("--split", help="split manifest written by 'sparta split'")
        if cache:
            p.add_argument("--cache", action="append", metavar="[KIND=]PATH",
                           help="feature cache or vector store, e.g. mfcc=feats.sprt or i=ivec.sprt (repeatable)")
        if tasks:
            p.add_argument("--features", dest="feature", help="MEL, MFCC or a vector combination such as idx")
            p.add_argument("--mode", choices=("stl", "mtl"))
            p.add_argument("--tasks", help="comma-separated subset of g,e,d")

    p = sub.add_parser("extract", help="compute MEL or MFCC features for every utterance")
    common(p, split=False, cache=False, tasks=False)
    p.add_argument("--features", dest="feature", help="mel or mfcc")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("split", help="speaker-disjoint train/dev/test split")
    common(p, split=False, cache=False, tasks=False)
    p.add_argument("--ratios", help="train,dev,test fractions (default 0.8,0.1,0.1)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one network and keep its best dev epoch")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="grid search over hyperparameter lists")
    common(p)
    p.add_argument("--space", help="JSON file mapping hyperparameters to value lists")
    p.add_argument("--budget", type=int, help="number of grid points to run (default: all)")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("eval", help="per-dataset test report for a trained model")
    common(p, tasks=False)
    p.add_argument("--checkpoint", help="training output directory or its model.sprt")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        return args.func(args)
    except SpartaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

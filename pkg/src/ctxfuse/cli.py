"""Batch command line: extract features, evaluate systems, personalize.

Every run writes a ``run_manifest.json`` capturing the config, seeds, an
input digest, chosen costs and timing; ``ctxfuse rerun MANIFEST`` replays
the stored config and reproduces the output files byte-identically.

Exit codes: 0 success, 2 input error, 3 configuration/vocabulary error,
4 internal invariant violation. Every flag can also be supplied through an
environment variable named CTXFUSE_<FLAG> (dashes as underscores).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import extract_all_features
from .evaluation import (
    ALL_SYSTEMS,
    cross_validate,
    derive_seed,
    loo_partition,
    p99_of_average,
    partition_folds,
    random_baseline_scores,
    results_table,
    table_to_csv,
    table_to_markdown,
)
from .fusion import early_fusion
from .ingestion import (
    IngestionError,
    iter_session_dirs,
    load_features_dir,
    load_fold_partition,
    load_raw_session,
    write_features_csv,
)
from .kernels import USING_NUMBA
from .model import Dataset, Example, canonical_label_name
from .personalization import (
    evaluate_personalization,
    personalization_table,
    split_user_timeline,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_INTERNAL = 4


class ConfigError(ValueError):
    """A bad flag value, unknown label, or unknown user."""


def _env(name: str):
    return os.environ.get("CTXFUSE_" + name.replace("-", "_").upper())


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, default=int(_env("seed") or 0))
    parser.add_argument("--out", default=_env("out"), required=_env("out") is None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxfuse",
        description="Context recognition from phone and watch sensors.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_ext = sub.add_parser("extract", help="extract feature tables from raw session bundles")
    p_ext.add_argument("--input", default=_env("input"), required=_env("input") is None)
    p_ext.add_argument(
        "--utc-offset",
        type=float,
        default=None if _env("utc-offset") is None else float(_env("utc-offset")),
        help="hours to add to UTC for local time-of-day (required)",
    )
    _add_common(p_ext)

    p_eval = sub.add_parser("evaluate", help="run cross-validation and emit result tables")
    p_eval.add_argument("--features-dir", default=_env("features-dir"), required=_env("features-dir") is None)
    p_eval.add_argument("--partition", default=_env("partition"))
    p_eval.add_argument("--systems", default=_env("systems") or ",".join(ALL_SYSTEMS))
    p_eval.add_argument("--labels", default=_env("labels"), required=_env("labels") is None)
    p_eval.add_argument("--mode", choices=("cv5", "loo"), default=_env("mode") or "cv5")
    p_eval.add_argument("--jobs", type=int, default=int(_env("jobs") or 1))
    p_eval.add_argument("--markdown", action="store_true")
    _add_common(p_eval)

    p_per = sub.add_parser("personalize", help="universal/individual/adapted comparison for one user")
    p_per.add_argument("--features-dir", default=_env("features-dir"), required=_env("features-dir") is None)
    p_per.add_argument("--user", default=_env("user"), required=_env("user") is None)
    p_per.add_argument("--labels", default=_env("labels"), required=_env("labels") is None)
    p_per.add_argument("--partition", default=_env("partition"))
    p_per.add_argument("--markdown", action="store_true")
    _add_common(p_per)

    p_rerun = sub.add_parser("rerun", help="replay a run from its manifest")
    p_rerun.add_argument("manifest")
    return parser


def _digest_paths(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(str(p) for p in paths):
        path = Path(p)
        h.update(path.name.encode())
        if path.is_file():
            h.update(path.read_bytes())
    return h.hexdigest()


def _read_labels_file(path) -> list:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot read labels file {path}: {exc}") from exc
    labels = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            labels.append(canonical_label_name(line))
    if not labels:
        raise ConfigError(f"labels file {path} lists no labels")
    return labels


def _write_manifest(out_dir: Path, command: str, config: dict, extras: dict, started: float):
    manifest = {
        "tool": "ctxfuse",
        "version": __version__,
        "command": command,
        "config": config,
        "using_numba": USING_NUMBA,
        "started_unix": int(started),
        "duration_s": round(time.time() - started, 3),
    }
    manifest.update(extras)
    with open(out_dir / "run_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def cmd_extract(args) -> int:
    started = time.time()
    if args.utc_offset is None:
        raise ConfigError("--utc-offset is required (local time-of-day must be reproducible)")
    input_dir = Path(args.input)
    if not input_dir.is_dir():
        raise IngestionError(f"input directory {input_dir} not readable")
    sessions = iter_session_dirs(input_dir)
    if not sessions:
        raise IngestionError(f"no sessions found under {input_dir}")

    by_user: dict = {}
    for sdir in sessions:
        example = load_raw_session(sdir, utc_offset_hours=args.utc_offset)
        feats = extract_all_features(example)
        by_user.setdefault(example.user_id, []).append(
            Example(
                user_id=example.user_id,
                timestamp=example.timestamp,
                precomputed_features=feats,
                labels=example.labels,
            )
        )

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for user_id in sorted(by_user):
        write_features_csv(out_dir / f"{user_id}.features.csv", by_user[user_id])

    config = {"input": str(input_dir), "out": str(out_dir), "utc_offset": args.utc_offset, "seed": args.seed}
    extras = {
        "input_digest": _digest_paths(p / "session.json" for p in sessions),
        "n_sessions": len(sessions),
        "n_users": len(by_user),
    }
    _write_manifest(out_dir, "extract", config, extras, started)
    print(f"extracted {len(sessions)} sessions from {len(by_user)} users -> {out_dir}")
    return EXIT_OK


def _load_dataset(features_dir) -> Dataset:
    root = Path(features_dir)
    if not root.is_dir():
        raise IngestionError(f"features directory {root} not readable")
    return Dataset.from_examples(load_features_dir(root))


def cmd_evaluate(args) -> int:
    started = time.time()
    dataset = _load_dataset(args.features_dir)
    labels = _read_labels_file(args.labels)
    for label in labels:
        if label not in dataset.label_vocabulary:
            raise ConfigError(f"label {label!r} not in dataset vocabulary")

    systems = [s.strip() for s in args.systems.split(",") if s.strip()]
    for s in systems:
        if s not in ALL_SYSTEMS:
            raise ConfigError(f"unknown system {s!r} (choose from {', '.join(ALL_SYSTEMS)})")

    if args.mode == "loo":
        partition = loo_partition(dataset.users)
    elif args.partition:
        partition = load_fold_partition(args.partition)
    else:
        k = min(5, len(dataset.users))
        if k < 2:
            raise ConfigError("cross-validation needs at least 2 users")
        partition = partition_folds({u: "unknown" for u in dataset.users}, k=k, seed=args.seed)

    evaluations = cross_validate(
        dataset, labels, systems, partition, mode=args.mode, seed=args.seed, jobs=args.jobs
    )

    n_eval = len(dataset.core_subset())
    p99s = {"ba": {}, "f1": {}}
    score_arrays = {"ba": [], "f1": []}
    for label in labels:
        n_e = evaluations[systems[0]][label].n_examples
        scores = random_baseline_scores(
            n_e, max(n_eval, 1), n_sims=100, seed=derive_seed(args.seed, "p99", label)
        )
        for metric in ("ba", "f1"):
            vals = scores[metric]
            p99s[metric][label] = (
                float(np.nanpercentile(vals, 99)) if not np.isnan(vals).all() else None
            )
            score_arrays[metric].append(vals)
    for metric in ("ba", "f1"):
        p99s[metric]["average"] = p99_of_average(score_arrays[metric])

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for metric in ("ba", "f1"):
        rows = results_table(evaluations, labels, systems, p99s[metric], metric=metric)
        (out_dir / f"results_{metric}.csv").write_text(table_to_csv(rows), encoding="utf-8")
        if args.markdown:
            (out_dir / f"results_{metric}.md").write_text(table_to_markdown(rows), encoding="utf-8")

    chosen_costs = {
        label: evaluations[systems[0]][label].chosen_costs for label in labels
    }
    config = {
        "features_dir": str(args.features_dir),
        "partition": args.partition,
        "systems": systems,
        "labels": labels,
        "mode": args.mode,
        "seed": args.seed,
        "jobs": args.jobs,
        "out": str(out_dir),
        "markdown": bool(args.markdown),
    }
    extras = {
        "input_digest": _digest_paths(Path(args.features_dir).glob("*.features.csv")),
        "partition_folds": [list(f) for f in partition.folds],
        "chosen_costs": chosen_costs,
        "n_core_examples": n_eval,
    }
    _write_manifest(out_dir, "evaluate", config, extras, started)
    for metric in ("ba", "f1"):
        print(f"wrote {out_dir / f'results_{metric}.csv'}")
    return EXIT_OK


def cmd_personalize(args) -> int:
    started = time.time()
    dataset = _load_dataset(args.features_dir)
    labels = _read_labels_file(args.labels)
    for label in labels:
        if label not in dataset.label_vocabulary:
            raise ConfigError(f"label {label!r} not in dataset vocabulary")

    user = args.user
    if user not in dataset.examples_by_user:
        raise ConfigError(f"unknown user {user!r}")
    user_examples = dataset.examples_by_user[user]
    if len(user_examples) < 2:
        raise ConfigError(f"user {user!r} has fewer than 2 examples")

    if args.partition:
        partition = load_fold_partition(args.partition)
        holding = [f for f in partition.folds if user in f]
        if not holding:
            raise ConfigError(f"user {user!r} not present in the partition")
        train_users = [u for f in partition.folds if f is not holding[0] for u in f]
    else:
        train_users = [u for u in dataset.users if u != user]

    train_examples = dataset.examples(train_users)
    universal_models = {
        label: early_fusion(
            train_examples, label, grid_search=True, seed=derive_seed(args.seed, "universal", label)
        )
        for label in labels
    }

    split = split_user_timeline(user_examples)
    results = evaluate_personalization(
        universal_models,
        split,
        labels,
        seed=derive_seed(args.seed, "individual", user),
        universal_train_users=train_users,
    )

    rows = personalization_table(results, labels)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "personalization.csv").write_text(table_to_csv(rows), encoding="utf-8")
    if args.markdown:
        (out_dir / "personalization.md").write_text(table_to_markdown(rows), encoding="utf-8")

    config = {
        "features_dir": str(args.features_dir),
        "user": user,
        "labels": labels,
        "partition": args.partition,
        "seed": args.seed,
        "out": str(out_dir),
        "markdown": bool(args.markdown),
    }
    extras = {
        "input_digest": _digest_paths(Path(args.features_dir).glob("*.features.csv")),
        "universal_train_users": sorted(train_users),
    }
    _write_manifest(out_dir, "personalize", config, extras, started)
    print(f"wrote {out_dir / 'personalization.csv'}")
    return EXIT_OK


def cmd_rerun(args) -> int:
    try:
        with open(args.manifest, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise IngestionError(f"cannot read manifest {args.manifest}: {exc}") from exc
    command = manifest["command"]
    config = manifest["config"]
    argv = [command]
    for key, value in config.items():
        if value is None or value is False:
            continue
        flag = "--" + key.replace("_", "-")
        if value is True:
            argv.append(flag)
        elif isinstance(value, list):
            if key == "labels":
                # labels were read from a file; recreate the list inline
                tmp = Path(manifest.get("_labels_tmp", config.get("out", "."))) / "rerun_labels.txt"
                tmp.parent.mkdir(parents=True, exist_ok=True)
                tmp.write_text("\n".join(value) + "\n", encoding="utf-8")
                argv += [flag, str(tmp)]
            else:
                argv += [flag, ",".join(str(v) for v in value)]
        else:
            argv += [flag, str(value)]
    return main(argv)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "extract": cmd_extract,
        "evaluate": cmd_evaluate,
        "personalize": cmd_personalize,
        "rerun": cmd_rerun,
    }
    try:
        return handlers[args.command](args)
    except IngestionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - the documented catch-all exit
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

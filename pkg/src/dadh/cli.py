"""Command-line interface.

Subcommands: synth (clustered toy data), train, encode, eval, search, and
lsh (the random-hyperplane baseline, sharing the codes and metrics formats).
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from dadh import __version__
from dadh.data import (
    CodeMatrix,
    HyperParams,
    load_dataset,
    pack_codes,
    read_codes,
    read_features,
    read_labels,
    read_split,
    split_dataset,
    write_codes,
    write_features,
    write_labels,
    write_split,
)
from dadh.encoder import load_checkpoint, save_checkpoint
from dadh.errors import ConfigError, DataError, NumericError
from dadh.lsh import lsh_encode, lsh_fit
from dadh.plots import save_loss_figure, save_pr_figure
from dadh.retrieval import (
    HammingIndex,
    encode_queries,
    mean_average_precision,
    precision_recall_curve,
    search,
    top_k_precision,
)
from dadh.trainer import run_summary, train, train_ablated

_SUBSET_NAMES = ("train", "retrieval", "query")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _subset_ids(arg: str) -> np.ndarray:
    """Parse 'split.json:name' into the named id list of that split file."""
    path, _, name = arg.rpartition(":")
    if not path or name not in _SUBSET_NAMES:
        raise ConfigError(
            f"subset must look like SPLIT.json:{{{','.join(_SUBSET_NAMES)}}}, got {arg!r}"
        )
    split = read_split(path)
    return np.asarray(getattr(split, f"{name}_ids"))


def _take_rows(mat: np.ndarray, subset_arg, what: str) -> np.ndarray:
    if subset_arg is None:
        return mat
    ids = _subset_ids(subset_arg)
    if ids.max() >= mat.shape[0]:
        raise DataError(f"subset id {int(ids.max())} out of range for {what} with {mat.shape[0]} rows")
    return mat[ids]


def _take_labels(labels, subset_arg, what: str):
    if subset_arg is None:
        return list(labels)
    ids = _subset_ids(subset_arg)
    if ids.max() >= len(labels):
        raise DataError(f"subset id {int(ids.max())} out of range for {what} with {len(labels)} lines")
    return [labels[i] for i in ids]


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    if args.classes < 2:
        raise ConfigError("need at least 2 classes")
    if args.per_class < 1 or args.dim < 1:
        raise ConfigError("per-class and dim must be >= 1")
    if args.sigma < 0:
        raise ConfigError("sigma must be non-negative")
    rng = np.random.default_rng(args.seed)
    centers = rng.standard_normal((args.classes, args.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    n = args.classes * args.per_class
    class_of = np.repeat(np.arange(args.classes), args.per_class)
    feats = centers[class_of] + args.sigma * rng.standard_normal((n, args.dim))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_features(out / "features.bin", feats)
    write_labels(out / "labels.txt", [[int(c)] for c in class_of])
    meta = {
        "command": "synth",
        "tool_version": __version__,
        "classes": args.classes,
        "per_class": args.per_class,
        "dim": args.dim,
        "sigma": args.sigma,
        "seed": args.seed,
        "digests": {
            "features": _sha256(out / "features.bin"),
            "labels": _sha256(out / "labels.txt"),
        },
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {n} samples of dim {args.dim} ({args.classes} classes) to {out}")
    return 0


# ---------------------------------------------------------------- train

_TRAIN_DEFAULTS = {
    "features": None,
    "labels": None,
    "k": None,
    "out_dir": None,
    "tau": 10.0,
    "gamma": 100.0,
    "eta": 10.0,
    "batch": 64,
    "outer_iters": 150,
    "lr_start": 1e-4,
    "lr_end": 1e-6,
    "b_sweeps": 1,
    "seed": 0,
    "split_seed": None,
    "hidden_dims": [512],
    "n_query": None,
    "n_train": None,
    "split_file": None,
    "ablate": False,
    "track_map": False,
    "threads": 1,
}
_REQUIRED_KEYS = ("features", "labels", "k")


def _load_train_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="ascii"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(_TRAIN_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    cfg = dict(_TRAIN_DEFAULTS)
    cfg.update(raw)
    return cfg


def _cfg_int(cfg, key, minimum=None):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"config key {key!r} must be an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"config key {key!r} must be >= {minimum}, got {v}")
    return v


def _cfg_num(cfg, key):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"config key {key!r} must be a number, got {v!r}")
    return float(v)


def _cfg_str(cfg, key):
    v = cfg[key]
    if not isinstance(v, str) or not v:
        raise ConfigError(f"config key {key!r} must be a non-empty string, got {v!r}")
    return v


def _cfg_bool(cfg, key):
    v = cfg[key]
    if not isinstance(v, bool):
        raise ConfigError(f"config key {key!r} must be a boolean, got {v!r}")
    return v


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def _write_loss_csv(path, state, map_history) -> None:
    cols = [
        "iteration", "lr", "asym_f", "asym_g", "pairwise", "quant_f", "quant_g",
        "balance", "total", "code_flips", "code_violations",
    ]
    if map_history is not None:
        cols.append("map")
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for i, rec in enumerate(state.history):
            row = [i + 1, repr(state.lr_history[i])]
            row += [repr(getattr(rec, t)) for t in
                    ("asym_f", "asym_g", "pairwise", "quant_f", "quant_g", "balance", "total")]
            row += [state.code_flips[i], state.code_violations[i]]
            if map_history is not None:
                row.append(repr(map_history[i]))
            writer.writerow(row)


def cmd_train(args) -> int:
    cfg = _load_train_config(args.config)
    if args.out_dir is not None:
        cfg["out_dir"] = args.out_dir
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads is not None:
        cfg["threads"] = args.threads
    if args.ablate:
        cfg["ablate"] = True
    if args.track_map:
        cfg["track_map"] = True

    for key in _REQUIRED_KEYS:
        if cfg[key] is None:
            raise ConfigError(f"config key {key!r} is required")
    if cfg["out_dir"] is None:
        raise ConfigError("out_dir is required (config key or --out-dir)")
    if cfg["split_seed"] is None:
        cfg["split_seed"] = cfg["seed"]
    ablate = _cfg_bool(cfg, "ablate")
    track_map = _cfg_bool(cfg, "track_map")
    threads = _cfg_int(cfg, "threads", minimum=1)
    hidden = cfg["hidden_dims"]
    if (not isinstance(hidden, list) or not hidden
            or any(isinstance(d, bool) or not isinstance(d, int) or d < 1 for d in hidden)):
        raise ConfigError(f"config key 'hidden_dims' must be a list of positive integers, got {hidden!r}")
    try:
        hp = HyperParams(
            k=_cfg_int(cfg, "k"),
            tau=_cfg_num(cfg, "tau"),
            gamma=_cfg_num(cfg, "gamma"),
            eta=_cfg_num(cfg, "eta"),
            batch=_cfg_int(cfg, "batch"),
            outer_iters=_cfg_int(cfg, "outer_iters"),
            lr_start=_cfg_num(cfg, "lr_start"),
            lr_end=_cfg_num(cfg, "lr_end"),
            b_sweeps=_cfg_int(cfg, "b_sweeps"),
            seed=_cfg_int(cfg, "seed"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    base = Path(args.config).resolve().parent
    features_path = _resolve(base, _cfg_str(cfg, "features"))
    labels_path = _resolve(base, _cfg_str(cfg, "labels"))
    ds = load_dataset(features_path, labels_path)

    if cfg["split_file"] is not None:
        if cfg["n_query"] is not None or cfg["n_train"] is not None:
            raise ConfigError("give either split_file or n_query/n_train, not both")
        split_path = _resolve(base, _cfg_str(cfg, "split_file"))
        split = read_split(split_path)
        top = max(int(split.retrieval_ids.max()), int(split.query_ids.max()))
        if top >= ds.n:
            raise DataError(f"split id {top} out of range for dataset with {ds.n} samples")
    else:
        if cfg["n_query"] is None or cfg["n_train"] is None:
            raise ConfigError("config needs split_file, or both n_query and n_train")
        try:
            split = split_dataset(
                ds, _cfg_int(cfg, "n_query"), _cfg_int(cfg, "n_train"),
                seed=_cfg_int(cfg, "split_seed"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    map_history: list[float] = []
    callback = None
    if track_map:
        query_x = ds.features[split.query_ids]
        db_x = ds.features[split.retrieval_ids]
        query_lab = [ds.labels[i] for i in split.query_ids]
        db_lab = [ds.labels[i] for i in split.retrieval_ids]

        def callback(state):
            qc = pack_codes(encode_queries(query_x, state.encoder_f, state.encoder_g))
            dc = pack_codes(encode_queries(db_x, state.encoder_f, state.encoder_g))
            map_history.append(mean_average_precision(qc, dc, query_lab, db_lab))

    t0 = time.perf_counter()
    run = train_ablated if ablate else train
    state = run(ds, split, hp, hidden_dims=tuple(hidden), on_iteration=callback)
    wall = time.perf_counter() - t0

    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.bin", state.encoder_f, state.encoder_g)
    write_codes(out / "train_codes.bin", pack_codes(state.codes))
    write_split(out / "split.json", split)
    _write_loss_csv(out / "loss_history.csv", state, map_history if track_map else None)
    save_loss_figure(
        [b.as_dict() for b in state.history],
        out / "loss_history.png",
        map_history if track_map else None,
    )
    manifest = {
        "command": "train",
        "tool_version": __version__,
        "mode": "ablated" if ablate else "full",
        "config": {**cfg, "features": str(features_path), "labels": str(labels_path)},
        "threads": threads,
        "input_digests": {
            "features": _sha256(features_path),
            "labels": _sha256(labels_path),
        },
        "split_counts": {
            "train": int(split.train_ids.size),
            "retrieval": int(split.retrieval_ids.size),
            "query": int(split.query_ids.size),
        },
        "wall_seconds": wall,
        "outputs": {
            "checkpoint": str(out / "checkpoint.bin"),
            "train_codes": str(out / "train_codes.bin"),
            "split": str(out / "split.json"),
            "loss_csv": str(out / "loss_history.csv"),
            "loss_figure": str(out / "loss_history.png"),
        },
        **run_summary(state),
    }
    if track_map:
        manifest["map_history"] = map_history
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    final = state.history[-1].total
    print(
        f"trained {state.iterations} iterations"
        f"{' (early stop)' if state.stopped_early else ''}, final loss {final:.6g}, "
        f"outputs in {out}"
    )
    return 0


# ---------------------------------------------------------------- encode

def cmd_encode(args) -> int:
    enc_f, enc_g = load_checkpoint(args.checkpoint)
    mat = read_features(args.features)
    mat = _take_rows(mat, args.subset, "feature file")
    if mat.shape[1] != enc_f.input_dim:
        raise DataError(
            f"feature dim {mat.shape[1]} does not match encoder input dim {enc_f.input_dim}"
        )
    signs = encode_queries(mat, enc_f, enc_g, stream=args.stream)
    write_codes(args.out, pack_codes(signs))
    print(f"encoded {signs.shape[0]} samples to {signs.shape[1]}-bit codes at {args.out}")
    return 0


# ---------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    query_codes = read_codes(args.query_codes)
    db_codes = read_codes(args.db_codes)
    if query_codes.k != db_codes.k:
        raise DataError(f"code widths differ: {query_codes.k} vs {db_codes.k}")
    query_labels = _take_labels(read_labels(args.query_labels), args.query_subset, "query labels")
    db_labels = _take_labels(read_labels(args.db_labels), args.db_subset, "database labels")
    if args.map_depth is not None and args.map_depth < 1:
        raise ConfigError("--map-depth must be >= 1")
    metrics = {
        "n_query": query_codes.n,
        "n_db": db_codes.n,
        "k": query_codes.k,
        "map": mean_average_precision(query_codes, db_codes, query_labels, db_labels,
                                      depth=args.map_depth),
        "map_depth": args.map_depth,
        "precision_at": {},
    }
    for t in sorted(set(args.topk or [])):
        if t < 1:
            raise ConfigError("--topk must be >= 1")
        metrics["precision_at"][str(t)] = top_k_precision(
            query_codes, db_codes, query_labels, db_labels, t
        )
    if args.pr is not None:
        curve = precision_recall_curve(query_codes, db_codes, query_labels, db_labels)
        curve.write_csv(args.pr)
        figure_path = Path(args.pr).with_suffix(".png")
        save_pr_figure(curve, figure_path)
        metrics["pr"] = {
            "csv": str(args.pr),
            "figure": str(figure_path),
            "n_excluded_queries": curve.n_excluded,
        }
    text = json.dumps(metrics, indent=2, sort_keys=True)
    print(text)
    if args.out is not None:
        Path(args.out).write_text(text + "\n")
    return 0


# ---------------------------------------------------------------- search

def cmd_search(args) -> int:
    db_codes = read_codes(args.db_codes)
    query_codes = read_codes(args.query_codes)
    if query_codes.k != db_codes.k:
        raise DataError(f"code widths differ: {query_codes.k} vs {db_codes.k}")
    if args.topk < 1:
        raise ConfigError("--topk must be >= 1")
    index = HammingIndex.build(db_codes)
    rows = []
    for qi in range(query_codes.n):
        one = CodeMatrix(n=1, k=query_codes.k, words=query_codes.words[qi : qi + 1])
        res = search(index, one, args.topk)
        for rank, (hit, dist) in enumerate(zip(res.ids, res.distances), start=1):
            rows.append((qi, rank, int(hit), int(dist)))
    sink = open(args.out, "w", encoding="ascii", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(sink)
        writer.writerow(["query", "rank", "id", "distance"])
        writer.writerows(rows)
    finally:
        if args.out:
            sink.close()
    return 0


# ---------------------------------------------------------------- lsh

def cmd_lsh(args) -> int:
    if args.k < 1:
        raise ConfigError("--k must be >= 1")
    mat = read_features(args.features)
    center_rows = _take_rows(mat, args.center_subset, "feature file")
    rows = _take_rows(mat, args.subset, "feature file")
    model = lsh_fit(mat.shape[1], args.k, args.seed, center=center_rows.mean(axis=0))
    write_codes(args.out, pack_codes(lsh_encode(model, rows)))
    print(f"hashed {rows.shape[0]} samples to {args.k}-bit codes at {args.out}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dadh",
        description="Two-stream supervised hashing: train, encode, and evaluate binary codes.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate clustered synthetic features and labels")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=60)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--sigma", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the two encoder streams and the codes")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out-dir", default=None, help="overrides the config out_dir")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap recorded in the manifest (computation is single-process)")
    p.add_argument("--ablate", action="store_true",
                   help="drop the code-fitting terms and use the sign-only code update")
    p.add_argument("--track-map", action="store_true",
                   help="record retrieval MAP after every iteration")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode a feature file with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="output codes file")
    p.add_argument("--stream", choices=("fused", "f", "g"), default="fused")
    p.add_argument("--subset", default=None, metavar="SPLIT.json:NAME",
                   help="encode only the named id list of a split file")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval", help="rank databases per query and report metrics")
    p.add_argument("--query-codes", required=True)
    p.add_argument("--db-codes", required=True)
    p.add_argument("--query-labels", required=True)
    p.add_argument("--db-labels", required=True)
    p.add_argument("--query-subset", default=None, metavar="SPLIT.json:NAME",
                   help="select query label lines by split id list")
    p.add_argument("--db-subset", default=None, metavar="SPLIT.json:NAME",
                   help="select database label lines by split id list")
    p.add_argument("--topk", type=int, action="append", default=None,
                   help="also report precision at this depth (repeatable)")
    p.add_argument("--map-depth", type=int, default=None,
                   help="truncate ranked lists for MAP (default: full database)")
    p.add_argument("--pr", default=None, metavar="OUT.csv",
                   help="write the radius-swept PR curve CSV plus a .png figure")
    p.add_argument("--out", default=None, help="also write the metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("search", help="top-k nearest codes for each query code")
    p.add_argument("--db-codes", required=True)
    p.add_argument("--query-codes", required=True)
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--out", default=None, help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("lsh", help="random-hyperplane baseline codes for a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output codes file")
    p.add_argument("--subset", default=None, metavar="SPLIT.json:NAME")
    p.add_argument("--center-subset", default=None, metavar="SPLIT.json:NAME",
                   help="rows whose mean centers the projection (default: all rows)")
    p.set_defaults(func=cmd_lsh)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except (DataError, OSError, ValueError, IndexError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

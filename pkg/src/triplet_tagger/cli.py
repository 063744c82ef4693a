"""Command-line surface: gen-data, train, eval, compare, grad-check, predict.

Exit codes are a stable contract: 0 success, 1 usage problem, 2 data
problem, 3 numeric failure. Every command is deterministic given its
inputs and seeds; reruns produce byte-identical artifacts.

Config files are JSON with three sections (encoder, train, data) plus
out_dir; any key can be overridden on the command line with dotted flags,
e.g. ``--train.lr=0.001 --encoder.d_model=32``. Flag values always win
over the file; the TRIPLET_TAGGER_SEED environment variable supplies the
seed only when neither flag nor file sets one.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import backend
from . import corpus as C
from . import metrics as ME
from . import model as M
from . import trainer as TR
from . import verify
from .errors import ContractError, DataError, DimensionError, NumericError, TaggerError

SEED_ENV_VAR = "TRIPLET_TAGGER_SEED"


class UsageError(TaggerError):
    """Bad invocation: wrong flags, malformed config, missing file paths."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_seed():
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from None


# -- run configuration -----------------------------------------------------------

_CONFIG_DEFAULTS = {
    "encoder": {
        "max_len": 64,
        "d_model": 64,
        "n_heads": 4,
        "n_layers": 2,
        "d_ff": 128,
    },
    "train": {
        "epochs": 10,
        "batch_size": 32,
        "lr": 1e-3,
        "lambda": 1.0,
        "seed": None,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "mode": "multitask",
        "warm_start": None,
    },
    "data": {
        "catalog": None,
        "holdout_fraction": 0.3,
        "min_freq": 1,
        "split_seed": None,
        "entity_types": ["ITEM", "BRAND", "ATTR"],
    },
    "out_dir": None,
}

_INT_KEYS = {
    ("encoder", k) for k in ("max_len", "d_model", "n_heads", "n_layers", "d_ff")
} | {("train", k) for k in ("epochs", "batch_size", "seed")} | {
    ("data", "min_freq"),
    ("data", "split_seed"),
}


def _merge_config(base, override, path=""):
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise UsageError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise UsageError(f"config key {where!r} must be an object")
            _merge_config(base[key], value, where)
        else:
            base[key] = value


def _apply_override(cfg, dotted, value):
    parts = dotted.split(".")
    node = cfg
    for i, part in enumerate(parts[:-1]):
        if part not in node or not isinstance(node[part], dict):
            raise UsageError(f"unknown config key {'.'.join(parts[: i + 1])!r}")
        node = node[part]
    leaf = parts[-1]
    if leaf not in node:
        raise UsageError(f"unknown config key {dotted!r}")
    if isinstance(node[leaf], dict):
        raise UsageError(f"config key {dotted!r} is a section, not a value")
    node[leaf] = value


def _parse_overrides(tokens):
    pairs = []
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--"):
            raise UsageError(f"unexpected argument {token!r}")
        body = token[2:]
        if "=" in body:
            key, raw = body.split("=", 1)
        else:
            key = body
            i += 1
            if i >= len(tokens):
                raise UsageError(f"override --{key} is missing a value")
            raw = tokens[i]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        pairs.append((key, value))
        i += 1
    return pairs


def _coerce_types(cfg):
    for section, key in _INT_KEYS:
        v = cfg[section][key]
        if v is None:
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v):
            raise UsageError(f"config key {section}.{key} must be an integer, got {v!r}")
        cfg[section][key] = int(v)


def load_run_config(path, override_tokens=()):
    """Resolved run config: file contents over defaults, flags over both."""
    cfg = copy.deepcopy(_CONFIG_DEFAULTS)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise UsageError(f"{path}: invalid JSON ({e.msg})") from None
        if not isinstance(user, dict):
            raise UsageError(f"{path}: config must be a JSON object")
        _merge_config(cfg, user)
    for key, value in _parse_overrides(list(override_tokens)):
        _apply_override(cfg, key, value)
    _coerce_types(cfg)
    if cfg["train"]["seed"] is None:
        cfg["train"]["seed"] = _default_seed()
    if cfg["data"]["split_seed"] is None:
        cfg["data"]["split_seed"] = cfg["train"]["seed"]
    if cfg["data"]["catalog"] is None:
        raise UsageError("config needs data.catalog (the input JSONL path)")
    if cfg["out_dir"] is None:
        raise UsageError("config needs out_dir")
    if not 0.0 < cfg["data"]["holdout_fraction"] < 1.0:
        raise UsageError("data.holdout_fraction must be in (0, 1)")
    if cfg["train"]["mode"] not in TR.MODES:
        raise UsageError(f"train.mode must be one of {TR.MODES}")
    return cfg


def _train_config(cfg):
    t = cfg["train"]
    return TR.TrainConfig(
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        lr=t["lr"],
        lam=t["lambda"],
        seed=t["seed"],
        beta1=t["beta1"],
        beta2=t["beta2"],
        eps=t["eps"],
        warm_start=t["warm_start"],
        mode=t["mode"],
    )


# -- commands ---------------------------------------------------------------------


def cmd_gen_data(args):
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    seed = args.seed if args.seed is not None else _default_seed()
    items = C.generate_synthetic(seed, args.n)
    C.save_catalog(items, args.out)
    print(f"wrote {len(items)} items to {args.out} (seed {seed})")
    return 0


def cmd_train(args):
    cfg = load_run_config(args.config, args.overrides)
    scheme = C.TagScheme(tuple(cfg["data"]["entity_types"]))
    items = C.load_catalog(cfg["data"]["catalog"], scheme)
    train_items, test_items = C.split_holdout(
        items, cfg["data"]["holdout_fraction"], cfg["data"]["split_seed"]
    )
    vocab = C.build_vocab(train_items, cfg["data"]["min_freq"])
    enc = cfg["encoder"]
    encoder_cfg = M.EncoderConfig(
        vocab_size=len(vocab),
        max_len=enc["max_len"],
        d_model=enc["d_model"],
        n_heads=enc["n_heads"],
        n_layers=enc["n_layers"],
        d_ff=enc["d_ff"],
        n_tags=scheme.n_tags,
    )
    train_cfg = _train_config(cfg)

    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    result = TR.train(train_cfg, encoder_cfg, vocab, train_items, scheme)

    ckpt_path = out_dir / "checkpoint.ckpt"
    TR.save_checkpoint(
        str(ckpt_path),
        result.params,
        vocab,
        scheme,
        result.state,
        epochs_completed=result.epochs_completed,
        mode=train_cfg.mode,
        seed=train_cfg.seed,
    )
    result.history.to_csv(out_dir / "history.csv")
    C.save_catalog(train_items, out_dir / "train.jsonl")
    C.save_catalog(test_items, out_dir / "test.jsonl")

    manifest = {
        "config": {k: cfg[k] for k in ("encoder", "train", "data")},
        "derived": {"vocab_size": len(vocab), "n_tags": scheme.n_tags},
        "data_sha256": C.file_sha256(cfg["data"]["catalog"]),
        "vocab_hash": vocab.hash(),
        "n_items": len(items),
        "n_train": len(train_items),
        "n_test": len(test_items),
        "backend": backend.active_backend(),
        "version": __version__,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")

    if result.history.records:
        last_epoch = result.history.epochs()[-1]
        print(
            f"trained {train_cfg.mode} for {train_cfg.epochs} epochs on "
            f"{len(train_items)} items; final epoch mean loss "
            f"{result.history.epoch_mean(last_epoch):.4f}"
        )
    else:
        print("trained for 0 epochs (parameters left at initialization)")
    print(f"artifacts in {out_dir}: checkpoint.ckpt history.csv manifest.json train.jsonl test.jsonl")
    return 0


def _predict_tag_strings(ckpt, scheme, token_lists, batch_size=64):
    """Tag the given token sequences; returns one tag-string list per input."""
    out = []
    max_len = ckpt.config.max_len
    for start in range(0, len(token_lists), batch_size):
        chunk = token_lists[start : start + batch_size]
        ids = [ckpt.vocab.encode(toks)[:max_len] for toks in chunk]
        batch_ids, batch_mask = TR._pad_batch(ids)
        pred = M.predict_tags(ckpt.params, M.TokenBatch(batch_ids, batch_mask))
        for row, toks, enc in zip(pred, chunk, ids):
            tags = [scheme.tag_of(t) for t in row[: len(enc)]]
            tags = ["O" if t == "PAD" else t for t in tags]
            tags += ["O"] * (len(toks) - len(tags))
            repaired, _ = scheme.repair_bio(tags)
            out.append(repaired)
    return out


def cmd_eval(args):
    ckpt = TR.load_checkpoint(args.checkpoint)
    scheme = ckpt.scheme
    items = C.load_catalog(args.data, scheme)
    if not items:
        raise DataError(f"{args.data}: no items to evaluate")
    pred_tags = _predict_tag_strings(ckpt, scheme, [it.title_tokens for it in items])
    gold_tags = [it.title_tags for it in items]
    name = args.name or (ckpt.mode or "model")
    report = ME.build_report(name, gold_tags, pred_tags)
    ME.write_report(report, args.out)
    text, _ = ME.render_comparison([report])
    print(text)
    print(f"report written to {args.out}")
    return 0


def cmd_compare(args):
    reports = [ME.read_report(p) for p in args.reports]
    text, mirror = ME.render_comparison(reports)
    print(text)
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump(mirror, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return 0


def cmd_grad_check(args):
    results = verify.gradcheck_suite(
        points=args.points,
        seed=args.seed if args.seed is not None else _default_seed(),
        corrupt=args.corrupt_backward,
        sample=args.sample,
    )
    failed = False
    for name, err in results:
        ok = err <= verify.TOLERANCE
        failed = failed or not ok
        print(f"{name:24s} {err:12.3e}  {'PASS' if ok else 'FAIL'}")
    if failed:
        print(f"grad-check FAILED (tolerance {verify.TOLERANCE:g})", file=sys.stderr)
        return 3
    print(f"all {len(results)} checks within {verify.TOLERANCE:g}")
    return 0


def cmd_predict(args):
    ckpt = TR.load_checkpoint(args.checkpoint)
    scheme = ckpt.scheme
    if args.input is None or args.input == "-":
        lines = sys.stdin.read().splitlines()
        named = [(f"line-{i + 1:06d}", C.tokenize(line)) for i, line in enumerate(lines)]
    elif args.input.endswith(".jsonl"):
        named = [(it.id, it.title_tokens) for it in C.load_catalog(args.input, scheme)]
    else:
        with open(args.input, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        named = [(f"line-{i + 1:06d}", C.tokenize(line)) for i, line in enumerate(lines)]
    named = [(name, toks) for name, toks in named if toks]
    if not named:
        raise DataError("no non-empty titles to tag")
    tags = _predict_tag_strings(ckpt, scheme, [toks for _, toks in named])
    sink = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for (name, toks), tag_seq in zip(named, tags):
            sink.write(f"# id: {name}\n")
            for token, tag in zip(toks, tag_seq):
                sink.write(f"{token}\t{tag}\n")
            sink.write("\n")
    finally:
        if args.out:
            sink.close()
    return 0


# -- wiring -----------------------------------------------------------------------


def build_parser():
    parser = _Parser(
        prog="triplet-tagger",
        description="Train and evaluate a multi-task NER tagger that contrasts "
        "title embeddings against item-description embeddings.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic catalog JSONL")
    p.add_argument("out", help="output JSONL path")
    p.add_argument("--n", type=int, required=True, help="number of items")
    p.add_argument("--seed", type=int, default=None, help=f"RNG seed (default ${SEED_ENV_VAR} or 0)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="split, train, and write run artifacts")
    p.add_argument("config", help="JSON run config path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a catalog (titles only)")
    p.add_argument("checkpoint")
    p.add_argument("data", help="catalog JSONL with gold tags")
    p.add_argument("--out", required=True, help="metrics report JSON path")
    p.add_argument("--name", default=None, help="algorithm label (default: checkpoint mode)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="render a comparison table from report JSONs")
    p.add_argument("reports", nargs="+", help="metrics report JSON paths")
    p.add_argument("--json-out", default=None, help="also write the table as JSON")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("grad-check", help="verify every backward rule by finite differences")
    p.add_argument("--points", type=int, default=100, help="random probes per op")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument(
        "--sample",
        type=int,
        default=None,
        help="spot-check this many components per tensor in the end-to-end "
        "checks instead of all of them",
    )
    p.add_argument("--corrupt-backward", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("predict", help="tag titles from stdin or a file, CoNLL output")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("input", nargs="?", default=None, help="text file, catalog .jsonl, or - for stdin")
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.set_defaults(func=cmd_predict)

    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if argv and argv[0] == "train":
            args, extra = parser.parse_known_args(argv)
            args.overrides = extra
        else:
            args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:
        return 0 if e.code in (None, 0) else 1
    except (DataError, ContractError, DimensionError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

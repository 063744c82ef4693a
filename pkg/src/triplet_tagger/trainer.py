"""Multi-task training loop with seeded batching and negative sampling.

Each step tags a batch of titles (cross-entropy loss); in multitask mode
the same encoder also embeds each title's own description and one randomly
drawn other description, adding the triplet loss. Both losses flow through
one combined backward pass; every parameter stays trainable throughout.

Baseline mode skips the triplet path entirely (it is not just lambda=0),
which doubles as proof that inference never needs descriptions.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import model as M
from . import objectives as O
from . import tensor as tt
from .corpus import TagScheme, Vocabulary, tokenize
from .errors import ContractError, DataError, NumericError
from .model import EncoderConfig, Parameters, TokenBatch

_SHUFFLE_STREAM = 0x5F0FF1E
_NEG_STREAM = 0x93E6A7

MODES = ("baseline", "multitask")


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 32
    lr: float = 1e-3
    lam: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warm_start: str | None = None
    mode: str = "multitask"

    def __post_init__(self):
        if self.epochs < 0:
            raise DataError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise DataError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise DataError(f"lr must be > 0, got {self.lr}")
        if self.lam < 0:
            raise DataError(f"lambda must be >= 0, got {self.lam}")
        if self.mode not in MODES:
            raise DataError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class StepRecord:
    epoch: int
    step: int
    loss_total: float
    loss_ner: float
    loss_triplet: float | None
    sigmoid_score: float | None


class History:
    """Append-only per-step loss records; one row per optimizer step."""

    CSV_HEADER = ["epoch", "step", "loss_total", "loss_ner", "loss_triplet", "sigmoid_score"]

    def __init__(self, records=None):
        self.records = list(records or [])

    def append(self, record):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        return isinstance(other, History) and self.records == other.records

    def epoch_mean(self, epoch, field="loss_total"):
        vals = [getattr(r, field) for r in self.records if r.epoch == epoch]
        vals = [v for v in vals if v is not None]
        if not vals:
            raise DataError(f"no records for epoch {epoch}")
        return sum(vals) / len(vals)

    def epochs(self):
        return sorted({r.epoch for r in self.records})

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_HEADER)
            for r in self.records:
                writer.writerow(
                    [
                        r.epoch,
                        r.step,
                        repr(r.loss_total),
                        repr(r.loss_ner),
                        "" if r.loss_triplet is None else repr(r.loss_triplet),
                        "" if r.sigmoid_score is None else repr(r.sigmoid_score),
                    ]
                )


# -- optimizer -----------------------------------------------------------------


class AdamState:
    """First/second moment buffers plus the shared step count."""

    def __init__(self, params: Parameters):
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}


def optimizer_step(params: Parameters, state: AdamState, config: TrainConfig, grads=None):
    """One bias-corrected Adam update over every parameter tensor.

    Grads default to the .grad buffers on the parameters. All grads are
    checked finite before anything mutates, so a bad step aborts cleanly.
    """
    if grads is None:
        grads = {}
        for name, tensor in params.items():
            if tensor.grad is None:
                raise ContractError(f"parameter {name} has no gradient")
            grads[name] = tensor.grad
    for name, g in grads.items():
        if not tt.backend.kernels.all_finite(g):
            raise NumericError(f"non-finite gradient for {name}; step aborted")
    state.t += 1
    for name, tensor in params.items():
        tt.backend.kernels.adam_update(
            tensor.data,
            grads[name],
            state.m[name],
            state.v[name],
            state.t,
            config.lr,
            config.beta1,
            config.beta2,
            config.eps,
        )


# -- negative sampling ---------------------------------------------------------


def sample_negative(rng, anchor_item, catalog):
    """Uniform draw from catalog excluding the anchor itself."""
    if len(catalog) < 2:
        raise DataError("no valid negative exists: catalog has fewer than 2 items")
    anchor_idx = None
    for i, item in enumerate(catalog):
        if item is anchor_item:
            anchor_idx = i
            break
    if anchor_idx is None:
        for i, item in enumerate(catalog):
            if item.id == anchor_item.id:
                anchor_idx = i
                break
    if anchor_idx is None:
        raise ContractError("anchor item is not part of the catalog")
    return catalog[_negative_index(rng, anchor_idx, len(catalog))]


def _negative_index(rng, anchor_idx, n):
    j = int(rng.integers(n - 1))
    return j + 1 if j >= anchor_idx else j


# -- batch assembly --------------------------------------------------------------


@dataclass
class EncodedItem:
    """Vocabulary-encoded view of one catalog item."""

    item_id: str
    title_ids: list
    tag_ids: list
    desc_ids: list
    pool_index: int = -1


def encode_items(items, vocab: Vocabulary, scheme, max_len, need_descriptions=False):
    """Map items to id sequences, truncating anything beyond max_len."""
    out = []
    for i, item in enumerate(items):
        title_ids = vocab.encode(item.title_tokens)[:max_len]
        tag_ids = [scheme.id_of(t) for t in item.title_tags][:max_len]
        desc_ids = vocab.encode(tokenize(item.description))[:max_len]
        if need_descriptions and not desc_ids:
            raise DataError(
                f"item {item.id!r} has an empty description; multitask mode "
                "needs one for the positive triple"
            )
        out.append(EncodedItem(item.id, title_ids, tag_ids, desc_ids, pool_index=i))
    return out


def _pad_batch(seqs, pad_id=0):
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=np.float64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


def title_batch(encoded):
    ids, mask = _pad_batch([e.title_ids for e in encoded])
    gold, _ = _pad_batch([e.tag_ids for e in encoded], pad_id=M.PAD_TAG_ID)
    return TokenBatch(ids, mask), gold


def desc_batch(encoded):
    ids, mask = _pad_batch([e.desc_ids for e in encoded])
    return TokenBatch(ids, mask), mask


# -- the training loop -----------------------------------------------------------


def multitask_forward(params, batch_encoded, neg_encoded, lam, mode):
    """Build the full loss graph for one batch.

    Returns (total, ner, triplet_or_None, batch_scores_or_None). In
    baseline mode the description branches are never constructed.
    """
    tbatch, gold = title_batch(batch_encoded)
    title_enc = M.encode(params, tbatch)
    l_ner = O.ner_loss(M.tag_logits(params, title_enc), gold, tbatch.mask)
    if mode == "baseline":
        return l_ner, l_ner, None, None

    pos_tb, pos_mask = desc_batch(batch_encoded)
    neg_tb, neg_mask = desc_batch(neg_encoded)
    titles = M.pool_sentence(title_enc, tbatch.mask)
    pos = M.pool_sentence(M.encode(params, pos_tb), pos_mask)
    neg = M.pool_sentence(M.encode(params, neg_tb), neg_mask)
    l_triplet, scores = O.triplet_loss_batch(titles, pos, neg)
    total = O.multitask_loss(l_ner, l_triplet, lam)
    return total, l_ner, l_triplet, scores


def train_step(params, state, batch_encoded, config, neg_rng, pool_encoded):
    """One optimizer step; negatives drawn corpus-wide from pool_encoded."""
    neg_encoded = None
    if config.mode == "multitask":
        if len(pool_encoded) < 2:
            raise DataError("no valid negative exists: catalog has fewer than 2 items")
        neg_encoded = [
            pool_encoded[_negative_index(neg_rng, anchor.pool_index, len(pool_encoded))]
            for anchor in batch_encoded
        ]
    total, l_ner, l_triplet, scores = multitask_forward(
        params, batch_encoded, neg_encoded, config.lam, config.mode
    )
    params.zero_grads()
    tt.backward(total)
    optimizer_step(params, state, config)
    return (
        total.item(),
        l_ner.item(),
        None if l_triplet is None else l_triplet.item(),
        None if scores is None else scores.mean_sigmoid(),
    )


@dataclass
class TrainResult:
    params: Parameters
    history: History
    state: AdamState
    epochs_completed: int


def train(config: TrainConfig, encoder_cfg: EncoderConfig, vocab: Vocabulary, items, scheme):
    """Seeded multi-epoch training; deterministic given (config, data).

    Epoch order and negative draws come from per-epoch RNG streams derived
    from (seed, epoch), so a warm-started run resumes exactly where the
    uninterrupted run would have been.
    """
    if not items:
        raise DataError("empty training set")
    if len(vocab) != encoder_cfg.vocab_size:
        raise DataError(
            f"encoder vocab_size {encoder_cfg.vocab_size} != vocabulary size {len(vocab)}"
        )

    epochs_done = 0
    if config.warm_start:
        ckpt = load_checkpoint(config.warm_start, expect_config=encoder_cfg)
        if ckpt.vocab_hash != vocab.hash():
            raise DataError("warm-start checkpoint was built with a different vocabulary")
        params = ckpt.params
        state = ckpt.adam if ckpt.adam is not None else AdamState(params)
        epochs_done = ckpt.epochs_completed
    else:
        params = M.init_params(encoder_cfg, config.seed)
        state = AdamState(params)

    need_desc = config.mode == "multitask"
    pool = encode_items(items, vocab, scheme, encoder_cfg.max_len, need_descriptions=need_desc)

    history = History()
    n = len(pool)
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    for epoch in range(epochs_done, config.epochs):
        order = np.random.default_rng(
            np.random.SeedSequence([_SHUFFLE_STREAM, config.seed, epoch])
        ).permutation(n)
        neg_rng = np.random.default_rng(
            np.random.SeedSequence([_NEG_STREAM, config.seed, epoch])
        )
        for b in range(steps_per_epoch):
            chosen = order[b * config.batch_size : (b + 1) * config.batch_size]
            batch = [pool[i] for i in chosen]
            loss_total, loss_ner, loss_triplet, mean_sig = train_step(
                params, state, batch, config, neg_rng, pool
            )
            history.append(
                StepRecord(
                    epoch=epoch,
                    step=epoch * steps_per_epoch + b + 1,
                    loss_total=loss_total,
                    loss_ner=loss_ner,
                    loss_triplet=loss_triplet,
                    sigmoid_score=mean_sig,
                )
            )
    return TrainResult(params=params, history=history, state=state, epochs_completed=config.epochs)


# -- checkpoints -----------------------------------------------------------------

_CKPT_MAGIC = b"TTCK1\n"


@dataclass
class Checkpoint:
    config: EncoderConfig
    params: Parameters
    vocab: Vocabulary
    scheme: TagScheme
    vocab_hash: str
    adam: AdamState | None
    epochs_completed: int
    mode: str | None
    seed: int | None


def save_checkpoint(path, params: Parameters, vocab: Vocabulary, scheme: TagScheme,
                    state: AdamState = None, epochs_completed=0, mode=None, seed=None):
    """Versioned binary container: JSON header + raw little-endian float64.

    Writing the same state twice produces identical bytes, so saved files
    can be compared directly.
    """
    cfg = params.config
    if scheme.n_tags != cfg.n_tags:
        raise DataError(
            f"tag scheme has {scheme.n_tags} tags but config n_tags is {cfg.n_tags}"
        )
    tensor_names = params.names()
    header = {
        "format": "triplet-tagger-checkpoint",
        "version": 1,
        "config": {
            "vocab_size": cfg.vocab_size,
            "max_len": cfg.max_len,
            "d_model": cfg.d_model,
            "n_heads": cfg.n_heads,
            "n_layers": cfg.n_layers,
            "d_ff": cfg.d_ff,
            "n_tags": cfg.n_tags,
        },
        "entity_types": list(scheme.entity_types),
        "vocab": vocab.tokens,
        "vocab_hash": vocab.hash(),
        "tensors": [
            {"name": name, "shape": list(params[name].shape)} for name in tensor_names
        ],
        "train": None,
    }
    blobs = [params[name].data for name in tensor_names]
    if state is not None:
        header["train"] = {
            "adam_t": state.t,
            "epochs_completed": int(epochs_completed),
            "mode": mode,
            "seed": seed,
        }
        for prefix, table in (("adam.m.", state.m), ("adam.v.", state.v)):
            for name in tensor_names:
                header["tensors"].append(
                    {"name": prefix + name, "shape": list(table[name].shape)}
                )
                blobs.append(table[name])
    head_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(head_bytes)))
        fh.write(head_bytes)
        for arr in blobs:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, expect_config: EncoderConfig = None):
    """Read a checkpoint; optionally insist it matches an expected config."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (head_len,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(head_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise DataError(f"{path}: corrupt checkpoint header") from None
        if header.get("version") != 1:
            raise DataError(f"{path}: unsupported checkpoint version {header.get('version')}")
        cfg = EncoderConfig(**header["config"])
        if expect_config is not None:
            for field_name in (
                "vocab_size", "max_len", "d_model", "n_heads", "n_layers", "d_ff", "n_tags",
            ):
                got = getattr(cfg, field_name)
                want = getattr(expect_config, field_name)
                if got != want:
                    raise DataError(
                        f"{path}: checkpoint {field_name}={got} does not match "
                        f"expected {field_name}={want}"
                    )
        arrays = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise DataError(f"{path}: truncated tensor {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

    expected = M.expected_shapes(cfg)
    tensors = {}
    for name, shape in expected.items():
        if name not in arrays:
            raise DataError(f"{path}: checkpoint is missing tensor {name}")
        if arrays[name].shape != shape:
            raise DataError(
                f"{path}: tensor {name} has shape {arrays[name].shape}, expected {shape}"
            )
        tensors[name] = tt.Tensor(arrays[name], requires_grad=True)
    params = Parameters(cfg, tensors)

    vocab = Vocabulary(header["vocab"])
    if vocab.hash() != header["vocab_hash"]:
        raise DataError(f"{path}: vocabulary hash mismatch (corrupt checkpoint)")
    if len(vocab) != cfg.vocab_size:
        raise DataError(f"{path}: vocabulary size disagrees with config vocab_size")
    scheme = TagScheme(tuple(header.get("entity_types", ("ITEM", "BRAND", "ATTR"))))
    if scheme.n_tags != cfg.n_tags:
        raise DataError(f"{path}: entity types disagree with config n_tags")

    adam = None
    epochs_completed = 0
    mode = seed = None
    train_info = header.get("train")
    if train_info is not None:
        adam = AdamState(params)
        adam.t = int(train_info["adam_t"])
        for name in params.names():
            for prefix, table in (("adam.m.", adam.m), ("adam.v.", adam.v)):
                key = prefix + name
                if key not in arrays or arrays[key].shape != table[name].shape:
                    raise DataError(f"{path}: bad or missing optimizer tensor {key}")
                table[name] = arrays[key]
        epochs_completed = int(train_info["epochs_completed"])
        mode = train_info.get("mode")
        seed = train_info.get("seed")

    return Checkpoint(
        config=cfg,
        params=params,
        vocab=vocab,
        scheme=scheme,
        vocab_hash=header["vocab_hash"],
        adam=adam,
        epochs_completed=epochs_completed,
        mode=mode,
        seed=seed,
    )

"""Catalog data model, tokenization, synthetic generation, and file I/O.

A catalog item is a short tagged title (token-aligned BIO tags) plus an
untagged free-text description. Files come in two shapes: JSON-lines
(one object per item) and CoNLL-style token/tag columns for interop with
standard sequence-labeling tools.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import unicodedata
import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

_GEN_STREAM = 0xC47A106
_SPLIT_STREAM = 0x5B117


class TagScheme:
    """BIO tag inventory over a set of entity types.

    Tag ids are stable: PAD=0, O=1, then B-X/I-X pairs in the given type
    order. PAD never appears in stored data; it exists for model padding.
    """

    def __init__(self, entity_types=("ITEM", "BRAND", "ATTR")):
        types = tuple(entity_types)
        if not types or len(set(types)) != len(types):
            raise DataError(f"entity types must be non-empty and unique, got {types!r}")
        for t in types:
            if not t or not t.isupper() or "-" in t:
                raise DataError(f"bad entity type name {t!r}")
        self.entity_types = types
        self.tags = ["PAD", "O"]
        for t in types:
            self.tags += [f"B-{t}", f"I-{t}"]
        self.tag_to_id = {t: i for i, t in enumerate(self.tags)}

    @property
    def n_tags(self):
        return len(self.tags)

    @property
    def surface_tags(self):
        return self.tags[1:]

    def id_of(self, tag):
        try:
            return self.tag_to_id[tag]
        except KeyError:
            raise DataError(f"unknown tag {tag!r}") from None

    def tag_of(self, tag_id):
        return self.tags[tag_id]

    def is_valid_bio(self, tags):
        """True iff every I-X follows a B-X or I-X of the same type."""
        prev = "O"
        for tag in tags:
            if tag.startswith("I-"):
                if prev != "B-" + tag[2:] and prev != tag:
                    return False
            prev = tag
        return True

    def repair_bio(self, tags):
        """Turn stray I-X (no live X span) into B-X. Returns (tags, n_fixed)."""
        fixed = []
        n = 0
        prev = "O"
        for tag in tags:
            if tag.startswith("I-") and prev != "B-" + tag[2:] and prev != tag:
                tag = "B-" + tag[2:]
                n += 1
            fixed.append(tag)
            prev = tag
        return fixed, n


DEFAULT_SCHEME = TagScheme()


@dataclass
class CatalogItem:
    """One retail item: tagged title tokens plus a free-text description."""

    id: str
    title_tokens: list
    title_tags: list
    description: str

    def validate(self, scheme: TagScheme):
        if not self.title_tokens:
            raise DataError(f"item {self.id!r}: empty title")
        if len(self.title_tokens) != len(self.title_tags):
            raise DataError(
                f"item {self.id!r}: {len(self.title_tokens)} tokens vs "
                f"{len(self.title_tags)} tags"
            )
        for tag in self.title_tags:
            if tag not in scheme.tag_to_id or tag == "PAD":
                raise DataError(f"item {self.id!r}: unknown tag {tag!r}")
        return self


def tokenize(text):
    """Lowercase, split on whitespace, peel surrounding punctuation off."""
    tokens = []
    for chunk in text.lower().split():
        leading = []
        while chunk and unicodedata.category(chunk[0]).startswith("P"):
            leading.append(chunk[0])
            chunk = chunk[1:]
        trailing = []
        while chunk and unicodedata.category(chunk[-1]).startswith("P"):
            trailing.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(leading)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trailing))
    return tokens


class Vocabulary:
    """Token-to-id map with reserved PAD(0)/UNK(1) slots.

    Non-reserved ids follow descending frequency, ties broken
    lexicographically, so building twice from the same corpus is identical.
    """

    def __init__(self, tokens):
        self.id_to_token = [PAD_TOKEN, UNK_TOKEN] + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def encode(self, tokens):
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def hash(self):
        digest = hashlib.sha256("\n".join(self.id_to_token).encode("utf-8"))
        return digest.hexdigest()

    @property
    def tokens(self):
        return list(self.id_to_token[2:])


def build_vocab(items, min_freq=1):
    """Vocabulary over title and description tokens with count >= min_freq."""
    if min_freq < 1:
        raise ContractError(f"min_freq must be >= 1, got {min_freq}")
    counts = Counter()
    for item in items:
        counts.update(item.title_tokens)
        counts.update(tokenize(item.description))
    kept = [
        tok
        for tok, c in counts.items()
        if c >= min_freq and tok not in (PAD_TOKEN, UNK_TOKEN)
    ]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


# -- synthetic catalog ---------------------------------------------------------

BRANDS = (
    ("acme",), ("northwind",), ("sunbeam",), ("evergreen",), ("homestead",),
    ("lakeshore",), ("harvestmoon",), ("goldfinch",), ("ironclad",), ("droplet",),
    ("bluebird",), ("foxglove",), ("stonepath",), ("willoway",), ("kindling",),
    ("driftwood",), ("clearbrook",), ("maplecore",), ("tidewater",), ("summit",),
    ("blue", "ridge"), ("copper", "peak"), ("silver", "birch"), ("north", "fork"),
    ("red", "cedar"), ("open", "meadow"), ("quiet", "harbor"), ("long", "prairie"),
    ("cedar", "hollow"), ("stone", "garden"), ("wild", "plum"), ("river", "bend"),
    ("early", "light"), ("salt", "flat"), ("pine", "crest"), ("clear", "sky"),
)

_ITEM_MODS = (
    "ceramic", "steel", "bamboo", "copper", "glass", "oak", "walnut", "linen",
    "cotton", "wool", "leather", "canvas", "marble", "velvet", "enamel",
    "matte", "glazed", "woven", "quilted", "insulated",
)

_ITEM_NOUNS = (
    "mug", "kettle", "lamp", "rug", "chair", "desk", "shelf", "blanket",
    "pillow", "skillet", "ladle", "whisk", "grater", "peeler", "toaster",
    "blender", "sofa", "stool", "bench", "mirror", "vase", "planter",
    "basket", "hamper", "towel", "curtain", "clock", "frame", "tray", "bowl",
    "plate", "tumbler", "jar", "canister", "organizer", "doormat",
)

ITEM_NAMES = (
    tuple((n,) for n in _ITEM_NOUNS)
    + tuple((m, n) for m, n in itertools.product(_ITEM_MODS, _ITEM_NOUNS))
    + tuple(
        (m1, m2, n)
        for m1, m2, n in itertools.product(_ITEM_MODS[:4], _ITEM_MODS[4:8], _ITEM_NOUNS[:8])
    )
)

ATTRIBUTES = (
    ("red",), ("blue",), ("green",), ("black",), ("white",), ("gray",),
    ("navy",), ("olive",), ("rust",), ("cream",), ("small",), ("large",),
    ("12oz",), ("16oz",), ("24oz",), ("2-pack",), ("4-pack",), ("queen",),
    ("king",), ("compact",), ("foldable",), ("reversible",), ("stackable",),
    ("dark", "green"), ("extra", "large"), ("machine", "washable"),
    ("dishwasher", "safe"), ("space", "saving"),
)

_FIRST_SENTENCES = (
    "This {item} from {brand} makes everyday routines a little nicer.",
    "Meet the {item} that {brand} shoppers keep coming back to.",
    "Bring home a {item} built by {brand} to last for years.",
    "Our {item} pairs sturdy construction with a clean, simple look.",
    "Every {item} is checked by hand before it leaves {brand}.",
    "The {brand} team designed this {item} around daily use.",
)

_EXTRA_SENTENCES = (
    "Wipes clean in seconds and stores away neatly.",
    "Backed by a two year warranty and friendly support.",
    "Customers mention the {attr} finish again and again.",
    "Designed in small batches with feedback from real households.",
    "An easy gift for housewarmings, birthdays, and holidays.",
    "Fits right in with both modern and classic rooms.",
    "Materials are sourced from suppliers we visit ourselves.",
    "Care is simple: rinse, dry, and enjoy.",
    "Thousands of five star reviews and counting.",
    "Ships flat in recyclable packaging.",
    "The {attr} option shown here sells out quickly.",
    "Pairs well with the rest of the {brand} collection.",
)


def generate_synthetic(seed, n):
    """Deterministic synthetic catalog of n items.

    Titles follow brand / item-name / attributes with gold BIO tags by
    construction; each description embeds the item-name tokens verbatim.
    Items are generated from independent per-index RNG streams, so output
    is identical regardless of generation order.
    """
    if n < 1:
        raise DataError(f"need n >= 1 items, got {n}")
    items = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([_GEN_STREAM, seed, i]))
        brand = BRANDS[rng.integers(len(BRANDS))]
        name = ITEM_NAMES[rng.integers(len(ITEM_NAMES))]
        n_attr = 1 + int(rng.integers(3))
        attr_idx = rng.choice(len(ATTRIBUTES), size=n_attr, replace=False)
        attrs = [ATTRIBUTES[j] for j in attr_idx]

        tokens = list(brand) + list(name)
        tags = ["B-BRAND"] + ["I-BRAND"] * (len(brand) - 1)
        tags += ["B-ITEM"] + ["I-ITEM"] * (len(name) - 1)
        for span in attrs:
            tokens += list(span)
            tags += ["B-ATTR"] + ["I-ATTR"] * (len(span) - 1)

        item_str = " ".join(name)
        brand_str = " ".join(brand)
        attr_str = " ".join(attrs[0])
        first = _FIRST_SENTENCES[rng.integers(len(_FIRST_SENTENCES))].format(
            item=item_str, brand=brand_str
        )
        n_extra = 1 + int(rng.integers(3))
        extra_idx = rng.choice(len(_EXTRA_SENTENCES), size=n_extra, replace=False)
        extras = [
            _EXTRA_SENTENCES[j].format(attr=attr_str, brand=brand_str)
            for j in extra_idx
        ]
        description = " ".join([first] + extras)

        items.append(
            CatalogItem(
                id=f"item-{i:06d}",
                title_tokens=tokens,
                title_tags=tags,
                description=description,
            ).validate(DEFAULT_SCHEME)
        )
    return items


def split_holdout(items, fraction, seed):
    """Seeded shuffle split; the test side gets round(fraction * n) items."""
    if not 0.0 < fraction < 1.0:
        raise ContractError(f"holdout fraction must be in (0, 1), got {fraction}")
    n = len(items)
    n_test = int(np.floor(fraction * n + 0.5))
    if n_test == 0 or n_test == n:
        raise DataError(
            f"holdout of {fraction} on {n} items leaves an empty side"
        )
    perm = np.random.default_rng(
        np.random.SeedSequence([_SPLIT_STREAM, seed])
    ).permutation(n)
    test = [items[i] for i in perm[:n_test]]
    train = [items[i] for i in perm[n_test:]]
    return train, test


# -- JSON-lines catalog files --------------------------------------------------


def save_catalog(items, path):
    """Write items as UTF-8 JSON lines (id, title_tokens, title_tags, description)."""
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(
                json.dumps(
                    {
                        "id": item.id,
                        "title_tokens": item.title_tokens,
                        "title_tags": item.title_tags,
                        "description": item.description,
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")


def load_catalog(path, scheme=None):
    """Read a JSON-lines catalog; every item is validated before it escapes.

    Stray I-X tags are repaired to B-X (a warning reports the count), so
    loaded data always satisfies the BIO predicate.
    """
    scheme = scheme or DEFAULT_SCHEME
    items = []
    n_repaired = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}: line {lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}: line {lineno}: expected an object")
            missing = {"id", "title_tokens", "title_tags", "description"} - set(obj)
            if missing:
                raise DataError(
                    f"{path}: line {lineno}: missing keys {sorted(missing)}"
                )
            item = CatalogItem(
                id=str(obj["id"]),
                title_tokens=list(obj["title_tokens"]),
                title_tags=list(obj["title_tags"]),
                description=str(obj["description"]),
            )
            try:
                item.validate(scheme)
            except DataError as e:
                raise DataError(f"{path}: line {lineno}: {e}") from None
            repaired, n = scheme.repair_bio(item.title_tags)
            if n:
                item.title_tags = repaired
                n_repaired += n
            items.append(item)
    if n_repaired:
        warnings.warn(f"{path}: repaired {n_repaired} stray I- tags to B-")
    return items


# -- CoNLL-style files ---------------------------------------------------------


def export_conll(items, path):
    """One `token<TAB>tag` line per token, `# id:` header, blank line between."""
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(f"# id: {item.id}\n")
            for token, tag in zip(item.title_tokens, item.title_tags):
                fh.write(f"{token}\t{tag}\n")
            fh.write("\n")


def import_conll(path, descriptions_path=None, scheme=None):
    """Read a CoNLL-style tag file back into catalog items.

    Descriptions are joined by id from the optional JSON-lines catalog at
    `descriptions_path`; sentences without a match get an empty description
    and a warning. Invalid BIO is repaired (stray I-X becomes B-X) with the
    repair count reported as a warning.
    """
    scheme = scheme or DEFAULT_SCHEME
    descriptions = {}
    if descriptions_path is not None:
        for item in load_catalog(descriptions_path, scheme):
            descriptions[item.id] = item.description

    sentences = []
    current_id = None
    tokens, tags = [], []
    auto_index = 0

    def flush(lineno):
        nonlocal current_id, tokens, tags, auto_index
        if not tokens:
            current_id = None
            return
        sid = current_id
        if sid is None:
            sid = f"conll-{auto_index:06d}"
        auto_index += 1
        sentences.append((sid, tokens, tags, lineno))
        current_id, tokens, tags = None, [], []

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                flush(lineno)
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("id:"):
                    current_id = body[3:].strip()
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                raise DataError(
                    f"{path}: line {lineno}: expected 'token<TAB>tag', got {line!r}"
                )
            token, tag = parts
            if tag not in scheme.tag_to_id or tag == "PAD":
                raise DataError(f"{path}: line {lineno}: unknown tag {tag!r}")
            tokens.append(token)
            tags.append(tag)
        flush(lineno if sentences or tokens else 0)

    items = []
    n_repaired = 0
    n_dangling = 0
    for sid, toks, tgs, lineno in sentences:
        repaired, n = scheme.repair_bio(tgs)
        n_repaired += n
        desc = descriptions.get(sid)
        if desc is None:
            if descriptions_path is not None:
                n_dangling += 1
            desc = ""
        item = CatalogItem(id=sid, title_tokens=toks, title_tags=repaired, description=desc)
        try:
            item.validate(scheme)
        except DataError as e:
            raise DataError(f"{path}: near line {lineno}: {e}") from None
        items.append(item)
    if n_repaired:
        warnings.warn(f"{path}: repaired {n_repaired} stray I- tags to B-")
    if n_dangling:
        warnings.warn(
            f"{path}: {n_dangling} sentences had no description in "
            f"{descriptions_path}; treated as empty"
        )
    return items


def file_sha256(path):
    """Content hash used by run manifests."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()

"""Sequence-labeling evaluation: entity-level P/R, exact match, token accuracy.

Scoring follows the CoNLL convention: a predicted span counts only when
start, end, and type all match a gold span of the same sentence, and
precision/recall are micro-averaged over the corpus. A zero denominator
yields 0.0 plus a flag in the report rather than a silent 1.0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ContractError, DataError


@dataclass(frozen=True, order=True)
class EntitySpan:
    """Half-open token range [start, end) of one entity."""

    start: int
    end: int
    type: str


@dataclass
class MetricsReport:
    algorithm: str
    precision: float
    recall: float
    exact_match: float
    token_accuracy: float
    counts: dict
    flags: list = field(default_factory=list)

    def to_json_dict(self):
        return {
            "algorithm": self.algorithm,
            "precision": self.precision,
            "recall": self.recall,
            "exact_match": self.exact_match,
            "token_accuracy": self.token_accuracy,
            "counts": dict(self.counts),
            "flags": list(self.flags),
        }

    @classmethod
    def from_json_dict(cls, obj):
        try:
            return cls(
                algorithm=str(obj["algorithm"]),
                precision=float(obj["precision"]),
                recall=float(obj["recall"]),
                exact_match=float(obj["exact_match"]),
                token_accuracy=float(obj["token_accuracy"]),
                counts=dict(obj.get("counts", {})),
                flags=list(obj.get("flags", [])),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed metrics report: {e}") from None


def extract_spans(tags):
    """Maximal B-X (I-X)* runs as spans. Input must already be valid BIO."""
    spans = []
    start = None
    current = None
    for i, tag in enumerate(tags):
        if tag == "O":
            if current is not None:
                spans.append(EntitySpan(start, i, current))
                current = None
        elif tag.startswith("B-"):
            if current is not None:
                spans.append(EntitySpan(start, i, current))
            start, current = i, tag[2:]
        elif tag.startswith("I-"):
            if current != tag[2:]:
                raise ContractError(
                    f"invalid BIO at position {i}: {tag} without an open "
                    f"{tag[2:]} span (repair happens at ingestion)"
                )
        else:
            raise ContractError(f"not a BIO tag: {tag!r}")
    if current is not None:
        spans.append(EntitySpan(start, len(tags), current))
    return spans


def spans_to_tags(spans, n_tokens):
    """Inverse of extract_spans for non-overlapping spans."""
    tags = ["O"] * n_tokens
    for span in spans:
        if not 0 <= span.start < span.end <= n_tokens:
            raise ContractError(f"span {span} out of range for {n_tokens} tokens")
        if any(t != "O" for t in tags[span.start : span.end]):
            raise ContractError(f"span {span} overlaps another span")
        tags[span.start] = f"B-{span.type}"
        for i in range(span.start + 1, span.end):
            tags[i] = f"I-{span.type}"
    return tags


def span_prf(gold, pred):
    """Micro precision/recall over per-sentence span collections.

    Returns (precision, recall, counts) with counts holding the raw
    gold/predicted/correct span totals.
    """
    if len(gold) != len(pred):
        raise DataError(f"sentence count mismatch: {len(gold)} gold vs {len(pred)} predicted")
    n_gold = n_pred = n_correct = 0
    for g, p in zip(gold, pred):
        gset, pset = set(g), set(p)
        n_gold += len(gset)
        n_pred += len(pset)
        n_correct += len(gset & pset)
    precision = n_correct / n_pred if n_pred else 0.0
    recall = n_correct / n_gold if n_gold else 0.0
    return precision, recall, {
        "n_gold_spans": n_gold,
        "n_pred_spans": n_pred,
        "n_correct_spans": n_correct,
    }


def _check_tag_lists(gold, pred):
    if len(gold) != len(pred):
        raise DataError(f"sentence count mismatch: {len(gold)} vs {len(pred)}")
    if not gold:
        raise DataError("empty corpus")
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise DataError(f"sentence {i}: {len(g)} gold tags vs {len(p)} predicted")


def exact_match_rate(gold_tags, pred_tags):
    """Fraction of sentences whose whole tag sequence is correct."""
    _check_tag_lists(gold_tags, pred_tags)
    hits = sum(1 for g, p in zip(gold_tags, pred_tags) if list(g) == list(p))
    return hits / len(gold_tags)


def token_accuracy(gold_tags, pred_tags):
    """Fraction of tokens tagged correctly, micro-averaged."""
    _check_tag_lists(gold_tags, pred_tags)
    total = correct = 0
    for g, p in zip(gold_tags, pred_tags):
        total += len(g)
        correct += sum(1 for a, b in zip(g, p) if a == b)
    return correct / total if total else 0.0


def build_report(algorithm, gold_tags, pred_tags):
    """Full MetricsReport from per-sentence gold and predicted tag lists."""
    _check_tag_lists(gold_tags, pred_tags)
    gold_spans = [extract_spans(g) for g in gold_tags]
    pred_spans = [extract_spans(p) for p in pred_tags]
    precision, recall, span_counts = span_prf(gold_spans, pred_spans)
    flags = []
    if span_counts["n_pred_spans"] == 0:
        flags.append("zero_predicted_spans")
    if span_counts["n_gold_spans"] == 0:
        flags.append("zero_gold_spans")
    counts = {"n_sentences": len(gold_tags), **span_counts}
    return MetricsReport(
        algorithm=algorithm,
        precision=precision,
        recall=recall,
        exact_match=exact_match_rate(gold_tags, pred_tags),
        token_accuracy=token_accuracy(gold_tags, pred_tags),
        counts=counts,
        flags=flags,
    )


def _pct(v):
    text = f"{v * 100:.1f}"
    if text.endswith(".0"):
        text = text[:-2]
    return text + "%"


_COLUMNS = ("Algorithm", "Precision", "Recall", "Exact Matches", "Accuracy")


def render_comparison(reports):
    """Aligned comparison table plus a JSON-ready mirror with raw floats."""
    if not reports:
        raise DataError("comparison needs at least one report")
    rows = [
        (
            r.algorithm,
            _pct(r.precision),
            _pct(r.recall),
            _pct(r.exact_match),
            _pct(r.token_accuracy),
        )
        for r in reports
    ]
    widths = [
        max(len(_COLUMNS[c]), *(len(row[c]) for row in rows))
        for c in range(len(_COLUMNS))
    ]

    def fmt(cells):
        return "  ".join(cell.ljust(w) for cell, w in zip(cells, widths)).rstrip()

    lines = [fmt(_COLUMNS), fmt(tuple("-" * w for w in widths))]
    lines.extend(fmt(row) for row in rows)
    text = "\n".join(lines)
    mirror = {"rows": [r.to_json_dict() for r in reports]}
    return text, mirror


def write_report(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_report(path):
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e.msg})") from None
    return MetricsReport.from_json_dict(obj)

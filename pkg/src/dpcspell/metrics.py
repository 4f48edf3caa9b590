"""Correction metrics: token precision/recall, F-beta, exact match and top-K modified accuracy."""

from __future__ import annotations

import csv
import io
import re
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .charlex import SPECIAL_TOKENS
from .errorgen import DISPLAY_NAMES, ErrorType


class UndefinedMetricError(ZeroDivisionError):
    pass


_SPECIALS = re.compile("|".join(re.escape(t) for t in SPECIAL_TOKENS))


def normalize(text):
    """Drop rendered special tokens and collapse whitespace runs to single spaces."""
    return " ".join(_SPECIALS.sub("", text).split())


@dataclass(frozen=True)
class Prediction:
    gold: str
    top_k: tuple
    error_type: ErrorType

    def __post_init__(self):
        if not self.top_k:
            raise ValueError("a prediction needs at least one candidate")
        object.__setattr__(self, "top_k", tuple(self.top_k))

    @property
    def best(self):
        return self.top_k[0]


def match_sets(gold, predicted):
    """Return ``(|g|, |e|, |matched|)`` over whitespace tokens, matching one-to-one by equality."""
    g = Counter(normalize(gold).split())
    e = Counter(normalize(predicted).split())
    return sum(g.values()), sum(e.values()), sum((g & e).values())


def precision_recall(preds):
    gold_total = pred_total = matched = 0
    for p in preds:
        g, e, m = match_sets(p.gold, p.best)
        gold_total += g
        pred_total += e
        matched += m
    if pred_total == 0 or gold_total == 0:
        raise UndefinedMetricError("precision/recall undefined: no predicted or no gold tokens")
    return matched / pred_total, matched / gold_total


def f_beta(precision, recall, beta=1.0):
    b2 = beta * beta
    denom = b2 * precision + recall
    if denom == 0:
        warnings.warn("F-beta undefined for P = R = 0; returning 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return (1 + b2) * precision * recall / denom


def exact_match(preds):
    if not preds:
        raise ValueError("exact_match needs at least one prediction")
    return sum(normalize(p.best) == normalize(p.gold) for p in preds) / len(preds)


def modified_accuracy(preds, lexicon=None, k=3, mode="lexicon"):
    """Share of items with any of the first ``k`` candidates in the lexicon (or equal to gold)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not preds:
        raise ValueError("modified_accuracy needs at least one prediction")
    if mode not in ("lexicon", "gold"):
        raise ValueError(f"unknown MA mode {mode!r}")
    if mode == "lexicon" and lexicon is None:
        raise ValueError("lexicon mode needs a lexicon")
    hits = 0
    for p in preds:
        cands = [normalize(c) for c in p.top_k[:k]]
        if mode == "lexicon":
            hits += any(c in lexicon for c in cands)
        else:
            hits += normalize(p.gold) in cands
    return hits / len(preds)


COLUMNS = ("count", "EM", "MA", "P", "R", "F1", "F0.5")


@dataclass
class MetricRow:
    count: int
    em: float
    ma: float
    precision: float
    recall: float
    f1: float
    f05: float

    def values(self):
        return (self.count, self.em, self.ma, self.precision, self.recall, self.f1, self.f05)


def score_rows(preds, lexicon=None, k=3, ma_mode="lexicon"):
    try:
        p, r = precision_recall(preds)
    except UndefinedMetricError:
        p = r = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        f1, f05 = f_beta(p, r, 1.0), f_beta(p, r, 0.5)
    return MetricRow(len(preds), exact_match(preds), modified_accuracy(preds, lexicon, k, ma_mode),
                     p, r, f1, f05)


@dataclass
class EvalReport:
    rows: dict = field(default_factory=dict)
    weighted: MetricRow | None = None
    title: str = ""

    def to_text(self):
        head = f"{'Error Type':<38}" + "".join(f"{c:>9}" for c in COLUMNS)
        lines = [self.title] if self.title else []
        lines.append(head)
        lines.append("-" * len(head))

        def fmt(name, row):
            count, *rest = row.values()
            return f"{name:<38}{count:>9}" + "".join(f"{v:>9.4f}" for v in rest)

        for kind, row in self.rows.items():
            lines.append(fmt(DISPLAY_NAMES[kind], row))
        lines.append("-" * len(head))
        lines.append(fmt("Weighted Average", self.weighted))
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["error_type", *COLUMNS])
        for kind, row in self.rows.items():
            count, *rest = row.values()
            w.writerow([kind.label, count, *(f"{v:.6f}" for v in rest)])
        count, *rest = self.weighted.values()
        w.writerow(["weighted_average", count, *(f"{v:.6f}" for v in rest)])
        return buf.getvalue()


def build_report(preds, lexicon=None, k=3, ma_mode="lexicon", title=""):
    """Per-error-type rows plus a count-weighted average row."""
    if not preds:
        raise ValueError("cannot report on zero predictions")
    groups = defaultdict(list)
    for p in preds:
        groups[p.error_type].append(p)
    rows = {kind: score_rows(groups[kind], lexicon, k, ma_mode) for kind in ErrorType if kind in groups}
    total = sum(r.count for r in rows.values())
    avg = [sum(r.values()[i] * r.count for r in rows.values()) / total for i in range(1, len(COLUMNS))]
    return EvalReport(rows, MetricRow(total, *avg), title)


def read_report_csv(path):
    """Parse a report CSV back into ``{label: {column: value}}``."""
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            label = row.pop("error_type")
            out[label] = {k: float(v) for k, v in row.items()}
    return out

"""Synthetic spelling-error corpus generation.

Each generator turns one clean word into a :class:`ParallelPair` or returns
``None`` when the word cannot carry that error type.  ``assemble_corpus``
drives the generators over a lexicon under per-type quotas.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .baseline import distance, levenshtein
from .charlex import MASK_GLYPH


class CorpusFormatError(ValueError):
    pass


class ErrorType(enum.Enum):
    COGNITIVE = "cognitive"
    HOMONYM = "homonym"
    VISUAL_SINGLE = "visual_single"
    VISUAL_COMBINED = "visual_combined"
    TYPO_DELETION = "typo_deletion"
    TYPO_SUBST_BIJOY = "typo_subst_bijoy"
    TYPO_SUBST_AVRO = "typo_subst_avro"
    TYPO_TRANSPOSITION = "typo_transposition"
    TYPO_INSERTION = "typo_insertion"
    RUN_ON = "run_on"
    SPLIT_LEFT = "split_left"
    SPLIT_RIGHT = "split_right"
    SPLIT_RANDOM = "split_random"
    SPLIT_BOTH = "split_both"

    @property
    def label(self):
        return self.value

    @property
    def index(self):
        return list(ErrorType).index(self)

    @classmethod
    def from_label(cls, label):
        try:
            return cls(label)
        except ValueError:
            raise CorpusFormatError(f"unknown error type label {label!r}") from None


SUBSTITUTION_TYPES = (
    ErrorType.COGNITIVE,
    ErrorType.VISUAL_SINGLE,
    ErrorType.VISUAL_COMBINED,
    ErrorType.TYPO_SUBST_BIJOY,
    ErrorType.TYPO_SUBST_AVRO,
)
SPLIT_TYPES = (ErrorType.SPLIT_LEFT, ErrorType.SPLIT_RIGHT, ErrorType.SPLIT_RANDOM, ErrorType.SPLIT_BOTH)
FILTERED_TYPES = (ErrorType.TYPO_DELETION, ErrorType.TYPO_SUBST_AVRO, ErrorType.TYPO_SUBST_BIJOY)

DISPLAY_NAMES = {
    ErrorType.COGNITIVE: "Cognitive Error",
    ErrorType.HOMONYM: "Homonym Error",
    ErrorType.VISUAL_SINGLE: "Visual Error (Single Character)",
    ErrorType.VISUAL_COMBINED: "Visual Error (Combined Character)",
    ErrorType.TYPO_DELETION: "Typographical Deletion",
    ErrorType.TYPO_SUBST_BIJOY: "Typographical Substitution (Bijoy)",
    ErrorType.TYPO_SUBST_AVRO: "Typographical Substitution (Avro)",
    ErrorType.TYPO_TRANSPOSITION: "Typographical Transposition",
    ErrorType.TYPO_INSERTION: "Typographical Insertion",
    ErrorType.RUN_ON: "Run-on Error",
    ErrorType.SPLIT_LEFT: "Split-word Error (Left)",
    ErrorType.SPLIT_RIGHT: "Split-word Error (Right)",
    ErrorType.SPLIT_RANDOM: "Split-word Error (Random)",
    ErrorType.SPLIT_BOTH: "Split-word Error (Both)",
}


@dataclass(frozen=True)
class ParallelPair:
    source: str
    mask: str
    target: str
    error_type: ErrorType

    def check(self):
        """Raise ``CorpusFormatError`` if the mask does not shadow the source."""
        if len(self.mask) != len(self.source):
            raise CorpusFormatError(
                f"mask {self.mask!r} and source {self.source!r} differ in length")
        for s, m in zip(self.source, self.mask):
            if m != s and m != MASK_GLYPH:
                raise CorpusFormatError(f"mask {self.mask!r} does not shadow source {self.source!r}")
        if self.source != self.target and MASK_GLYPH not in self.mask:
            raise CorpusFormatError(f"pair {self.source!r}->{self.target!r} has no masked position")
        return self


@dataclass(frozen=True)
class ConfusionTable:
    """Map from a correct unit to the units it is plausibly mistyped or misread as."""

    entries: dict

    def __post_init__(self):
        clean = {}
        for key, cands in self.entries.items():
            cands = tuple(dict.fromkeys(c for c in cands if c and c != key))
            if not key or not cands:
                raise ValueError(f"confusion entry {key!r} has no usable candidates")
            clean[key] = cands
        object.__setattr__(self, "entries", clean)

    def validate(self, alphabet):
        allowed = set(alphabet.frequent) | set(alphabet.combined)
        for key, cands in self.entries.items():
            for c in cands:
                if c not in allowed:
                    raise ValueError(f"confusion candidate {c!r} for {key!r} is not in the alphabet")
        return self

    def keys(self):
        return self.entries.keys()

    def __getitem__(self, key):
        return self.entries[key]


def load_confusion_table(path, alphabet=None):
    """Parse ``key:cand1,cand2,...`` lines."""
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            key, sep, rest = line.partition(":")
            if not sep or not key:
                raise CorpusFormatError(f"{path}:{lineno}: expected 'key:cand1,cand2'")
            entries.setdefault(key, []).extend(c for c in rest.split(",") if c)
    table = ConfusionTable(entries)
    if alphabet is not None:
        table.validate(alphabet)
    return table


# --- masks -----------------------------------------------------------------

def derive_mask(source, target):
    """Copy of ``source`` with the glyph on every position an optimal alignment edits.

    Substituted and deleted source positions are masked; a target-only
    insertion masks the source position under the alignment cursor (clamped
    to the last index).
    """
    if not source:
        return ""
    _, script = levenshtein(source, target)
    masked = [False] * len(source)
    cursor = 0
    for e in script:
        if e.op == "keep":
            cursor = e.i + 1
        elif e.op in ("sub", "del"):
            masked[e.i] = True
            cursor = e.i + 1
        else:
            masked[min(cursor, len(source) - 1)] = True
    return "".join(MASK_GLYPH if m else c for c, m in zip(source, masked))


def tokenize_units(text, units=()):
    """Split ``text`` into code points, grouping greedy longest matches of ``units``."""
    if not units:
        return list(text)
    by_len = sorted(set(units), key=len, reverse=True)
    out, i = [], 0
    while i < len(text):
        for u in by_len:
            if text.startswith(u, i):
                out.append(u)
                i += len(u)
                break
        else:
            out.append(text[i])
            i += 1
    return out


# --- generators ------------------------------------------------------------

def gen_substitution(word, table, kind, rng, units=()):
    """Replace one occurrence of one table key with a uniformly chosen candidate.

    With ``units`` (combined characters) only replacements that keep the
    unit segmentation intact are eligible, so the result differs from the
    word by exactly one unit.
    """
    keys = sorted(table.keys(), key=len, reverse=True)
    spots = []
    if units:
        toks = tokenize_units(word, units)
        pos = 0
        for k, tok in enumerate(toks):
            if tok in table.entries:
                for cand in table[tok]:
                    src = word[:pos] + cand + word[pos + len(tok):]
                    if tokenize_units(src, units) == toks[:k] + tokenize_units(cand, units) + toks[k + 1:]:
                        spots.append((pos, tok))
                        break
            pos += len(tok)
    else:
        for p in range(len(word)):
            for key in keys:
                if word.startswith(key, p):
                    spots.append((p, key))
    if not spots:
        return None
    p, key = spots[rng.randrange(len(spots))]
    cands = list(table[key])
    if units:
        toks_before = tokenize_units(word[:p], units)
        toks_after = tokenize_units(word[p + len(key):], units)
        cands = [c for c in cands
                 if tokenize_units(word[:p] + c + word[p + len(key):], units)
                 == toks_before + tokenize_units(c, units) + toks_after]
    cand = cands[rng.randrange(len(cands))]
    source = word[:p] + cand + word[p + len(key):]
    mask = word[:p] + MASK_GLYPH * len(cand) + word[p + len(key):]
    return ParallelPair(source, mask, word, kind)


def gen_deletion(word, rng):
    if len(word) < 2:
        return None
    i = rng.randrange(len(word))
    source = word[:i] + word[i + 1:]
    return ParallelPair(source, derive_mask(source, word), word, ErrorType.TYPO_DELETION)


def gen_transposition(word, rng):
    spots = [i for i in range(len(word) - 1) if word[i] != word[i + 1]]
    if not spots:
        return None
    i = spots[rng.randrange(len(spots))]
    source = word[:i] + word[i + 1] + word[i] + word[i + 2:]
    mask = word[:i] + MASK_GLYPH * 2 + word[i + 2:]
    return ParallelPair(source, mask, word, ErrorType.TYPO_TRANSPOSITION)


def gen_insertion(word, rng, neighbours=None):
    """Duplicate one character in place, or with ``neighbours`` insert a keyboard neighbour after it."""
    if not word:
        return None
    i = rng.randrange(len(word))
    extra = word[i]
    if neighbours is not None:
        cands = neighbours.entries.get(word[i])
        if not cands:
            return None
        extra = cands[rng.randrange(len(cands))]
    source = word[: i + 1] + extra + word[i + 1:]
    return ParallelPair(source, derive_mask(source, word), word, ErrorType.TYPO_INSERTION)


def split_kind(left, right, lexicon):
    if left in lexicon and right in lexicon:
        return ErrorType.SPLIT_BOTH
    if left in lexicon:
        return ErrorType.SPLIT_LEFT
    if right in lexicon:
        return ErrorType.SPLIT_RIGHT
    return ErrorType.SPLIT_RANDOM


def gen_split(word, lexicon, rng, kind=None):
    """Insert one space at an interior position.

    Without ``kind`` the position is uniform and the type follows from which
    halves are lexicon words; with ``kind`` the position is uniform among
    those producing that type.
    """
    if len(word) < 2:
        return None
    positions = list(range(1, len(word)))
    if kind is not None:
        positions = [p for p in positions if split_kind(word[:p], word[p:], lexicon) is kind]
        if not positions:
            return None
    p = positions[rng.randrange(len(positions))]
    left, right = word[:p], word[p:]
    return ParallelPair(f"{left} {right}", f"{left}{MASK_GLYPH}{right}", word,
                        split_kind(left, right, lexicon))


def gen_runon(word, lexicon, rng):
    others = len(lexicon) - (1 if word in lexicon else 0)
    if others < 1:
        return None
    while True:
        tail = lexicon.words[rng.randrange(len(lexicon))]
        if tail != word:
            break
    return ParallelPair(word + tail, word + MASK_GLYPH * len(tail), word, ErrorType.RUN_ON)


def load_homonyms(path):
    pairs, seen = [], set()
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2 or not row[0].strip() or not row[1].strip():
                raise CorpusFormatError(f"{path}:{lineno}: expected 'wrong,correct'")
            wrong, right = row[0].strip(), row[1].strip()
            if (wrong, right) in seen:
                continue
            seen.add((wrong, right))
            pairs.append(ParallelPair(wrong, derive_mask(wrong, right), right, ErrorType.HOMONYM))
    return pairs


# --- independent validation ------------------------------------------------

def classify_pair(pair, lexicon, units=()):
    """Check a pair against the shape its error type promises, without the generators."""
    s, t, kind = pair.source, pair.target, pair.error_type
    if s == t:
        return False
    if kind is ErrorType.HOMONYM:
        return True
    if kind in SUBSTITUTION_TYPES:
        if kind is ErrorType.VISUAL_COMBINED:
            su, tu = tokenize_units(s, units), tokenize_units(t, units)
            return len(su) == len(tu) and distance(su, tu) == 1
        return len(s) == len(t) and distance(s, t) == 1
    if kind is ErrorType.TYPO_DELETION:
        return len(s) == len(t) - 1 and distance(s, t) == 1
    if kind is ErrorType.TYPO_INSERTION:
        return len(s) == len(t) + 1 and distance(s, t) == 1
    if kind is ErrorType.TYPO_TRANSPOSITION:
        if len(s) != len(t) or sorted(s) != sorted(t):
            return False
        diff = [i for i, (a, b) in enumerate(zip(s, t)) if a != b]
        return len(diff) == 2 and diff[1] == diff[0] + 1
    if kind in SPLIT_TYPES:
        if s.count(" ") - t.count(" ") != 1:
            return False
        for i, ch in enumerate(s):
            if ch == " " and s[:i] + s[i + 1:] == t:
                left, right = s[:i], s[i + 1:]
                both = (left in lexicon, right in lexicon)
                expect = {
                    (True, True): ErrorType.SPLIT_BOTH,
                    (True, False): ErrorType.SPLIT_LEFT,
                    (False, True): ErrorType.SPLIT_RIGHT,
                    (False, False): ErrorType.SPLIT_RANDOM,
                }[both]
                if expect is kind:
                    return True
        return False
    if kind is ErrorType.RUN_ON:
        return s.startswith(t) and s[len(t):] in lexicon
    return False


# --- filtration ------------------------------------------------------------

class TrigramScorer:
    """Per-character negative log-likelihood under an add-one character trigram model."""

    BOS, EOS = "\x02", "\x03"

    def __init__(self, words):
        self.tri = Counter()
        self.bi = Counter()
        symbols = {self.EOS}
        for w in words:
            padded = self.BOS * 2 + w + self.EOS
            symbols.update(w)
            for i in range(2, len(padded)):
                self.tri[padded[i - 2:i + 1]] += 1
                self.bi[padded[i - 2:i]] += 1
        self.v = len(symbols)

    def __call__(self, pair):
        text = pair.source if isinstance(pair, ParallelPair) else pair
        padded = self.BOS * 2 + text + self.EOS
        nll = 0.0
        for i in range(2, len(padded)):
            num = self.tri[padded[i - 2:i + 1]] + 1
            den = self.bi[padded[i - 2:i]] + self.v
            nll -= math.log(num / den)
        return nll / (len(padded) - 2)


def filter_errors(pairs, scorer, percentile=0.9, types=FILTERED_TYPES):
    """Drop pairs of ``types`` scoring above the ``percentile`` of their type's scores."""
    if not 0.0 < percentile <= 1.0:
        raise ValueError("percentile must be in (0, 1]")
    targeted = set(types)
    scores = {}
    by_type = defaultdict(list)
    for idx, pair in enumerate(pairs):
        if pair.error_type in targeted:
            s = scorer(pair)
            scores[idx] = s
            by_type[pair.error_type].append(s)
    cut = {k: float(np.quantile(v, percentile)) for k, v in by_type.items()}
    return [p for i, p in enumerate(pairs) if i not in scores or scores[i] <= cut[p.error_type]]


# --- assembly --------------------------------------------------------------

@dataclass
class GenerationReport:
    counts: dict = field(default_factory=dict)
    quotas: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def total(self):
        return sum(self.counts.values())

    def to_text(self):
        total = self.total
        lines = [f"{'Error Type':<38}{'#Instances':>12}{'Percentage':>12}"]
        for kind in ErrorType:
            n = self.counts.get(kind, 0)
            pct = 100.0 * n / total if total else 0.0
            lines.append(f"{DISPLAY_NAMES[kind]:<38}{n:>12,}{pct:>11.2f}%")
        lines.append(f"Total = {total:,}")
        for w in self.warnings:
            lines.append(f"WARNING: {w}")
        return "\n".join(lines) + "\n"


def type_seed(seed, kind):
    return seed ^ kind.index


def assemble_corpus(lexicon, tables, quotas, seed, homonym_path=None, units=(),
                    insertion_neighbours=None, passes=1):
    """Run every generator over a seeded shuffle of the lexicon until its quota is met.

    ``tables`` maps substitution types to their :class:`ConfusionTable`;
    ``quotas`` maps error types to target counts (missing types get 0).
    With ``passes`` > 1 a type whose quota is not met after one sweep goes
    over the lexicon again (continuing the same RNG), keeping only pairs it
    has not produced yet.
    Synthesized errors are non-word errors: a candidate whose source is itself
    a lexicon word (``sand`` -> ``and``) is discarded.
    Returns ``(pairs, report)``; pairs are ordered by type, then generation order.
    """
    if passes < 1:
        raise ValueError("passes must be >= 1")
    report = GenerationReport()
    pairs = []
    for kind in ErrorType:
        quota = int(quotas.get(kind, 0))
        if quota < 0:
            raise ValueError(f"negative quota for {kind.label}")
        report.quotas[kind] = quota
        got = []
        if quota:
            rng = random.Random(type_seed(seed, kind))
            if kind is ErrorType.HOMONYM:
                if homonym_path is not None:
                    got = load_homonyms(homonym_path)[:quota]
            else:
                gen = _generator_for(kind, lexicon, tables, units, insertion_neighbours)
                if gen is not None:
                    seen = set()
                    for _ in range(passes):
                        order = list(lexicon.words)
                        rng.shuffle(order)
                        for word in order:
                            pair = gen(word, rng)
                            if pair is None or pair in seen or pair.source in lexicon:
                                continue
                            seen.add(pair)
                            got.append(pair)
                            if len(got) == quota:
                                break
                        if len(got) == quota:
                            break
            if len(got) < quota:
                report.warnings.append(
                    f"{kind.label}: quota {quota} unreachable, generated {len(got)}")
        report.counts[kind] = len(got)
        pairs.extend(got)
    return pairs, report


def _generator_for(kind, lexicon, tables, units, neighbours):
    if kind in SUBSTITUTION_TYPES:
        table = tables.get(kind)
        if table is None:
            return None
        u = units if kind is ErrorType.VISUAL_COMBINED else ()
        return lambda w, rng: gen_substitution(w, table, kind, rng, units=u)
    if kind is ErrorType.TYPO_DELETION:
        return gen_deletion
    if kind is ErrorType.TYPO_TRANSPOSITION:
        return gen_transposition
    if kind is ErrorType.TYPO_INSERTION:
        return lambda w, rng: gen_insertion(w, rng, neighbours)
    if kind is ErrorType.RUN_ON:
        return lambda w, rng: gen_runon(w, lexicon, rng)
    if kind in SPLIT_TYPES:
        return lambda w, rng: gen_split(w, lexicon, rng, kind=kind)
    return None


# --- splitting -------------------------------------------------------------

@dataclass
class CorpusSplit:
    train: list
    validation: list
    test: list


def split_sizes(n, ratios):
    n_train = math.floor(ratios[0] * n + 0.5)
    n_val = min(n - n_train, math.floor(ratios[1] * n + 0.5))
    return n_train, n_val, n - n_train - n_val


def stratified_split(corpus, ratios=(0.80, 0.05, 0.15), seed=0):
    """Per error type: seeded shuffle, then a contiguous train/validation/test cut."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three fractions summing to 1, got {ratios}")
    by_type = defaultdict(list)
    for pair in corpus:
        by_type[pair.error_type].append(pair)
    split = CorpusSplit([], [], [])
    for kind in ErrorType:
        group = by_type.get(kind)
        if not group:
            continue
        group = list(group)
        random.Random(type_seed(seed, kind)).shuffle(group)
        n_train, n_val, _ = split_sizes(len(group), ratios)
        split.train.extend(group[:n_train])
        split.validation.extend(group[n_train:n_train + n_val])
        split.test.extend(group[n_train + n_val:])
    return split


# --- serialisation ---------------------------------------------------------

HEADER = ["source", "mask", "target", "error_type"]


def corpus_to_csv(pairs):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for p in pairs:
        writer.writerow([p.source, p.mask, p.target, p.error_type.label])
    return buf.getvalue()


def write_corpus(pairs, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(corpus_to_csv(pairs))


def read_corpus(path):
    pairs = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != HEADER:
            raise CorpusFormatError(f"{path}:1: expected header {','.join(HEADER)}")
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != 4:
                raise CorpusFormatError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                pair = ParallelPair(row[0], row[1], row[2], ErrorType.from_label(row[3])).check()
            except CorpusFormatError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from None
            pairs.append(pair)
    return pairs

"""Stage examples, training, the detector-purificator-corrector cascade and checkpoints."""

from __future__ import annotations

import csv
import enum
import hashlib
import logging
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .charlex import EOS, MASK, MASK_GLYPH, PAD, SEP, SOS, SPECIAL_TOKENS, UNK, Vocab, build_vocab
from .transformer import (
    Seq2SeqModel,
    SequenceTooLongError,
    TransformerConfig,
    beam_decode,
    greedy_decode,
    greedy_decode_batch,
)

log = logging.getLogger(__name__)

SEP_TOKEN = SPECIAL_TOKENS[SEP]
MASK_TOKEN = SPECIAL_TOKENS[MASK]
DECODE_SLACK = 10


class StageRole(enum.Enum):
    DETECTOR = "detector"
    PURIFICATOR = "purificator"
    CORRECTOR = "corrector"


class StageVariant(enum.Enum):
    DPC = "dpc"
    DC = "dc"
    C = "c"

    @property
    def roles(self):
        return {
            StageVariant.DPC: (StageRole.DETECTOR, StageRole.PURIFICATOR, StageRole.CORRECTOR),
            StageVariant.DC: (StageRole.DETECTOR, StageRole.CORRECTOR),
            StageVariant.C: (StageRole.CORRECTOR,),
        }[self]


class CheckpointError(ValueError):
    pass


class VocabMismatchError(ValueError):
    pass


# --- stage examples --------------------------------------------------------

@dataclass(frozen=True)
class StageExample:
    """Input and target as token lists: characters plus ``<sep>``/``<mask>``."""

    inputs: tuple
    target: tuple
    role: StageRole


def mask_tokens(mask_text):
    return tuple(MASK_TOKEN if ch == MASK_GLYPH else ch for ch in mask_text)


def sep_join(source, middle):
    return (SEP_TOKEN, *source, SEP_TOKEN, *mask_tokens(middle), SEP_TOKEN)


def make_detector_example(pair):
    pair.check()
    return StageExample(tuple(pair.source), mask_tokens(pair.mask), StageRole.DETECTOR)


def make_purificator_example(pair, detected):
    return StageExample(sep_join(pair.source, detected), mask_tokens(pair.mask), StageRole.PURIFICATOR)


def make_corrector_example(pair, purified=None):
    """SEP-joined corrector example, or the raw source->target example when ``purified`` is None."""
    if purified is None:
        return StageExample(tuple(pair.source), tuple(pair.target), StageRole.CORRECTOR)
    return StageExample(sep_join(pair.source, purified), tuple(pair.target), StageRole.CORRECTOR)


def tokens_to_ids(tokens, vocab):
    return [vocab.id_of.get(t, UNK) for t in tokens]


def wrap(ids):
    return [SOS, *ids, EOS]


def stage_examples(role, variant, pairs, detected=None):
    """Training examples for one stage; upstream masks default to the gold ones."""
    if variant is StageVariant.C and role is not StageRole.CORRECTOR:
        raise ValueError("variant 'c' has only a corrector stage")
    if role is StageRole.DETECTOR:
        return [make_detector_example(p) for p in pairs]
    if role is StageRole.PURIFICATOR:
        if variant is not StageVariant.DPC:
            raise ValueError(f"variant '{variant.value}' has no purificator stage")
        detected = detected or [p.mask for p in pairs]
        return [make_purificator_example(p, d) for p, d in zip(pairs, detected)]
    if variant is StageVariant.C:
        return [make_corrector_example(p) for p in pairs]
    return [make_corrector_example(p, p.mask) for p in pairs]


def _pad(rows):
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), PAD, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def encode_examples(examples, vocab, max_seq_len):
    enc = []
    for ex in examples:
        src = wrap(tokens_to_ids(ex.inputs, vocab))
        tgt = wrap(tokens_to_ids(ex.target, vocab))
        if len(src) > max_seq_len or len(tgt) > max_seq_len:
            raise SequenceTooLongError(
                f"example of {len(src)}/{len(tgt)} tokens exceeds max_seq_len {max_seq_len}")
        enc.append((src, tgt))
    return enc


def make_batches(encoded, batch_size, rng):
    """Seeded shuffle, then length-bucketed batches in shuffled order."""
    order = rng.permutation(len(encoded))
    pool = 32 * batch_size
    batches = []
    for start in range(0, len(order), pool):
        chunk = sorted(order[start:start + pool], key=lambda i: len(encoded[i][0]))
        for b in range(0, len(chunk), batch_size):
            batches.append(chunk[b:b + batch_size])
    return [batches[i] for i in rng.permutation(len(batches))]


# --- training --------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, f"{r.train_loss:.6f}",
                            "" if r.val_loss != r.val_loss else f"{r.val_loss:.6f}", f"{r.seconds:.3f}"])

    @classmethod
    def read_csv(cls, path):
        out = cls()
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                out.records.append(EpochRecord(int(row["epoch"]), float(row["train_loss"]),
                                               float(row["val_loss"]) if row["val_loss"] else float("nan"),
                                               float(row["seconds"])))
        return out

    @property
    def train_losses(self):
        return [r.train_loss for r in self.records]


@dataclass
class TrainOptions:
    batch_size: int = 128
    epochs: int | None = None
    early_stopping_patience: int | None = None
    predicted_fraction: float = 0.0


def mean_loss(model, encoded, batch_size):
    if not encoded:
        return float("nan")
    total = weight = 0.0
    with ad.no_grad():
        for start in range(0, len(encoded), batch_size):
            chunk = encoded[start:start + batch_size]
            src, tgt = _pad([s for s, _ in chunk]), _pad([t for _, t in chunk])
            n = int((tgt[:, 1:] != PAD).sum())
            total += float(model.loss(src, tgt, train=False).data) * n
            weight += n
    return total / weight


def train_stage(role, variant, split, config, seed=0, vocab=None, options=None, model=None,
                detector=None, start_epoch=0):
    """Teacher-forced training of one stage; returns ``(model, TrainingLog)``.

    Upstream masks are the gold ones unless ``options.predicted_fraction`` is
    positive and a trained ``detector`` model is given, in which case that share of
    purificator inputs uses the detector's own greedy predictions.
    """
    options = options or TrainOptions()
    if not split.train:
        raise ValueError("training split is empty")
    vocab = vocab or build_vocab(split.train)
    if config.vocab_size != len(vocab):
        config = TransformerConfig(**{**config.to_dict(), "vocab_size": len(vocab)})
    rng = np.random.default_rng(seed)
    if model is None:
        model = Seq2SeqModel(config, seed=seed)
    model.vocab = vocab
    model.role = role
    model.variant = variant

    detected = None
    if role is StageRole.PURIFICATOR and options.predicted_fraction > 0 and detector is not None:
        predicted = run_stage_batch(detector, [tuple(p.source) for p in split.train], vocab)
        use = rng.random(len(split.train)) < options.predicted_fraction
        detected = [pred if u else p.mask for pred, u, p in zip(predicted, use, split.train)]
        mismatched = sum(len(d) != len(p.source) for d, p in zip(detected, split.train))
        log.info("purificator inputs: %d predicted, %d of wrong length", int(use.sum()), mismatched)

    train_enc = encode_examples(stage_examples(role, variant, split.train, detected), vocab, config.max_seq_len)
    val_enc = encode_examples(stage_examples(role, variant, split.validation), vocab, config.max_seq_len)

    opt = ad.Adam(model.parameters(), lr=config.learning_rate)
    epochs = config.epochs if options.epochs is None else options.epochs
    history = TrainingLog()
    best, stale = float("inf"), 0
    for epoch in range(start_epoch + 1, start_epoch + epochs + 1):
        t0 = time.perf_counter()
        total = weight = 0.0
        for idx in make_batches(train_enc, options.batch_size, rng):
            src = _pad([train_enc[i][0] for i in idx])
            tgt = _pad([train_enc[i][1] for i in idx])
            opt.zero_grad()
            loss = model.loss(src, tgt, train=True, rng=rng)
            value = float(loss.data)
            if not np.isfinite(value):
                raise ad.DivergenceError(f"{role.value}: non-finite loss in epoch {epoch}")
            loss.backward()
            ad.clip_grad_norm(model.parameters(), config.grad_clip)
            try:
                opt.step()
            except ad.DivergenceError as exc:
                raise ad.DivergenceError(f"{role.value}: {exc} in epoch {epoch}") from None
            n = int((tgt[:, 1:] != PAD).sum())
            total += value * n
            weight += n
        val = mean_loss(model, val_enc, options.batch_size)
        rec = EpochRecord(epoch, total / weight, val, time.perf_counter() - t0)
        history.records.append(rec)
        log.info("%s epoch %d train %.4f val %.4f (%.1fs)", role.value, epoch, rec.train_loss, val, rec.seconds)
        if options.early_stopping_patience and val == val:
            if val < best - 1e-6:
                best, stale = val, 0
            else:
                stale += 1
                if stale >= options.early_stopping_patience:
                    break
    return model, history


# --- inference -------------------------------------------------------------

def _max_len(n_tokens):
    return n_tokens + DECODE_SLACK


def _encode_input(tokens, vocab, model):
    ids = wrap(tokens_to_ids(tokens, vocab))
    if len(ids) > model.config.max_seq_len:
        raise SequenceTooLongError(f"input of {len(ids)} tokens exceeds max_seq_len {model.config.max_seq_len}")
    return ids


def run_stage(model, tokens, vocab, decode="greedy", max_len=None):
    """Decode one stage input; returns a list of ``(text, score)`` best first."""
    src = _encode_input(tokens, vocab, model)
    limit = _max_len(len(src) - 2) if max_len is None else max_len
    if decode == "greedy":
        return [(vocab.decode(greedy_decode(model, src, limit)), 0.0)]
    kind, _, width = str(decode).partition(":")
    if kind != "beam" or not width.isdigit():
        raise ValueError(f"unknown decode mode {decode!r}")
    return [(vocab.decode(ids), score) for ids, score in beam_decode(model, src, int(width), limit)]


def run_stage_batch(model, inputs, vocab, batch_size=256, max_lens=None):
    """Greedy-decode many stage inputs, preserving order.

    ``max_lens`` optionally caps the output length per input; by default the
    cap is the input length plus a small slack.
    """
    out = []
    for start in range(0, len(inputs), batch_size):
        chunk = [_encode_input(t, vocab, model) for t in inputs[start:start + batch_size]]
        caps = ([len(c) - 2 + DECODE_SLACK for c in chunk] if max_lens is None
                else list(max_lens[start:start + batch_size]))
        # bucket by length so padding stays small; results are put back in order
        order = sorted(range(len(chunk)), key=lambda i: len(chunk[i]))
        res = [None] * len(chunk)
        for b in range(0, len(order), 64):
            sub = order[b:b + 64]
            dec = greedy_decode_batch(model, [chunk[i] for i in sub], max(caps[i] for i in sub))
            for i, ids in zip(sub, dec):
                res[i] = vocab.decode(ids[:caps[i]])
        out.extend(res)
    return out


@dataclass
class Correction:
    text: str
    candidates: list
    detected: str | None = None
    purified: str | None = None


class Cascade:
    """Frozen stage models for one variant, sharing one vocabulary."""

    def __init__(self, variant, vocab, detector=None, purificator=None, corrector=None):
        self.variant = StageVariant(variant)
        self.vocab = vocab
        self.detector = detector
        self.purificator = purificator
        self.corrector = corrector
        for role in self.variant.roles:
            if self.model(role) is None:
                raise ValueError(f"variant '{self.variant.value}' needs a {role.value} model")

    def model(self, role):
        return {StageRole.DETECTOR: self.detector, StageRole.PURIFICATOR: self.purificator,
                StageRole.CORRECTOR: self.corrector}[role]

    def correct(self, word, decode="greedy"):
        if word == "":
            return Correction("", [""], "" if self.detector else None, "" if self.purificator else None)
        src = tuple(word)
        # every stage's output is about as long as the word itself, whatever its input length
        cap = len(src) + DECODE_SLACK
        detected = purified = None
        if self.variant is StageVariant.C:
            cands = run_stage(self.corrector, src, self.vocab, decode, cap)
        else:
            detected = run_stage(self.detector, src, self.vocab, max_len=cap)[0][0]
            middle = detected
            if self.variant is StageVariant.DPC:
                purified = run_stage(self.purificator, sep_join(src, detected), self.vocab, max_len=cap)[0][0]
                middle = purified
            cands = run_stage(self.corrector, sep_join(src, middle), self.vocab, decode, cap)
        return Correction(cands[0][0], [c for c, _ in cands], detected, purified)

    def correct_batch(self, words):
        """Greedy cascade over many words; returns a list of :class:`Correction`."""
        srcs = [tuple(w) for w in words]
        caps = [len(s) + DECODE_SLACK for s in srcs]
        detected = purified = [None] * len(words)
        if self.variant is StageVariant.C:
            final = run_stage_batch(self.corrector, srcs, self.vocab, max_lens=caps)
        else:
            detected = run_stage_batch(self.detector, srcs, self.vocab, max_lens=caps)
            middle = detected
            if self.variant is StageVariant.DPC:
                purified = run_stage_batch(self.purificator, [sep_join(s, d) for s, d in zip(srcs, detected)],
                                           self.vocab, max_lens=caps)
                middle = purified
            final = run_stage_batch(self.corrector, [sep_join(s, m) for s, m in zip(srcs, middle)], self.vocab,
                                    max_lens=caps)
        return [Correction(f, [f], d, p) for f, d, p in zip(final, detected, purified)]


def correct_word(detector, purificator, corrector, word, decode="greedy", vocab=None):
    vocab = vocab or corrector.vocab
    return Cascade(StageVariant.DPC, vocab, detector, purificator, corrector).correct(word, decode)


def correct_word_variant(variant, models, word, decode="greedy", vocab=None):
    """``models`` maps role names (or :class:`StageRole`) to frozen models."""
    by_role = {StageRole(k) if not isinstance(k, StageRole) else k: v for k, v in models.items()}
    vocab = vocab or next(iter(by_role.values())).vocab
    cascade = Cascade(variant, vocab, by_role.get(StageRole.DETECTOR), by_role.get(StageRole.PURIFICATOR),
                      by_role.get(StageRole.CORRECTOR))
    return cascade.correct(word, decode)


def mask_exact_match(pairs, predicted):
    if not pairs:
        return 0.0
    return sum(p.mask == m for p, m in zip(pairs, predicted)) / len(pairs)


# --- checkpoints -----------------------------------------------------------

MAGIC = b"DPCS"
FORMAT_VERSION = 1


def _u32(n):
    return struct.pack("<I", n)


def _blob(b):
    return _u32(len(b)) + b


def checkpoint_bytes(model):
    meta = dict(model.config.to_dict())
    meta["role"] = (model.role or StageRole.CORRECTOR).value
    meta["variant"] = (model.variant or StageVariant.DPC).value
    config_text = "".join(f"{k}={v}\n" for k, v in meta.items()).encode("utf-8")
    parts = [MAGIC, _u32(FORMAT_VERSION), _blob(config_text)]
    tokens = model.vocab.tokens
    parts.append(_u32(len(tokens)))
    parts.extend(_blob(t.encode("utf-8")) for t in tokens)
    parts.append(_u32(len(model.params)))
    for name, p in model.params.items():
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        parts.append(_blob(name.encode("utf-8")))
        parts.append(_u32(arr.ndim))
        parts.extend(_u32(d) for d in arr.shape)
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + hashlib.blake2b(body, digest_size=8).digest()


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def blob(self):
        return self.take(self.u32())


def checkpoint_from_bytes(data):
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, digest = data[:-8], data[-8:]
    version = struct.unpack("<I", data[4:8])[0]
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch (file truncated or corrupted)")
    r = _Reader(body)
    r.take(8)
    meta = {}
    for line in r.blob().decode("utf-8").splitlines():
        k, _, v = line.partition("=")
        meta[k] = v
    role = StageRole(meta.pop("role"))
    variant = StageVariant(meta.pop("variant"))
    config = TransformerConfig.from_dict(meta)
    tokens = [r.blob().decode("utf-8") for _ in range(r.u32())]
    vocab = Vocab.from_tokens(tokens)
    model = Seq2SeqModel(config, seed=0)
    count = r.u32()
    if count != len(model.params):
        raise CheckpointError(f"checkpoint holds {count} arrays, config expects {len(model.params)}")
    for _ in range(count):
        name = r.blob().decode("utf-8")
        shape = tuple(r.u32() for _ in range(r.u32()))
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
        if name not in model.params or model.params[name].shape != shape:
            raise CheckpointError(f"parameter {name} {shape} does not fit the stored config")
        model.params[name].data = arr
    if r.pos != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    model.vocab, model.role, model.variant = vocab, role, variant
    return model


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


def load_cascade(paths, variant):
    """Load checkpoints in stage order for ``variant`` and check they share a vocabulary."""
    variant = StageVariant(variant)
    roles = variant.roles
    if len(paths) != len(roles):
        raise ValueError(f"variant '{variant.value}' needs {len(roles)} checkpoints "
                         f"({', '.join(r.value for r in roles)}), got {len(paths)}")
    models = [load_checkpoint(p) for p in paths]
    vocab = models[0].vocab
    for p, m in zip(paths, models):
        if m.vocab != vocab:
            raise VocabMismatchError(f"{p}: vocabulary differs from {paths[0]}")
    kwargs = {r.value: m for r, m in zip(roles, models)}
    return Cascade(variant, vocab, **kwargs)

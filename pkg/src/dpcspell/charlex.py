"""Alphabets, wordlists and the character vocabulary."""

from __future__ import annotations

import csv
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

MASK_GLYPH = "_"

PAD, SOS, EOS, SEP, MASK, UNK = range(6)
SPECIAL_TOKENS = ("<pad>", "<sos>", "<eos>", "<sep>", "<mask>", "<unk>")
RESERVED_GLYPHS = frozenset({MASK_GLYPH, *SPECIAL_TOKENS})


class EmptyLexiconError(ValueError):
    pass


class FetchError(IOError):
    pass


@dataclass(frozen=True)
class Alphabet:
    """Character set ``chars`` and the retained subset ``frequent`` (always holds a space).

    ``combined`` lists multi-code-point units that the visual-combined
    generator treats as atomic.
    """

    chars: tuple
    frequent: frozenset
    combined: tuple = ()

    def __post_init__(self):
        if " " not in self.frequent:
            object.__setattr__(self, "frequent", frozenset(self.frequent) | {" "})
        stray = set(self.frequent) - set(self.chars) - {" "}
        if stray:
            raise ValueError(f"frequent characters missing from the alphabet: {sorted(stray)}")
        clash = RESERVED_GLYPHS & set(self.frequent)
        if clash:
            raise ValueError(f"alphabet uses reserved glyphs {sorted(clash)}")

    @classmethod
    def from_chars(cls, chars, combined=()):
        chars = tuple(dict.fromkeys(chars))
        return cls(chars=chars, frequent=frozenset(chars) | {" "}, combined=tuple(combined))


def load_alphabet(path):
    """Read an alphabet file: one character per line, then an optional ``[combined]`` section."""
    chars, combined = [], []
    target = chars
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if line.strip() == "[combined]":
                target = combined
                continue
            target.append(line.strip())
    for c in chars:
        if len(c) != 1:
            raise ValueError(f"{path}: '{c}' is not a single character; list it under [combined]")
    return Alphabet.from_chars(chars, combined)


def clean_text(raw, alphabet):
    keep = alphabet.frequent
    return "".join(ch for ch in raw if ch in keep)


@dataclass(frozen=True)
class Lexicon:
    words: tuple
    membership: frozenset = field(repr=False, default=frozenset())

    def __post_init__(self):
        object.__setattr__(self, "membership", frozenset(self.words))

    @classmethod
    def from_words(cls, words):
        return cls(tuple(dict.fromkeys(w for w in words if w)))

    def __contains__(self, word):
        return word in self.membership

    def __len__(self):
        return len(self.words)

    def __iter__(self):
        return iter(self.words)


def load_wordlist(path, alphabet):
    """Load a one-word-per-line (or single-column CSV) file into a cleaned :class:`Lexicon`."""
    words = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            word = clean_text(row[0], alphabet).strip()
            if word:
                words.append(word)
    lexicon = Lexicon.from_words(words)
    if not lexicon.words:
        raise EmptyLexiconError(f"{path}: no usable words after cleaning")
    return lexicon


def fetch_wordlist(url, dest, timeout=30.0):
    """Download ``url`` verbatim to ``dest``; return the number of bytes written."""
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            status = getattr(resp, "status", 200)
            if not 200 <= status < 300:
                raise FetchError(f"{url}: HTTP {status}")
            body = resp.read()
    except urllib.error.HTTPError as exc:
        raise FetchError(f"{url}: HTTP {exc.code}") from exc
    except (urllib.error.URLError, TimeoutError, OSError) as exc:
        raise FetchError(f"{url}: {getattr(exc, 'reason', exc)}") from exc
    Path(dest).write_bytes(body)
    return len(body)


class Vocab:
    """Bijection between characters and ids; the six specials take ids 0-5.

    The mask glyph is never a character of its own: it encodes to the MASK
    special and MASK decodes back to the glyph.
    """

    def __init__(self, chars):
        chars = sorted(set(chars) - {MASK_GLYPH} - set(SPECIAL_TOKENS))
        self.tokens = list(SPECIAL_TOKENS) + chars
        self.id_of = {t: i for i, t in enumerate(self.tokens)}
        self.char_of = dict(enumerate(self.tokens))

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def __repr__(self):
        return f"Vocab({len(self)} tokens)"

    @property
    def chars(self):
        return self.tokens[len(SPECIAL_TOKENS):]

    def encode(self, text):
        ids = []
        for ch in text:
            if ch == MASK_GLYPH:
                ids.append(MASK)
            else:
                ids.append(self.id_of.get(ch, UNK))
        return ids

    def decode(self, ids, strip_specials=True):
        out = []
        for i in ids:
            i = int(i)
            if i == MASK:
                out.append(MASK_GLYPH)
            elif i < len(SPECIAL_TOKENS):
                if not strip_specials:
                    out.append(SPECIAL_TOKENS[i])
            else:
                out.append(self.char_of[i])
        return "".join(out)

    @classmethod
    def from_tokens(cls, tokens):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocab token list must start with the six special tokens")
        vocab = cls(tokens[len(SPECIAL_TOKENS):])
        if vocab.tokens != tokens:
            raise ValueError("vocab token list is not in canonical order")
        return vocab


def build_vocab(corpus):
    """Vocabulary over every character in the source, mask and target fields."""
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    chars = set()
    for pair in corpus:
        chars.update(pair.source)
        chars.update(pair.mask)
        chars.update(pair.target)
    return Vocab(chars)

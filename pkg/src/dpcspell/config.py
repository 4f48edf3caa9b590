"""Run configuration: a flat INI file with five sections.

Paths are resolved against the directory holding the config file, unknown
keys are errors, and anything left out falls back to the full-size model
defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .charlex import load_alphabet, load_wordlist
from .errorgen import ErrorType, load_confusion_table
from .pipeline import StageRole, StageVariant, TrainOptions
from .transformer import TransformerConfig


class ConfigError(ValueError):
    pass


SECTIONS = ("alphabet", "generation", "model", "training", "evaluation")

# [alphabet] keys naming a file; the substitution ones map onto error types
_TABLE_KEYS = {
    "cognitive": ErrorType.COGNITIVE,
    "visual_single": ErrorType.VISUAL_SINGLE,
    "visual_combined": ErrorType.VISUAL_COMBINED,
    "typo_subst_avro": ErrorType.TYPO_SUBST_AVRO,
    "typo_subst_bijoy": ErrorType.TYPO_SUBST_BIJOY,
}
_PATH_KEYS = ("alphabet", "wordlist", "homonyms", "insertion_neighbours", *_TABLE_KEYS)


@dataclass
class AlphabetSection:
    alphabet: Path | None = None
    wordlist: Path | None = None
    homonyms: Path | None = None
    insertion_neighbours: Path | None = None
    tables: dict = field(default_factory=dict)  # ErrorType -> Path


@dataclass
class GenerationSection:
    seed: int = 0
    percentile: float = 0.9
    passes: int = 1
    quotas: dict = field(default_factory=dict)  # ErrorType -> int


@dataclass
class TrainingSection:
    variant: StageVariant = StageVariant.DPC
    stage: StageRole = StageRole.DETECTOR
    batch_size: int = 128
    seed: int = 0
    epochs: int | None = None
    early_stopping_patience: int | None = None
    predicted_fraction: float = 0.0

    def options(self):
        return TrainOptions(self.batch_size, self.epochs, self.early_stopping_patience,
                            self.predicted_fraction)


@dataclass
class EvaluationSection:
    k: int = 3
    ma_mode: str = "lexicon"
    decode: str = "greedy"
    beam_width: int = 3

    @property
    def decode_spec(self):
        return "greedy" if self.decode == "greedy" else f"beam:{self.beam_width}"


@dataclass
class RunConfig:
    alphabet: AlphabetSection = field(default_factory=AlphabetSection)
    generation: GenerationSection = field(default_factory=GenerationSection)
    model: TransformerConfig = field(default_factory=TransformerConfig)
    training: TrainingSection = field(default_factory=TrainingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    source: Path | None = None

    def load_alphabet(self):
        if self.alphabet.alphabet is None:
            raise ConfigError("[alphabet] alphabet is not set")
        return load_alphabet(self.alphabet.alphabet)

    def load_lexicon(self, alphabet=None, wordlist=None):
        path = wordlist or self.alphabet.wordlist
        if path is None:
            raise ConfigError("no wordlist given in [alphabet] or on the command line")
        return load_wordlist(path, alphabet or self.load_alphabet())

    def load_tables(self, alphabet=None):
        alphabet = alphabet or self.load_alphabet()
        return {kind: load_confusion_table(p, alphabet) for kind, p in self.alphabet.tables.items()}

    def load_neighbours(self, alphabet=None):
        if self.alphabet.insertion_neighbours is None:
            return None
        return load_confusion_table(self.alphabet.insertion_neighbours, alphabet or self.load_alphabet())


def _int(section, key, raw):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected an integer, got {raw!r}") from None


def _float(section, key, raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {raw!r}") from None


def _optional_int(section, key, raw):
    return None if raw.strip().lower() in ("", "none") else _int(section, key, raw)


def parse_config(text, base_dir="."):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    base = Path(base_dir)
    extra = [s for s in parser.sections() if s not in SECTIONS]
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(extra)}")
    cfg = RunConfig()

    if parser.has_section("alphabet"):
        for key, raw in parser.items("alphabet"):
            if key not in _PATH_KEYS:
                raise ConfigError(f"[alphabet] unknown key {key!r}")
            path = (base / raw.strip()).resolve()
            if key in _TABLE_KEYS:
                cfg.alphabet.tables[_TABLE_KEYS[key]] = path
            else:
                setattr(cfg.alphabet, key, path)

    if parser.has_section("generation"):
        gen = cfg.generation
        for key, raw in parser.items("generation"):
            if key == "seed":
                gen.seed = _int("generation", key, raw)
            elif key == "passes":
                gen.passes = _int("generation", key, raw)
                if gen.passes < 1:
                    raise ConfigError("[generation] passes must be at least 1")
            elif key == "percentile":
                gen.percentile = _float("generation", key, raw)
                if not 0.0 < gen.percentile <= 1.0:
                    raise ConfigError("[generation] percentile must be in (0, 1]")
            elif key.startswith("quota."):
                try:
                    kind = ErrorType.from_label(key[len("quota."):])
                except ValueError:
                    raise ConfigError(f"[generation] unknown error type in {key!r}") from None
                gen.quotas[kind] = _int("generation", key, raw)
                if gen.quotas[kind] < 0:
                    raise ConfigError(f"[generation] {key} must not be negative")
            else:
                raise ConfigError(f"[generation] unknown key {key!r}")

    if parser.has_section("model"):
        known = {f.name for f in fields(TransformerConfig)}
        items = dict(parser.items("model"))
        bad = sorted(set(items) - known)
        if bad:
            raise ConfigError(f"[model] unknown key(s): {', '.join(bad)}")
        try:
            cfg.model = TransformerConfig.from_dict(items)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[model] {exc}") from None

    if parser.has_section("training"):
        tr = cfg.training
        for key, raw in parser.items("training"):
            raw = raw.strip()
            if key == "variant":
                try:
                    tr.variant = StageVariant(raw.lower())
                except ValueError:
                    raise ConfigError(f"[training] variant must be dpc, dc or c, got {raw!r}") from None
            elif key == "stage":
                try:
                    tr.stage = StageRole(raw.lower())
                except ValueError:
                    raise ConfigError(f"[training] unknown stage {raw!r}") from None
            elif key in ("batch_size", "seed"):
                setattr(tr, key, _int("training", key, raw))
            elif key in ("epochs", "early_stopping_patience"):
                setattr(tr, key, _optional_int("training", key, raw))
            elif key == "predicted_fraction":
                tr.predicted_fraction = _float("training", key, raw)
            else:
                raise ConfigError(f"[training] unknown key {key!r}")

    if parser.has_section("evaluation"):
        ev = cfg.evaluation
        for key, raw in parser.items("evaluation"):
            raw = raw.strip()
            if key in ("k", "beam_width"):
                setattr(ev, key, _int("evaluation", key, raw))
            elif key == "ma_mode":
                if raw not in ("lexicon", "gold"):
                    raise ConfigError(f"[evaluation] ma_mode must be lexicon or gold, got {raw!r}")
                ev.ma_mode = raw
            elif key == "decode":
                if raw not in ("greedy", "beam"):
                    raise ConfigError(f"[evaluation] decode must be greedy or beam, got {raw!r}")
                ev.decode = raw
            else:
                raise ConfigError(f"[evaluation] unknown key {key!r}")
        if ev.k < 1 or ev.beam_width < 1:
            raise ConfigError("[evaluation] k and beam_width must be at least 1")
    return cfg


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_config(text, path.parent)
    cfg.source = path.resolve()
    return cfg


def bundled_data_dir(name="ascii"):
    return Path(__file__).with_name("data") / name


def toy_config_path():
    return bundled_data_dir() / "toy.ini"

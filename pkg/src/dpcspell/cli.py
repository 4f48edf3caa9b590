"""Command-line entry point: ``dpcspell <command> [options]``.

Exit codes are 0 on success, 1 for usage errors, 2 for bad or missing data
and 3 when training diverges.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import autodiff as ad
from .baseline import suggest
from .charlex import EmptyLexiconError, Lexicon, build_vocab, load_wordlist
from .config import ConfigError, RunConfig, load_config
from .errorgen import (CorpusFormatError, CorpusSplit, ErrorType, TrigramScorer, assemble_corpus,
                       filter_errors, read_corpus, stratified_split, write_corpus)
from .metrics import COLUMNS, EvalReport, MetricRow, Prediction, build_report, read_report_csv
from .pipeline import (CheckpointError, StageRole, StageVariant, TrainingLog, VocabMismatchError,
                       load_cascade, load_checkpoint, save_checkpoint, train_stage)
from .transformer import SequenceTooLongError

log = logging.getLogger("dpcspell")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

SPLIT_FILES = ("train.csv", "val.csv", "test.csv")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags, which would collide with the data-error code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _threads():
    raw = os.environ.get("DPCSPELL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"DPCSPELL_THREADS must be an integer, got {raw!r}") from None


def _config(args):
    return load_config(args.config) if getattr(args, "config", None) else RunConfig()


def _lexicon(path, cfg):
    if cfg.alphabet.alphabet is not None:
        return load_wordlist(path, cfg.load_alphabet())
    with open(path, encoding="utf-8", newline="") as fh:
        words = [row[0].strip() for row in csv.reader(fh) if row and row[0].strip()]
    if not words:
        raise EmptyLexiconError(f"{path}: no words")
    return Lexicon.from_words(words)


def log_path_for(checkpoint):
    return Path(str(checkpoint) + ".log.csv")


# --- commands ---------------------------------------------------------------

def cmd_gen(args):
    cfg = _config(args)
    alphabet = cfg.load_alphabet()
    lexicon = cfg.load_lexicon(alphabet, args.wordlist)
    seed = cfg.generation.seed if args.seed is None else args.seed
    pairs, report = assemble_corpus(lexicon, cfg.load_tables(alphabet), cfg.generation.quotas, seed,
                                    homonym_path=cfg.alphabet.homonyms, units=alphabet.combined,
                                    insertion_neighbours=cfg.load_neighbours(alphabet),
                                    passes=cfg.generation.passes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_corpus(pairs, out)
    text = report.to_text()
    Path(args.report or str(out) + ".report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_filter(args):
    cfg = _config(args)
    alphabet = cfg.load_alphabet()
    lexicon = cfg.load_lexicon(alphabet, args.wordlist)
    pairs = read_corpus(args.inp)
    pct = cfg.generation.percentile if args.percentile is None else args.percentile
    if not 0.0 < pct <= 1.0:
        raise UsageError("--percentile must be in (0, 1]")
    kept = filter_errors(pairs, TrigramScorer(lexicon.words), pct)
    write_corpus(kept, args.out)
    print(f"kept {len(kept)} of {len(pairs)} pairs")
    return EXIT_OK


def cmd_split(args):
    pairs = read_corpus(args.inp)
    split = stratified_split(pairs, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(SPLIT_FILES, (split.train, split.validation, split.test)):
        write_corpus(part, out / name)
        print(f"{name}: {len(part)}")
    return EXIT_OK


def _read_split(data_dir):
    d = Path(data_dir)
    train = read_corpus(d / "train.csv")
    # validation and test files are optional for training
    val, test = (read_corpus(d / n) if (d / n).exists() else [] for n in SPLIT_FILES[1:])
    return CorpusSplit(train, val, test)


def cmd_train(args):
    cfg = _config(args)
    tr = cfg.training
    variant = StageVariant(args.variant) if args.variant else tr.variant
    role = StageRole(args.stage) if args.stage else tr.stage
    if role not in variant.roles:
        raise UsageError(f"variant '{variant.value}' has no {role.value} stage "
                         f"(stages: {', '.join(r.value for r in variant.roles)})")
    seed = tr.seed if args.seed is None else args.seed
    options = tr.options()
    if args.epochs is not None:
        options.epochs = args.epochs
    if args.batch_size is not None:
        options.batch_size = args.batch_size
    split = _read_split(args.data_dir)
    vocab = build_vocab(split.train)

    model, start, history = None, 0, TrainingLog()
    if args.resume_from:
        model = load_checkpoint(args.resume_from)
        if model.vocab != vocab:
            raise VocabMismatchError(f"{args.resume_from}: vocabulary differs from {args.data_dir}/train.csv")
        if model.role is not None and model.role is not role:
            raise UsageError(f"{args.resume_from} is a {model.role.value} checkpoint, not {role.value}")
        prior = log_path_for(args.resume_from)
        if prior.exists():
            history = TrainingLog.read_csv(prior)
            start = history.records[-1].epoch if history.records else 0
    detector = load_checkpoint(args.detector) if args.detector else None

    model, new = train_stage(role, variant, split, model.config if model else cfg.model, seed=seed,
                             vocab=vocab, options=options, model=model, detector=detector, start_epoch=start)
    history.records.extend(new.records)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out)
    history.write_csv(log_path_for(out))
    last = history.records[-1] if history.records else None
    if last:
        print(f"{role.value}: epoch {last.epoch} train loss {last.train_loss:.4f} -> {out}")
    return EXIT_OK


def _decode_spec(args, cfg):
    spec = args.decode or cfg.evaluation.decode_spec
    kind, _, width = spec.partition(":")
    if spec != "greedy" and not (kind == "beam" and width.isdigit() and int(width) >= 1):
        raise UsageError(f"--decode must be 'greedy' or 'beam:B', got {spec!r}")
    return spec


def _load_cascade(paths, variant):
    need = len(variant.roles)
    if len(paths) != need:
        raise UsageError(f"variant '{variant.value}' takes {need} checkpoint(s) in the order "
                         f"{', '.join(r.value for r in variant.roles)}; got {len(paths)}")
    return load_cascade(paths, variant)


def _run_cascade(cascade, words, decode, workers):
    """Corrections for ``words`` in input order; greedy runs batched."""
    if decode == "greedy":
        return cascade.correct_batch(words)
    if workers == 1 or len(words) < 2:
        return [cascade.correct(w, decode) for w in words]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda w: cascade.correct(w, decode), words))


def cmd_eval(args):
    cfg = _config(args)
    decode = _decode_spec(args, cfg)
    k = args.k or cfg.evaluation.k
    variant = StageVariant(args.variant) if args.variant else cfg.training.variant
    cascade = _load_cascade(args.checkpoints, variant)
    pairs = read_corpus(args.test)
    if not pairs:
        raise CorpusFormatError(f"{args.test}: no test pairs")
    lexicon = _lexicon(args.lexicon, cfg) if args.lexicon else None
    ma_mode = args.ma_mode or cfg.evaluation.ma_mode
    if ma_mode == "lexicon" and lexicon is None:
        raise UsageError("lexicon-based MA needs --lexicon (or use --ma-mode gold)")
    results = _run_cascade(cascade, [p.source for p in pairs], decode, _threads())
    preds = [Prediction(p.target, tuple(r.candidates), p.error_type) for p, r in zip(pairs, results)]
    report = build_report(preds, lexicon, k, ma_mode, title=f"{variant.value.upper()} on {Path(args.test).name}")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    with open(out / "predictions.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "target", "prediction", "detected", "purified", "error_type"])
        for p, r in zip(pairs, results):
            w.writerow([p.source, p.target, r.text, r.detected or "", r.purified or "", p.error_type.label])
    _figures(out, report, args.checkpoints)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def _figures(out, report, checkpoints=()):
    from .plotting import plot_losses, plot_type_scores

    plot_type_scores(report, out / "em_by_type.png", "EM")
    plot_type_scores(report, out / "f05_by_type.png", "F0.5")
    logs = {}
    for ckpt in checkpoints:
        lp = log_path_for(ckpt)
        if lp.exists():
            logs[Path(ckpt).stem] = TrainingLog.read_csv(lp)
    if logs:
        plot_losses(logs, out / "losses.png")


def cmd_correct(args):
    cfg = _config(args)
    decode = _decode_spec(args, cfg)
    variant = StageVariant(args.variant) if args.variant else cfg.training.variant
    if args.stdin:
        words = [line.strip() for line in sys.stdin if line.strip()]
    else:
        words = list(args.words)
    if not words:
        return EXIT_OK
    cascade = _load_cascade(args.checkpoints, variant)
    for word, res in zip(words, _run_cascade(cascade, words, decode, _threads())):
        if args.show_mask:
            parts = [word]
            if res.detected is not None:
                parts.append(res.detected)
            if res.purified is not None:
                parts.append(res.purified)
            parts.append(res.text)
            print("\t".join(parts))
        else:
            print(res.text)
    return EXIT_OK


def cmd_suggest(args):
    cfg = _config(args)
    lexicon = _lexicon(args.lexicon, cfg)
    for word in args.words:
        found = suggest(word, lexicon, max_dist=args.max_dist, k=args.k)
        print(f"{word}\t{' '.join(found)}" if found else word)
    return EXIT_OK


def _report_from_csv(path):
    rows, weighted = {}, None
    for label, vals in read_report_csv(path).items():
        row = MetricRow(int(vals["count"]), *(vals[c] for c in COLUMNS[1:]))
        if label == "weighted_average":
            weighted = row
        else:
            rows[ErrorType.from_label(label)] = row
    if weighted is None:
        raise CorpusFormatError(f"{path}: no weighted_average row")
    return EvalReport(rows, weighted)


def cmd_report(args):
    if not args.logs and not args.eval:
        raise UsageError("report needs --logs and/or --eval")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    from .plotting import plot_losses, plot_type_scores

    w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    if args.logs:
        logs = {}
        for p in args.logs:
            name = Path(p).name.removesuffix(".log.csv")
            logs[name] = TrainingLog.read_csv(p)
        w.writerow(["run", "epochs", "first_train_loss", "last_train_loss", "last_val_loss"])
        for name, lg in logs.items():
            if not lg.records:
                continue
            first, last = lg.records[0], lg.records[-1]
            w.writerow([name, last.epoch, f"{first.train_loss:.6f}", f"{last.train_loss:.6f}",
                        "" if last.val_loss != last.val_loss else f"{last.val_loss:.6f}"])
        plot_losses(logs, out / "losses.png")
    if args.eval:
        report = _report_from_csv(args.eval)
        w.writerow(["error_type", *COLUMNS])
        for kind, row in report.rows.items():
            count, *rest = row.values()
            w.writerow([kind.label, count, *(f"{v:.4f}" for v in rest)])
        count, *rest = report.weighted.values()
        w.writerow(["weighted_average", count, *(f"{v:.4f}" for v in rest)])
        plot_type_scores(report, out / "em_by_type.png", "EM")
        plot_type_scores(report, out / "f05_by_type.png", "F0.5")
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser():
    p = _Parser(prog="dpcspell", description="Synthetic spelling-error corpora and cascaded "
                                              "character transformers for spelling correction.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    g = sub.add_parser("gen", help="generate a parallel error corpus")
    g.add_argument("--config", required=True)
    g.add_argument("--wordlist", help="override the wordlist named in the config")
    g.add_argument("--out", required=True)
    g.add_argument("--report", help="where to write the generation report (default: OUT.report.txt)")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("filter", help="drop implausible deletion/keyboard errors")
    f.add_argument("--config", required=True)
    f.add_argument("--wordlist")
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--percentile", type=float)
    f.set_defaults(func=cmd_filter)

    s = sub.add_parser("split", help="stratified 80/5/15 train/val/test split")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_split)

    t = sub.add_parser("train", help="train one stage")
    t.add_argument("--config")
    t.add_argument("--stage", choices=[r.value for r in StageRole])
    t.add_argument("--variant", choices=[v.value for v in StageVariant])
    t.add_argument("--data-dir", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--resume-from")
    t.add_argument("--detector", help="detector checkpoint, used with predicted_fraction > 0")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a cascade on a test CSV")
    e.add_argument("--config")
    e.add_argument("--checkpoints", nargs="+", required=True)
    e.add_argument("--variant", choices=[v.value for v in StageVariant])
    e.add_argument("--test", required=True)
    e.add_argument("--lexicon")
    e.add_argument("--k", type=int)
    e.add_argument("--ma-mode", choices=["lexicon", "gold"])
    e.add_argument("--decode")
    e.add_argument("--out-dir", default="eval")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("correct", help="correct words with a trained cascade")
    c.add_argument("--config")
    c.add_argument("--checkpoints", nargs="+", required=True)
    c.add_argument("--variant", choices=[v.value for v in StageVariant])
    c.add_argument("--decode")
    c.add_argument("--show-mask", action="store_true")
    c.add_argument("--stdin", action="store_true")
    c.add_argument("words", nargs="*")
    c.set_defaults(func=cmd_correct)

    q = sub.add_parser("suggest", help="edit-distance suggestions from a lexicon")
    q.add_argument("--config")
    q.add_argument("--lexicon", required=True)
    q.add_argument("--max-dist", type=int, default=2)
    q.add_argument("--k", type=int, default=5)
    q.add_argument("words", nargs="+")
    q.set_defaults(func=cmd_suggest)

    r = sub.add_parser("report", help="summarise training logs and eval CSVs, with figures")
    r.add_argument("--logs", nargs="*")
    r.add_argument("--eval")
    r.add_argument("--out-dir", default="report")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dpcspell: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ad.DivergenceError as exc:
        print(f"dpcspell: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ConfigError, CorpusFormatError, EmptyLexiconError, CheckpointError,
            VocabMismatchError, SequenceTooLongError, ValueError) as exc:
        print(f"dpcspell: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

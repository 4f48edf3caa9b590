import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from dpcspell.charlex import Lexicon
from dpcspell.errorgen import (FILTERED_TYPES, SPLIT_TYPES, ConfusionTable, CorpusFormatError, ErrorType,
                               GenerationReport, ParallelPair, TrigramScorer, assemble_corpus, classify_pair,
                               corpus_to_csv, derive_mask, filter_errors, gen_deletion, gen_insertion,
                               gen_runon, gen_split, gen_substitution, gen_transposition, load_confusion_table,
                               load_homonyms, read_corpus, split_sizes, stratified_split, tokenize_units,
                               write_corpus)

from oracles import check_structural, masked_positions, optimal_mask_sets, structural_cases


@pytest.mark.parametrize("source,target,mask", [
    ("worrd", "word", "wor_d"),
    ("aa", "a", "a_"),
    ("wrd", "word", "w_d"),
    ("wrod", "word", "w__d"),
    ("football", "foot", "foot____"),
    ("foot ball", "football", "foot_ball"),
    ("word", "word", "word"),
    ("", "word", ""),
])
def test_derive_mask_hand_cases(source, target, mask):
    assert derive_mask(source, target) == mask


@settings(max_examples=200)
@given(st.text(alphabet="abc", min_size=1, max_size=7), st.text(alphabet="abc", max_size=7))
def test_derive_mask_agrees_with_some_optimal_alignment(source, target):
    mask = derive_mask(source, target)
    assert len(mask) == len(source)
    sets, dist = optimal_mask_sets(source, target)
    assert masked_positions(mask) in sets
    assert (dist == 0) == ("_" not in mask)


def test_structural_suite_small(lexicon):
    for kind, src, tgt, expected in structural_cases(random.Random(7), lexicon.words, 80):
        mask = derive_mask(src, tgt)
        assert mask == expected, (kind, src, tgt)
        assert check_structural(kind, mask, src)


def test_tokenize_units():
    assert tokenize_units("corn", ("rn",)) == ["c", "o", "rn"]
    assert tokenize_units("corn") == list("corn")


TABLE = ConfusionTable({"o": ["p", "i"], "r": ["e"]})


def test_substitution(rng):
    for _ in range(30):
        p = gen_substitution("word", TABLE, ErrorType.TYPO_SUBST_AVRO, rng)
        p.check()
        assert len(p.source) == 4 and sum(a != b for a, b in zip(p.source, "word")) == 1
        assert p.mask == derive_mask(p.source, p.target)
    assert gen_substitution("xyz", TABLE, ErrorType.COGNITIVE, rng) is None


def test_combined_substitution_keeps_segmentation(rng):
    table = ConfusionTable({"rn": ["m"], "m": ["rn"], "w": ["vv"]})
    units = ("rn", "vv")
    seen = set()
    for _ in range(40):
        p = gen_substitution("warm", table, ErrorType.VISUAL_COMBINED, rng, units=units)
        seen.add(p.source)
        assert classify_pair(p, Lexicon.from_words(["warm"]), units)
    assert seen == {"vvarm", "warrn"}
    # "vw" -> "vvv" would not be one unit away, so nothing is generated
    assert gen_substitution("vw", table, ErrorType.VISUAL_COMBINED, rng, units=units) is None


def test_deletion_transposition_insertion(rng):
    for _ in range(30):
        d = gen_deletion("sunset", rng)
        t = gen_transposition("sunset", rng)
        i = gen_insertion("sunset", rng)
        for p in (d, t, i):
            p.check()
        assert len(d.source) == 5 and len(i.source) == 7
        assert sorted(t.source) == sorted("sunset") and t.mask.count("_") == 2
    assert gen_transposition("aaa", rng) is None
    assert gen_deletion("a", rng) is None


def test_insertion_with_neighbours(rng):
    nb = ConfusionTable({"a": ["s"]})
    p = gen_insertion("a", rng, nb)
    assert p.source == "as" and p.mask == "a_"
    assert gen_insertion("b", rng, nb) is None


LEX = Lexicon.from_words(["foot", "ball", "football", "sun", "set", "sunset", "cat"])


def test_split_kinds(rng):
    p = gen_split("football", LEX, rng, kind=ErrorType.SPLIT_BOTH)
    assert p.source == "foot ball" and p.mask == "foot_ball"
    assert gen_split("cat", LEX, rng, kind=ErrorType.SPLIT_BOTH) is None
    for _ in range(20):
        q = gen_split("sunset", LEX, rng)
        assert q.error_type in SPLIT_TYPES
        assert classify_pair(q, LEX)


def test_runon(rng):
    p = gen_runon("cat", LEX, rng)
    assert p.source.startswith("cat") and p.source[3:] in LEX and p.source[3:] != "cat"
    assert p.mask == "cat" + "_" * (len(p.source) - 3)
    assert gen_runon("cat", Lexicon.from_words(["cat"]), rng) is None


def test_classifier_rejects_wrong_shapes():
    lex = LEX
    assert not classify_pair(ParallelPair("wrod", "w__d", "word", ErrorType.TYPO_DELETION), lex)
    assert not classify_pair(ParallelPair("foot ball", "foot_ball", "football", ErrorType.SPLIT_RANDOM), lex)
    assert classify_pair(ParallelPair("foot ball", "foot_ball", "football", ErrorType.SPLIT_BOTH), lex)
    assert not classify_pair(ParallelPair("catdog", "cat___", "cat", ErrorType.RUN_ON), lex)
    assert not classify_pair(ParallelPair("cat", "cat", "cat", ErrorType.COGNITIVE), lex)


def test_pair_check():
    with pytest.raises(CorpusFormatError):
        ParallelPair("abc", "ab", "abd", ErrorType.COGNITIVE).check()
    with pytest.raises(CorpusFormatError):
        ParallelPair("abc", "abx", "abd", ErrorType.COGNITIVE).check()


def test_confusion_table_file(tmp_path, alphabet):
    p = tmp_path / "t.txt"
    p.write_text("# comment\na:s,q\nb:b,v\n", encoding="utf-8")
    t = load_confusion_table(p, alphabet)
    assert t["a"] == ("s", "q") and t["b"] == ("v",)
    p.write_text("a:\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_confusion_table(p)
    p.write_text("a:5\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_confusion_table(p, alphabet)


def test_homonyms(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("there,their\nthere,their\nto,too\n", encoding="utf-8")
    pairs = load_homonyms(p)
    assert [(x.source, x.target) for x in pairs] == [("there", "their"), ("to", "too")]
    p.write_text("onlyone\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError, match=":1:"):
        load_homonyms(p)


def test_assemble_is_deterministic_and_warns(lexicon, tables, alphabet, toy_config):
    quotas = {ErrorType.COGNITIVE: 50, ErrorType.SPLIT_BOTH: 5000}
    a, rep = assemble_corpus(lexicon, tables, quotas, 3, units=alphabet.combined)
    b, _ = assemble_corpus(lexicon, tables, quotas, 3, units=alphabet.combined)
    assert a == b
    assert rep.counts[ErrorType.COGNITIVE] == 50
    assert any("split_both" in w for w in rep.warnings)
    text = rep.to_text()
    assert "WARNING: split_both" in text and "Cognitive Error" in text
    c, _ = assemble_corpus(lexicon, tables, quotas, 4, units=alphabet.combined)
    assert a != c


def test_extra_passes_add_unique_pairs(lexicon, tables, alphabet):
    quotas = {ErrorType.TYPO_DELETION: 1000}
    one, rep = assemble_corpus(lexicon, tables, quotas, 0)
    assert len(one) <= len(lexicon) and rep.warnings
    more, rep = assemble_corpus(lexicon, tables, quotas, 0, passes=6)
    assert len(more) == 1000 and len(set(more)) == 1000 and not rep.warnings
    assert more[:len(one)] == one
    with pytest.raises(ValueError):
        assemble_corpus(lexicon, tables, quotas, 0, passes=0)


def test_synthesized_sources_are_never_lexicon_words(lexicon, tables, alphabet):
    quotas = {kind: 300 for kind in ErrorType if kind is not ErrorType.HOMONYM}
    pairs, _ = assemble_corpus(lexicon, tables, quotas, 5, units=alphabet.combined, passes=2)
    assert pairs and not [p for p in pairs if p.source in lexicon.membership]
    small = Lexicon(("sand", "and", "stop", "top"))
    got, _ = assemble_corpus(small, {}, {ErrorType.TYPO_DELETION: 50}, 0, passes=20)
    assert ("and", "sand") not in {(p.source, p.target) for p in got}
    assert all(p.source not in small.membership for p in got)


def test_toy_corpus_shape(toy_corpus, toy_config):
    counts = Counter(p.error_type for p in toy_corpus)
    assert len(toy_corpus) == 5000
    assert counts == Counter(toy_config.generation.quotas)


def test_report_percentages():
    rep = GenerationReport(counts={ErrorType.COGNITIVE: 3, ErrorType.RUN_ON: 1})
    text = rep.to_text()
    assert "75.00%" in text and "25.00%" in text and "Total = 4" in text


def test_trigram_prefers_familiar_strings():
    scorer = TrigramScorer(["banana", "bandana", "cabana"] * 3)
    common = scorer(ParallelPair("banana", "banana", "banana", ErrorType.TYPO_DELETION))
    odd = scorer(ParallelPair("qxzqxz", "qxzqxz", "banana", ErrorType.TYPO_DELETION))
    assert common < odd


def test_filter_only_touches_filtered_types(toy_corpus, lexicon):
    kept = filter_errors(toy_corpus, TrigramScorer(lexicon.words), 0.9)
    before, after = Counter(p.error_type for p in toy_corpus), Counter(p.error_type for p in kept)
    for kind in ErrorType:
        if kind in FILTERED_TYPES:
            assert after[kind] < before[kind]
            assert after[kind] >= int(0.9 * before[kind]) - 1
        else:
            assert after[kind] == before[kind]
    assert filter_errors(toy_corpus, TrigramScorer(lexicon.words), 1.0) == toy_corpus


@pytest.mark.parametrize("n,expected", [(10, (8, 1, 1)), (20, (16, 1, 3)), (1, (1, 0, 0)), (7, (6, 0, 1))])
def test_split_sizes(n, expected):
    assert split_sizes(n, (0.8, 0.05, 0.15)) == expected


def test_stratified_split(toy_corpus):
    s = stratified_split(toy_corpus, seed=5)
    assert len(s.train) + len(s.validation) + len(s.test) == len(toy_corpus)
    assert stratified_split(toy_corpus, seed=5) == s
    with pytest.raises(ValueError):
        stratified_split(toy_corpus, ratios=(0.5, 0.5, 0.5))


def test_csv_roundtrip(tmp_path, toy_corpus):
    path = tmp_path / "c.csv"
    write_corpus(toy_corpus[:300], path)
    assert read_corpus(path) == toy_corpus[:300]
    tricky = [ParallelPair('a,"b', 'a,"_', 'a,"c', ErrorType.COGNITIVE)]
    write_corpus(tricky, path)
    assert read_corpus(path) == tricky
    assert corpus_to_csv([]).strip() == "source,mask,target,error_type"


@pytest.mark.parametrize("body", [
    "source,mask,target\n",
    "source,mask,target,error_type\nab,a_,ac\n",
    "source,mask,target,error_type\nab,a_,ac,not_a_type\n",
    "source,mask,target,error_type\nab,x_,ac,cognitive\n",
])
def test_csv_rejects_bad_files(tmp_path, body):
    p = tmp_path / "bad.csv"
    p.write_text(body, encoding="utf-8")
    with pytest.raises(CorpusFormatError):
        read_corpus(p)

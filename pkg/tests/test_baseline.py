from hypothesis import given, settings, strategies as st

from dpcspell.baseline import Edit, apply_script, distance, levenshtein, rulebased_correct, suggest
from dpcspell.charlex import Lexicon

words = st.text(alphabet="abcd ", max_size=8)


def test_hand_values():
    assert distance("kitten", "sitting") == 3
    assert distance("", "abc") == 3
    assert distance("flaw", "lawn") == 2
    assert levenshtein("abc", "abc") == (0, [Edit("keep", 0, 0), Edit("keep", 1, 1), Edit("keep", 2, 2)])


def test_edits_land_rightmost():
    _, script = levenshtein("worrd", "word")
    assert [e for e in script if e.op != "keep"] == [Edit("del", 3, None)]
    _, script = levenshtein("aa", "a")
    assert [e for e in script if e.op != "keep"] == [Edit("del", 1, None)]


@given(words, words)
def test_script_replays_and_costs_distance(a, b):
    d, script = levenshtein(a, b)
    assert apply_script(script, a, b) == b
    assert d == sum(e.op != "keep" for e in script) == distance(a, b)


@given(words, words)
def test_symmetric(a, b):
    assert distance(a, b) == distance(b, a)


@settings(max_examples=50)
@given(words, words, words)
def test_triangle(a, b, c):
    assert distance(a, c) <= distance(a, b) + distance(b, c)


def test_distance_on_lists():
    assert distance(["rn", "a"], ["m", "a"]) == 1


LEX = Lexicon.from_words(["word", "ward", "world", "sword", "bird", "cat"])


def test_suggest_orders_by_distance_then_lexicon():
    assert suggest("wprd", LEX) == ["word", "ward", "world", "sword", "bird"]
    assert suggest("wprd", LEX, k=2) == ["word", "ward"]
    assert suggest("zzzzzz", LEX) == []


def test_rulebased():
    assert rulebased_correct("wrod", LEX) == "word"
    assert rulebased_correct("qqqqqq", LEX) == "qqqqqq"

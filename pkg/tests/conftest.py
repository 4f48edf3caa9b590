import random

import pytest

from dpcspell.charlex import load_alphabet, load_wordlist
from dpcspell.config import bundled_data_dir, load_config, toy_config_path
from dpcspell.errorgen import assemble_corpus

DATA = bundled_data_dir()


@pytest.fixture(scope="session")
def toy_config():
    return load_config(toy_config_path())


@pytest.fixture(scope="session")
def alphabet():
    return load_alphabet(DATA / "alphabet.txt")


@pytest.fixture(scope="session")
def lexicon(alphabet):
    return load_wordlist(DATA / "words.txt", alphabet)


@pytest.fixture(scope="session")
def tables(toy_config, alphabet):
    return toy_config.load_tables(alphabet)


@pytest.fixture(scope="session")
def toy_corpus(toy_config, alphabet, lexicon, tables):
    gen = toy_config.generation
    pairs, _ = assemble_corpus(lexicon, tables, gen.quotas, gen.seed, homonym_path=toy_config.alphabet.homonyms,
                               units=alphabet.combined, passes=gen.passes)
    return pairs


@pytest.fixture
def rng():
    return random.Random(1234)



def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES

    if not LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(LINES):
        terminalreporter.write_line(LINES[number])

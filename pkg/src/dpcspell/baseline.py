"""Levenshtein distance with a deterministic edit script, plus the rule-based corrector.

The script is traced left to right over a suffix-distance table.  At every
step the first optimal move wins in the order keep/substitute, delete from
source, insert from target; edits therefore land as far right as an optimal
alignment allows (``"worrd" -> "word"`` deletes the second ``r``).
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Edit:
    op: str  # "keep" | "sub" | "del" | "ins"
    i: int | None  # source index
    j: int | None  # target index


def _suffix_table(a, b):
    n, m = len(a), len(b)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n, -1, -1):
        row = d[i]
        for j in range(m, -1, -1):
            if i == n:
                row[j] = m - j
            elif j == m:
                row[j] = n - i
            else:
                nxt = d[i + 1]
                row[j] = min(nxt[j + 1] + (a[i] != b[j]), nxt[j] + 1, row[j + 1] + 1)
    return d


def levenshtein(a, b):
    """Return ``(distance, script)`` for turning ``a`` into ``b`` with unit costs."""
    d = _suffix_table(a, b)
    n, m = len(a), len(b)
    script = []
    i = j = 0
    while i < n or j < m:
        here = d[i][j]
        if i < n and j < m and here == d[i + 1][j + 1] + (a[i] != b[j]):
            script.append(Edit("keep" if a[i] == b[j] else "sub", i, j))
            i += 1
            j += 1
        elif i < n and here == d[i + 1][j] + 1:
            script.append(Edit("del", i, None))
            i += 1
        else:
            script.append(Edit("ins", None, j))
            j += 1
    return d[0][0], script


def distance(a, b):
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def apply_script(script, a, b):
    """Replay ``script`` on ``a``; ``b`` supplies the characters for sub/ins."""
    out = []
    for e in script:
        if e.op == "keep":
            out.append(a[e.i])
        elif e.op in ("sub", "ins"):
            out.append(b[e.j])
    return "".join(out)


def suggest(word, lexicon, max_dist=2, k=5):
    """Lexicon words within ``max_dist`` of ``word``, nearest first, ties in lexicon order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scored = []
    for order, cand in enumerate(lexicon.words):
        if abs(len(cand) - len(word)) > max_dist:
            continue
        dist = distance(word, cand)
        if dist <= max_dist:
            scored.append((dist, order, cand))
    scored.sort()
    return [cand for _, _, cand in scored[:k]]


def rulebased_correct(word, lexicon, max_dist=2):
    """Edit-distance-only baseline: nearest lexicon word, or the input unchanged."""
    found = suggest(word, lexicon, max_dist=max_dist, k=1)
    return found[0] if found else word

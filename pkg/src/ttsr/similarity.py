"""Longest-block-first sequence similarity over word tokens.

The longest common contiguous block is located with a dynamic program, then
the unmatched flanks on either side are searched recursively. The similarity
of two sequences is twice the number of matched tokens over their combined
length.
"""
from __future__ import annotations

import string
from typing import NamedTuple, Sequence

_PUNCT = string.punctuation


class MatchBlock(NamedTuple):
    i: int
    j: int
    n: int


def tokenize_question(text: str) -> tuple[str, ...]:
    tokens = (tok.strip(_PUNCT) for tok in text.lower().split())
    return tuple(tok for tok in tokens if tok)


def longest_block(s1: Sequence, s2: Sequence, alo: int, ahi: int, blo: int, bhi: int) -> MatchBlock:
    """Longest common block inside ``s1[alo:ahi]`` x ``s2[blo:bhi]``.

    Ties go to the smallest ``i``, then the smallest ``j``. Returns a block
    with ``n == 0`` when nothing matches.
    """
    best = MatchBlock(alo, blo, 0)
    # run[j] = length of the common suffix ending at s1[i-1], s2[j-1]
    prev = [0] * (bhi - blo + 1)
    for i in range(alo, ahi):
        cur = [0] * (bhi - blo + 1)
        a = s1[i]
        for j in range(blo, bhi):
            if a == s2[j]:
                k = prev[j - blo] + 1
                cur[j - blo + 1] = k
                start_i, start_j = i - k + 1, j - k + 1
                if k > best.n or (k == best.n and (start_i, start_j) < (best.i, best.j)):
                    best = MatchBlock(start_i, start_j, k)
        prev = cur
    return best


def matching_blocks(s1: Sequence, s2: Sequence) -> list[MatchBlock]:
    blocks = []
    stack = [(0, len(s1), 0, len(s2))]
    while stack:
        alo, ahi, blo, bhi = stack.pop()
        if alo >= ahi or blo >= bhi:
            continue
        block = longest_block(s1, s2, alo, ahi, blo, bhi)
        if block.n == 0:
            continue
        blocks.append(block)
        stack.append((alo, block.i, blo, block.j))
        stack.append((block.i + block.n, ahi, block.j + block.n, bhi))
    blocks.sort()
    return blocks


def similarity_ratio(s1: Sequence, s2: Sequence) -> float:
    total = len(s1) + len(s2)
    if total == 0:
        return 1.0
    matched = sum(b.n for b in matching_blocks(s1, s2))
    return 2.0 * matched / total


def text_similarity(a: str, b: str) -> float:
    return similarity_ratio(tokenize_question(a), tokenize_question(b))

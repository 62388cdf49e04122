"""Independent reference implementations used as test oracles.

Everything here is deliberately written from first principles (full-matrix
DP, uniform-cost search, merge-by-merge BPE application) and must stay
independent of the package code paths it checks.
"""

from __future__ import annotations

import heapq
from itertools import product


def lev_matrix(hyp, ref) -> int:
    """Plain full-matrix Levenshtein cost."""
    n, m = len(hyp), len(ref)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dp[i][0] = i
    for j in range(m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            dp[i][j] = min(
                dp[i - 1][j - 1] + (hyp[i - 1] != ref[j - 1]),
                dp[i - 1][j] + 1,
                dp[i][j - 1] + 1,
            )
    return dp[n][m]


def lev_recursive(hyp, ref) -> int:
    """Memoized recursive Levenshtein, structurally different from the DP."""
    from functools import lru_cache

    hyp = tuple(hyp)
    ref = tuple(ref)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(
            go(i - 1, j - 1) + (hyp[i - 1] != ref[j - 1]),
            go(i - 1, j) + 1,
            go(i, j - 1) + 1,
        )

    return go(len(hyp), len(ref))


def exhaustive_shift_edits(hyp, ref, max_block: int = 10) -> int:
    """Optimal (#shifts + residual edit distance) over all shift sequences.

    Uniform-cost search over hypothesis arrangements. Moves are every block
    shift whose block exactly matches some reference span (the misalignment
    requirement is dropped, so the searched move set is a superset of the
    greedy scorer's). Terminal value of a state is its Levenshtein distance
    to the reference; once the popped path cost reaches the best total found
    so far, no deeper sequence can win and the search stops.
    """
    ref = tuple(ref)
    start = tuple(hyp)
    spans = {
        ref[i:j]
        for i in range(len(ref))
        for j in range(i + 1, min(i + max_block, len(ref)) + 1)
    }
    best = lev_matrix(start, ref)
    dist = {start: 0}
    heap = [(0, start)]
    while heap:
        d, state = heapq.heappop(heap)
        if d >= best:
            break
        if d > dist.get(state, d):
            continue
        best = min(best, d + lev_matrix(state, ref))
        n = len(state)
        for s in range(n):
            for length in range(1, min(max_block, n - s) + 1):
                block = state[s : s + length]
                if block not in spans:
                    break
                rest = state[:s] + state[s + length :]
                for dest in range(len(rest) + 1):
                    if dest == s:
                        continue
                    child = rest[:dest] + block + rest[dest:]
                    nd = d + 1
                    if nd < dist.get(child, nd + 1):
                        dist[child] = nd
                        heapq.heappush(heap, (nd, child))
    return best


def bpe_apply_reference(merges, token: str, end_marker: str = "</w>") -> list[str]:
    """Apply merges strictly in learned order, one full pass per merge."""
    syms = list(token) + [end_marker]
    for left, right in merges:
        out = []
        i = 0
        while i < len(syms):
            if i + 1 < len(syms) and syms[i] == left and syms[i + 1] == right:
                out.append(left + right)
                i += 2
            else:
                out.append(syms[i])
                i += 1
        syms = out
    if syms[-1] == end_marker:
        syms = syms[:-1]
    elif syms[-1].endswith(end_marker):
        syms[-1] = syms[-1][: -len(end_marker)]
    return syms


def all_sentences(alphabet, max_len):
    """Every token sequence up to max_len over the alphabet (incl. empty)."""
    for n in range(max_len + 1):
        yield from (list(p) for p in product(alphabet, repeat=n))


def beam_search_single(model, src, beam, length_norm=True):
    """Plain beam search over one sequence model; the comparison standard
    for the ensemble decoder's degenerate single-component case.

    Returns [(tokens, score)] ranked best first. Conventions: candidates
    ordered by (-raw score, token id, parent index); finished hypotheses
    pool up; stop when the pool holds `beam` and no live raw score can beat
    its worst, or at 3x the input length; final scores divided by emitted
    length (end symbol included) when length_norm.
    """
    import numpy as np

    from apeforge.corpus import Vocab
    from apeforge.nmt.model import DecodeState

    vocab = model.tgt_vocab
    live = [((), Vocab.BOS, 0.0, DecodeState.start(model, list(src)))]
    done = []
    for _ in range(3 * len(src)):
        ranked = []
        stepped = []
        for parent, (ids, last, score, state) in enumerate(live):
            logp, new_state = state.step(model, last)
            stepped.append(new_state)
            for token in range(len(vocab)):
                ranked.append((score + float(logp[token]), token, parent))
        ranked.sort(key=lambda c: (-c[0], c[1], c[2]))
        live_next = []
        for score, token, parent in ranked[:beam]:
            ids = live[parent][0] + (token,)
            if token == Vocab.EOS:
                done.append((ids, score))
            else:
                live_next.append((ids, token, score, stepped[parent]))
        live = live_next
        if not live:
            break
        if len(done) >= beam:
            worst = sorted(s for _, s in done)[-beam]
            if max(s for _, _, s, _ in live) <= worst:
                break
    pool = done if done else [(ids, score) for ids, _, score, _ in live]
    out = []
    for ids, score in pool:
        final = score / len(ids) if length_norm else score
        words = vocab.words(t for t in ids if t != Vocab.EOS)
        out.append((words, final))
    out.sort(key=lambda e: (-e[1], e[0]))
    return out[:beam]

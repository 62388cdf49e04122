"""Byte-pair-encoding subword segmentation with a closed vocabulary.

Merges are learned greedily on word types weighted by corpus frequency. A
word is represented as its characters plus a final end-of-word symbol; every
merge fuses the currently most frequent adjacent symbol pair. Applying a
model splits tokens into subword units where every unit other than the last
of a word carries the continuation marker `@@`.

Characters outside the learned base inventory can never merge, so they pass
through as single-character units; callers can count them via the optional
unknown channel of apply_bpe. The continuation marker itself is assumed not
to occur as a unit inside token text (escape upstream if it can).
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Sentence

END_MARKER = "</w>"
CONTINUATION = "@@"

MODEL_HEADER = "#version: apeforge-bpe 1"
_BASE_PREFIX = "#base: "


class SubwordError(Exception):
    pass


class MalformedSegmentationError(SubwordError):
    """A unit stream that cannot have come from apply_bpe."""


@dataclass(frozen=True)
class BpeModel:
    merges: tuple[tuple[str, str], ...]
    base_symbols: frozenset[str]
    end_marker: str = END_MARKER
    target_merge_count: int = 0

    def vocabulary(self) -> set[str]:
        """All symbols the model can produce: base inventory plus one per merge."""
        vocab = set(self.base_symbols)
        for left, right in self.merges:
            vocab.add(left + right)
        return vocab

    def truncated(self, merge_count: int) -> "BpeModel":
        return BpeModel(
            merges=self.merges[:merge_count],
            base_symbols=self.base_symbols,
            end_marker=self.end_marker,
            target_merge_count=merge_count,
        )


def _word_symbols(token: str) -> tuple[str, ...]:
    return tuple(token) + (END_MARKER,)


def _count_pairs(
    words: list[tuple[str, ...]], freqs: list[int]
) -> tuple[Counter, defaultdict]:
    pairs: Counter = Counter()
    where: defaultdict = defaultdict(set)
    for idx, (syms, freq) in enumerate(zip(words, freqs)):
        for a, b in zip(syms, syms[1:]):
            pairs[(a, b)] += freq
            where[(a, b)].add(idx)
    return pairs, where


def _merge_word(syms: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    a, b = pair
    merged = a + b
    out = []
    i = 0
    n = len(syms)
    while i < n:
        if i < n - 1 and syms[i] == a and syms[i + 1] == b:
            out.append(merged)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return tuple(out)


def learn_bpe(corpus: Iterable[Sentence], merge_count: int) -> BpeModel:
    """Learn a merge list of at most merge_count operations.

    The most frequent adjacent pair (weighted by word-type frequency) is
    merged each round; equal counts break lexicographically on the
    (left, right) strings. Learning stops early once no pair occurs at
    least twice.
    """
    if merge_count < 0:
        raise ValueError("merge_count must be >= 0")
    word_freqs: Counter = Counter()
    for sent in corpus:
        word_freqs.update(sent)
    if not word_freqs:
        raise ValueError("empty corpus")

    words = [_word_symbols(w) for w in word_freqs]
    freqs = list(word_freqs.values())
    base = frozenset(s for w in words for s in w)

    pairs, where = _count_pairs(words, freqs)
    merges: list[tuple[str, str]] = []
    for _ in range(merge_count):
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        if pairs[best] < 2:
            break
        merges.append(best)
        # re-segment only the words that contain the pair, updating counts
        for idx in list(where[best]):
            old = words[idx]
            new = _merge_word(old, best)
            freq = freqs[idx]
            for a, b in zip(old, old[1:]):
                pairs[(a, b)] -= freq
                if pairs[(a, b)] <= 0:
                    del pairs[(a, b)]
                where[(a, b)].discard(idx)
            for a, b in zip(new, new[1:]):
                pairs[(a, b)] += freq
                where[(a, b)].add(idx)
            words[idx] = new

    return BpeModel(
        merges=tuple(merges),
        base_symbols=base,
        target_merge_count=merge_count,
    )


class BpeApplier:
    """Applies a learned model to sentences, caching per-token segmentations."""

    def __init__(self, model: BpeModel):
        self.model = model
        self.ranks = {pair: i for i, pair in enumerate(model.merges)}
        self._cache: dict[str, tuple[tuple[str, ...], int]] = {}

    def segment_token(self, token: str) -> tuple[tuple[str, ...], int]:
        """Split one token into units; also returns its unknown-character count."""
        cached = self._cache.get(token)
        if cached is not None:
            return cached
        syms = list(_word_symbols(token))
        unknown = sum(1 for ch in token if ch not in self.model.base_symbols)
        while len(syms) > 1:
            best_rank = None
            for a, b in zip(syms, syms[1:]):
                rank = self.ranks.get((a, b))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
            if best_rank is None:
                break
            syms = list(_merge_word(tuple(syms), self.model.merges[best_rank]))
        units = _strip_end_marker(syms)
        marked = tuple(
            u + CONTINUATION if i < len(units) - 1 else u for i, u in enumerate(units)
        )
        self._cache[token] = (marked, unknown)
        return marked, unknown

    def __call__(self, sent: Sequence[str]) -> Sentence:
        out: list[str] = []
        for token in sent:
            if token.endswith(CONTINUATION):
                raise SubwordError(
                    f"token {token!r} already carries a continuation marker; "
                    "refusing to segment twice"
                )
            out.extend(self.segment_token(token)[0])
        return tuple(out)


def _strip_end_marker(syms: Sequence[str]) -> list[str]:
    units = list(syms)
    if units and units[-1] == END_MARKER:
        units.pop()
    elif units and units[-1].endswith(END_MARKER):
        units[-1] = units[-1][: -len(END_MARKER)]
    return units


def apply_bpe(
    model: BpeModel, sent: Sequence[str], unknown_counts: Counter | None = None
) -> Sentence:
    """Segment a sentence into subword units.

    Characters missing from the model's base inventory stay single-character
    units; when `unknown_counts` is given, each such character increments it.
    """
    applier = BpeApplier(model)
    out: list[str] = []
    for token in sent:
        if token.endswith(CONTINUATION):
            raise SubwordError(
                f"token {token!r} already carries a continuation marker; "
                "refusing to segment twice"
            )
        units, unknown = applier.segment_token(token)
        if unknown and unknown_counts is not None:
            for ch in token:
                if ch not in model.base_symbols:
                    unknown_counts[ch] += 1
        out.extend(units)
    return tuple(out)


def revert_bpe(sent: Sequence[str]) -> Sentence:
    """Join continuation-marked units back into full tokens."""
    out: list[str] = []
    buffer = ""
    for unit in sent:
        if unit.endswith(CONTINUATION):
            buffer += unit[: -len(CONTINUATION)]
        else:
            out.append(buffer + unit)
            buffer = ""
    if buffer:
        raise MalformedSegmentationError(
            "unit stream ends with a continuation marker"
        )
    return tuple(out)


def save_model(model: BpeModel, path: str | Path) -> None:
    """Write the merge file: version header, base inventory, one merge per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(MODEL_HEADER + "\n")
        fh.write(_BASE_PREFIX + " ".join(sorted(model.base_symbols)) + "\n")
        for left, right in model.merges:
            fh.write(f"{left} {right}\n")


def load_model(path: str | Path) -> BpeModel:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0] != MODEL_HEADER:
        raise SubwordError(f"{path}: missing header {MODEL_HEADER!r}")
    body = [ln for ln in lines[1:] if ln]
    base: frozenset[str] = frozenset()
    if body and body[0].startswith(_BASE_PREFIX):
        base = frozenset(body[0][len(_BASE_PREFIX) :].split(" "))
        body = body[1:]
    merges = []
    for lineno, line in enumerate(body, 1):
        parts = line.split(" ")
        if len(parts) != 2:
            raise SubwordError(f"{path}: bad merge line {lineno}: {line!r}")
        merges.append((parts[0], parts[1]))
    if not base:
        # legacy file without the inventory line: reconstruct what we can
        base = frozenset(
            ch for pair in merges for side in pair for ch in _decompose(side)
        ) | {END_MARKER}
    return BpeModel(
        merges=tuple(merges), base_symbols=base, target_merge_count=len(merges)
    )


def _decompose(symbol: str) -> list[str]:
    if symbol.endswith(END_MARKER) and symbol != END_MARKER:
        return list(symbol[: -len(END_MARKER)]) + [END_MARKER]
    if symbol == END_MARKER:
        return [END_MARKER]
    return list(symbol)

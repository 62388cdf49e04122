"""Corpus data model and I/O: sentences, post-editing triplets, filters, mixing.

Sentences are tuples of whitespace-free unicode tokens; everything downstream
(metrics, subword models, neural models) operates on these token sequences.
Input text is assumed pre-tokenized; this module only splits on whitespace.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

Sentence = tuple[str, ...]

# Parallel triplet files share a prefix and carry these suffixes.
TRIPLET_SUFFIXES = (".src", ".mt", ".pe")

# Moses-style escaping of characters that are meaningful in downstream file
# formats (n-best separators, bracket markup). Order matters: '&' first on
# escape, last on unescape, so entity ampersands never get double-processed.
_ESCAPES = [
    ("&", "&amp;"),
    ("|", "&#124;"),
    ("<", "&lt;"),
    (">", "&gt;"),
    ("'", "&apos;"),
    ('"', "&quot;"),
    ("[", "&#91;"),
    ("]", "&#93;"),
]

_EOS_PUNCTUATION = {".", "!", "?"}


class CorpusError(Exception):
    """Base class for corpus file problems."""


class ParseError(CorpusError):
    """A line could not be turned into a Sentence."""


class AlignmentError(CorpusError):
    """Parallel files disagree on line counts."""


@dataclass(frozen=True)
class Triplet:
    """One post-editing training example.

    src: source-language sentence
    mt:  raw machine-translation output (target language)
    pe:  post-edited reference (target language)
    """

    src: Sentence
    mt: Sentence
    pe: Sentence

    def __post_init__(self):
        for field in ("src", "mt", "pe"):
            if not getattr(self, field):
                raise ValueError(f"triplet field {field!r} is empty")


class Vocab:
    """Closed token inventory with reserved ids for pad/begin/end/unknown."""

    PAD = 0
    BOS = 1
    EOS = 2
    UNK = 3

    RESERVED = ("<pad>", "<s>", "</s>", "<unk>")

    def __init__(self, units: Iterable[str]):
        self.tokens: list[str] = list(self.RESERVED)
        seen = set(self.tokens)
        for u in units:
            if u not in seen:
                seen.add(u)
                self.tokens.append(u)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self.index.get(token, self.UNK)

    def ids(self, sentence: Sequence[str]) -> list[int]:
        return [self.id(t) for t in sentence]

    def words(self, ids: Iterable[int]) -> Sentence:
        return tuple(self.tokens[i] for i in ids)

    @classmethod
    def from_corpus(cls, corpus: Iterable[Sequence[str]]) -> "Vocab":
        units: dict[str, None] = {}
        for sent in corpus:
            for tok in sent:
                units.setdefault(tok)
        return cls(units)


def sentence(line: str) -> Sentence:
    """Split a pre-tokenized line on whitespace runs."""
    return tuple(line.split())


def read_sentences(path: str | Path) -> list[Sentence]:
    """Read one sentence per line; empty lines are parse errors."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            toks = sentence(line)
            if not toks:
                raise ParseError(f"{path}: empty line {lineno}")
            out.append(toks)
    return out


def write_sentences(path: str | Path, corpus: Iterable[Sentence]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sent in corpus:
            fh.write(" ".join(sent) + "\n")


def triplet_paths(prefix: str | Path) -> tuple[Path, Path, Path]:
    prefix = Path(prefix)
    return tuple(prefix.with_name(prefix.name + s) for s in TRIPLET_SUFFIXES)


def read_triplets(prefix: str | Path) -> list[Triplet]:
    """Load line-aligned .src/.mt/.pe files into triplets.

    Raises AlignmentError naming the offending file when line counts differ,
    ParseError on empty lines.
    """
    paths = triplet_paths(prefix)
    sides = [read_sentences(p) for p in paths]
    counts = [len(s) for s in sides]
    if len(set(counts)) != 1:
        longest = max(counts)
        for path, n in zip(paths, counts):
            if n != longest:
                raise AlignmentError(
                    f"{path}: {n} lines, expected {longest} to match parallel files"
                )
    return [Triplet(src=s, mt=m, pe=p) for s, m, p in zip(*sides)]


def write_triplets(prefix: str | Path, triplets: Iterable[Triplet]) -> None:
    triplets = list(triplets)
    for path, field in zip(triplet_paths(prefix), ("src", "mt", "pe")):
        write_sentences(path, (getattr(t, field) for t in triplets))


def letter_count(sent: Sequence[str]) -> int:
    return sum(
        1 for tok in sent for ch in tok if unicodedata.category(ch).startswith("L")
    )


def is_wellformed(sent: Sequence[str]) -> bool:
    """Well-formedness filter for monolingual lines.

    Keeps a sentence iff it starts with an uppercase letter, ends in one of
    . ! ? and contains at least 30 unicode letters in total.
    """
    if not sent:
        return False
    first = sent[0][0]
    if unicodedata.category(first) not in ("Lu", "Lt"):
        return False
    if sent[-1][-1] not in _EOS_PUNCTUATION:
        return False
    return letter_count(sent) >= 30


def wellformed_filter(corpus: Iterable[Sentence]) -> list[Sentence]:
    return [s for s in corpus if is_wellformed(s)]


def mix(
    parts: Sequence[tuple[str, int]], corpora: dict[str, Sequence[Triplet]]
) -> list[Triplet]:
    """Concatenate corpora with integer oversampling factors.

    Output is deterministic: parts in declared order, each corpus repeated
    factor times back to back. Epoch-level shuffling is the trainer's job.
    """
    out: list[Triplet] = []
    for name, factor in parts:
        if name not in corpora:
            raise KeyError(f"unknown corpus id {name!r}")
        if factor < 1:
            raise ValueError(f"oversample factor for {name!r} must be >= 1")
        for _ in range(factor):
            out.extend(corpora[name])
    return out


def read_mix_spec(path: str | Path) -> list[tuple[str, int]]:
    """Parse a mix file: one `<corpus-prefix> <factor>` pair per line."""
    parts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 2:
                raise ParseError(f"{path}: line {lineno}: expected '<prefix> <factor>'")
            try:
                factor = int(fields[1])
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: bad factor {fields[1]!r}")
            parts.append((fields[0], factor))
    return parts


def escape_token(token: str) -> str:
    for raw, entity in _ESCAPES:
        token = token.replace(raw, entity)
    return token


def unescape_token(token: str) -> str:
    for raw, entity in reversed(_ESCAPES):
        token = token.replace(entity, raw)
    return token


def escape(sent: Sequence[str]) -> Sentence:
    """Escape reserved characters (Moses convention) in every token."""
    return tuple(escape_token(t) for t in sent)


def unescape(sent: Sequence[str]) -> Sentence:
    """Exact inverse of escape."""
    return tuple(unescape_token(t) for t in sent)


def iter_lines(path: str | Path) -> Iterator[str]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            yield line.rstrip("\n")

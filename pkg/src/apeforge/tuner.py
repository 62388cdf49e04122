"""Feature-weight optimization toward lower corpus TER.

Outer loop: decode the dev set with the current weights, merge the fresh
n-best lists into the accumulated pool (deduplicating by hypothesis string),
then run margin-based online updates over the pool. Sentence-level TER
against the post-edited reference, as a fraction, is the loss. The returned
weights are whichever candidate (initial weights included) reranks the
accumulated pool to the lowest corpus TER, so tuning can never end worse
than it started on that pool.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .corpus import Sentence, Triplet
from .decoder import NBestList, PepFeature, ScorerBinding, decode
from .metrics import corpus_ter, ter

FeatureWeights = dict[str, float]


class TunerConfigError(Exception):
    """Feature names disagree between n-best lists and the weight vector."""


@dataclass
class TuneConfig:
    outer_iterations: int = 2
    mira_c: float = 0.01
    inner_epochs: int = 15
    seed: int = 0
    accumulate_nbest: bool = True
    beam: int = 12
    length_norm: bool = True

    def __post_init__(self):
        if self.outer_iterations < 1:
            raise ValueError("outer_iterations must be >= 1")
        if self.inner_epochs < 1:
            raise ValueError("inner_epochs must be >= 1")
        if self.mira_c <= 0:
            raise ValueError("mira_c must be positive")


def _feature_row(entry, names: Sequence[str]) -> np.ndarray:
    table = dict(entry.features)
    if set(table) != set(names):
        raise TunerConfigError(
            f"entry features {sorted(table)} do not match weights {sorted(names)}"
        )
    return np.array([table[n] for n in names])


def rerank(lists: Sequence[NBestList], weights: FeatureWeights) -> list[Sentence]:
    """Per sentence, the hypothesis maximizing the weighted feature sum;
    ties keep the earliest (original-rank) entry."""
    names = sorted(weights)
    w = np.array([weights[n] for n in names])
    out = []
    for nbest in lists:
        if not nbest.entries:
            raise ValueError(f"sentence {nbest.sentence_id} has no entries")
        best = None
        best_score = -np.inf
        for entry in nbest.entries:
            score = float(w @ _feature_row(entry, names))
            if score > best_score:
                best, best_score = entry, score
        out.append(best.tokens)
    return out


def rerank_corpus_ter(
    lists: Sequence[NBestList],
    weights: FeatureWeights,
    references: Sequence[Sentence],
) -> float:
    hyps = rerank(lists, weights)
    return corpus_ter(list(zip(hyps, references)))


def _sentence_ter_fraction(tokens: Sentence, reference: Sentence) -> float:
    return ter(tokens, reference).ter / 100.0


def mira_epochs(
    lists: Sequence[NBestList],
    references: Sequence[Sentence],
    initial: FeatureWeights,
    cfg: TuneConfig,
    rng: np.random.Generator,
) -> FeatureWeights:
    """Online hope/fear updates; returns the average of per-epoch weights."""
    names = sorted(initial)
    w = np.array([initial[n] for n in names])
    prepared = []
    for nbest, ref in zip(lists, references):
        rows = np.stack([_feature_row(e, names) for e in nbest.entries])
        costs = np.array(
            [_sentence_ter_fraction(e.tokens, ref) for e in nbest.entries]
        )
        prepared.append((rows, costs))

    snapshots = []
    for _ in range(cfg.inner_epochs):
        for si in rng.permutation(len(prepared)):
            rows, costs = prepared[si]
            scores = rows @ w
            hope = int(np.argmax(scores - costs))
            fear = int(np.argmax(scores + costs))
            hinge = (scores[fear] + costs[fear]) - (scores[hope] + costs[hope])
            delta = rows[hope] - rows[fear]
            norm_sq = float(delta @ delta)
            if hinge > 0 and norm_sq > 0:
                eta = min(cfg.mira_c, hinge / norm_sq)
                w = w + eta * delta
        snapshots.append(w.copy())
    averaged = np.mean(snapshots, axis=0)
    return {n: float(v) for n, v in zip(names, averaged)}


def tune_on_lists(
    lists: Sequence[NBestList],
    references: Sequence[Sentence],
    cfg: TuneConfig,
    initial: FeatureWeights | None = None,
) -> FeatureWeights:
    """Weight search over fixed n-best lists (no re-decoding).

    Candidates are the initial weights and each outer iteration's averaged
    weights; the candidate with the lowest rerank corpus TER wins, earliest
    first on ties.
    """
    if len(lists) != len(references):
        raise ValueError("lists and references must align")
    if not lists:
        raise ValueError("no n-best lists to tune on")
    if initial is None:
        names = sorted(n for n, _ in lists[0].entries[0].features)
        initial = {n: 1.0 / len(names) for n in names}
    rng = np.random.default_rng(cfg.seed)
    candidates = [dict(initial)]
    current = dict(initial)
    for _ in range(cfg.outer_iterations):
        current = mira_epochs(lists, references, current, cfg, rng)
        candidates.append(current)
    scored = [
        (rerank_corpus_ter(lists, cand, references), i)
        for i, cand in enumerate(candidates)
    ]
    best_index = min(scored)[1]
    return candidates[best_index]


BindingFactory = Callable[
    [Triplet], tuple[list[ScorerBinding], PepFeature | None]
]


def _merge(
    pool: dict[int, list],
    fresh: Sequence[NBestList],
) -> None:
    for nbest in fresh:
        entries = pool.setdefault(nbest.sentence_id, [])
        seen = {" ".join(e.tokens) for e in entries}
        for entry in nbest.entries:
            key = " ".join(entry.tokens)
            if key not in seen:
                seen.add(key)
                entries.append(entry)


def tune(
    dev: Sequence[Triplet],
    binding_factory: BindingFactory,
    cfg: TuneConfig,
) -> FeatureWeights:
    """Iterative decode-and-optimize over a development set of triplets.

    binding_factory maps a triplet to its scorer bindings (and optional copy
    bias) for decoding; binding weights are overridden by the tuner. Initial
    weights are uniform over features.
    """
    if not dev:
        raise ValueError("dev set is empty")
    probe_bindings, probe_pep = binding_factory(dev[0])
    names = [b.name for b in probe_bindings]
    if probe_pep is not None:
        names.append("pep")
    weights: FeatureWeights = {n: 1.0 / len(names) for n in names}
    candidates = [dict(weights)]
    rng = np.random.default_rng(cfg.seed)

    pool: dict[int, list] = {}
    references = [t.pe for t in dev]
    for _ in range(cfg.outer_iterations):
        fresh = []
        for i, triplet in enumerate(dev):
            bindings, pep = binding_factory(triplet)
            bindings = [replace(b, weight=weights[b.name]) for b in bindings]
            if pep is not None:
                pep = PepFeature(allowed=pep.allowed, weight=weights["pep"])
            fresh.append(
                decode(
                    bindings,
                    pep=pep,
                    beam=cfg.beam,
                    length_norm=cfg.length_norm,
                    sentence_id=i,
                )
            )
        if cfg.accumulate_nbest:
            _merge(pool, fresh)
        else:
            pool = {nb.sentence_id: list(nb.entries) for nb in fresh}
        lists = [
            NBestList(sentence_id=i, entries=tuple(pool[i])) for i in sorted(pool)
        ]
        weights = mira_epochs(lists, references, weights, cfg, rng)
        candidates.append(dict(weights))

    scored = [
        (rerank_corpus_ter(lists, cand, references), i)
        for i, cand in enumerate(candidates)
    ]
    return candidates[min(scored)[1]]

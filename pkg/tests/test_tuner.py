"""Weight optimization: hope/fear updates, reranking, grid-search oracles."""

import numpy as np
import pytest

from apeforge.corpus import Triplet, Vocab
from apeforge.decoder import NBestEntry, NBestList, ScorerBinding
from apeforge.metrics import ter
from apeforge.tuner import (
    TuneConfig,
    TunerConfigError,
    mira_epochs,
    rerank,
    rerank_corpus_ter,
    tune,
    tune_on_lists,
)


def entry(tokens, **feats):
    return NBestEntry(
        tokens=tuple(tokens),
        features=tuple(feats.items()),
        combined=0.0,
    )


def synthetic_problem(n_sentences=20, seed=5):
    """Per sentence: four hypotheses at TER 0/.25/.5/.75 of a 4-word
    reference; feature `neg_ter` is exact negative sentence TER, feature
    `noise` is seeded junk that often prefers worse hypotheses."""
    rng = np.random.default_rng(seed)
    lists, refs = [], []
    for i in range(n_sentences):
        ref = tuple(f"w{i}_{j}" for j in range(4))
        hyps = [
            ref,
            ref[:3] + (f"x{i}_a",),
            ref[:2] + (f"x{i}_a", f"x{i}_b"),
            ref[:1] + (f"x{i}_a", f"x{i}_b", f"x{i}_c"),
        ]
        entries = []
        for k, hyp in enumerate(hyps):
            frac = ter(hyp, ref).ter / 100.0
            noise = float(rng.uniform(-0.5, 0.5)) + 0.4 * k
            entries.append(entry(hyp, neg_ter=-frac, noise=noise))
        lists.append(NBestList(sentence_id=i, entries=tuple(entries)))
        refs.append(ref)
    return lists, refs


def grid_best_ter(lists, refs, names, lo=-2.0, hi=2.0, steps=41):
    grid = np.linspace(lo, hi, steps)
    best = np.inf
    for w0 in grid:
        for w1 in grid:
            weights = {names[0]: float(w0), names[1]: float(w1)}
            best = min(best, rerank_corpus_ter(lists, weights, refs))
    return best


class TestRerank:
    def test_decoding_weights_reproduce_original_1best(self):
        lists = [
            NBestList(
                sentence_id=0,
                entries=(
                    entry(("a",), m=-1.0),
                    entry(("b",), m=-2.0),
                ),
            )
        ]
        assert rerank(lists, {"m": 1.0}) == [("a",)]

    def test_negated_weights_pick_the_former_worst(self):
        lists = [
            NBestList(
                sentence_id=0,
                entries=(
                    entry(("a",), m=-1.0, p=0.5),
                    entry(("b",), m=-2.0, p=0.25),
                    entry(("c",), m=-4.0, p=0.125),
                ),
            )
        ]
        w = {"m": 1.0, "p": 2.0}
        assert rerank(lists, w) == [("a",)]
        assert rerank(lists, {k: -v for k, v in w.items()}) == [("c",)]

    def test_ties_keep_original_rank(self):
        lists = [
            NBestList(
                sentence_id=0,
                entries=(entry(("a",), m=-1.0), entry(("b",), m=-1.0)),
            )
        ]
        assert rerank(lists, {"m": 1.0}) == [("a",)]

    def test_positive_scaling_invariant(self):
        lists, refs = synthetic_problem(6)
        w = {"neg_ter": 0.3, "noise": 0.7}
        base = rerank(lists, w)
        for scale in (0.01, 5.0, 1234.0):
            assert rerank(lists, {k: v * scale for k, v in w.items()}) == base

    def test_grid_oracle_equivalence(self):
        # every grid point: rerank must agree with a direct argmax
        lists, refs = synthetic_problem(4)
        grid = np.linspace(-1.5, 1.5, 7)
        for w0 in grid:
            for w1 in grid:
                weights = {"neg_ter": float(w0), "noise": float(w1)}
                got = rerank(lists, weights)
                for nbest, pick in zip(lists, got):
                    scores = [
                        w0 * e.feature("neg_ter") + w1 * e.feature("noise")
                        for e in nbest.entries
                    ]
                    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
                    assert pick == nbest.entries[best].tokens

    def test_feature_mismatch_raises(self):
        lists = [NBestList(sentence_id=0, entries=(entry(("a",), m=-1.0),))]
        with pytest.raises(TunerConfigError):
            rerank(lists, {"m": 1.0, "ghost": 0.5})
        with pytest.raises(TunerConfigError):
            rerank(lists, {"other": 1.0})


class TestTuneOnLists:
    def test_informative_feature_wins(self):
        lists, refs = synthetic_problem(20)
        cfg = TuneConfig(outer_iterations=2, inner_epochs=15, seed=0)
        weights = tune_on_lists(lists, refs, cfg)
        picks = rerank(lists, weights)
        zero_ter = sum(1 for pick, ref in zip(picks, refs) if pick == ref)
        assert zero_ter == len(refs)
        assert rerank_corpus_ter(lists, weights, refs) == 0.0

    def test_matches_grid_search_oracle(self):
        lists, refs = synthetic_problem(12, seed=9)
        cfg = TuneConfig(outer_iterations=2, inner_epochs=15, seed=1)
        weights = tune_on_lists(lists, refs, cfg)
        tuned = rerank_corpus_ter(lists, weights, refs)
        oracle = grid_best_ter(lists, refs, ["neg_ter", "noise"])
        assert tuned <= oracle + 1e-9

    def test_never_worse_than_initial(self):
        for seed in range(5):
            lists, refs = synthetic_problem(10, seed=seed)
            initial = {"neg_ter": 0.5, "noise": 0.5}
            cfg = TuneConfig(outer_iterations=1, inner_epochs=3, seed=seed)
            weights = tune_on_lists(lists, refs, cfg, initial=initial)
            assert rerank_corpus_ter(lists, weights, refs) <= rerank_corpus_ter(
                lists, initial, refs
            )

    def test_single_feature_keeps_original_ranking(self):
        refs = [("a", "b"), ("c",)]
        lists = [
            NBestList(
                sentence_id=0,
                entries=(entry(("a", "b"), m=-1.0), entry(("a", "x"), m=-2.0)),
            ),
            NBestList(
                sentence_id=1,
                entries=(entry(("c",), m=-0.5), entry(("d",), m=-0.9)),
            ),
        ]
        cfg = TuneConfig(outer_iterations=1, inner_epochs=2, seed=0)
        weights = tune_on_lists(lists, refs, cfg)
        assert weights["m"] > 0
        assert rerank(lists, weights) == [("a", "b"), ("c",)]

    def test_deterministic(self):
        lists, refs = synthetic_problem(8, seed=2)
        cfg = TuneConfig(outer_iterations=2, inner_epochs=5, seed=42)
        a = tune_on_lists(lists, refs, cfg)
        b = tune_on_lists(lists, refs, cfg)
        assert a == b

    def test_validation(self):
        lists, refs = synthetic_problem(2)
        with pytest.raises(ValueError):
            tune_on_lists([], [], TuneConfig())
        with pytest.raises(ValueError):
            tune_on_lists(lists, refs[:1], TuneConfig())
        with pytest.raises(ValueError):
            TuneConfig(outer_iterations=0)
        with pytest.raises(ValueError):
            TuneConfig(mira_c=0.0)


class TestMiraEpochs:
    def test_update_moves_toward_informative_feature(self):
        lists, refs = synthetic_problem(20, seed=3)
        initial = {"neg_ter": 0.5, "noise": 0.5}
        cfg = TuneConfig(inner_epochs=10, mira_c=0.05)
        rng = np.random.default_rng(0)
        out = mira_epochs(lists, refs, initial, cfg, rng)
        # relative mass must shift toward the feature aligned with low TER
        assert out["neg_ter"] - out["noise"] > initial["neg_ter"] - initial["noise"]

    def test_no_update_when_hope_equals_fear(self):
        # a single hypothesis per sentence: hope == fear, weights unchanged
        refs = [("a",)]
        lists = [NBestList(sentence_id=0, entries=(entry(("a",), m=-1.0),))]
        cfg = TuneConfig(inner_epochs=4)
        out = mira_epochs(lists, refs, {"m": 0.25}, cfg, np.random.default_rng(0))
        assert out == {"m": 0.25}


class TestTuneEndToEnd:
    class _Ctx:
        """Stub whose row depends on the token just consumed, so hypotheses
        terminate naturally instead of rewarding repetition under
        length-normalized scores."""

        def __init__(self, vocab, rows, default):
            self.tgt_vocab = vocab
            self.rows = {k: np.asarray(v, dtype=float) for k, v in rows.items()}
            self.default = np.asarray(default, dtype=float)

        def start(self, input_ids):
            return None

        def step(self, state, token):
            return self.rows.get(token, self.default), None

    def _scenario(self):
        vocab = Vocab(["good", "bad"])
        g, b, e = vocab.id("good"), vocab.id("bad"), Vocab.EOS

        def row(**scores):
            r = np.full(len(vocab), -6.0)
            for key, val in scores.items():
                r[{"g": g, "b": b, "e": e}[key]] = val
            return r

        helpful = self._Ctx(
            vocab,
            {Vocab.BOS: row(g=-0.3, b=-1.0, e=-2.0), g: row(e=-0.1), b: row(e=-0.1)},
            row(),
        )
        harmful = self._Ctx(
            vocab,
            {Vocab.BOS: row(b=-0.2, g=-1.3, e=-2.0), g: row(e=-0.1), b: row(e=-0.1)},
            row(),
        )
        dev = [
            Triplet(src=("s",), mt=("good", "bad"), pe=("good",)),
            Triplet(src=("s",), mt=("bad", "good"), pe=("good",)),
        ]

        def factory(triplet):
            ids = tuple(vocab.ids(triplet.mt))
            return (
                [
                    ScorerBinding("helpful", helpful, ids, 0.5),
                    ScorerBinding("harmful", harmful, ids, 0.5),
                ],
                None,
            )

        return dev, factory

    def test_decode_merge_optimize(self):
        from apeforge.decoder import decode

        dev, factory = self._scenario()
        refs = [t.pe for t in dev]
        uniform = {"helpful": 0.5, "harmful": 0.5}
        lists = [
            decode(factory(t)[0], beam=4, sentence_id=i) for i, t in enumerate(dev)
        ]
        # at uniform weights the wrong hypothesis wins outright
        assert [nb.entries[0].tokens for nb in lists] == [("bad",), ("bad",)]
        assert rerank_corpus_ter(lists, uniform, refs) == 100.0

        cfg = TuneConfig(
            outer_iterations=2, inner_epochs=15, seed=0, beam=4, mira_c=0.05
        )
        weights = tune(dev, factory, cfg)
        assert set(weights) == {"helpful", "harmful"}
        assert weights["helpful"] > weights["harmful"]
        assert rerank_corpus_ter(lists, weights, refs) == 0.0

    def test_empty_dev_rejected(self):
        with pytest.raises(ValueError):
            tune([], lambda t: ([], None), TuneConfig())

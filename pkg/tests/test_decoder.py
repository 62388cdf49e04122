"""Ensemble beam search, copy-bias feature, and n-best file handling."""

import numpy as np
import pytest

from apeforge.corpus import Vocab
from apeforge.decoder import (
    AssemblyError,
    NBestEntry,
    NBestList,
    NBestParseError,
    NmtScorer,
    PepFeature,
    ScorerBinding,
    assemble,
    decode,
    parse_decoder_config,
    pep_vector,
    read_nbest,
    write_nbest,
)

from conftest import copy_task_pairs
from helpers import beam_search_single

EOS = Vocab.EOS


class TableScorer:
    """Stateless stub returning the same log-score row at every step."""

    def __init__(self, vocab, row):
        self.tgt_vocab = vocab
        self.row = np.asarray(row, dtype=float)

    def start(self, input_ids):
        return None

    def step(self, state, token):
        return self.row, None


class ContextScorer:
    """Stub whose row depends on the token just consumed."""

    def __init__(self, vocab, rows, default):
        self.tgt_vocab = vocab
        self.rows = {k: np.asarray(v, dtype=float) for k, v in rows.items()}
        self.default = np.asarray(default, dtype=float)

    def start(self, input_ids):
        return None

    def step(self, state, token):
        return self.rows.get(token, self.default), None


def stub_vocab():
    return Vocab(["u", "v"])


def stub_row(vocab, eos=-3.0, u=-1.0, v=-2.0, other=-10.0):
    row = np.full(len(vocab), other)
    row[EOS] = eos
    row[vocab.id("u")] = u
    row[vocab.id("v")] = v
    return row


class TestPepVector:
    def test_direct_rule(self):
        vocab = Vocab(["der", "das", "Haus", "ist"])
        vec = pep_vector(("der", "Haus"), vocab)
        assert vec[vocab.id("der")] == 0.0
        assert vec[vocab.id("Haus")] == 0.0
        assert vec[EOS] == 0.0
        assert vec[vocab.id("das")] == -1.0
        assert vec[vocab.id("ist")] == -1.0
        assert vec[Vocab.PAD] == -1.0

    def test_empty_input_all_minus_one_except_eos(self):
        vocab = Vocab(["a", "b"])
        vec = pep_vector((), vocab)
        expected = np.full(len(vocab), -1.0)
        expected[EOS] = 0.0
        np.testing.assert_array_equal(vec, expected)

    def test_full_vocab_input_all_zero(self):
        vocab = Vocab(["a", "b", "c"])
        vec = pep_vector(tuple(vocab.tokens), vocab)
        np.testing.assert_array_equal(vec, np.zeros(len(vocab)))

    def test_entries_binary(self):
        vocab = Vocab(["a", "b", "c", "d"])
        vec = pep_vector(("b", "d"), vocab)
        assert set(vec.tolist()) <= {0.0, -1.0}

    def test_feature_vector_matches_function(self):
        vocab = Vocab(["a", "b", "c"])
        feat = PepFeature.from_units(("a", "c"), vocab, weight=2.0)
        np.testing.assert_array_equal(
            feat.vector(len(vocab)), pep_vector(("a", "c"), vocab)
        )


class TestAssembly:
    def test_requires_bindings(self):
        with pytest.raises(AssemblyError):
            assemble([])

    def test_vocab_mismatch(self):
        a = TableScorer(Vocab(["u"]), [0.0] * 5)
        b = TableScorer(Vocab(["w"]), [0.0] * 5)
        with pytest.raises(AssemblyError, match="vocabulary"):
            assemble(
                [
                    ScorerBinding("one", a, (4,), 1.0),
                    ScorerBinding("two", b, (4,), 1.0),
                ]
            )

    def test_duplicate_names(self):
        vocab = stub_vocab()
        s = TableScorer(vocab, stub_row(vocab))
        with pytest.raises(AssemblyError, match="unique"):
            assemble(
                [
                    ScorerBinding("x", s, (4,), 1.0),
                    ScorerBinding("x", s, (4,), 1.0),
                ]
            )

    def test_reserved_name(self):
        vocab = stub_vocab()
        s = TableScorer(vocab, stub_row(vocab))
        with pytest.raises(AssemblyError, match="reserved"):
            assemble([ScorerBinding("pep", s, (4,), 1.0)])


class TestBeamSearch:
    def test_hand_traced_truncation(self):
        # eos is never competitive within the 3x-input cap, so the search
        # ends with unfinished hypotheses and the truncation flag
        vocab = stub_vocab()
        scorer = TableScorer(vocab, stub_row(vocab, eos=-100.0))
        binding = ScorerBinding("m", scorer, (vocab.id("u"),), 1.0)
        nbest = decode([binding], beam=2, length_norm=True)
        assert nbest.truncated
        texts = [e.tokens for e in nbest.entries]
        assert texts == [("u", "u", "u"), ("v", "u", "u")]
        assert nbest.entries[0].combined == pytest.approx(-1.0)
        assert nbest.entries[1].combined == pytest.approx(-4.0 / 3.0)

    def test_hand_traced_completion(self):
        vocab = stub_vocab()
        scorer = TableScorer(vocab, stub_row(vocab, eos=-1.5, u=-1.0, v=-5.0))
        binding = ScorerBinding("m", scorer, (vocab.id("u"),), 1.0)
        nbest = decode([binding], beam=2, length_norm=False)
        assert not nbest.truncated
        # best finished: "u" then eos at -2.5 beats eos-only at -1.5? no:
        # raw scores, eos-only = -1.5 is highest
        assert nbest.entries[0].tokens == ()
        assert nbest.entries[0].combined == pytest.approx(-1.5)

    def test_length_norm_changes_ranking(self):
        # raw: eos-only (-1.5) beats every extension; per-token averaging
        # rewards appending "u" (-1.0 < running mean), so the longest
        # completed hypothesis within the cap wins
        vocab = stub_vocab()
        scorer = TableScorer(vocab, stub_row(vocab, eos=-1.5, u=-1.0, v=-5.0))
        binding = ScorerBinding("m", scorer, (vocab.id("u"),), 1.0)
        raw = decode([binding], beam=2, length_norm=False)
        normed = decode([binding], beam=2, length_norm=True)
        assert raw.entries[0].tokens == ()
        assert normed.entries[0].tokens == ("u", "u")
        assert normed.entries[0].combined == pytest.approx(-3.5 / 3.0)
        assert normed.entries[1].tokens == ("u",)
        assert normed.entries[1].combined == pytest.approx(-1.25)

    def test_ensemble_degeneracy_halved_weights(self):
        vocab = stub_vocab()
        scorer = TableScorer(vocab, stub_row(vocab))
        one = decode(
            [ScorerBinding("m", scorer, (4,), 1.0)], beam=3, length_norm=True
        )
        two = decode(
            [
                ScorerBinding("m1", scorer, (4,), 0.5),
                ScorerBinding("m2", scorer, (4,), 0.5),
            ],
            beam=3,
            length_norm=True,
        )
        assert [e.tokens for e in one.entries] == [e.tokens for e in two.entries]
        for a, b in zip(one.entries, two.entries):
            assert b.combined == pytest.approx(a.combined, abs=1e-9)
            # each duplicated feature carries the full single-model score
            assert b.feature("m1") == pytest.approx(a.feature("m"), abs=1e-9)
            assert b.feature("m2") == pytest.approx(a.feature("m"), abs=1e-9)

    def test_positive_weight_scaling_preserves_ranking(self):
        vocab = stub_vocab()
        rows = {
            Vocab.BOS: stub_row(vocab, eos=-9.0, u=-1.0, v=-1.6),
            vocab.id("u"): stub_row(vocab, eos=-0.3, u=-2.0, v=-0.9),
            vocab.id("v"): stub_row(vocab, eos=-0.5, u=-0.8, v=-2.2),
        }
        scorer = ContextScorer(vocab, rows, stub_row(vocab))
        for scale in (0.25, 1.0, 3.7):
            nbest = decode(
                [ScorerBinding("m", scorer, (4, 4, 4), scale)],
                beam=4,
            )
            if scale == 0.25:
                baseline = [e.tokens for e in nbest.entries]
            else:
                assert [e.tokens for e in nbest.entries] == baseline

    def test_pep_high_weight_restricts_output(self):
        vocab = Vocab(["a", "b", "c", "d"])
        row = np.full(len(vocab), -8.0)
        row[vocab.id("c")] = -0.1  # strongly prefers a forbidden token
        row[vocab.id("a")] = -2.0
        row[EOS] = -3.0
        scorer = TableScorer(vocab, row)
        binding = ScorerBinding("m", scorer, (vocab.id("a"),), 1.0)
        pep = PepFeature.from_units(("a",), vocab, weight=1e6)
        nbest = decode([binding], pep=pep, beam=3)
        allowed = {"a"}
        for entry in nbest.entries:
            assert set(entry.tokens) <= allowed
        # without the feature, greedy decoding happily emits the forbidden token
        free = decode([binding], beam=1)
        assert "c" in free.entries[0].tokens

    def test_features_recombine_to_combined(self):
        vocab = stub_vocab()
        s1 = TableScorer(vocab, stub_row(vocab, eos=-2.0, u=-1.0, v=-1.2))
        s2 = TableScorer(vocab, stub_row(vocab, eos=-1.0, u=-2.5, v=-0.7))
        bindings = [
            ScorerBinding("p", s1, (4,), 0.7),
            ScorerBinding("q", s2, (4, 5), 0.4),
        ]
        pep = PepFeature.from_units(("u",), vocab, weight=0.3)
        for length_norm in (False, True):
            nbest = decode(bindings, pep=pep, beam=4, length_norm=length_norm)
            weights = {"p": 0.7, "q": 0.4, "pep": 0.3}
            for entry in nbest.entries:
                recombined = sum(weights[n] * v for n, v in entry.features)
                assert recombined == pytest.approx(entry.combined, abs=1e-4)

    def test_entries_sorted_descending(self):
        vocab = stub_vocab()
        scorer = TableScorer(vocab, stub_row(vocab))
        nbest = decode([ScorerBinding("m", scorer, (4, 4), 1.0)], beam=5)
        scores = [e.combined for e in nbest.entries]
        assert scores == sorted(scores, reverse=True)
        assert len(nbest.entries) <= 5

    def test_deterministic(self):
        vocab = stub_vocab()
        scorer = TableScorer(vocab, stub_row(vocab))
        binding = ScorerBinding("m", scorer, (4, 5), 1.0)
        a = decode([binding], beam=4)
        b = decode([binding], beam=4)
        assert a == b

    def test_beam_validation(self):
        vocab = stub_vocab()
        scorer = TableScorer(vocab, stub_row(vocab))
        with pytest.raises(ValueError):
            decode([ScorerBinding("m", scorer, (4,), 1.0)], beam=0)


class TestAgainstReferenceBeam:
    def test_single_binding_matches_reference(self, copy_task):
        vocab, pairs, result, _ = copy_task
        scorer = NmtScorer(result.model)
        for src, _ in pairs[:6]:
            expected = beam_search_single(result.model, src, beam=4)
            nbest = decode(
                [ScorerBinding("nmt", scorer, tuple(src), 1.0)],
                beam=4,
                length_norm=True,
            )
            got = [(e.tokens, e.combined) for e in nbest.entries]
            assert [t for t, _ in got] == [t for t, _ in expected]
            for (_, a), (_, b) in zip(got, expected):
                assert a == pytest.approx(b, abs=1e-9)

    def test_trained_model_copies_via_beam(self, copy_task):
        vocab, pairs, result, _ = copy_task
        scorer = NmtScorer(result.model)
        src = pairs[0][0]
        nbest = decode([ScorerBinding("nmt", scorer, tuple(src), 1.0)], beam=4)
        assert nbest.entries[0].tokens == vocab.words(src)


class TestNBestFiles:
    def sample(self):
        return [
            NBestList(
                sentence_id=0,
                entries=(
                    NBestEntry(("der", "Haus"), (("m", -1.25), ("pep", 0.0)), -1.25),
                    NBestEntry((), (("m", -2.0), ("pep", -1.0)), -2.3),
                ),
            ),
            NBestList(
                sentence_id=1,
                entries=(
                    NBestEntry(("ok",), (("m", -0.5), ("pep", 0.0)), -0.5),
                ),
            ),
        ]

    def test_single_entry_format(self, tmp_path):
        path = tmp_path / "n.best"
        write_nbest(
            [
                NBestList(
                    sentence_id=3,
                    entries=(
                        NBestEntry(("a", "b"), (("m", -1.5), ("pep", 0.0)), -1.5),
                    ),
                )
            ],
            path,
        )
        assert (
            path.read_text()
            == "3 ||| a b ||| m= -1.500000 pep= 0.000000 ||| -1.500000\n"
        )

    def test_round_trip(self, tmp_path):
        path = tmp_path / "n.best"
        write_nbest(self.sample(), path)
        lists = read_nbest(path)
        assert [l.sentence_id for l in lists] == [0, 1]
        assert lists[0].entries == self.sample()[0].entries
        assert lists[1].entries == self.sample()[1].entries

    def test_write_read_write_stable(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        write_nbest(self.sample(), a)
        write_nbest(read_nbest(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_missing_separator(self, tmp_path):
        path = tmp_path / "bad.best"
        path.write_text("0 ||| a b ||| m= -1.0\n")
        with pytest.raises(NBestParseError, match="line 1"):
            read_nbest(path)

    def test_bad_score(self, tmp_path):
        path = tmp_path / "bad.best"
        path.write_text("0 ||| a ||| m= -1.0 ||| eek\n")
        with pytest.raises(NBestParseError, match="line 1"):
            read_nbest(path)

    def test_error_names_later_line(self, tmp_path):
        path = tmp_path / "bad.best"
        path.write_text(
            "0 ||| a ||| m= -1.000000 ||| -1.000000\nnot a record\n"
        )
        with pytest.raises(NBestParseError, match="line 2"):
            read_nbest(path)


class TestConfigParsing:
    def test_full_config(self):
        cfg = parse_decoder_config(
            "# ensemble\n"
            "scorer mt2pe model=/m/a.bin input=mt weight=0.8\n"
            "scorer src2pe model=/m/b.bin input=src weight=0.2\n"
            "feature pep input=mt weight=0.25\n"
        )
        assert cfg.scorers == (
            ("mt2pe", "/m/a.bin", "mt", 0.8),
            ("src2pe", "/m/b.bin", "src", 0.2),
        )
        assert cfg.pep == ("mt", 0.25)

    def test_union_pep(self):
        cfg = parse_decoder_config(
            "scorer m model=x input=mt weight=1\nfeature pep input=union weight=1\n"
        )
        assert cfg.pep == ("union", 1.0)

    def test_no_scorers(self):
        with pytest.raises(AssemblyError, match="no scorers"):
            parse_decoder_config("feature pep input=mt weight=1\n")

    def test_unknown_directive(self):
        with pytest.raises(AssemblyError, match="line 1"):
            parse_decoder_config("model foo\n")

    def test_bad_input_selector(self):
        with pytest.raises(AssemblyError):
            parse_decoder_config("scorer m model=x input=ref weight=1\n")

    def test_duplicate_pep(self):
        with pytest.raises(AssemblyError, match="duplicate"):
            parse_decoder_config(
                "scorer m model=x input=mt weight=1\n"
                "feature pep input=mt weight=1\n"
                "feature pep input=mt weight=2\n"
            )

    def test_missing_field(self):
        with pytest.raises(AssemblyError, match="line 1"):
            parse_decoder_config("scorer m model=x weight=1\n")

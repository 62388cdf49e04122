"""Command-line surface of the toolkit.

Every subcommand is a thin wrapper over one library call; file formats are
one whitespace-tokenized sentence per line, with triplet corpora stored as
PREFIX.src / PREFIX.mt / PREFIX.pe.
"""

from __future__ import annotations

import os
import shlex
from collections import Counter
from pathlib import Path

import click
import numpy as np

from .corpus import (
    Vocab,
    mix as mix_corpora,
    read_mix_spec,
    read_sentences,
    read_triplets,
    wellformed_filter,
    write_sentences,
    write_triplets,
)
from .decoder import (
    DecoderConfig,
    NmtScorer,
    PepFeature,
    ScorerBinding,
    decode as beam_decode,
    parse_decoder_config,
    write_nbest,
)
from .metrics import bleu, corpus_ter, ter
from .ngram_lm import (
    corpus_cross_entropy,
    read_arpa,
    select_by_xent,
    train_lm,
    write_arpa,
)
from .nmt import TrainConfig, gradient_check, init_model, train
from .nmt import checkpoint as ckpt
from .pipeline import (
    NoiseSpec,
    PipelineConfigError,
    Stage,
    roundtrip_generate,
    run as run_stages,
    synth_corrupt,
)
from .report import evaluate_systems, format_table, format_tsv
from .subword import apply_bpe, learn_bpe, load_model, revert_bpe, save_model
from .triplet_select import (
    SelectionConfig,
    knn_select,
    outlier_filter,
    report_stats,
)
from .tuner import TuneConfig, tune


@click.group()
def cli():
    """Post-editing toolkit: data synthesis, filtering, toy attentional
    translation models, ensemble beam decoding and weight tuning."""


def main():
    cli(prog_name="apeforge")


# ---------------------------------------------------------------- corpus


@cli.group()
def corpus():
    """Corpus hygiene and combination."""


@corpus.command("filter-wellformed")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def corpus_filter(in_path, out_path):
    """Keep only sentences passing the well-formedness rules."""
    sentences = read_sentences(in_path)
    kept = wellformed_filter(sentences)
    write_sentences(out_path, kept)
    click.echo(f"kept {len(kept)} of {len(sentences)} sentences")


@corpus.command("mix")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_prefix", required=True)
def corpus_mix(spec_path, out_prefix):
    """Concatenate triplet corpora with integer oversampling factors.

    The --spec file holds one `<corpus-prefix> <factor>` pair per line.
    """
    parts = read_mix_spec(spec_path)
    corpora = {prefix: read_triplets(prefix) for prefix, _ in parts}
    mixed = mix_corpora(parts, corpora)
    write_triplets(out_prefix, mixed)
    click.echo(f"wrote {len(mixed)} triplets to {out_prefix}.{{src,mt,pe}}")


# ------------------------------------------------------------------- bpe


@cli.group()
def bpe():
    """Subword segmentation models."""


@bpe.command("learn")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--merges", required=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def bpe_learn(in_path, merges, out_path):
    model = learn_bpe(read_sentences(in_path), merges)
    save_model(model, out_path)
    click.echo(f"learned {len(model.merges)} merges")


@bpe.command("apply")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def bpe_apply(model_path, in_path, out_path):
    model = load_model(model_path)
    unknown = Counter()
    segmented = [apply_bpe(model, s, unknown) for s in read_sentences(in_path)]
    write_sentences(out_path, segmented)
    if unknown:
        total = sum(unknown.values())
        click.echo(f"warning: {total} characters outside the model inventory", err=True)


@bpe.command("revert")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def bpe_revert(in_path, out_path):
    write_sentences(out_path, [revert_bpe(s) for s in read_sentences(in_path)])


# ------------------------------------------------------------------ eval


@cli.command("eval")
@click.option("--metric", type=click.Choice(["ter", "bleu"]), required=True)
@click.option("--hyp", "hyp_path", required=True, type=click.Path(exists=True))
@click.option("--ref", "ref_path", required=True, type=click.Path(exists=True))
@click.option("--per-sentence", is_flag=True)
def eval_cmd(metric, hyp_path, ref_path, per_sentence):
    """Score a hypothesis file against a reference file.

    Corpus mode prints one number. Per-sentence mode (TER only) prints
    `index<TAB>score<TAB>ins,del,sub,shift` per line.
    """
    hyps = read_sentences(hyp_path)
    refs = read_sentences(ref_path)
    if len(hyps) != len(refs):
        raise click.ClickException(
            f"{len(hyps)} hypotheses vs {len(refs)} references"
        )
    if per_sentence:
        if metric != "ter":
            raise click.UsageError("--per-sentence requires --metric ter")
        for i, (hyp, ref) in enumerate(zip(hyps, refs)):
            a = ter(hyp, ref)
            counts = f"{a.insertions},{a.deletions},{a.substitutions},{a.shifts}"
            click.echo(f"{i}\t{a.ter:.2f}\t{counts}")
        return
    if metric == "ter":
        score = corpus_ter(list(zip(hyps, refs)))
    else:
        score = bleu(hyps, refs)
    click.echo(f"{score:.2f}")


# -------------------------------------------------------------------- lm


@cli.group()
def lm():
    """Count-based language models with modified interpolated smoothing."""


@lm.command("train")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--order", default=3, show_default=True, type=int)
@click.option(
    "--sample-tokens",
    type=int,
    default=None,
    help="Subsample the corpus to about this many tokens before training, "
    "to equalize sizes between models.",
)
@click.option("--sample-seed", default=0, show_default=True, type=int)
def lm_train(in_path, out_path, order, sample_tokens, sample_seed):
    sentences = read_sentences(in_path)
    if sample_tokens is not None:
        rng = np.random.default_rng(sample_seed)
        order_ix = rng.permutation(len(sentences))
        taken, total = [], 0
        for i in order_ix:
            if total >= sample_tokens:
                break
            taken.append(sentences[int(i)])
            total += len(sentences[int(i)])
        sentences = taken
    model = train_lm(sentences, order=order)
    write_arpa(model, out_path)
    tokens = sum(len(s) for s in sentences)
    click.echo(f"trained {order}-gram model on {len(sentences)} sentences ({tokens} tokens)")


@lm.command("xent")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
def lm_xent(model_path, in_path):
    """Per-token cross-entropy of the corpus under the model, in bits."""
    model = read_arpa(model_path)
    click.echo(f"{corpus_cross_entropy(model, read_sentences(in_path)):.4f}")


# ---------------------------------------------------------------- select


@cli.group()
def select():
    """Data selection: cross-entropy difference and statistics matching."""


def _parse_keep(value: str):
    if "." in value:
        return float(value)
    return int(value)


@select.command("xent")
@click.option("--in-domain", "in_lm_path", required=True, type=click.Path(exists=True))
@click.option("--out-domain", "out_lm_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--keep", required=True, help="Line count, or a fraction in (0, 1].")
@click.option("--out", "out_path", type=click.Path(), default=None)
def select_xent(in_lm_path, out_lm_path, corpus_path, keep, out_path):
    """Keep the lines scored most in-domain by cross-entropy difference."""
    in_lm = read_arpa(in_lm_path)
    out_lm = read_arpa(out_lm_path)
    sentences = read_sentences(corpus_path)
    indices = select_by_xent(in_lm, out_lm, sentences, _parse_keep(keep))
    selected = [sentences[i] for i in indices]
    if out_path is None:
        for s in selected:
            click.echo(" ".join(s))
    else:
        write_sentences(out_path, selected)
        click.echo(f"kept {len(selected)} of {len(sentences)} lines")


@select.command("ter")
@click.option("--pool", "pool_prefix", required=True)
@click.option("--reference", "ref_prefix", required=True)
@click.option("--n", "n", required=True, type=int)
@click.option("--no-normalize", is_flag=True)
@click.option("--outlier-margin", default=0.10, show_default=True, type=float)
@click.option("--traversal-cap", default=100, show_default=True, type=int)
@click.option("--out", "out_prefix", required=True)
@click.option("--report", "report_path", required=True, type=click.Path())
def select_ter(
    pool_prefix,
    ref_prefix,
    n,
    no_normalize,
    outlier_margin,
    traversal_cap,
    out_prefix,
    report_path,
):
    """Pick pool triplets whose edit statistics match the reference set."""
    pool = read_triplets(pool_prefix)
    reference = read_triplets(ref_prefix)
    filtered = outlier_filter(pool, reference, margin=outlier_margin)
    cfg = SelectionConfig(
        n=n, traversal_cap=traversal_cap, normalize=not no_normalize
    )
    selected = knn_select(filtered, reference, cfg)
    write_triplets(out_prefix, selected)
    stats = report_stats(selected)
    Path(report_path).write_text("\n".join(stats.lines()) + "\n", encoding="utf-8")
    click.echo(
        f"selected {len(selected)} of {len(pool)} triplets "
        f"({len(pool) - len(filtered)} outliers dropped)"
    )


# ------------------------------------------------------------------- nmt


@cli.group()
def nmt():
    """Attentional encoder-decoder models."""


_TRAIN_INT_KEYS = {
    "embedding_dim",
    "hidden_dim",
    "init_seed",
    "batch_size",
    "max_sentence_length",
    "epochs",
    "shuffle_seed",
    "checkpoint_every",
    "max_iterations",
    "log_every",
}
_TRAIN_FLOAT_KEYS = {"rho", "epsilon", "clip_norm"}
_TRAIN_PATH_KEYS = {"fine_tune_from"}


def _parse_train_config(path):
    """`key value` lines; '#' comments. Keys split into model size
    (embedding_dim, hidden_dim, init_seed) and the training schedule."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 2:
            raise click.ClickException(
                f"{path}: line {lineno}: expected 'key value'"
            )
        key, value = fields
        if key in _TRAIN_INT_KEYS:
            values[key] = int(value)
        elif key in _TRAIN_FLOAT_KEYS:
            values[key] = float(value)
        elif key in _TRAIN_PATH_KEYS:
            values[key] = value
        else:
            raise click.ClickException(f"{path}: line {lineno}: unknown key {key!r}")
    model_kw = {
        "embedding_dim": values.pop("embedding_dim", 32),
        "hidden_dim": values.pop("hidden_dim", 32),
        "seed": values.pop("init_seed", 0),
    }
    return model_kw, TrainConfig(**values)


@nmt.command("train")
@click.option("--src", "src_path", required=True, type=click.Path(exists=True))
@click.option("--tgt", "tgt_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def nmt_train(src_path, tgt_path, config_path, out_dir):
    """Train on parallel line-aligned files; writes model.bin in --out."""
    model_kw, cfg = _parse_train_config(config_path)
    src_corpus = read_sentences(src_path)
    tgt_corpus = read_sentences(tgt_path)
    if len(src_corpus) != len(tgt_corpus):
        raise click.ClickException(
            f"{len(src_corpus)} source vs {len(tgt_corpus)} target lines"
        )
    src_vocab = Vocab.from_corpus(src_corpus)
    tgt_vocab = Vocab.from_corpus(tgt_corpus)
    model = init_model(src_vocab, tgt_vocab, **model_kw)
    pairs = [
        (src_vocab.ids(s), tgt_vocab.ids(t))
        for s, t in zip(src_corpus, tgt_corpus)
    ]
    result = train(model, pairs, cfg, out_dir=out_dir)
    final = result.log[-1].train_loss if result.log else float("nan")
    click.echo(
        f"trained {result.iterations} iterations, final loss {final:.4f}, "
        f"{result.skipped_pairs} overlong pairs skipped"
    )


@nmt.command("grad-check")
@click.option("--embedding-dim", default=8, show_default=True, type=int)
@click.option("--hidden-dim", default=6, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--tolerance", default=1e-3, show_default=True, type=float)
def nmt_grad_check(embedding_dim, hidden_dim, seed, tolerance):
    """Check analytic gradients against finite differences on a random model."""
    rng = np.random.default_rng(seed)
    src_vocab = Vocab([f"s{i}" for i in range(5)])
    tgt_vocab = Vocab([f"t{i}" for i in range(4)])
    model = init_model(
        src_vocab, tgt_vocab, embedding_dim=embedding_dim,
        hidden_dim=hidden_dim, seed=seed,
    )
    src = [int(rng.integers(4, len(src_vocab))) for _ in range(4)]
    tgt = [int(rng.integers(4, len(tgt_vocab))) for _ in range(3)]
    report = gradient_check(model, src, tgt, tolerance=tolerance, seed=seed)
    status = "PASS" if report.passed else "FAIL"
    click.echo(
        f"{status}: max relative error {report.max_rel_error:.3e} "
        f"(tolerance {report.tolerance:.0e})"
    )
    if not report.passed:
        for entry in report.worst(5):
            click.echo(f"  {entry}", err=True)
        raise SystemExit(1)


# ---------------------------------------------------------------- decode


def _read_weights(path) -> dict[str, float]:
    weights = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise click.ClickException(
                f"{path}: line {lineno}: expected 'name<TAB>value'"
            )
        weights[fields[0]] = float(fields[1])
    return weights


def _apply_weights(config: DecoderConfig, weights: dict[str, float]) -> DecoderConfig:
    scorers = tuple(
        (name, path, sel, weights.get(name, w))
        for name, path, sel, w in config.scorers
    )
    pep = config.pep
    if pep is not None:
        pep = (pep[0], weights.get("pep", pep[1]))
    return DecoderConfig(scorers=scorers, pep=pep)


class _Ensemble:
    """Decoder config resolved against its model files."""

    def __init__(self, config: DecoderConfig):
        self.config = config
        self.models = {}
        for name, model_path, _sel, _w in config.scorers:
            model = ckpt.load(model_path)
            self.models[name] = (model, NmtScorer(model))
        self.tgt_vocab = next(iter(self.models.values()))[0].tgt_vocab

    def needs_src(self) -> bool:
        if any(sel == "src" for _, _, sel, _ in self.config.scorers):
            return True
        return self.config.pep is not None and self.config.pep[0] == "union"

    def bindings_for(self, mt, src):
        bindings = []
        for name, _path, sel, weight in self.config.scorers:
            sent = mt if sel == "mt" else src
            model, scorer = self.models[name]
            bindings.append(
                ScorerBinding(name, scorer, tuple(model.src_vocab.ids(sent)), weight)
            )
        pep = None
        if self.config.pep is not None:
            sel, weight = self.config.pep
            units = tuple(mt)
            if sel == "union":
                units = units + tuple(src)
            pep = PepFeature.from_units(units, self.tgt_vocab, weight)
        return bindings, pep


@cli.command("decode")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--mt", "mt_path", required=True, type=click.Path(exists=True))
@click.option("--src", "src_path", type=click.Path(exists=True), default=None)
@click.option("--nbest", default=1, show_default=True, type=int)
@click.option("--beam", type=int, default=None, help="Beam width; defaults to --nbest.")
@click.option("--weights", "weights_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--best-out", "best_path", type=click.Path(), default=None,
              help="Also write the single best hypothesis per line here.")
def decode_cmd(config_path, mt_path, src_path, nbest, beam, weights_path, out_path, best_path):
    """Beam-decode an ensemble declared in a config file.

    The config declares `scorer <name> model=<path> input=mt|src weight=<w>`
    lines and at most one `feature pep input=mt|union weight=<w>` line. A
    weights file from the tuner overrides the declared weights.
    """
    config = parse_decoder_config(Path(config_path).read_text(encoding="utf-8"))
    if weights_path is not None:
        config = _apply_weights(config, _read_weights(weights_path))
    ensemble = _Ensemble(config)
    mt_corpus = read_sentences(mt_path)
    src_corpus = None
    if src_path is not None:
        src_corpus = read_sentences(src_path)
        if len(src_corpus) != len(mt_corpus):
            raise click.ClickException(
                f"{len(mt_corpus)} mt vs {len(src_corpus)} src lines"
            )
    elif ensemble.needs_src():
        raise click.UsageError("config references src input but --src not given")

    width = beam if beam is not None else nbest
    width = max(width, nbest)
    lists = []
    truncated = 0
    for i, mt in enumerate(mt_corpus):
        src = src_corpus[i] if src_corpus is not None else ()
        bindings, pep = ensemble.bindings_for(mt, src)
        nb = beam_decode(bindings, pep=pep, beam=width, sentence_id=i)
        truncated += nb.truncated
        if len(nb.entries) > nbest:
            nb = type(nb)(
                sentence_id=nb.sentence_id,
                entries=nb.entries[:nbest],
                truncated=nb.truncated,
            )
        lists.append(nb)
    write_nbest(lists, out_path)
    if best_path is not None:
        write_sentences(best_path, [nb.entries[0].tokens for nb in lists])
    msg = f"decoded {len(lists)} sentences"
    if truncated:
        msg += f" ({truncated} truncated)"
    click.echo(msg)


# ------------------------------------------------------------------ tune


@cli.command("tune")
@click.option("--dev", "dev_prefix", required=True)
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--iterations", default=2, show_default=True, type=int)
@click.option("--beam", default=12, show_default=True, type=int)
@click.option("--mira-c", default=0.01, show_default=True, type=float)
@click.option("--inner-epochs", default=15, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def tune_cmd(dev_prefix, config_path, iterations, beam, mira_c, inner_epochs, seed, out_path):
    """Optimize feature weights toward lower TER on a dev triplet set."""
    config = parse_decoder_config(Path(config_path).read_text(encoding="utf-8"))
    ensemble = _Ensemble(config)
    dev = read_triplets(dev_prefix)

    def factory(triplet):
        return ensemble.bindings_for(triplet.mt, triplet.src)

    cfg = TuneConfig(
        outer_iterations=iterations,
        beam=beam,
        mira_c=mira_c,
        inner_epochs=inner_epochs,
        seed=seed,
    )
    weights = tune(dev, factory, cfg)
    lines = [f"{name}\t{weights[name]:.6f}" for name in sorted(weights)]
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    click.echo("\n".join(lines))


# ---------------------------------------------------------------- report


@cli.command("report")
@click.option("--ref", "ref_path", required=True, type=click.Path(exists=True))
@click.option("--mt", "mt_path", required=True, type=click.Path(exists=True))
@click.option(
    "--system",
    "systems",
    multiple=True,
    help="name=FILE; may be repeated.",
)
@click.option("--tsv", is_flag=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def report_cmd(ref_path, mt_path, systems, tsv, out_path):
    """Score table of systems against the reference, baseline included."""
    table = {}
    for item in systems:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise click.UsageError(f"--system expects name=FILE, got {item!r}")
        if name in table:
            raise click.UsageError(f"duplicate system name {name!r}")
        table[name] = read_sentences(path)
    rows = evaluate_systems(table, read_sentences(mt_path), read_sentences(ref_path))
    text = format_tsv(rows) if tsv else format_table(rows)
    if out_path is not None:
        Path(out_path).write_text(text, encoding="utf-8")
    click.echo(text, nl=False)


# ----------------------------------------------------------------- synth


@cli.group()
def synth():
    """Synthetic triplet generation."""


def _read_confusion(path) -> dict[str, tuple[str, ...]]:
    table = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) < 2:
            raise click.ClickException(
                f"{path}: line {lineno}: expected 'token alternative...'"
            )
        table[fields[0]] = tuple(fields[1:])
    return table


@synth.command("corrupt")
@click.option("--pe", "pe_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_prefix", required=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--substitution", default=0.0, show_default=True, type=float)
@click.option("--deletion", default=0.0, show_default=True, type=float)
@click.option("--insertion", default=0.0, show_default=True, type=float)
@click.option("--swap", default=0.0, show_default=True, type=float)
@click.option("--confusion", "confusion_path", type=click.Path(exists=True), default=None)
@click.option("--fillers", default="", help="Comma-separated insertion tokens.")
def synth_corrupt_cmd(
    pe_path, out_prefix, seed, substitution, deletion, insertion, swap,
    confusion_path, fillers,
):
    """Derive noisy (src, mt, pe) triplets from clean text."""
    confusion = _read_confusion(confusion_path) if confusion_path else None
    try:
        spec = NoiseSpec(
            substitution=substitution,
            deletion=deletion,
            insertion=insertion,
            swap=swap,
            confusion=confusion,
            fillers=tuple(t for t in fillers.split(",") if t),
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))
    triplets = synth_corrupt(read_sentences(pe_path), spec, seed)
    write_triplets(out_prefix, triplets)
    pool_ter = corpus_ter([(t.mt, t.pe) for t in triplets])
    click.echo(f"wrote {len(triplets)} triplets, corpus error rate {pool_ter:.2f}")


@synth.command("roundtrip")
@click.option("--mono", "mono_path", required=True, type=click.Path(exists=True))
@click.option("--reverse", "reverse_path", required=True, type=click.Path(exists=True))
@click.option("--forward", "forward_path", required=True, type=click.Path(exists=True))
@click.option("--beam", default=1, show_default=True, type=int)
@click.option("--out", "out_prefix", required=True)
def synth_roundtrip(mono_path, reverse_path, forward_path, beam, out_prefix):
    """Round-trip monolingual text through two models into triplets."""
    mono = read_sentences(mono_path)
    reverse_model = ckpt.load(reverse_path)
    forward_model = ckpt.load(forward_path)
    result = roundtrip_generate(mono, reverse_model, forward_model, beam=beam)
    write_triplets(out_prefix, result.triplets)
    click.echo(f"kept {len(result.triplets)} triplets, dropped {result.dropped}")


# ------------------------------------------------------------------- run


class _chdir:
    def __init__(self, path):
        self.path = path

    def __enter__(self):
        self.prev = os.getcwd()
        os.chdir(self.path)

    def __exit__(self, *exc):
        os.chdir(self.prev)


def _stage_action(args: list[str]):
    def action(ws: Path):
        with _chdir(ws):
            cli.main(args=args, prog_name="apeforge", standalone_mode=False)

    return action


def parse_pipeline_config(text: str, source: str = "<config>"):
    """Line-oriented stage declarations.

    Outside a block: `workspace <dir>` (optional, once). A block is

        stage <name>
          in <file> ...
          out <file> ...
          deps <stage> ...
          cmd <subcommand and arguments>
        end

    with `in`, `out` and `deps` optional and repeatable; `cmd` is required.
    '#' starts a comment. Returns (workspace or None, stages).
    """
    workspace = None
    stages: list[Stage] = []
    current = None

    def fail(lineno, message):
        raise PipelineConfigError(f"{source}: line {lineno}: {message}")

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        directive = fields[0]
        if current is None:
            if directive == "workspace":
                if len(fields) != 2:
                    fail(lineno, "workspace takes one path")
                if workspace is not None:
                    fail(lineno, "duplicate workspace directive")
                workspace = fields[1]
            elif directive == "stage":
                if len(fields) != 2:
                    fail(lineno, "stage takes one name")
                current = {
                    "name": fields[1],
                    "in": [],
                    "out": [],
                    "deps": [],
                    "cmd": None,
                }
            else:
                fail(lineno, f"unknown directive {directive!r}")
            continue
        if directive in ("in", "out", "deps"):
            if len(fields) < 2:
                fail(lineno, f"{directive} needs at least one value")
            current[directive].extend(fields[1:])
        elif directive == "cmd":
            if current["cmd"] is not None:
                fail(lineno, f"stage {current['name']!r} has two cmd lines")
            rest = line.split(None, 1)
            if len(rest) < 2:
                fail(lineno, "cmd needs a command line")
            current["cmd"] = shlex.split(rest[1])
        elif directive == "end":
            if current["cmd"] is None:
                fail(lineno, f"stage {current['name']!r} has no cmd")
            args = current["cmd"]
            if args and args[0] == "apeforge":
                args = args[1:]
            stages.append(
                Stage(
                    name=current["name"],
                    action=_stage_action(args),
                    inputs=tuple(current["in"]),
                    outputs=tuple(current["out"]),
                    deps=tuple(current["deps"]),
                )
            )
            current = None
        else:
            fail(lineno, f"unknown stage directive {directive!r}")
    if current is not None:
        raise PipelineConfigError(
            f"{source}: stage {current['name']!r} not closed with 'end'"
        )
    return workspace, stages


@cli.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def run_cmd(config_path):
    """Execute a declared stage graph inside its workspace.

    The workspace is taken from APEFORGE_WORKSPACE when set, then from the
    config's `workspace` directive (relative to the config file), then the
    config file's own directory.
    """
    config_path = Path(config_path)
    try:
        declared, stages = parse_pipeline_config(
            config_path.read_text(encoding="utf-8"), source=str(config_path)
        )
    except PipelineConfigError as exc:
        raise click.ClickException(str(exc))
    env = os.environ.get("APEFORGE_WORKSPACE")
    if env:
        workspace = Path(env)
    elif declared is not None:
        workspace = config_path.parent / declared
    else:
        workspace = config_path.parent
    report = run_stages(workspace, stages)
    for name in report.executed:
        click.echo(f"ran {name}")
    for name in report.skipped:
        click.echo(f"skipped {name} (unchanged)")


if __name__ == "__main__":
    main()

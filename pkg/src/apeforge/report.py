"""Score tables: every system against the post-edited reference, with the
uncorrected machine output as the built-in baseline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import Sentence
from .metrics import bleu, corpus_ter

BASELINE_NAME = "Uncorrected MT (baseline)"


@dataclass(frozen=True)
class SystemScore:
    name: str
    ter: float
    bleu: float
    ter_delta: float
    bleu_delta: float


def evaluate_systems(
    systems: Mapping[str, Sequence[Sentence]],
    mt_baseline: Sequence[Sentence],
    pe_reference: Sequence[Sentence],
) -> list[SystemScore]:
    """Rows sorted by TER ascending; deltas are row minus baseline."""
    if len(mt_baseline) != len(pe_reference):
        raise ValueError(
            f"baseline has {len(mt_baseline)} sentences, "
            f"reference has {len(pe_reference)}"
        )
    for name, hyps in systems.items():
        if len(hyps) != len(pe_reference):
            raise ValueError(
                f"system {name!r} has {len(hyps)} sentences, "
                f"reference has {len(pe_reference)}"
            )
    base_ter = corpus_ter(list(zip(mt_baseline, pe_reference)))
    base_bleu = bleu(list(mt_baseline), list(pe_reference))
    rows = [SystemScore(BASELINE_NAME, base_ter, base_bleu, 0.0, 0.0)]
    for name in sorted(systems):
        hyps = systems[name]
        t = corpus_ter(list(zip(hyps, pe_reference)))
        b = bleu(list(hyps), list(pe_reference))
        rows.append(SystemScore(name, t, b, t - base_ter, b - base_bleu))
    rows.sort(key=lambda r: (r.ter, r.name))
    return rows


def format_table(rows: Sequence[SystemScore]) -> str:
    """Aligned plain-text table, scores to two decimals."""
    header = ("System", "TER", "BLEU", "dTER", "dBLEU")
    body = [
        (r.name, f"{r.ter:.2f}", f"{r.bleu:.2f}", f"{r.ter_delta:+.2f}", f"{r.bleu_delta:+.2f}")
        for r in rows
    ]
    widths = [
        max(len(row[i]) for row in [header, *body]) for i in range(len(header))
    ]
    lines = []
    for row in [header, *body]:
        name = row[0].ljust(widths[0])
        nums = "  ".join(cell.rjust(w) for cell, w in zip(row[1:], widths[1:]))
        lines.append(f"{name}  {nums}".rstrip())
    return "\n".join(lines) + "\n"


def format_tsv(rows: Sequence[SystemScore]) -> str:
    lines = ["system\tter\tbleu\tter_delta\tbleu_delta"]
    for r in rows:
        lines.append(
            f"{r.name}\t{r.ter:.2f}\t{r.bleu:.2f}\t{r.ter_delta:+.2f}\t{r.bleu_delta:+.2f}"
        )
    return "\n".join(lines) + "\n"

"""Workflow orchestration and synthetic data generation.

Stages form a DAG over workspace-relative files. Every stage records the
checksums of its inputs and outputs in a manifest; a rerun whose checksums
all match is skipped. Stage wall times go to the log, not the manifest, so
repeated runs produce byte-identical manifests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import Sentence, Triplet
from .decoder import NmtScorer, ScorerBinding, decode
from .nmt.model import Seq2SeqModel

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class PipelineError(Exception):
    """Stage execution failure; message names the stage."""


class PipelineConfigError(Exception):
    """Invalid stage graph: cycles, duplicate names or outputs, bad deps."""


def cipher_token(token: str) -> str:
    """Deterministic stand-in source language: characters reversed.

    Bijective per token; single-character tokens map to themselves.
    """
    return token[::-1]


def cipher(sent: Sequence[str]) -> Sentence:
    return tuple(cipher_token(t) for t in sent)


@dataclass(frozen=True)
class NoiseSpec:
    """Per-token corruption probabilities with their material: substitutes
    come from the confusion table, insertions from the filler inventory."""

    substitution: float = 0.0
    deletion: float = 0.0
    insertion: float = 0.0
    swap: float = 0.0
    confusion: Mapping[str, tuple[str, ...]] | None = None
    fillers: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("substitution", "deletion", "insertion", "swap"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} probability {p} outside [0, 1]")
        if self.substitution > 0 and not self.confusion:
            raise ValueError("substitution noise requires a confusion table")
        if self.insertion > 0 and not self.fillers:
            raise ValueError("insertion noise requires filler tokens")

    @property
    def total_rate(self) -> float:
        return self.substitution + self.deletion + self.insertion + self.swap


def corrupt(sent: Sequence[str], spec: NoiseSpec, rng: np.random.Generator) -> Sentence:
    """One corrupted copy of the sentence; never returns an empty result."""
    out: list[str] = []
    remaining = len(sent)
    for tok in sent:
        remaining -= 1
        if spec.insertion > 0 and rng.random() < spec.insertion:
            out.append(spec.fillers[int(rng.integers(len(spec.fillers)))])
        if spec.deletion > 0 and rng.random() < spec.deletion:
            # deleting the last surviving token would empty the sentence
            if out or remaining > 0:
                continue
        if (
            spec.substitution > 0
            and tok in (spec.confusion or {})
            and rng.random() < spec.substitution
        ):
            choices = spec.confusion[tok]
            out.append(choices[int(rng.integers(len(choices)))])
        else:
            out.append(tok)
    if spec.swap > 0:
        i = 0
        while i + 1 < len(out):
            if rng.random() < spec.swap:
                out[i], out[i + 1] = out[i + 1], out[i]
                i += 2
            else:
                i += 1
    return tuple(out)


def synth_corrupt(
    pe_corpus: Sequence[Sequence[str]], spec: NoiseSpec, seed: int
) -> list[Triplet]:
    """Synthetic triplets: src is the ciphered reference, mt a noisy copy."""
    rng = np.random.default_rng(seed)
    out = []
    for pe in pe_corpus:
        pe = tuple(pe)
        out.append(Triplet(src=cipher(pe), mt=corrupt(pe, spec, rng), pe=pe))
    return out


@dataclass
class RoundtripResult:
    triplets: list[Triplet]
    dropped: int


def roundtrip_generate(
    mono_pe: Sequence[Sequence[str]],
    reverse_model: Seq2SeqModel,
    forward_model: Seq2SeqModel,
    beam: int = 1,
) -> RoundtripResult:
    """Two-hop translation of monolingual text into full triplets.

    Each sentence p is decoded to a pseudo-source s', s' is decoded back to
    m', and (s', m', p) is emitted. Sentences whose decodes truncate or come
    back empty are dropped and counted.
    """
    reverse = NmtScorer(reverse_model)
    forward = NmtScorer(forward_model)
    triplets = []
    dropped = 0
    for pe in mono_pe:
        pe = tuple(pe)
        rev_ids = tuple(reverse_model.src_vocab.ids(pe))
        rev = decode([ScorerBinding("reverse", reverse, rev_ids, 1.0)], beam=beam)
        src = rev.entries[0].tokens
        if rev.truncated or not src:
            dropped += 1
            continue
        fwd_ids = tuple(forward_model.src_vocab.ids(src))
        fwd = decode([ScorerBinding("forward", forward, fwd_ids, 1.0)], beam=beam)
        mt = fwd.entries[0].tokens
        if fwd.truncated or not mt:
            dropped += 1
            continue
        triplets.append(Triplet(src=src, mt=mt, pe=pe))
    return RoundtripResult(triplets=triplets, dropped=dropped)


@dataclass(frozen=True)
class Stage:
    """A named unit of work over workspace-relative files."""

    name: str
    action: Callable[[Path], None]
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    deps: tuple[str, ...] = ()


@dataclass
class RunReport:
    manifest: dict
    executed: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _checksums(workspace: Path, rel_paths: Sequence[str]) -> dict[str, str]:
    return {rel: _sha256(workspace / rel) for rel in sorted(rel_paths)}


def _topological_order(stages: Sequence[Stage]) -> list[Stage]:
    by_name = {}
    for stage in stages:
        if stage.name in by_name:
            raise PipelineConfigError(f"duplicate stage name {stage.name!r}")
        by_name[stage.name] = stage
    producer: dict[str, str] = {}
    for stage in stages:
        for out in stage.outputs:
            if out in producer:
                raise PipelineConfigError(
                    f"output {out!r} produced by both "
                    f"{producer[out]!r} and {stage.name!r}"
                )
            producer[out] = stage.name

    edges: dict[str, set[str]] = {s.name: set() for s in stages}
    for stage in stages:
        for dep in stage.deps:
            if dep not in by_name:
                raise PipelineConfigError(
                    f"stage {stage.name!r} depends on unknown stage {dep!r}"
                )
            edges[stage.name].add(dep)
        for rel in stage.inputs:
            if rel in producer and producer[rel] != stage.name:
                edges[stage.name].add(producer[rel])

    # Kahn's algorithm, ready stages taken in declaration order
    index = {s.name: i for i, s in enumerate(stages)}
    pending = {name: set(deps) for name, deps in edges.items()}
    ordered: list[Stage] = []
    while pending:
        ready = sorted(
            (name for name, deps in pending.items() if not deps),
            key=index.__getitem__,
        )
        if not ready:
            cycle = ", ".join(sorted(pending))
            raise PipelineConfigError(f"stage cycle among: {cycle}")
        for name in ready:
            ordered.append(by_name[name])
            del pending[name]
        for deps in pending.values():
            deps.difference_update(ready)
    return ordered


def _write_manifest(workspace: Path, manifest: dict) -> None:
    path = workspace / MANIFEST_NAME
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _stage_unchanged(workspace: Path, stage: Stage, record: dict | None) -> bool:
    if record is None:
        return False
    for rel in (*stage.inputs, *stage.outputs):
        if not (workspace / rel).exists():
            return False
    return record == {
        "inputs": _checksums(workspace, stage.inputs),
        "outputs": _checksums(workspace, stage.outputs),
    }


def run(workspace: str | Path, stages: Sequence[Stage]) -> RunReport:
    """Execute stages in dependency order, skipping checksum-clean ones."""
    workspace = Path(workspace)
    workspace.mkdir(parents=True, exist_ok=True)
    ordered = _topological_order(stages)

    manifest_path = workspace / MANIFEST_NAME
    manifest = {"stages": {}}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        manifest.setdefault("stages", {})
    report = RunReport(manifest=manifest)

    for stage in ordered:
        record = manifest["stages"].get(stage.name)
        if _stage_unchanged(workspace, stage, record):
            log.info("stage %s: unchanged, skipped", stage.name)
            report.skipped.append(stage.name)
            continue
        for rel in stage.inputs:
            if not (workspace / rel).exists():
                raise PipelineError(f"stage {stage.name!r}: missing input {rel!r}")
        started = time.monotonic()
        try:
            stage.action(workspace)
        except Exception as exc:
            raise PipelineError(f"stage {stage.name!r} failed: {exc}") from exc
        wall = time.monotonic() - started
        for rel in stage.outputs:
            if not (workspace / rel).exists():
                raise PipelineError(
                    f"stage {stage.name!r} did not produce output {rel!r}"
                )
        manifest["stages"][stage.name] = {
            "inputs": _checksums(workspace, stage.inputs),
            "outputs": _checksums(workspace, stage.outputs),
        }
        _write_manifest(workspace, manifest)
        log.info(
            "stage %s: inputs=%s outputs=%s wall=%.3fs",
            stage.name,
            list(stage.inputs),
            list(stage.outputs),
            wall,
        )
        report.executed.append(stage.name)

    _write_manifest(workspace, manifest)
    return report

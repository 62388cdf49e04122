"""Mini-batch training loop with Adadelta and periodic checkpoints."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .model import (
    BOS,
    EOS,
    DecodeState,
    Seq2SeqModel,
    backward_batch,
    forward_batch,
    pad_batch,
    target_batch,
)


class DivergenceError(Exception):
    """Loss became non-finite; message names the offending batch."""


@dataclass
class TrainConfig:
    batch_size: int = 80
    max_sentence_length: int = 50
    rho: float = 0.95
    epsilon: float = 1e-6
    epochs: int = 1
    shuffle_seed: int = 1234
    checkpoint_every: int = 10000
    clip_norm: float = 1.0
    max_iterations: int | None = None
    log_every: int = 50
    fine_tune_from: str | Path | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_sentence_length < 2:
            raise ValueError("max_sentence_length must be >= 2")


@dataclass(frozen=True)
class LogEntry:
    iteration: int
    train_loss: float
    dev_loss: float | None = None


@dataclass
class TrainResult:
    model: Seq2SeqModel
    iterations: int
    skipped_pairs: int
    losses: list[float] = field(default_factory=list)
    log: list[LogEntry] = field(default_factory=list)
    checkpoint_paths: list[Path] = field(default_factory=list)


class Adadelta:
    """Learning-rate-free update with decaying squared-gradient averages."""

    def __init__(self, params: dict[str, np.ndarray], rho: float, epsilon: float):
        self.rho = rho
        self.epsilon = epsilon
        self.acc_grad = {k: np.zeros_like(v) for k, v in params.items()}
        self.acc_delta = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        rho, eps = self.rho, self.epsilon
        for name, g in grads.items():
            ag = self.acc_grad[name]
            ad = self.acc_delta[name]
            ag *= rho
            ag += (1.0 - rho) * g * g
            delta = -np.sqrt((ad + eps) / (ag + eps)) * g
            ad *= rho
            ad += (1.0 - rho) * delta * delta
            params[name] += delta


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = total**0.5
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def dev_loss(model: Seq2SeqModel, pairs, batch_size: int = 80) -> float:
    """Token-weighted mean cross-entropy over held-out pairs."""
    total = 0.0
    tokens = 0.0
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start : start + batch_size]
        src_ids, src_mask = pad_batch([list(s) for s, _ in chunk])
        tgt_in, tgt_out, tgt_mask = target_batch([list(t) for _, t in chunk])
        loss, cache = forward_batch(model, src_ids, src_mask, tgt_in, tgt_out, tgt_mask)
        total += loss * cache.n_tokens
        tokens += cache.n_tokens
    return total / tokens


def train(
    model: Seq2SeqModel,
    corpus: list[tuple[list[int], list[int]]],
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    dev: list[tuple[list[int], list[int]]] | None = None,
) -> TrainResult:
    """Run the training schedule; returns the trained model and its log.

    Pairs longer than cfg.max_sentence_length on either side are skipped and
    counted, the corpus is reshuffled every epoch from one seeded generator,
    and a checkpoint is written every cfg.checkpoint_every iterations when
    out_dir is given.
    """
    if cfg.fine_tune_from is not None:
        model = ckpt.load(cfg.fine_tune_from)
    if not corpus:
        raise ValueError("training corpus is empty")
    kept = [
        (list(s), list(t))
        for s, t in corpus
        if len(s) <= cfg.max_sentence_length and len(t) <= cfg.max_sentence_length
    ]
    skipped = len(corpus) - len(kept)
    if not kept:
        raise ValueError(
            f"training corpus is empty after skipping {skipped} overlong pairs"
        )

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    optimizer = Adadelta(model.params, cfg.rho, cfg.epsilon)
    rng = np.random.default_rng(cfg.shuffle_seed)
    result = TrainResult(model=model, iterations=0, skipped_pairs=skipped)
    interval_losses: list[float] = []
    iteration = 0

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(kept))
        for start in range(0, len(kept), cfg.batch_size):
            if cfg.max_iterations is not None and iteration >= cfg.max_iterations:
                break
            batch_index = start // cfg.batch_size
            batch = [kept[i] for i in order[start : start + cfg.batch_size]]
            src_ids, src_mask = pad_batch([s for s, _ in batch])
            tgt_in, tgt_out, tgt_mask = target_batch([t for _, t in batch])
            loss, cache = forward_batch(
                model, src_ids, src_mask, tgt_in, tgt_out, tgt_mask
            )
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at iteration {iteration + 1} "
                    f"(epoch {epoch + 1}, batch {batch_index + 1})"
                )
            grads = backward_batch(model, cache)
            clip_gradients(grads, cfg.clip_norm)
            optimizer.step(model.params, grads)
            iteration += 1
            result.losses.append(loss)
            interval_losses.append(loss)

            if iteration % cfg.log_every == 0:
                entry = LogEntry(
                    iteration=iteration,
                    train_loss=float(np.mean(interval_losses)),
                    dev_loss=dev_loss(model, dev, cfg.batch_size) if dev else None,
                )
                result.log.append(entry)
                interval_losses = []
            if out_path is not None and iteration % cfg.checkpoint_every == 0:
                path = out_path / f"checkpoint-{iteration:08d}.bin"
                ckpt.save(model, path)
                result.checkpoint_paths.append(path)
        else:
            continue
        break

    if interval_losses:
        result.log.append(
            LogEntry(
                iteration=iteration,
                train_loss=float(np.mean(interval_losses)),
                dev_loss=dev_loss(model, dev, cfg.batch_size) if dev else None,
            )
        )
    if out_path is not None:
        final = out_path / "model.bin"
        ckpt.save(model, final)
        result.checkpoint_paths.append(final)
    result.iterations = iteration
    result.model = model
    return result


def greedy_decode(
    model: Seq2SeqModel, src: list[int], max_len: int | None = None
) -> list[int]:
    """Argmax decoding; returns emitted ids without the end symbol."""
    if max_len is None:
        max_len = 3 * max(len(src), 1)
    state = DecodeState.start(model, list(src))
    out: list[int] = []
    prev = BOS
    for _ in range(max_len):
        logp, state = state.step(model, prev)
        prev = int(np.argmax(logp))
        if prev == EOS:
            break
        out.append(prev)
    return out


def exact_accuracy(model: Seq2SeqModel, pairs) -> float:
    """Fraction of pairs whose greedy decode reproduces the target exactly."""
    hits = sum(1 for s, t in pairs if greedy_decode(model, list(s)) == list(t))
    return hits / len(pairs)

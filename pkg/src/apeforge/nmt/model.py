"""Attentional encoder-decoder implemented on dense float64 arrays.

Architecture: embeddings on both sides, single-layer bidirectional GRU
encoder, additive attention, single-layer GRU decoder whose input is the
previous target embedding concatenated with the attention context, and an
output projection over [state; context; previous embedding]. The backward
pass is written by hand and verified coordinate-wise against central finite
differences (see gradient_check).

All math runs in float64 for checkable gradients; speed at toy scale is
dominated by Python loop overhead anyway.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..corpus import Vocab

PAD = Vocab.PAD
BOS = Vocab.BOS
EOS = Vocab.EOS


class InputError(Exception):
    """Token ids outside the model's vocabulary ranges."""


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _log_softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


_GRU_GATES = ("z", "r", "h")


def _gru_param_names(prefix):
    names = []
    for g in _GRU_GATES:
        names += [f"{prefix}_W{g}", f"{prefix}_U{g}", f"{prefix}_b{g}"]
    return names


@dataclass
class Seq2SeqModel:
    src_vocab: Vocab
    tgt_vocab: Vocab
    embedding_dim: int
    hidden_dim: int
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def ctx_dim(self) -> int:
        return 2 * self.hidden_dim

    def param_names(self) -> list[str]:
        return sorted(self.params)

    def clone(self) -> "Seq2SeqModel":
        return Seq2SeqModel(
            src_vocab=self.src_vocab,
            tgt_vocab=self.tgt_vocab,
            embedding_dim=self.embedding_dim,
            hidden_dim=self.hidden_dim,
            params={k: v.copy() for k, v in self.params.items()},
        )


def init_model(
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    embedding_dim: int = 500,
    hidden_dim: int = 1024,
    seed: int = 0,
) -> Seq2SeqModel:
    """Fresh model with uniform(-0.08, 0.08) parameters, seeded."""
    rng = np.random.default_rng(seed)
    e, h = embedding_dim, hidden_dim
    ctx = 2 * h
    shapes: dict[str, tuple[int, ...]] = {
        "src_emb": (len(src_vocab), e),
        "tgt_emb": (len(tgt_vocab), e),
        "att_W": (h, h),
        "att_U": (h, ctx),
        "att_b": (h,),
        "att_v": (h,),
        "init_W": (h, ctx),
        "init_b": (h,),
        "out_W": (len(tgt_vocab), h + ctx + e),
        "out_b": (len(tgt_vocab),),
    }
    for prefix, in_dim in (("enc_f", e), ("enc_b", e), ("dec", e + ctx)):
        for g in _GRU_GATES:
            shapes[f"{prefix}_W{g}"] = (h, in_dim)
            shapes[f"{prefix}_U{g}"] = (h, h)
            shapes[f"{prefix}_b{g}"] = (h,)
    params = {
        name: rng.uniform(-0.08, 0.08, size=shape) for name, shape in sorted(shapes.items())
    }
    return Seq2SeqModel(
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        embedding_dim=embedding_dim,
        hidden_dim=hidden_dim,
        params=params,
    )


def _check_ids(ids, vocab_size, side):
    arr = np.asarray(ids)
    if arr.size and (arr.min() < 0 or arr.max() >= vocab_size):
        raise InputError(f"{side} id out of range [0, {vocab_size})")


def pad_batch(seqs: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences; returns (ids (B,T), mask (B,T) float64)."""
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), width))
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


class _GruStep:
    """One masked GRU step with enough saved state to run backward."""

    __slots__ = ("x", "h_prev", "z", "r", "c", "m", "h")

    def __init__(self, p, prefix, x, h_prev, m):
        self.x = x
        self.h_prev = h_prev
        self.m = m
        self.z = _sigmoid(x @ p[f"{prefix}_Wz"].T + h_prev @ p[f"{prefix}_Uz"].T + p[f"{prefix}_bz"])
        self.r = _sigmoid(x @ p[f"{prefix}_Wr"].T + h_prev @ p[f"{prefix}_Ur"].T + p[f"{prefix}_br"])
        self.c = np.tanh(
            x @ p[f"{prefix}_Wh"].T + (self.r * h_prev) @ p[f"{prefix}_Uh"].T + p[f"{prefix}_bh"]
        )
        h_new = (1.0 - self.z) * h_prev + self.z * self.c
        self.h = m[:, None] * h_new + (1.0 - m[:, None]) * h_prev

    def backward(self, p, prefix, dh, grads):
        """Given dL/dh for this step's output, return (dx, dh_prev)."""
        m = self.m[:, None]
        dh_new = dh * m
        dh_prev = dh * (1.0 - m)
        dz = dh_new * (self.c - self.h_prev)
        dc = dh_new * self.z
        dh_prev += dh_new * (1.0 - self.z)

        dac = dc * (1.0 - self.c**2)
        grads[f"{prefix}_Wh"] += dac.T @ self.x
        grads[f"{prefix}_Uh"] += dac.T @ (self.r * self.h_prev)
        grads[f"{prefix}_bh"] += dac.sum(axis=0)
        dx = dac @ p[f"{prefix}_Wh"]
        drh = dac @ p[f"{prefix}_Uh"]
        dr = drh * self.h_prev
        dh_prev += drh * self.r

        daz = dz * self.z * (1.0 - self.z)
        grads[f"{prefix}_Wz"] += daz.T @ self.x
        grads[f"{prefix}_Uz"] += daz.T @ self.h_prev
        grads[f"{prefix}_bz"] += daz.sum(axis=0)
        dx += daz @ p[f"{prefix}_Wz"]
        dh_prev += daz @ p[f"{prefix}_Uz"]

        dar = dr * self.r * (1.0 - self.r)
        grads[f"{prefix}_Wr"] += dar.T @ self.x
        grads[f"{prefix}_Ur"] += dar.T @ self.h_prev
        grads[f"{prefix}_br"] += dar.sum(axis=0)
        dx += dar @ p[f"{prefix}_Wr"]
        dh_prev += dar @ p[f"{prefix}_Ur"]
        return dx, dh_prev


class _Encoder:
    """Bidirectional encoder pass with cached per-step state."""

    def __init__(self, model, src_ids, src_mask):
        p = model.params
        self.src_ids = src_ids
        self.src_mask = src_mask
        self.x = p["src_emb"][src_ids]  # (B, Ts, E)
        b, ts, _ = self.x.shape
        h = model.hidden_dim

        self.fwd_steps: list[_GruStep] = []
        state = np.zeros((b, h))
        for j in range(ts):
            step = _GruStep(p, "enc_f", self.x[:, j], state, src_mask[:, j])
            self.fwd_steps.append(step)
            state = step.h

        self.bwd_steps: list[_GruStep] = []
        state = np.zeros((b, h))
        for j in reversed(range(ts)):
            step = _GruStep(p, "enc_b", self.x[:, j], state, src_mask[:, j])
            self.bwd_steps.append(step)  # stored in reverse position order
            state = step.h

        fwd = np.stack([s.h for s in self.fwd_steps], axis=1)
        bwd = np.stack([s.h for s in reversed(self.bwd_steps)], axis=1)
        self.annotations = np.concatenate([fwd, bwd], axis=2)  # (B, Ts, 2H)
        self.lengths = src_mask.sum(axis=1)
        self.mean = (
            (self.annotations * src_mask[:, :, None]).sum(axis=1)
            / self.lengths[:, None]
        )

    def backward(self, model, d_annotations, d_mean, grads):
        p = model.params
        b, ts, _ = self.x.shape
        h = model.hidden_dim
        dh_all = d_annotations + (
            d_mean[:, None, :] * self.src_mask[:, :, None] / self.lengths[:, None, None]
        )
        dx = np.zeros_like(self.x)

        carry = np.zeros((b, h))
        for j in reversed(range(ts)):
            dxj, carry = self.fwd_steps[j].backward(
                p, "enc_f", dh_all[:, j, :h] + carry, grads
            )
            dx[:, j] += dxj
        # bwd_steps[k] processed position ts-1-k; unroll in reverse of
        # processing order, which is forward position order
        carry = np.zeros((b, h))
        for k in reversed(range(ts)):
            pos = ts - 1 - k
            dxj, carry = self.bwd_steps[k].backward(
                p, "enc_b", dh_all[:, pos, h:] + carry, grads
            )
            dx[:, pos] += dxj

        np.add.at(grads["src_emb"], self.src_ids, dx)


class _AttentionStep:
    """Additive attention with cached tensors for backward."""

    def __init__(self, p, s_prev, annotations, u_cached, src_mask):
        self.s_prev = s_prev
        self.annotations = annotations
        self.src_mask = src_mask
        self.q = s_prev @ p["att_W"].T  # (B, A)
        self.g = np.tanh(self.q[:, None, :] + u_cached + p["att_b"])  # (B,Ts,A)
        scores = self.g @ p["att_v"]  # (B, Ts)
        scores = np.where(src_mask > 0, scores, -1e30)
        self.alpha = _softmax(scores)
        self.ctx = (self.alpha[:, :, None] * annotations).sum(axis=1)

    def backward(self, p, dctx, grads):
        """Returns (ds_prev, d_annotations, d_u_cached)."""
        d_alpha = np.einsum("bd,btd->bt", dctx, self.annotations)
        d_annotations = self.alpha[:, :, None] * dctx[:, None, :]
        inner = (d_alpha * self.alpha).sum(axis=1, keepdims=True)
        d_scores = self.alpha * (d_alpha - inner)
        grads["att_v"] += np.einsum("bt,bta->a", d_scores, self.g)
        dg = d_scores[:, :, None] * p["att_v"]
        dpre = dg * (1.0 - self.g**2)
        grads["att_b"] += dpre.sum(axis=(0, 1))
        dq = dpre.sum(axis=1)
        grads["att_W"] += dq.T @ self.s_prev
        ds_prev = dq @ p["att_W"]
        return ds_prev, d_annotations, dpre


@dataclass
class _ForwardCache:
    encoder: _Encoder
    s0_pre: np.ndarray
    attention: list[_AttentionStep]
    dec_steps: list[_GruStep]
    prev_emb: list[np.ndarray]
    feats: list[np.ndarray]
    probs: list[np.ndarray]
    logps: list[np.ndarray]
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    tgt_mask: np.ndarray
    n_tokens: float


def forward_batch(
    model: Seq2SeqModel,
    src_ids: np.ndarray,
    src_mask: np.ndarray,
    tgt_in: np.ndarray,
    tgt_out: np.ndarray,
    tgt_mask: np.ndarray,
    debug: bool = False,
) -> tuple[float, _ForwardCache]:
    """Mean per-token cross-entropy of the batch plus the backward cache."""
    p = model.params
    _check_ids(src_ids, len(model.src_vocab), "source")
    _check_ids(tgt_in, len(model.tgt_vocab), "target")
    _check_ids(tgt_out, len(model.tgt_vocab), "target")

    enc = _Encoder(model, src_ids, src_mask)
    s0_pre = enc.mean @ p["init_W"].T + p["init_b"]
    state = np.tanh(s0_pre)
    u_cached = enc.annotations @ p["att_U"].T  # (B, Ts, A)

    attention: list[_AttentionStep] = []
    dec_steps: list[_GruStep] = []
    prev_embs: list[np.ndarray] = []
    feats: list[np.ndarray] = []
    probs: list[np.ndarray] = []
    logps: list[np.ndarray] = []
    loss = 0.0
    n_tokens = tgt_mask.sum()
    b, tt = tgt_in.shape
    rows = np.arange(b)

    for t in range(tt):
        att = _AttentionStep(p, state, enc.annotations, u_cached, src_mask)
        if debug:
            sums = att.alpha.sum(axis=1)
            assert np.allclose(sums, 1.0, atol=1e-6), "attention not normalized"
        e_prev = p["tgt_emb"][tgt_in[:, t]]
        x = np.concatenate([e_prev, att.ctx], axis=1)
        step = _GruStep(p, "dec", x, state, tgt_mask[:, t])
        state = step.h
        feat = np.concatenate([state, att.ctx, e_prev], axis=1)
        logits = feat @ p["out_W"].T + p["out_b"]
        logp = _log_softmax(logits)
        if debug:
            assert np.allclose(
                np.exp(logp).sum(axis=1), 1.0, atol=1e-6
            ), "output distribution not normalized"
        loss -= (logp[rows, tgt_out[:, t]] * tgt_mask[:, t]).sum()

        attention.append(att)
        dec_steps.append(step)
        prev_embs.append(e_prev)
        feats.append(feat)
        probs.append(np.exp(logp))
        logps.append(logp)

    cache = _ForwardCache(
        encoder=enc,
        s0_pre=s0_pre,
        attention=attention,
        dec_steps=dec_steps,
        prev_emb=prev_embs,
        feats=feats,
        probs=probs,
        logps=logps,
        tgt_in=tgt_in,
        tgt_out=tgt_out,
        tgt_mask=tgt_mask,
        n_tokens=float(n_tokens),
    )
    return float(loss / n_tokens), cache


def backward_batch(model: Seq2SeqModel, cache: _ForwardCache) -> dict[str, np.ndarray]:
    """Gradients of the mean per-token cross-entropy for every parameter."""
    p = model.params
    grads = {name: np.zeros_like(arr) for name, arr in p.items()}
    enc = cache.encoder
    b, tt = cache.tgt_in.shape
    e, h = model.embedding_dim, model.hidden_dim
    ctx_dim = model.ctx_dim
    rows = np.arange(b)

    d_annotations = np.zeros_like(enc.annotations)
    d_u = np.zeros_like(enc.annotations @ p["att_U"].T)
    ds = np.zeros((b, h))

    for t in reversed(range(tt)):
        dlogits = cache.probs[t].copy()
        dlogits[rows, cache.tgt_out[:, t]] -= 1.0
        dlogits *= cache.tgt_mask[:, t][:, None] / cache.n_tokens

        grads["out_W"] += dlogits.T @ cache.feats[t]
        grads["out_b"] += dlogits.sum(axis=0)
        dfeat = dlogits @ p["out_W"]
        ds_t = ds + dfeat[:, :h]
        dctx = dfeat[:, h : h + ctx_dim]
        de_prev = dfeat[:, h + ctx_dim :]

        dx, ds_prev = cache.dec_steps[t].backward(p, "dec", ds_t, grads)
        de_prev += dx[:, :e]
        dctx += dx[:, e:]

        ds_att, d_ann_t, dpre_t = cache.attention[t].backward(p, dctx, grads)
        ds_prev += ds_att
        d_annotations += d_ann_t
        d_u += dpre_t

        np.add.at(grads["tgt_emb"], cache.tgt_in[:, t], de_prev)
        ds = ds_prev

    # initial state projection
    s0 = np.tanh(cache.s0_pre)
    dpre0 = ds * (1.0 - s0**2)
    grads["init_W"] += dpre0.T @ enc.mean
    grads["init_b"] += dpre0.sum(axis=0)
    d_mean = dpre0 @ p["init_W"]

    # cached U @ annotations used by every attention step
    grads["att_U"] += np.einsum("bta,btd->ad", d_u, enc.annotations)
    d_annotations += d_u @ p["att_U"]

    enc.backward(model, d_annotations, d_mean, grads)
    return grads


def loss_and_grads(model, src_seqs, tgt_seqs, debug=False):
    """Convenience wrapper: lists of id lists in, (loss, grads) out."""
    src_ids, src_mask = pad_batch(src_seqs)
    tgt_in, tgt_out, tgt_mask = target_batch(tgt_seqs)
    loss, cache = forward_batch(
        model, src_ids, src_mask, tgt_in, tgt_out, tgt_mask, debug=debug
    )
    return loss, backward_batch(model, cache)


def target_batch(tgt_seqs: list[list[int]]):
    """Shifted target arrays: inputs start with BOS, outputs end with EOS."""
    ins = [[BOS] + list(s) for s in tgt_seqs]
    outs = [list(s) + [EOS] for s in tgt_seqs]
    tgt_in, tgt_mask = pad_batch(ins)
    tgt_out, _ = pad_batch(outs)
    return tgt_in, tgt_out, tgt_mask


def batch_loss(model, src_seqs, tgt_seqs, debug=False) -> float:
    src_ids, src_mask = pad_batch(src_seqs)
    tgt_in, tgt_out, tgt_mask = target_batch(tgt_seqs)
    loss, _ = forward_batch(
        model, src_ids, src_mask, tgt_in, tgt_out, tgt_mask, debug=debug
    )
    return loss


def forward(
    model: Seq2SeqModel, src: list[int], tgt_prefix: list[int], debug: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Next-token log-distribution after consuming tgt_prefix.

    Returns (log-probabilities over the target vocab, attention weights of
    the prediction step over source positions).
    """
    _check_ids(src, len(model.src_vocab), "source")
    _check_ids(tgt_prefix, len(model.tgt_vocab), "target")
    if not src:
        raise InputError("empty source sequence")
    state = DecodeState.start(model, src)
    logp = None
    for token in [BOS] + list(tgt_prefix):
        logp, state = state.step(model, token, debug=debug)
    return logp, state.last_alpha


class DecodeState:
    """Incremental decoder state: encoder memory plus the recurrent state."""

    __slots__ = ("annotations", "u_cached", "src_mask", "s", "last_alpha")

    def __init__(self, annotations, u_cached, src_mask, s, last_alpha=None):
        self.annotations = annotations
        self.u_cached = u_cached
        self.src_mask = src_mask
        self.s = s
        self.last_alpha = last_alpha

    @classmethod
    def start(cls, model: Seq2SeqModel, src: list[int]) -> "DecodeState":
        if not src:
            raise InputError("empty source sequence")
        p = model.params
        src_ids, src_mask = pad_batch([list(src)])
        enc = _Encoder(model, src_ids, src_mask)
        s0 = np.tanh(enc.mean @ p["init_W"].T + p["init_b"])
        return cls(enc.annotations, enc.annotations @ p["att_U"].T, src_mask, s0)

    def step(
        self, model: Seq2SeqModel, prev_token: int, debug: bool = False
    ) -> tuple[np.ndarray, "DecodeState"]:
        """Consume the previously emitted token, return next-token log-probs."""
        p = model.params
        att = _AttentionStep(p, self.s, self.annotations, self.u_cached, self.src_mask)
        e_prev = p["tgt_emb"][np.array([prev_token])]
        x = np.concatenate([e_prev, att.ctx], axis=1)
        step = _GruStep(p, "dec", x, self.s, np.ones(1))
        feat = np.concatenate([step.h, att.ctx, e_prev], axis=1)
        logits = feat @ p["out_W"].T + p["out_b"]
        logp = _log_softmax(logits)[0]
        if debug:
            assert np.allclose(np.exp(logp).sum(), 1.0, atol=1e-6)
            assert np.allclose(att.alpha.sum(), 1.0, atol=1e-6)
        new = DecodeState(
            self.annotations, self.u_cached, self.src_mask, step.h, att.alpha[0]
        )
        return logp, new


@dataclass(frozen=True)
class GradCheckEntry:
    tensor: str
    coordinate: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass(frozen=True)
class GradCheckReport:
    entries: tuple[GradCheckEntry, ...]
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def worst(self, k: int = 5) -> list[GradCheckEntry]:
        return sorted(self.entries, key=lambda e: -e.rel_error)[:k]


def gradient_check(
    model: Seq2SeqModel,
    src: list[int],
    tgt: list[int],
    tolerance: float = 1e-3,
    epsilon: float = 1e-4,
    coords_per_tensor: int = 6,
    seed: int = 0,
) -> GradCheckReport:
    """Central finite differences against the analytic gradient.

    Every parameter tensor is probed at a seeded sample of coordinates plus
    the coordinate with the largest analytic gradient magnitude.
    """
    rng = np.random.default_rng(seed)
    loss, grads = loss_and_grads(model, [src], [tgt])
    entries = []
    for name in model.param_names():
        arr = model.params[name]
        g = grads[name]
        flat_candidates = set()
        flat_candidates.add(int(np.argmax(np.abs(g))))
        n_extra = min(coords_per_tensor - 1, arr.size)
        flat_candidates.update(
            int(i) for i in rng.choice(arr.size, size=n_extra, replace=False)
        )
        for flat in sorted(flat_candidates):
            coord = np.unravel_index(flat, arr.shape)
            orig = arr[coord]
            arr[coord] = orig + epsilon
            up = batch_loss(model, [src], [tgt])
            arr[coord] = orig - epsilon
            down = batch_loss(model, [src], [tgt])
            arr[coord] = orig
            numeric = (up - down) / (2.0 * epsilon)
            analytic = float(g[coord])
            denom = max(abs(analytic), abs(numeric), 1e-8)
            entries.append(
                GradCheckEntry(
                    tensor=name,
                    coordinate=tuple(int(c) for c in coord),
                    analytic=analytic,
                    numeric=float(numeric),
                    rel_error=abs(analytic - numeric) / denom,
                )
            )
    max_err = max(e.rel_error for e in entries)
    return GradCheckReport(
        entries=tuple(entries), max_rel_error=max_err, tolerance=tolerance
    )

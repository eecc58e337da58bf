"""Attention encoder-decoder with optional early decoder fusion of a visual vector.

Encoder: a stack of bidirectional LSTM layers; after each layer listed in
``subsample_layers`` only the even-indexed timesteps are kept.

Decoder, per output step t (two stacked GRUs around the attention):

    u_t   = GRU1([emb(y_{t-1}); f'], s_{t-1})
    c_t   = sum_i alpha_ti h_i,   alpha_t = softmax_i(v . tanh(W_s u_t + W_h h_i))
    s_t   = GRU2(c_t, u_t)
    logits = W_y tanh(W_o s_t + b_o) + b_y

with s_0 = tanh(W_init mean_i(h_i) + b_init) and, when a visual feature f is
supplied, f' = tanh(W_f f + b_f) held fixed across steps.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import layers as L
from .params import ModelParams

BOS, EOS, UNK = "<s>", "</s>", "<unk>"


class EmptyInputError(ValueError):
    pass


class VisualKind:
    OBJECT = "object2048"
    PLACE = "place365"
    MASK_INDICATOR = "mask_indicator"
    SYNTHETIC = "synthetic"


@dataclass
class VisualFeature:
    vector: np.ndarray
    kind: str = VisualKind.SYNTHETIC

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if self.kind == VisualKind.MASK_INDICATOR and not np.all(np.isin(self.vector, (0.0, 1.0))):
            raise ValueError("mask-indicator entries must be 0 or 1")

    @property
    def dim(self) -> int:
        return self.vector.size


class Vocab:
    def __init__(self, words: Sequence[str]):
        self.tokens = [BOS, EOS, UNK] + [w for w in words if w not in (BOS, EOS, UNK)]
        self.index = {w: i for i, w in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate vocabulary entries")

    @classmethod
    def from_corpus(cls, sentences) -> "Vocab":
        return cls(sorted({w for s in sentences for w in s}))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def bos(self) -> int:
        return 0

    @property
    def eos(self) -> int:
        return 1

    def encode(self, words: Sequence[str]) -> list[int]:
        unk = self.index[UNK]
        return [self.index.get(w, unk) for w in words]

    def decode(self, ids: Sequence[int]) -> list[str]:
        out = []
        for i in ids:
            if i == self.eos:
                break
            out.append(self.tokens[i])
        return out


@dataclass
class EncoderConfig:
    input_dim: int
    hidden_dim: int = 64
    n_layers: int = 6
    subsample_layers: tuple[int, ...] = (3, 4)
    cell: str = "lstm"
    bidirectional: bool = True
    activation: str = "tanh"

    def __post_init__(self):
        self.subsample_layers = tuple(self.subsample_layers)
        if min(self.input_dim, self.hidden_dim, self.n_layers) <= 0:
            raise ValueError("encoder dimensions must be positive")
        if not set(self.subsample_layers) <= set(range(1, self.n_layers + 1)):
            raise ValueError("subsample_layers must lie within 1..n_layers")
        if (self.cell, self.bidirectional, self.activation) != ("lstm", True, "tanh"):
            raise ValueError("only bidirectional tanh LSTM encoders are implemented")

    def output_length(self, T: int) -> int:
        for _ in self.subsample_layers:
            T = (T + 1) // 2
        return T


@dataclass
class DecoderConfig:
    vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 64
    n_layers: int = 2
    cell: str = "gru"
    attention_dim: int = 32

    def __post_init__(self):
        if min(self.vocab_size, self.embed_dim, self.hidden_dim, self.attention_dim) <= 0:
            raise ValueError("decoder dimensions must be positive")
        if (self.cell, self.n_layers) != ("gru", 2):
            raise ValueError("the decoder is a two-layer GRU")


@dataclass
class ModelConfig:
    encoder: EncoderConfig
    decoder: DecoderConfig
    visual_dim: int | None = None

    @property
    def multimodal(self) -> bool:
        return self.visual_dim is not None

    def to_dict(self) -> dict:
        return {"encoder": asdict(self.encoder), "decoder": asdict(self.decoder), "visual_dim": self.visual_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(EncoderConfig(**d["encoder"]), DecoderConfig(**d["decoder"]), d.get("visual_dim"))


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    e, d = cfg.encoder, cfg.decoder
    He, Hd, C = e.hidden_dim, d.hidden_dim, 2 * e.hidden_dim
    shapes: dict[str, tuple[int, ...]] = {}
    for k in range(1, e.n_layers + 1):
        din = e.input_dim if k == 1 else C
        for side in ("fw", "bw"):
            shapes[f"enc.l{k}.{side}.W"] = (din, 4 * He)
            shapes[f"enc.l{k}.{side}.U"] = (He, 4 * He)
            shapes[f"enc.l{k}.{side}.b"] = (4 * He,)
    shapes.update({
        "dec.emb": (d.vocab_size, d.embed_dim),
        "dec.init.W": (C, Hd),
        "dec.init.b": (Hd,),
        "dec.gru1.W": (d.embed_dim, 3 * Hd),
        "dec.gru1.U": (Hd, 3 * Hd),
        "dec.gru1.b": (3 * Hd,),
        "att.W_h": (C, d.attention_dim),
        "att.W_s": (Hd, d.attention_dim),
        "att.v": (d.attention_dim,),
        "dec.gru2.W": (C, 3 * Hd),
        "dec.gru2.U": (Hd, 3 * Hd),
        "dec.gru2.b": (3 * Hd,),
        "out.W_o": (Hd, d.embed_dim),
        "out.b_o": (d.embed_dim,),
        "out.W_y": (d.embed_dim, d.vocab_size),
        "out.b_y": (d.vocab_size,),
    })
    if cfg.multimodal:
        # GRU1 input weights for the fused part of [emb; f'], kept separate from
        # the embedding block so zeroing them reproduces the unimodal model exactly
        shapes["dec.gru1.Wf"] = (Hd, 3 * Hd)
        shapes["fusion.W_f"] = (Hd, cfg.visual_dim)
        shapes["fusion.b_f"] = (Hd,)
    return shapes


@dataclass
class Example:
    features: np.ndarray
    tokens: list[int]
    visual: np.ndarray | None = None
    utt_id: str = ""


@dataclass
class EncoderOutput:
    states: np.ndarray          # (B, T', 2 * hidden)
    lengths: np.ndarray         # (B,)
    mask: np.ndarray            # (B, T') bool
    keys: np.ndarray = field(repr=False, default=None)
    cache: list = field(repr=False, default_factory=list)


def log_softmax(x):
    m = np.max(x, axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


class Seq2Seq:
    def __init__(self, cfg: ModelConfig, params: ModelParams | None = None,
                 feat_mean: np.ndarray | None = None, feat_std: np.ndarray | None = None):
        self.cfg = cfg
        self.params = params if params is not None else ModelParams(param_shapes(cfg))
        if self.params.shapes != param_shapes(cfg):
            raise L.ShapeError("parameter layout does not match the model config")
        D = cfg.encoder.input_dim
        self.feat_mean = np.zeros(D) if feat_mean is None else np.asarray(feat_mean, dtype=np.float64)
        self.feat_std = np.ones(D) if feat_std is None else np.asarray(feat_std, dtype=np.float64)

    # -- encoder ----------------------------------------------------------

    def _pad_features(self, feats: Sequence[np.ndarray]):
        D = self.cfg.encoder.input_dim
        lengths = np.array([f.shape[0] for f in feats])
        if lengths.size == 0 or lengths.min() < 1:
            raise EmptyInputError("encoder input needs at least one frame")
        X = np.zeros((len(feats), lengths.max(), D), self.params.flat.dtype)
        for b, f in enumerate(feats):
            if f.ndim != 2 or f.shape[1] != D:
                raise L.ShapeError(f"features of shape {f.shape} do not match input_dim {D}")
            X[b, : f.shape[0]] = (f - self.feat_mean) / self.feat_std
        return X, lengths

    def encode(self, feats: Sequence[np.ndarray]) -> EncoderOutput:
        p, e = self.params, self.cfg.encoder
        X, lengths = self._pad_features(feats)
        caches = []
        for k in range(1, e.n_layers + 1):
            X, c = L.bilstm_forward(X, lengths, p, f"enc.l{k}")
            sub = k in e.subsample_layers
            caches.append((c, sub, X.shape[1]))
            if sub:
                X = X[:, ::2]
                lengths = (lengths + 1) // 2
        mask = np.arange(X.shape[1])[None, :] < lengths[:, None]
        return EncoderOutput(X, lengths, mask, X @ p["att.W_h"], caches)

    def _encode_backward(self, dH, enc: EncoderOutput, g: ModelParams) -> None:
        for k in range(self.cfg.encoder.n_layers, 0, -1):
            c, sub, T_full = enc.cache[k - 1]
            if sub:
                full = np.zeros((dH.shape[0], T_full, dH.shape[2]))
                full[:, ::2] = dH
                dH = full
            dH = L.bilstm_backward(dH, c, g, f"enc.l{k}")

    # -- decoder ----------------------------------------------------------

    def with_params(self, params: ModelParams) -> "Seq2Seq":
        return Seq2Seq(self.cfg, params, self.feat_mean, self.feat_std)

    def initial_state(self, enc: EncoderOutput) -> np.ndarray:
        p = self.params
        mean = (enc.states * enc.mask[:, :, None]).sum(axis=1) / enc.lengths[:, None]
        return np.tanh(mean @ p["dec.init.W"] + p["dec.init.b"])

    def fuse(self, visual: np.ndarray | None):
        """Projected visual vectors f' (B, hidden) or None for a unimodal model."""
        if not self.cfg.multimodal:
            if visual is not None:
                raise L.ShapeError("unimodal model was given a visual feature")
            return None, None
        if visual is None:
            raise L.ShapeError("multimodal model needs a visual feature")
        F = np.atleast_2d(np.asarray(visual, dtype=np.float64))
        return L.fuse_forward(F, self.params["fusion.W_f"], self.params["fusion.b_f"])

    def decode_step(self, prev_token, prev_state, enc: EncoderOutput, fprime=None):
        """One decoder step; returns (logits, new_state, attention_weights)."""
        p = self.params
        prev_token = np.atleast_1d(prev_token)
        gx1 = p["dec.emb"][prev_token] @ p["dec.gru1.W"] + p["dec.gru1.b"]
        if self.cfg.multimodal:
            if fprime is None:
                raise L.ShapeError("multimodal decode step needs f'")
            gx1 = gx1 + fprime @ p["dec.gru1.Wf"]
        elif fprime is not None:
            raise L.ShapeError("unimodal decode step was given f'")
        u, _ = L.gru_step(gx1, prev_state, p["dec.gru1.U"])
        ctx, alpha, _ = L.attention_forward(u, enc.keys, enc.states, enc.mask, p["att.W_s"], p["att.v"])
        s, _ = L.gru_step(ctx @ p["dec.gru2.W"] + p["dec.gru2.b"], u, p["dec.gru2.U"])
        o = np.tanh(s @ p["out.W_o"] + p["out.b_o"])
        return o @ p["out.W_y"] + p["out.b_y"], s, alpha

    def _targets(self, batch: Sequence[Example]):
        bos, eos = 0, 1
        Ty = max(len(ex.tokens) for ex in batch) + 1
        dec_in = np.full((len(batch), Ty), eos, dtype=np.int64)
        dec_out = np.full((len(batch), Ty), eos, dtype=np.int64)
        tmask = np.zeros((len(batch), Ty))
        for b, ex in enumerate(batch):
            n = len(ex.tokens)
            dec_in[b, 0] = bos
            dec_in[b, 1:n + 1] = ex.tokens
            dec_out[b, :n] = ex.tokens
            tmask[b, : n + 1] = 1.0
        return dec_in, dec_out, tmask

    def _visual_matrix(self, batch):
        if not self.cfg.multimodal:
            return None
        if any(ex.visual is None for ex in batch):
            raise L.ShapeError("multimodal model needs a visual feature for every example")
        return np.stack([np.asarray(ex.visual, dtype=np.float64).reshape(-1) for ex in batch])

    def loss_and_grad(self, batch: Sequence[Example], need_grad: bool = True):
        """Mean per-token cross-entropy under teacher forcing, and its gradient."""
        p = self.params
        enc = self.encode([ex.features for ex in batch])
        H, keys = enc.states, enc.keys
        fp, fcache = self.fuse(self._visual_matrix(batch))
        dec_in, dec_out, tmask = self._targets(batch)
        B, Ty = dec_in.shape
        n_tok = tmask.sum()
        embs = p["dec.emb"][dec_in]
        gx1_all = embs @ p["dec.gru1.W"] + p["dec.gru1.b"]
        if fp is not None:
            gx1_all = gx1_all + (fp @ p["dec.gru1.Wf"])[:, None, :]
        s0 = self.initial_state(enc)
        s = s0
        steps = []
        total = 0.0
        rows = np.arange(B)
        for t in range(Ty):
            u, c1 = L.gru_step(gx1_all[:, t], s, p["dec.gru1.U"])
            ctx, _, ca = L.attention_forward(u, keys, H, enc.mask, p["att.W_s"], p["att.v"])
            s, c2 = L.gru_step(ctx @ p["dec.gru2.W"] + p["dec.gru2.b"], u, p["dec.gru2.U"])
            o = np.tanh(s @ p["out.W_o"] + p["out.b_o"])
            logp = log_softmax(o @ p["out.W_y"] + p["out.b_y"])
            total -= np.sum(tmask[:, t] * logp[rows, dec_out[:, t]])
            steps.append((c1, ctx, ca, c2, s, o, logp))
        loss = total / n_tok
        if not np.isfinite(loss):
            return loss, None
        if not need_grad:
            return loss, None

        g = self.params.zeros_like()
        dH = np.zeros_like(H)
        dkeys = np.zeros_like(keys)
        dgx1_all = np.empty_like(gx1_all)
        ds = np.zeros_like(s0)
        for t in range(Ty - 1, -1, -1):
            c1, ctx, ca, c2, s, o, logp = steps[t]
            dlogits = np.exp(logp)
            dlogits[rows, dec_out[:, t]] -= 1.0
            dlogits *= (tmask[:, t] / n_tok)[:, None]
            g["out.W_y"] += o.T @ dlogits
            g["out.b_y"] += dlogits.sum(axis=0)
            dpo = (dlogits @ p["out.W_y"].T) * (1.0 - o * o)
            g["out.W_o"] += s.T @ dpo
            g["out.b_o"] += dpo.sum(axis=0)
            ds = ds + dpo @ p["out.W_o"].T
            dgx2, du = L.gru_step_backward(ds, c2, p["dec.gru2.U"], g["dec.gru2.U"])
            g["dec.gru2.W"] += ctx.T @ dgx2
            g["dec.gru2.b"] += dgx2.sum(axis=0)
            dctx = dgx2 @ p["dec.gru2.W"].T
            du += L.attention_backward(dctx, ca, H, p["att.W_s"], p["att.v"], dH, dkeys, g["att.W_s"], g["att.v"])
            dgx1_all[:, t], ds = L.gru_step_backward(du, c1, p["dec.gru1.U"], g["dec.gru1.U"])

        E = embs.shape[2]
        flat = dgx1_all.reshape(B * Ty, -1)
        g["dec.gru1.W"] += embs.reshape(B * Ty, E).T @ flat
        g["dec.gru1.b"] += flat.sum(axis=0)
        np.add.at(g["dec.emb"], dec_in.reshape(-1), flat @ p["dec.gru1.W"].T)
        if fp is not None:
            dfproj = dgx1_all.sum(axis=1)
            g["dec.gru1.Wf"] += fp.T @ dfproj
            L.fuse_backward(dfproj @ p["dec.gru1.Wf"].T, fcache, p["fusion.W_f"], g["fusion.W_f"], g["fusion.b_f"])

        mean = (H * enc.mask[:, :, None]).sum(axis=1) / enc.lengths[:, None]
        dpre = ds * (1.0 - s0 * s0)
        g["dec.init.W"] += mean.T @ dpre
        g["dec.init.b"] += dpre.sum(axis=0)
        dH += enc.mask[:, :, None] * (dpre @ p["dec.init.W"].T)[:, None, :] / enc.lengths[:, None, None]
        C = H.shape[2]
        g["att.W_h"] += H.reshape(-1, C).T @ dkeys.reshape(-1, dkeys.shape[2])
        dH += dkeys @ p["att.W_h"].T
        self._encode_backward(dH, enc, g)
        return loss, g

    def loss(self, batch: Sequence[Example]) -> float:
        return self.loss_and_grad(batch, need_grad=False)[0]

    def greedy_decode(self, features: np.ndarray, visual=None, max_len: int = 50) -> list[int]:
        if max_len <= 0:
            return []
        enc = self.encode([features])
        fp, _ = self.fuse(None if visual is None else np.asarray(visual).reshape(1, -1))
        s = self.initial_state(enc)
        prev = np.array([0])
        out = []
        for _ in range(max_len):
            logits, s, _ = self.decode_step(prev, s, enc, fp)
            tok = int(np.argmax(logits[0]))
            if tok == 1:
                break
            out.append(tok)
            prev = np.array([tok])
        return out

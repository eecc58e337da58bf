"""Single-layer GRU next-word language model used to probe masked-word predictability."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import layers as L
from .model import log_softmax
from .params import ModelParams

BOS_ID, EOS_ID = 0, 1


class UntrainedModelError(RuntimeError):
    pass


class GRULanguageModel:
    def __init__(self, vocab_size: int, embed_dim: int = 32, hidden_dim: int = 64,
                 params: ModelParams | None = None):
        self.vocab_size, self.embed_dim, self.hidden_dim = vocab_size, embed_dim, hidden_dim
        shapes = {
            "lm.emb": (vocab_size, embed_dim),
            "lm.gru.W": (embed_dim, 3 * hidden_dim),
            "lm.gru.U": (hidden_dim, 3 * hidden_dim),
            "lm.gru.b": (3 * hidden_dim,),
            "lm.out.W": (hidden_dim, vocab_size),
            "lm.out.b": (vocab_size,),
        }
        self.params = params if params is not None else ModelParams(shapes)
        self.trained = params is not None

    def with_params(self, params: ModelParams) -> "GRULanguageModel":
        clone = GRULanguageModel(self.vocab_size, self.embed_dim, self.hidden_dim, params)
        clone.trained = self.trained
        return clone

    def _batch(self, sentences: Sequence[Sequence[int]]):
        T = max(len(s) for s in sentences) + 1
        inp = np.full((len(sentences), T), EOS_ID, dtype=np.int64)
        out = np.full((len(sentences), T), EOS_ID, dtype=np.int64)
        mask = np.zeros((len(sentences), T))
        for b, s in enumerate(sentences):
            inp[b, 0] = BOS_ID
            inp[b, 1:len(s) + 1] = s
            out[b, :len(s)] = s
            mask[b, :len(s) + 1] = 1.0
        return inp, out, mask

    def loss_and_grad(self, sentences: Sequence[Sequence[int]], need_grad: bool = True):
        p = self.params
        inp, out, mask = self._batch(sentences)
        B, T = inp.shape
        X = p["lm.emb"][inp]
        hs, cache = L.gru_forward(X, p["lm.gru.W"], p["lm.gru.U"], p["lm.gru.b"])
        logp = log_softmax(hs @ p["lm.out.W"] + p["lm.out.b"])
        n_tok = mask.sum()
        picked = np.take_along_axis(logp, out[:, :, None], axis=2)[:, :, 0]
        loss = -np.sum(mask * picked) / n_tok
        if not need_grad or not np.isfinite(loss):
            return loss, None
        g = p.zeros_like()
        dlogits = np.exp(logp)
        np.put_along_axis(dlogits, out[:, :, None], np.take_along_axis(dlogits, out[:, :, None], 2) - 1.0, 2)
        dlogits *= (mask / n_tok)[:, :, None]
        H = self.hidden_dim
        g["lm.out.W"] += hs.reshape(-1, H).T @ dlogits.reshape(-1, self.vocab_size)
        g["lm.out.b"] += dlogits.sum(axis=(0, 1))
        dX, _ = L.gru_backward(dlogits @ p["lm.out.W"].T, cache, g["lm.gru.W"], g["lm.gru.U"], g["lm.gru.b"])
        np.add.at(g["lm.emb"], inp.reshape(-1), dX.reshape(-1, self.embed_dim))
        return loss, g

    def loss(self, sentences) -> float:
        return self.loss_and_grad(sentences, need_grad=False)[0]

    def next_word_logprobs(self, sentence: Sequence[int]) -> np.ndarray:
        """Log-probabilities (len(sentence) + 1, V) of each next word given the true left context."""
        p = self.params
        inp = np.array([[BOS_ID, *sentence]], dtype=np.int64)
        hs, _ = L.gru_forward(p["lm.emb"][inp], p["lm.gru.W"], p["lm.gru.U"], p["lm.gru.b"])
        return log_softmax(hs[0] @ p["lm.out.W"] + p["lm.out.b"])

    def predict(self, sentences: Sequence[Sequence[int]], positions: Sequence[Sequence[int]],
                exclude: Sequence[int] = (BOS_ID, EOS_ID)) -> list[list[int]]:
        """Ranked vocabulary (best first) for every requested position, one list per position.

        Only tokens before each position are seen. ``exclude`` ids are pushed
        to the end of the ranking.
        """
        if not self.trained:
            raise UntrainedModelError("language model has not been trained")
        ranked = []
        for sent, pos in zip(sentences, positions):
            if not pos:
                continue
            lp = self.next_word_logprobs(sent)
            for i in pos:
                if not 0 <= i < len(sent):
                    raise IndexError(f"masked position {i} outside a {len(sent)}-token sentence")
                scores = lp[i].copy()
                scores[list(exclude)] = -np.inf
                ranked.append([int(k) for k in np.argsort(-scores, kind="stable")])
        return ranked

"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from . import layers as L
from .params import ModelParams


class Graph(Protocol):
    params: ModelParams

    def loss_and_grad(self) -> tuple[float, ModelParams]: ...

    def loss(self) -> float: ...

    def with_params(self, params: ModelParams) -> "Graph": ...


@dataclass
class GradCheckReport:
    name: str
    n_checked: int
    n_params: int
    max_rel_error: float
    worst_index: int
    worst_param: str
    tolerance: float
    nonfinite_index: int | None = None

    @property
    def passed(self) -> bool:
        return self.nonfinite_index is None and self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: max rel err {self.max_rel_error:.3e} over {self.n_checked}/"
                f"{self.n_params} params (worst {self.worst_param}), tol {self.tolerance:g}")


def rel_error(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(graph: Graph, tolerance: float = 1e-4, h: float = 1e-4, max_indices: int | None = None,
               seed: int = 0, name: str = "graph", extended: bool = True) -> GradCheckReport:
    """Compare ``graph``'s analytic gradient with central differences.

    Every flat parameter is perturbed unless ``max_indices`` is given and
    smaller than the parameter count, in which case a seeded random subset
    of that size is used.

    The analytic gradient is always computed in float64. With ``extended``
    the finite-difference losses are evaluated on a long-double copy of the
    parameters: at h = 1e-4 float64 loss rounding alone contributes ~1e-12
    to each difference quotient, which swamps gradients below ~1e-7 in deep
    stacks.
    """
    params = graph.params
    if params.flat.dtype != np.float64:
        raise TypeError("gradient checking requires float64 parameters")
    _, grad = graph.loss_and_grad()
    analytic = grad.flat
    n = params.size
    bad = np.flatnonzero(~np.isfinite(analytic))
    if bad.size:
        return GradCheckReport(name, 0, n, float("inf"), int(bad[0]), params.locate(int(bad[0]))[0],
                               tolerance, int(bad[0]))
    if max_indices is not None and max_indices < n:
        idx = np.sort(np.random.default_rng(seed).choice(n, size=max_indices, replace=False))
    else:
        idx = np.arange(n)
    numeric = np.empty(idx.size)
    probe = graph.with_params(params.astype(np.longdouble)) if extended else graph
    flat = probe.params.flat
    for k, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        up = probe.loss()
        flat[i] = old - h
        down = probe.loss()
        flat[i] = old
        numeric[k] = float((up - down) / (2 * h))
    errs = rel_error(analytic[idx], numeric)
    w = int(np.argmax(errs)) if errs.size else 0
    worst = int(idx[w]) if errs.size else 0
    return GradCheckReport(name, int(idx.size), n, float(errs.max()) if errs.size else 0.0, worst,
                           params.locate(worst)[0] if n else "", tolerance)


# ---------------------------------------------------------------------------
# small graphs around individual blocks; each loss is a fixed random
# projection of the block output so every output element matters


class _ProjectedGraph:
    def __init__(self, params: ModelParams, forward: Callable, backward: Callable, out_shape, seed: int):
        self.params = params
        self._forward = forward
        self._backward = backward
        self.R = np.random.default_rng(seed + 7919).normal(size=out_shape)

    def with_params(self, params: ModelParams) -> "_ProjectedGraph":
        clone = _ProjectedGraph(params, self._forward, self._backward, self.R.shape, 0)
        clone.R = self.R
        return clone

    def loss(self):
        out, _ = self._forward(self.params)
        return np.sum(self.R * out)

    def loss_and_grad(self):
        out, cache = self._forward(self.params)
        g = self.params.zeros_like()
        self._backward(self.R, cache, g)
        return float(np.sum(self.R * out)), g


def fusion_graph(feature_dim=3, hidden=4, batch=2, seed=0) -> _ProjectedGraph:
    rng = np.random.default_rng(seed)
    p = ModelParams({"fusion.W_f": (hidden, feature_dim), "fusion.b_f": (hidden,)})
    p.flat[:] = rng.normal(scale=0.5, size=p.size)
    F = rng.normal(size=(batch, feature_dim))

    def fwd(p):
        return L.fuse_forward(F, p["fusion.W_f"], p["fusion.b_f"])

    def bwd(d, cache, g):
        L.fuse_backward(d, cache, p["fusion.W_f"], g["fusion.W_f"], g["fusion.b_f"])

    return _ProjectedGraph(p, fwd, bwd, (batch, hidden), seed)


def attention_graph(query_dim=5, value_dim=6, att_dim=4, T=7, batch=2, seed=0) -> _ProjectedGraph:
    rng = np.random.default_rng(seed)
    p = ModelParams({"att.W_h": (value_dim, att_dim), "att.W_s": (query_dim, att_dim), "att.v": (att_dim,)})
    p.flat[:] = rng.normal(scale=0.5, size=p.size)
    u = rng.normal(size=(batch, query_dim))
    Hs = rng.normal(size=(batch, T, value_dim))
    lengths = np.array([T] + [max(1, T - 2 - b) for b in range(1, batch)])
    mask = np.arange(T)[None, :] < lengths[:, None]

    def fwd(p):
        keys = Hs @ p["att.W_h"]
        ctx, _, cache = L.attention_forward(u, keys, Hs, mask, p["att.W_s"], p["att.v"])
        return ctx, cache

    def bwd(d, cache, g):
        dkeys = np.zeros((batch, T, att_dim))
        dvals = np.zeros_like(Hs)
        L.attention_backward(d, cache, Hs, p["att.W_s"], p["att.v"], dvals, dkeys, g["att.W_s"], g["att.v"])
        g["att.W_h"] += Hs.reshape(-1, value_dim).T @ dkeys.reshape(-1, att_dim)

    return _ProjectedGraph(p, fwd, bwd, (batch, value_dim), seed)


def lstm_graph(input_dim=4, hidden=5, T=7, batch=2, seed=0, zero_input=False) -> _ProjectedGraph:
    rng = np.random.default_rng(seed)
    p = ModelParams({"W": (input_dim, 4 * hidden), "U": (hidden, 4 * hidden), "b": (4 * hidden,)})
    p.flat[:] = rng.normal(scale=0.5, size=p.size)
    X = np.zeros((batch, T, input_dim)) if zero_input else rng.normal(size=(batch, T, input_dim))

    def fwd(p):
        return L.lstm_forward(X, p["W"], p["U"], p["b"])

    def bwd(d, cache, g):
        L.lstm_backward(d, cache, g["W"], g["U"], g["b"])

    return _ProjectedGraph(p, fwd, bwd, (batch, T, hidden), seed)


def gru_graph(input_dim=4, hidden=5, T=7, batch=2, seed=0) -> _ProjectedGraph:
    rng = np.random.default_rng(seed)
    p = ModelParams({"W": (input_dim, 3 * hidden), "U": (hidden, 3 * hidden), "b": (3 * hidden,)})
    p.flat[:] = rng.normal(scale=0.5, size=p.size)
    X = rng.normal(size=(batch, T, input_dim))
    h0 = rng.normal(scale=0.5, size=(batch, hidden))

    def fwd(p):
        return L.gru_forward(X, p["W"], p["U"], p["b"], h0)

    def bwd(d, cache, g):
        L.gru_backward(d, cache, g["W"], g["U"], g["b"])

    return _ProjectedGraph(p, fwd, bwd, (batch, T, hidden), seed)


class ModelGraph:
    """Wraps any model exposing ``params`` and ``loss_and_grad(batch)``."""

    def __init__(self, model, batch):
        self.model = model
        self.params = model.params
        self.batch = batch

    def with_params(self, params: ModelParams) -> "ModelGraph":
        return ModelGraph(self.model.with_params(params), self.batch)

    def loss(self):
        return self.model.loss_and_grad(self.batch, need_grad=False)[0]

    def loss_and_grad(self):
        return self.model.loss_and_grad(self.batch)


def seq2seq_graph(multimodal: bool, T=7, vocab=11, hidden=5, input_dim=4, visual_dim=3, batch=2,
                  n_layers=6, seed=0, init_scale=1.0) -> ModelGraph:
    from .model import DecoderConfig, EncoderConfig, Example, ModelConfig, Seq2Seq

    rng = np.random.default_rng(seed)
    cfg = ModelConfig(
        EncoderConfig(input_dim, hidden, n_layers=n_layers),
        DecoderConfig(vocab, embed_dim=hidden, hidden_dim=hidden, attention_dim=hidden),
        visual_dim if multimodal else None,
    )
    model = Seq2Seq(cfg)
    model.params.init_uniform(rng, init_scale)
    batch_ex = []
    for b in range(batch):
        Tb = T - 2 * b if T - 2 * b >= 1 else 1
        toks = list(rng.integers(3, vocab, size=3 + b))
        vis = rng.normal(size=visual_dim) if multimodal else None
        batch_ex.append(Example(rng.normal(size=(Tb, input_dim)), toks, vis))
    return ModelGraph(model, batch_ex)


def lm_graph(vocab=11, hidden=5, embed=4, seed=0, init_scale=0.5) -> ModelGraph:
    from .lm import GRULanguageModel

    rng = np.random.default_rng(seed)
    lm = GRULanguageModel(vocab, embed, hidden)
    lm.params.init_uniform(rng, init_scale)
    sents = [list(rng.integers(3, vocab, size=n)) for n in (5, 3)]
    return ModelGraph(lm, sents)


def standard_suite(seed: int = 0) -> dict[str, Graph]:
    """The graphs the acceptance gate checks, at desk dimensions."""
    return {
        "fusion": fusion_graph(seed=seed),
        "attention": attention_graph(seed=seed),
        "lstm": lstm_graph(seed=seed),
        "gru": gru_graph(seed=seed),
        "seq2seq_unimodal": seq2seq_graph(False, seed=seed),
        "seq2seq_multimodal": seq2seq_graph(True, seed=seed),
        "gru_lm": lm_graph(seed=seed),
    }

"""Teacher-forced training with Adam, and model checkpoints."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .lm import GRULanguageModel
from .model import Example, ModelConfig, Seq2Seq, Vocab
from .params import ModelParams

log = logging.getLogger(__name__)

CKPT_MAGIC = b"MBMODEL1\n"


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, msg: str):
        super().__init__(f"epoch {epoch}: {msg}")
        self.epoch = epoch


@dataclass
class TrainHyper:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_scale: float = 0.1
    clip_norm: float | None = 5.0
    normalize_features: bool = True
    seed: int = 0


class Adam:
    def __init__(self, size: int, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        theta -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainResult:
    params: ModelParams
    losses: list[float] = field(default_factory=list)


def _clip(grad: np.ndarray, clip_norm: float | None) -> np.ndarray:
    if clip_norm is None:
        return grad
    norm = np.sqrt(np.dot(grad, grad))
    return grad * (clip_norm / norm) if norm > clip_norm else grad


def _fit(model, items: Sequence, hyper: TrainHyper, weights_of) -> list[float]:
    """Shared minibatch loop; ``weights_of(batch)`` gives the token count of a batch."""
    rng = np.random.default_rng(hyper.seed)
    opt = Adam(model.params.size, hyper.lr, hyper.beta1, hyper.beta2, hyper.eps)
    losses = []
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(len(items))
        total = weight = 0.0
        for start in range(0, len(items), hyper.batch_size):
            batch = [items[i] for i in order[start:start + hyper.batch_size]]
            loss, grad = model.loss_and_grad(batch)
            if not np.isfinite(loss) or grad is None or not np.all(np.isfinite(grad.flat)):
                raise TrainingError(epoch, "loss or gradient became non-finite")
            opt.step(model.params.flat, _clip(grad.flat, hyper.clip_norm))
            n = weights_of(batch)
            total += loss * n
            weight += n
        losses.append(total / weight)
        log.debug("epoch %d loss %.4f", epoch, losses[-1])
    return losses


def feature_stats(examples: Sequence[Example]) -> tuple[np.ndarray, np.ndarray]:
    stacked = np.concatenate([ex.features for ex in examples], axis=0)
    std = stacked.std(axis=0)
    return stacked.mean(axis=0), np.where(std > 1e-8, std, 1.0)


def train(examples: Sequence[Example], cfg: ModelConfig, hyper: TrainHyper | None = None) -> tuple[Seq2Seq, TrainResult]:
    """Fit a fresh encoder-decoder; identical inputs and seed give identical results."""
    hyper = hyper or TrainHyper()
    if not examples:
        raise ValueError("empty training set")
    mean, std = feature_stats(examples) if hyper.normalize_features else (None, None)
    model = Seq2Seq(cfg, feat_mean=mean, feat_std=std)
    model.params.init_uniform(np.random.default_rng(hyper.seed), hyper.init_scale)
    losses = _fit(model, examples, hyper, lambda b: sum(len(ex.tokens) + 1 for ex in b))
    return model, TrainResult(model.params, losses)


def lm_train(sentences: Sequence[Sequence[int]], vocab_size: int, hyper: TrainHyper | None = None,
             embed_dim: int = 32, hidden_dim: int = 64) -> tuple[GRULanguageModel, TrainResult]:
    hyper = hyper or TrainHyper()
    if not sentences:
        raise ValueError("empty LM corpus")
    lm = GRULanguageModel(vocab_size, embed_dim, hidden_dim)
    lm.params.init_uniform(np.random.default_rng(hyper.seed), hyper.init_scale)
    losses = _fit(lm, list(sentences), hyper, lambda b: sum(len(s) + 1 for s in b))
    lm.trained = True
    return lm, TrainResult(lm.params, losses)


# ---------------------------------------------------------------------------
# checkpoints: magic line, one-line JSON header, little-endian f64 parameters

def save_checkpoint(model: Seq2Seq, vocab: Vocab, path, seed: int | None = None, extra: dict | None = None) -> None:
    header = {
        "config": model.cfg.to_dict(),
        "vocab": vocab.tokens,
        "n_params": model.params.size,
        "seed": seed,
        "feat_mean": model.feat_mean.tolist(),
        "feat_std": model.feat_std.tolist(),
    }
    if extra:
        header["extra"] = extra
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n")
        fh.write(model.params.flat.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[Seq2Seq, Vocab, dict]:
    blob = Path(path).read_bytes()
    if not blob.startswith(CKPT_MAGIC):
        raise ValueError(f"{path}: not an MBMODEL1 checkpoint")
    nl = blob.index(b"\n", len(CKPT_MAGIC))
    header = json.loads(blob[len(CKPT_MAGIC):nl])
    cfg = ModelConfig.from_dict(header["config"])
    payload = blob[nl + 1:]
    if len(payload) != 8 * header["n_params"]:
        raise ValueError(f"{path}: parameter block has {len(payload)} bytes, expected {8 * header['n_params']}")
    from .model import param_shapes

    params = ModelParams(param_shapes(cfg), np.frombuffer(payload, dtype="<f8").astype(np.float64))
    model = Seq2Seq(cfg, params, np.array(header["feat_mean"]), np.array(header["feat_std"]))
    vocab = Vocab(header["vocab"][3:])
    return model, vocab, header


def hyper_to_dict(h: TrainHyper) -> dict:
    return asdict(h)

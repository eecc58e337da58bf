"""End-to-end experiment runner: mask, featurize, pair with visuals, train, decode, score.

Config is a JSON object; every key except ``data`` has a default::

    {
      "name": "nouns-silence",
      "data": {"wav_dir": "...", "transcripts": "...", "alignments": "...",
               "splits": "...", "tagged": "...",
               "visual_features": "...", "visual_ids": "..."},
      "wordset": {"kind": "nouns", "n": 100},
      "mask": {"type": "silence", "expansion": 0.25, "duration": 0.5, "noise_std": 0.1},
      "visual": "archive",
      "congruency": "congruent",
      "model": {"hidden_dim": 64, "embed_dim": 32, "attention_dim": 32, "n_layers": 6,
                "subsample_layers": [3, 4], "n_mels": 40, "pitch": true, "max_decode_len": 50},
      "train": {"epochs": 30, "batch_size": 8, "lr": 0.001, "init_scale": 0.1, ...},
      "seeds": [1, 2, 3],
      "output_dir": "runs/nouns-silence"
    }

``wordset.kind`` is ``nouns`` (top-n NN tokens of ``data.tagged``), ``places``
(``categories`` file, optional ``strict``) or ``file`` (``path`` to a saved
word set). ``visual`` is ``none``, ``archive`` (``data.visual_features`` with
its id sidecar) or ``mask_indicator``. Relative paths resolve against the
config file's directory.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import __version__
from ..corruptor import MaskPlan, MaskType, apply_masks, parse_ctm, plan_masks, save_plans
from ..lexmask import (WordSet, place_words, read_categories, read_tagged, read_transcripts,
                       read_wordset, top_nouns, write_transcripts, write_wordset)
from ..neuro.model import (DecoderConfig, EncoderConfig, Example, ModelConfig, Seq2Seq, VisualFeature,
                           VisualKind, Vocab)
from ..neuro.train import TrainHyper, save_checkpoint, train
from ..scorer import score
from ..signalio import extract_features, read_features, read_wav, write_features
from .protocol import Congruency, assign_visual, pairing_seeds

log = logging.getLogger(__name__)

VISUAL_MODES = ("none", "archive", "mask_indicator")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, manifest: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed ({cause}); manifest: {manifest}")
        self.stage = stage
        self.manifest = manifest


# ---------------------------------------------------------------------------
# configuration

@dataclass
class DataPaths:
    wav_dir: str
    transcripts: str
    alignments: str
    splits: str
    tagged: str | None = None
    visual_features: str | None = None
    visual_ids: str | None = None


@dataclass
class WordsetSpec:
    kind: str = "nouns"
    n: int = 100
    categories: str | None = None
    strict: bool = False
    path: str | None = None


@dataclass
class MaskSpec:
    type: str = "silence"
    expansion: float = 0.25
    duration: float = 0.5
    noise_std: float = 0.1


@dataclass
class ModelSpec:
    hidden_dim: int = 64
    embed_dim: int = 32
    attention_dim: int = 32
    n_layers: int = 6
    subsample_layers: tuple[int, ...] = (3, 4)
    n_mels: int = 40
    pitch: bool = True
    max_decode_len: int = 50


def _build(cls, d: dict | None, what: str):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"{what}: unknown keys {sorted(extra)}")
    try:
        return cls(**d)
    except TypeError as e:
        raise ConfigError(f"{what}: {e}") from None


@dataclass
class ExperimentConfig:
    data: DataPaths
    wordset: WordsetSpec = field(default_factory=WordsetSpec)
    mask: MaskSpec = field(default_factory=MaskSpec)
    visual: str = "none"
    congruency: str = Congruency.CONGRUENT.value
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainHyper = field(default_factory=TrainHyper)
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    output_dir: str = "runs"
    name: str = "experiment"

    @classmethod
    def from_dict(cls, d: dict, base: str | Path | None = None) -> "ExperimentConfig":
        d = dict(d)
        if "data" not in d:
            raise ConfigError("config needs a 'data' section")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        data = _build(DataPaths, d["data"], "data")
        ws = _build(WordsetSpec, d.get("wordset"), "wordset")
        if base is not None:
            root = Path(base)

            def fix(p):
                return p if p is None or os.path.isabs(p) else str(root / p)

            for f in fields(DataPaths):
                setattr(data, f.name, fix(getattr(data, f.name)))
            ws.categories, ws.path = fix(ws.categories), fix(ws.path)
            if not os.path.isabs(d.get("output_dir", "runs")):
                d["output_dir"] = str(root / d.get("output_dir", "runs"))
        model = _build(ModelSpec, d.get("model"), "model")
        model.subsample_layers = tuple(model.subsample_layers)
        return cls(
            data=data,
            wordset=ws,
            mask=_build(MaskSpec, d.get("mask"), "mask"),
            visual=d.get("visual", "none"),
            congruency=d.get("congruency", Congruency.CONGRUENT.value),
            model=model,
            train=_build(TrainHyper, d.get("train"), "train"),
            seeds=[int(s) for s in d.get("seeds", [1, 2, 3])],
            output_dir=d.get("output_dir", "runs"),
            name=d.get("name", "experiment"),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            d = json.load(fh)
        if "config" in d and "stages" in d:     # a run manifest: replay its snapshot
            d = d["config"]
        return cls.from_dict(d, Path(path).resolve().parent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"]["subsample_layers"] = list(self.model.subsample_layers)
        return d

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.visual not in VISUAL_MODES:
            raise ConfigError(f"visual must be one of {VISUAL_MODES}")
        try:
            cong = Congruency(self.congruency)
            MaskType(self.mask.type)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.visual == "none" and cong is not Congruency.CONGRUENT:
            raise ConfigError("incongruent conditions need visual features")
        if self.wordset.kind not in ("nouns", "places", "file"):
            raise ConfigError("wordset.kind must be nouns, places or file")
        need = [("data.wav_dir", self.data.wav_dir), ("data.transcripts", self.data.transcripts),
                ("data.alignments", self.data.alignments), ("data.splits", self.data.splits)]
        if self.wordset.kind == "nouns":
            need.append(("data.tagged", self.data.tagged))
        elif self.wordset.kind == "places":
            need.append(("wordset.categories", self.wordset.categories))
        else:
            need.append(("wordset.path", self.wordset.path))
        if self.visual == "archive":
            need += [("data.visual_features", self.data.visual_features), ("data.visual_ids", self.data.visual_ids)]
        for key, p in need:
            if p is None:
                raise ConfigError(f"{key} is required for this configuration")
            if not os.path.exists(p):
                raise ConfigError(f"{key}: {p} does not exist")
        if self.mask.expansion < 0 or self.mask.duration <= 0 or self.mask.noise_std < 0:
            raise ConfigError("mask expansion/noise_std must be >= 0 and duration > 0")


# ---------------------------------------------------------------------------
# results

@dataclass
class ConditionResult:
    condition: str
    multimodal: bool
    seeds: list[int]
    wer: list[float]
    rr: list[float | None]

    @staticmethod
    def _stats(xs):
        vals = [x for x in xs if x is not None]
        if not vals:
            return None, None
        return float(np.mean(vals)), float(np.std(vals))   # population std over the seed set

    def to_dict(self) -> dict:
        wm, ws = self._stats(self.wer)
        rm, rs = self._stats(self.rr)
        return {"condition": self.condition, "multimodal": self.multimodal, "seeds": self.seeds,
                "wer": self.wer, "rr": self.rr, "wer_mean": wm, "wer_std": ws, "rr_mean": rm, "rr_std": rs}


@dataclass
class ResultsTable:
    name: str
    rows: list[ConditionResult] = field(default_factory=list)

    def row(self, condition: str) -> dict:
        for r in self.rows:
            if r.condition == condition:
                return r.to_dict()
        raise KeyError(condition)

    def to_dict(self) -> dict:
        return {"name": self.name, "std": "population", "rows": [r.to_dict() for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ResultsTable":
        rows = [ConditionResult(r["condition"], r["multimodal"], r["seeds"], r["wer"], r["rr"]) for r in d["rows"]]
        return cls(d["name"], rows)

    def render(self) -> str:
        def fmt(m, s):
            return "   n/a      " if m is None else f"{m:6.2f} ±{s:5.2f}"

        head = f"{'condition':<34} {'WER %':>13} {'RR %':>13}  seeds"
        lines = [self.name, head, "-" * len(head)]
        for r in self.rows:
            d = r.to_dict()
            lines.append(f"{r.condition:<34} {fmt(d['wer_mean'], d['wer_std'])} "
                         f"{fmt(d['rr_mean'], d['rr_std'])}  {len(r.seeds)}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# manifest

def _sha(*chunks) -> str:
    h = hashlib.sha256()
    for c in chunks:
        h.update(c if isinstance(c, bytes) else str(c).encode("utf-8"))
    return h.hexdigest()


def _file_sha(path) -> str:
    return _sha(Path(path).read_bytes())


@dataclass
class RunManifest:
    config: dict
    version: str = __version__
    stages: dict[str, dict] = field(default_factory=dict)

    def record(self, stage: str, seconds: float, inputs: dict | None = None, outputs: dict | None = None):
        self.stages[stage] = {"inputs": inputs or {}, "outputs": outputs or {}, "seconds": round(seconds, 3)}

    def output_hashes(self) -> dict[str, dict]:
        return {k: v["outputs"] for k, v in self.stages.items()}

    def to_dict(self) -> dict:
        return {"tool": "maskbench", "version": self.version, "config": self.config, "stages": self.stages}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text())
        return cls(d["config"], d["version"], d["stages"])


# ---------------------------------------------------------------------------
# pipeline pieces

def read_splits(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                utt, split = line.split()
                out[utt] = split
    return out


def read_visual_archive(features_path, ids_path) -> dict[str, np.ndarray]:
    fm = read_features(features_path)
    ids = [l.strip() for l in Path(ids_path).read_text().splitlines() if l.strip()]
    if len(ids) != fm.n_frames:
        raise ConfigError(f"{ids_path}: {len(ids)} ids for {fm.n_frames} visual vectors")
    return {u: fm.frames[i].astype(np.float64) for i, u in enumerate(ids)}


def build_wordset(cfg: ExperimentConfig, transcripts: dict[str, list[str]]) -> WordSet:
    spec = cfg.wordset
    if spec.kind == "nouns":
        return top_nouns(read_tagged(cfg.data.tagged).values(), spec.n)
    if spec.kind == "places":
        vocab = {w for toks in transcripts.values() for w in toks}
        return place_words(vocab, read_categories(spec.categories), spec.strict, source=spec.categories)
    return read_wordset(spec.path)


def mask_indicator(plan: MaskPlan, tokens: Sequence[str], words: Sequence[str]) -> np.ndarray:
    """One slot per word-set word (sorted order); 1 where that word is masked in this utterance."""
    index = {w: k for k, w in enumerate(words)}
    v = np.zeros(len(words))
    for i in plan.masked_token_indices:
        v[index[tokens[i]]] = 1.0
    return VisualFeature(v, VisualKind.MASK_INDICATOR).vector


@dataclass
class Corpus:
    ids: list[str]
    tokens: dict[str, list[str]]
    splits: dict[str, str]
    plans: dict[str, MaskPlan]
    features: dict[str, np.ndarray]
    wordset: WordSet

    def split(self, name: str) -> list[str]:
        return [u for u in self.ids if self.splits[u] == name]


def prepare_corpus(cfg: ExperimentConfig, mask_seed: int, workdir: Path | None = None) -> Corpus:
    """Plan and apply the masks, then extract features for every utterance with a split."""
    trans = read_transcripts(cfg.data.transcripts)
    splits = read_splits(cfg.data.splits)
    timings = parse_ctm(Path(cfg.data.alignments).read_text())
    ws = build_wordset(cfg, trans)
    ids = sorted(u for u in splits if u in trans)
    missing = [u for u in splits if u not in trans]
    if missing:
        raise ConfigError(f"{len(missing)} split ids have no transcript, e.g. {missing[0]}")
    plans, feats = {}, {}
    for u in ids:
        wav = read_wav(Path(cfg.data.wav_dir) / f"{u}.wav")
        plan = plan_masks(timings.get(u, []), trans[u], ws, cfg.mask.expansion, cfg.mask.duration,
                          cfg.mask.type, mask_seed, u, wav.duration)
        masked = apply_masks(wav, plan, cfg.mask.noise_std)
        fm = extract_features(masked, cfg.model.n_mels, cfg.model.pitch)
        plans[u], feats[u] = plan, fm.frames
        if workdir is not None:
            write_features(fm, workdir / f"{u}.feat")
    return Corpus(ids, trans, splits, plans, feats, ws)


def features_hash(corpus: Corpus) -> str:
    return _sha(*(corpus.features[u].astype("<f8").tobytes() for u in corpus.ids))


def plans_hash(corpus: Corpus) -> str:
    return _sha(json.dumps([corpus.plans[u].to_dict() for u in corpus.ids], sort_keys=True))


def model_config_from_spec(m: ModelSpec, input_dim: int, vocab_size: int, visual_dim: int | None) -> ModelConfig:
    return ModelConfig(
        EncoderConfig(input_dim, m.hidden_dim, m.n_layers, tuple(m.subsample_layers)),
        DecoderConfig(vocab_size, m.embed_dim, m.hidden_dim, attention_dim=m.attention_dim),
        visual_dim,
    )


def decode_split(model: Seq2Seq, vocab: Vocab, corpus: Corpus, ids: Sequence[str],
                 visual: dict[str, np.ndarray] | None, max_len: int) -> dict[str, list[str]]:
    out = {}
    for u in ids:
        v = None if visual is None else visual[u]
        out[u] = vocab.decode(model.greedy_decode(corpus.features[u], v, max_len))
    return out


def score_hyps(corpus: Corpus, hyps: dict[str, list[str]]):
    ids = list(hyps)
    return score([(corpus.tokens[u], hyps[u]) for u in ids], [corpus.plans[u].masked_token_indices for u in ids], ids)


def _workdir(cfg: ExperimentConfig) -> Path:
    root = os.environ.get("MASKBENCH_WORKDIR")
    base = Path(root) / cfg.name if root else Path(cfg.output_dir) / "work"
    base.mkdir(parents=True, exist_ok=True)
    return base


def _hyp_text(hyps: dict[str, list[str]]) -> str:
    return "".join(f"{u}\t{' '.join(h)}\n" for u, h in hyps.items())


@contextlib.contextmanager
def _stage(name: str, manifest: RunManifest, path: Path):
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        manifest.stages.setdefault(name, {})["error"] = f"{type(e).__name__}: {e}"
        manifest.save(path)
        raise StageError(name, str(path), e) from e


def _condition_names(cfg: ExperimentConfig) -> list[str]:
    label = {"none": "unimodal", "archive": "multimodal", "mask_indicator": "mask_indicator"}[cfg.visual]
    if cfg.visual == "none":
        return [label]
    cong = Congruency(cfg.congruency)
    if cong is Congruency.INCONGRUENT_DECODE:
        return [f"{label}/congruent", f"{label}/incongruent_decode"]
    return [f"{label}/{cong.value}"]


def run_experiment(cfg: ExperimentConfig) -> ResultsTable:
    """Run every seed of ``cfg`` and aggregate per condition.

    Writes ``manifest.json``, ``results.json``, ``results.txt``, the reference
    transcripts and mask plans, and per-run checkpoints and hypotheses under
    ``cfg.output_dir``. With ``incongruent_decode`` one model per seed is
    decoded twice, with congruent and with deranged test visuals.
    """
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    mpath = out / "manifest.json"
    manifest = RunManifest(cfg.to_dict())
    work = _workdir(cfg)
    cong = Congruency(cfg.congruency)
    names = _condition_names(cfg)
    results = {n: ConditionResult(n, cfg.visual != "none", [], [], []) for n in names}
    corpora: dict[int, Corpus] = {}

    data_inputs = {k: _file_sha(v) for k, v in asdict(cfg.data).items() if v and os.path.isfile(v)}
    for seed in cfg.seeds:
        # silence masks do not depend on the seed, so one masked corpus serves every run
        mask_seed = seed if MaskType(cfg.mask.type) is MaskType.WHITE_NOISE else 0
        if mask_seed not in corpora:
            stage = f"mask+features/mask_seed={mask_seed}"
            t0 = time.perf_counter()
            with _stage(stage, manifest, mpath):
                fdir = work / f"features_seed{mask_seed}"
                fdir.mkdir(exist_ok=True)
                corpora[mask_seed] = corpus = prepare_corpus(cfg, mask_seed, fdir)
                if not corpus.split("train") or not corpus.split("test"):
                    raise ConfigError("splits must contain both train and test utterances")
            manifest.record(stage, time.perf_counter() - t0, data_inputs,
                            {"plans": plans_hash(corpus), "features": features_hash(corpus)})
        corpus = corpora[mask_seed]
        train_ids, test_ids = corpus.split("train"), corpus.split("test")

        stage = f"train/seed={seed}"
        t0 = time.perf_counter()
        with _stage(stage, manifest, mpath):
            vocab = Vocab.from_corpus(corpus.tokens[u] for u in train_ids)
            visual = _visual_table(cfg, corpus)
            train_seed, test_seed = pairing_seeds(seed)
            vdim = None if visual is None else len(next(iter(visual.values())))
            if visual is not None:
                pair = assign_visual(train_ids, cong is not Congruency.INCONGRUENT_TRAIN, train_seed)
                train_vis = {u: visual[pair[u]] for u in train_ids}
            examples = [Example(corpus.features[u], vocab.encode(corpus.tokens[u]),
                                None if visual is None else train_vis[u], u) for u in train_ids]
            hyper = TrainHyper(**{**asdict(cfg.train), "seed": seed})
            model, res = train(examples, model_config_from_spec(cfg.model, examples[0].features.shape[1], len(vocab), vdim), hyper)
            rdir = out / f"seed{seed}"
            rdir.mkdir(exist_ok=True)
            save_checkpoint(model, vocab, rdir / "model.ckpt", seed, {"losses": res.losses})
        manifest.record(stage, time.perf_counter() - t0, {"features": features_hash(corpus)},
                        {"params": _sha(model.params.flat.astype("<f8").tobytes()),
                         "losses": _sha(json.dumps(res.losses))})

        for name in names:
            stage = f"decode/{name}/seed={seed}"
            t0 = time.perf_counter()
            with _stage(stage, manifest, mpath):
                test_vis = None
                if visual is not None:
                    congruent_test = cong is Congruency.CONGRUENT or name.endswith("/congruent")
                    pair = assign_visual(test_ids, congruent_test, test_seed)
                    test_vis = {u: visual[pair[u]] for u in test_ids}
                hyps = decode_split(model, vocab, corpus, test_ids, test_vis, cfg.model.max_decode_len)
                rep = score_hyps(corpus, hyps)
                hdir = out / name.replace("/", "__")
                hdir.mkdir(exist_ok=True)
                (hdir / f"seed{seed}.hyp").write_text(_hyp_text(hyps))
                (hdir / f"seed{seed}.score.json").write_text(rep.to_json(indent=1) + "\n")
            manifest.record(stage, time.perf_counter() - t0, {"params": manifest.stages[f"train/seed={seed}"]["outputs"]["params"]},
                            {"hyps": _sha(_hyp_text(hyps))})
            r = results[name]
            r.seeds.append(seed)
            r.wer.append(rep.wer_percent)
            r.rr.append(rep.rr_percent)
            log.info("%s seed %d: WER %.2f RR %s", name, seed, rep.wer_percent, rep.rr_percent)

    first = corpora[min(corpora)]
    test_ids = first.split("test")
    write_transcripts({u: first.tokens[u] for u in test_ids}, out / "refs.txt")
    save_plans([first.plans[u] for u in test_ids], out / "plans.json")
    write_wordset(first.wordset, out / "wordset.txt")
    table = ResultsTable(cfg.name, [results[n] for n in names])
    (out / "results.json").write_text(table.to_json() + "\n")
    (out / "results.txt").write_text(table.render() + "\n")
    manifest.record("results", 0.0, outputs={"table": _sha(table.to_json())})
    manifest.save(mpath)
    return table


def _visual_table(cfg: ExperimentConfig, corpus: Corpus) -> dict[str, np.ndarray] | None:
    if cfg.visual == "none":
        return None
    if cfg.visual == "mask_indicator":
        words = sorted(corpus.wordset.words)
        return {u: mask_indicator(corpus.plans[u], corpus.tokens[u], words) for u in corpus.ids}
    table = read_visual_archive(cfg.data.visual_features, cfg.data.visual_ids)
    missing = [u for u in corpus.ids if u not in table]
    if missing:
        raise ConfigError(f"no visual feature for {len(missing)} utterances, e.g. {missing[0]}")
    return table


def upper_bound_run(cfg: ExperimentConfig) -> ResultsTable:
    """Same pipeline with the ground-truth mask indicator as the visual feature."""
    d = cfg.to_dict()
    d.update(visual="mask_indicator", congruency=Congruency.CONGRUENT.value,
             output_dir=f"{cfg.output_dir}-mask_indicator", name=f"{cfg.name}-mask_indicator")
    return run_experiment(ExperimentConfig.from_dict(d))


def replay_manifest(path) -> dict[str, tuple[dict, dict]]:
    """Re-run a manifest's config; returns the stages whose output hashes changed."""
    old = RunManifest.load(path)
    run_experiment(ExperimentConfig.from_dict(old.config))
    new = RunManifest.load(Path(old.config["output_dir"]) / "manifest.json")
    return {k: (v, new.output_hashes().get(k)) for k, v in old.output_hashes().items()
            if new.output_hashes().get(k) != v}

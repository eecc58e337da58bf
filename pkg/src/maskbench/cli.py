"""``maskbench`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .corruptor import MaskType, apply_masks, load_plans, parse_ctm, plan_masks, save_plans
from .lexmask import (coverage, place_words, read_categories, read_tagged, read_transcripts,
                      read_wordset, top_nouns, write_transcripts, write_wordset)
from .scorer import score
from .signalio import extract_features, read_features, read_wav, write_features, write_wav

log = logging.getLogger("maskbench")


def _wavs(path: Path) -> list[Path]:
    return sorted(path.glob("*.wav")) if path.is_dir() else [path]


def cmd_features(a) -> int:
    src, out = Path(a.wav), Path(a.out)
    wavs = _wavs(src)
    if src.is_dir():
        out.mkdir(parents=True, exist_ok=True)
    for w in wavs:
        fm = extract_features(read_wav(w), a.n_mels, a.pitch)
        write_features(fm, out / f"{w.stem}.feat" if src.is_dir() else out)
    print(f"wrote features for {len(wavs)} file(s)")
    return 0


def cmd_mask(a) -> int:
    trans = read_transcripts(a.trans)
    timings = parse_ctm(Path(a.ctm).read_text())
    ws = read_wordset(a.wordset)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plans = []
    for wav_path in _wavs(Path(a.wav_dir)):
        utt = wav_path.stem
        if utt not in trans:
            log.warning("%s: no transcript, skipped", utt)
            continue
        w = read_wav(wav_path)
        plan = plan_masks(timings.get(utt, []), trans[utt], ws, a.expansion, a.duration, a.type, a.seed, utt, w.duration)
        write_wav(apply_masks(w, plan, a.noise_std), out / wav_path.name)
        plans.append(plan)
    save_plans(plans, out / "plans.json")
    masked = sum(len(p.masked_token_indices) for p in plans)
    print(f"masked {masked} tokens in {len(plans)} utterances; plans in {out / 'plans.json'}")
    return 0


def cmd_wordset(a) -> int:
    if a.which == "nouns":
        ws = top_nouns(read_tagged(a.tagged).values(), a.n)
    elif a.which == "places":
        vocab = {w for toks in read_transcripts(a.trans).values() for w in toks}
        ws = place_words(vocab, read_categories(a.categories), a.strict, source=a.categories)
    else:
        pct = coverage(read_transcripts(a.trans).values(), read_wordset(a.wordset))
        print(f"{pct:.1f}")
        return 0
    write_wordset(ws, a.out)
    print(f"{len(ws)} words -> {a.out}")
    return 0


def cmd_score(a) -> int:
    refs, hyps = read_transcripts(a.ref), read_transcripts(a.hyp)
    ids = sorted(refs)
    missing = [u for u in ids if u not in hyps]
    if missing:
        log.warning("%d references have no hypothesis; scored as empty", len(missing))
    masked = None
    if a.mask_plan:
        plans = load_plans(a.mask_plan)
        masked = [plans[u].masked_token_indices if u in plans else () for u in ids]
    rep = score([(refs[u], hyps.get(u, [])) for u in ids], masked, ids)
    Path(a.out).write_text(rep.to_json(indent=1) + "\n")
    rr = "n/a" if rep.rr_percent is None else f"{rep.rr_percent:.2f}"
    wer = "n/a" if rep.wer_percent is None else f"{rep.wer_percent:.2f}"
    print(f"WER {wer}  RR {rr}  (S={rep.S} D={rep.D} I={rep.I} N={rep.N})")
    return 0


def _load_visual(path, ids_path=None) -> dict[str, np.ndarray]:
    from .bench.experiment import read_visual_archive

    return read_visual_archive(path, ids_path or Path(path).with_suffix(".ids"))


def cmd_train(a) -> int:
    """Train config: features dir, transcripts, optional ids/visual, plus model/train sections."""
    from .bench.experiment import ModelSpec, _build, model_config_from_spec
    from .neuro.model import Example, Vocab
    from .neuro.train import TrainHyper, save_checkpoint, train

    base = Path(a.config).resolve().parent
    cfg = json.loads(Path(a.config).read_text())
    fdir = base / cfg["features"]
    trans = read_transcripts(base / cfg["transcripts"])
    ids = sorted(trans)
    if cfg.get("ids"):
        ids = [l.split()[0] for l in (base / cfg["ids"]).read_text().splitlines() if l.strip()]
    visual = _load_visual(base / cfg["visual_features"], base / cfg["visual_ids"]) if cfg.get("visual_features") else None
    spec = _build(ModelSpec, cfg.get("model"), "model")
    hyper = _build(TrainHyper, {**cfg.get("train", {}), "seed": cfg.get("seed", 0)}, "train")
    vocab = Vocab.from_corpus(trans[u] for u in ids)
    examples = [Example(read_features(fdir / f"{u}.feat").frames, vocab.encode(trans[u]),
                        None if visual is None else visual[u], u) for u in ids]
    vdim = None if visual is None else len(next(iter(visual.values())))
    mcfg = model_config_from_spec(spec, examples[0].features.shape[1], len(vocab), vdim)
    model, res = train(examples, mcfg, hyper)
    save_checkpoint(model, vocab, a.out, hyper.seed, {"losses": res.losses})
    print(f"trained {len(examples)} utterances, final loss {res.losses[-1]:.4f}" if res.losses else "no epochs run")
    return 0


def cmd_decode(a) -> int:
    from .neuro.train import load_checkpoint

    model, vocab, _ = load_checkpoint(a.ckpt)
    visual = _load_visual(a.visual, a.visual_ids) if a.visual else None
    if model.cfg.multimodal and visual is None:
        print("error: this checkpoint is multimodal; pass --visual", file=sys.stderr)
        return 2
    hyps = {}
    for f in sorted(Path(a.features).glob("*.feat")):
        v = visual[f.stem] if visual is not None else None
        hyps[f.stem] = vocab.decode(model.greedy_decode(read_features(f).frames, v, a.max_len))
    write_transcripts(hyps, a.out)
    print(f"decoded {len(hyps)} utterances -> {a.out}")
    return 0


def cmd_gradcheck(a) -> int:
    from .neuro import gradcheck as gc

    opts = json.loads(Path(a.config).read_text()) if a.config else {}
    seed = opts.get("seed", 0)
    suite = gc.standard_suite(seed)
    wanted = opts.get("graphs", list(suite))
    ok = True
    for name in wanted:
        rep = gc.grad_check(suite[name], tolerance=opts.get("tolerance", 1e-4), h=opts.get("h", 1e-4),
                            max_indices=opts.get("max_indices"), seed=seed, name=name)
        print(rep.line())
        ok &= rep.passed
    return 0 if ok else 1


def cmd_experiment(a) -> int:
    from .bench.experiment import ExperimentConfig, run_experiment, upper_bound_run

    cfg = ExperimentConfig.load(a.config)
    table = upper_bound_run(cfg) if a.upper_bound else run_experiment(cfg)
    print(table.render())
    return 0


def cmd_report(a) -> int:
    from .bench.experiment import ResultsTable
    from .bench.report import load_runs, qualitative_dump, render_dump

    root = Path(a.runs)
    results = root / "results.json"
    if results.exists():
        print(ResultsTable.from_dict(json.loads(results.read_text())).render())
    if a.qualitative:
        runs, refs, masked = load_runs(root)
        print()
        print(render_dump(qualitative_dump(runs, refs, masked, a.qualitative)))
    return 0


def cmd_synth(a) -> int:
    from .bench.synth import make_corpus, synthetic_config, write_corpus

    corpus = make_corpus(a.n, a.seed)
    paths = write_corpus(corpus, a.out)
    cfg_path = Path(a.out) / "experiment.json"
    cfg_path.write_text(json.dumps(synthetic_config(paths, root=a.out), indent=1) + "\n")
    print(f"{len(corpus.utterances)} utterances in {a.out}; config template {cfg_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maskbench", description=__doc__)
    p.add_argument("--version", action="version", version=f"maskbench {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("features", help="log-mel (+pitch) features for a wav file or directory")
    s.add_argument("--wav", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n-mels", type=int, default=40)
    s.add_argument("--pitch", action="store_true")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("mask", help="splice silence or noise over word-set words")
    s.add_argument("--wav-dir", required=True)
    s.add_argument("--ctm", required=True)
    s.add_argument("--trans", required=True)
    s.add_argument("--wordset", required=True)
    s.add_argument("--type", choices=[m.value for m in MaskType], default="silence")
    s.add_argument("--expansion", type=float, default=0.25)
    s.add_argument("--duration", type=float, default=0.5)
    s.add_argument("--noise-std", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("wordset", help="build or inspect masked-word sets")
    wsub = s.add_subparsers(dest="which", required=True)
    w = wsub.add_parser("nouns")
    w.add_argument("--tagged", required=True)
    w.add_argument("--n", type=int, default=100)
    w.add_argument("--out", required=True)
    w = wsub.add_parser("places")
    w.add_argument("--trans", required=True)
    w.add_argument("--categories", required=True)
    w.add_argument("--strict", action="store_true", help="only keep categories whose every unit is in the vocabulary")
    w.add_argument("--out", required=True)
    w = wsub.add_parser("coverage")
    w.add_argument("--trans", required=True)
    w.add_argument("--wordset", required=True)
    s.set_defaults(func=cmd_wordset)

    s = sub.add_parser("score", help="WER and recovery rate")
    s.add_argument("--ref", required=True)
    s.add_argument("--hyp", required=True)
    s.add_argument("--mask-plan")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("train", help="train an encoder-decoder from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("decode", help="greedy-decode a directory of .feat files")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--visual")
    s.add_argument("--visual-ids")
    s.add_argument("--max-len", type=int, default=50)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    s.add_argument("--config")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("experiment", help="run a multi-seed experiment")
    s.add_argument("--config", required=True)
    s.add_argument("--upper-bound", action="store_true", help="use the ground-truth mask indicator as visual input")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("report", help="results table and qualitative comparison")
    s.add_argument("--runs", required=True)
    s.add_argument("--qualitative", type=int, default=0)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("synth", help="write the synthetic tone corpus and a config for it")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--seed", type=int, default=1234)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * a.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except (OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

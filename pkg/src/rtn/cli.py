"""Command-line entry point: ``rtn <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import multiprocessing
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import synth
from .autodiff import NonFiniteError
from .evaluation import ABLATION_VARIANTS, interpolation_method, network_method, run_ablation, run_comparison
from .generation import (DEFAULT_BLEND, DEFAULT_SPACING, compress, decompress, read_stream, target_blend,
                         write_stream)
from .metrics import aco
from .model import DESK_PRESET, ModelConfig, generate_transition, load_checkpoint, save_checkpoint
from .motion import MotionSequence, TransitionWindow, read_motion, window_dataset, write_motion
from .terrain import Heightmap, detect_contacts, fit_terrain
from .training import (ConfigError, DivergenceError, TrainConfig, dump_config, load_config, prepare_stats,
                       train)

EXIT_OK = 0
EXIT_USAGE = 2  # argparse's own status for unknown flags
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_INVALID = 5
EXIT_DIVERGED = 6

log = logging.getLogger("rtn")


class MissingInput(FileNotFoundError):
    pass


class InvalidValue(ValueError):
    pass


# corpus helpers

def load_corpus(path) -> list[MotionSequence]:
    files = sorted(Path(path).glob("*.motion"))
    if not files:
        raise MissingInput(f"no .motion files in {path}")
    return [read_motion(f) for f in files]


def corpus_windows(args) -> tuple[list[TransitionWindow], list[TransitionWindow]]:
    seqs = load_corpus(args.corpus)
    held = args.held_out_actor
    if held is None:
        held = max(s.actor for s in seqs)
    tr, va = window_dataset(seqs, args.p, held_out_actor=held)
    if getattr(args, "terrain", None):
        attach_heightmaps(tr + va, args.terrain)
    if not tr or not va:
        raise InvalidValue("corpus yields an empty training or validation split")
    return tr, va


def _window_key(w: TransitionWindow) -> str:
    return f"s{w.source:04d}_f{w.start:05d}"


def attach_heightmaps(windows, directory) -> None:
    d = Path(directory)
    for w in windows:
        files = sorted(d.glob(f"{_window_key(w)}_*.hm"))
        if not files:
            raise MissingInput(f"no fitted heightmaps for window {_window_key(w)} in {d}")
        w.heightmaps = [Heightmap.load(f) for f in files]


def _model_overrides(args, mkw: dict) -> ModelConfig:
    kw = dict(DESK_PRESET) if getattr(args, "preset", "large") == "desk" else {}
    kw.update(mkw)
    kw["p"] = args.p
    if getattr(args, "terrain", None):
        kw["terrain_aware"] = True
    variant = getattr(args, "variant", "rtn")
    try:
        return ModelConfig.for_variant(variant, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _train_config(args) -> tuple[TrainConfig, dict]:
    if args.config:
        if not Path(args.config).exists():
            raise MissingInput(f"config file {args.config} not found")
        tconf, mkw = load_config(args.config)
    else:
        tconf, mkw = TrainConfig(), {}
    over = {}
    for key in ("seed", "epochs", "batch_size", "lr", "teacher_p", "teacher_mode"):
        v = getattr(args, key, None)
        if v is not None:
            over[key] = v
    over["p"] = args.p
    return replace(tconf, **over), mkw


def _header(tconf: TrainConfig, mkw: dict | None = None) -> str:
    return "".join(f"# {line}\n" for line in dump_config(tconf, mkw).splitlines())


def _load_ckpt(path):
    if not path or not Path(path).exists():
        raise MissingInput(f"checkpoint {path} not found")
    return load_checkpoint(path)


# subcommands

def cmd_synth(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = synth.gen_corpus(args.actors, args.per_actor, args.length, args.seed, args.roughness)
    for i, (seq, _) in enumerate(corpus):
        write_motion(out / f"clip_{i:04d}.motion", seq)
    (out / "manifest.txt").write_text(
        f"seed = {args.seed}\nactors = {args.actors}\nper_actor = {args.per_actor}\n"
        f"length = {args.length}\nroughness = {args.roughness}\nclips = {len(corpus)}\n"
    )
    if args.candidates:
        rng = np.random.default_rng(args.seed + 1)
        cdir = out / "candidates"
        cdir.mkdir(exist_ok=True)
        for i in range(args.candidates):
            hm = synth.gen_terrain(int(rng.integers(2**31)), size=args.candidate_size, roughness=args.roughness)
            hm.save(cdir / f"cand_{i:04d}.hm")
    print(f"wrote {len(corpus)} clips to {out}")


def _fit_window(job):
    w, fps, cands, top_k = job
    contacts = detect_contacts(w.positions, synth.FEET, fps=fps)
    return fit_terrain(w.positions, contacts, cands, top_k)


def cmd_terrain_fit(args) -> None:
    seqs = load_corpus(args.corpus)
    cfiles = sorted(Path(args.candidates).glob("*.hm"))
    if not cfiles:
        raise MissingInput(f"no candidate heightmaps in {args.candidates}")
    cands = [Heightmap.load(f) for f in cfiles]
    tr, va = window_dataset(seqs, args.p, held_out_actor=None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(w, seqs[w.source].fps, cands, args.top_k) for w in tr + va]
    if args.workers > 1:
        with multiprocessing.Pool(args.workers) as pool:
            fitted = pool.map(_fit_window, jobs)
    else:
        fitted = [_fit_window(j) for j in jobs]
    for (w, *_), maps in zip(jobs, fitted):
        for k, hm in enumerate(maps):
            hm.save(out / f"{_window_key(w)}_{k}.hm")
    print(f"fitted {len(tr) + len(va)} windows into {out}")


def cmd_train(args) -> None:
    tconf, mkw = _train_config(args)
    model = _model_overrides(args, mkw)
    tconf = replace(tconf, terrain_aware=model.terrain_aware)
    tr, va = corpus_windows(args)
    report, best, stats = train(tr, va, model, tconf)
    meta = {"seed": tconf.seed, "train_config": dump_config(tconf, mkw), "best_epoch": report.best_epoch}
    save_checkpoint(args.out, best, model, stats, meta)
    if args.report:
        Path(args.report).write_text(_header(tconf, mkw) + report.to_rows())
    print(report.to_table(), end="")


def cmd_generate(args) -> None:
    if args.blend_duration < 1 or args.blend_duration > args.p:
        raise InvalidValue(f"--blend-duration must lie in [1, {args.p}]")
    store, model, stats, meta = _load_ckpt(args.checkpoint)
    seqs = load_corpus(args.corpus)
    _, va = window_dataset(seqs, args.p, held_out_actor=args.held_out_actor
                           if args.held_out_actor is not None else max(s.actor for s in seqs))
    if args.terrain:
        attach_heightmaps(va, args.terrain)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sk = seqs[0].skeleton
    for i, w in enumerate(va[: args.limit]):
        gen = generate_transition(w, store, model, stats)
        if not args.no_blend:
            gen = target_blend(gen, w.y_target, args.blend_duration, w.p)
        pos = w.positions.copy()
        pos[w.s:w.target_index + 1] = gen
        write_motion(out / f"transition_{i:04d}.motion", MotionSequence(pos, sk, actor=w.actor))
    print(f"wrote {min(len(va), args.limit)} transitions to {out}")


def cmd_superres(args) -> None:
    store, model, stats, meta = _load_ckpt(args.checkpoint)
    if args.blend_duration is not None and args.blend_duration < 1:
        raise InvalidValue("--blend-duration must be at least 1")
    if not Path(args.input).exists():
        raise MissingInput(f"input clip {args.input} not found")
    seq = read_motion(args.input)
    stream = compress(seq, args.spacing)
    meta_out = {"seed": meta.get("seed", ""), "checkpoint": Path(args.checkpoint).name}
    if args.compressed:
        write_stream(args.compressed, stream, meta_out)
        stream, _ = read_stream(args.compressed)
    rec = decompress(stream, store, model, stats, args.blend_duration or "segment")
    if args.out:
        write_motion(args.out, rec)
    c = stream.context.shape[0]
    print(f"stored {stream.stored_frames} of {len(seq)} frames; "
          f"ACO {aco(rec.positions[c:], seq.positions[c:]):.4f} cm")


def cmd_eval(args) -> None:
    tr, va = corpus_windows(args)
    methods = {"INT": interpolation_method(load_corpus(args.corpus)[0].skeleton)}
    stats = None
    for spec in args.checkpoints:
        name, _, path = spec.partition("=")
        if not path:
            raise InvalidValue(f"checkpoint argument {spec!r} is not NAME=PATH")
        if not Path(path).exists():
            methods[name] = None
            continue
        store, model, st, _ = load_checkpoint(path)
        stats = stats or st
        methods[name] = network_method(store, model, st)
    if stats is None:
        stats = prepare_stats(tr, False)
    report = run_comparison(va, methods, stats)
    text = f"# seed = {args.seed}\n" + report.to_rows()
    if args.out:
        Path(args.out).write_text(text)
    if args.curves:
        Path(args.curves).write_text(f"# seed = {args.seed}\n" + report.curve_rows())
    print(report.to_table(), end="")


def cmd_ablate(args) -> None:
    tconf, mkw = _train_config(args)
    model = _model_overrides(args, mkw)
    tr, va = corpus_windows(args)
    report, _ = run_ablation(tr, va, args.variants, model, tconf)
    if args.out:
        Path(args.out).write_text(_header(tconf, mkw) + report.to_rows())
    print(report.to_table(), end="")


# parser

def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rtn", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, corpus=True):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=_positive_int, default=1, help="parallel window workers")
        p.add_argument("--config", default=None)
        p.add_argument("--p", type=_positive_int, default=30, help="transition length")
        if corpus:
            p.add_argument("--corpus", required=True)
            p.add_argument("--held-out-actor", type=int, default=None)
            p.add_argument("--terrain", default=None, help="directory of fitted heightmaps")
            p.add_argument("--preset", choices=["large", "desk"], default="large", help="layer sizes")

    p = sub.add_parser("synth", help="write a procedural corpus")
    common(p, corpus=False)
    p.add_argument("--out", required=True)
    p.add_argument("--actors", type=_positive_int, default=5)
    p.add_argument("--per-actor", type=_positive_int, default=10)
    p.add_argument("--length", type=_positive_int, default=300)
    p.add_argument("--roughness", type=float, default=0.08)
    p.add_argument("--candidates", type=int, default=0, help="also write N candidate heightmaps")
    p.add_argument("--candidate-size", type=float, default=10.0)
    p.set_defaults(func=cmd_synth, seed=0)

    p = sub.add_parser("terrain-fit", help="fit top-k heightmaps per window")
    common(p, corpus=False)
    p.add_argument("--corpus", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--top-k", type=_positive_int, default=5)
    p.set_defaults(func=cmd_terrain_fit)

    p = sub.add_parser("train", help="train a network")
    common(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--report", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=_positive_int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--teacher-p", type=float, default=None)
    p.add_argument("--teacher-mode", default=None)
    p.add_argument("--variant", default="rtn", choices=["rtn", "f-erd", "f-reslstm"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate transitions for validation windows")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--blend-duration", type=int, default=DEFAULT_BLEND)
    p.add_argument("--no-blend", action="store_true")
    p.add_argument("--limit", type=_positive_int, default=10)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("superres", help="compress a clip to keyframes and decompress it")
    common(p, corpus=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--compressed", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--spacing", type=int, default=DEFAULT_SPACING)
    p.add_argument("--blend-duration", type=int, default=None, help="default: the whole segment")
    p.set_defaults(func=cmd_superres)

    p = sub.add_parser("eval", help="compare INT with trained checkpoints")
    common(p)
    p.add_argument("checkpoints", nargs="*", help="NAME=PATH")
    p.add_argument("--out", default=None)
    p.add_argument("--curves", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare ablation variants")
    common(p)
    p.add_argument("--variants", nargs="+", default=list(ABLATION_VARIANTS), choices=ABLATION_VARIANTS)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"rtn: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInput, FileNotFoundError) as exc:
        print(f"rtn: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (DivergenceError, NonFiniteError) as exc:
        print(f"rtn: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"rtn: invalid value: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

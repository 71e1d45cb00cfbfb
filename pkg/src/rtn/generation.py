"""Target blending and temporal super-resolution by chained transitions."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .baselines import interpolation_baseline
from .model import ModelConfig, generate_transition
from .motion import CONTEXT_FRAMES, MotionSequence, NormStats, Skeleton, TransitionWindow, _fmt

DEFAULT_BLEND = 10
DEFAULT_SPACING = 30
_CLIP_MAGIC = "# rtn-compressed v1"


@dataclass
class BlendConfig:
    d: int = DEFAULT_BLEND

    def check(self, p: int) -> None:
        if not 1 <= self.d <= p:
            raise ValueError(f"blend duration {self.d} outside [1, {p}]")


def blend_weights(n: int, d: int) -> np.ndarray:
    """Weight of the end error for each of ``n`` frames ending at the target."""
    dist = np.arange(n - 1, -1, -1, dtype=np.float64)  # T - t
    w = 1.0 - dist / d
    w[dist >= d] = 0.0
    return w


def target_blend(generated, y_target, d: int = DEFAULT_BLEND, p: int | None = None) -> np.ndarray:
    """Spread the final-frame error linearly over the last ``d`` frames.

    ``generated`` holds frames s..T, ending with the predicted target. The
    last frame is set to ``y_target`` itself, so it matches bit for bit.
    """
    gen = np.asarray(generated, dtype=np.float64)
    y_target = np.asarray(y_target, dtype=np.float64)
    if gen.shape[1:] != y_target.shape:
        raise ValueError("target shape differs from generated frames")
    limit = gen.shape[0] - 1 if p is None else p
    BlendConfig(d).check(max(limit, 1))
    e = y_target - gen[-1]
    w = blend_weights(gen.shape[0], d)
    out = gen.copy()
    for i in np.nonzero(w)[0]:
        out[i] = gen[i] + w[i] * e
    out[-1] = y_target
    return out


# keyframe streams

@dataclass
class KeyframeStream:
    """What super-resolution stores: context frames plus (pose, next pose) targets."""

    context: np.ndarray  # (C, K, 3)
    targets: list[tuple[int, np.ndarray, np.ndarray]]  # (frame index, pose, next pose)
    length: int
    skeleton: Skeleton
    fps: float = 30.0
    spacing: int = DEFAULT_SPACING

    def __post_init__(self):
        idx = [t[0] for t in self.targets]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("targets must be strictly ordered")
        if idx and idx[0] <= self.context.shape[0] - 1:
            raise ValueError("first target overlaps the context")

    @property
    def stored_frames(self) -> int:
        return self.context.shape[0] + 2 * len(self.targets)


def keyframe_indices(length: int, spacing: int = DEFAULT_SPACING, context: int = CONTEXT_FRAMES) -> list[int]:
    """Target frames every ``spacing`` frames, plus the last frame that still has a successor."""
    if spacing < 2:
        raise ValueError("spacing must be at least 2 frames")
    last = length - 2
    if last < context + 1:
        raise ValueError(f"clip of {length} frames is too short to compress")
    idx = list(range(context - 1 + spacing, last + 1, spacing))
    if not idx or idx[-1] != last:
        idx.append(last)
    # a final segment needs at least one transition frame
    if len(idx) > 1 and idx[-1] - idx[-2] < 2:
        idx.pop(-2)
    return idx


def compress(seq: MotionSequence, spacing: int = DEFAULT_SPACING, context: int = CONTEXT_FRAMES) -> KeyframeStream:
    pos = seq.positions
    targets = [(t, pos[t].copy(), pos[t + 1].copy()) for t in keyframe_indices(len(seq), spacing, context)]
    return KeyframeStream(pos[:context].copy(), targets, len(seq), seq.skeleton, seq.fps, spacing)


def _segment_window(ctx: np.ndarray, pose, nxt, p: int) -> TransitionWindow:
    # transition frames are placeholders; generation never reads them
    filler = np.repeat(pose[None], p, axis=0)
    pos = np.concatenate([ctx, filler, pose[None], nxt[None]])
    return TransitionWindow(pos, p, context=ctx.shape[0])


def decompress(
    stream: KeyframeStream,
    params,
    config: ModelConfig,
    stats: NormStats,
    blend: int | str | None = "segment",
    heightmap=None,
) -> MotionSequence:
    """Rebuild the full-rate clip, feeding each blended segment back as context.

    ``blend="segment"`` spreads each end error over the whole segment. A short
    ramp would hand the next segment a context whose last frames carry an
    extra velocity of error / d, which the network then extrapolates.
    ``None`` disables blending.
    """
    if isinstance(blend, str) and blend != "segment":
        raise ValueError(f"unknown blend mode {blend!r}")
    c = stream.context.shape[0]
    frames = [f for f in stream.context]
    prev = c - 1
    for k, (t, pose, nxt) in enumerate(stream.targets):
        p = t - prev - 1
        win = _segment_window(np.stack(frames[-c:]), pose, nxt, p)
        hms = None if heightmap is None else [heightmap]
        try:
            gen = generate_transition(win, params, config, stats, hms)
        except ad.NonFiniteError as exc:
            raise ad.NonFiniteError(f"segment {k}: {exc}") from None
        if blend is not None:
            d = max(p, 1) if blend == "segment" else min(blend, max(p, 1))
            gen = target_blend(gen, pose, d, max(p, 1))
        frames.extend(gen)
        prev = t
    if stream.targets:
        frames.append(stream.targets[-1][2])
    out = np.stack(frames)[: stream.length]
    return MotionSequence(out, stream.skeleton, stream.fps)


def interpolate_stream(seq: MotionSequence, stream: KeyframeStream, method: str = "slerp") -> np.ndarray:
    """Interpolation baseline between the same keyframes (uses the clip's rotations at keyframes)."""
    c = stream.context.shape[0]
    out = seq.positions.copy()
    prev = c - 1
    for t, _, _ in stream.targets:
        p = t - prev - 1
        a = prev - (c - 1)
        q = None if seq.quats is None else seq.quats[a:t + 2]
        win = TransitionWindow(seq.positions[a:t + 2], p, quats=q, context=c)
        out[prev + 1:t + 1] = interpolation_baseline(win, method, seq.skeleton, include_target=True)
        prev = t
    return out


# file format

def write_stream(path, stream: KeyframeStream, meta: dict | None = None) -> None:
    sk = stream.skeleton
    lines = [
        _CLIP_MAGIC,
        f"joints {sk.k}",
        f"fps {_fmt(stream.fps)}",
        f"length {stream.length}",
        f"spacing {stream.spacing}",
        "names " + " ".join(sk.names),
        "parents " + " ".join(str(p) for p in sk.parents),
    ]
    if sk.offsets is not None:
        lines.append("offsets " + " ".join(_fmt(v) for v in sk.offsets.reshape(-1)))
    for key, value in sorted((meta or {}).items()):
        lines.append(f"meta {key} {value}")
    lines.append(f"context {stream.context.shape[0]}")
    lines += [" ".join(_fmt(v) for v in f.reshape(-1)) for f in stream.context]
    lines.append(f"targets {len(stream.targets)}")
    for t, pose, nxt in stream.targets:
        lines.append(f"target {t}")
        lines.append(" ".join(_fmt(v) for v in pose.reshape(-1)))
        lines.append(" ".join(_fmt(v) for v in nxt.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_stream(path) -> tuple[KeyframeStream, dict]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != _CLIP_MAGIC:
        raise ValueError(f"{path}: not a compressed clip")
    header, meta = {}, {}
    i = 1
    while not lines[i].startswith("context"):
        key, _, rest = lines[i].partition(" ")
        if key == "meta":
            mk, _, mv = rest.partition(" ")
            meta[mk] = mv
        else:
            header[key] = rest
        i += 1
    k = int(header["joints"])

    def row(s):
        return np.array([float(v) for v in s.split()]).reshape(k, 3)

    nc = int(lines[i].split()[1])
    ctx = np.stack([row(lines[i + 1 + j]) for j in range(nc)])
    i += 1 + nc
    nt = int(lines[i].split()[1])
    i += 1
    targets = []
    for _ in range(nt):
        t = int(lines[i].split()[1])
        targets.append((t, row(lines[i + 1]), row(lines[i + 2])))
        i += 3
    offsets = None
    if "offsets" in header:
        offsets = np.array([float(v) for v in header["offsets"].split()]).reshape(k, 3)
    sk = Skeleton(header["names"].split(), [int(p) for p in header["parents"].split()], offsets)
    stream = KeyframeStream(ctx, targets, int(header["length"]), sk, float(header["fps"]), int(header["spacing"]))
    return stream, meta

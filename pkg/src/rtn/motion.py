"""Motion sequences, the reversible frame representation, future context and windowing."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import quat

CONTEXT_FRAMES = 10
STD_FLOOR = 1e-6
# transition length -> (window width, window stride)
WINDOW_SPECS = {30: (50, 20), 60: (80, 20)}

_MOTION_MAGIC = "# rtn-motion v1"
_STATS_MAGIC = "# rtn-normstats v1"


@dataclass
class Skeleton:
    names: list[str]
    parents: list[int]
    offsets: np.ndarray | None = None

    def __post_init__(self):
        if len(self.names) != len(self.parents):
            raise ValueError("names and parents differ in length")
        if self.parents[0] != -1 or any(p < 0 for p in self.parents[1:]):
            raise ValueError("joint 0 must be the only root")
        for j, p in enumerate(self.parents[1:], start=1):
            if p >= j:
                raise ValueError(f"joint {j} has parent {p}; parents must precede children")
        if self.offsets is not None:
            self.offsets = np.asarray(self.offsets, dtype=np.float64).reshape(len(self.names), 3)

    @property
    def k(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass
class MotionSequence:
    positions: np.ndarray  # (L, K, 3) global, meters
    skeleton: Skeleton
    fps: float = 30.0
    actor: int = 0
    quats: np.ndarray | None = None  # (L, K, 4) local rotations

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise ValueError(f"positions must be (L, K, 3), got {self.positions.shape}")
        if self.positions.shape[0] < 2:
            raise ValueError("a motion sequence needs at least 2 frames")
        if self.positions.shape[1] != self.skeleton.k:
            raise ValueError("joint count differs from skeleton")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("non-finite joint positions")
        if self.fps <= 0:
            raise ValueError("frame rate must be positive")
        if self.quats is not None:
            self.quats = np.asarray(self.quats, dtype=np.float64)

    def __len__(self):
        return self.positions.shape[0]

    def slice(self, start: int, stop: int) -> "MotionSequence":
        q = None if self.quats is None else self.quats[start:stop]
        return replace(self, positions=self.positions[start:stop], quats=q)


# frame representation

def compute_root_velocities(positions) -> np.ndarray:
    """Per-frame root displacement; frame 0 copies frame 1."""
    positions = _positions(positions)
    if positions.shape[0] < 2:
        raise ValueError("need at least 2 frames for velocities")
    root = positions[:, 0, :]
    vel = np.empty_like(root)
    vel[1:] = root[1:] - root[:-1]
    vel[0] = vel[1]
    return vel


def raw_features(positions) -> np.ndarray:
    """Un-normalized frame vectors: root velocity followed by root-relative joints."""
    positions = _positions(positions)
    rel = positions - positions[:, :1, :]
    rel[:, 0, :] = compute_root_velocities(positions)
    return rel.reshape(positions.shape[0], -1)


def _positions(seq) -> np.ndarray:
    if isinstance(seq, MotionSequence):
        return seq.positions
    return np.asarray(seq, dtype=np.float64)


@dataclass
class NormStats:
    """Mean/std pairs for every normalized stream."""

    x_mean: np.ndarray
    x_std: np.ndarray
    vel_mean: np.ndarray
    vel_std: np.ndarray
    off_mean: np.ndarray
    off_std: np.ndarray
    patch_mean: np.ndarray | None = None
    patch_std: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.x_mean.shape[0]

    def streams(self) -> dict[str, np.ndarray]:
        out = {
            "x_mean": self.x_mean, "x_std": self.x_std,
            "vel_mean": self.vel_mean, "vel_std": self.vel_std,
            "off_mean": self.off_mean, "off_std": self.off_std,
        }
        if self.patch_mean is not None:
            out["patch_mean"] = self.patch_mean
            out["patch_std"] = self.patch_std
        return out

    def save(self, path) -> None:
        lines = [_STATS_MAGIC]
        for name, vec in self.streams().items():
            lines.append(f"{name} {vec.size} " + " ".join(_fmt(v) for v in vec))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "NormStats":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0].strip() != _STATS_MAGIC:
            raise ValueError(f"{path}: not a normstats file")
        return cls.from_streams(_parse_named_vectors(lines[1:]))

    @classmethod
    def from_streams(cls, d: dict[str, np.ndarray]) -> "NormStats":
        return cls(
            d["x_mean"], d["x_std"], d["vel_mean"], d["vel_std"], d["off_mean"], d["off_std"],
            d.get("patch_mean"), d.get("patch_std"),
        )


def _parse_named_vectors(lines) -> dict[str, np.ndarray]:
    out = {}
    for line in lines:
        if not line.strip():
            continue
        parts = line.split()
        name, n = parts[0], int(parts[1])
        vals = np.array([float(v) for v in parts[2:]])
        if vals.size != n:
            raise ValueError(f"stream {name}: expected {n} values, got {vals.size}")
        out[name] = vals
    return out


def _mean_std(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = samples.mean(axis=0)
    std = samples.std(axis=0)
    return mean, np.maximum(std, STD_FLOOR)


def compute_stats(windows: Sequence, patches: Sequence[np.ndarray] | None = None) -> NormStats:
    """Statistics over training data only.

    ``windows`` holds TransitionWindow objects or bare (L, K, 3) position
    arrays (the latter contribute to frame and velocity streams, and offsets
    are taken against their last frame). ``patches`` optionally holds raw
    (n, 169) patch samples.
    """
    if len(windows) == 0:
        raise ValueError("cannot compute statistics of an empty training set")
    xs, vels, offs = [], [], []
    for w in windows:
        if isinstance(w, TransitionWindow):
            pos, target = w.positions, w.target_index
        else:
            pos = _positions(w)
            target = pos.shape[0] - 1
        xs.append(raw_features(pos))
        vels.append((pos[1:] - pos[:-1]).reshape(pos.shape[0] - 1, -1))
        offs.append((pos[target][None] - pos[: target + 1]).reshape(target + 1, -1))
    x_mean, x_std = _mean_std(np.concatenate(xs))
    v_mean, v_std = _mean_std(np.concatenate(vels))
    o_mean, o_std = _mean_std(np.concatenate(offs))
    p_mean = p_std = None
    if patches is not None and len(patches):
        p_mean, p_std = _mean_std(np.concatenate([np.atleast_2d(p) for p in patches]))
    return NormStats(x_mean, x_std, v_mean, v_std, o_mean, o_std, p_mean, p_std)


def preprocess(seq, stats: NormStats) -> np.ndarray:
    """Global positions -> normalized frame vectors (L, 3K)."""
    feats = raw_features(seq)
    if feats.shape[1] != stats.d:
        raise ValueError(f"frame dimension {feats.shape[1]} does not match stats dimension {stats.d}")
    return (feats - stats.x_mean) / stats.x_std


def inverse_preprocess(frames, stats: NormStats, anchor) -> np.ndarray:
    """Normalized frame vectors -> global positions (L, K, 3).

    ``anchor`` is the global root position of the first frame.
    """
    if anchor is None:
        raise ValueError("inverse_preprocess needs the first-frame root anchor")
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    raw = frames * stats.x_std + stats.x_mean
    raw = raw.reshape(frames.shape[0], -1, 3)
    vel = raw[:, 0, :]
    root = np.empty_like(vel)
    root[0] = np.asarray(anchor, dtype=np.float64)
    if frames.shape[0] > 1:
        root[1:] = root[0] + np.cumsum(vel[1:], axis=0)
    out = raw + root[:, None, :]
    out[:, 0, :] = root
    return out


def build_target_vector(y_target, y_next, stats: NormStats) -> np.ndarray:
    """Processed target pose followed by normalized per-joint target velocity (2D)."""
    y_target = np.asarray(y_target, dtype=np.float64)
    y_next = np.asarray(y_next, dtype=np.float64)
    if y_target.shape != y_next.shape:
        raise ValueError("target frames differ in shape")
    # root slot of the pose carries the only root velocity the pair defines: y_T -> y_{T+1}
    raw = y_target - y_target[:1]
    raw[0] = y_next[0] - y_target[0]
    pose = (raw.reshape(-1) - stats.x_mean) / stats.x_std
    vel = ((y_next - y_target).reshape(-1) - stats.vel_mean) / stats.vel_std
    return np.concatenate([pose, vel])


def raw_global_offset(y_hat, y_target) -> np.ndarray:
    return (np.asarray(y_target, dtype=np.float64) - np.asarray(y_hat, dtype=np.float64)).reshape(-1)


def compute_global_offset(y_hat, y_target, stats: NormStats) -> np.ndarray:
    """Normalized signed per-axis offsets of every joint from the target (D)."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y_target = np.asarray(y_target, dtype=np.float64)
    if y_hat.shape != y_target.shape:
        raise ValueError("frame shapes differ")
    return (raw_global_offset(y_hat, y_target) - stats.off_mean) / stats.off_std


# windows

@dataclass
class TransitionWindow:
    """A fixed-length crop: past context, transition, target pair and tail."""

    positions: np.ndarray  # (L, K, 3)
    p: int
    actor: int = 0
    source: int = 0
    start: int = 0
    quats: np.ndarray | None = None
    heightmaps: list = field(default_factory=list)
    context: int = CONTEXT_FRAMES

    def __post_init__(self):
        need = self.context + self.p + 2
        if self.positions.shape[0] < need:
            raise ValueError(f"window of {self.positions.shape[0]} frames is shorter than {need}")

    @property
    def s(self) -> int:
        """Index of the first transition frame."""
        return self.context

    @property
    def target_index(self) -> int:
        return self.context + self.p

    @property
    def anchor(self) -> np.ndarray:
        return self.positions[0, 0, :].copy()

    @property
    def y_target(self) -> np.ndarray:
        return self.positions[self.target_index]

    @property
    def y_next(self) -> np.ndarray:
        return self.positions[self.target_index + 1]


def window_starts(length: int, width: int, offset: int) -> list[int]:
    return list(range(0, length - width + 1, offset))


def window_dataset(
    sequences: Sequence[MotionSequence],
    p: int = 30,
    width: int | None = None,
    offset: int | None = None,
    held_out_actor: int | None = None,
) -> tuple[list[TransitionWindow], list[TransitionWindow]]:
    """Overlapping windows; every window of ``held_out_actor`` goes to validation."""
    if width is None or offset is None:
        dw, do = WINDOW_SPECS.get(p, (CONTEXT_FRAMES + p + 10, 20))
        width = dw if width is None else width
        offset = do if offset is None else offset
    if width < CONTEXT_FRAMES + p + 2:
        raise ValueError(f"width {width} too small for transition length {p}")
    if offset < 1:
        raise ValueError("window offset must be positive")
    train, val = [], []
    for si, seq in enumerate(sequences):
        for st in window_starts(len(seq), width, offset):
            q = None if seq.quats is None else seq.quats[st:st + width].copy()
            w = TransitionWindow(seq.positions[st:st + width].copy(), p, seq.actor, si, st, q)
            (val if seq.actor == held_out_actor else train).append(w)
    return train, val


def rotate_positions(positions, angle: float, center) -> np.ndarray:
    """Rotate global positions about the vertical axis through ``center`` (x, z)."""
    positions = np.asarray(positions, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    cx, cz = float(center[0]), float(center[1])
    out = positions.copy()
    dx = positions[..., 0] - cx
    dz = positions[..., 2] - cz
    out[..., 0] = cx + c * dx + s * dz
    out[..., 2] = cz - s * dx + c * dz
    return out


def random_rotate(window: TransitionWindow, heightmap=None, angle: float = 0.0):
    """Rotate a window (and its terrain) about the up axis through the terrain center.

    Without a heightmap the axis passes through the first-frame root.
    """
    if not -np.pi - 1e-12 <= angle <= np.pi + 1e-12:
        raise ValueError("rotation angle must lie in [-pi, pi]")
    if heightmap is not None:
        center = heightmap.center
    else:
        center = (window.positions[0, 0, 0], window.positions[0, 0, 2])
    pos = rotate_positions(window.positions, angle, center)
    q = window.quats
    if q is not None:
        q = q.copy()
        q[:, 0, :] = quat.mul(quat.yaw(np.full(q.shape[0], angle)), q[:, 0, :])
    rotated = replace(window, positions=pos, quats=q, heightmaps=[])
    hm = None if heightmap is None else heightmap.rotated(angle, center)
    return rotated, hm


# file format

def _fmt(v: float) -> str:
    return "%.17g" % v


def write_motion(path, seq: MotionSequence) -> None:
    sk = seq.skeleton
    lines = [
        _MOTION_MAGIC,
        f"joints {sk.k}",
        f"fps {_fmt(seq.fps)}",
        f"actor {seq.actor}",
        "names " + " ".join(sk.names),
        "parents " + " ".join(str(p) for p in sk.parents),
    ]
    if sk.offsets is not None:
        lines.append("offsets " + " ".join(_fmt(v) for v in sk.offsets.reshape(-1)))
    lines.append(f"frames {len(seq)}")
    for frame in seq.positions.reshape(len(seq), -1):
        lines.append(" ".join(_fmt(v) for v in frame))
    if seq.quats is not None:
        lines.append(f"quaternions {seq.quats.shape[0]}")
        for frame in seq.quats.reshape(seq.quats.shape[0], -1):
            lines.append(" ".join(_fmt(v) for v in frame))
    Path(path).write_text("\n".join(lines) + "\n")


def read_motion(path) -> MotionSequence:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != _MOTION_MAGIC:
        raise ValueError(f"{path}: not a motion file")
    header = {}
    i = 1
    while i < len(lines):
        key, _, rest = lines[i].partition(" ")
        header[key] = rest
        i += 1
        if key == "frames":
            break
    k = int(header["joints"])
    n = int(header["frames"])
    pos = np.array([[float(v) for v in lines[i + f].split()] for f in range(n)]).reshape(n, k, 3)
    i += n
    quats = None
    if i < len(lines) and lines[i].startswith("quaternions"):
        nq = int(lines[i].split()[1])
        quats = np.array([[float(v) for v in lines[i + 1 + f].split()] for f in range(nq)]).reshape(nq, k, 4)
    offsets = None
    if "offsets" in header:
        offsets = np.array([float(v) for v in header["offsets"].split()]).reshape(k, 3)
    sk = Skeleton(header["names"].split(), [int(p) for p in header["parents"].split()], offsets)
    return MotionSequence(pos, sk, float(header["fps"]), int(header["actor"]), quats)

"""Procedural 22-joint locomotion and terrain used as a stand-in training corpus."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import RectBivariateSpline

from . import quat
from .motion import MotionSequence, Skeleton
from .terrain import FILTER_CELL, ContactTrack, Heightmap

JOINTS = [
    ("Hips", -1, (0.0, 0.0, 0.0)),
    ("Spine", 0, (0.0, 0.10, 0.0)),
    ("Spine1", 1, (0.0, 0.12, 0.0)),
    ("Spine2", 2, (0.0, 0.12, 0.0)),
    ("Neck", 3, (0.0, 0.15, 0.0)),
    ("Head", 4, (0.0, 0.10, 0.0)),
    ("LeftShoulder", 3, (0.05, 0.10, 0.0)),
    ("LeftArm", 6, (0.13, 0.0, 0.0)),
    ("LeftForeArm", 7, (0.0, -0.28, 0.0)),
    ("LeftHand", 8, (0.0, -0.25, 0.0)),
    ("RightShoulder", 3, (-0.05, 0.10, 0.0)),
    ("RightArm", 10, (-0.13, 0.0, 0.0)),
    ("RightForeArm", 11, (0.0, -0.28, 0.0)),
    ("RightHand", 12, (0.0, -0.25, 0.0)),
    ("LeftUpLeg", 0, (0.10, -0.05, 0.0)),
    ("LeftLeg", 14, (0.0, -0.44, 0.0)),
    ("LeftFoot", 15, (0.0, -0.44, 0.0)),
    ("LeftToe", 16, (0.0, -0.07, 0.13)),
    ("RightUpLeg", 0, (-0.10, -0.05, 0.0)),
    ("RightLeg", 18, (0.0, -0.44, 0.0)),
    ("RightFoot", 19, (0.0, -0.44, 0.0)),
    ("RightToe", 20, (0.0, -0.07, 0.13)),
]
THIGH = SHIN = 0.44
MAX_REACH = THIGH + SHIN - 0.005
TOE_TO_ANKLE = np.array([0.0, 0.07, -0.13])
FEET = [17, 21]  # toe joints touch the ground

GAITS = ("walk", "run", "turn", "leap")


def skeleton() -> Skeleton:
    return Skeleton(
        [j[0] for j in JOINTS],
        [j[1] for j in JOINTS],
        np.array([j[2] for j in JOINTS]),
    )


@dataclass
class GaitSpec:
    kind: str = "walk"
    speed: float = 1.3  # m/s
    period: float = 32.0  # frames per full stride cycle
    heading: float = 0.0  # initial heading, radians
    turn_rate: float = 0.0  # rad/s
    actor: int = 0
    seed: int = 0
    duty: float | None = None
    swing_height: float | None = None
    step_width: float = 0.10
    arm_swing: float = 0.35
    lean: float = 0.05
    hips_height: float = 0.96
    speed_wobble: float = 0.0
    maneuver: float = 0.0  # 0 keeps a steady course; 1 adds frequent heading and pace changes
    start: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in GAITS:
            raise ValueError(f"unknown gait {self.kind!r}")
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        if self.period < 8:
            raise ValueError("stride period must be at least 8 frames")
        defaults = {"walk": (0.62, 0.10), "turn": (0.62, 0.10), "run": (0.38, 0.16), "leap": (0.32, 0.26)}
        duty, swing = defaults[self.kind]
        if self.duty is None:
            self.duty = duty
        if self.swing_height is None:
            self.swing_height = swing


def _frame(b: np.ndarray, pole: np.ndarray) -> np.ndarray:
    """Rotation taking rest (down, forward) bone frame to (b, pole-orthogonalized)."""
    n = pole - np.dot(pole, b) * b
    n /= np.linalg.norm(n)
    c = np.cross(b, n)
    rest = np.array([[0.0, 0.0, -1.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])  # columns b0, n0, c0
    return np.stack([b, n, c], axis=1) @ rest.T


def _smoothstep(u):
    return u * u * (3.0 - 2.0 * u)


def _maneuvers(rng, ts, fps, amount):
    """Smooth piecewise-constant heading offsets and pace factors."""
    turn = np.zeros(len(ts))
    pace = np.ones(len(ts))
    t = ts[0] + rng.uniform(0.5, 1.5) * fps
    v = 1.0
    while t < ts[-1]:
        dh = amount * rng.uniform(-1.2, 1.2)
        dv = float(np.clip(1.0 + amount * rng.uniform(-0.4, 0.3), 0.5, 1.4))
        u = _smoothstep(np.clip((ts - t) / (0.5 * fps), 0.0, 1.0))
        turn += dh * u
        pace = pace + (dv - v) * u
        v = dv
        t += rng.uniform(1.0, 2.0) * fps
    return turn, pace


def gen_gait(
    spec: GaitSpec,
    length: int,
    terrain: Callable | Heightmap | None = None,
    fps: float = 30.0,
) -> tuple[MotionSequence, ContactTrack]:
    """Kinematic gait over an optional terrain.

    Returns the sequence (with local quaternions) and the scripted toe
    contacts. Planted toes are exactly stationary.
    """
    if isinstance(terrain, Heightmap):
        ground = terrain.sample
    elif terrain is None:
        def ground(x, z):
            return np.zeros_like(np.asarray(x, dtype=np.float64))
    else:
        ground = terrain
    rng = np.random.default_rng(spec.seed)
    sk = skeleton()
    pad = int(np.ceil(spec.period)) * 2
    ts = np.arange(-pad, length + pad)
    wobble_phase = rng.uniform(0, 2 * np.pi)
    speed = spec.speed * (1.0 + spec.speed_wobble * np.sin(2 * np.pi * ts / (4.0 * fps) + wobble_phase))
    heading = spec.heading + spec.turn_rate * ts / fps
    if spec.maneuver > 0:
        turn, pace = _maneuvers(rng, ts, fps, spec.maneuver)
        heading = heading + turn
        speed = speed * pace
    fwd = np.stack([np.sin(heading), np.zeros_like(heading), np.cos(heading)], axis=1)
    lat = np.stack([np.cos(heading), np.zeros_like(heading), -np.sin(heading)], axis=1)
    step = speed[:, None] * fwd / fps
    path = np.cumsum(step, axis=0)
    path -= path[pad]
    path[:, 0] += spec.start[0]
    path[:, 2] += spec.start[1]

    def at(t_float):
        i = np.clip(t_float + pad, 0, len(ts) - 1)
        i0 = int(np.floor(i))
        i1 = min(i0 + 1, len(ts) - 1)
        f = i - i0
        return (1 - f) * path[i0] + f * path[i1], (1 - f) * heading[i0] + f * heading[i1]

    period, duty = spec.period, spec.duty
    phase0 = rng.uniform(0, 1)
    swing_h = spec.swing_height if spec.speed > 0 else 0.0

    plant_cache: dict[tuple[int, int], tuple[np.ndarray, float]] = {}

    def plant(foot: int, cyc: int):
        key = (foot, cyc)
        if key not in plant_cache:
            off = 0.0 if foot == 0 else 0.5
            t_mid = (cyc - phase0 - off + 0.5 * duty) * period
            p, h = at(t_mid)
            side = 1.0 if foot == 0 else -1.0
            lat_v = np.array([np.cos(h), 0.0, -np.sin(h)])
            fwd_v = np.array([np.sin(h), 0.0, np.cos(h)])
            toe = p + side * spec.step_width * lat_v + 0.10 * fwd_v
            toe[1] = float(ground(np.array([toe[0]]), np.array([toe[2]]))[0])
            plant_cache[key] = (toe, h)
        return plant_cache[key]

    k = sk.k
    quats = np.zeros((length, k, 4))
    quats[..., 0] = 1.0
    roots = np.zeros((length, 3))
    contacts = np.zeros((length, 2), dtype=bool)
    toes = np.zeros((length, 2, 3))
    toe_yaw = np.zeros((length, 2))
    phases = np.zeros((length, 2))
    for t in range(length):
        for foot in range(2):
            off = 0.0 if foot == 0 else 0.5
            x = t / period + phase0 + off
            cyc = int(np.floor(x))
            ph = x - cyc
            phases[t, foot] = ph
            p0, h0 = plant(foot, cyc)
            if ph < duty:
                toes[t, foot], toe_yaw[t, foot] = p0, h0
                contacts[t, foot] = True
            else:
                p1, h1 = plant(foot, cyc + 1)
                u = (ph - duty) / (1.0 - duty)
                s = _smoothstep(u)
                toes[t, foot] = (1 - s) * p0 + s * p1
                toes[t, foot, 1] += swing_h * np.sin(np.pi * u)
                toe_yaw[t, foot] = (1 - s) * h0 + s * h1
                contacts[t, foot] = spec.speed == 0

    bob = 0.02 if spec.kind in ("walk", "turn") else 0.04
    for t in range(length):
        p, h = path[t + pad], heading[t + pad]
        ph = phases[t, 0]
        hips_rot = quat.yaw(np.array(h))
        lat_v = lat[t + pad]
        root = p + 0.02 * np.sin(2 * np.pi * ph) * lat_v * (spec.speed > 0)
        gref = float(ground(np.array([root[0]]), np.array([root[2]]))[0])
        y = gref + spec.hips_height + bob * np.cos(4 * np.pi * ph) * (spec.speed > 0)
        ankles = []
        for foot in range(2):
            ankle = toes[t, foot] + quat.rotate(quat.yaw(np.array(toe_yaw[t, foot])), TOE_TO_ANKLE)
            ankles.append(ankle)
            hip_off = quat.rotate(hips_rot, sk.offsets[14 if foot == 0 else 18])
            horiz = np.hypot(root[0] + hip_off[0] - ankle[0], root[2] + hip_off[2] - ankle[2])
            limit = ankle[1] - hip_off[1] + np.sqrt(max(MAX_REACH**2 - horiz**2, 0.0))
            y = min(y, limit)
        root[1] = y
        roots[t] = root

        ph_l = phases[t, 0]
        swing = spec.arm_swing * np.sin(2 * np.pi * ph_l) * min(1.0, spec.speed)
        twist = 0.08 * np.sin(2 * np.pi * ph_l) * min(1.0, spec.speed)
        lean = spec.lean * (1.0 + 0.3 * spec.speed)
        ex = np.array([1.0, 0.0, 0.0])
        quats[t, 0] = hips_rot
        quats[t, 1] = quat.from_axis_angle(ex, np.array(lean))
        quats[t, 2] = quat.yaw(np.array(-twist))
        quats[t, 7] = quat.from_axis_angle(ex, np.array(swing))
        quats[t, 11] = quat.from_axis_angle(ex, np.array(-swing))
        bend = -(0.25 + 0.5 * min(1.0, spec.speed / 3.0))
        quats[t, 8] = quat.from_axis_angle(ex, np.array(bend))
        quats[t, 12] = quat.from_axis_angle(ex, np.array(bend))

        fwd_v = fwd[t + pad]
        hip_rot_m = _quat_matrix(hips_rot)
        for foot, (up, knee_j, ank_j) in enumerate(((14, 15, 16), (18, 19, 20))):
            hip = root + hip_rot_m @ sk.offsets[up]
            ankle = ankles[foot]
            d_vec = ankle - hip
            d = np.linalg.norm(d_vec)
            e = d_vec / d
            d = min(d, MAX_REACH)
            n = fwd_v - np.dot(fwd_v, e) * e
            n /= np.linalg.norm(n)
            a = 0.5 * d
            knee = hip + a * e + np.sqrt(THIGH**2 - a * a) * n
            r_up = _frame((knee - hip) / THIGH, fwd_v)
            ankle_hit = hip + d * e
            r_knee = _frame((ankle_hit - knee) / np.linalg.norm(ankle_hit - knee), fwd_v)
            g_up = quat.from_matrix(r_up)
            g_knee = quat.from_matrix(r_knee)
            g_foot = quat.yaw(np.array(toe_yaw[t, foot]))
            quats[t, up] = quat.mul(quat.inv(hips_rot), g_up)
            quats[t, knee_j] = quat.mul(quat.inv(g_up), g_knee)
            quats[t, ank_j] = quat.mul(quat.inv(g_knee), g_foot)

    positions = quat.forward_kinematics(quats, roots, sk.offsets, sk.parents)
    seq = MotionSequence(positions, sk, fps, spec.actor, quats)
    return seq, ContactTrack(contacts, list(FEET))


def _quat_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


class TerrainField:
    """Smooth value-noise elevation defined over a square region."""

    def __init__(self, seed: int, roughness: float, extent: float = 80.0, spacing: float = 2.0,
                 center=(0.0, 0.0), obstacle: dict | None = None):
        rng = np.random.default_rng(seed)
        n = int(np.ceil(extent / spacing)) + 4
        self.knots = center[0] - 0.5 * (n - 1) * spacing + spacing * np.arange(n), \
            center[1] - 0.5 * (n - 1) * spacing + spacing * np.arange(n)
        values = roughness * rng.standard_normal((n, n))
        self.flat = roughness == 0
        self.spline = None if self.flat else RectBivariateSpline(self.knots[0], self.knots[1], values, kx=3, ky=3)
        self.obstacle = obstacle

    def __call__(self, x, z):
        x = np.asarray(x, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        h = np.zeros(np.broadcast(x, z).shape) if self.flat else self.spline.ev(x, z)
        if self.obstacle is not None:
            o = self.obstacle
            inside = (x >= o["x0"]) & (x <= o["x1"]) & (z >= o["z0"]) & (z <= o["z1"])
            h = h + o["height"] * inside
        return h


def gen_terrain(
    seed: int,
    size: float = 8.0,
    roughness: float = 0.1,
    center=(0.0, 0.0),
    cell: float = FILTER_CELL,
    obstacle: dict | None = None,
) -> Heightmap:
    """Square heightmap of side ``size`` meters sampled from a seeded noise field.

    ``obstacle`` = dict(x0, z0, x1, z1, height) raises a rectangular plateau.
    """
    if size <= 0:
        raise ValueError("terrain size must be positive")
    field = TerrainField(seed, roughness, extent=size + 8.0, center=center, obstacle=obstacle)
    n = int(np.ceil(size / cell)) + 1
    origin = (center[0] - 0.5 * (n - 1) * cell, center[1] - 0.5 * (n - 1) * cell)
    xs = origin[0] + cell * np.arange(n)
    zs = origin[1] + cell * np.arange(n)
    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    return Heightmap(field(gx, gz), cell, origin)


def random_spec(rng: np.random.Generator, actor: int, seed: int, style: dict, maneuver: float = 1.0) -> GaitSpec:
    kind = GAITS[rng.integers(len(GAITS))]
    if kind in ("walk", "turn"):
        speed, period = rng.uniform(0.9, 1.7), rng.uniform(30, 38)
    elif kind == "run":
        speed, period = rng.uniform(2.4, 3.4), rng.uniform(20, 25)
    else:
        speed, period = rng.uniform(2.0, 2.8), rng.uniform(26, 30)
    turn = 0.0
    if kind == "turn":
        turn = rng.choice([-1.0, 1.0]) * rng.uniform(0.4, 0.9)
    return GaitSpec(
        kind=kind,
        speed=speed,
        period=period,
        heading=rng.uniform(-np.pi, np.pi),
        turn_rate=turn,
        actor=actor,
        seed=seed,
        speed_wobble=rng.uniform(0.0, 0.15),
        maneuver=maneuver,
        **style,
    )


def actor_style(actor: int, seed: int = 0) -> dict:
    rng = np.random.default_rng(10_000 + 97 * actor + seed)
    return {
        "step_width": rng.uniform(0.08, 0.13),
        "arm_swing": rng.uniform(0.25, 0.5),
        "lean": rng.uniform(0.02, 0.08),
        "hips_height": rng.uniform(0.93, 0.98),
    }


def gen_corpus(
    n_actors: int = 5,
    per_actor: int = 10,
    length: int = 300,
    seed: int = 0,
    roughness: float = 0.08,
    maneuver: float = 1.0,
) -> list[tuple[MotionSequence, ContactTrack]]:
    """Clips for ``n_actors`` actors, each walking over its own noise terrain.

    ``maneuver`` scales the random heading and pace changes inside each clip.
    """
    rng = np.random.default_rng(seed)
    out = []
    for actor in range(n_actors):
        style = actor_style(actor, seed)
        for i in range(per_actor):
            clip_seed = int(rng.integers(2**31))
            spec = random_spec(rng, actor, clip_seed, style, maneuver)
            field = TerrainField(clip_seed, roughness, extent=2 * 3.5 * length / 30.0 + 10.0)
            out.append(gen_gait(spec, length, field))
    return out

"""Heightmaps, foot contacts, terrain fitting refinements and local terrain patches."""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

PATCH_SIZE = 13
PATCH_SPAN = 2.06  # meters, outer sample to outer sample
PATCH_DIM = PATCH_SIZE * PATCH_SIZE
FILTER_SIZE = 33
FILTER_SPAN = 1.3
FILTER_SIGMA = 5.0  # cells
FILTER_CELL = FILTER_SPAN / (FILTER_SIZE - 1)

CONTACT_SPEED = 0.15  # m/s
CONTACT_BAND = 0.05  # m
RBF_LENGTH_SCALE = 0.3  # m
RBF_JITTER = 1e-10
TRAVERSAL_WEIGHT = 10.0

_HM_MAGIC = "# rtn-heightmap v1"


class OutOfBoundsError(ValueError):
    pass


@dataclass
class Heightmap:
    """Elevation grid; ``elev[i, j]`` sits at ``(x0 + i*cell, z0 + j*cell)``.

    ``angle`` and ``pivot`` describe a rigid rotation of the whole terrain
    about the vertical axis; sampling maps world points back into the grid.
    """

    elev: np.ndarray
    cell: float = FILTER_CELL
    origin: tuple[float, float] = (0.0, 0.0)
    angle: float = 0.0
    pivot: tuple[float, float] | None = None

    def __post_init__(self):
        self.elev = np.asarray(self.elev, dtype=np.float64)
        if self.elev.ndim != 2 or min(self.elev.shape) < 2:
            raise ValueError("heightmap needs a 2-D grid of at least 2x2")
        if self.cell <= 0:
            raise ValueError("cell size must be positive")
        if not np.all(np.isfinite(self.elev)):
            raise ValueError("non-finite elevations")
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def shape(self):
        return self.elev.shape

    @property
    def center(self) -> tuple[float, float]:
        nx, nz = self.elev.shape
        return (self.origin[0] + 0.5 * (nx - 1) * self.cell, self.origin[1] + 0.5 * (nz - 1) * self.cell)

    def grid_coords(self) -> tuple[np.ndarray, np.ndarray]:
        nx, nz = self.elev.shape
        xs = self.origin[0] + self.cell * np.arange(nx)
        zs = self.origin[1] + self.cell * np.arange(nz)
        return np.meshgrid(xs, zs, indexing="ij")

    def rotated(self, angle: float, pivot=None) -> "Heightmap":
        pivot = self.center if pivot is None else (float(pivot[0]), float(pivot[1]))
        if self.angle != 0.0 and self.pivot is not None and not np.allclose(self.pivot, pivot):
            raise ValueError("cannot compose rotations about different pivots")
        return replace(self, angle=self.angle + angle, pivot=pivot)

    def _to_grid(self, x, z):
        x = np.asarray(x, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        if self.angle != 0.0:
            # inverse of the rotation applied to positions
            c, s = np.cos(self.angle), np.sin(self.angle)
            px, pz = self.pivot
            dx, dz = x - px, z - pz
            x, z = px + c * dx - s * dz, pz + s * dx + c * dz
        u = (x - self.origin[0]) / self.cell
        v = (z - self.origin[1]) / self.cell
        return u, v

    def _bilinear(self, x, z, clamp: bool):
        nx, nz = self.elev.shape
        u, v = self._to_grid(x, z)
        if not clamp:
            tol = 1e-9
            if np.any(u < -tol) or np.any(u > nx - 1 + tol) or np.any(v < -tol) or np.any(v > nz - 1 + tol):
                raise OutOfBoundsError("sample outside heightmap bounds")
        inside_u = (u >= 0) & (u <= nx - 1)
        inside_v = (v >= 0) & (v <= nz - 1)
        u = np.clip(u, 0.0, nx - 1.0)
        v = np.clip(v, 0.0, nz - 1.0)
        i0 = np.minimum(np.floor(u).astype(int), nx - 2)
        j0 = np.minimum(np.floor(v).astype(int), nz - 2)
        fu = u - i0
        fv = v - j0
        h = self.elev
        h00 = h[i0, j0]
        h10 = h[i0 + 1, j0]
        h01 = h[i0, j0 + 1]
        h11 = h[i0 + 1, j0 + 1]
        val = (1 - fu) * (1 - fv) * h00 + fu * (1 - fv) * h10 + (1 - fu) * fv * h01 + fu * fv * h11
        du = ((1 - fv) * (h10 - h00) + fv * (h11 - h01)) * inside_u
        dv = ((1 - fu) * (h01 - h00) + fu * (h11 - h10)) * inside_v
        return val, du, dv, i0, j0, fu, fv

    def sample(self, x, z, clamp: bool = True) -> np.ndarray:
        return self._bilinear(x, z, clamp)[0]

    def sample_grad(self, x, z) -> tuple[np.ndarray, np.ndarray]:
        """World-space (dH/dx, dH/dz) of the clamped bilinear surface."""
        _, du, dv, *_ = self._bilinear(x, z, True)
        gx, gz = du / self.cell, dv / self.cell
        if self.angle != 0.0:
            c, s = np.cos(self.angle), np.sin(self.angle)
            gx, gz = c * gx + s * gz, -s * gx + c * gz
        return gx, gz

    def nearest_cell(self, x: float, z: float) -> tuple[int, int]:
        u, v = self._to_grid(x, z)
        nx, nz = self.elev.shape
        return int(np.clip(np.rint(u), 0, nx - 1)), int(np.clip(np.rint(v), 0, nz - 1))

    def save(self, path) -> None:
        nx, nz = self.elev.shape
        lines = [
            _HM_MAGIC,
            f"rows {nx}",
            f"cols {nz}",
            f"cell {self.cell!r}",
            f"origin {self.origin[0]!r} {self.origin[1]!r}",
        ]
        lines += [" ".join("%.17g" % v for v in row) for row in self.elev]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Heightmap":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0].strip() != _HM_MAGIC:
            raise ValueError(f"{path}: not a heightmap file")
        nx = int(lines[1].split()[1])
        nz = int(lines[2].split()[1])
        cell = float(lines[3].split()[1])
        ox, oz = (float(v) for v in lines[4].split()[1:3])
        elev = np.array([[float(v) for v in lines[5 + i].split()] for i in range(nx)])
        if elev.shape != (nx, nz):
            raise ValueError(f"{path}: grid shape {elev.shape} != ({nx}, {nz})")
        return cls(elev, cell, (ox, oz))


def flat_heightmap(center, size: float, height: float = 0.0, cell: float = FILTER_CELL) -> Heightmap:
    n = int(np.ceil(size / cell)) + 1
    origin = (center[0] - 0.5 * (n - 1) * cell, center[1] - 0.5 * (n - 1) * cell)
    return Heightmap(np.full((n, n), float(height)), cell, origin)


# contacts

@dataclass
class ContactTrack:
    flags: np.ndarray  # (L, n_feet) bool
    feet: list[int]


def _positions(seq) -> np.ndarray:
    return seq.positions if hasattr(seq, "positions") else np.asarray(seq, dtype=np.float64)


def detect_contacts(
    seq,
    feet: Sequence[int],
    speed_threshold: float = CONTACT_SPEED,
    height_band: float = CONTACT_BAND,
    fps: float | None = None,
    min_window: int | None = None,
) -> ContactTrack:
    """Contact iff the foot is slow and near its local minimum height.

    Speed is the smaller of the backward and forward frame differences; the
    local minimum is taken over a centered half-second window.
    """
    pos = _positions(seq)
    fps = fps if fps is not None else getattr(seq, "fps", 30.0)
    k = pos.shape[1]
    for f in feet:
        if not 0 <= f < k:
            raise IndexError(f"foot joint index {f} outside skeleton of {k} joints")
    half = (min_window if min_window is not None else int(round(fps / 2))) // 2
    n = pos.shape[0]
    flags = np.zeros((n, len(feet)), dtype=bool)
    for c, f in enumerate(feet):
        p = pos[:, f, :]
        step = np.linalg.norm(p[1:] - p[:-1], axis=1) * fps
        back = np.concatenate([step[:1], step])
        ahead = np.concatenate([step, step[-1:]])
        speed = np.minimum(back, ahead)
        y = p[:, 1]
        for t in range(n):
            lo = y[max(0, t - half): t + half + 1].min()
            flags[t, c] = speed[t] < speed_threshold and y[t] - lo <= height_band
    return ContactTrack(flags, list(feet))


def contact_points(seq, contacts: ContactTrack) -> np.ndarray:
    """One (x, y, z) point per uninterrupted stance run of each foot."""
    pos = _positions(seq)
    pts = []
    for c, f in enumerate(contacts.feet):
        run: list[int] = []
        for t in range(len(contacts.flags) + 1):
            on = t < len(contacts.flags) and contacts.flags[t, c]
            if on:
                run.append(t)
            elif run:
                pts.append(pos[run, f, :].mean(axis=0))
                run = []
    return np.array(pts).reshape(-1, 3)


def terrain_score(seq, contacts: ContactTrack, hm: Heightmap, traversal_weight: float = TRAVERSAL_WEIGHT) -> float:
    """Floating at contacts plus weighted traversal below ground; lower is better."""
    pos = _positions(seq)
    cost = 0.0
    for c, f in enumerate(contacts.feet):
        foot = pos[:, f, :]
        ground = hm.sample(foot[:, 0], foot[:, 2], clamp=False)
        diff = foot[:, 1] - ground
        cost += float(np.sum(diff[contacts.flags[:, c]] ** 2))
        cost += traversal_weight * float(np.sum(np.maximum(0.0, -diff) ** 2))
    return cost


# refinements

def logistic_kernel(r, length_scale: float = RBF_LENGTH_SCALE):
    a = np.abs(np.asarray(r, dtype=np.float64)) / length_scale
    # 1 / (e^a + 2 + e^-a) written to stay finite for large a
    e = np.exp(-a)
    return e / (1.0 + e) ** 2


def rbf_refine(
    hm: Heightmap,
    contacts: ContactTrack,
    seq,
    length_scale: float = RBF_LENGTH_SCALE,
    jitter: float = RBF_JITTER,
    points: np.ndarray | None = None,
) -> Heightmap:
    """Add an RBF correction so every contact point lies on the sampled surface.

    The system is solved against the grid-discretized kernels sampled the same
    way the terrain is, so the corrected bilinear surface interpolates the
    contact offsets exactly (up to the ridge jitter).
    """
    if hm.angle != 0.0:
        raise ValueError("refine an unrotated heightmap")
    pts = contact_points(seq, contacts) if points is None else np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("rbf_refine needs at least one contact point")
    ground = hm.sample(pts[:, 0], pts[:, 2], clamp=False)
    delta = pts[:, 1] - ground
    if not np.any(delta):
        return replace(hm, elev=hm.elev.copy())
    gx, gz = hm.grid_coords()
    basis = np.stack(
        [logistic_kernel(np.hypot(gx - p[0], gz - p[2]), length_scale) for p in pts]
    )
    n = len(pts)
    a = np.empty((n, n))
    for k in range(n):
        probe = Heightmap(basis[k], hm.cell, hm.origin)
        a[:, k] = probe.sample(pts[:, 0], pts[:, 2])
    w = np.linalg.solve(a + jitter * np.eye(n), delta)
    corr = np.tensordot(w, basis, axes=1)
    return replace(hm, elev=hm.elev + corr)


def gaussian_filter_grid(size: int = FILTER_SIZE, sigma: float = FILTER_SIGMA) -> np.ndarray:
    half = size // 2
    i = np.arange(size) - half
    g = np.exp(-(i[:, None] ** 2 + i[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.max()


def gaussian_smooth_contacts(
    hm: Heightmap,
    contacts: ContactTrack,
    seq,
    points: np.ndarray | None = None,
    traversal_weight: float = TRAVERSAL_WEIGHT,
) -> Heightmap:
    """Raise or lower the terrain around each contact by the filter-weighted foot offset.

    Each per-contact edit is kept only when the terrain score does not get worse.
    """
    if hm.angle != 0.0:
        raise ValueError("smooth an unrotated heightmap")
    filt = gaussian_filter_grid()
    half = FILTER_SIZE // 2
    pts = contact_points(seq, contacts) if points is None else np.asarray(points, dtype=np.float64)
    cur = replace(hm, elev=hm.elev.copy())
    best = terrain_score(seq, contacts, cur, traversal_weight)
    nx, nz = cur.elev.shape
    for p in pts:
        ci, cj = cur.nearest_cell(p[0], p[2])
        dy = p[1] - cur.elev[ci, cj]
        if dy == 0.0:
            continue
        i0, i1 = max(0, ci - half), min(nx, ci + half + 1)
        j0, j1 = max(0, cj - half), min(nz, cj + half + 1)
        trial = cur.elev.copy()
        trial[i0:i1, j0:j1] += dy * filt[i0 - ci + half: i1 - ci + half, j0 - cj + half: j1 - cj + half]
        cand = replace(cur, elev=trial)
        score = terrain_score(seq, contacts, cand, traversal_weight)
        if score <= best:
            cur, best = cand, score
    return cur


# patches

def patch_offsets(size: int = PATCH_SIZE, span: float = PATCH_SPAN) -> tuple[np.ndarray, np.ndarray]:
    d = np.linspace(-0.5 * span, 0.5 * span, size)
    dx, dz = np.meshgrid(d, d, indexing="ij")
    return dx.reshape(-1), dz.reshape(-1)


def raw_patch(hm: Heightmap, root) -> np.ndarray:
    """169 terrain-minus-root heights on a grid centered at the root."""
    root = np.asarray(root, dtype=np.float64)
    dx, dz = patch_offsets()
    return hm.sample(root[0] + dx, root[2] + dz) - root[1]


def raw_patch_grad(hm: Heightmap, root) -> np.ndarray:
    """Jacobian (169, 3) of :func:`raw_patch` with respect to the root position."""
    root = np.asarray(root, dtype=np.float64)
    dx, dz = patch_offsets()
    gx, gz = hm.sample_grad(root[0] + dx, root[2] + dz)
    return np.stack([gx, -np.ones_like(gx), gz], axis=1)


def extract_patch(hm: Heightmap, root, stats=None) -> np.ndarray:
    raw = raw_patch(hm, root)
    if stats is None or stats.patch_mean is None:
        return raw
    return (raw - stats.patch_mean) / stats.patch_std


# fitting

def _placed(candidate: Heightmap, center, quarter_turns: int, lift: float) -> Heightmap:
    elev = np.rot90(candidate.elev, quarter_turns) + lift
    nx, nz = elev.shape
    origin = (center[0] - 0.5 * (nx - 1) * candidate.cell, center[1] - 0.5 * (nz - 1) * candidate.cell)
    return Heightmap(elev, candidate.cell, origin)


def fit_terrain(
    seq,
    contacts: ContactTrack,
    candidates: Sequence[Heightmap],
    top_k: int = 5,
    traversal_weight: float = TRAVERSAL_WEIGHT,
) -> list[Heightmap]:
    """Score placed candidates, keep the best ``top_k`` and refine them.

    Each candidate is centered under the motion, tried at four quarter-turn
    orientations and lifted by the least-squares contact offset.
    """
    pos = _positions(seq)
    root = pos[:, 0, :]
    center = (0.5 * (root[:, 0].min() + root[:, 0].max()), 0.5 * (root[:, 2].min() + root[:, 2].max()))
    pts = contact_points(seq, contacts)
    scored = []
    for ci, cand in enumerate(candidates):
        for turns in range(4):
            hm = _placed(cand, center, turns, 0.0)
            try:
                if len(pts):
                    lift = float(np.mean(pts[:, 1] - hm.sample(pts[:, 0], pts[:, 2], clamp=False)))
                    hm = replace(hm, elev=hm.elev + lift)
                score = terrain_score(seq, contacts, hm, traversal_weight)
            except OutOfBoundsError:
                continue
            scored.append((score, ci, turns, hm))
    if not scored:
        raise OutOfBoundsError("no candidate heightmap covers the motion")
    scored.sort(key=lambda s: (s[0], s[1], s[2]))
    out = []
    for _, _, _, hm in scored[:top_k]:
        if len(pts):
            hm = rbf_refine(hm, contacts, seq, points=pts)
            hm = gaussian_smooth_contacts(hm, contacts, seq, points=pts, traversal_weight=traversal_weight)
        out.append(hm)
    return out

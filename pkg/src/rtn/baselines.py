"""Interpolation baseline between the last context frame and the target."""
from __future__ import annotations

import numpy as np

from . import quat
from .motion import Skeleton, TransitionWindow


def blend_weights(p: int) -> np.ndarray:
    """Interpolation parameter of transition frames s..T-1 (last context frame is 0, target is 1)."""
    return np.arange(1, p + 1) / (p + 1.0)


def lerp_positions(a, b, alphas) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    alphas = np.asarray(alphas, dtype=np.float64).reshape(-1, *([1] * a.ndim))
    return (1.0 - alphas) * a + alphas * b


def slerp_pose(qa, qb, root_a, root_b, alphas, skeleton: Skeleton) -> np.ndarray:
    """Slerp local rotations, lerp the root, then forward kinematics -> (n, K, 3)."""
    if skeleton.offsets is None:
        raise ValueError("slerp interpolation needs skeleton rest offsets")
    alphas = np.asarray(alphas, dtype=np.float64)
    q = quat.slerp(np.broadcast_to(qa, (len(alphas),) + qa.shape),
                   np.broadcast_to(qb, (len(alphas),) + qb.shape),
                   np.broadcast_to(alphas[:, None], (len(alphas), qa.shape[0])))
    roots = lerp_positions(root_a, root_b, alphas)
    return quat.forward_kinematics(q, roots, skeleton.offsets, skeleton.parents)


def interpolation_baseline(
    window: TransitionWindow,
    method: str = "slerp",
    skeleton: Skeleton | None = None,
    include_target: bool = False,
) -> np.ndarray:
    """P interpolated global frames (P+1 with ``include_target``)."""
    s, tgt = window.s, window.target_index
    alphas = blend_weights(window.p)
    if include_target:
        alphas = np.append(alphas, 1.0)
    if method == "lerp":
        return lerp_positions(window.positions[s - 1], window.positions[tgt], alphas)
    if method != "slerp":
        raise ValueError(f"unknown interpolation method {method!r}")
    if window.quats is None:
        raise ValueError("slerp interpolation needs a local quaternion track")
    if skeleton is None:
        raise ValueError("slerp interpolation needs the skeleton")
    out = slerp_pose(
        window.quats[s - 1], window.quats[tgt],
        window.positions[s - 1, 0], window.positions[tgt, 0], alphas, skeleton,
    )
    if include_target:
        out[-1] = window.positions[tgt]
    return out

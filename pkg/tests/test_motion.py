import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_walk_positions
from oracles import preprocess as preprocess_oracle
from rtn import motion
from rtn.motion import (
    MotionSequence,
    NormStats,
    Skeleton,
    TransitionWindow,
    build_target_vector,
    compute_global_offset,
    compute_root_velocities,
    compute_stats,
    inverse_preprocess,
    preprocess,
    random_rotate,
    rotate_positions,
    window_dataset,
)


def _stats_for(pos):
    return compute_stats([pos])


def test_root_velocity_first_frame_copies_second():
    pos = np.zeros((4, 2, 3))
    pos[:, 0, 0] = [0.0, 1.0, 3.0, 6.0]
    vel = compute_root_velocities(pos)
    np.testing.assert_array_equal(vel[:, 0], [1.0, 1.0, 2.0, 3.0])


def test_preprocess_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    pos = random_walk_positions(rng, n=12, k=4)
    stats = _stats_for(pos)
    ref = np.array(preprocess_oracle(pos.tolist(), stats.x_mean.tolist(), stats.x_std.tolist()))
    np.testing.assert_allclose(preprocess(pos, stats), ref, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 30), st.integers(1, 6))
def test_round_trip(seed, n, k):
    rng = np.random.default_rng(seed)
    pos = random_walk_positions(rng, n=n, k=k)
    stats = _stats_for(pos)
    back = inverse_preprocess(preprocess(pos, stats), stats, pos[0, 0])
    assert np.abs(back - pos).max() < 1e-9


def test_inverse_needs_anchor():
    pos = random_walk_positions(np.random.default_rng(0))
    stats = _stats_for(pos)
    with pytest.raises(ValueError):
        inverse_preprocess(preprocess(pos, stats), stats, None)


def test_constant_stream_std_floored():
    pos = np.zeros((5, 2, 3))
    pos[:, 1, 1] = 1.0
    stats = _stats_for(pos)
    assert np.all(stats.x_std >= motion.STD_FLOOR)
    assert np.all(np.isfinite(preprocess(pos, stats)))


def test_dimension_mismatch_rejected():
    rng = np.random.default_rng(1)
    stats = _stats_for(random_walk_positions(rng, k=3))
    with pytest.raises(ValueError):
        preprocess(random_walk_positions(rng, k=4), stats)


def test_rotation_equivariance_of_representation():
    rng = np.random.default_rng(2)
    pos = random_walk_positions(rng, n=20, k=5)
    angle = 0.7
    rot = rotate_positions(pos, angle, (0.3, -0.2))
    feats = motion.raw_features(pos).reshape(20, 5, 3)
    feats_rot = motion.raw_features(rot).reshape(20, 5, 3)
    # all features are differences, so they rotate without the pivot
    np.testing.assert_allclose(feats_rot, rotate_positions(feats, angle, (0.0, 0.0)), atol=1e-12)


def test_target_vector_layout(skel):
    rng = np.random.default_rng(3)
    pos = random_walk_positions(rng, n=10, k=skel.k)
    stats = _stats_for(pos)
    t = build_target_vector(pos[8], pos[9], stats)
    assert t.shape == (2 * 3 * skel.k,)
    raw_vel = (pos[9] - pos[8]).reshape(-1)
    np.testing.assert_allclose(t[3 * skel.k:], (raw_vel - stats.vel_mean) / stats.vel_std)
    raw_pose = (pos[8] - pos[8, :1]).reshape(-1)
    raw_pose[:3] = pos[9, 0] - pos[8, 0]
    np.testing.assert_allclose(t[:3 * skel.k], (raw_pose - stats.x_mean) / stats.x_std)


def test_offset_zero_when_at_target():
    rng = np.random.default_rng(4)
    pos = random_walk_positions(rng)
    stats = _stats_for(pos)
    o = compute_global_offset(pos[-1], pos[-1], stats)
    np.testing.assert_allclose(o, -stats.off_mean / stats.off_std)
    raw = motion.raw_global_offset(pos[3], pos[-1])
    np.testing.assert_allclose(raw, (pos[-1] - pos[3]).reshape(-1))


def test_window_counts_and_held_out_split(small_corpus):
    tr, va = window_dataset(small_corpus, 30, held_out_actor=2)
    per_clip = len(motion.window_starts(120, 50, 20))
    assert per_clip == 4
    assert len(tr) == 4 * per_clip and len(va) == 2 * per_clip
    assert all(w.actor == 2 for w in va) and all(w.actor != 2 for w in tr)
    w = tr[0]
    assert w.positions.shape[0] == 50 and w.s == 10 and w.target_index == 40


def test_window_spec_for_long_transitions():
    assert motion.WINDOW_SPECS[60] == (80, 20)
    with pytest.raises(ValueError):
        window_dataset([], 30, width=20)


def test_short_window_rejected():
    with pytest.raises(ValueError):
        TransitionWindow(np.zeros((20, 2, 3)), 30)


def test_skeleton_validation():
    with pytest.raises(ValueError):
        Skeleton(["a", "b"], [-1, -1])
    with pytest.raises(ValueError):
        Skeleton(["a", "b", "c"], [-1, 2, 0])


def test_sequence_validation(skel):
    with pytest.raises(ValueError):
        MotionSequence(np.full((3, skel.k, 3), np.nan), skel)
    with pytest.raises(ValueError):
        MotionSequence(np.zeros((1, skel.k, 3)), skel)


def test_motion_file_round_trip(tmp_path, small_corpus):
    seq = small_corpus[0]
    path = tmp_path / "clip.motion"
    motion.write_motion(path, seq)
    back = motion.read_motion(path)
    np.testing.assert_array_equal(back.positions, seq.positions)
    np.testing.assert_array_equal(back.quats, seq.quats)
    assert back.skeleton.names == seq.skeleton.names and back.actor == seq.actor


def test_stats_file_round_trip(tmp_path):
    pos = random_walk_positions(np.random.default_rng(5))
    stats = _stats_for(pos)
    stats.save(tmp_path / "s.txt")
    back = NormStats.load(tmp_path / "s.txt")
    for k, v in stats.streams().items():
        np.testing.assert_array_equal(back.streams()[k], v)


def test_random_rotate_keeps_shape_and_range(small_corpus):
    tr, _ = window_dataset(small_corpus, 30)
    w = tr[0]
    r, hm = random_rotate(w, None, 0.0)
    np.testing.assert_allclose(r.positions, w.positions, atol=1e-15)
    assert hm is None
    r, _ = random_rotate(w, None, np.pi / 3)
    # rotation about the vertical axis keeps heights and pairwise distances
    np.testing.assert_allclose(r.positions[..., 1], w.positions[..., 1])
    np.testing.assert_allclose(np.linalg.norm(r.positions[5] - r.positions[7], axis=-1),
                               np.linalg.norm(w.positions[5] - w.positions[7], axis=-1), atol=1e-12)
    with pytest.raises(ValueError):
        random_rotate(w, None, 4.0)


def _identity_stats(d):
    z, o = np.zeros(d), np.ones(d)
    return NormStats(z, o, z.copy(), o.copy(), z.copy(), o.copy())


def test_root_velocity_cases():
    pos = np.zeros((6, 2, 3))
    assert np.all(compute_root_velocities(pos) == 0)
    pos[:, :, 0] = 0.03 * np.arange(6)[:, None]
    np.testing.assert_allclose(compute_root_velocities(pos), np.tile([0.03, 0.0, 0.0], (6, 1)), atol=1e-15)


def test_velocity_prefix_sum_recovers_root():
    pos = random_walk_positions(np.random.default_rng(7), n=60)
    vel = compute_root_velocities(pos)
    root = pos[0, 0] + np.concatenate([np.zeros((1, 3)), np.cumsum(vel[1:], axis=0)])
    assert np.abs(root - pos[:, 0]).max() < 1e-12


def test_identity_normalization_cases():
    pos = np.zeros((3, 4, 3))
    pos[:, 1:] = [[0.0, 0.5, 0.0], [0.1, 1.0, 0.0], [0.0, 0.0, 0.2]]
    x = preprocess(pos, _identity_stats(12))
    assert x.shape == (3, 12) and np.all(x[:, :3] == 0)
    np.testing.assert_array_equal(x[0, 3:], pos[0, 1:].reshape(-1))
    back = inverse_preprocess(np.zeros((5, 12)), _identity_stats(12), [0.4, 0.0, -1.0])
    assert np.all(back == np.array([0.4, 0.0, -1.0]))


def test_anchor_shift_translates_reconstruction():
    pos = random_walk_positions(np.random.default_rng(8))
    stats = _stats_for(pos)
    x = preprocess(pos, stats)
    a = inverse_preprocess(x, stats, pos[0, 0])
    b = inverse_preprocess(x, stats, pos[0, 0] + [1.0, 0.0, 0.0])
    np.testing.assert_allclose(b - a, np.broadcast_to([1.0, 0.0, 0.0], a.shape), atol=1e-12)


def test_stats_two_values():
    pos = np.zeros((2, 1, 3))
    pos[1, 0, 1] = 2.0
    stats = compute_stats([pos])
    # the single joint is the root, so its slot holds the velocity (2 on both frames)
    assert stats.x_mean[1] == 2.0
    two = np.zeros((2, 2, 3))
    two[1, 1, 1] = 2.0
    s2 = compute_stats([two])
    assert s2.x_mean[4] == 1.0 and s2.x_std[4] == 1.0


def test_normalized_training_stream_is_standardized(small_corpus):
    tr, _ = window_dataset(small_corpus, 30, held_out_actor=2)
    stats = compute_stats(tr)
    x = np.concatenate([preprocess(w.positions, stats) for w in tr])
    live = stats.x_std > motion.STD_FLOOR
    assert np.abs(x[:, live].mean(axis=0)).max() < 1e-10
    assert np.abs(x[:, live].std(axis=0) - 1.0).max() < 1e-10
    # constant dimensions (such as the hips-relative spine height) only carry round-off scaled by the floor
    assert np.abs(x[:, ~live]).max() < 1e-9


def test_target_vector_zero_velocity():
    pos = random_walk_positions(np.random.default_rng(9), n=10, k=22)
    t = build_target_vector(pos[5], pos[5], _identity_stats(66))
    assert t.shape == (132,) and np.all(t[66:] == 0)


def test_offsets_displaced_and_during_playback(small_corpus):
    y = random_walk_positions(np.random.default_rng(10), n=2, k=3)[0]
    np.testing.assert_allclose(motion.raw_global_offset(y + [0.0, 0.0, -1.0], y), np.tile([0.0, 0.0, 1.0], 3))
    w = window_dataset(small_corpus, 30)[0][0]
    mags = [np.abs(motion.raw_global_offset(w.positions[t], w.y_target)).max() for t in range(w.target_index + 1)]
    assert mags[-1] == 0.0 and mags[0] > 0.1


def test_window_starts_example():
    assert motion.window_starts(90, 50, 20) == [0, 20, 40]
    assert motion.WINDOW_SPECS[30] == (50, 20)


def test_rotation_identity_and_half_turn_involution():
    pos = random_walk_positions(np.random.default_rng(11))
    np.testing.assert_allclose(rotate_positions(pos, 0.0, (0.3, 0.1)), pos, atol=1e-15)
    twice = rotate_positions(rotate_positions(pos, np.pi, (0.3, 0.1)), np.pi, (0.3, 0.1))
    assert np.abs(twice - pos).max() < 1e-9


def test_root_relative_joints_rotate_with_identity_stats():
    pos = random_walk_positions(np.random.default_rng(12), n=15, k=4)
    stats = _identity_stats(12)
    rot = rotate_positions(pos, 1.1, (2.0, -1.0))
    a = preprocess(pos, stats).reshape(15, 4, 3)[:, 1:]
    b = preprocess(rot, stats).reshape(15, 4, 3)[:, 1:]
    assert np.abs(b - rotate_positions(a, 1.1, (0.0, 0.0))).max() < 1e-9

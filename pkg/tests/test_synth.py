import numpy as np
import pytest

from rtn import quat, synth, terrain
from rtn.motion import compute_stats, inverse_preprocess, preprocess, window_dataset


def test_skeleton_has_22_joints(skel):
    assert skel.k == 22 and 3 * skel.k == 66
    assert [skel.names[f] for f in synth.FEET] == ["LeftToe", "RightToe"]


def test_standing_still():
    seq, contacts = synth.gen_gait(synth.GaitSpec("walk", speed=0.0), 60)
    root = seq.positions[:, 0]
    assert np.abs(root[:, [0, 2]] - root[0, [0, 2]]).max() < 1e-12
    assert contacts.flags.all()


def test_walk_displacement():
    seq, _ = synth.gen_gait(synth.GaitSpec("walk", speed=1.0, heading=0.3), 300)
    disp = seq.positions[-1, 0] - seq.positions[0, 0]
    heading = np.array([np.sin(0.3), np.cos(0.3)])
    along = disp[0] * heading[0] + disp[2] * heading[1]
    # 299 frame steps at 1 m/s, up to one stride of quantization
    assert abs(along - 299 / 30.0) < 0.5


def test_bone_lengths_constant(skel):
    seq, _ = synth.gen_gait(synth.GaitSpec("run", speed=3.0, period=22), 90)
    for j, p in enumerate(skel.parents[1:], start=1):
        lengths = np.linalg.norm(seq.positions[:, j] - seq.positions[:, p], axis=-1)
        assert np.ptp(lengths) < 1e-9


@pytest.mark.parametrize("kind", synth.GAITS)
def test_contacts_agree_with_detector(kind):
    field = synth.TerrainField(5, 0.08, extent=40.0)
    seq, truth = synth.gen_gait(synth.GaitSpec(kind, speed=1.5, turn_rate=0.5 if kind == "turn" else 0.0), 150, field)
    found = terrain.detect_contacts(seq, synth.FEET)
    assert np.mean(found.flags == truth.flags) >= 0.95


def test_planted_feet_do_not_slide():
    seq, truth = synth.gen_gait(synth.GaitSpec("walk", speed=1.4), 120)
    for c, f in enumerate(truth.feet):
        flags = truth.flags[:, c]
        both = flags[1:] & flags[:-1]
        step = np.linalg.norm(seq.positions[1:, f] - seq.positions[:-1, f], axis=-1)
        assert step[both].max() < 1e-9


def test_quaternions_reproduce_positions(skel):
    seq, _ = synth.gen_gait(synth.GaitSpec("turn", turn_rate=0.6), 50)
    pos = quat.forward_kinematics(seq.quats, seq.positions[:, 0], skel.offsets, skel.parents)
    np.testing.assert_allclose(pos, seq.positions, atol=1e-9)


def test_terrain_flat_and_seeded():
    flat = synth.gen_terrain(1, size=4.0, roughness=0.0)
    assert np.all(flat.elev == 0.0)
    a = synth.gen_terrain(7, size=4.0)
    b = synth.gen_terrain(7, size=4.0)
    np.testing.assert_array_equal(a.elev, b.elev)
    assert not np.array_equal(a.elev, synth.gen_terrain(8, size=4.0).elev)
    with pytest.raises(ValueError):
        synth.gen_terrain(1, size=0.0)


def test_terrain_obstacle_plateau():
    obs = dict(x0=-0.5, x1=0.5, z0=-0.25, z1=0.25, height=0.4)
    hm = synth.gen_terrain(3, size=4.0, roughness=0.0, obstacle=obs)
    assert np.isclose(hm.sample(0.0, 0.0), 0.4)
    assert np.isclose(hm.sample(1.5, 1.5), 0.0)


def test_gait_spec_validation():
    with pytest.raises(ValueError):
        synth.GaitSpec("crawl")
    with pytest.raises(ValueError):
        synth.GaitSpec(period=4)
    with pytest.raises(ValueError):
        synth.GaitSpec(speed=-1.0)


def test_corpus_actors_and_round_trip(small_corpus):
    assert sorted({s.actor for s in small_corpus}) == [0, 1, 2]
    tr, va = window_dataset(small_corpus, 30, held_out_actor=0)
    stats = compute_stats(tr)
    for w in tr + va:
        back = inverse_preprocess(preprocess(w.positions, stats), stats, w.anchor)
        assert np.abs(back - w.positions).max() < 1e-9


def test_corpus_deterministic():
    a = synth.gen_corpus(n_actors=1, per_actor=1, length=40, seed=9)[0][0]
    b = synth.gen_corpus(n_actors=1, per_actor=1, length=40, seed=9)[0][0]
    np.testing.assert_array_equal(a.positions, b.positions)


def test_maneuvers_change_course_without_sliding():
    steady, _ = synth.gen_gait(synth.GaitSpec("walk", speed=1.3, seed=2), 240)
    turning, truth = synth.gen_gait(synth.GaitSpec("walk", speed=1.3, seed=2, maneuver=1.0), 240)

    def heading_spread(seq):
        v = seq.positions[30:, 0] - seq.positions[:-30, 0]
        return np.ptp(np.unwrap(np.arctan2(v[:, 0], v[:, 2])))

    assert heading_spread(turning) > 0.5 > heading_spread(steady)
    for c, f in enumerate(truth.feet):
        both = truth.flags[1:, c] & truth.flags[:-1, c]
        step = np.linalg.norm(turning.positions[1:, f] - turning.positions[:-1, f], axis=-1)
        assert step[both].max() < 1e-9

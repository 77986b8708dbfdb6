import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carsplat.articulate import (MAX_STEER, ArticulationError, Frame, PartState, apply_state, pose_part,
                                 rotate_part, split_by_label)
from carsplat.asset import DOORS, GaussianAsset, PartLabel
from carsplat.kinematics import KinematicParams

from conftest import random_asset

UP = np.array([0.0, 0.0, 1.0])
LAT = np.array([0.0, 1.0, 0.0])


def one(mean):
    return GaussianAsset([mean], [[0.1, 0.2, 0.3]], [[1.0, 0, 0, 0]], [0.5], [[0.2, 0.3, 0.4]])


def pairwise(m):
    return np.linalg.norm(m[:, None] - m[None], axis=-1)


def test_quarter_turn_and_identity(rng):
    out = rotate_part(one([1.0, 0, 0]), UP, [0, 0, 0], math.pi / 2)
    np.testing.assert_allclose(out.means[0], [0, 1, 0], atol=1e-7)
    # quaternion of a quarter turn about z
    np.testing.assert_allclose(out.rotations[0], [math.cos(math.pi / 4), 0, 0, math.sin(math.pi / 4)], atol=1e-12)
    a = random_asset(rng, 40)
    same = rotate_part(a, UP, [0.3, 0.1, 0], 0.0)
    np.testing.assert_allclose(same.means, a.means, atol=1e-7)
    np.testing.assert_allclose(same.rotations, a.rotations, atol=1e-7)


def test_untouched_fields_and_inverse(rng):
    a = random_asset(rng, 40)
    axis = np.array([1.0, 2.0, -0.5])
    axis /= np.linalg.norm(axis)
    r = rotate_part(a, axis, [0.2, -0.4, 1.0], 1.1)
    assert r.scales.tobytes() == a.scales.tobytes()
    assert r.opacities.tobytes() == a.opacities.tobytes()
    assert r.colors.tobytes() == a.colors.tobytes()
    back = rotate_part(r, axis, [0.2, -0.4, 1.0], -1.1)
    np.testing.assert_allclose(back.means, a.means, atol=1e-6)
    # q and -q are the same rotation
    dots = np.abs(np.sum(back.rotations * a.rotations, axis=1))
    np.testing.assert_allclose(dots, 1.0, atol=1e-6)


def test_axis_errors(rng):
    a = random_asset(rng, 3)
    with pytest.raises(ArticulationError):
        rotate_part(a, [0, 0, 0], [0, 0, 0], 1.0)
    with pytest.raises(ArticulationError):
        rotate_part(a, [0, 0, 2.0], [0, 0, 0], 1.0)


def test_part_state_validation(tmp_path):
    with pytest.raises(ArticulationError):
        PartState(steer_fraction_fl=1.5)
    with pytest.raises(ArticulationError):
        PartState(door_fl=float("nan"))
    s = PartState(door_fl=0.3, steer_fraction_fr=-0.5, roll_angle=2.0)
    s.save(tmp_path / "s.json")
    assert PartState.load(tmp_path / "s.json") == s
    assert MAX_STEER == pytest.approx(0.6109, abs=1e-4)


@pytest.fixture(scope="module")
def rig():
    from carsplat.synth import CarSpec, generate

    sample, asset = generate(CarSpec(seed=7, n_points=4000))
    return split_by_label(asset), sample.kin, asset


def test_zero_state_is_identity(rig):
    parts, kin, asset = rig
    out = apply_state(parts, kin, PartState())
    assert len(out.asset) == len(asset)
    # canonical order: parts concatenated by label
    np.testing.assert_array_equal(out.asset.part_labels, np.sort(asset.part_labels))
    ref = np.concatenate([parts[p].means for p in PartLabel])
    np.testing.assert_allclose(out.asset.means, ref, atol=1e-7)


def test_roll_120_then_240_is_identity(rig):
    parts, kin, _ = rig
    once = apply_state(parts, kin, PartState(roll_angle=math.radians(120)))
    again = apply_state(split_by_label(once.asset), kin, PartState(roll_angle=math.radians(240)))
    ref = np.concatenate([parts[p].means for p in PartLabel])
    np.testing.assert_allclose(again.asset.means, ref, atol=1e-6)


def test_steer_keeps_distance_to_vertical_axis(rig):
    parts, kin, _ = rig
    state = PartState(steer_fraction_fl=(math.pi / 6) / MAX_STEER)
    posed = pose_part(PartLabel.WheelFL, parts[PartLabel.WheelFL], kin, state)
    j = kin.joint_fl
    before = np.hypot(*(parts[PartLabel.WheelFL].means[:, :2] - j[:2]).T)
    after = np.hypot(*(posed.means[:, :2] - j[:2]).T)
    np.testing.assert_allclose(after, before, atol=1e-6)
    assert np.abs(posed.means - parts[PartLabel.WheelFL].means).max() > 0.01


def test_door_opens_outward_and_hinge_line_fixed(rig):
    parts, kin, _ = rig
    for door, side in zip(DOORS, (1.0, -1.0)):
        h = kin.hinge(door)
        on_axis = one([h[0], h[1], 0.5])
        piece = on_axis
        state = PartState(door_fl=1.0, door_fr=1.0)
        moved = pose_part(door, piece, kin, state)
        assert np.abs(moved.means - piece.means).max() < 1e-7
        posed = pose_part(door, parts[door], kin, state)
        # the panel swings away from the body side it sits on
        assert side * (posed.means[:, 1].mean() - parts[door].means[:, 1].mean()) > 0.1


def test_roll_about_steered_axis_is_conjugation(rig):
    parts, kin, _ = rig
    wheel = parts[PartLabel.WheelFR]
    j = kin.joint_fr
    s, r = 0.4, 1.3
    state = PartState(steer_fraction_fr=s / MAX_STEER, roll_angle=r)
    got = pose_part(PartLabel.WheelFR, wheel, kin, state)
    steered = rotate_part(wheel, UP, j, s)
    want = rotate_part(rotate_part(rotate_part(steered, UP, j, -s), LAT, j, r), UP, j, s)
    np.testing.assert_allclose(got.means, want.means, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(door=st.tuples(st.floats(-2, 2), st.floats(-2, 2)), steer=st.tuples(st.floats(-1, 1), st.floats(-1, 1)),
       roll=st.floats(-7, 7))
def test_rigidity_count_and_unit_quaternions(rig, door, steer, roll):
    parts, kin, asset = rig
    state = PartState(door[0], door[1], steer[0], steer[1], roll)
    out = apply_state(parts, kin, state)
    assert len(out.asset) == len(asset)
    np.testing.assert_allclose(np.linalg.norm(out.asset.rotations, axis=1), 1.0, atol=1e-9)
    posed = split_by_label(out.asset)
    for p in PartLabel:
        # a 60-Gaussian slice keeps the pairwise check cheap
        a = parts[p].means[:60]
        b = posed[p].means[:60]
        np.testing.assert_allclose(pairwise(b), pairwise(a), atol=1e-6)
    assert posed[PartLabel.Body].means.tobytes() == parts[PartLabel.Body].means.tobytes()


def test_missing_part_and_bad_kinematics(rig):
    parts, kin, _ = rig
    partial = {p: a for p, a in parts.items() if p != PartLabel.WheelRL}
    with pytest.raises(ArticulationError, match="WheelRL"):
        apply_state(partial, kin, PartState())
    v = kin.to_vector()
    v[5] = np.inf
    with pytest.raises(ArticulationError):
        apply_state(parts, KinematicParams.from_vector(v), PartState())
    with pytest.raises(ArticulationError):
        split_by_label(random_asset(np.random.default_rng(0), 5))


def test_custom_frame_flips_door_direction(rig):
    parts, kin, _ = rig
    door = PartLabel.FrontLeftDoor
    flipped = Frame(door_signs=(1.0, -1.0))
    a = pose_part(door, parts[door], kin, PartState(door_fl=0.5))
    b = pose_part(door, parts[door], kin, PartState(door_fl=0.5), flipped)
    assert a.means[:, 1].mean() > parts[door].means[:, 1].mean() > b.means[:, 1].mean()

"""Tests for pose math and pose files."""

import math

import numpy as np
import pytest

from src.core.errors import (
    DataValidationError,
    InvalidArgumentError,
    ParseError,
)
from src.services.pose import (
    LogQuat,
    Pose,
    Quaternion,
    fuse_pair,
    load_matrix_sequence,
    load_trajectory_csv,
    make_trajectory,
    parse_homogeneous_matrix,
    quat_exp,
    quat_log,
    rotation_error_deg,
    save_trajectory_csv,
    translation_error,
)

YAW_90 = Quaternion(0.70710678, 0.0, 0.0, 0.70710678)


def random_quaternions(count: int, seed: int = 0) -> list[Quaternion]:
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(count, 4))
    values /= np.linalg.norm(values, axis=1, keepdims=True)
    return [Quaternion.from_array(v) for v in values]


def test_quat_log_identity():
    """Test log of the identity rotation is the zero vector."""
    assert quat_log(Quaternion.identity()).v == (0.0, 0.0, 0.0)


def test_quat_log_yaw():
    """Test log of 90 and 180 degree yaw uses the half-angle convention."""
    assert quat_log(YAW_90).v == pytest.approx((0.0, 0.0, 0.78539816), abs=1e-7)
    assert quat_log(Quaternion(0.0, 0.0, 0.0, 1.0)).v == pytest.approx(
        (0.0, 0.0, math.pi / 2), abs=1e-9
    )


def test_quat_log_hemisphere():
    """Test a negative-w quaternion is logged on the canonical hemisphere."""
    v = quat_log(YAW_90.negated()).v
    assert v == pytest.approx((0.0, 0.0, 0.78539816), abs=1e-7)


def test_quat_log_rejects_bad_input():
    """Test non-unit and non-finite quaternions are rejected."""
    with pytest.raises(InvalidArgumentError):
        quat_log(Quaternion(2.0, 0.0, 0.0, 0.0))
    with pytest.raises(InvalidArgumentError):
        quat_log(Quaternion(math.nan, 0.0, 0.0, 0.0))


def test_quat_exp():
    """Test exp of the zero vector and of a quarter-turn log."""
    assert quat_exp(LogQuat((0.0, 0.0, 0.0))) == Quaternion.identity()
    q = quat_exp((0.0, 0.0, 0.78539816))
    assert q.as_array() == pytest.approx(YAW_90.as_array(), abs=1e-8)
    with pytest.raises(InvalidArgumentError):
        quat_exp((math.inf, 0.0, 0.0))


def test_exp_log_roundtrip():
    """Test exp(log(q)) recovers q up to sign for many random rotations."""
    for q in random_quaternions(100_000, seed=1):
        back = quat_exp(quat_log(q))
        assert abs(back.dot(q)) >= 1 - 1e-9
        assert back.is_unit(1e-9)


def test_translation_error():
    """Test Euclidean translation error."""
    assert translation_error((0, 0, 0), (0, 0, 0)) == 0.0
    assert translation_error((0, 0, 0), (3, 4, 0)) == 5.0
    assert translation_error((1, 1, 1), (2, 2, 2)) == pytest.approx(1.7320508, abs=1e-7)
    assert translation_error((1, 2, 3), (4, 5, 7)) == translation_error((4, 5, 7), (1, 2, 3))
    with pytest.raises(InvalidArgumentError):
        translation_error((math.nan, 0, 0), (0, 0, 0))


def test_rotation_error_deg():
    """Test rotation error is symmetric and ignores the quaternion sign."""
    q = random_quaternions(1, seed=2)[0]
    assert rotation_error_deg(q, q) == pytest.approx(0.0, abs=1e-6)
    assert rotation_error_deg(q, q.negated()) == pytest.approx(0.0, abs=1e-6)
    assert rotation_error_deg(Quaternion.identity(), YAW_90) == pytest.approx(90.0, abs=1e-5)

    for p, r in zip(random_quaternions(50, seed=3), random_quaternions(50, seed=4)):
        err = rotation_error_deg(p, r)
        assert 0.0 <= err <= 180.0
        assert err == pytest.approx(rotation_error_deg(r, p), abs=1e-9)
        assert err == pytest.approx(rotation_error_deg(p.negated(), r), abs=1e-9)

    with pytest.raises(InvalidArgumentError):
        rotation_error_deg(Quaternion(1.0, 1.0, 0.0, 0.0), q)


def test_fuse_pair_examples():
    """Test fusion averages translation and takes the rotation midpoint."""
    q0 = random_quaternions(1, seed=5)[0]
    fused = fuse_pair(Pose((0.0, 0.0, 0.0), q0), Pose((2.0, 0.0, 0.0), q0))
    assert fused.t == (1.0, 0.0, 0.0)
    assert fused.q.as_array() == pytest.approx(q0.as_array(), abs=1e-12)

    fused = fuse_pair(
        Pose((0.0, 0.0, 0.0), Quaternion.identity()),
        Pose((0.0, 0.0, 0.0), Quaternion(0.0, 0.0, 0.0, 1.0)),
    )
    assert fused.q.as_array() == pytest.approx(YAW_90.as_array(), abs=1e-8)

    a = Pose((1.0, 2.0, 3.0), q0)
    assert fuse_pair(a, a) is a


def test_fuse_pair_properties():
    """Test fusion commutes and lands halfway between the two rotations."""
    rng = np.random.default_rng(6)
    qa, qb = random_quaternions(200, seed=7), random_quaternions(200, seed=8)
    for q1, q2 in zip(qa, qb):
        a = Pose(tuple(rng.normal(size=3)), q1)
        b = Pose(tuple(rng.normal(size=3)), q2)
        ab, ba = fuse_pair(a, b), fuse_pair(b, a)
        assert ab.t == pytest.approx(ba.t, abs=1e-9)
        assert abs(ab.q.dot(ba.q)) >= 1 - 1e-9
        assert rotation_error_deg(ab.q, a.q) == pytest.approx(
            rotation_error_deg(ab.q, b.q), abs=1e-6
        )


def test_parse_homogeneous_matrix():
    """Test parsing identity and yaw camera-to-world matrices."""
    identity = parse_homogeneous_matrix("1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n")
    assert identity.t == (0.0, 0.0, 0.0)
    assert identity.q.as_array() == pytest.approx([1.0, 0.0, 0.0, 0.0], abs=1e-12)

    yaw = parse_homogeneous_matrix("0 -1 0 1  1 0 0 2  0 0 1 3  0 0 0 1")
    assert yaw.t == (1.0, 2.0, 3.0)
    assert yaw.q.as_array() == pytest.approx(YAW_90.as_array(), abs=1e-8)


def test_load_matrix_sequence(tmp_path):
    """Test a directory of matrix files loads in name order at the given rate."""
    (tmp_path / "frame-000001.pose.txt").write_text("0 -1 0 1\n1 0 0 2\n0 0 1 3\n0 0 0 1\n")
    (tmp_path / "frame-000000.pose.txt").write_text("1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n")
    (tmp_path / "notes.txt").write_text("not a pose")

    traj = load_matrix_sequence(tmp_path, rate_hz=30.0)
    assert len(traj) == 2
    assert traj.timestamps[0] == 0.0
    assert traj.poses[0].t == Pose.identity().t
    assert traj.poses[0].q.as_array() == pytest.approx([1.0, 0.0, 0.0, 0.0], abs=1e-12)
    assert traj.timestamps[1] == pytest.approx(1 / 30)
    assert traj.poses[1].t == (1.0, 2.0, 3.0)

    with pytest.raises(DataValidationError):
        load_matrix_sequence(tmp_path / "empty", rate_hz=30.0)


def test_parse_homogeneous_matrix_errors():
    """Test malformed matrices are rejected with the right error type."""
    with pytest.raises(ParseError):
        parse_homogeneous_matrix("1 0 0 0 0 1 0 0 0 0 1 0 0 0 0")
    with pytest.raises(ParseError):
        parse_homogeneous_matrix("1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 one")
    with pytest.raises(DataValidationError):
        parse_homogeneous_matrix("2 0 0 0 0 2 0 0 0 0 2 0 0 0 0 1")
    with pytest.raises(DataValidationError):
        parse_homogeneous_matrix("1 0 0 0 0 1 0 0 0 0 1 0 0 0 1 1")


def test_load_trajectory_single_line(tmp_path):
    """Test a headerless one-line trajectory loads as the identity pose."""
    path = tmp_path / "one.csv"
    path.write_text("0,0,0,0,1,0,0,0\n")
    traj = load_trajectory_csv(path)
    assert len(traj) == 1
    assert traj.samples[0] == (0.0, Pose.identity())


def test_trajectory_roundtrip(tmp_path):
    """Test save then load reproduces every value."""
    rng = np.random.default_rng(9)
    samples = [
        (0.1 * i, Pose(tuple(float(v) for v in rng.normal(size=3) * 50), q))
        for i, q in enumerate(random_quaternions(20, seed=10))
    ]
    traj = make_trajectory(samples)
    path = tmp_path / "traj.csv"
    save_trajectory_csv(traj, path)
    loaded = load_trajectory_csv(path)

    assert len(loaded) == len(traj)
    for (t1, p1), (t2, p2) in zip(traj.samples, loaded.samples):
        assert t2 == pytest.approx(t1, abs=1e-9)
        assert p2.t == pytest.approx(p1.t, abs=1e-9)
        assert p2.q.as_array() == pytest.approx(p1.q.as_array(), abs=1e-9)

    save_trajectory_csv(loaded, tmp_path / "again.csv")
    first = np.loadtxt(path, delimiter=",", skiprows=1)
    second = np.loadtxt(tmp_path / "again.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(second, first, rtol=0, atol=1e-12)


def test_trajectory_normalizes_quaternions(tmp_path):
    """Test quaternions are normalized on load."""
    path = tmp_path / "scaled.csv"
    path.write_text("t,x,y,z,qw,qx,qy,qz\n0,1,2,3,2,0,0,0\n")
    assert load_trajectory_csv(path).poses[0].q == Quaternion.identity()


def test_trajectory_errors(tmp_path):
    """Test repeated timestamps and malformed lines are reported."""
    repeated = tmp_path / "repeated.csv"
    repeated.write_text("1,0,0,0,1,0,0,0\n1,0,0,0,1,0,0,0\n")
    with pytest.raises(DataValidationError):
        load_trajectory_csv(repeated)

    malformed = tmp_path / "malformed.csv"
    malformed.write_text("0,0,0,0,1,0,0,0\n1,0,0,0,1,0,0\n")
    with pytest.raises(ParseError) as exc_info:
        load_trajectory_csv(malformed)
    assert exc_info.value.line == 2

    empty = tmp_path / "empty.csv"
    empty.write_text("t,x,y,z,qw,qx,qy,qz\n")
    with pytest.raises(DataValidationError):
        load_trajectory_csv(empty)

import numpy as np
import pytest

from armcomp import autodiff as ad
from armcomp import kinematics as kin

# Frozen before the build via an independent chained homogeneous-matrix
# computation (scratch oracle).
ZERO_POSE_MM = np.array([-817.25, -191.45, -5.491])
J1_90_POSE_MM = np.array([191.45, -817.25, -5.491])


def test_joint_transform_identity():
    row = kin.DHRow(d=0.0, a=0.0, alpha=0.0, theta_offset=0.0)
    assert np.allclose(kin.joint_transform(row, 0.0), np.eye(4), atol=1e-15)


def test_joint_transform_pure_twist():
    row = kin.DHRow(d=89.159, a=0.0, alpha=np.pi / 2, theta_offset=0.0)
    expected = np.array([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, -1.0, 0.0],
        [0.0, 1.0, 0.0, 89.159],
        [0.0, 0.0, 0.0, 1.0],
    ])
    assert np.allclose(kin.joint_transform(row, 0.0), expected, atol=1e-12)


def test_joint_transform_pure_translation():
    row = kin.DHRow(d=0.0, a=-425.0, alpha=0.0, theta_offset=0.0)
    t = kin.joint_transform(row, 0.0)
    assert np.allclose(t[:3, :3], np.eye(3), atol=1e-12)
    assert np.allclose(t[:3, 3], [-425.0, 0.0, 0.0], atol=1e-12)


def test_joint_transform_uses_theta_offset():
    base = kin.DHRow(d=1.0, a=2.0, alpha=0.3, theta_offset=0.0)
    offset = kin.DHRow(d=1.0, a=2.0, alpha=0.3, theta_offset=0.4)
    assert np.allclose(kin.joint_transform(offset, 0.1),
                       kin.joint_transform(base, 0.5), atol=1e-15)


def test_fk_zero_pose_matches_oracle():
    pos = kin.forward_kinematics(kin.ur5_table(), np.zeros(6))
    assert np.max(np.abs(pos - ZERO_POSE_MM)) < 1e-6


def test_fk_base_rotation_pose():
    pos = kin.forward_kinematics(kin.ur5_table(), [np.pi / 2, 0, 0, 0, 0, 0])
    assert np.max(np.abs(pos - J1_90_POSE_MM)) < 1e-6


def test_tool_offset_shifts_along_end_frame_axis():
    table = kin.ur5_table()
    t_end = kin.chain_transform(table, np.zeros(6))
    tool = np.eye(4)
    tool[2, 3] = 10.0
    shifted = kin.DHTable(rows=table.rows, tool_offset=tool)
    pos = kin.forward_kinematics(shifted, np.zeros(6))
    expected = t_end[:3, 3] + t_end[:3, 2] * 10.0
    assert np.allclose(pos, expected, atol=1e-12)


def test_batch_matches_scalar_bitwise():
    table = kin.ur5_table()
    rng = np.random.default_rng(0)
    q = rng.uniform(-np.pi, np.pi, (17, 6))
    batch = kin.forward_kinematics_batch(table, q)
    for i in range(17):
        assert np.array_equal(batch[i], kin.forward_kinematics(table, q[i]))


def test_batch_duplicated_rows():
    table = kin.ur5_table()
    q = np.tile(np.array([0.1, -0.5, 0.3, 0.2, -0.1, 0.7]), (3, 1))
    batch = kin.forward_kinematics_batch(table, q)
    assert np.array_equal(batch[0], batch[1])
    assert np.array_equal(batch[0], batch[2])


def test_cumulative_transforms_orthonormal():
    table = kin.ur5_table()
    rng = np.random.default_rng(1)
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, 6)
        t = np.eye(4)
        for row, th in zip(table.rows, q):
            t = t @ kin.joint_transform(row, th)
            r = t[:3, :3]
            assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-10
            assert abs(np.linalg.det(r) - 1.0) < 1e-10


def test_first_joint_rotation_is_base_z_rotation():
    table = kin.ur5_table()
    rng = np.random.default_rng(2)
    for _ in range(10):
        q = rng.uniform(-np.pi, np.pi, 6)
        delta = rng.uniform(-np.pi / 2, np.pi / 2)
        p0 = kin.forward_kinematics(table, q)
        q2 = q.copy()
        q2[0] += delta
        p1 = kin.forward_kinematics(table, q2)
        c, s = np.cos(delta), np.sin(delta)
        rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        assert np.max(np.abs(p1 - rz @ p0)) < 1e-9


def test_graph_form_agrees_with_plain():
    table = kin.ur5_table()
    q = np.random.default_rng(3).uniform(-np.pi, np.pi, (8, 6))
    plain = kin.forward_kinematics_batch(table, q)
    graph = kin.fk_graph(table, ad.const(q)).value
    assert np.max(np.abs(graph - plain)) < 1e-10


def test_graph_form_differentiable():
    table = kin.ur5_table()
    q = np.random.default_rng(4).uniform(-2.0, 2.0, (2, 6))

    def build(leaves):
        return ad.sum_(kin.fk_graph(table, leaves[0]))

    assert ad.grad_check(build, [q], eps=1e-6) < 1e-6


def test_angle_wrapping():
    wrapped = kin.wrap_angles([3 * np.pi / 2, -3 * np.pi / 2, 0.1])
    assert np.allclose(wrapped, [-np.pi / 2, np.pi / 2, 0.1], atol=1e-12)
    deg = kin.joint_angles_from_deg([270.0, -270.0, 10.0])
    assert np.allclose(deg, [-np.pi / 2, np.pi / 2, np.deg2rad(10.0)], atol=1e-12)


def test_table_validation():
    with pytest.raises(ValueError, match="6"):
        kin.DHTable(rows=tuple(kin.DHRow(0, 0, 0, 0) for _ in range(5)))
    with pytest.raises(ValueError, match="bottom row"):
        bad = np.eye(4)
        bad[3, 0] = 1.0
        kin.DHTable(rows=kin.ur5_table().rows, tool_offset=bad)
    with pytest.raises(ValueError, match="orthonormal"):
        bad = np.eye(4)
        bad[0, 0] = 2.0
        kin.DHTable(rows=kin.ur5_table().rows, tool_offset=bad)
    with pytest.raises(ValueError, match="non-finite"):
        kin.DHRow(d=np.nan, a=0.0, alpha=0.0, theta_offset=0.0)
    with pytest.raises(ValueError):
        kin.DHRow(d=0.0, a=0.0, alpha=4.0, theta_offset=0.0)

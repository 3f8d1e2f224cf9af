"""DH-parameterized forward kinematics of a six-axis serial arm.

Two implementations of the same chain: plain numpy (fast path, used for
data generation and evaluation) and an autodiff graph form (feeds the
physics branch of the model and the inverse solver). Units are mm for
lengths and radians for angles throughout this module.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

N_JOINTS = 6

# Built-in nominal table for the UR5 arm: (d, a, alpha, theta_offset).
_UR5_ROWS = (
    (89.159, 0.0, np.pi / 2, 0.0),
    (0.0, -425.0, 0.0, 0.0),
    (0.0, -392.25, 0.0, 0.0),
    (109.15, 0.0, np.pi / 2, 0.0),
    (94.65, 0.0, -np.pi / 2, 0.0),
    (82.3, 0.0, 0.0, 0.0),
)


@dataclass(frozen=True)
class DHRow:
    """Link parameters: offset d (mm), length a (mm), twist alpha (rad),
    joint angle offset (rad)."""
    d: float
    a: float
    alpha: float
    theta_offset: float

    def __post_init__(self):
        vals = (self.d, self.a, self.alpha, self.theta_offset)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"non-finite DH row {vals}")
        if not -np.pi <= self.alpha <= np.pi:
            raise ValueError(f"twist angle {self.alpha} outside [-pi, pi]")


@dataclass(frozen=True)
class DHTable:
    """Six DH rows plus a homogeneous tool offset applied after joint 6."""
    rows: tuple
    tool_offset: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        if len(self.rows) != N_JOINTS:
            raise ValueError(f"expected {N_JOINTS} DH rows, got {len(self.rows)}")
        tool = np.asarray(self.tool_offset, dtype=np.float64)
        if tool.shape != (4, 4):
            raise ValueError(f"tool offset must be 4x4, got {tool.shape}")
        if not np.array_equal(tool[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("tool offset bottom row must be (0, 0, 0, 1)")
        r = tool[:3, :3]
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("tool offset rotation block not orthonormal")
        object.__setattr__(self, "tool_offset", tool)

    def as_array(self):
        """Rows as a (6, 4) array in (d, a, alpha, theta_offset) order."""
        return np.array([(r.d, r.a, r.alpha, r.theta_offset) for r in self.rows])


def ur5_table():
    return DHTable(rows=tuple(DHRow(*r) for r in _UR5_ROWS))


def table_from_array(rows, tool_offset=None):
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape != (N_JOINTS, 4):
        raise ValueError(f"DH rows must be {N_JOINTS}x4, got {rows.shape}")
    kwargs = {} if tool_offset is None else {"tool_offset": tool_offset}
    return DHTable(rows=tuple(DHRow(*r) for r in rows), **kwargs)


def wrap_angles(theta_rad):
    """Wrap into [-pi, pi). Done once at ingestion; downstream code never
    re-wraps (keeps the inverse solver's landscape smooth)."""
    theta_rad = np.asarray(theta_rad, dtype=np.float64)
    return np.mod(theta_rad + np.pi, 2.0 * np.pi) - np.pi


def joint_angles_from_deg(theta_deg):
    return wrap_angles(np.deg2rad(np.asarray(theta_deg, dtype=np.float64)))


def joint_transform(row, theta):
    """Homogeneous transform of one joint at angle theta (the row's
    theta_offset is added internally)."""
    if not np.isfinite(theta):
        raise ValueError("non-finite joint angle")
    th = theta + row.theta_offset
    ct, st = np.cos(th), np.sin(th)
    ca, sa = np.cos(row.alpha), np.sin(row.alpha)
    return np.array([
        [ct, -st * ca, st * sa, row.a * ct],
        [st, ct * ca, -ct * sa, row.a * st],
        [0.0, sa, ca, row.d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def chain_transform(table, theta_rad):
    """Full base-to-tool transform T1 * ... * T6 * tool_offset."""
    theta_rad = np.asarray(theta_rad, dtype=np.float64)
    T = np.eye(4)
    for row, th in zip(table.rows, theta_rad):
        T = T @ joint_transform(row, th)
    return T @ table.tool_offset


def forward_kinematics(table, theta_rad):
    """End-effector position (mm) for one pose (6 angles, rad)."""
    return chain_transform(table, theta_rad)[:3, 3].copy()


def forward_kinematics_batch(table, theta_rad):
    """Per-row forward kinematics of an (N, 6) angle batch -> (N, 3) mm.

    Implemented as the per-sample loop so batch results are bitwise
    identical to the scalar path.
    """
    theta_rad = np.asarray(theta_rad, dtype=np.float64)
    if theta_rad.ndim != 2 or theta_rad.shape[1] != N_JOINTS or theta_rad.shape[0] < 1:
        raise ValueError(f"expected (N, {N_JOINTS}) angles with N >= 1, got {theta_rad.shape}")
    return np.stack([forward_kinematics(table, q) for q in theta_rad])


def _joint_bases(row):
    """Constant matrices B0, B1, B2 with T(theta) = B0 + cos*B1 + sin*B2."""
    ca, sa = np.cos(row.alpha), np.sin(row.alpha)
    b1 = np.array([
        [1.0, 0.0, 0.0, row.a],
        [0.0, ca, -sa, 0.0],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
    ])
    b2 = np.array([
        [0.0, -ca, sa, 0.0],
        [1.0, 0.0, 0.0, row.a],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
    ])
    b0 = np.array([
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, sa, ca, row.d],
        [0.0, 0.0, 0.0, 1.0],
    ])
    return b0, b1, b2


_SELECT_XYZ = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
])
_HOMOG_COLUMN = np.array([[0.0], [0.0], [0.0], [1.0]])


def fk_graph(table, theta_node):
    """Autodiff-graph forward kinematics.

    theta_node: Node of shape (B, 6), radians. Returns a (B, 3) node of
    end positions, differentiable with respect to the angles.
    """
    n_batch = theta_node.shape[0]
    chain = None
    for i, row in enumerate(table.rows):
        onehot = np.zeros((N_JOINTS, 1))
        onehot[i, 0] = 1.0
        th = ad.reshape(theta_node @ ad.const(onehot), (n_batch, 1, 1))
        if row.theta_offset != 0.0:
            th = th + row.theta_offset
        b0, b1, b2 = _joint_bases(row)
        t_i = ad.cos(th) * ad.const(b1) + ad.sin(th) * ad.const(b2) + ad.const(b0)
        chain = t_i if chain is None else chain @ t_i
    chain = chain @ ad.const(table.tool_offset)
    pos = ad.const(_SELECT_XYZ) @ (chain @ ad.const(_HOMOG_COLUMN))
    return ad.reshape(pos, (n_batch, 3))

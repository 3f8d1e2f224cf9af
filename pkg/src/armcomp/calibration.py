"""Rigid base-to-world registration from corresponding point pairs.

Least-squares fit of rotation + translation via centroid removal,
covariance SVD and reflection correction (Arun/Huang/Blostein 1987,
a.k.a. Kabsch). Input points are mm.
"""

from dataclasses import dataclass

import numpy as np

# Points are collinear when the second singular value of the centered
# base set falls under this fraction of the largest.
RANK_TOL = 1e-9


class DegenerateGeometryError(ValueError):
    """Centered base points have rank < 2 (collinear or coincident)."""


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray      # 3x3, det +1
    translation: np.ndarray   # (3,) mm

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"bad transform shapes {r.shape}, {t.shape}")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-10):
            raise ValueError("rotation not orthonormal")
        if not np.isclose(np.linalg.det(r), 1.0, atol=1e-10):
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)


def fit_rigid_transform(base_points, world_points):
    """Fit world = R @ base + T in the least-squares sense.

    base_points, world_points: (N, 3) with N >= 3, in correspondence.
    The reflection case (det = -1 of the raw SVD solution) is corrected
    so the result is always a proper rotation.
    """
    q = np.asarray(base_points, dtype=np.float64)
    p = np.asarray(world_points, dtype=np.float64)
    if q.shape != p.shape or q.ndim != 2 or q.shape[1] != 3:
        raise ValueError(f"expected matching (N, 3) arrays, got {q.shape} and {p.shape}")
    n = q.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 correspondences, got {n}")

    q_bar = q.mean(axis=0)
    p_bar = p.mean(axis=0)
    qc = q - q_bar
    pc = p - p_bar

    sv = np.linalg.svd(qc, compute_uv=False)
    if sv[1] < RANK_TOL * sv[0]:
        raise DegenerateGeometryError("base points are collinear or coincident")

    # 1/n kept for fidelity with the centroid formulation; it cancels in R.
    h = qc.T @ pc / n
    u, _, vt = np.linalg.svd(h)
    v = vt.T
    d = np.linalg.det(v @ u.T)
    r = v @ np.diag([1.0, 1.0, d]) @ u.T
    t = p_bar - r @ q_bar
    return RigidTransform(rotation=r, translation=t)


def apply_transform(transform, points):
    """Map (N, 3) base-frame points into the world frame."""
    points = np.asarray(points, dtype=np.float64)
    return points @ transform.rotation.T + transform.translation


def compose(second, first):
    """Transform equal to applying `first`, then `second`."""
    return RigidTransform(
        rotation=second.rotation @ first.rotation,
        translation=second.rotation @ first.translation + second.translation,
    )


def fit_residual_rms(transform, base_points, world_points):
    """Root-mean-square distance between mapped base points and world points."""
    mapped = apply_transform(transform, base_points)
    return float(np.sqrt(np.mean(np.sum((mapped - world_points) ** 2, axis=1))))

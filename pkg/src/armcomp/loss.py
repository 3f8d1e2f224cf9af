"""Hybrid training loss: coordinate-space data residual plus a
spatial-structure residual that aligns the normalized pairwise
squared-distance matrices of predictions and of the ideal kinematic
positions, with trainable log-parameterized weights."""

import numpy as np

from . import autodiff as ad

# If the predicted points collapse early in training, normalize their
# distance matrix by this guard instead of ~zero, so no NaN is produced.
NORM_GUARD = 1e-12


class DegenerateBatchError(ValueError):
    """All reference points of a batch coincide; the normalized distance
    matrix is undefined."""


def data_loss(pred, target):
    """Mean over samples of the squared Euclidean error (mm^2).

    pred: (N, 3) node; target: (N, 3) array or node.
    """
    pred = ad._as_node(pred)
    target = ad._as_node(target)
    if pred.shape != target.shape:
        raise ValueError(f"data_loss: shape mismatch {pred.shape} vs {target.shape}")
    if pred.shape[0] < 1:
        raise ValueError("data_loss: empty batch")
    return ad.mean(ad.sumsq(pred - target, axis=1))


def distance_matrix(points):
    """Pairwise squared Euclidean distances of an (N, 3) point batch."""
    points = ad._as_node(points)
    n = points.shape[0]
    if n < 2:
        raise ValueError("distance_matrix: need at least 2 points")
    diff = ad.reshape(points, (n, 1, 3)) - ad.reshape(points, (1, n, 3))
    return ad.sumsq(diff, axis=2)


def physics_loss(pred, theory):
    """Mean squared difference between the max-normalized distance
    matrices of predicted and theoretical positions.

    Invariant under rigid motion and uniform scaling of either point set.
    """
    d_theory = distance_matrix(theory)
    max_theory = ad.amax(d_theory)
    if float(max_theory.value) <= 0.0:
        raise DegenerateBatchError("all theoretical points coincide")
    d_pred = distance_matrix(pred)
    max_pred = ad.amax(d_pred)
    if float(max_pred.value) < NORM_GUARD:
        norm_pred = d_pred / NORM_GUARD
    else:
        norm_pred = d_pred / max_pred
    diff = norm_pred - d_theory / max_theory
    return ad.mean(diff * diff)


def total_loss(l_data, l_physics, log_lambda_data, log_lambda_physics):
    """exp(log_lambda_data) * l_data + exp(log_lambda_physics) * l_physics.

    Both log weights are trainable leaves updated by the same backward
    pass as the model weights; exponentiation keeps the effective
    weights strictly positive. Pass l_physics=None to drop the spatial
    term (data-only mode, or batches of size 1).
    """
    total = ad.exp(log_lambda_data) * l_data
    if l_physics is not None:
        total = total + ad.exp(log_lambda_physics) * l_physics
    return total


def normalized_distance_matrices(pred_mm, theory_mm):
    """Plain-array D_pred-norm and D_theory-norm (for export/reporting)."""
    pred = ad.const(np.asarray(pred_mm, dtype=np.float64))
    theory = ad.const(np.asarray(theory_mm, dtype=np.float64))
    d_theory = distance_matrix(theory).value
    max_theory = d_theory.max()
    if max_theory <= 0.0:
        raise DegenerateBatchError("all theoretical points coincide")
    d_pred = distance_matrix(pred).value
    max_pred = max(d_pred.max(), NORM_GUARD)
    return d_pred / max_pred, d_theory / max_theory

"""Gradient-descent inverse joint-angle compensation.

A frozen compensation model acts as the forward map; the six joint
angles become the only trainable leaf and Adam drives the predicted
position onto the target until the MSE falls below the stop threshold.
The solver never mutates the model.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import dataset as ds
from . import kinematics as kin
from . import model as mdl


@dataclass(frozen=True)
class SolverConfig:
    learning_rate: float = 1e-4
    max_iterations: int = 500
    loss_threshold: float = 1e-4   # mm^2 MSE over the three coordinates

    def __post_init__(self):
        if min(self.learning_rate, self.max_iterations, self.loss_threshold) <= 0:
            raise ValueError("solver parameters must be positive")


@dataclass
class CompensationResult:
    delta_theta_deg: np.ndarray
    theta_final_deg: np.ndarray
    iterations: int
    final_loss: float
    converged: bool
    within_limits: bool


class _Adam:
    """Plain Adam on a single array (no weight decay)."""

    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)

    def step(self, x, g):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        x -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _position_mse(model, theta_rad, target):
    out, _ = mdl.forward(model, theta_rad.reshape(1, kin.N_JOINTS))
    return float(np.mean((out["p_pred"].value[0] - target) ** 2))


def compensate(model, theta_initial_deg, target_mm, cfg=None):
    """Solve for joint angles whose predicted position meets the target.

    The angle vector (radians) is the sole trainable leaf, initialized
    from theta_initial_deg; the model must be frozen. Residual-to-target
    MSE is minimized by Adam with early stopping at the loss threshold.
    The returned compensation is final angles (converted back to
    degrees) minus the initial ones.
    """
    cfg = cfg or SolverConfig()
    if not model.frozen:
        raise ValueError("model must be frozen before inverse compensation")
    theta_initial_deg = np.asarray(theta_initial_deg, dtype=np.float64)
    target = np.asarray(target_mm, dtype=np.float64)
    theta = np.deg2rad(theta_initial_deg).reshape(1, kin.N_JOINTS).copy()
    optimizer = _Adam(theta.shape, lr=cfg.learning_rate)

    iterations = cfg.max_iterations
    for it in range(cfg.max_iterations):
        angle_leaf = ad.leaf(theta)
        out, _ = mdl.forward(model, angle_leaf)
        residual = out["p_pred"] - target.reshape(1, 3)
        loss = ad.mean(residual * residual)
        if not np.isfinite(loss.value):
            raise RuntimeError(f"non-finite solver loss at iteration {it}")
        if float(loss.value) < cfg.loss_threshold:
            iterations = it
            break
        grads = ad.backward(loss, [angle_leaf])
        optimizer.step(theta, grads[angle_leaf])

    final_loss = _position_mse(model, theta, target)
    theta_final_rad = theta.reshape(kin.N_JOINTS)
    theta_final_deg = np.rad2deg(theta_final_rad)
    within = bool(np.all(np.abs(theta_final_rad) <= np.pi + 1e-12))
    return CompensationResult(
        delta_theta_deg=theta_final_deg - theta_initial_deg,
        theta_final_deg=theta_final_deg,
        iterations=iterations,
        final_loss=final_loss,
        converged=final_loss < cfg.loss_threshold,
        within_limits=within,
    )


def verify_compensation(world, result, target_mm):
    """Residual distance (mm) reached through the synthetic world (noise
    off) when commanding the compensated angles."""
    reached = ds.measure(world, result.theta_final_deg, rng=None)
    return float(np.linalg.norm(reached - np.asarray(target_mm, dtype=np.float64)))


def residual_components(world, theta_deg, target_mm):
    """Signed per-axis error reached through the world (noise off)."""
    reached = ds.measure(world, theta_deg, rng=None)
    return reached - np.asarray(target_mm, dtype=np.float64)


def summarize_residuals(world, results, targets):
    """Per-axis absolute-error statistics of a compensation batch.

    Returns {axis: {stddev, max, min, mean}} over the absolute reached
    errors, mirroring a standard-deviation/max/min report table.
    """
    errors = np.array([
        residual_components(world, r.theta_final_deg, t)
        for r, t in zip(results, targets)
    ])
    summary = {}
    for ax, name in enumerate(("x", "y", "z")):
        a = np.abs(errors[:, ax])
        summary[name] = {
            "stddev": float(np.std(a)),
            "max": float(np.max(a)),
            "min": float(np.min(a)),
            "mean": float(np.mean(a)),
        }
    return summary


def format_residual_table(summary):
    lines = [f"{'Axis':<6}{'StdDev(mm)':>12}{'Max(mm)':>10}{'Min(mm)':>10}{'Mean(mm)':>10}"]
    for name in ("x", "y", "z"):
        s = summary[name]
        lines.append(f"{name.upper():<6}{s['stddev']:>12.4f}{s['max']:>10.4f}"
                     f"{s['min']:>10.4f}{s['mean']:>10.4f}")
    return "\n".join(lines)

"""Optimization loop, metric suite and structure/loss ablations.

AdamW with decoupled weight decay and global-norm gradient clipping
drives all trainable leaves (network weights, the fusion scale and both
loss log-weights). Checkpoints follow the best validation 3D MAE, and
reported metrics always come from that best checkpoint.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import loss as losses
from . import model as mdl

LOSS_MODES = ("spi", "data_only")

AXES = ("x", "y", "z", "3d")


class DivergenceError(RuntimeError):
    def __init__(self, epoch, step):
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}; "
                         f"last finite epoch: {epoch - 1}")
        self.last_finite_epoch = epoch - 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-6
    batch_size: int = 256
    max_epochs: int = 150
    clip_threshold: float = 1.0
    seed: int = 139
    loss_mode: str = "spi"

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"unknown loss mode {self.loss_mode!r}")
        positives = (self.learning_rate, self.batch_size, self.max_epochs,
                     self.clip_threshold)
        if any(v <= 0 for v in positives) or self.weight_decay < 0:
            raise ValueError("training hyperparameters must be positive")


class AdamW:
    """Adam with decoupled weight decay (decay applied to the parameters
    directly, never mixed into the moment estimates)."""

    def __init__(self, params, lr, weight_decay=0.0, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        # Bias corrections folded into scalars (exact algebra):
        # lr * (m/bc1) / (sqrt(v/bc2) + eps) == step_scale * m / (sqrt(v) + eps_scale)
        step_scale = self.lr * np.sqrt(bc2) / bc1
        eps_scale = self.eps * np.sqrt(bc2)
        decay = 1.0 - self.lr * self.weight_decay
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if self.weight_decay:
                p *= decay
            p -= step_scale * m / (np.sqrt(v) + eps_scale)


def clip_global_norm(grads, threshold):
    """Scale all gradients so their joint L2 norm is at most threshold.
    Returns the pre-clip norm; gradients are untouched when under it."""
    total = 0.0
    for g in grads.values():
        flat = g.reshape(-1)
        total += float(np.dot(flat, flat))
    norm = np.sqrt(total)
    if norm > threshold:
        scale = threshold / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# Metric suite
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    """Per-axis (x, y, z, 3d) MAE/MSE/RMSE in coordinate space and R^2 in
    error space."""
    n: int
    mae: dict
    mse: dict
    rmse: dict
    r2: dict


def _r2(num, den):
    if den <= 0.0:
        return 1.0 if num <= 0.0 else 0.0
    return 1.0 - num / den


def compute_metrics(pred, measured, theoretical):
    """All sixteen metrics from plain arrays.

    MAE/MSE/RMSE compare predicted vs measured coordinates. R^2 is
    computed in error space (errors relative to the theoretical
    positions), with the baseline taken as the mean of the *absolute*
    real errors per axis.
    """
    pred = np.asarray(pred, dtype=np.float64)
    measured = np.asarray(measured, dtype=np.float64)
    theoretical = np.asarray(theoretical, dtype=np.float64)
    if pred.shape != measured.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ValueError(f"expected matching (N, 3) arrays, got {pred.shape} vs {measured.shape}")
    n = pred.shape[0]
    if n == 0:
        raise ValueError("empty sample set")

    diff = pred - measured
    sq = diff ** 2
    mae, mse, rmse, r2 = {}, {}, {}, {}
    for ax, name in enumerate(("x", "y", "z")):
        mae[name] = float(np.mean(np.abs(diff[:, ax])))
        mse[name] = float(np.mean(sq[:, ax]))
        rmse[name] = float(np.sqrt(mse[name]))
    mae["3d"] = float(np.mean(np.sqrt(np.sum(sq, axis=1))))
    mse["3d"] = float(np.mean(np.sum(sq, axis=1)))
    rmse["3d"] = float(np.sqrt(mse["3d"]))

    err_pred = pred - theoretical
    err_real = measured - theoretical
    baseline = np.mean(np.abs(err_real), axis=0)
    res_sq = (err_pred - err_real) ** 2
    base_sq = (baseline[None, :] - err_real) ** 2
    for ax, name in enumerate(("x", "y", "z")):
        r2[name] = _r2(float(np.sum(res_sq[:, ax])), float(np.sum(base_sq[:, ax])))
    r2["3d"] = _r2(float(np.sum(res_sq)), float(np.sum(base_sq)))
    return MetricsReport(n=n, mae=mae, mse=mse, rmse=rmse, r2=r2)


def evaluate(model, samples):
    """MetricsReport of a model on a SampleSet (or subset)."""
    if len(samples) == 0:
        raise ValueError("empty sample set")
    pred = mdl.predict_batch(model, samples.theta_rad)
    return compute_metrics(pred, samples.measured, samples.theoretical)


def format_metrics_table(reports, title=None):
    """Text table: one block per split, rows X/Y/Z/3D."""
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'Split':<8}{'Samples':>8}  {'Axis':<5}{'MAE(mm)':>12}"
                 f"{'MSE(mm2)':>12}{'RMSE(mm)':>12}{'R2':>10}")
    for split, rep in reports.items():
        for name in AXES:
            lines.append(f"{split:<8}{rep.n:>8}  {name.upper():<5}"
                         f"{rep.mae[name]:>12.4f}{rep.mse[name]:>12.4f}"
                         f"{rep.rmse[name]:>12.4f}{rep.r2[name]:>10.4f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    l_data: float
    l_physics: float
    lambda_data: float
    lambda_physics: float
    val_mae_3d: float


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_mae: float = np.inf


def train(model, samples, cfg=None, checkpoint_path=None, checkpoint_header=None):
    """Optimize the model on the train split, tracking the val split.

    Returns (best_params, history); best_params is a deep copy of the
    parameter dict at the epoch with the lowest validation 3D MAE. When
    checkpoint_path is given, the checkpoint file is rewritten each time
    validation improves.
    """
    cfg = cfg or TrainConfig()
    train_set = samples.subset("train")
    val_set = samples.subset("val")
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and val splits must be nonempty")

    optimizer = AdamW(model.params, lr=cfg.learning_rate,
                      weight_decay=cfg.weight_decay)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 4)))
    history = TrainHistory()
    best_params = copy.deepcopy(model.params)

    n_train = len(train_set)
    for epoch in range(cfg.max_epochs):
        order = shuffle_rng.permutation(n_train)
        batch_l_data, batch_l_physics = [], []
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            out, pnodes = mdl.forward(model, train_set.theta_rad[idx])
            l_data = losses.data_loss(out["p_pred"], train_set.measured[idx])
            l_physics = None
            if cfg.loss_mode == "spi" and len(idx) >= 2:
                l_physics = losses.physics_loss(out["p_pred"], out["p_theory"])
            total = losses.total_loss(l_data, l_physics,
                                      pnodes["loss.log_lambda_data"],
                                      pnodes["loss.log_lambda_physics"])
            if not np.isfinite(total.value):
                raise DivergenceError(epoch, start // cfg.batch_size)
            node_grads = ad.backward(total, list(pnodes.values()))
            grads = {name: node_grads[node] for name, node in pnodes.items()}
            clip_global_norm(grads, cfg.clip_threshold)
            optimizer.step(grads)
            batch_l_data.append(float(l_data.value))
            batch_l_physics.append(0.0 if l_physics is None else float(l_physics.value))

        val_mae = evaluate(model, val_set).mae["3d"]
        history.epochs.append(EpochRecord(
            epoch=epoch,
            l_data=float(np.mean(batch_l_data)),
            l_physics=float(np.mean(batch_l_physics)),
            lambda_data=float(np.exp(model.params["loss.log_lambda_data"])),
            lambda_physics=float(np.exp(model.params["loss.log_lambda_physics"])),
            val_mae_3d=val_mae,
        ))
        if val_mae < history.best_val_mae:
            history.best_val_mae = val_mae
            history.best_epoch = epoch
            best_params = copy.deepcopy(model.params)
            if checkpoint_path is not None:
                snapshot = mdl.CompensationModel(
                    config=model.config, table=model.table,
                    table_name=model.table_name, params=best_params)
                mdl.save_checkpoint(snapshot, checkpoint_path,
                                    header=checkpoint_header)
    return best_params, history


def best_model(model, best_params):
    """Fresh model carrying the best-validation parameter snapshot."""
    return mdl.CompensationModel(config=model.config, table=model.table,
                                 table_name=model.table_name,
                                 params=copy.deepcopy(best_params))


def history_rows(history):
    """History as (header, rows of floats) for CSV export."""
    header = "epoch,l_data,l_physics,lambda_data,lambda_physics,val_mae_3d"
    rows = [(r.epoch, r.l_data, r.l_physics, r.lambda_data, r.lambda_physics,
             r.val_mae_3d) for r in history.epochs]
    return header, rows


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------

# Structure/loss ablation groups: model overrides + loss mode.
ABLATION_GROUPS = {
    "baseline": ({}, "spi"),
    "no_mask": ({"mask": "none"}, "spi"),
    "body_mask": ({"mask": "body"}, "spi"),
    "no_resnet": ({"head": "linear"}, "spi"),
    "no_transformer": ({"n_layer": 0}, "spi"),
    "data_only": ({}, "data_only"),
}


def run_ablation(samples, base_config=None, train_config=None, table=None,
                 table_name="ur5", groups=None):
    """Train each ablation group under an identical configuration and
    seed; returns {group: (MetricsReport on test, TrainHistory)}."""
    base_config = base_config or mdl.ModelConfig()
    train_config = train_config or TrainConfig()
    groups = groups or ABLATION_GROUPS
    results = {}
    for name, (overrides, loss_mode) in groups.items():
        config = mdl.clone_config(base_config, **overrides)
        group_cfg = TrainConfig(
            learning_rate=train_config.learning_rate,
            weight_decay=train_config.weight_decay,
            batch_size=train_config.batch_size,
            max_epochs=train_config.max_epochs,
            clip_threshold=train_config.clip_threshold,
            seed=train_config.seed,
            loss_mode=loss_mode,
        )
        net = mdl.CompensationModel(config=config, table=table,
                                    table_name=table_name, seed=group_cfg.seed)
        best_params, history = train(net, samples, group_cfg)
        report = evaluate(best_model(net, best_params), samples.subset("test"))
        results[name] = (report, history)
    return results


def format_ablation_table(results):
    lines = [f"{'Group':<16}{'BestEpoch':>10}{'Test MAE 3D(mm)':>18}"
             f"{'Test RMSE 3D(mm)':>18}{'Test R2 3D':>12}"]
    for name, (report, history) in results.items():
        lines.append(f"{name:<16}{history.best_epoch:>10}"
                     f"{report.mae['3d']:>18.4f}{report.rmse['3d']:>18.4f}"
                     f"{report.r2['3d']:>12.4f}")
    return "\n".join(lines)

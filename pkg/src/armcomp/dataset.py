"""Synthetic error-world generation, sampling and persistence.

The error world is a ground-truth robot that deviates from the nominal
DH table (per-link geometric perturbations plus a smooth joint
deflection term and measurement noise). It stands in for a physical
measurement campaign, so every experiment here is reconstructible from
seeds. Angles are degrees in files and radians internally, converted
exactly once at ingestion.
"""

import io
from dataclasses import dataclass, field

import numpy as np

from . import kinematics as kin

SPLITS = ("train", "val", "test")

DEFAULT_N_SAMPLES = 724
DEFAULT_DATA_SEED = 7
DEFAULT_WORLD_SEED = 3

# Frontal-workspace sampling ranges, degrees per joint.
DEFAULT_JOINT_RANGES = (
    (-90.0, 90.0),
    (-120.0, -60.0),
    (-60.0, 60.0),
    (-120.0, 120.0),
    (-120.0, 120.0),
    (-180.0, 180.0),
)

CSV_HEADER = "j1_deg,j2_deg,j3_deg,j4_deg,j5_deg,j6_deg,x_mm,y_mm,z_mm,split"


@dataclass(frozen=True)
class WorldBounds:
    """Half-widths of the uniform perturbation draws."""
    delta_a_mm: float = 0.5
    delta_d_mm: float = 0.5
    delta_alpha_deg: float = 0.1
    delta_theta_deg: float = 0.1
    compliance_deg: float = 0.05
    noise_sigma_mm: float = 0.02

    def __post_init__(self):
        vals = (self.delta_a_mm, self.delta_d_mm, self.delta_alpha_deg,
                self.delta_theta_deg, self.compliance_deg, self.noise_sigma_mm)
        if any((not np.isfinite(v)) or v < 0 for v in vals):
            raise ValueError(f"perturbation bounds must be finite and >= 0, got {vals}")


@dataclass(frozen=True)
class ErrorWorld:
    true_table: kin.DHTable
    compliance: np.ndarray          # (6,) rad, deflection coefficients
    noise_sigma: float              # mm, per-axis measurement noise
    seed: int
    nominal: kin.DHTable = field(default_factory=kin.ur5_table)


def generate_world(seed, bounds=None, nominal=None):
    """Deterministic world from a seed: uniform draws within bounds."""
    bounds = bounds or WorldBounds()
    nominal = nominal or kin.ur5_table()
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    dd = rng.uniform(-bounds.delta_d_mm, bounds.delta_d_mm, kin.N_JOINTS)
    da = rng.uniform(-bounds.delta_a_mm, bounds.delta_a_mm, kin.N_JOINTS)
    dalpha = np.deg2rad(rng.uniform(-bounds.delta_alpha_deg, bounds.delta_alpha_deg, kin.N_JOINTS))
    dtheta = np.deg2rad(rng.uniform(-bounds.delta_theta_deg, bounds.delta_theta_deg, kin.N_JOINTS))
    compliance = np.deg2rad(rng.uniform(-bounds.compliance_deg, bounds.compliance_deg, kin.N_JOINTS))
    rows = nominal.as_array()
    rows[:, 0] += dd
    rows[:, 1] += da
    rows[:, 2] += dalpha
    rows[:, 3] += dtheta
    true_table = kin.table_from_array(rows, tool_offset=nominal.tool_offset)
    return ErrorWorld(true_table=true_table, compliance=compliance,
                      noise_sigma=bounds.noise_sigma_mm, seed=seed, nominal=nominal)


def measure(world, theta_deg, rng=None):
    """Measured end position (mm) at a commanded pose.

    Forward kinematics through the true table with a gravity-proxy
    deflection added per joint, plus isotropic Gaussian noise when an
    rng is supplied and noise_sigma > 0. rng=None turns noise off.
    """
    theta = kin.joint_angles_from_deg(theta_deg)
    effective = theta + world.compliance * np.cos(theta)
    pos = kin.forward_kinematics(world.true_table, effective)
    if rng is not None and world.noise_sigma > 0:
        pos = pos + rng.normal(0.0, world.noise_sigma, 3)
    return pos


@dataclass
class SampleSet:
    """Pose/measurement batch with deterministic split labels.

    theta_deg   : (n, 6) commanded angles, degrees (file unit)
    theta_rad   : (n, 6) wrapped radians (converted once at construction)
    measured    : (n, 3) mm
    theoretical : (n, 3) mm, nominal forward kinematics of theta
    split       : (n,) labels from SPLITS
    """
    theta_deg: np.ndarray
    measured: np.ndarray
    theoretical: np.ndarray
    split: np.ndarray
    seed: int
    theta_rad: np.ndarray = None

    def __post_init__(self):
        if self.theta_rad is None:
            self.theta_rad = kin.joint_angles_from_deg(self.theta_deg)

    def __len__(self):
        return self.theta_deg.shape[0]

    def indices(self, split):
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return np.nonzero(self.split == split)[0]

    def subset(self, split):
        idx = self.indices(split)
        return SampleSet(theta_deg=self.theta_deg[idx], measured=self.measured[idx],
                         theoretical=self.theoretical[idx], split=self.split[idx],
                         seed=self.seed, theta_rad=self.theta_rad[idx])


def split_labels(n, seed):
    """Deterministic 8:1:1 labels; leftover after flooring the val and
    test tenths goes to train (724 -> 580/72/72)."""
    n_val = n // 10
    n_test = n // 10
    n_train = n - n_val - n_test
    rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))
    perm = rng.permutation(n)
    labels = np.empty(n, dtype=object)
    labels[perm[:n_train]] = "train"
    labels[perm[n_train:n_train + n_val]] = "val"
    labels[perm[n_train + n_val:]] = "test"
    return labels.astype(str)


def _sample_one(world, ranges, seed, index):
    """One sample from its private stream (independent of worker count)."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 1, index)))
    theta_deg = np.array([rng.uniform(lo, hi) for lo, hi in ranges])
    measured = measure(world, theta_deg, rng)
    return theta_deg, measured


def sample_dataset(world, n=DEFAULT_N_SAMPLES, seed=DEFAULT_DATA_SEED, ranges=None):
    """n poses drawn uniformly from the per-joint ranges, measured
    through the world, split 8:1:1 by seeded shuffle."""
    if n < 10:
        raise ValueError(f"need at least 10 samples for an 8:1:1 split, got {n}")
    ranges = ranges or DEFAULT_JOINT_RANGES
    if len(ranges) != kin.N_JOINTS:
        raise ValueError(f"expected {kin.N_JOINTS} joint ranges")
    theta_deg = np.empty((n, kin.N_JOINTS))
    measured = np.empty((n, 3))
    for i in range(n):
        theta_deg[i], measured[i] = _sample_one(world, ranges, seed, i)
    theta_rad = kin.joint_angles_from_deg(theta_deg)
    theoretical = kin.forward_kinematics_batch(world.nominal, theta_rad)
    return SampleSet(theta_deg=theta_deg, measured=measured, theoretical=theoretical,
                     split=split_labels(n, seed), seed=seed, theta_rad=theta_rad)


def uncompensated_baseline_mae(samples):
    """Mean 3D distance between nominal kinematics and measurement."""
    return float(np.mean(np.linalg.norm(samples.theoretical - samples.measured, axis=1)))


# ---------------------------------------------------------------------------
# Persistence (lossless full-precision decimal CSV + world description)
# ---------------------------------------------------------------------------

def write_dataset(samples, path, header=None):
    buf = io.StringIO()
    if header:
        buf.write(header + "\n")
    buf.write(f"# seed={samples.seed}\n")
    buf.write(CSV_HEADER + "\n")
    for i in range(len(samples)):
        cells = [repr(float(v)) for v in samples.theta_deg[i]]
        cells += [repr(float(v)) for v in samples.measured[i]]
        cells.append(samples.split[i])
        buf.write(",".join(cells) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def read_dataset(path, nominal=None, check_tol=1e-9):
    """Read a dataset CSV; the theoretical column is recomputed from the
    angles through the nominal table and (when the file predates this
    tool) validated against it."""
    nominal = nominal or kin.ur5_table()
    expected_cols = CSV_HEADER.split(",")
    seed = 0
    rows = []
    with open(path) as fh:
        header_seen = False
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "seed=" in line:
                    seed = int(line.split("seed=")[1].split()[0])
                continue
            cells = line.split(",")
            if not header_seen:
                if cells != expected_cols:
                    raise ValueError(
                        f"{path}:{lineno}: expected header {CSV_HEADER!r}, got {line!r}")
                header_seen = True
                continue
            if len(cells) != len(expected_cols):
                raise ValueError(
                    f"{path}:{lineno}: expected {len(expected_cols)} columns, got {len(cells)}")
            values = []
            for col, cell in zip(expected_cols[:-1], cells[:-1]):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: non-numeric value {cell!r} in column {col}") from None
            split = cells[-1]
            if split not in SPLITS:
                raise ValueError(f"{path}:{lineno}: unknown split label {split!r}")
            rows.append((values, split))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    theta_deg = np.array([r[0][:6] for r in rows])
    measured = np.array([r[0][6:9] for r in rows])
    split = np.array([r[1] for r in rows])
    theta_rad = kin.joint_angles_from_deg(theta_deg)
    theoretical = kin.forward_kinematics_batch(nominal, theta_rad)
    samples = SampleSet(theta_deg=theta_deg, measured=measured, theoretical=theoretical,
                        split=split, seed=seed, theta_rad=theta_rad)
    err = np.abs(theoretical - kin.forward_kinematics_batch(nominal, samples.theta_rad)).max()
    if err > check_tol:
        raise ValueError(f"{path}: theoretical positions deviate from nominal FK by {err}")
    return samples


def write_world(world, path, header=None):
    lines = []
    if header:
        lines.append(header)
    lines.append(f"seed {world.seed}")
    lines.append(f"noise_sigma_mm {float(world.noise_sigma)!r}")
    for row in world.true_table.as_array():
        lines.append("true_row " + " ".join(repr(float(v)) for v in row))
    lines.append("compliance_rad " + " ".join(repr(float(v)) for v in world.compliance))
    for row in world.nominal.as_array():
        lines.append("nominal_row " + " ".join(repr(float(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_world(path):
    true_rows, nominal_rows = [], []
    compliance = None
    seed = 0
    sigma = 0.0
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "seed":
                seed = int(parts[1])
            elif parts[0] == "noise_sigma_mm":
                sigma = float(parts[1])
            elif parts[0] == "true_row":
                true_rows.append([float(v) for v in parts[1:]])
            elif parts[0] == "nominal_row":
                nominal_rows.append([float(v) for v in parts[1:]])
            elif parts[0] == "compliance_rad":
                compliance = np.array([float(v) for v in parts[1:]])
            else:
                raise ValueError(f"{path}: unknown world field {parts[0]!r}")
    return ErrorWorld(true_table=kin.table_from_array(np.array(true_rows)),
                      compliance=compliance, noise_sigma=sigma, seed=seed,
                      nominal=kin.table_from_array(np.array(nominal_rows)))

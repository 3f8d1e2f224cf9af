"""Run configuration: INI file with sections for the synthetic world,
joint ranges, DH table, model, training and solver. Unknown sections or
keys are rejected; flags override file values at the CLI layer."""

import configparser
import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import dataset as ds
from . import kinematics as kin
from . import model as mdl
from . import training as tr
from . import inverse as inv


@dataclass
class RunConfig:
    world: ds.WorldBounds = field(default_factory=ds.WorldBounds)
    world_seed: int = ds.DEFAULT_WORLD_SEED
    n_samples: int = ds.DEFAULT_N_SAMPLES
    data_seed: int = ds.DEFAULT_DATA_SEED
    joint_ranges: tuple = ds.DEFAULT_JOINT_RANGES
    table_name: str = "ur5"
    table: kin.DHTable = field(default_factory=kin.ur5_table)
    model: mdl.ModelConfig = field(default_factory=mdl.ModelConfig)
    train: tr.TrainConfig = field(default_factory=tr.TrainConfig)
    solver: inv.SolverConfig = field(default_factory=inv.SolverConfig)


_SECTION_KEYS = {
    "world": {"seed", "delta_a_mm", "delta_d_mm", "delta_alpha_deg",
              "delta_theta_deg", "compliance_deg", "noise_sigma_mm"},
    "data": {"n", "seed"},
    "joint_ranges": {"j1", "j2", "j3", "j4", "j5", "j6"},
    "dh_table": {"name", "rows", "tool"},
    "model": {"d_model", "n_layer", "n_head", "d_hidden", "mask",
              "alpha_init", "head"},
    "train": {"learning_rate", "weight_decay", "batch_size", "max_epochs",
              "clip_threshold", "seed", "loss_mode"},
    "solver": {"learning_rate", "max_iterations", "loss_threshold"},
}


def _check_keys(parser, path):
    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ValueError(f"{path}: unknown config section [{section}]")
        allowed = _SECTION_KEYS[section]
        for key in parser[section]:
            if key not in allowed:
                raise ValueError(f"{path}: unknown key {key!r} in section [{section}]")


def _get(parser, section, key, cast, default):
    if parser.has_option(section, key):
        return cast(parser.get(section, key))
    return default


def load_config(path=None):
    """RunConfig from an INI file; None gives pure defaults."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    with open(path) as fh:
        parser.read_file(fh, source=str(path))
    _check_keys(parser, path)

    if parser.has_section("world"):
        cfg.world = ds.WorldBounds(
            delta_a_mm=_get(parser, "world", "delta_a_mm", float, cfg.world.delta_a_mm),
            delta_d_mm=_get(parser, "world", "delta_d_mm", float, cfg.world.delta_d_mm),
            delta_alpha_deg=_get(parser, "world", "delta_alpha_deg", float, cfg.world.delta_alpha_deg),
            delta_theta_deg=_get(parser, "world", "delta_theta_deg", float, cfg.world.delta_theta_deg),
            compliance_deg=_get(parser, "world", "compliance_deg", float, cfg.world.compliance_deg),
            noise_sigma_mm=_get(parser, "world", "noise_sigma_mm", float, cfg.world.noise_sigma_mm),
        )
        cfg.world_seed = _get(parser, "world", "seed", int, cfg.world_seed)
    if parser.has_section("data"):
        cfg.n_samples = _get(parser, "data", "n", int, cfg.n_samples)
        cfg.data_seed = _get(parser, "data", "seed", int, cfg.data_seed)
    if parser.has_section("joint_ranges"):
        ranges = []
        for i in range(kin.N_JOINTS):
            raw = parser.get("joint_ranges", f"j{i + 1}", fallback=None)
            if raw is None:
                ranges.append(cfg.joint_ranges[i])
                continue
            lo, hi = (float(v) for v in raw.split())
            if hi < lo:
                raise ValueError(f"{path}: empty range for joint {i + 1}: {raw!r}")
            ranges.append((lo, hi))
        cfg.joint_ranges = tuple(ranges)
    if parser.has_section("dh_table"):
        cfg.table_name = _get(parser, "dh_table", "name", str, cfg.table_name)
        raw_rows = parser.get("dh_table", "rows", fallback=None)
        raw_tool = parser.get("dh_table", "tool", fallback=None)
        tool = None
        if raw_tool is not None:
            vals = [float(v) for v in raw_tool.split()]
            if len(vals) != 16:
                raise ValueError(f"{path}: tool offset needs 16 values, got {len(vals)}")
            tool = np.array(vals).reshape(4, 4)
        if raw_rows is not None:
            rows = [[float(v) for v in line.split()]
                    for line in raw_rows.strip().splitlines()]
            cfg.table = kin.table_from_array(np.array(rows), tool_offset=tool)
            if not parser.has_option("dh_table", "name"):
                cfg.table_name = "custom"
        elif cfg.table_name == "ur5":
            cfg.table = kin.ur5_table() if tool is None else kin.DHTable(
                rows=kin.ur5_table().rows, tool_offset=tool)
        else:
            raise ValueError(f"{path}: unknown built-in table {cfg.table_name!r} "
                             "(supply rows for custom tables)")
    if parser.has_section("model"):
        cfg.model = mdl.ModelConfig(
            d_model=_get(parser, "model", "d_model", int, cfg.model.d_model),
            n_layer=_get(parser, "model", "n_layer", int, cfg.model.n_layer),
            n_head=_get(parser, "model", "n_head", int, cfg.model.n_head),
            d_hidden=_get(parser, "model", "d_hidden", int, cfg.model.d_hidden),
            mask=_get(parser, "model", "mask", str, cfg.model.mask),
            alpha_init=_get(parser, "model", "alpha_init", float, cfg.model.alpha_init),
            head=_get(parser, "model", "head", str, cfg.model.head),
        )
    if parser.has_section("train"):
        cfg.train = tr.TrainConfig(
            learning_rate=_get(parser, "train", "learning_rate", float, cfg.train.learning_rate),
            weight_decay=_get(parser, "train", "weight_decay", float, cfg.train.weight_decay),
            batch_size=_get(parser, "train", "batch_size", int, cfg.train.batch_size),
            max_epochs=_get(parser, "train", "max_epochs", int, cfg.train.max_epochs),
            clip_threshold=_get(parser, "train", "clip_threshold", float, cfg.train.clip_threshold),
            seed=_get(parser, "train", "seed", int, cfg.train.seed),
            loss_mode=_get(parser, "train", "loss_mode", str, cfg.train.loss_mode),
        )
    if parser.has_section("solver"):
        cfg.solver = inv.SolverConfig(
            learning_rate=_get(parser, "solver", "learning_rate", float, cfg.solver.learning_rate),
            max_iterations=_get(parser, "solver", "max_iterations", int, cfg.solver.max_iterations),
            loss_threshold=_get(parser, "solver", "loss_threshold", float, cfg.solver.loss_threshold),
        )
    return cfg


def canonical_text(cfg):
    """Stable one-line-per-field rendering used for hashing."""
    parts = [
        f"world={cfg.world}", f"world_seed={cfg.world_seed}",
        f"n={cfg.n_samples}", f"data_seed={cfg.data_seed}",
        f"ranges={cfg.joint_ranges}", f"table={cfg.table_name}",
        "rows=" + ";".join(",".join(repr(float(v)) for v in row)
                           for row in cfg.table.as_array()),
        "tool=" + ",".join(repr(float(v)) for v in cfg.table.tool_offset.ravel()),
        f"model={cfg.model}", f"train={cfg.train}", f"solver={cfg.solver}",
    ]
    return "\n".join(parts)


def config_hash(cfg):
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()[:12]

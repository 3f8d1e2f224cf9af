"""Data branch and fusion for end-effector error compensation.

Per-joint linear embeddings (no positional encoding), a stack of
post-norm transformer encoder layers whose attention is restricted by a
6x6 binary mask reflecting the kinematic chain, a residual-block head
that maps the six tokens to a 3-vector compensation, and a trainable
scale fusing that compensation onto the ideal kinematic position.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import kinematics as kin

MASK_KINDS = ("spi", "body", "none")
HEAD_KINDS = ("residual", "linear")

# Hierarchical mask: joints 1-3 (coarse position group) see everything;
# joints 4-6 (fine orientation group) see their own group plus joint 3.
# Row = query joint, column = key joint; 1 = blocked.
_SPI_MASK = np.array([
    [0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 0],
    [1, 1, 0, 0, 0, 0],
    [1, 1, 1, 0, 0, 0],
    [1, 1, 1, 0, 0, 0],
], dtype=np.float64)

# Chain-neighborhood mask: each joint sees itself and its immediate
# chain neighbors, with a wider reach for the first two joints.
_BODY_MASK = np.array([
    [0, 0, 1, 1, 1, 1],
    [0, 0, 0, 1, 1, 1],
    [1, 0, 0, 0, 1, 1],
    [1, 1, 0, 0, 0, 1],
    [1, 1, 1, 0, 0, 0],
    [1, 1, 1, 1, 0, 0],
], dtype=np.float64)


def build_mask(kind):
    """6x6 binary attention mask (0 = visible, 1 = masked)."""
    if kind == "spi":
        return _SPI_MASK.copy()
    if kind == "body":
        return _BODY_MASK.copy()
    if kind == "none":
        return np.zeros((6, 6))
    raise ValueError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 126
    n_layer: int = 4
    n_head: int = 9
    d_hidden: int = 512
    mask: str = "spi"
    alpha_init: float = 0.1
    head: str = "residual"

    def __post_init__(self):
        if self.mask not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.mask!r}")
        if self.head not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {self.head!r}")
        if min(self.d_model, self.n_head, self.d_hidden) <= 0 or self.n_layer < 0:
            raise ValueError("model dimensions must be positive (n_layer >= 0)")
        if self.d_model % self.n_head != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by n_head={self.n_head}")


def _init_params(config, rng):
    """Parameter dict; linear maps drawn uniform in +-1/sqrt(fan_in)."""

    def linear(name, fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"{name}.w"] = rng.uniform(-bound, bound, (fan_in, fan_out))
        params[f"{name}.b"] = rng.uniform(-bound, bound, fan_out)

    params = {}
    d = config.d_model
    for i in range(kin.N_JOINTS):
        linear(f"embed.{i}", 1, d)
    for layer in range(config.n_layer):
        for proj in ("wq", "wk", "wv", "wo"):
            linear(f"enc.{layer}.{proj}", d, d)
        params[f"enc.{layer}.norm1.g"] = np.ones(d)
        params[f"enc.{layer}.norm1.b"] = np.zeros(d)
        linear(f"enc.{layer}.ff1", d, 4 * d)
        linear(f"enc.{layer}.ff2", 4 * d, d)
        params[f"enc.{layer}.norm2.g"] = np.ones(d)
        params[f"enc.{layer}.norm2.b"] = np.zeros(d)
    flat = kin.N_JOINTS * d
    linear("head.l1", flat, config.d_hidden)
    linear("head.l2", config.d_hidden, config.d_hidden)
    if config.head == "residual":
        linear("head.shortcut", flat, config.d_hidden)
    linear("head.out", config.d_hidden, 3)
    params["fusion.alpha"] = np.asarray(config.alpha_init, dtype=np.float64)
    params["loss.log_lambda_data"] = np.asarray(0.0)
    params["loss.log_lambda_physics"] = np.asarray(0.0)
    return params


class CompensationModel:
    """All trainable state of the compensation network.

    Parameters live in a name -> float64 array dict; the attention mask
    and the nominal DH table are fixed at construction. A frozen model
    never mutates its parameters (contract relied on by the inverse
    solver).
    """

    def __init__(self, config=None, table=None, table_name="ur5", seed=139,
                 params=None):
        self.config = config or ModelConfig()
        self.table = table or kin.ur5_table()
        self.table_name = table_name
        self.mask = build_mask(self.config.mask)
        if params is None:
            rng = np.random.default_rng(np.random.SeedSequence(seed))
            params = _init_params(self.config, rng)
        self.params = params
        self.frozen = False

    def freeze(self):
        self.frozen = True
        return self

    def param_names(self):
        return list(self.params.keys())


def forward(model, angles_rad, trainable_angles=False, capture_attention=None):
    """Build the full forward graph for a batch of joint angles.

    angles_rad: (B, 6) array, or a Node when the caller owns the leaf.
    Returns (outputs, param_nodes) where outputs has Nodes 'p_pred',
    'p_theory', 'delta_p'. param_nodes maps parameter names to graph
    leaves (trainable unless the model is frozen). With
    capture_attention=list, per-layer (B, n_head, 6, 6) attention weight
    arrays are appended to it.
    """
    cfg = model.config
    d = cfg.d_model
    if isinstance(angles_rad, ad.Node):
        r = angles_rad
    else:
        angles_rad = np.asarray(angles_rad, dtype=np.float64)
        node = ad.leaf if trainable_angles else ad.const
        r = node(angles_rad)
    if len(r.shape) != 2 or r.shape[1] != kin.N_JOINTS:
        raise ValueError(f"expected (B, {kin.N_JOINTS}) angles, got {r.shape}")
    n_batch = r.shape[0]

    make = ad.const if model.frozen else ad.leaf
    p = {name: (arr if isinstance(arr, ad.Node) else make(arr))
         for name, arr in model.params.items()}

    # Per-joint embeddings: disjoint parameters, no positional encoding.
    tokens = []
    for i in range(kin.N_JOINTS):
        onehot = np.zeros((kin.N_JOINTS, 1))
        onehot[i, 0] = 1.0
        col = r @ ad.const(onehot)                        # (B, 1)
        tok = ad.relu(col @ p[f"embed.{i}.w"] + p[f"embed.{i}.b"])
        tokens.append(ad.reshape(tok, (n_batch, 1, d)))
    x = ad.concat(tokens, axis=1)                         # (B, 6, d)

    additive_mask = model.mask * ad.NEG_INF
    d_k = d // cfg.n_head
    scale = np.sqrt(d_k)
    for layer in range(cfg.n_layer):
        pre = f"enc.{layer}"

        def heads(z):
            z = ad.reshape(z, (n_batch, kin.N_JOINTS, cfg.n_head, d_k))
            return ad.transpose(z, (0, 2, 1, 3))          # (B, h, 6, d_k)

        q = heads(x @ p[f"{pre}.wq.w"] + p[f"{pre}.wq.b"])
        k = heads(x @ p[f"{pre}.wk.w"] + p[f"{pre}.wk.b"])
        v = heads(x @ p[f"{pre}.wv.w"] + p[f"{pre}.wv.b"])
        scores = (q @ ad.transpose(k, (0, 1, 3, 2))) / scale
        weights = ad.masked_softmax(scores, additive_mask)
        if capture_attention is not None:
            capture_attention.append(weights.value.copy())
        attn = ad.transpose(weights @ v, (0, 2, 1, 3))    # (B, 6, h, d_k)
        attn = ad.reshape(attn, (n_batch, kin.N_JOINTS, d))
        attn = attn @ p[f"{pre}.wo.w"] + p[f"{pre}.wo.b"]
        x = ad.layer_norm(x + attn, p[f"{pre}.norm1.g"], p[f"{pre}.norm1.b"])
        ff = ad.relu(x @ p[f"{pre}.ff1.w"] + p[f"{pre}.ff1.b"])
        ff = ff @ p[f"{pre}.ff2.w"] + p[f"{pre}.ff2.b"]
        x = ad.layer_norm(x + ff, p[f"{pre}.norm2.g"], p[f"{pre}.norm2.b"])

    # Head: flattened tokens -> compensation vector.
    flat = ad.reshape(x, (n_batch, kin.N_JOINTS * d))
    a = ad.relu(flat @ p["head.l1.w"] + p["head.l1.b"])
    b = a @ p["head.l2.w"] + p["head.l2.b"]
    if cfg.head == "residual":
        shortcut = flat @ p["head.shortcut.w"] + p["head.shortcut.b"]
        z = ad.relu(b + shortcut)
    else:
        z = ad.relu(b)
    # The outer ReLU is idempotent on z >= 0; kept for structural fidelity.
    delta_p = ad.relu(z) @ p["head.out.w"] + p["head.out.b"]

    p_theory = kin.fk_graph(model.table, r)
    p_pred = p_theory + p["fusion.alpha"] * delta_p
    outputs = {"p_pred": p_pred, "p_theory": p_theory, "delta_p": delta_p,
               "angles": r}
    return outputs, p


def predict_batch(model, angles_rad):
    """(N, 6) radians -> (N, 3) predicted positions, as plain arrays."""
    out, _ = forward(model, angles_rad)
    return out["p_pred"].value.copy()


def predict(model, theta_rad):
    """Single-pose prediction: (6,) radians -> (3,) mm."""
    theta_rad = np.asarray(theta_rad, dtype=np.float64)
    return predict_batch(model, theta_rad.reshape(1, kin.N_JOINTS))[0]


def attention_maps(model, angles_rad):
    """Per-layer attention weights, each (B, n_head, 6, 6)."""
    captured = []
    forward(model, angles_rad, capture_attention=captured)
    return captured


# ---------------------------------------------------------------------------
# Checkpoint round-trip (versioned text, full-precision decimal)
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(model, path, header=None):
    lines = []
    if header:
        lines.append(header)
    cfg = model.config
    lines.append(f"format_version {CHECKPOINT_VERSION}")
    lines.append(f"d_model {cfg.d_model}")
    lines.append(f"n_layer {cfg.n_layer}")
    lines.append(f"n_head {cfg.n_head}")
    lines.append(f"d_hidden {cfg.d_hidden}")
    lines.append(f"mask {cfg.mask}")
    lines.append(f"alpha_init {float(cfg.alpha_init)!r}")
    lines.append(f"head {cfg.head}")
    lines.append(f"dh_table {model.table_name}")
    for row in model.table.as_array():
        lines.append("dh_row " + " ".join(repr(float(v)) for v in row))
    lines.append("tool_offset " + " ".join(repr(float(v)) for v in model.table.tool_offset.ravel()))
    for name, arr in model.params.items():
        arr = np.asarray(arr)
        shape = " ".join(str(s) for s in arr.shape)
        lines.append(f"param {name} {shape}".rstrip())
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path, frozen=True):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    fields = {}
    dh_rows = []
    tool = None
    params = {}
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        key = parts[0]
        if key == "dh_row":
            dh_rows.append([float(v) for v in parts[1:]])
        elif key == "tool_offset":
            tool = np.array([float(v) for v in parts[1:]]).reshape(4, 4)
        elif key == "param":
            name = parts[1]
            shape = tuple(int(s) for s in parts[2:])
            i += 1
            values = np.array([float(v) for v in lines[i].split()])
            params[name] = values.reshape(shape)
        else:
            fields[key] = parts[1] if len(parts) > 1 else ""
        i += 1
    version = int(fields["format_version"])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version}")
    config = ModelConfig(
        d_model=int(fields["d_model"]),
        n_layer=int(fields["n_layer"]),
        n_head=int(fields["n_head"]),
        d_hidden=int(fields["d_hidden"]),
        mask=fields["mask"],
        alpha_init=float(fields["alpha_init"]),
        head=fields["head"],
    )
    table = kin.table_from_array(np.array(dh_rows), tool_offset=tool)
    model = CompensationModel(config=config, table=table,
                              table_name=fields["dh_table"], params=params)
    if frozen:
        model.freeze()
    return model


def clone_config(config, **overrides):
    return replace(config, **overrides)

"""Command-line entry point.

Subcommands: gen-data, train, eval, compensate, calibrate, export-dm.
All randomness is routed through config seeds, so identical invocations
produce identical output artifacts. Every text output starts with a
comment line carrying the tool version and the effective config hash.
External units are degrees and millimeters.
"""

import argparse
import os
import sys

import numpy as np

from . import __version__
from . import calibration as cal
from . import config as cfgmod
from . import dataset as ds
from . import inverse as inv
from . import loss as losses
from . import model as mdl
from . import report
from . import training as tr


def _header(cfg):
    return f"# armcomp {__version__} config={cfgmod.config_hash(cfg)}"


def _write_text(path, header, body):
    with open(path, "w") as fh:
        fh.write(header + "\n" + body + "\n")


def _load_samples(path, cfg):
    return ds.read_dataset(path, nominal=cfg.table)


def cmd_gen_data(args):
    cfg = cfgmod.load_config(args.config)
    if args.seed is not None:
        cfg.data_seed = args.seed
    if args.n is not None:
        cfg.n_samples = args.n
    if args.world_seed is not None:
        cfg.world_seed = args.world_seed
    world = ds.generate_world(cfg.world_seed, cfg.world, nominal=cfg.table)
    samples = ds.sample_dataset(world, n=cfg.n_samples, seed=cfg.data_seed,
                                ranges=cfg.joint_ranges)
    header = _header(cfg)
    ds.write_dataset(samples, args.out, header=header)
    ds.write_world(world, args.out + ".world", header=header)
    counts = {s: len(samples.indices(s)) for s in ds.SPLITS}
    print(f"wrote {len(samples)} samples to {args.out} "
          f"(train/val/test = {counts['train']}/{counts['val']}/{counts['test']})")
    return 0


def cmd_train(args):
    cfg = cfgmod.load_config(args.config)
    samples = _load_samples(args.data, cfg)
    os.makedirs(args.out, exist_ok=True)
    header = _header(cfg)
    net = mdl.CompensationModel(config=cfg.model, table=cfg.table,
                                table_name=cfg.table_name, seed=cfg.train.seed)
    ckpt_path = os.path.join(args.out, "best.ckpt")
    best_params, history = tr.train(net, samples, cfg.train,
                                    checkpoint_path=ckpt_path,
                                    checkpoint_header=header)
    hist_header, rows = tr.history_rows(history)
    body = [hist_header]
    body += [",".join(repr(v) if isinstance(v, float) else str(v) for v in row)
             for row in rows]
    _write_text(os.path.join(args.out, "history.csv"), header, "\n".join(body))

    best = tr.best_model(net, best_params)
    reports = {split: tr.evaluate(best, samples.subset(split)) for split in ds.SPLITS}
    table = tr.format_metrics_table(reports, title=f"best epoch: {history.best_epoch}")
    _write_text(os.path.join(args.out, "metrics.txt"), header, table)
    report.training_history_figure(history, os.path.join(args.out, "history.png"))
    print(table)
    print(f"checkpoint: {ckpt_path}")
    return 0


def cmd_eval(args):
    cfg = cfgmod.load_config(args.config)
    net = mdl.load_checkpoint(args.checkpoint)
    samples = ds.read_dataset(args.data, nominal=net.table)
    subset = samples.subset(args.split)
    rep = tr.evaluate(net, subset)
    table = tr.format_metrics_table({args.split: rep})
    print(table)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        header = _header(cfg)
        _write_text(os.path.join(args.out, f"metrics_{args.split}.txt"), header, table)
        pred = mdl.predict_batch(net, subset.theta_rad)
        report.error_scatter_figure(pred, subset.measured, subset.theoretical,
                                    os.path.join(args.out, f"error_scatter_{args.split}.png"))
        report.error_histogram_figure(pred, subset.measured,
                                      os.path.join(args.out, f"error_hist_{args.split}.png"))
    return 0


def cmd_compensate(args):
    cfg = cfgmod.load_config(args.config)
    net = mdl.load_checkpoint(args.checkpoint)
    targets, initials = _read_targets(args.targets)
    results = [inv.compensate(net, theta0, target, cfg.solver)
               for target, theta0 in zip(targets, initials)]
    header = _header(cfg)
    lines = ["dtheta1_deg,dtheta2_deg,dtheta3_deg,dtheta4_deg,dtheta5_deg,"
             "dtheta6_deg,iterations,final_loss,converged"]
    for res in results:
        cells = [repr(float(v)) for v in res.delta_theta_deg]
        cells += [str(res.iterations), repr(float(res.final_loss)), str(int(res.converged))]
        lines.append(",".join(cells))
    _write_text(args.out, header, "\n".join(lines))
    n_conv = sum(r.converged for r in results)
    mean_iter = float(np.mean([r.iterations for r in results]))
    print(f"{n_conv}/{len(results)} targets converged; mean iterations {mean_iter:.1f}")

    if args.world:
        world = ds.read_world(args.world)
        summary = inv.summarize_residuals(world, results, targets)
        table = inv.format_residual_table(summary)
        _write_text(args.out + ".residuals.txt", header, table)
        before = [np.linalg.norm(inv.residual_components(world, th0, t))
                  for th0, t in zip(initials, targets)]
        after = [inv.verify_compensation(world, r, t)
                 for r, t in zip(results, targets)]
        report.compensation_figure(before, after, args.out + ".residuals.png")
        print(table)
    return 0


def cmd_calibrate(args):
    cfg = cfgmod.load_config(args.config)
    pairs = _read_point_pairs(args.pairs)
    transform = cal.fit_rigid_transform(pairs[:, :3], pairs[:, 3:])
    rms = cal.fit_residual_rms(transform, pairs[:, :3], pairs[:, 3:])
    lines = ["rotation_row_major " + " ".join(repr(float(v)) for v in transform.rotation.ravel()),
             "translation_mm " + " ".join(repr(float(v)) for v in transform.translation),
             f"fit_rms_mm {float(rms)!r}"]
    _write_text(args.out, _header(cfg), "\n".join(lines))
    print(f"fit RMS {rms:.3e} mm -> {args.out}")
    return 0


def cmd_export_dm(args):
    cfg = cfgmod.load_config(args.config)
    net = mdl.load_checkpoint(args.checkpoint)
    samples = ds.read_dataset(args.data, nominal=net.table).subset(args.split)
    if args.n is not None:
        samples = ds.SampleSet(theta_deg=samples.theta_deg[:args.n],
                               measured=samples.measured[:args.n],
                               theoretical=samples.theoretical[:args.n],
                               split=samples.split[:args.n], seed=samples.seed,
                               theta_rad=samples.theta_rad[:args.n])
    pred = mdl.predict_batch(net, samples.theta_rad)
    d_pred, d_theory = losses.normalized_distance_matrices(pred, samples.theoretical)
    os.makedirs(args.out, exist_ok=True)
    header = _header(cfg)
    for name, mat in (("d_theory_norm", d_theory), ("d_pred_norm", d_pred),
                      ("d_absdiff", np.abs(d_pred - d_theory))):
        body = "\n".join(",".join(repr(float(v)) for v in row) for row in mat)
        _write_text(os.path.join(args.out, f"{name}.csv"), header, body)
    report.distance_matrix_figure(d_theory, d_pred,
                                  os.path.join(args.out, "distance_matrices.png"))
    print(f"wrote {d_pred.shape[0]}x{d_pred.shape[0]} distance matrices to {args.out}")
    return 0


def _read_targets(path):
    targets, initials = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("x"):
                continue
            cells = line.split(",")
            if len(cells) != 9:
                raise ValueError(f"{path}:{lineno}: expected 9 columns "
                                 f"(x,y,z,j1..j6), got {len(cells)}")
            vals = [float(c) for c in cells]
            targets.append(np.array(vals[:3]))
            initials.append(np.array(vals[3:]))
    if not targets:
        raise ValueError(f"{path}: no target rows")
    return targets, initials


def _read_point_pairs(path):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("q"):
                continue
            cells = line.split(",")
            if len(cells) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 columns "
                                 f"(qx,qy,qz,px,py,pz), got {len(cells)}")
            rows.append([float(c) for c in cells])
    if len(rows) < 3:
        raise ValueError(f"{path}: need at least 3 correspondence rows")
    return np.array(rows)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="armcomp",
        description="Kinematic error compensation pipeline for six-axis arms.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic measurement dataset")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, help="sampling/split seed (overrides config)")
    p.add_argument("--n", type=int, help="number of samples (overrides config)")
    p.add_argument("--world-seed", type=int, help="error-world seed (overrides config)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the compensation model")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=ds.SPLITS)
    p.add_argument("--config")
    p.add_argument("--out", help="optional output directory for table + figures")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compensate", help="inverse joint-angle compensation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--targets", required=True,
                   help="CSV of x,y,z,j1..j6 initial angles (mm, deg)")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--world", help="world file for residual verification")
    p.set_defaults(func=cmd_compensate)

    p = sub.add_parser("calibrate", help="rigid base-to-world registration")
    p.add_argument("--pairs", required=True, help="CSV of qx,qy,qz,px,py,pz (mm)")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("export-dm", help="export normalized distance matrices")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=ds.SPLITS)
    p.add_argument("--n", type=int, help="restrict to the first N samples")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_export_dm)
    return parser


def dispatch(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"armcomp: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

"""Command-line runner for the toy experiments.

Every subcommand resolves its configuration as built-in defaults, then a
JSON file given with ``--config``, then explicit flags.  The resolved
configuration is echoed into ``manifest.json`` in the output directory;
passing that manifest back through ``--config`` replays the run and
reproduces its CSV files byte for byte.

CSV schemas
-----------
train-toy        loss.csv         step,kind,loss
ablate-shortcut  ablation.csv     steps,variant,mmd,mmd2
tile-demo        seams.csv        metric,value
fuse-demo        coverage.csv     frame,segments,latent_group
                 positions.csv    position,contributors,segments
                 summary.csv      metric,value
sample           samples.csv      x0,x1,...
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .codec import CodecConfig, encode, latent_group, moving_pattern_clip
from .errors import ShortcutVSRError
from .experiments import ToyTask, default_mixture, evaluation_batch, variant_setup
from .flow import euler_sample
from .io import load_params, read_json, save_params, save_tensor, write_csv, write_json
from .metrics import median_bandwidth, mmd2
from .schedule import ShiftConfig, StepSizeSet, sample_flow_t, sampling_path
from .shortcut import TrainConfig, flow_loss_grad, shortcut_sample, train
from .tiling import (
    frame_coverage,
    fuse_segments,
    gaussian_kernel,
    plan_segments,
    plan_tiles,
    segment_contributions,
    tiled_sample,
)
from .toy import GaussianOracle, ToyNet

DEFAULTS = {
    "train-toy": {
        "variant": "shortcut", "seed": 0, "steps": 8000, "batch_size": 256, "lr": 3e-4,
        "scale": 3.0, "shift": 3.0, "hidden": [64, 64, 64], "flow_fraction": None,
        "scales": None, "exponents": None, "orientation": "reverse", "literal_time": False,
        "ema_decay": 0.999, "n_eval": 20000,
    },
    "ablate-shortcut": {
        "params": {}, "seed": 0, "steps": [1, 2, 4, 10], "n_eval": 4096, "scale": 3.0,
    },
    "tile-demo": {
        "seed": 0, "extent": [28, 28], "tile": [16, 16], "overlap": [4, 4], "sigma": None,
        "channels": 2, "frames": 1, "steps": 4, "shift": 3.0, "noise": "fixed", "oracle_sigma": 0.5,
    },
    "fuse-demo": {
        "seed": 0, "n_frames": 97, "length": 49, "size": 16, "channels": 1,
        "spatial_factor": 4, "channel_expand": 4, "ramp": True,
    },
    "sample": {
        "params": None, "seed": 0, "steps": 4, "n": 1024,
    },
}


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_config(command: str, path=None, overrides=None) -> dict:
    """Defaults, then the JSON file (a plain config or a previous manifest), then flags."""
    cfg = copy.deepcopy(DEFAULTS[command])
    if path is not None:
        raw = read_json(path)
        if "config" in raw and "command" in raw:
            if raw["command"] != command:
                raise ShortcutVSRError(f"manifest is for {raw['command']!r}, not {command!r}")
            raw = raw["config"]
        unknown = set(raw) - set(cfg)
        if unknown:
            raise ShortcutVSRError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    return cfg


def write_manifest(out: Path, command: str, cfg: dict, outputs, extra=None):
    manifest = {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "version": __version__,
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    write_json(out / "manifest.json", manifest)
    return manifest


# train-toy


def _variant_parts(cfg):
    task = ToyTask(scale=cfg["scale"], shift=cfg["shift"], lr=cfg["lr"], batch_size=cfg["batch_size"],
                   hidden=tuple(cfg["hidden"]))
    spec, kw, step_set, shift = variant_setup(cfg["variant"], task)
    if cfg["scales"] is not None or cfg["exponents"] is not None:
        step_set = StepSizeSet(scales=tuple(cfg["scales"] or step_set.scales),
                               exponents=tuple(cfg["exponents"] or step_set.exponents))
    if cfg["flow_fraction"] is not None:
        kw["flow_fraction"] = cfg["flow_fraction"]
    kw.update(orientation=cfg["orientation"], literal_time=cfg["literal_time"])
    return task, spec, kw, step_set, shift


def cmd_train_toy(cfg: dict, out: Path):
    task, spec, kw, step_set, shift = _variant_parts(cfg)
    net = ToyNet(spec, seed=cfg["seed"])
    tcfg = TrainConfig(batch_size=task.batch_size, lr=task.lr, seed=cfg["seed"], total_steps=cfg["steps"],
                       ema_decay=cfg["ema_decay"], **kw)
    report = train(net, task.data, tcfg, step_set, shift)
    write_csv(out / "loss.csv", ["step", "kind", "loss"],
              [(i, k, l) for i, (k, l) in enumerate(zip(report.kinds, report.losses))])
    save_params(out / "params.bin", net, seed=cfg["seed"],
                extra={"variant": cfg["variant"], "scales": list(step_set.scales),
                       "exponents": list(step_set.exponents), "shift": shift.shift, "scale": task.scale})

    # held-out flow loss against the irreducible floor
    rng = np.random.default_rng(cfg["seed"] + 1)
    t_sampler = lambda r, n: sample_flow_t(r, n, tcfg.mode, shift)
    x0 = task.data(rng, cfg["n_eval"])
    x1 = rng.standard_normal(x0.shape)
    held_out, _ = flow_loss_grad(net, x0, x1, t_sampler(rng, cfg["n_eval"]), step_set.d_min)
    floor = task.data.conditional_variance_floor(np.random.default_rng(cfg["seed"] + 2), 10 * cfg["n_eval"], t_sampler)
    final = {k: (report.trace(k)[-1] if report.trace(k).size else None) for k in ("flow", "sc")}
    write_manifest(out, "train-toy", cfg, [out / "loss.csv", out / "params.bin"],
                   {"final_losses": final, "held_out_flow_loss": held_out, "flow_loss_floor": floor,
                    "wall_clock_s": report.wall_clock})
    return {"held_out_flow_loss": held_out, "flow_loss_floor": floor}


# sampling from parameter files


def sample_from_header(net: ToyNet, header: dict, x1, n_steps: int):
    """Shortcut sampling for step-conditioned nets, Euler on the shifted path otherwise.

    The choice depends only on the parameter file, so identical files give
    identical samples whatever variant label they are filed under.
    """
    step_set = StepSizeSet(scales=tuple(header["scales"]), exponents=tuple(header["exponents"]))
    shift = ShiftConfig(header["shift"])
    if net.spec.d_conditioning:
        return shortcut_sample(net, x1, n_steps, step_set, shift)
    return euler_sample(net, x1, sampling_path(n_steps, shift))


def cmd_ablate_shortcut(cfg: dict, out: Path):
    if not cfg["params"]:
        raise ShortcutVSRError("ablate-shortcut needs parameter files: --params VARIANT=PATH")
    models = {}
    for variant, path in sorted(cfg["params"].items()):
        if not Path(path).exists():
            raise ShortcutVSRError(f"missing parameter file for {variant}: {path}")
        models[variant] = load_params(path)
    data = default_mixture(cfg["scale"])
    ref, x1 = evaluation_batch(data, cfg["n_eval"], cfg["seed"])
    bw = median_bandwidth(ref)
    rows = []
    for n in cfg["steps"]:
        for variant, (net, header) in models.items():
            m2 = mmd2(sample_from_header(net, header, x1, n), ref, bw)
            rows.append((n, variant, float(np.sqrt(max(m2, 0.0))), m2))
    write_csv(out / "ablation.csv", ["steps", "variant", "mmd", "mmd2"], rows)
    write_manifest(out, "ablate-shortcut", cfg, [out / "ablation.csv"], {"bandwidth": bw})
    return rows


def cmd_sample(cfg: dict, out: Path):
    if not cfg["params"]:
        raise ShortcutVSRError("sample needs --params PATH")
    net, header = load_params(cfg["params"])
    x1 = np.random.default_rng(cfg["seed"]).standard_normal((cfg["n"], net.spec.dim))
    xs = sample_from_header(net, header, x1, cfg["steps"])
    write_csv(out / "samples.csv", [f"x{i}" for i in range(xs.shape[1])], xs.tolist())
    paths = save_tensor(out / "samples", xs)
    write_manifest(out, "sample", cfg, [out / "samples.csv", *paths])
    return xs


# tiling and segment demos


def _seam_ratio(x, plan):
    """Mean absolute neighbour difference across tile edges over that in tile interiors."""
    H, W = plan.extent
    dy = np.abs(np.diff(x, axis=1)).mean(axis=(0, 3))      # (H-1, W)
    dx = np.abs(np.diff(x, axis=2)).mean(axis=(0, 3))      # (H, W-1)
    edge_y = np.zeros(H - 1, bool)
    edge_x = np.zeros(W - 1, bool)
    for t in plan.tiles:
        for e in (t.y - 1, t.y + t.h - 1):
            if 0 <= e < H - 1:
                edge_y[e] = True
        for e in (t.x - 1, t.x + t.w - 1):
            if 0 <= e < W - 1:
                edge_x[e] = True
    edge = np.concatenate([dy[edge_y].ravel(), dx[:, edge_x].ravel()])
    inner = np.concatenate([dy[~edge_y].ravel(), dx[:, ~edge_x].ravel()])
    if edge.size == 0 or inner.size == 0:
        return 1.0
    return float(edge.mean() / inner.mean())


def cmd_tile_demo(cfg: dict, out: Path):
    H, W = cfg["extent"]
    h, w = cfg["tile"]
    plan = plan_tiles((H, W), (h, w), tuple(cfg["overlap"]))
    kernel = gaussian_kernel(h, w, cfg["sigma"])
    model = GaussianOracle(cfg["oracle_sigma"])
    path = sampling_path(cfg["steps"], ShiftConfig(cfg["shift"]))
    rng = np.random.default_rng(cfg["seed"])
    shape = (cfg["frames"], H, W, cfg["channels"])
    field = rng.standard_normal(shape)

    # reference: the same global noise, untiled
    untiled = euler_sample(model, field, path)
    tiled = tiled_sample(model, plan, kernel, path, noise_field=field)
    order = list(np.random.default_rng(cfg["seed"] + 1).permutation(len(plan.tiles)))
    permuted = tiled_sample(model, plan, kernel, path, noise_field=field, order=order)

    if cfg["noise"] == "fixed":
        tile_noise = rng.standard_normal((cfg["frames"], h, w, cfg["channels"]))
        result = tiled_sample(model, plan, kernel, path, fixed_noise_tile=tile_noise)
    elif cfg["noise"] == "field":
        result = tiled
    else:
        raise ShortcutVSRError(f"noise must be 'fixed' or 'field', got {cfg['noise']!r}")

    rows = [
        ("tiles", len(plan.tiles)),
        ("max_abs_vs_untiled", float(np.max(np.abs(tiled - untiled)))),
        ("mean_abs_vs_untiled", float(np.mean(np.abs(tiled - untiled)))),
        ("permuted_order_identical", int(np.array_equal(tiled, permuted))),
        ("seam_ratio", _seam_ratio(result, plan)),
    ]
    write_csv(out / "seams.csv", ["metric", "value"], rows)
    write_json(out / "plan.json", plan.to_dict())
    paths = save_tensor(out / "fused", result)
    write_manifest(out, "tile-demo", cfg, [out / "seams.csv", out / "plan.json", *paths],
                   {"output_sha256": hashlib.sha256(np.ascontiguousarray(result).tobytes()).hexdigest()})
    return dict(rows)


def cmd_fuse_demo(cfg: dict, out: Path):
    codec = CodecConfig(spatial_factor=cfg["spatial_factor"], channel_expand=cfg["channel_expand"])
    plan = plan_segments(cfg["n_frames"], cfg["length"])
    clip = moving_pattern_clip(np.random.default_rng(cfg["seed"]), cfg["n_frames"], cfg["size"], cfg["channels"])
    lats = [encode(clip[a:b], codec) for a, b in plan.segments]
    fused = fuse_segments(lats, plan, ramp=cfg["ramp"])
    whole = encode(clip, codec)
    err = float(np.max(np.abs(fused - whole)))
    cov = frame_coverage(plan)
    table = segment_contributions(plan)
    write_csv(out / "coverage.csv", ["frame", "segments", "latent_group"],
              [(f, int(c), latent_group(f)) for f, c in enumerate(cov)])
    write_csv(out / "positions.csv", ["position", "contributors", "segments"],
              [(g, len(row), " ".join(str(s) for s, _ in row)) for g, row in enumerate(table)])
    summary = [
        ("max_abs_error", err),
        ("segments", len(plan.starts)),
        ("min_overlap", min(plan.overlaps) if plan.overlaps else 0),
        ("min_frame_coverage", int(cov.min())),
        ("min_position_contributors", min(len(r) for r in table)),
    ]
    write_csv(out / "summary.csv", ["metric", "value"], summary)
    write_json(out / "plan.json", plan.to_dict())
    paths = save_tensor(out / "fused", fused)
    write_manifest(out, "fuse-demo", cfg,
                   [out / "coverage.csv", out / "positions.csv", out / "summary.csv", out / "plan.json", *paths])
    return dict(summary)


COMMANDS = {
    "train-toy": cmd_train_toy,
    "ablate-shortcut": cmd_ablate_shortcut,
    "tile-demo": cmd_tile_demo,
    "fuse-demo": cmd_fuse_demo,
    "sample": cmd_sample,
}


def _params_arg(values, command):
    if values is None:
        return None
    if command == "sample":
        return values[-1]
    out = {}
    for v in values:
        if "=" not in v:
            raise ShortcutVSRError(f"--params expects VARIANT=PATH, got {v!r}")
        k, p = v.split("=", 1)
        out[k] = p
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shortcut-vsr", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config or a previous run's manifest.json")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True, help="output directory")
        if name in ("train-toy", "sample"):
            p.add_argument("--steps", type=int)
        if name == "ablate-shortcut":
            p.add_argument("--steps", type=int, nargs="+")
        if name == "train-toy":
            p.add_argument("--variant", choices=["baseline", "shortcut", "uniform"])
        if name in ("ablate-shortcut", "sample"):
            p.add_argument("--params", action="append",
                           help="VARIANT=PATH (repeatable) for ablate-shortcut, PATH for sample")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {"seed": args.seed, "steps": getattr(args, "steps", None),
                     "variant": getattr(args, "variant", None),
                     "params": _params_arg(getattr(args, "params", None), args.command)}
        cfg = load_config(args.command, args.config, overrides)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](cfg, out)
    except ShortcutVSRError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    if isinstance(result, dict):
        print(json.dumps(result, indent=2, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())

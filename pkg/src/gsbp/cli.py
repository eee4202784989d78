"""Command-line front end.

Subcommands
-----------
gen-data     simulate ramp-input trajectories of the built-in analytic
             two-state benchmark dynamics and write them as CSV
fit-sde      fit drift/diffusion networks to a trajectory CSV
solve        train the bridge-steering network for a configured problem
rollout      run the trained policy closed loop and summarize endpoints
ot           entropic transport loss between two point-cloud CSV files
orderparams  per-particle bond order parameters for a positions CSV

Every run creates `<out>/<run>/` containing `manifest.json` (written before
any computation: resolved config, its sha256, seeds, versions, thread count),
plus `results/` and, where applicable, `checkpoints/`. Exit codes: 0 success,
2 usage or configuration error, 3 numerical failure (the message names the
failing component). All CSV cells print float repr, so reruns with the same
seed are byte-identical; `--threads 1` additionally pins the linear-algebra
thread pools for bit-reproducibility.

Config files are TOML; command-line flags override file values. Schema (all
keys optional unless marked):

[gen_data]  n_traj, T, steps, samples_per_traj, seed, slope_range = [lo, hi],
            x0_mean = [..], x0_std
[fit_sde]   data (required unless --data), hidden_drift, hidden_diffusion,
            p, lr0, decay, batch_fraction, epochs, rollout_horizon,
            window_stride, seed, time_scale
[problem]   T, m0, mT, cov0, covT (scalar or full matrix),
            state_box = [[lo, hi], ...], dynamics = "classical" | "omt"
[train]     hidden, N, eps, sinkhorn_iters, batch_size, lr0, decay, epochs,
            resample_every, seed, checkpoint_every, mass_quad_nx, gate
[train.weights]  per-component loss weights (psi, rho, u1.., rho0, rhoT, mass)
[export]    nt, nx (solution-grid resolution)
[rollout]   checkpoint (required unless --checkpoint), paths, steps, seed,
            grid = [nt, nx1, nx2], eps, target_batch
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .nets import Mlp, MlpSpec, load_checkpoint, save_checkpoint
from .orderparams import OrderParamError, ParticleConfiguration, steinhardt
from .optim import OptimError
from .autodiff import AutodiffError
from .pinn import (
    EndpointSpec,
    GsbpProblem,
    PinnConfig,
    PinnError,
    classical_sbp_dynamics,
    export_solution_grid,
    mass_quadrature,
    omt_dynamics,
    train,
    write_loss_history_csv,
)
from .policy import (
    GridSpec,
    PolicyError,
    build_table,
    closed_loop,
    write_endpoint_stats_json,
    write_rollout_csv,
)
from .sde import (
    RampInput,
    SdeError,
    gaussian_box_sampler,
    generate_dataset,
    latin_hypercube,
    read_trajectories_csv,
    synthetic_truth,
    write_trajectories_csv,
)
from .sdefit import SdeFitConfig, SdeFitError, fit, split, write_history_csv
from .sinkhorn import DiscreteMeasure, cost_matrix, plan_cost, sinkhorn

NUMERICAL_ERRORS = (
    AutodiffError,
    OptimError,
    OrderParamError,
    PinnError,
    PolicyError,
    SdeError,
    SdeFitError,
    np.linalg.LinAlgError,
)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config plumbing


def _load_config(path, section):
    if path is None:
        return {}
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise UsageError(f"{path}: {e}")
    return doc.get(section, {})


def _resolve(defaults, file_cfg, overrides):
    """defaults <- config file <- explicitly passed flags."""
    cfg = dict(defaults)
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    cfg.update(file_cfg)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def _run_dir(args):
    run = args.run or args.command
    base = os.path.join(args.out, run)
    os.makedirs(os.path.join(base, "results"), exist_ok=True)
    return base


def _write_manifest(run_dir, command, cfg, seeds, threads):
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    manifest = {
        "command": command,
        "config": cfg,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "seeds": seeds,
        "threads": threads,
        "versions": {
            "package": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": __import__("scipy").__version__,
        },
    }
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return manifest


def _require_file(path, what):
    if path is None:
        raise UsageError(f"missing required {what}")
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _endpoint(mean, cov):
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = float(cov) * np.eye(mean.size)
    return EndpointSpec(mean, cov)


def _problem_from(cfg):
    defaults = {
        "T": 1.0,
        "m0": [0.2, 0.2],
        "mT": [0.4, 0.375],
        "cov0": 0.1,
        "covT": 0.1,
        "state_box": [[-1.8, 2.4], [-1.8, 2.4]],
        "dynamics": "classical",
    }
    p = _resolve(defaults, cfg, {})
    n = len(p["m0"])
    if p["dynamics"] == "classical":
        dyn = classical_sbp_dynamics(n)
    elif p["dynamics"] == "omt":
        dyn = omt_dynamics(n)
    else:
        raise UsageError(f"unknown dynamics: {p['dynamics']!r}")
    try:
        problem = GsbpProblem(
            dynamics=dyn,
            rho0=_endpoint(p["m0"], p["cov0"]),
            rhoT=_endpoint(p["mT"], p["covT"]),
            T=float(p["T"]),
            state_box=np.asarray(p["state_box"], dtype=float),
            m=dyn.m,
        )
    except PinnError as e:
        raise UsageError(f"bad problem config: {e}")
    return problem, p


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    defaults = {
        "n_traj": 50,
        "T": 20.0,
        "steps": 50,
        "samples_per_traj": 50,
        "seed": 9,
        "slope_range": [-0.005, 0.005],
        "x0_mean": [0.3, 0.6],
        "x0_std": 0.03,
    }
    cfg = _resolve(
        defaults,
        _load_config(args.config, "gen_data"),
        {"n_traj": args.n_traj, "seed": args.seed},
    )
    if cfg["n_traj"] < 1:
        raise UsageError(f"n_traj must be >= 1, got {cfg['n_traj']}")
    run_dir = _run_dir(args)
    _write_manifest(run_dir, "gen-data", cfg, {"data": cfg["seed"]}, args.threads)
    dyn = synthetic_truth()
    lo, hi = cfg["slope_range"]
    slopes = latin_hypercube(cfg["n_traj"], dyn.m, [[lo, hi]] * dyn.m, seed=cfg["seed"])
    designs = [RampInput(s, np.zeros(dyn.m)) for s in slopes]
    sampler = gaussian_box_sampler(
        cfg["x0_mean"], cfg["x0_std"] ** 2 * np.eye(dyn.n), [[0, 1]] * dyn.n
    )
    try:
        ds = generate_dataset(
            dyn,
            designs,
            sampler,
            T=cfg["T"],
            steps=cfg["steps"],
            samples_per_traj=cfg["samples_per_traj"],
            seed=cfg["seed"],
            threads=args.threads or 1,
        )
    except ValueError as e:  # incompatible steps/sampling config
        raise UsageError(str(e))
    out = os.path.join(run_dir, "results", "trajectories.csv")
    write_trajectories_csv(out, ds)
    print(f"wrote {len(ds)} trajectories to {out}")
    return 0


def cmd_fit_sde(args):
    defaults = {
        "data": None,
        "hidden_drift": [200],
        "hidden_diffusion": [200],
        "p": 0,  # 0 -> state dimension
        "lr0": 1e-3,
        "decay": 0.999,
        "batch_fraction": 0.25,
        "epochs": 100,
        "rollout_horizon": 10,
        "window_stride": 5,
        "seed": 0,
        "time_scale": 200.0,
    }
    cfg = _resolve(
        defaults,
        _load_config(args.config, "fit_sde"),
        {"data": args.data, "epochs": args.epochs, "seed": args.seed},
    )
    data = _require_file(cfg["data"], "trajectory data")
    ds = read_trajectories_csv(data)
    first = ds.trajectories[0]
    n, m = first.states.shape[-1], first.inputs.shape[-1]
    p = cfg["p"] or n
    run_dir = _run_dir(args)
    os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
    _write_manifest(run_dir, "fit-sde", cfg, {"fit": cfg["seed"]}, args.threads)
    fit_cfg = SdeFitConfig(
        drift_spec=MlpSpec(1 + n + m, tuple(cfg["hidden_drift"]), n),
        diffusion_spec=MlpSpec(1 + n + m, tuple(cfg["hidden_diffusion"]), n * p),
        lr0=cfg["lr0"],
        decay=cfg["decay"],
        batch_fraction=cfg["batch_fraction"],
        epochs=cfg["epochs"],
        rollout_horizon=cfg["rollout_horizon"],
        window_stride=cfg["window_stride"],
        seed=cfg["seed"],
        time_scale=cfg["time_scale"],
    )
    drift, diffusion, history = fit(fit_cfg, split(ds, cfg["seed"]))
    extra = {"n": n, "m": m, "p": p, "time_scale": cfg["time_scale"]}
    save_checkpoint(os.path.join(run_dir, "checkpoints", "drift.json"), drift, extra)
    save_checkpoint(
        os.path.join(run_dir, "checkpoints", "diffusion.json"), diffusion, extra
    )
    write_history_csv(os.path.join(run_dir, "results", "history.csv"), history)
    best = min(h[2] for h in history)
    print(f"fit {len(history)} epochs; best validation loss {best:.6g}")
    return 0


def cmd_solve(args):
    problem, problem_cfg = _problem_from(_load_config(args.config, "problem"))
    defaults = {
        "hidden": [32, 32],
        "N": 500,
        "eps": 0.1,
        "sinkhorn_iters": 50,
        "batch_size": 128,
        "lr0": 1e-3,
        "decay": 1.0,
        "epochs": 5000,
        "resample_every": 0,
        "seed": 0,
        "checkpoint_every": 0,
        "mass_quad_nx": 25,
        "weights": {},
        "gate": 0.0,  # 0 -> no gate check
    }
    cfg = _resolve(
        defaults,
        _load_config(args.config, "train"),
        {"epochs": args.epochs, "seed": args.seed},
    )
    export = _resolve({"nt": 5, "nx": 41}, _load_config(args.config, "export"), {})
    run_dir = _run_dir(args)
    ck_dir = os.path.join(run_dir, "checkpoints")
    os.makedirs(ck_dir, exist_ok=True)
    _write_manifest(
        run_dir,
        "solve",
        {"problem": problem_cfg, "train": cfg, "export": export},
        {"train": cfg["seed"]},
        args.threads,
    )
    pinn_cfg = PinnConfig(
        hidden=tuple(cfg["hidden"]),
        N=cfg["N"],
        eps=cfg["eps"],
        sinkhorn_iters=cfg["sinkhorn_iters"],
        batch_size=cfg["batch_size"],
        lr0=cfg["lr0"],
        decay=cfg["decay"],
        epochs=cfg["epochs"],
        resample_every=cfg["resample_every"],
        seed=cfg["seed"],
        checkpoint_every=cfg["checkpoint_every"],
        mass_quad_nx=cfg["mass_quad_nx"],
        weights=dict(cfg["weights"]),
    )
    net, history = train(problem, pinn_cfg, out_dir=ck_dir)
    save_checkpoint(
        os.path.join(ck_dir, "bridge_final.json"),
        net.mlp,
        extra={"n": problem.n, "m": problem.m},
    )
    res = os.path.join(run_dir, "results")
    write_loss_history_csv(os.path.join(res, "loss_history.csv"), history)
    export_solution_grid(
        os.path.join(res, "solution_grid.csv"),
        net,
        problem,
        nt=export["nt"],
        nx=export["nx"],
    )
    final = history[-1]
    for t in (0.0, problem.T):
        print(f"mass(t={t:g}) = {mass_quadrature(net, problem, t):.4f}")
    print(f"final total loss {final.total:.6g}")
    if cfg["gate"] > 0 and not (final.total < cfg["gate"]):
        parts = ", ".join(f"{k}={v:.3g}" for k, v in final.parts().items())
        raise PinnError(
            f"final total loss {final.total:.6g} missed gate {cfg['gate']:g} ({parts})"
        )
    return 0


def _load_bridge_net(path, hidden_hint=None):
    from .pinn import BridgeNet

    mlp, extra = load_checkpoint(path)
    extra = extra or {}
    m = int(extra.get("m", mlp.spec.out_dim - 2))
    n = int(extra.get("n", mlp.spec.in_dim - 1))
    net = BridgeNet(n, m, hidden=tuple(mlp.spec.hidden), theta=mlp.theta.copy())
    return net


def cmd_rollout(args):
    problem, problem_cfg = _problem_from(_load_config(args.config, "problem"))
    defaults = {
        "checkpoint": None,
        "paths": 150,
        "steps": 500,
        "seed": 0,
        "grid": [50, 50, 50],
        "eps": 0.1,
        "target_batch": 150,
    }
    cfg = _resolve(
        defaults,
        _load_config(args.config, "rollout"),
        {
            "checkpoint": args.checkpoint,
            "paths": args.paths,
            "steps": args.steps,
            "seed": args.seed,
        },
    )
    if cfg["paths"] < 1 or cfg["steps"] < 1:
        raise UsageError("paths and steps must be >= 1")
    ck = _require_file(cfg["checkpoint"], "checkpoint")
    run_dir = _run_dir(args)
    _write_manifest(
        run_dir,
        "rollout",
        {"problem": problem_cfg, "rollout": cfg},
        {"rollout": cfg["seed"]},
        args.threads,
    )
    net = _load_bridge_net(ck)
    table = build_table(
        net,
        GridSpec(T=problem.T, box=problem.state_box, shape=tuple(cfg["grid"])),
        metadata={"source_checkpoint": ck},
    )
    rng = np.random.default_rng([cfg["seed"], 91])
    target = problem.rhoT.sample(rng, cfg["target_batch"])
    tr, stats = closed_loop(
        table,
        problem.dynamics,
        lambda r: problem.rho0.sample(r, 1)[0],
        n_paths=cfg["paths"],
        T=problem.T,
        steps=cfg["steps"],
        seed=cfg["seed"],
        target_batch=target,
        eps=cfg["eps"],
    )
    res = os.path.join(run_dir, "results")
    write_rollout_csv(os.path.join(res, "rollout.csv"), tr)
    write_endpoint_stats_json(os.path.join(res, "endpoint_stats.json"), stats)
    mean = ", ".join(f"{v:.4f}" for v in stats["endpoint_mean"])
    print(f"endpoint mean [{mean}]")
    print(f"endpoint transport loss {stats['sinkhorn_w2eps']:.6g}")
    print(f"endpoint transport divergence {stats['sinkhorn_divergence']:.6g}")
    return 0


def _read_cloud_csv(path):
    with open(_require_file(path, "point-cloud file"), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    if not xcols or not body:
        raise UsageError(f"{path}: expected columns x1..xn[,weight] and data rows")
    try:
        pts = np.array([[float(r[i]) for i in xcols] for r in body])
        if "weight" in header:
            w = np.array([float(r[header.index("weight")]) for r in body])
        else:
            w = None
    except (ValueError, IndexError) as e:
        raise UsageError(f"{path}: malformed row ({e})")
    if w is None:
        return DiscreteMeasure.uniform(pts)
    if np.any(w < 0) or w.sum() <= 0:
        raise UsageError(f"{path}: weights must be nonnegative with positive sum")
    return DiscreteMeasure(pts, w / w.sum())


def cmd_ot(args):
    a = _read_cloud_csv(args.cloud_a)
    b = _read_cloud_csv(args.cloud_b)
    run_dir = _run_dir(args)
    cfg = {"cloud_a": args.cloud_a, "cloud_b": args.cloud_b, "eps": args.eps}
    _write_manifest(run_dir, "ot", cfg, {}, args.threads)
    try:
        res = sinkhorn(a.weights, b.weights, cost_matrix(a.points, b.points), args.eps)
    except ValueError as e:  # mismatched dims / non-finite entries in the files
        raise UsageError(str(e))
    loss = plan_cost(res)
    with open(os.path.join(run_dir, "results", "ot.json"), "w") as fh:
        json.dump({"loss": loss, "iterations": res.iterations, "eps": args.eps}, fh)
        fh.write("\n")
    print(f"loss {loss:.6g} iterations {res.iterations}")
    return 0


def _read_positions_csv(path):
    with open(_require_file(path, "positions file"), newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and rows[0][:4] == ["id", "x", "y", "z"]:
        body = rows[1:]
    else:
        raise UsageError(f"{path}: expected header id,x,y,z")
    ids = [r[0] for r in body]
    try:
        pos = np.array([[float(v) for v in r[1:4]] for r in body])
    except (ValueError, IndexError) as e:
        raise UsageError(f"{path}: malformed row ({e})")
    return ids, pos


def cmd_orderparams(args):
    ids, pos = _read_positions_csv(args.positions)
    run_dir = _run_dir(args)
    cfg = {
        "positions": args.positions,
        "box": args.box,
        "cutoff": args.cutoff,
        "degree": args.degree,
    }
    _write_manifest(run_dir, "orderparams", cfg, {}, args.threads)
    try:
        config = ParticleConfiguration(pos, args.box, args.cutoff)
    except OrderParamError as e:
        raise UsageError(str(e))
    C, mean = steinhardt(config, args.degree)
    out = os.path.join(run_dir, "results", f"order_l{args.degree}.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", f"C{args.degree}"])
        for pid, v in zip(ids, C):
            w.writerow([pid, repr(float(v))])
    print(f"mean C_{args.degree} = {mean:.6f} over {len(ids)} particles")
    return 0


# ---------------------------------------------------------------------------
# parser and entry point


def build_parser():
    ap = argparse.ArgumentParser(prog="gsbp", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="output root directory")
    common.add_argument("--run", default=None, help="run name (default: subcommand)")
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        help="linear-algebra thread cap (default all cores; 1 = bit-reproducible)",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    g = add("gen-data", help="simulate benchmark trajectories")
    g.add_argument("--config", default=None)
    g.add_argument("--n-traj", type=int, default=None)
    g.add_argument("--seed", type=int, default=None)
    g.set_defaults(func=cmd_gen_data)

    f = add("fit-sde", help="fit drift/diffusion nets to data")
    f.add_argument("--config", default=None)
    f.add_argument("--data", default=None)
    f.add_argument("--epochs", type=int, default=None)
    f.add_argument("--seed", type=int, default=None)
    f.set_defaults(func=cmd_fit_sde)

    s = add("solve", help="train the bridge-steering network")
    s.add_argument("--config", default=None)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_solve)

    r = add("rollout", help="closed-loop policy rollout")
    r.add_argument("--config", default=None)
    r.add_argument("--checkpoint", default=None)
    r.add_argument("--paths", type=int, default=None)
    r.add_argument("--steps", type=int, default=None)
    r.add_argument("--seed", type=int, default=None)
    r.set_defaults(func=cmd_rollout)

    o = add("ot", help="transport loss between two point clouds")
    o.add_argument("cloud_a")
    o.add_argument("cloud_b")
    o.add_argument("--eps", type=float, default=0.1)
    o.set_defaults(func=cmd_ot)

    p = add("orderparams", help="bond order parameters")
    p.add_argument("positions")
    p.add_argument("--box", type=float, nargs=3, required=True)
    p.add_argument("--cutoff", type=float, required=True)
    p.add_argument("--degree", type=int, default=6)
    p.set_defaults(func=cmd_orderparams)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as e:
        print(f"numerical failure [{type(e).__name__}]: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

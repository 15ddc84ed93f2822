"""Command-line interface.

Exit codes: 0 success, 1 domain error (JSON on stderr), 2 usage error.
``prior`` is the offline stage that runs forward solves; ``infer`` only
loads a serialized expansion plus observations and never solves the FE
problem.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__, fileio
from .chaos import PCExpansion, pc_moments
from .errors import StatFEMError
from .experiments import (RUNNERS, ScenarioReport, bar_setup, bar_truth, build_prior, condition, lognormal_input,
                          generating_hyperparameters, load_config, plate_setup, plate_truth,
                          run_bar_homogeneous, run_bar_inhomogeneous, run_plate_selection,
                          run_stress_inference, scenario_seeds)
from .fem import projection_matrix
from .inference import (GaussianField, MarginalLikelihood, generate_observations, gradient_check,
                        random_hyperparameters)
from .mesh import read_mesh, write_mesh
from .report import emit_report, verify_manifest

log = logging.getLogger("statfem")

GRADCHECK_TOL = 1e-5


class UsageError(Exception):
    pass


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("STATFEM_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"STATFEM_THREADS must be a positive integer, got {env!r}") from None
        if n < 1:
            raise UsageError(f"STATFEM_THREADS must be a positive integer, got {env!r}")
        return n
    return None


def _config(args, scenarios=None):
    cfg = load_config(args.config, seed=args.seed, threads=_threads(args))
    if scenarios and cfg["scenario"] not in scenarios:
        raise StatFEMError(f"command {args.command!r} needs a {' or '.join(scenarios)} config, "
                           f"got {cfg['scenario']!r}")
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _setup(cfg):
    """Mesh, sensor coordinates and component count for a config."""
    if cfg["scenario"].startswith("bar"):
        _, mesh, coords = bar_setup(cfg)
        return mesh, coords, 1
    mesh, _, coords = plate_setup(cfg)
    return mesh, coords, 2


def _finish(report, out):
    manifest = emit_report(report, out)
    print(json.dumps({"manifest": str(manifest), **{k: v for k, v in report.summary.items()
                                                     if not isinstance(v, (dict, list))}}))
    return 0


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------
def cmd_mesh(args):
    cfg = _config(args)
    out = _out(args)
    mesh, coords, _ = _setup(cfg)
    report = ScenarioReport(cfg["name"])
    report.add("mesh", write_mesh(mesh, out / "mesh.txt"))
    report.add("sensors", fileio.write_nodal_table(out / "sensors.csv", coords, {}, id_name="sensor_id",
                                                   n_components=1))
    report.summary = {"n_nodes": mesh.n_nodes, "n_elements": mesh.n_elements, "n_sensors": len(coords)}
    report.add("summary", fileio.write_json(out / "summary.json", report.summary))
    return _finish(report, out)


def cmd_prior(args):
    cfg = _config(args)
    out = _out(args)
    mesh, _, _ = _setup(cfg)
    seed = scenario_seeds(cfg["seed"])["prior"]
    report = ScenarioReport(cfg["name"])
    report.add("effective_config", fileio.write_json(out / "effective_config.json", cfg))
    report.add("mesh", write_mesh(mesh, out / "mesh.txt"))
    models = ["LE"] if cfg["scenario"].startswith("bar") else cfg["models"]
    for model in models:
        log.info("propagating %s prior (p=%d)", model, cfg["pc"]["order"])
        pc, prior = build_prior(mesh, model, cfg, seed)
        report.add(f"prior_{model}", pc.save(out / f"prior_{model}.json"))
        report.add(f"prior_moments_{model}", fileio.write_nodal_table(
            out / f"prior_moments_{model}.csv", mesh.nodes, {"mean": prior.mean, "std": prior.std}))
        report.summary[f"max_std_{model}"] = float(prior.std.max())
    report.add("summary", fileio.write_json(out / "summary.json", report.summary))
    return _finish(report, out)


def cmd_observe(args):
    cfg = _config(args)
    out = _out(args)
    mesh, coords, nc = _setup(cfg)
    H = projection_matrix(mesh, coords)
    inp = lognormal_input(cfg)
    if cfg["scenario"].startswith("bar"):
        problem, _, _ = bar_setup(cfg)
        truth = bar_truth(problem, coords, inp)
    else:
        truth = plate_truth(mesh, H, inp, cfg)
    o = cfg["observations"]
    obs = generate_observations(truth, generating_hyperparameters(cfg), math.sqrt(o["noise_variance"]),
                                coords, max(o["n_reads"]), seed=scenario_seeds(cfg["seed"])["data"], H=H,
                                n_components=nc)
    report = ScenarioReport(cfg["name"])
    report.add("effective_config", fileio.write_json(out / "effective_config.json", cfg))
    report.add("observations", fileio.write_observations(obs, out / "observations.csv"))
    report.summary = {"n_sensors": obs.n_sensors, "n_reads": obs.n_o}
    report.add("summary", fileio.write_json(out / "summary.json", report.summary))
    return _finish(report, out)


def cmd_infer(args):
    cfg = _config(args)
    out = _out(args)
    for p in (args.prior, args.observations, args.mesh):
        if not Path(p).exists():
            raise StatFEMError(f"input file not found: {p}")
    pc = PCExpansion.load(args.prior)
    mesh = read_mesh(args.mesh)
    if pc.coefficients.shape[0] != mesh.n_dof:
        raise StatFEMError(f"prior has {pc.coefficients.shape[0]} DOFs but mesh {args.mesh} has {mesh.n_dof}")
    obs = fileio.read_observations(args.observations, math.sqrt(cfg["observations"]["noise_variance"]))
    obs.H = projection_matrix(mesh, obs.coords)
    mean, cov = pc_moments(pc)
    prior = GaussianField(mean, cov)
    est, post, z = condition(prior, obs, cfg, scenario_seeds(cfg["seed"])["optimizer"])
    report = ScenarioReport(cfg["name"])
    report.add("hyperparameters", fileio.write_json(out / "hyperparameters.json", est.to_dict()))
    report.add("posterior", fileio.write_nodal_table(out / "posterior.csv", mesh.nodes,
                                                     {"mean": post.mean, "std": post.std}))
    report.add("true_response", fileio.write_nodal_table(
        out / "true_response.csv", obs.coords, {"mean": z.mean, "std": z.std},
        id_name="sensor_id", n_components=obs.n_components))
    report.summary = est.to_dict()
    report.add("summary", fileio.write_json(out / "summary.json", report.summary))
    return _finish(report, out)


def _scenario_command(runner, scenarios):
    def cmd(args):
        cfg = _config(args, scenarios)
        out = _out(args)
        report = runner(cfg, out)
        return _finish(report, out)
    return cmd


def cmd_run(args):
    cfg = _config(args)
    out = _out(args)
    return _finish(RUNNERS[cfg["scenario"]](cfg, out), out)


def cmd_gradcheck(args):
    cfg = _config(args)
    mesh, coords, nc = _setup(cfg)
    H = projection_matrix(mesh, coords)
    inp = lognormal_input(cfg)
    seeds = scenario_seeds(cfg["seed"])
    _, prior = build_prior(mesh, "SV" if "SV" in cfg["models"] and mesh.dim == 2 else "LE", cfg, seeds["prior"])
    if mesh.dim == 1:
        problem, _, _ = bar_setup(cfg)
        truth = bar_truth(problem, coords, inp)
    else:
        truth = plate_truth(mesh, H, inp, cfg)
    o = cfg["observations"]
    w0 = generating_hyperparameters(cfg)
    obs = generate_observations(truth, w0, math.sqrt(o["noise_variance"]), coords, max(o["n_reads"]),
                                seed=seeds["data"], H=H, n_components=nc)
    lik = MarginalLikelihood(prior, obs)
    points = random_hyperparameters(w0, args.points, seed=seeds["optimizer"])
    err = gradient_check(lik, points)
    worst = float(err.max())
    print(json.dumps({"max_relative_error": worst, "points": args.points, "tolerance": GRADCHECK_TOL,
                      "per_component_max": err.max(axis=0).tolist()}))
    return 0 if worst <= GRADCHECK_TOL else 1


def cmd_verify(args):
    problems = verify_manifest(args.dir)
    print(json.dumps({"ok": not problems, "problems": problems}))
    return 0 if not problems else 1


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="statfem", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"statfem {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario JSON config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="worker threads (fallback: STATFEM_THREADS)")
    common.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    with_out = argparse.ArgumentParser(add_help=False, parents=[common])
    with_out.add_argument("--out", required=True, help="output directory")

    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    p = sub.add_parser("mesh", parents=[with_out], help="write the mesh and sensor layout")
    p.set_defaults(func=cmd_mesh)
    p = sub.add_parser("prior", parents=[with_out], help="propagate the PC prior (offline stage)")
    p.set_defaults(func=cmd_prior)
    p = sub.add_parser("observe", parents=[with_out], help="generate synthetic observations")
    p.set_defaults(func=cmd_observe)
    p = sub.add_parser("infer", parents=[with_out], help="estimate hyperparameters and condition (online stage)")
    p.add_argument("--prior", required=True, help="serialized PC expansion (JSON)")
    p.add_argument("--observations", required=True, help="observation CSV")
    p.add_argument("--mesh", required=True, help="mesh file the prior was computed on")
    p.set_defaults(func=cmd_infer)
    p = sub.add_parser("select", parents=[with_out], help="plate model selection by RMSE")
    p.set_defaults(func=_scenario_command(run_plate_selection, ["plate_selection"]))
    p = sub.add_parser("stress", parents=[with_out], help="stress inference and equilibrium residuals")
    p.set_defaults(func=_scenario_command(run_stress_inference, ["stress_inference"]))
    p = sub.add_parser("bar", parents=[with_out], help="homogeneous or inhomogeneous bar scenario")
    p.set_defaults(func=_scenario_command(
        lambda cfg, out: (run_bar_homogeneous if cfg["scenario"] == "bar_homogeneous"
                          else run_bar_inhomogeneous)(cfg, out),
        ["bar_homogeneous", "bar_inhomogeneous"]))
    p = sub.add_parser("run", parents=[with_out], help="run any scenario config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("gradcheck", parents=[common], help="compare analytic and finite-difference gradients")
    p.add_argument("--points", type=int, default=20, help="number of random hyperparameter points")
    p.set_defaults(func=cmd_gradcheck)
    p = sub.add_parser("verify", help="re-hash the artifacts listed in a run manifest")
    p.add_argument("dir", help="run directory or manifest path")
    p.add_argument("--verbose", "-v", action="store_true")
    p.set_defaults(func=cmd_verify)
    return parser


def _error(exc, code):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("index", "xi", "residual_norm", "min_eigenvalue", "coords"):
        if hasattr(exc, attr):
            v = getattr(exc, attr)
            payload[attr] = v if isinstance(v, (int, float, str, list, tuple)) else str(v)
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args))
    except UsageError as exc:
        print(f"statfem: error: {exc}", file=sys.stderr)
        return 2
    except (StatFEMError, OSError, ValueError) as exc:
        return _error(exc, 1)


if __name__ == "__main__":
    sys.exit(main())

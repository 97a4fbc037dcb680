"""Command-line experiment runner.

Usage::

    bcinverse COMMAND --config FILE [--out DIR] [--jobs N] [--seed N]
                      [--verification on|off]

Commands are ``forward``, ``volume``, ``reconstruct``, ``verify`` and
``blago-check``.  Exit status is 0 on success, 1 when a check fails and 2
for configuration errors.  Reports are JSON with sorted keys; wall-clock
timings go to a separate ``timings.json`` so that reports of identical
runs compare equal byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checks import (DEFAULT_TOLERANCES, check_blagovestchenskii, check_cross_term, run_suite)
from .config import ExperimentConfig
from .errors import BCInverseError, ConfigurationError, DomainError, ReplayError, ShapeError
from .forward import SimulatedDevice, write_trace_csv
from .influence import domain_of_influence
from .minimize import alpha_continuation, mask_for_device, verify_theorem2
from .reconstruct import (GeometricOracle, PDEOracle, certify, elements_summary, extract_RM,
                          write_elements_csv)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _base_report(cfg: ExperimentConfig, command: str) -> dict:
    return {"command": command, "config": cfg.echo(), "version": __version__}


def _write_field_csv(path, c, values, name="value"):
    coords = ["x", "y"][: c.dim]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", *coords, name])
        for i, (p, v) in enumerate(zip(c.interior.points, values)):
            w.writerow([i, *map(repr, map(float, p)), repr(float(v))])


def cmd_forward(cfg: ExperimentConfig, args) -> int:
    c = cfg.build_speed()
    settings = cfg.build_settings(c)
    device = cfg.build_device(c, settings)
    f = cfg.build_source(c, settings)
    trace = device.measure(f)
    out = cfg.output
    write_trace_csv(out / "trace.csv", trace)
    report = _base_report(cfg, "forward")
    report.update({"measurements": device.count, "n_steps": settings.n_steps, "dt": settings.dt,
                   "cfl": settings.cfl, "max_abs_trace": float(np.abs(trace.values).max())})
    if cfg.verification and isinstance(device, SimulatedDevice):
        snap = device.snapshot(f)
        _write_field_csv(out / "snapshot.csv", c, snap)
        report["snapshot_norm"] = float(np.sqrt(device.natural_inner(snap, snap)))
    _write_json(out / "report.json", report)
    return EXIT_OK


def cmd_volume(cfg: ExperimentConfig, args) -> int:
    c = cfg.build_speed()
    settings = cfg.build_settings(c)
    device = cfg.build_device(c, settings)
    gamma = cfg.build_gamma(c)
    tau = cfg.build_tau(c)
    mask = mask_for_device(device, gamma, tau)
    rep = alpha_continuation(device, mask, cfg.schedule, cfg.cg_tol, cfg.cg_max_iters)
    if cfg.verification and isinstance(device, SimulatedDevice):
        for r in rep.records:
            r.interior_l2_error = verify_theorem2(device, r.minimizer, gamma, tau)
    report = _base_report(cfg, "volume")
    result = rep.to_dict()
    result["pde_volume"] = rep.volume
    result["extrapolated_volume"] = rep.extrapolated_volume()
    if cfg.oracle != "none":
        geo = domain_of_influence(c, gamma, np.minimum(tau, settings.T))
        result["oracle_volume"] = geo.volume_closed
        result["oracle_volume_open"] = geo.volume_open
        result["gap"] = rep.volume - geo.volume_closed
        result["relative_gap"] = (rep.volume - geo.volume_closed) / geo.volume_closed \
            if geo.volume_closed > 0 else None
    report["result"] = result
    out = cfg.output
    _write_json(out / "report.json", report)
    with open(out / "alpha_volume.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "volume", "cg_iters", "residual", "interior_l2_error"])
        for r in rep.records:
            w.writerow([repr(r.alpha), repr(r.volume), r.iterations, repr(r.residual),
                        "" if r.interior_l2_error is None else repr(r.interior_l2_error)])
    _write_profile_csv(out / "tau.csv", tau)
    return EXIT_OK


def _write_profile_csv(path, tau):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["boundary_node_id", "value"])
        for j, v in enumerate(tau):
            w.writerow([j, repr(float(v))])


def cmd_reconstruct(cfg: ExperimentConfig, args) -> int:
    c = cfg.build_speed()
    gamma = cfg.build_gamma(c)
    r = cfg.reconstruct
    if cfg.oracle == "pde":
        settings = cfg.build_settings(c)
        device = cfg.build_device(c, settings)
        oracle = PDEOracle(device, gamma, cfg.schedule, cfg.cg_tol, cfg.cg_max_iters)
        default_margin = 0.02 * oracle.m_inf
    elif cfg.oracle == "geometric":
        oracle = GeometricOracle(c, gamma)
        default_margin = 0.0
    else:
        raise ConfigurationError("[oracle] backend must be geometric or pde for reconstruct")
    seeds = cfg.seeds(c, oracle.horizon)
    eps = float(r.get("eps", c.interior.spacing / c.c_max))
    step_tol = float(r.get("step_tol", 1e-3 * oracle.horizon))
    dedupe_tol = float(r.get("dedupe_tol", 5e-3 * oracle.horizon))
    margin_tol = float(r.get("margin_tol", default_margin))
    elements = extract_RM(oracle, seeds, eps, step_tol, dedupe_tol, margin_tol, jobs=args.jobs)
    summary = elements_summary(elements, c if cfg.oracle == "geometric" or c.dim == 1 else None,
                               oracle)
    summary["certified"] = [bool(certify(oracle, e, eps, step_tol, margin_tol).all())
                            for e in elements]
    summary.update({"eps": eps, "step_tol": step_tol, "dedupe_tol": dedupe_tol,
                    "margin_tol": margin_tol, "n_seeds": len(seeds)})
    report = _base_report(cfg, "reconstruct")
    report["result"] = summary
    write_elements_csv(cfg.output / "elements.csv", elements)
    _write_json(cfg.output / "summary.json", report)
    return EXIT_OK


def _check_report(cfg, command, results) -> int:
    for res in results:
        print(res.line())
    report = _base_report(cfg, command)
    report["checks"] = [r.to_dict() for r in results]
    report["passed"] = all(r.passed for r in results)
    _write_json(cfg.output / "report.json", report)
    return EXIT_OK if report["passed"] else EXIT_CHECK_FAILED


def _verification_device(cfg):
    if not cfg.verification:
        raise ConfigurationError("this command needs the verification channel (--verification on)")
    c = cfg.build_speed()
    settings = cfg.build_settings(c)
    device = cfg.build_device(c, settings)
    if not isinstance(device, SimulatedDevice):
        raise ConfigurationError("verification checks need a simulated device")
    return c, device


def cmd_verify(cfg: ExperimentConfig, args) -> int:
    c, device = _verification_device(cfg)
    gamma = cfg.build_gamma(c)
    tau = cfg.build_tau(c)
    results = run_suite(device, gamma, tau, seed=cfg.seed,
                        schedule=(cfg.schedule[0], cfg.schedule[-1]), tolerances=cfg.tolerances)
    return _check_report(cfg, "verify", results)


def cmd_blago_check(cfg: ExperimentConfig, args) -> int:
    _, device = _verification_device(cfg)
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(cfg.tolerances)
    rng = np.random.default_rng(cfg.seed)
    results = [check_blagovestchenskii(device, rng, tol=tol["blagovestchenskii"]),
               check_cross_term(device, rng, tol=tol["cross_term"])]
    return _check_report(cfg, "blago-check", results)


COMMANDS = {
    "forward": cmd_forward,
    "volume": cmd_volume,
    "reconstruct": cmd_reconstruct,
    "verify": cmd_verify,
    "blago-check": cmd_blago_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcinverse",
                                     description="Boundary-control inversion experiments.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="INI experiment configuration")
    parser.add_argument("--out", help="output directory (overrides [output] dir)")
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallel seed ascents for reconstruct")
    parser.add_argument("--seed", type=int, help="noise and random-source seed")
    parser.add_argument("--verification", choices=("on", "off"),
                        help="enable or disable the interior snapshot channel")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.jobs < 1:
            raise ConfigurationError("--jobs must be at least 1")
        cfg = ExperimentConfig.load(args.config)
        if args.out:
            cfg.output = Path(args.out)
        elif not cfg.output.is_absolute():
            cfg.output = cfg.base_dir / cfg.output
        if args.seed is not None:
            cfg.seed = args.seed
        if args.verification is not None:
            cfg.verification = args.verification == "on"
        cfg.output.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        code = COMMANDS[args.command](cfg, args)
        _write_json(cfg.output / "timings.json",
                    {"command": args.command, "seconds": time.perf_counter() - start})
        return code
    except (ConfigurationError, ShapeError, DomainError, ReplayError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BCInverseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())

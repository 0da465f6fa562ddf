"""Command-line harness: ``pmon <mode> config.json [key=value ...]``.

Exit codes: 0 success, 1 check failed (grad-check), 2 parse error,
3 validation error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import MODES, SEED_ENV, ConfigParseError, ExperimentConfig, apply_overrides, from_dict, parse_text
from .descent import optimize
from .errors import ConfigurationError, DegenerateCoverageError, NumericalFailure, PmonError
from .ipa import grad_check, write_gradient_csv
from .model import MissionConfig
from .search import SamplingBox, run_algorithm2, sample_feasible, substream
from .simulator import (IntegratorOptions, normalized_cost, simulate, write_cost_csv, write_events_csv,
                        write_trajectory_csv)
from .tpbvp import ControlSchedule, forward_pass, headings_from_ellipses, solve_tpbvp
from .trajectory import B_MIN, EllipseParams

log = logging.getLogger("pmon")

EXIT_OK, EXIT_CHECK, EXIT_PARSE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3, 4


# -- linear vs elliptical comparison ---------------------------------------------

@dataclass
class ComparisonRow:
    b: float
    J_normalized: float
    Psi_Xi: float


@dataclass
class ComparisonReport:
    rows: list[ComparisonRow]
    ellipse_wins: bool

    @property
    def verdict(self) -> str:
        base = self.rows[0]
        if self.ellipse_wins:
            best = min(self.rows[1:], key=lambda r: r.J_normalized)
            return (f"ellipse wins: J(b={best.b:g}) = {best.J_normalized:.6g} < "
                    f"J(b_min) = {base.J_normalized:.6g}")
        return f"inconclusive: no b > b_min beats J(b_min) = {base.J_normalized:.6g}"

    def write_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["b", "J_normalized", "Psi_Xi"])
            for r in self.rows:
                w.writerow([repr(r.b), repr(r.J_normalized), repr(r.Psi_Xi)])


def compare_lin_ellipse(config: MissionConfig, a: float = 5.0, b_values=(0.25, 0.5, 1.0, 1.5, 2.0),
                        options: IntegratorOptions | None = None) -> ComparisonReport:
    """Normalized cost of a centred single-agent ellipse for the thinnest and wider ``b``."""
    if config.M and not np.all(config.A == config.A[0]):
        raise ConfigurationError("comparison needs a uniform growth-rate field")
    cfg = config if config.N == 1 else config.replace(N=1, r=config.sensing_model(0).r if config.N else config.r)
    rows = []
    for b in (B_MIN, *sorted(b_values)):
        p = EllipseParams(cfg.L1 / 2, cfg.L2 / 2, a, b, 0.0, 0.0)
        try:
            nc = normalized_cost(cfg, p, options)
            rows.append(ComparisonRow(float(b), nc.value, nc.psi))
        except DegenerateCoverageError:
            rows.append(ComparisonRow(float(b), float("nan"), 0.0))
    base = rows[0].J_normalized
    wins = np.isfinite(base) and any(r.J_normalized < base for r in rows[1:])
    return ComparisonReport(rows, bool(wins))


# -- modes ------------------------------------------------------------------------

def _write_params(path, params, J=None) -> None:
    doc = {"agents": [p.canonical().__dict__ for p in params]}
    if J is not None:
        doc["J"] = J
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _run_simulate(cfg: ExperimentConfig, out: Path, seed: int) -> dict:
    params = cfg.resolved_agents(substream(seed, "sampler"))
    res = simulate(cfg.mission, params, cfg.integrator, ipa=cfg.mission.N > 0, trace=cfg.output.trace)
    files = {}
    if cfg.output.trace and cfg.mission.N:
        write_trajectory_csv(out / "trajectory.csv", res, cfg.output.stride)
        files["trajectory"] = "trajectory.csv"
    write_cost_csv(out / "cost.csv", res, cfg.output.stride)
    write_events_csv(out / "events.csv", res)
    files.update(cost="cost.csv", events="events.csv")
    if res.grad_J is not None:
        write_gradient_csv(out / "gradient.csv", res.grad_J)
        files["gradient"] = "gradient.csv"
    print(f"J = {res.J:.10g}")
    return {"J": res.J, "files": files}


def _run_optimize(cfg, out, seed):
    params = cfg.resolved_agents(substream(seed, "sampler"))
    best, trace = optimize(cfg.mission, params, cfg.optimizer, cfg.integrator)
    trace.write_csv(out / "descent.csv")
    _write_params(out / "params.json", best, trace.best_J)
    print(f"status = {trace.status}{' (' + trace.message + ')' if trace.message else ''}")
    print(f"J = {trace.best_J:.10g} after {len(trace.records)} iterations")
    if trace.status == "error":
        raise NumericalFailure(trace.message)
    return {"J": trace.best_J, "status": trace.status, "files": {"trace": "descent.csv", "params": "params.json"}}


def _run_csc(cfg, out, seed):
    block = cfg.csc
    if block.sampling == "centers":
        a, b, phi, rho0 = block.shape
        box = SamplingBox.centers(cfg.mission, a, b, phi, rho0)
    else:
        box = SamplingBox.full(cfg.mission)
    init = None if cfg.agents is None else cfg.resolved_agents(substream(seed, "sampler", 1))
    res = run_algorithm2(cfg.mission, box, block.settings(), init, seed, cfg.integrator,
                         callback=lambda r: log.info("trial %d accepted=%s incumbent=%.6g",
                                                     r.trial, r.accepted, r.incumbent_cost))
    res.write_csv(out / "csc_history.csv")
    _write_params(out / "params.json", res.best_params, res.best_cost)
    print(f"best J = {res.best_cost:.10g} (initial {res.initial_cost:.10g}, {block.Q} trials, {block.mode})")
    return {"J": res.best_cost, "files": {"history": "csc_history.csv", "params": "params.json"}}


def _run_tpbvp(cfg, out, seed):
    params = cfg.resolved_agents(substream(seed, "sampler"))
    init = headings_from_ellipses(cfg.mission, params, cfg.integrator)
    if cfg.tpbvp.init != "ellipses":
        init = ControlSchedule.read_csv(cfg.tpbvp.init, init.times, init.start)
    J0 = forward_pass(cfg.mission, init).J
    res = solve_tpbvp(cfg.mission, init, cfg.tpbvp.settings)
    res.schedule.write_csv(out / "schedule.csv")
    res.write_csv(out / "tpbvp_history.csv")
    print(f"status = {res.status}{' (' + res.message + ')' if res.message else ''}")
    print(f"J = {res.J:.10g} (initial schedule {J0:.10g}, {len(res.J_history)} iterations)")
    if res.status == "error":
        raise NumericalFailure(res.message)
    return {"J": res.J, "J_initial": J0, "status": res.status,
            "files": {"schedule": "schedule.csv", "history": "tpbvp_history.csv"}}


def _run_compare(cfg, out, seed):
    rep = compare_lin_ellipse(cfg.mission, cfg.compare.a, cfg.compare.b_values, cfg.integrator)
    rep.write_csv(out / "compare.csv")
    print(rep.verdict)
    return {"verdict": rep.verdict, "ellipse_wins": rep.ellipse_wins, "files": {"compare": "compare.csv"}}


def _run_grad_check(cfg, out, seed):
    if cfg.agents is None and cfg.grad_check.random_agents:
        params = sample_feasible(substream(seed, "sampler"), cfg.mission)
    else:
        params = cfg.resolved_agents(substream(seed, "sampler"))
    g = cfg.grad_check
    rep = grad_check(cfg.mission, params, cfg.integrator, g.h, g.rtol, g.atol)
    rep.write_csv(out / "grad_check.csv")
    for r in rep.rows:
        flag = "grazing" if r.grazing else ("ok" if r.passed else "FAIL")
        print(f"{r.index:3d} agent {r.agent} {r.param:>3s}  ipa={r.ipa: .6e}  fd={r.fd: .6e}  "
              f"rel={r.rel_err:.2e}  {flag}")
    print(f"max rel err {rep.max_rel_err:.3e}; {rep.n_excluded} of {len(rep.rows)} excluded; "
          f"{'PASS' if rep.ok else 'FAIL'}")
    return {"ok": rep.ok, "max_rel_err": rep.max_rel_err, "n_excluded": rep.n_excluded,
            "files": {"report": "grad_check.csv"}}


RUNNERS = {
    "simulate": _run_simulate, "optimize": _run_optimize, "csc": _run_csc, "tpbvp": _run_tpbvp,
    "compare-lin-ellipse": _run_compare, "grad-check": _run_grad_check,
}


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Execute ``cfg.mode`` and write outputs plus ``manifest.json``."""
    out = Path(out_dir or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    result = RUNNERS[cfg.mode](cfg, out, cfg.seed)
    files = {"config": "config.json", **result.pop("files")}
    manifest = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "version": __version__,
        "config": cfg.to_dict(),
        "result": result,
        "outputs": {name: {"path": rel, "sha256": sha256_file(out / rel)} for name, rel in files.items()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pmon", description="Persistent monitoring trajectory experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run",) + MODES:
        sp = sub.add_parser(name, help="run the mode named in the config" if name == "run" else f"{name} mode")
        sp.add_argument("config", help="JSON experiment configuration")
        sp.add_argument("overrides", nargs="*", metavar="key=value",
                        help="dotted overrides, e.g. mission.T=100 optimizer.max_iters=20")
        sp.add_argument("--seed", type=int, default=None, help=f"master seed (else ${SEED_ENV}, else config)")
        sp.add_argument("--out", default=None, help="output directory (else output.dir)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> ExperimentConfig:
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read {args.config}: {exc}") from exc
    d = apply_overrides(parse_text(text), args.overrides)
    if args.command != "run":
        d["mode"] = args.command
    seed = args.seed
    if seed is None and os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise ConfigParseError(f"${SEED_ENV} is not an integer") from exc
    if seed is not None:
        d["seed"] = seed
    return from_dict(d)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ConfigurationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        manifest = run(cfg, args.out)
    except ConfigurationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalFailure, ArithmeticError, PmonError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if cfg.mode == "grad-check" and not manifest["result"]["ok"]:
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

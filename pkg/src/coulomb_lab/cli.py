"""Command line entry point: ``coulomb-lab <command> [options]``.

Parameters come from an optional YAML/JSON ``--config`` file, overridden by
flags.  Every run writes its outputs plus one ``manifest.json`` into the
output directory.  Exit codes: 0 ok, 2 configuration error, 3 admissibility
or feasibility failure, 4 numerical non-convergence (outputs still written).
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CoulombLabError, ConfigurationError, NonConvergenceError
from .io import dumps_json, sha256_file, write_dat, write_json, write_table

log = logging.getLogger("coulomb_lab")

COMMANDS = ("equilibrium", "fekete", "sample", "zk", "bm", "ldp", "stereo-test")


def _intlist(text):
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    if isinstance(text, int):
        return [text]
    text = str(text).strip()
    return [int(v) for v in text.split(",") if v.strip()] if text else []


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _optfloat(v):
    return None if v is None or str(v).lower() in ("none", "null", "") else float(v)


def _optint(v):
    return None if v is None or str(v).lower() in ("none", "null", "") else int(v)


# name -> (converter, default, help)
COMMON = {
    "domain": (str, "interval:-1,1", "domain spec, e.g. interval:-1,1, realline, halfline, disk:1, plane"),
    "weight": (str, "zero", "weight key, e.g. zero, gaussian:1, cauchy-log:1, laguerre:1,0.5"),
    "base_measure": (str, "lebesgue", "reference measure: lebesgue, normal, lebesgue+atoms:0.5@0"),
    "out": (str, "out", "output directory"),
    "seed": (int, 0, "random seed"),
    "plot": (_bool, False, "write PNG figures next to the tables"),
    "dat": (_bool, False, "write gnuplot-ready .dat files"),
    "threads": (_optint, None, "worker threads (default: COULOMB_LAB_THREADS or 1)"),
}
MCMC = {
    "beta": (float, 1.0, "inverse temperature beta"),
    "convention": (str, "k-1", "weight exponent convention: k-1 or k"),
    "chains": (int, 4, "independent chains"),
    "iterations": (int, 4000, "sweeps per chain including burn-in"),
    "burn_in": (int, 1000, "burn-in sweeps"),
    "thinning": (int, 1, "keep every n-th sweep"),
    "heavy_tail_mix": (_optfloat, None, "fraction of Cauchy proposals (default 0.1 for log-growth Q)"),
}
SCHEMA = {
    "equilibrium": {
        "n": (int, 2000, "grid size"),
        "tol": (float, 1e-8, "Frank-Wolfe gap tolerance"),
        "method": (str, "active-set", "active-set, away-step or projected-gradient"),
        "truncation": (str, "cap-including", "cap-including or cap-excluding"),
        "support_threshold": (float, 1e-6, "relative mass threshold defining the support"),
    },
    "fekete": {
        "n": (int, 2000, "grid size"),
        "k": (_intlist, [10], "number of points (comma list allowed)"),
        "restarts": (int, 4, "exchange restarts"),
        "refine": (_bool, False, "continuous refinement inside cells (1D)"),
        "with_equilibrium": (_bool, False, "also solve the equilibrium problem and compare"),
        "tol": (float, 1e-8, "equilibrium tolerance"),
    },
    "sample": dict(MCMC, **{
        "k": (int, 8, "number of points"),
        "format": (str, "csv", "sample file format: csv or npy"),
    }),
    "zk": dict(MCMC, **{
        "k": (_intlist, [2], "k values (comma list)"),
        "mode": (str, "auto", "auto, quadrature, mehta, selberg, laguerre or ti"),
        "with_equilibrium": (_bool, False, "solve the equilibrium problem for the -V_w target"),
        "n": (int, 2000, "grid size for the equilibrium target"),
    }),
    "bm": {
        "n": (int, 2000, "grid size"),
        "degrees": (_intlist, [4, 8, 16, 32], "polynomial degrees"),
        "bw_degree": (_optint, None, "also run the Bernstein-Walsh check at this degree"),
        "bw_trials": (int, 100, "random polynomials for the Bernstein-Walsh check"),
        "tol": (float, 1e-8, "equilibrium tolerance for the Bernstein-Walsh check"),
    },
    "ldp": dict(MCMC, **{
        "center": (str, "uniform", "ball center: uniform, equilibrium or a measure CSV"),
        "radius": (float, 0.2, "BL ball radius"),
        "klist": (_intlist, [8, 16, 24], "k values"),
        "n": (int, 2000, "grid size for the equilibrium problem"),
        "quadrature_k": (_intlist, [], "k values (<= 3) for exact quadrature rows"),
        "lipschitz": (_optfloat, None, "local Lipschitz constant (estimated when omitted)"),
    }),
    "stereo-test": {
        "pairs": (int, 10_000, "random pairs"),
    },
}
STOCHASTIC = {"fekete", "sample", "zk", "ldp", "stereo-test", "bm"}


@dataclass
class ExperimentConfig:
    command: str
    params: dict
    out_dir: Path
    sources: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.params["seed"]

    def echo(self) -> dict:
        return {"command": self.command, **{k: v for k, v in self.params.items() if k != "out"}}


@dataclass
class RunManifest:
    command: str
    config: dict
    version: str
    seeds: list
    wall_clock_seconds: float
    outputs: dict
    exit_code: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _schema(command):
    return dict(COMMON, **SCHEMA[command])


def _load_config_file(path) -> dict:
    import yaml

    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file {path} not found")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigurationError(f"{path}: {where}: {exc.problem}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coulomb-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"coulomb-lab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        p = sub.add_parser(cmd)
        p.add_argument("--config", help="YAML or JSON file with parameters (flags override)")
        for name, (conv, default, helptext) in _schema(cmd).items():
            flag = "--" + name.replace("_", "-")
            if conv is _bool:
                p.add_argument(flag, dest=name, action="store_const", const=True, default=None,
                               help=helptext)
                p.add_argument("--no-" + name.replace("_", "-"), dest=name, action="store_const",
                               const=False, help=argparse.SUPPRESS)
            else:
                p.add_argument(flag, dest=name, default=None, help=f"{helptext} (default: {default})")
    return parser


def parse_config(argv=None) -> ExperimentConfig:
    """Merge defaults, config file and flags; validate types and catalog constraints."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    cmd = ns.command
    schema = _schema(cmd)
    raw, sources = {}, {}
    if ns.config:
        filed = _load_config_file(ns.config)
        filed_cmd = filed.pop("command", cmd)
        if filed_cmd != cmd:
            raise ConfigurationError(f"{ns.config}: command {filed_cmd!r} does not match {cmd!r}")
        unknown = sorted(set(filed) - set(schema))
        if unknown:
            raise ConfigurationError(f"{ns.config}: unknown field(s) for {cmd}: {', '.join(unknown)}")
        raw.update(filed)
        sources.update({k: "file" for k in filed})
    for name in schema:
        v = getattr(ns, name)
        if v is not None:
            raw[name] = v
            sources[name] = "flag"
    params = {}
    for name, (conv, default, _) in schema.items():
        if name not in raw:
            params[name] = default
            continue
        try:
            params[name] = conv(raw[name])
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"field {name!r}: cannot parse {raw[name]!r} ({exc})") from exc
    cfg = ExperimentConfig(cmd, params, Path(params["out"]).resolve(), sources)
    _validate(cfg)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    from .geometry import BaseMeasure, Domain
    from .weights import check_weight_domain, classify_admissibility, parse_weight

    p = cfg.params
    if cfg.command == "stereo-test":
        return
    domain = Domain.parse(p["domain"])
    Q = parse_weight(p["weight"])
    BaseMeasure.parse(p["base_measure"])
    check_weight_domain(Q, domain)
    if "convention" in p and p["convention"] not in ("k-1", "k"):
        raise ConfigurationError("field 'convention': must be 'k-1' or 'k'")
    if cfg.command == "sample" and p["format"] not in ("csv", "npy"):
        raise ConfigurationError("field 'format': must be 'csv' or 'npy'")
    if cfg.command in ("equilibrium", "fekete", "bm", "ldp") and not domain.bounded:
        rep = classify_admissibility(Q, domain)
        if not rep.passes_weak:
            from .errors import AdmissibilityError

            raise AdmissibilityError(f"weight {Q} is {rep.klass} on {domain}")
    cfg.params["_domain"], cfg.params["_weight"] = domain, Q


# ---------------------------------------------------------------------------
# commands

def _grid(p):
    from .geometry import build_grid

    trunc = p.get("truncation", "cap-including")
    return build_grid(p["_domain"], p["n"], p["base_measure"], truncation=trunc)


def _admissibility_dict(p):
    from .weights import classify_admissibility

    rep = classify_admissibility(p["_weight"], p["_domain"])
    return {"class": rep.klass, "M_estimate": rep.M_estimate, "method": rep.method,
            "passes_weak": rep.passes_weak, "passes_admissible": rep.passes_admissible,
            "passes_strong": rep.passes_strong}


def _solve(p, tol=None):
    from .equilibrium import solve_equilibrium

    grid = _grid(p)
    return solve_equilibrium(grid, p["_weight"], tol=tol or p.get("tol", 1e-8),
                             **({"method": p["method"], "support_threshold": p["support_threshold"]}
                                if "method" in p else {}))


def cmd_equilibrium(p, out: Path, files: list) -> int:
    from .equilibrium import density_1d, frostman_report
    from .measures import write_measure_csv

    res = _solve(p)
    rep = frostman_report(res, p["_weight"], res.grid, p["support_threshold"])
    summary = {"summary": res.summary(), "admissibility": _admissibility_dict(p),
               "grid": {"n": res.grid.n, "chart": res.grid.chart, **res.grid.metadata},
               "frostman_max_abs_residual_on_support": rep.max_abs_residual_on_support}
    files.append(_write(out / "summary.json", lambda f: write_json(summary, f)))
    files.append(_write(out / "measure.csv", lambda f: write_measure_csv(res.measure, f)))
    files.append(_write(out / "frostman.csv", lambda f: write_table(
        f, ["re", "im", "residual", "on_support"], rep.rows())))
    if p["dat"] and res.grid.edges is not None:
        x, dens = density_1d(res)
        files.append(_write(out / "density.dat", lambda f: write_dat(f, ["x", "density"], zip(x, dens))))
    if p["plot"]:
        from .plotting import plot_equilibrium, plot_frostman

        files.append(_write(out / "equilibrium.png", lambda f: plot_equilibrium(res, f)))
        files.append(_write(out / "frostman.png", lambda f: plot_frostman(rep, f)))
    return 0 if res.converged else 4


def cmd_fekete(p, out, files) -> int:
    from .fekete import compute_fekete
    from .measures import EmpiricalMeasure, bl_distance

    grid = _grid(p)
    eq = _solve(p) if p["with_equilibrium"] else None
    rows, results = [], []
    for k in p["k"]:
        r = compute_fekete(grid, p["_weight"], k, restarts=p["restarts"], seed=p["seed"], refine=p["refine"])
        row = {"k": k, "delta_k": r.delta_k, "log_vdm_q": r.log_vdm_q,
               "normalised_log_vdm": 2.0 * r.log_vdm_q / (k * (k - 1)), "method": r.method,
               "exchanges": r.exchanges, "locally_optimal": r.locally_optimal,
               "target_delta": math.exp(-eq.V_w) if eq is not None else math.nan}
        if eq is not None:
            row["bl_to_equilibrium"] = bl_distance(EmpiricalMeasure(r.points), eq.measure)
        rows.append(row)
        results.append(r)
        pts = r.points
        files.append(_write(out / f"points_k{k}.csv", lambda f, pts=pts: write_table(
            f, ["re", "im"], zip(pts.real, pts.imag))))
        if p["plot"]:
            from .plotting import plot_points

            files.append(_write(out / f"points_k{k}.png", lambda f, pts=pts, k=k: plot_points(
                pts, f, f"weighted Fekete points, k = {k}", eq)))
    files.append(_write(out / "fekete.json", lambda f: write_json({"results": rows}, f)))
    cols = list(rows[0].keys())
    files.append(_write(out / "delta.csv", lambda f: write_table(f, cols, [[r[c] for c in cols] for r in rows])))
    if p["dat"]:
        files.append(_write(out / "delta.dat", lambda f: write_dat(
            f, ["k", "delta_k"], [(r["k"], r["delta_k"]) for r in rows])))
    if p["plot"] and len(rows) > 1:
        from .plotting import plot_delta

        files.append(_write(out / "delta.png", lambda f: plot_delta(rows, f)))
    return 0


def _ensemble_config(p, k):
    from .ensemble import EnsembleConfig, MCMCSettings

    mc = MCMCSettings(iterations=p["iterations"], burn_in=p["burn_in"], thinning=p["thinning"],
                      chains=p["chains"], seed=p["seed"], heavy_tail_mix=p["heavy_tail_mix"])
    return EnsembleConfig(p["_domain"], p["_weight"], k, p["beta"], p["base_measure"],
                          p["convention"], mc)


def cmd_sample(p, out, files) -> int:
    from .ensemble import ldp_conditions, sample_ensemble

    cfg = _ensemble_config(p, p["k"])
    run = sample_ensemble(cfg)
    x = run.samples
    C, S, k = x.shape
    if p["format"] == "npy":
        files.append(_write(out / "samples.npy", lambda f: np.save(f, x, allow_pickle=False)))
    else:
        real = not np.iscomplexobj(x)
        cols = ["chain", "index"] + ([f"x{i}" for i in range(1, k + 1)] if real else
                                     [c for i in range(1, k + 1) for c in (f"re{i}", f"im{i}")])

        def rows():
            for c in range(C):
                for s in range(S):
                    vals = x[c, s] if real else np.column_stack([x[c, s].real, x[c, s].imag]).ravel()
                    yield [c, s] + [float(v) for v in vals]

        files.append(_write(out / "samples.csv", lambda f: write_table(f, cols, rows())))
    diag = dict(run.diagnostics(), ldp_conditions=ldp_conditions(cfg), k=k, beta=cfg.beta,
                convention=cfg.exponent_convention)
    files.append(_write(out / "diagnostics.json", lambda f: write_json(diag, f)))
    if p["plot"]:
        from .plotting import plot_sample_histogram

        files.append(_write(out / "samples.png", lambda f: plot_sample_histogram(x, f)))
    return 0 if run.converged else 4


def cmd_zk(p, out, files) -> int:
    from .partition import zk_asymptotics

    eq = _solve(dict(p, tol=1e-8)) if p["with_equilibrium"] else None
    cfg = _ensemble_config(p, max(2, p["k"][0]))
    rows = zk_asymptotics(cfg, p["k"], eq, p["mode"])
    files.append(_write(out / "zk.json", lambda f: write_json({"rows": rows}, f)))
    cols = list(rows[0].keys())
    files.append(_write(out / "zk.csv", lambda f: write_table(f, cols, [[r[c] for c in cols] for r in rows])))
    if p["dat"]:
        files.append(_write(out / "zk.dat", lambda f: write_dat(
            f, ["k", "normalised", "target"], [(r["k"], r["normalised"], r["target"]) for r in rows])))
    if p["plot"]:
        from .plotting import plot_zk

        files.append(_write(out / "zk.png", lambda f: plot_zk(rows, f)))
    return 0


def cmd_bm(p, out, files) -> int:
    from .bernstein_markov import bernstein_walsh_check, bm_report

    grid = _grid(p)
    rep = bm_report(grid, grid.cell_measures, p["_weight"], p["degrees"])
    data = {"degrees": list(rep.degrees), "M_k": list(rep.M_k), "M_k_kth_root": list(rep.M_k_kth_root)}
    code = 0
    if p["bw_degree"] is not None:
        eq = _solve(p)
        bw = bernstein_walsh_check(eq, p["_weight"], grid, p["bw_trials"], p["bw_degree"], p["seed"])
        data["bernstein_walsh"] = {"degree": bw.degree, "trials": bw.trials,
                                   "max_log_violation": bw.max_log_violation, "signed_max": bw.signed_max,
                                   "test_points": bw.n_test_points, "passed": bw.passed}
        code = 0 if eq.converged else 4
    files.append(_write(out / "bm.json", lambda f: write_json(data, f)))
    files.append(_write(out / "bm.csv", lambda f: write_table(f, ["degree", "M_k", "M_k_kth_root"], rep.rows())))
    if p["dat"]:
        files.append(_write(out / "bm.dat", lambda f: write_dat(f, ["degree", "M_k", "M_k_kth_root"], rep.rows())))
    if p["plot"]:
        from .plotting import plot_bm

        files.append(_write(out / "bm.png", lambda f: plot_bm(rep, f)))
    return code


def cmd_ldp(p, out, files) -> int:
    from .ldp import NeighborhoodSpec, ldp_report
    from .measures import DiscreteMeasure, read_measure_csv

    eq = _solve(dict(p, tol=1e-8))
    grid = eq.grid
    if p["center"] == "uniform":
        center = DiscreteMeasure.from_grid(grid, grid.cell_measures / grid.cell_measures.sum())
    elif p["center"] == "equilibrium":
        center = eq.measure
    else:
        center = read_measure_csv(p["center"])
    G = NeighborhoodSpec(center, p["radius"])
    cfg = _ensemble_config(p, max(2, p["klist"][0]))
    rep = ldp_report(G, cfg, eq, p["_weight"], p["klist"], p["lipschitz"], p["quadrature_k"])
    files.append(_write(out / "ldp.json", lambda f: write_json(rep.as_dict(), f)))
    rows = [(k, k * k, s, se, math.log(s) if s > 0 else -math.inf)
            for k, s, se in zip(rep.k_list, rep.sigma_hat, rep.sigma_std_error)]
    hdr = ["k", "k2", "sigma_hat", "sigma_se", "log_sigma_hat"]
    files.append(_write(out / "slope.csv", lambda f: write_table(f, hdr, rows)))
    if p["dat"]:
        files.append(_write(out / "slope.dat", lambda f: write_dat(f, hdr, rows)))
    if p["plot"]:
        from .plotting import plot_ldp

        files.append(_write(out / "slope.png", lambda f: plot_ldp(rep, f)))
    return 0


def cmd_stereo(p, out, files) -> int:
    from .geometry import stereo_check

    res = stereo_check(p["pairs"], p["seed"])
    files.append(_write(out / "stereo.json", lambda f: write_json(res, f)))
    return 0 if res["passed"] else 1


HANDLERS = {"equilibrium": cmd_equilibrium, "fekete": cmd_fekete, "sample": cmd_sample,
            "zk": cmd_zk, "bm": cmd_bm, "ldp": cmd_ldp, "stereo-test": cmd_stereo}


def _write(path: Path, writer) -> Path:
    writer(path)
    return path


def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    """Dispatch to the command, then write ``manifest.json`` with output checksums."""
    p = cfg.params
    if p["threads"] is not None:
        os.environ["COULOMB_LAB_THREADS"] = str(p["threads"])
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []
    t0 = time.perf_counter()
    code = 0
    try:
        code = HANDLERS[cfg.command](p, out, files)
    except NonConvergenceError:
        code = 4
    elapsed = time.perf_counter() - t0
    echo = {k: v for k, v in cfg.echo().items() if not k.startswith("_") and k != "threads"}
    seeds = [p["seed"]] if cfg.command in STOCHASTIC else []
    if cfg.command in ("sample", "ldp", "zk"):
        seeds = [[p["seed"], c] for c in range(p["chains"])]
    man = RunManifest(cfg.command, echo, __version__, seeds, elapsed,
                      {f.name: sha256_file(f) for f in sorted(files)}, code)
    (out / "manifest.json").write_text(dumps_json(man.as_dict()))
    return man


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
        man = run_experiment(cfg)
    except CoulombLabError as exc:
        print(f"coulomb-lab: error: {exc}", file=sys.stderr)
        return exc.exit_code
    if man.exit_code == 4:
        print("coulomb-lab: numerical non-convergence; outputs written with converged=false", file=sys.stderr)
    print(str(cfg.out_dir / "manifest.json"))
    return man.exit_code


if __name__ == "__main__":
    sys.exit(main())

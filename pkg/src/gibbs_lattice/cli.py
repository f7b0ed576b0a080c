"""
Batch front-end: ``gibbs-lattice --config exp.json --out DIR``.

Exit codes: 0 success, 1 a verify check or ``--check`` validation failed,
2 invalid configuration, 3 runtime failure (partial results are kept and a
``FAILED`` row is appended).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import (AffineSpec, ConfigError, ExperimentConfig, JumpSpec, SBVSpec, config_digest, load_config,
                     validate_config)
from .free_energy import FreeEnergyEstimate, FreeEnergyProblem, _digest, limit_scan
from .homogenize import CellProblem, f_hom_estimate, legendre_oracle_1d
from .sbv_energy import surface_density_probe
from .verify import default_battery, summarize

logger = logging.getLogger(__name__)

COLUMNS = ("epsilon", "kappa", "value", "stderr", "method", "cutoff", "tail_bound", "seed", "label", "digest")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v).replace(",", ";").replace("\n", " ")


class ResultWriter:
    """Collects rows in deterministic order and writes them as CSV."""

    def __init__(self, seed: int):
        self.seed = seed
        self.rows = []

    def add(self, epsilon, kappa, value, stderr, method, cutoff=None, tail_bound=None, label="", digest=""):
        self.rows.append((epsilon, kappa, value, stderr, method, cutoff, tail_bound, self.seed, label, digest))

    def add_estimate(self, est: FreeEnergyEstimate, label: str):
        md = est.metadata
        self.add(md.get("epsilon"), md.get("kappa"), est.value, est.stderr, est.method, md.get("cutoff"),
                 md.get("tail_bound"), label, _digest(md))

    def failed(self, message: str):
        self.add(None, None, math.nan, math.nan, "FAILED", label="FAILED", digest=_fmt(message))

    def text(self) -> str:
        lines = [",".join(COLUMNS)]
        lines += [",".join(_fmt(v) for v in row) for row in self.rows]
        return "\n".join(lines) + "\n"

    def write(self, path: Path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.text())


def _gaussian_oracle(cfg: ExperimentConfig, M: float) -> Optional[float]:
    """Legendre oracle when the cell problem is a 1-D homogeneous power chain."""
    pot = cfg.potential
    if isinstance(pot, SBVSpec) or pot.weights.d != 1 or cfg.region.dim_m != 1 or pot.weights.support != "nearest":
        return None
    coef = 1.0 if pot.coefficient is None else np.asarray(pot.coefficient, dtype=float)
    if np.ndim(coef) and np.ptp(coef) != 0:
        return None
    c = cfg.beta * pot.weights.c0 * float(np.ravel(coef)[0])
    return legendre_oracle_1d(lambda t: c * abs(t) ** pot.p, M)


def _run_free_energy(cfg, seed, threads, out: ResultWriter, scan: bool):
    problem = FreeEnergyProblem(cfg.potential.build(), cfg.region.build(), cfg.profile.build(), cfg.constraint.p,
                                cfg.constraint.mode, cfg.beta, cfg.cutoff, cfg.region.dim_m, cfg.chain(seed),
                                cfg.method, cfg.constraint.r0)
    eps = cfg.schedule.epsilons
    kap = cfg.constraint.kappas
    if not scan:
        for e in eps:
            for k in kap:
                out.add_estimate(problem.estimate(e, k, threads), "F")
        return {}
    res = limit_scan(problem, eps, kap, threads)
    for (i, j), est in sorted(res.grid.items()):
        if isinstance(est, FreeEnergyEstimate):
            out.add_estimate(est, "F")
        else:
            out.add(eps[i], kap[j], math.nan, math.nan, "FAILED", label="FAILED", digest=_fmt(est))
    for j, k in enumerate(kap):
        for name, table in (("liminf", res.f_liminf), ("limsup", res.f_limsup)):
            if j in table:
                out.add(None, k, table[j][0], table[j][1], name, label=name)
    out.add(None, None, res.f_prime[0], res.f_prime[1], "kappa_limit", label="F_prime")
    out.add(None, None, res.f_second[0], res.f_second[1], "kappa_limit", label="F_second")
    return {"converged": {str(kap[j]): v for j, v in res.converged.items()},
            "monotone_rows": {str(eps[i]): v for i, v in res.monotone_rows.items()}}


def _run_homogenize(cfg, seed, threads, out: ResultWriter):
    if not isinstance(cfg.profile, AffineSpec):
        raise ConfigError(["field profile.kind: homogenize requires an affine profile"])
    dom = cfg.region.build()
    prob = CellProblem(cfg.profile.M, cfg.potential.build(), cfg.schedule.epsilons, cfg.constraint.kappas,
                       dom, cfg.constraint.p, cfg.beta, cfg.cutoff, cfg.chain(seed), cfg.method,
                       cfg.constraint.mode)
    res = f_hom_estimate(prob, threads)
    for (e, k), est in res.grid.items():
        out.add_estimate(est, "cell")
    for k in sorted(res.by_kappa):
        fit = res.by_kappa[k]
        out.add(0.0, k, fit["limit"], fit["stderr"], "extrapolated", label="f_hom")
    M = np.asarray(cfg.profile.M, dtype=float)
    oracle = _gaussian_oracle(cfg, float(M.ravel()[0])) if M.size == 1 else None
    if oracle is not None:
        out.add(0.0, None, oracle, 0.0, "legendre_oracle", label="oracle")
    return {"order": res.order, "kappa_independent": res.kappa_independent, "converged": res.converged}


def _run_sbv(cfg, seed, threads, out: ResultWriter):
    if not isinstance(cfg.profile, JumpSpec) or not isinstance(cfg.potential, SBVSpec):
        raise ConfigError(["sbv-probe requires a jump profile and the sbv potential family"])
    probe = surface_density_probe(cfg.profile.datum(), cfg.potential.build(), cfg.schedule.epsilons,
                                  cfg.constraint.kappas[0], cfg.beta, cfg.region.build(), cfg.chain(seed),
                                  cfg.method, cfg.constraint.p, threads, cfg.cutoff)
    k = cfg.constraint.kappas[0]
    for e, x, s, a, sa, (ej, _) in zip(probe.epsilons, probe.excess, probe.excess_err, probe.amplitude,
                                        probe.amplitude_err, probe.estimates):
        md = ej.metadata
        out.add(e, k, x, s, "excess", md.get("cutoff"), md.get("tail_bound"), "excess", _digest(md))
        out.add(e, k, a, sa, "amplitude", md.get("cutoff"), md.get("tail_bound"), "amplitude", _digest(md))
    return {"exponent": probe.exponent, "exponent_err": probe.exponent_err, "flags": probe.flags}


def _run_verify(cfg, seed, threads, out: ResultWriter, outdir: Path):
    results = default_battery(seed, cfg.verify.n_zigzag, threads)
    for r in results:
        value = {"pass": 1.0, "fail": 0.0}.get(r.status, math.nan)
        out.add(None, None, value, 0.0, r.status, label=r.name, digest=r.digest)
    summ = summarize(results)
    with open(outdir / cfg.outputs.summary, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summ, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return {"counts": summ["counts"], "inconclusive_rate": summ["inconclusive_rate"]}


def _versions() -> dict:
    import numba
    import pydantic
    import scipy
    return {"gibbs_lattice": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "pydantic": pydantic.__version__}


def run(cfg: ExperimentConfig, outdir=None, seed: Optional[int] = None, threads: int = 1) -> int:
    """Execute one experiment; returns the process exit status."""
    seed = cfg.seed if seed is None else seed
    outdir = Path(outdir or cfg.outputs.dir)
    outdir.mkdir(parents=True, exist_ok=True)
    writer = ResultWriter(seed)
    t0 = time.perf_counter()
    status, info, error = 0, {}, None
    try:
        if cfg.kind in ("free-energy", "scan"):
            info = _run_free_energy(cfg, seed, threads, writer, cfg.kind == "scan")
        elif cfg.kind == "homogenize":
            info = _run_homogenize(cfg, seed, threads, writer)
        elif cfg.kind == "sbv-probe":
            info = _run_sbv(cfg, seed, threads, writer)
        else:
            info = _run_verify(cfg, seed, threads, writer, outdir)
            if info["counts"]["fail"]:
                status = 1
    except ConfigError as exc:
        error, status = str(exc), 2
        writer.failed(error)
    except Exception as exc:  # runtime failure: keep what was computed
        logger.exception("experiment failed")
        error, status = f"{type(exc).__name__}: {exc}", 3
        writer.failed(error)
    writer.write(outdir / cfg.outputs.results)
    manifest = {"config_digest": config_digest(cfg), "config": cfg.model_dump(mode="json"), "seed": seed,
                "threads": threads, "versions": _versions(), "wall_time_s": time.perf_counter() - t0,
                "status": "ok" if status == 0 else ("FAILED" if error else "checks_failed"), "error": error,
                "info": info, "artifacts": sorted(p.name for p in outdir.iterdir() if p.is_file())}
    with open(outdir / cfg.outputs.manifest, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return status


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gibbs-lattice", description="Constrained lattice free-energy experiments.")
    ap.add_argument("--config", required=True, type=Path, help="experiment JSON document")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed (unsigned 64-bit)")
    ap.add_argument("--out", type=Path, default=None, help="output directory (default: outputs.dir)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads; affects speed only")
    ap.add_argument("--check", action="store_true", help="validate the config and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    if args.check:
        rep = validate_config(args.config)
        print(json.dumps(rep, indent=2, sort_keys=True, default=str))
        return 0 if rep["ok"] else 1
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for line in exc.diagnostics:
            print(f"error: {args.config}: {line}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run(cfg, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line runner: ``hls <workflow> --config <path> [--out <dir>] [--deterministic]``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .concentration import (
    build_measures,
    check_atom_inequality,
    compactness_split_check,
    detect_atoms,
)
from .config import WORKFLOWS, ConfigError, JobConfig, format_value, parse_config
from .errors import HLSError
from .extremal import ExtremalResult, SolverConfig, alternating_maximize, euclidean_baseline
from .geometry import ManifoldSpec, QuadratureGrid, build_grid, normal_chart, unit_ball_volume
from .riesz import KernelMatrix, RieszKernel, assemble_kernel, lp_norm
from .transplant import bubble_patch, lower_bound_sweep, sweep_to_csv, transplant_many

logger = logging.getLogger("hls")

DEFAULT_OUT = "hls_out"
# Certificates may exceed the solved supremum by this relative margin before
# the transplant workflow reports failure.
SUP_TOLERANCE = 0.01


@dataclass
class ResultRecord:
    config: JobConfig
    results: Dict[str, object] = field(default_factory=dict)
    files: Dict[str, str] = field(default_factory=dict)
    status: str = "ok"
    duration: float = math.nan
    version: str = __version__

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def summary_text(self, deterministic: bool) -> str:
        cfg = self.config
        lines = [f"version={self.version}", f"workflow={cfg.workflow}", f"config_hash={cfg.config_hash()}"]
        lines += ["config." + line for line in cfg.echo().splitlines()]
        lines += [f"result.{k}={format_value(v)}" for k, v in self.results.items()]
        lines += [f"file.{k}={v}" for k, v in self.files.items()]
        lines.append(f"status={self.status}")
        if not deterministic:
            lines.append(f"duration_s={self.duration:.3f}")
        return "\n".join(lines) + "\n"


def _solver_config(cfg: JobConfig) -> SolverConfig:
    return SolverConfig(p=cfg.p, t=cfg.t, max_iter=cfg.max_iter, tol=cfg.tol, seed=cfg.seed)


def _default_center(spec: ManifoldSpec) -> np.ndarray:
    if spec.kind == "sphere2":
        return np.array([0.0, 0.0, spec.radius])
    if spec.kind == "circle":
        return np.array([math.pi])
    if spec.kind.startswith("torus"):
        return 0.5 * np.asarray(spec.periods)
    return np.zeros(spec.dim)


def _opposite(spec: ManifoldSpec, P: np.ndarray) -> np.ndarray:
    """A point far from ``P`` (antipode, or half a period away)."""
    if spec.kind == "sphere2":
        return -P
    if spec.kind == "circle":
        return np.array([(P[0] + math.pi) % (2 * math.pi)])
    Q = P.copy()
    Q[0] = (Q[0] + 0.5 * spec.periods[0]) % spec.periods[0]
    return Q


def _center(cfg: JobConfig, spec: ManifoldSpec) -> np.ndarray:
    return _default_center(spec) if cfg.center is None else np.asarray(cfg.center, dtype=float)


def _write_fields(path: Path, grid: QuadratureGrid, res: ExtremalResult) -> None:
    d = grid.nodes.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k}" for k in range(d)] + ["weight", "f", "g"])
        for x, wt, f, g in zip(grid.nodes, grid.weights, res.f.values, res.g.values):
            w.writerow([repr(float(v)) for v in x] + [repr(float(wt)), repr(float(f)), repr(float(g))])


def _solver_outputs(rec: ResultRecord, res: ExtremalResult, grid: QuadratureGrid, out: Path, key: str) -> None:
    rec.results.update({
        key: res.value,
        "iterations": res.iterations,
        "converged": res.converged,
        "monotone": res.monotone,
        "residual_f": res.residuals[0],
        "residual_g": res.residuals[1],
        "q": rec.config.q,
        "t": rec.config.t,
        "nodes": grid.size,
    })
    res.history_to_csv(out / "history.csv")
    _write_fields(out / "fields.csv", grid, res)
    rec.files.update({"history": "history.csv", "fields": "fields.csv"})
    if not (res.converged and res.monotone):
        rec.status = "failed: " + ("unconverged" if not res.converged else "nonmonotone")


def _point_toy(cfg: JobConfig):
    n = cfg.n
    spec = ManifoldSpec.ball(n, (1.0 / unit_ball_volume(n)) ** (1.0 / n))
    grid = QuadratureGrid(spec, np.zeros((1, n)), np.ones(1), h=spec.radius)
    return grid, KernelMatrix.from_dense([[cfg.diagonal]], cfg.alpha, n)


def run_solve(cfg: JobConfig, rec: ResultRecord, out: Path) -> None:
    if cfg.manifold == "point":
        grid, K = _point_toy(cfg)
    else:
        grid = build_grid(cfg.spec, cfg.resolution)
        K = assemble_kernel(RieszKernel(cfg.alpha, cfg.spec), grid)
        grid.to_csv(out / "grid.csv")
        rec.files["grid"] = "grid.csv"
    res = alternating_maximize(K, grid, _solver_config(cfg))
    _solver_outputs(rec, res, grid, out, "N")


def run_baseline(cfg: JobConfig, rec: ResultRecord, out: Path) -> None:
    spec = cfg.spec
    res = euclidean_baseline(spec.dim, cfg.alpha, cfg.p, spec.radius, cfg.resolution, _solver_config(cfg))
    res.grid.to_csv(out / "grid.csv")
    rec.files["grid"] = "grid.csv"
    _solver_outputs(rec, res, res.grid, out, "N_proxy")


def _baseline_for(cfg: JobConfig) -> ExtremalResult:
    res = euclidean_baseline(cfg.spec.dim, cfg.alpha, cfg.p, 1.0, cfg.ball_resolution,
                             SolverConfig(p=cfg.p, t=cfg.t, max_iter=cfg.max_iter, tol=cfg.tol))
    if not res.converged:
        raise HLSError("Euclidean baseline did not converge; raise max_iter or ball_resolution")
    return res


def run_transplant(cfg: JobConfig, rec: ResultRecord, out: Path) -> None:
    spec = cfg.spec
    lambdas = cfg.lambdas or (0.8, 0.4, 0.2, 0.1)
    base = _baseline_for(cfg)
    solver = SolverConfig(p=cfg.p, t=cfg.t, max_iter=cfg.max_iter, tol=cfg.tol)
    reports = lower_bound_sweep(spec, _center(cfg, spec), cfg.alpha, cfg.p, lambdas, delta=cfg.delta,
                                resolution=cfg.resolution, baseline=base, solve=cfg.solve_sup,
                                config=solver)
    sweep_to_csv(reports, out / "sweep.csv")
    rec.files["sweep"] = "sweep.csv"
    last = reports[-1]
    rec.results.update({
        "N_proxy": last.n_proxy,
        "delta": last.delta,
        "epsilon": last.epsilon,
        "rows": len(reports),
        "final_certificate": last.certificate,
        "final_quotient": last.quotient,
        "certificate_ratio": last.certificate / last.n_proxy,
    })
    if cfg.solve_sup:
        rec.results["final_manifold_sup"] = last.manifold_sup
        rec.results["sup_converged"] = sum(r.converged for r in reports)
        bad = [r.lam for r in reports if r.certificate > r.manifold_sup * (1 + SUP_TOLERANCE)]
        if bad:
            rec.status = "failed: certificate above solved supremum at lambda " + format_value(tuple(bad))


def run_cc_diagnose(cfg: JobConfig, rec: ResultRecord, out: Path) -> None:
    spec = cfg.spec
    lambdas = cfg.lambdas or tuple(2.0**-m for m in range(1, 7))
    base = _baseline_for(cfg)
    N = base.value
    delta = cfg.delta if cfg.delta is not None else 0.5 * spec.injectivity_radius
    centers = [_center(cfg, spec)]
    if cfg.bubbles == 2:
        centers.append(_opposite(spec, centers[0]))
    charts = [normal_chart(spec, P, delta) for P in centers]
    coef = (1.0 / len(charts)) ** (1.0 / cfg.p)
    background = build_grid(spec, cfg.resolution)
    kernel = RieszKernel(cfg.alpha, spec)
    measures = []
    for lam in lambdas:
        tr = transplant_many([bubble_patch(ch, base, lam, coef) for ch in charts], background)
        K = assemble_kernel(kernel, tr.grid)
        u = tr.u.values / lp_norm(tr.grid, tr.u.values, cfg.p)
        measures.append(build_measures(tr.grid, K, u, cfg.p, cfg.q))
        del K
    atoms = detect_atoms(measures, cfg.radii, cfg.threshold)

    with open(out / "cc.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "lambda", "mu_total", "nu_total"] + [f"mu_atom{j}" for j in range(len(atoms))])
        for m, (lam, meas) in enumerate(zip(lambdas, measures)):
            w.writerow([m, repr(lam), repr(meas.mu_total), repr(meas.nu_total)]
                       + [repr(a.mu_history[m]) for a in atoms])
    with open(out / "atoms.txt", "w") as fh:
        fh.write(f"N_proxy={N!r} radius={min(cfg.radii)!r} threshold={cfg.threshold!r}\n")
        for a in atoms:
            fh.write(a.summary(N) + "\n")
    rec.files.update({"cc": "cc.csv", "atoms": "atoms.txt"})
    rec.results.update({"N_proxy": N, "atoms": len(atoms)})
    for j, a in enumerate(atoms):
        rec.results[f"atom{j}.mu"] = a.mu
        rec.results[f"atom{j}.nu"] = a.nu
        rec.results[f"atom{j}.relative_slack"] = check_atom_inequality(a, N, relative=True)


def _oscillation_phase(spec: ManifoldSpec, nodes: np.ndarray) -> np.ndarray:
    if spec.kind == "circle":
        return nodes[:, 0]
    if spec.kind == "sphere2":
        return np.arctan2(nodes[:, 1], nodes[:, 0])
    if spec.kind.startswith("torus"):
        return 2 * math.pi * nodes[:, 0] / spec.periods[0]
    return math.pi * nodes[:, 0] / spec.radius


def run_split_check(cfg: JobConfig, rec: ResultRecord, out: Path) -> None:
    spec = cfg.spec
    grid = build_grid(spec, cfg.resolution)
    K = assemble_kernel(RieszKernel(cfg.alpha, spec), grid)
    f = np.full(grid.size, 1.0)
    f /= lp_norm(grid, f, cfg.p)
    phase = _oscillation_phase(spec, grid.nodes)
    seq = [f * (1 + 0.5 * np.cos(k * phase)) for k in cfg.frequencies]
    table = compactness_split_check(K, grid, seq, f, cfg.rhos, cfg.split_r, cfg.p)
    table.to_csv(out / "split.csv")
    rec.files["split"] = "split.csv"
    rec.results.update({"s": table.s, "slope": table.slope, "expected_slope": table.expected_slope})
    rho0 = cfg.rhos[0]
    far = table.far(rho0)
    rec.results["far_first"] = far[0]
    rec.results["far_last"] = far[-1]


_RUNNERS = {
    "solve": run_solve,
    "baseline": run_baseline,
    "transplant": run_transplant,
    "cc-diagnose": run_cc_diagnose,
    "split-check": run_split_check,
}


def _thread_limit(deterministic: bool) -> int:
    if deterministic:
        return 1
    env = os.environ.get("HLS_THREADS", "").strip()
    if not env:
        return 1
    try:
        k = int(env)
    except ValueError:
        raise ConfigError([f"HLS_THREADS must be a positive integer, got {env!r}"]) from None
    if k < 1:
        raise ConfigError([f"HLS_THREADS must be a positive integer, got {env!r}"])
    return k


def run(cfg: JobConfig, out: Optional[str] = None) -> ResultRecord:
    """Run one workflow, write ``summary.txt`` plus its CSVs, and return the record."""
    out_dir = Path(out or cfg.out or DEFAULT_OUT)
    out_dir.mkdir(parents=True, exist_ok=True)
    rec = ResultRecord(cfg)
    start = time.perf_counter()
    try:
        with threadpool_limits(limits=_thread_limit(cfg.deterministic)):
            _RUNNERS[cfg.workflow](cfg, rec, out_dir)
    except Exception as exc:
        rec.status = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")
        rec.duration = time.perf_counter() - start
        (out_dir / "summary.txt").write_text(rec.summary_text(cfg.deterministic))
        raise
    rec.duration = time.perf_counter() - start
    (out_dir / "summary.txt").write_text(rec.summary_text(cfg.deterministic))
    return rec


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hls", description="Discrete sharp HLS constants on compact manifolds.")
    ap.add_argument("workflow", choices=WORKFLOWS)
    ap.add_argument("--config", required=True, help="key=value configuration file")
    ap.add_argument("--out", help=f"output directory (default: config 'out' or {DEFAULT_OUT})")
    ap.add_argument("--deterministic", action="store_true", help="single-threaded, no timing in the summary")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"hls: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text, workflow=args.workflow, deterministic=True if args.deterministic else None)
    except ConfigError as exc:
        print(f"hls: {exc}", file=sys.stderr)
        return 2
    try:
        rec = run(cfg, args.out)
    except Exception as exc:
        logger.debug("workflow error", exc_info=True)
        print(f"hls: {cfg.workflow} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    if not rec.ok:
        print(f"hls: {cfg.workflow} {rec.status}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

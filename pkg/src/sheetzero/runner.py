"""Execute a :class:`RunConfig`, write CSV artifacts and a JSON manifest."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .closed_form import covariance, ehm_dimension, gamma_simplex, gamma_simplex_quad
from .config import RunConfig
from .dimension import (
    cantor_occupancy,
    doubling_harness,
    ehm_harness,
    fit_dimension,
    good_square_harness,
    interval_occupancy,
    projection_harness,
)
from .excursions import davis_exit_mc, tail_check_lemma1, visit_bound_check
from .field_sim import GridSpec, simulate_sheet
from .geometry import select_chart
from .local_time import ProbeSetup, continuity_probes, surjectivity_harness
from .zero_set import ZeroRule, cube_cover_count

EXIT_CODES = {"pass": 0, "fail": 2, "finding": 3}


@dataclass
class Outcome:
    verdict: str  # pass | fail | finding
    summary: dict
    tables: dict[str, tuple[list[str], list[tuple]]] = field(default_factory=dict)
    findings: list[str] = field(default_factory=list)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_bytes(header: list[str], rows: list[tuple]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue().encode()


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _rule(cfg: RunConfig) -> ZeroRule | None:
    return None if cfg.c is None else ZeroRule("auto", cfg.c, "cell")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def onset_levels(rows, bound) -> dict:
    """Per seed, the smallest probed level from which every count is within ``bound(n)``.

    ``rows`` are ``(seed, theta, n, count, ...)``; ``None`` marks a seed whose
    finest level still exceeds the bound.
    """
    worst: dict = {}
    for seed, _, n, count, *_ in rows:
        key = (int(seed), int(n))
        worst[key] = max(worst.get(key, 0), int(count))
    out = {}
    for seed in sorted({k[0] for k in worst}):
        levels = sorted(n for s, n in worst if s == seed)
        n0 = None
        for n in reversed(levels):
            if worst[(seed, n)] > bound(n):
                break
            n0 = n
        out[seed] = n0
    return out


# ---------------------------------------------------------------- experiments


def _covariance(cfg: RunConfig, workers: int) -> Outcome:
    spec = GridSpec(cfg.N, cfg.level, (2.0,) * cfg.N)
    pairs = [np.asarray(p, float).reshape(2, cfg.N) for p in cfg.pairs]
    idx = []
    for s, t in pairs:
        for v in (s, t):
            k = v / spec.h
            if np.any(np.abs(k - np.round(k)) > 1e-9) or np.any(v < 0) or np.any(v > 2.0):
                raise ValueError(f"{v} is not a lattice vertex at level {cfg.level}")
        idx.append((tuple(np.round(s / spec.h).astype(int)), tuple(np.round(t / spec.h).astype(int))))
    prods = np.zeros((len(cfg.seeds), len(pairs)))
    for i, seed in enumerate(cfg.seeds):
        vals = simulate_sheet(spec, cfg.d, seed, workers=workers).values[0]
        prods[i] = [vals[a] * vals[b] for a, b in idx]
    mean = prods.mean(axis=0)
    se = prods.std(axis=0, ddof=1) / math.sqrt(len(cfg.seeds))
    exact = np.array([covariance(s, t) for s, t in pairs])
    z = (mean - exact) / se
    rows = [(k, " ".join(map(repr, s)), " ".join(map(repr, t)), mean[k], exact[k], se[k], z[k]) for k, (s, t) in enumerate(pairs)]
    ok = bool(np.all(np.abs(z) <= cfg.tol))
    return Outcome(
        "pass" if ok else "fail",
        {"max_abs_z": float(np.abs(z).max()), "tolerance_se": cfg.tol, "replicas": len(cfg.seeds)},
        {"covariance": (["pair", "s", "t", "empirical", "exact", "stderr", "z"], rows)},
    )


def _ehm(cfg: RunConfig, workers: int) -> Outcome:
    win = cfg.window
    s = ehm_harness(cfg.N, cfg.d, cfg.level, cfg.seeds, win, _rule(cfg), cfg.fit_window, workers)
    per_seed = [(seed, sl if sl is not None else "") for seed, sl in zip(s.seeds, s.slopes)]
    return Outcome(
        s.verdict(cfg.tol),
        s.to_json(cfg.tol),
        {"counts": (["seed", "level", "count"], s.rows), "slopes": (["seed", "slope"], per_seed)},
        [f"{s.n_empty} seeds without zero cells"] if s.n_empty else [],
    )


def _projection(cfg: RunConfig, workers: int) -> Outcome:
    p = projection_harness(cfg.d, cfg.level, cfg.net_level, cfg.seeds, cfg.N, window=cfg.window, rule=_rule(cfg),
                           fit_window=cfg.fit_window, workers=workers)
    target = ehm_dimension(cfg.N, cfg.d)
    near = abs(p.source.mean_slope - target) <= cfg.tol and all(abs(im.mean_slope - target) <= cfg.tol for im in p.images)
    ok = p.max_gap <= cfg.tol and near and p.cover_violations == 0
    rows = [("source", "", seed, j, c) for seed, j, c in p.source.rows]
    for theta, im in zip(p.angles, p.images):
        rows.extend(("image", float(theta), seed, j, c) for seed, j, c in im.rows)
    summary = {**p.to_json(), "target": target, "tolerance": cfg.tol}
    return Outcome("pass" if ok else "fail", summary, {"counts": (["set", "theta", "seed", "level", "count"], rows)})


def _goodsquares(cfg: RunConfig, workers: int) -> Outcome:
    g = good_square_harness(cfg.seeds, cfg.levels, cfg.net_level, cfg.d, cfg.window, _rule(cfg), workers)
    finding = f"largest good-square count per tube: {dict(zip(g.levels.tolist(), g.max_counts.tolist()))}"
    onset = onset_levels(g.rows, lambda n: 10 * n**7)
    return Outcome(
        "pass" if g.violations == 0 else "fail",
        {**g.to_json(), "onset_level": onset},
        {"goodsquares": (["seed", "theta", "n", "max_per_tube", "good_intervals"], g.rows)},
        [finding] + [f"seed {seed}: bound holds from level {n0}" for seed, n0 in onset.items()],
    )


def _doubling(cfg: RunConfig, workers: int) -> Outcome:
    n = cfg.level
    E = interval_occupancy(n) if cfg.set == "interval" else cantor_occupancy(n)
    fit = cfg.fit_window or (4, n - 4)
    s = doubling_harness(cfg.d, E, n, cfg.seeds, fit_window=fit, workers=workers)
    return Outcome(s.verdict(cfg.tol), s.to_json(cfg.tol), {"image_counts": (["seed", "level", "count"], s.rows)})


def _surjectivity(cfg: RunConfig, workers: int) -> Outcome:
    lo, hi = cfg.target_range
    targets = np.linspace(lo, hi, cfg.targets)
    reports = [surjectivity_harness(cfg.N, cfg.d, cfg.level, targets, cfg.window, seed=s, rule=_rule(cfg), workers=workers)
               for s in cfg.seeds]
    rows = [(seed, t, h, cov) for seed, rep in zip(cfg.seeds, reports) for t, h, cov in rep.rows()]
    fractions = [rep.fraction for rep in reports]
    ok = min(fractions) >= cfg.tol
    findings = [f"seed {seed}: target {t!r} not covered" for seed, rep in zip(cfg.seeds, reports) for t in rep.shortfall]
    return Outcome(
        "pass" if ok else "fail",
        {"coverage": fractions, "threshold": cfg.tol},
        {"coverage": (["seed", "target", "hits", "covered"], rows)},
        findings,
    )


def _localtime(cfg: RunConfig, workers: int) -> Outcome:
    setup = ProbeSetup(level=cfg.level, window=cfg.window, d=cfg.d, eps=cfg.eps)
    if cfg.experiment == "localtime-x":
        curve = continuity_probes(cfg.seeds, alpha_space=cfg.alpha, setup=setup, workers=workers)["space"]
    else:
        curve = continuity_probes(cfg.seeds, alpha_fiber=cfg.alpha, net_levels=cfg.levels, setup=setup, workers=workers)["fiber"]
    ok = curve.monotone() and curve.decay_positive
    summary = {"kind": curve.kind, "alpha": curve.alpha, "c_hat": curve.c_hat, "c_ci": list(curve.c_ci),
               "monotone": curve.monotone(), "exceed": curve.exceed.tolist(), "replicas": curve.replicas, **curve.extra}
    header = ["grid", "threshold", "exceed", "replicas", "freq", "wilson_lo", "wilson_hi"]
    return Outcome("pass" if ok else "fail", summary, {"exceedance": (header, curve.rows())})


def _lemma1(cfg: RunConfig, workers: int) -> Outcome:
    rows, fits = [], []
    for n in cfg.levels:
        f = tail_check_lemma1(n, cfg.R, cfg.a, cfg.K_max, cfg.replicas, seed=cfg.seeds[0], dt=cfg.dt)
        fits.append(f)
        rows.extend((n, k, s, r) for k, s, r in f.rows())
    ok = all(f.nonincreasing and f.positive for f in fits)
    summary = {"fits": [{"n": f.level, "c_hat": f.c_hat, "c_ci": list(f.c_ci), "nonincreasing": f.nonincreasing,
                         "censored": f.censored} for f in fits], "R": cfg.R}
    return Outcome("pass" if ok else "fail", summary, {"survival": (["n", "k", "survivors", "replicas"], rows)})


def _visits(cfg: RunConfig, workers: int) -> Outcome:
    upper = tuple(float(v) for v in cfg.window[1])
    top = max(cfg.level or 0, max(cfg.levels) + 2)
    fields = [simulate_sheet(GridSpec(2, top, upper, cfg.window), cfg.d, s, workers=workers) for s in cfg.seeds]
    rep = visit_bound_check(fields, cfg.net_level, cfg.levels, cfg.R, cfg.c)
    verdict = "pass" if rep.violations == 0 else "finding"
    findings = [f"level {n}: max visits {m} vs n^7 = {n ** 7}" for n, m in zip(rep.levels.tolist(), rep.max_counts.tolist())]
    onset = onset_levels(rep.rows, lambda n: n**7)
    findings += [f"seed {seed}: bound holds from level {n0}" for seed, n0 in onset.items()]
    summary = {"levels": rep.levels.tolist(), "max_counts": rep.max_counts.tolist(), "violations": rep.violations,
               "inflated_violations": rep.inflated_violations, "onset_level": onset}
    return Outcome(verdict, summary, {"visits": (["seed", "theta", "n", "max_visits"], rep.rows)}, findings)


def _davis(cfg: RunConfig, workers: int) -> Outcome:
    e = davis_exit_mc(cfg.r, cfg.R, cfg.a, cfg.replicas, cfg.dt, seed=cfg.seeds[0])
    ok = e.error <= cfg.tol and e.censored == 0
    summary = {"p_hat": e.p_hat, "exact": e.exact, "abs_error": e.error, "stderr": e.stderr, "tolerance": cfg.tol,
               "censored": e.censored}
    row = [(e.r, e.R, e.a_norm, e.replicas, e.outer, e.censored, e.dt, e.p_hat, e.exact)]
    return Outcome("pass" if ok else "fail", summary,
                   {"davis": (["r", "R", "a_norm", "replicas", "outer", "censored", "dt", "p_hat", "exact"], row)})


def _gamma(cfg: RunConfig, workers: int) -> Outcome:
    rows = []
    for b in cfg.b:
        g, q = gamma_simplex(b), gamma_simplex_quad(b)
        rows.append((" ".join(map(repr, b)), g, q, abs(q / g - 1)))
    worst = max(r[3] for r in rows)
    return Outcome("pass" if worst <= cfg.tol else "fail", {"max_rel_error": worst, "tolerance": cfg.tol},
                   {"gamma": (["b", "closed_form", "quadrature", "rel_error"], rows)})


def _cubecover(cfg: RunConfig, workers: int) -> Outcome:
    levels = np.asarray(cfg.levels)
    top = int(levels.max())
    upper = (2.0,) * cfg.N
    center = np.full(cfg.N, 1.5)
    chart = select_chart(np.eye(cfg.N)[cfg.rank:], center)
    rows = []
    for seed in cfg.seeds:
        f = simulate_sheet(GridSpec(cfg.N, top, upper, cfg.window), cfg.d, seed, workers=workers)
        # without a configured level, use the value at the window center, which the fiber attains
        a = f.interpolate(center[None, :])[0] if cfg.a is None else np.broadcast_to(np.asarray(cfg.a, float), (cfg.d,))
        for n in levels:
            rows.append((seed, int(n), cube_cover_count(f, chart, a, int(n))))
    counts = np.array([[r[2] for r in rows if r[1] == n] for n in levels], dtype=float)
    mean = counts.mean(axis=1)
    est = fit_dimension(mean, levels, window=(int(levels[0]), int(levels[-1])))
    summary = {"levels": levels.tolist(), "mean_counts": mean.tolist(), "exponent_per_doubling": est.slope,
               "tolerance": cfg.tol}
    verdict = "pass" if est.slope < cfg.tol else "finding"
    return Outcome(verdict, summary, {"cubecover": (["seed", "n", "cubes"], rows)},
                   [f"count growth {est.slope:.3f} log2-units per level"])


EXPERIMENT_FUNCS: dict[str, Callable[[RunConfig, int], Outcome]] = {
    "covariance": _covariance,
    "ehm": _ehm,
    "projection": _projection,
    "goodsquares": _goodsquares,
    "doubling": _doubling,
    "surjectivity": _surjectivity,
    "localtime-x": _localtime,
    "localtime-fiber": _localtime,
    "lemma1": _lemma1,
    "visits": _visits,
    "davis": _davis,
    "gamma": _gamma,
    "cubecover": _cubecover,
}


# ---------------------------------------------------------------- runner


def _stamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def run(cfg: RunConfig, out_dir=None, workers: int | None = None, dry_run: bool = False) -> tuple[dict, int]:
    """Run ``cfg``; return the manifest and the process exit code."""
    out = Path(out_dir or cfg.out or f"runs/{cfg.experiment}")
    out.mkdir(parents=True, exist_ok=True)
    workers = workers or cfg.threads or 1
    manifest = {
        "tool": "sheetzero",
        "version": __version__,
        "config": _jsonable(cfg.echo()),
        "seeds": list(cfg.seeds),
        "started": _stamp(),
        "artifacts": [],
    }
    if dry_run:
        manifest.update(finished=_stamp(), verdict="pass", dry_run=True, summary={}, findings=[])
        write_manifest(out, manifest)
        return manifest, 0
    outcome = EXPERIMENT_FUNCS[cfg.experiment](cfg, workers)
    for name, (header, rows) in outcome.tables.items():
        data = csv_bytes(header, rows)
        path = out / f"{name}.csv"
        try:
            path.write_bytes(data)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        manifest["artifacts"].append({"path": path.name, "sha256": sha256(data), "rows": len(rows)})
    manifest.update(
        finished=_stamp(),
        verdict=outcome.verdict,
        summary=_jsonable(outcome.summary),
        findings=outcome.findings,
    )
    write_manifest(out, manifest)
    return manifest, EXIT_CODES[outcome.verdict]


def write_manifest(out: Path, manifest: dict) -> Path:
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def verify_manifest(out_dir) -> tuple[dict, list[str]]:
    """Load a manifest and list the artifacts whose digest no longer matches."""
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    bad = []
    for art in manifest.get("artifacts", []):
        p = out / art["path"]
        if not p.exists() or sha256(p.read_bytes()) != art["sha256"]:
            bad.append(art["path"])
    return manifest, bad

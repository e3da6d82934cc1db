"""Command-line front end.

    msalab <subcommand> --config run.json [--out DIR] [--threads N] [--seed-override S]

``--config builtin:NAME`` loads a configuration bundled with the package
(``builtin:demo_classify``).  Outputs go to ``--out``, else to $MSALAB_OUT, else to ./msalab_out.  Each
run writes resolved_config.json and run_info.json (version, seed) next to
its CSV/JSON artifacts.  Exit status: 0 success, 1 invalid configuration,
2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import subprocess
import sys
from importlib import resources
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .dynamics import div_certificate, usr_certificate
from .lattice import Cube, ScaleSchedule
from .msa import ClassificationConfig, MsaState, classify_cube
from .operator import ResonantEnergyError, SpectralError, gri_residual
from .randelette import (ThetaSample, hull_eval, hull_gradient, lvb_experiment, overlap_count,
                         randelette_eval)
from .stats import (ExperimentConfig, g_halving_check, localization_probability, minami_scan,
                    sample_potentials, sample_spectra, spacing_histogram, tunneling_probability,
                    wegner_scan)

SUBCOMMANDS = ("dynamics-check", "ensemble-inspect", "classify", "wegner", "minami",
               "tunneling", "localize", "gri-check")

__all__ = ["main", "run", "SUBCOMMANDS"]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _write_csv(path: Path, header, rows):
    rows = sorted(rows, key=lambda r: tuple(_sort_key(v) for v in r))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _sort_key(v):
    if isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool):
        return (0, float(v), "")
    return (1, 0.0, str(v))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _write_json(path: Path, obj):
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def version_string() -> str:
    """git-describe-style identifier: v<version>[-g<commit>][-dirty]."""
    base = f"v{__version__}"
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--abbrev=12"], cwd=here,
                             capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return base
    tag = out.stdout.strip()
    return f"{base}-g{tag}" if out.returncode == 0 and tag else base


def _experiment(cfg: RunConfig, threads: int, grid=None) -> ExperimentConfig:
    ex = cfg.experiment
    return ExperimentConfig(ens=cfg.ensemble_obj(), freqs=cfg.frequencies(), L=ex["L"], g=tuple(cfg.g_list),
                            samples=ex["samples"], seed_base=cfg.ensemble["seed"], E=ex["E"],
                            grid=tuple(ex["grid"] if grid is None else grid), J=ex["J"], threads=threads)


# ---------------------------------------------------------------------------
# subcommands


def _dynamics_check(cfg: RunConfig, out: Path, threads: int):
    fm = cfg.frequencies()
    dyn = cfg.dynamics
    usr = usr_certificate(fm, dyn["usr_A"], dyn["usr_R"])
    div = div_certificate(fm, dyn["div_R"], dyn["div_trials"], rng_seed=cfg.ensemble["seed"])
    _write_json(out / "dynamics.json", {
        "frequencies": fm.to_strings(),
        "usr": {"A": usr.A, "R": usr.R, "c_min": usr.c_min, "argmin": list(usr.argmin), "holds": usr.holds},
        "div": {"A_prime": div.A_prime, "C_prime": div.C_prime, "R": div.R, "max_ratio": div.max_ratio,
                "trials": div.trials, "accepted": div.accepted},
    })


def _ensemble_inspect(cfg: RunConfig, out: Path, threads: int):
    ens = cfg.ensemble_obj()
    fm = cfg.frequencies()
    ex = cfg.experiment
    theta = ThetaSample(cfg.ensemble["seed"])
    npts = ex["hull_points"]
    if ens.nu == 1:
        grid = np.linspace(0.0, 1.0, npts, endpoint=False)[:, None]
    else:
        rng = np.random.default_rng(cfg.ensemble["seed"])
        grid = rng.random((npts, ens.nu))
    vals = np.atleast_1d(hull_eval(ens, theta, grid))
    grads = hull_gradient(ens, theta, grid)
    _write_csv(out / "hull.csv", [f"omega_{i}" for i in range(ens.nu)] + ["value"],
               [tuple(p) + (v,) for p, v in zip(grid.tolist(), vals.tolist())])
    checks = {"tail_bound": ens.tail_bound(), "gradient_bound": ens.gradient_bound(),
              "max_abs_gradient": float(np.max(np.abs(grads))), "K_prime": ens.K_prime,
              "generations": {}}
    for n in range(min(ens.N_max, 12) + 1):
        oc = np.atleast_1d(overlap_count(ens, n, grid))
        ones = np.zeros(grid.shape[0], dtype=bool)
        for k in range(1, ens.K(n) + 1):
            ones |= np.atleast_1d(randelette_eval(ens, n, k, grid)) == 1.0
        checks["generations"][str(n)] = {"overlap_max": int(oc.max()), "overlap_min": int(oc.min()),
                                         "covered": bool(ones.all())}
    _write_json(out / "ensemble.json", checks)
    if fm.d == 1:
        cube = Cube((0,), ex["lvb_radius"])
        omega = np.random.default_rng(cfg.ensemble["seed"]).random(ens.nu)
        rows = []
        for x in cube.sites():
            rep = lvb_experiment(ens, fm, cube, x, omega, trials=ex["lvb_trials"], rng_seed=cfg.ensemble["seed"],
                                 theta=theta)
            rows.append((int(x[0]), rep.generation, rep.k, rep.amplitude, rep.slope, rep.frozen_ok,
                         rep.density_bound))
        _write_csv(out / "lvb.csv", ["site", "generation", "k", "amplitude", "slope", "frozen_ok",
                                     "density_bound"], rows)


def _schedule(cfg: RunConfig, g: float | None = None) -> ScaleSchedule:
    s = cfg.schedule
    return ScaleSchedule(s["L0"], s["g"] if g is None else g, cfg.dynamics["nu"])


def _classify_one(cfg: RunConfig, g: float, i: int, config: ClassificationConfig, host: Cube):
    ens, fm, ex = cfg.ensemble_obj(), cfg.frequencies(), cfg.experiment
    seed = cfg.ensemble["seed"] + i
    omega = np.random.default_rng(seed).random(fm.nu)
    st = MsaState.from_hull(ens, ThetaSample(seed), fm, omega, g)
    rep = classify_cube(host, config, st, ex["energies"], ex["include_spectral"])
    d = rep.to_dict()
    d["seed"] = seed
    row = (seed, ex["k"], g, all(rep.cnr), all(rep.ns), rep.tunneling, rep.multiresonant,
           rep.localized, max(rep.ns_lhs) if rep.ns_lhs else math.nan)
    return d, row


def _classify(cfg: RunConfig, out: Path, threads: int):
    ex = cfg.experiment
    tasks = []
    for g in cfg.g_list:
        config = ClassificationConfig(_schedule(cfg, g), cfg.schedule["m"], ex["k"])
        host = Cube((0,) * cfg.dynamics["d"], config.L)
        tasks.extend((g, i, config, host) for i in range(ex["samples"]))
    results = Parallel(n_jobs=threads, prefer="threads")(
        delayed(_classify_one)(cfg, *t) for t in tasks)
    reports = sorted((r[0] for r in results), key=lambda d: (d["g"], d["seed"]))
    _write_json(out / "reports.json", reports)
    _write_csv(out / "classify.csv", ["seed", "k", "g", "cnr", "ns", "tunneling", "multiresonant",
                                      "localized", "max_ns_lhs"], [r[1] for r in results])


def _require_grid(cfg: RunConfig):
    if not cfg.experiment["grid"]:
        raise ConfigError("experiment.grid", "must list at least two positive values")


def _wegner(cfg: RunConfig, out: Path, threads: int):
    _require_grid(cfg)
    exc = _experiment(cfg, threads)
    pots = sample_potentials(exc)
    rows, fits = [], {}
    for g in exc.g:
        fit = wegner_scan(exc, g, sample_spectra(exc, g, pots))
        fits[f"{g:.17g}"] = fit
        rows.extend((g,) + r for r in fit.rows())
    _write_csv(out / "wegner.csv", ["g", "s", "count", "n", "p", "ci_lo", "ci_hi"], rows)
    summary = {k: {"slope": f.slope, "slope_ci": list(f.slope_ci), "intercept": f.intercept, "used": f.used}
               for k, f in fits.items()}
    gs = sorted(exc.g)
    halving = {}
    for a in gs:
        if 2 * a in gs:
            h = g_halving_check(fits[f"{a:.17g}"], fits[f"{2 * a:.17g}"])
            halving[f"{a:.17g}"] = {"ratios": list(h.ratios), "tolerance": list(h.tolerance), "passed": h.passed}
    _write_json(out / "wegner_fit.json", {"E": exc.E, "fits": summary, "g_halving": halving})


def _minami(cfg: RunConfig, out: Path, threads: int):
    _require_grid(cfg)
    exc = _experiment(cfg, threads)
    pots = sample_potentials(exc)
    rows, summary = [], {}
    for g in exc.g:
        spec = sample_spectra(exc, g, pots)
        fit = minami_scan(exc, exc.J, g, spec)
        rows.extend((g, r[0], exc.J) + r[1:] for r in fit.rows())
        sp = spacing_histogram(spec, bins=cfg.experiment["bins"])
        summary[f"{g:.17g}"] = {"slope": fit.slope, "slope_ci": list(fit.slope_ci), "used": fit.used,
                                "degenerate_fraction": sp.degenerate_fraction,
                                "spacing_edges": sp.edges, "spacing_mass": sp.mass}
    _write_csv(out / "minami.csv", ["g", "interval_len", "J", "count", "n", "p", "ci_lo", "ci_hi"], rows)
    _write_json(out / "minami_fit.json", {"E": exc.E, "J": exc.J, "fits": summary})


def _prob(cfg: RunConfig, out: Path, threads: int, event: str):
    exc = _experiment(cfg, threads)
    k, L0, m = cfg.experiment["k"], cfg.schedule["L0"], cfg.schedule["m"]
    rows = []
    for g in exc.g:
        if event == "tunneling":
            pr, _ = tunneling_probability(exc, L0, g, max(k, 1), m)
        else:
            pr, _ = localization_probability(exc, L0, g, k, m)
        rows.append((g, max(k, 1) if event == "tunneling" else k, event, pr.count, pr.n, pr.p, pr.ci_lo, pr.ci_hi))
    _write_csv(out / "prob.csv", ["g", "k", "event", "count", "n", "p", "ci_lo", "ci_hi"], rows)


def _gri_check(cfg: RunConfig, out: Path, threads: int):
    ens, fm, ex = cfg.ensemble_obj(), cfg.frequencies(), cfg.experiment
    if fm.d != 1:
        raise ConfigError("dynamics.d", "gri-check supports d = 1")
    R, r = ex["gri_host_radius"], ex["gri_inner_radius"]
    if r >= R:
        raise ConfigError("experiment.gri_inner_radius", "must be smaller than gri_host_radius")
    rng = np.random.default_rng(cfg.ensemble["seed"])
    host = Cube((0,), R)
    rows = []
    for i in range(ex["gri_instances"]):
        seed = cfg.ensemble["seed"] + i
        omega = np.random.default_rng(seed).random(fm.nu)
        st = MsaState.from_hull(ens, ThetaSample(seed), fm, omega, cfg.schedule["g"])
        c = int(rng.integers(-R + r, R - r + 1))
        inner = Cube((c,), r)
        u = int(rng.integers(c - r, c + r + 1))
        outside = [int(s) for s in host.sites()[:, 0] if abs(s - c) > r]
        y = outside[int(rng.integers(len(outside)))]
        hs, ins = st.spectrum(host), st.spectrum(inner)
        ev = np.sort(np.concatenate([hs.eigenvalues, ins.eigenvalues]))
        # host and inner eigenvalues nearly coincide at large g; use gaps that
        # are resolvable relative to the spectral scale
        wide = np.nonzero(np.diff(ev) > 1e-8 * max(1.0, float(np.max(np.abs(ev)))))[0]
        if wide.size == 0:
            raise ResonantEnergyError("no resolvable spectral gap for the identity check")
        j = int(wide[int(rng.integers(wide.size))])
        E = 0.5 * (ev[j] + ev[j + 1])
        res = gri_residual(host, inner, st.potential, E, (u,), (y,), hs, ins)
        rows.append((i, E, c, u, y, res))
    _write_csv(out / "gri.csv", ["instance", "E", "inner_center", "u", "y", "residual"], rows)
    _write_json(out / "gri_summary.json", {"instances": len(rows), "max_residual": max(r[-1] for r in rows)})


_HANDLERS = {
    "dynamics-check": _dynamics_check,
    "ensemble-inspect": _ensemble_inspect,
    "classify": _classify,
    "wegner": _wegner,
    "minami": _minami,
    "tunneling": lambda c, o, t: _prob(c, o, t, "tunneling"),
    "localize": lambda c, o, t: _prob(c, o, t, "non_localized"),
    "gri-check": _gri_check,
}


def config_source(config_path):
    """Filesystem path for ``config_path``, resolving ``builtin:NAME`` to a bundled file."""
    text = str(config_path)
    if text.startswith("builtin:"):
        name = text[len("builtin:"):]
        ref = resources.files("msalab") / "configs" / f"{name}.json"
        if not ref.is_file():
            raise ConfigError("--config", f"no bundled configuration named {name!r}")
        return Path(str(ref))
    return Path(text)


def run(subcommand: str, config_path, out_dir, threads: int | None = None, seed_override: int | None = None) -> int:
    """Execute one subcommand; returns the exit code."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out}: {exc.strerror}", file=sys.stderr)
        return 1
    threads = threads or os.cpu_count() or 1
    try:
        cfg = load_config(config_source(config_path))
        if seed_override is not None:
            if seed_override < 0:
                raise ConfigError("--seed-override", "must be >= 0")
            ens = dict(cfg.ensemble)
            ens["seed"] = int(seed_override)
            cfg = RunConfig(ens, cfg.dynamics, cfg.schedule, cfg.experiment)
        _write_json(out / "resolved_config.json", cfg.to_dict())
        _write_json(out / "run_info.json", {"subcommand": subcommand, "version": version_string(),
                                            "seed": cfg.ensemble["seed"]})
        _HANDLERS[subcommand](cfg, out, threads)
    except ConfigError as exc:
        _write_json(out / "error.json", {"kind": "validation", "field": exc.path, "message": exc.message})
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ResonantEnergyError, SpectralError, ArithmeticError, np.linalg.LinAlgError) as exc:
        _write_json(out / "error.json", {"kind": "numerical", "message": str(exc)})
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msalab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"msalab {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--out", default=None, help="output directory (default: $MSALAB_OUT or ./msalab_out)")
        sp.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        sp.add_argument("--seed-override", type=int, default=None, help="replace ensemble.seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out or os.environ.get("MSALAB_OUT") or "msalab_out"
    return run(args.subcommand, args.config, out, args.threads, args.seed_override)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

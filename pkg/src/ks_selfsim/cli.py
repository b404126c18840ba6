"""Command-line front end.

Usage::

    ks-selfsim stationary --M 6.28 --N 2048 --out run/
    ks-selfsim spectrum --M 6.28 --kmax 3
    ks-selfsim inequalities --M 6.28 --corpus-seed 7
    ks-selfsim evolve --M 4 --T 6 --dt 0.25
    ks-selfsim sweep --M 1,3.14159,6.28,12.57,7.5

Settings may also come from a flat ``key = value`` file (``--config``);
command-line flags override it. Exit codes: 0 success, 2 invalid
configuration, 3 solver non-convergence, 4 a checked inequality or tolerance
was violated (the data are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import corpus, evolution, functionals, spectral, stationary
from .errors import (ConvergenceError, DiscretizationError, DomainError, FitError,
                     IntegrationError, KSError, ParameterError, ResolutionError)
from .radial_core import ModeField, make_grid, poisson_mode

log = logging.getLogger("ks_selfsim")

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_VIOLATION = 0, 2, 3, 4
COMMANDS = ("stationary", "spectrum", "inequalities", "evolve", "sweep")
THREADS_ENV = "KS_SELFSIM_THREADS"
SUPERCRITICAL_MASS = 10.0 * math.pi

# acceptance criterion id -> commands whose checks measure it
CRITERIA = {
    1: ("stationary", "sweep"),
    2: ("stationary",),
    3: ("inequalities",),
    4: ("inequalities",),
    5: ("spectrum", "sweep"),
    6: ("spectrum", "sweep"),
    7: ("evolve",),
    8: ("evolve",),
    9: ("inequalities",),
    10: ("inequalities",),
}


class ConfigError(KSError, ValueError):
    pass


@dataclass
class RunConfig:
    command: str = "stationary"
    M: list = field(default_factory=lambda: [2.0 * math.pi])
    N: int = 2048
    R_max: float = 16.0
    stretch: float = 0.0
    tol: float = 1e-10
    k_max: int = 3
    T: float = 6.0
    dt: float = 0.25
    dM: float | None = None
    corpus_seed: int = 7
    corpus_size: int = 100
    out: str = "."
    lambdas: list = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0, 16.0])

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; expected one of {COMMANDS}")
        if not self.M:
            raise ConfigError("empty mass list")
        if self.command != "sweep" and len(self.M) != 1:
            raise ConfigError(f"command {self.command!r} takes a single mass")
        for M in self.M:
            if not (math.isfinite(M) and 0.0 < M < stationary.CRITICAL_MASS):
                raise ConfigError(
                    f"mass M={M:g} is not subcritical: the threshold is 8 pi = "
                    f"{stationary.CRITICAL_MASS:.6f}, above which solutions blow up in finite time")
        if self.N < 64 or self.N > 8192 or self.N & (self.N - 1):
            raise ConfigError(f"N={self.N} must be a power of two between 64 and 8192")
        if not self.R_max > 0 or not 0.0 <= self.stretch <= 1.0:
            raise ConfigError("R_max must be positive and stretch in [0, 1]")
        if not self.tol > 0 or self.k_max < 1 or self.corpus_size < 1:
            raise ConfigError("tol must be positive, kmax >= 1, corpus size >= 1")
        if not (self.dt > 0 and self.T > 0) or abs(round(self.T / self.dt) * self.dt - self.T) > 1e-9 * self.T:
            raise ConfigError("T and dt must be positive with T a multiple of dt")
        if self.dM is not None:
            lim = min(min(self.M), stationary.CRITICAL_MASS - max(self.M)) / 10.0
            if not 0.0 < self.dM < lim:
                raise ConfigError(f"dM={self.dM} must lie in (0, min(M, 8 pi - M)/10)")
        if not self.lambdas or any(not lam > 0 for lam in self.lambdas):
            raise ConfigError("lambdas must be a nonempty list of positive numbers")


# ---------------------------------------------------------------- config parsing

_KEYS = {
    "command": "command", "m": "M", "mass": "M", "grid.n": "N", "n": "N",
    "grid.r_max": "R_max", "grid.rmax": "R_max", "rmax": "R_max", "r_max": "R_max",
    "grid.stretch": "stretch", "stretch": "stretch", "tol": "tol",
    "kmax": "k_max", "k_max": "k_max", "spectrum.kmax": "k_max", "t": "T",
    "evolve.t": "T", "dt": "dt", "evolve.dt": "dt", "dm": "dM",
    "corpus.seed": "corpus_seed", "corpus_seed": "corpus_seed",
    "corpus.size": "corpus_size", "corpus_size": "corpus_size", "out": "out",
    "lambdas": "lambdas", "scaling.lambdas": "lambdas",
}


def _float_list(text):
    try:
        return [float(x) for x in str(text).replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse number list {text!r}") from exc


def _coerce(name, value):
    try:
        if name in ("M", "lambdas"):
            return _float_list(value)
        if name in ("N", "k_max", "corpus_seed", "corpus_size"):
            return int(value)
        if name in ("R_max", "stretch", "tol", "T", "dt", "dM"):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"bad value {value!r} for {name}") from exc
    return str(value)


def parse_config_text(text):
    """Parse ``key = value`` lines; ``#`` starts a comment; keys may be dotted."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        name = _KEYS.get(key.lower())
        if name is None:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        out[name] = _coerce(name, value)
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="ks-selfsim",
                                description="Stationary states, spectra, inequalities and "
                                            "decay rates of the rescaled Keller-Segel system")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--M", help="mass (comma-separated list for sweep)")
    p.add_argument("--N", type=int, help="grid nodes (power of two, 64..8192)")
    p.add_argument("--rmax", type=float, help="outer radius")
    p.add_argument("--tol", type=float, help="stationary solver tolerance")
    p.add_argument("--kmax", type=int, help="largest angular mode")
    p.add_argument("--T", type=float, help="final time of evolutions")
    p.add_argument("--dt", type=float, help="trace sampling interval")
    p.add_argument("--dM", type=float, help="mass step for d/dM derivatives")
    p.add_argument("--corpus-seed", type=int, help="seed of the test-function corpus")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args):
    values = {}
    if args.config:
        try:
            values.update(parse_config_text(Path(args.config).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
    flags = {"M": args.M, "N": args.N, "R_max": args.rmax, "tol": args.tol,
             "k_max": args.kmax, "T": args.T, "dt": args.dt, "dM": args.dM,
             "corpus_seed": args.corpus_seed, "out": args.out}
    for name, v in flags.items():
        if v is not None:
            values[name] = _coerce(name, v)
    values["command"] = args.command
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- report

class Report:
    def __init__(self, cfg):
        self.cfg = cfg
        self.checks = []
        self.files = []
        self.measurements = {}

    def check(self, ident, criterion, value, tolerance, passed, **extra):
        self.checks.append({"id": ident, "criterion": criterion, "value": _jsonable(value),
                            "tolerance": tolerance, "passed": bool(passed), **extra})
        return passed

    def add_file(self, path):
        self.files.append(Path(path).name)

    @property
    def ok(self):
        return all(c["passed"] for c in self.checks)

    def acceptance(self):
        out = {}
        for cid, cmds in CRITERIA.items():
            mine = [c for c in self.checks if c["criterion"] == cid]
            if mine:
                out[str(cid)] = {"status": "pass" if all(c["passed"] for c in mine) else "fail",
                                 "checks": [c["id"] for c in mine]}
            else:
                out[str(cid)] = {"status": "not_run",
                                 "reason": f"measured by: {', '.join(cmds)}"}
        return out

    def write(self, outdir, exit_code, error=None):
        data = {
            "config": _jsonable(asdict(self.cfg)),
            "checks": self.checks,
            "acceptance": self.acceptance(),
            "measurements": _jsonable(self.measurements),
            "files": sorted(set(self.files + ["report.json"])),
            "status": "pass" if self.ok and error is None else "fail",
            "exit_code": exit_code,
        }
        if error is not None:
            data["error"] = error
        path = Path(outdir) / "report.json"
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _threads():
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV}={raw!r} is not an integer") from exc
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1")
    return n


# ---------------------------------------------------------------- pipelines

def _state(cfg, M, N=None):
    grid = make_grid(N or cfg.N, cfg.R_max, cfg.stretch)
    st = stationary.solve_stationary(M, grid, tol=cfg.tol)
    if cfg.dM is not None:
        stationary.set_default_dM(st, cfg.dM)
    return st


def _stationary_checks(rep, st, prefix=""):
    mass = float(np.dot(st.grid.weights, st.n.values))
    rep.check(prefix + "stationary_residual", 1, st.residual, 1e-8, st.residual <= 1e-8)
    rep.check(prefix + "stationary_mass_error", 1, abs(mass - st.M) / st.M, 1e-10,
              abs(mass - st.M) <= 1e-10 * st.M)


def run_stationary(cfg, rep, outdir):
    st = _state(cfg, cfg.M[0])
    modes = stationary.special_modes(st)
    path = outdir / "stationary.csv"
    stationary.stationary_to_csv(st, path, modes)
    rep.add_file(path)
    _stationary_checks(rep, st)
    rep.check("f00_mass", 1, modes.f00_mass, 1e-4, abs(modes.f00_mass - 1.0) <= 1e-4)
    # Green operator against the closed form for M mu (truncated-tail constant included)
    grid = st.grid
    r = grid.nodes
    M = st.M
    mu = 1.0 / (math.pi * (1.0 + r * r) ** 2)
    pot = poisson_mode(ModeField(grid, 0, M * mu)).values
    R = grid.r_max
    tail = (2.0 * math.log(R) / (1.0 + R * R) + math.log1p(R ** -2)) / (4.0 * math.pi)
    exact = M / (8.0 * math.pi) * (np.log(mu) + math.log(math.pi)) + M * tail
    err = float(np.max(np.abs(pot - exact)))
    rep.check("green_closed_form", 2, err, 1e-6 * max(1.0, M) if grid.n >= 4096 else 1e-4 * max(1.0, M),
              err <= (1e-6 if grid.n >= 4096 else 1e-4) * max(1.0, M))
    rep.measurements.update(M=M, n0=float(st.n.values[0]), log_Z=st.log_z,
                            iterations=st.iterations, laplacian_residual=st.laplacian_residual,
                            kappa0=modes.kappa0,
                            eigen_residuals=spectral.special_mode_checks(st))


def _spectrum(st, k_max, n_eigs=10):
    results = []
    for k in range(k_max + 1):
        mats = spectral.assemble_mode(k, st)
        results.append(spectral.eigen_gap(mats, st, n_eigs=n_eigs))
    return results


def _spectrum_checks(rep, results, prefix=""):
    by_k = {r.k: r for r in results}
    rep.check(prefix + "kernel_angle", 5, by_k[0].kernel_angle, 1e-2, by_k[0].kernel_angle <= 1e-2)
    lam1 = float(by_k[1].eigenvalues[0])
    lam0 = float(by_k[0].eigenvalues[0])
    rep.check(prefix + "lambda_min_k1", 5, lam1, 1e-2, abs(lam1 - 1.0) <= 1e-2)
    rep.check(prefix + "lambda_min_k0", 5, lam0, 1e-2, abs(lam0 - 2.0) <= 1e-2)
    lo = min(float(r.eigenvalues[0]) for r in results)
    rep.check(prefix + "gap_all_modes", 6, lo, 1e-2, lo >= 1.0 - 1e-2)
    rep.check(prefix + "gap_radial", 6, lam0, 1e-2, lam0 >= 2.0 - 1e-2)
    kappa = max(r.kappa for r in results)
    rep.check(prefix + "kappa_gt_1", 6, kappa, 0.0, kappa > 1.0)
    return lam0, lam1, kappa


def run_spectrum(cfg, rep, outdir):
    st = _state(cfg, cfg.M[0])
    results = _spectrum(st, cfg.k_max)
    p1 = outdir / "spectrum.csv"
    spectral.spectrum_to_csv(results, p1)
    p2 = outdir / "kappa.csv"
    spectral.kappa_to_csv([(r.k, r.kappa, st.grid.n) for r in results], p2)
    rep.add_file(p1)
    rep.add_file(p2)
    _spectrum_checks(rep, results)
    rep.measurements.update(
        M=st.M, asym_Q2={str(r.k): r.extra["asym_Q2"] for r in results},
        cumulated_cross_check=[float(x) for x in spectral.cumulated_spectrum(st)],
        eigen_residuals=spectral.special_mode_checks(st))


def _deficit_rows(cfg, st):
    grid = st.grid
    rows = []
    phis = corpus.phi_corpus(grid, cfg.corpus_seed, cfg.corpus_size, st)
    for ident, phi in phis:
        rows.append((ident, functionals.onofri_deficit(phi, st)))
        rows.append((ident, functionals.onofri_deficit(phi, "classical")))
        if isinstance(phi, ModeField) and phi.k == 0:
            rows.append((ident, functionals.legendre_gap(phi, st)))
    for ident, n in corpus.density_corpus(grid, st.M, cfg.corpus_seed, cfg.corpus_size):
        rows.append((ident, functionals.loghls_deficit(n)))
        rows.append((ident, functionals.free_energy_deficit(n, st)))
    f00 = stationary.zero_mode(st)
    for k in range(cfg.k_max + 1):
        for ident, f in corpus.perturbation_corpus(grid, cfg.corpus_seed, 10, k):
            f = functionals.project_out_zero_mode(f, f00, st)
            a = functionals.q1(f, st)
            b = functionals.q2(f, st)
            rows.append((ident, functionals.DeficitReport.make("q1_nonneg", 0.0, a, k=k)))
            factor = 2.0 if k == 0 else 1.0
            rows.append((ident, functionals.DeficitReport.make("q2_gap", factor * a, b, k=k)))
    return rows


def run_inequalities(cfg, rep, outdir):
    st = _state(cfg, cfg.M[0])
    rows = _deficit_rows(cfg, st)
    path = outdir / "deficits.csv"
    functionals.deficits_to_csv(rows, path)
    rep.add_file(path)
    worst = {}
    for _, d in rows:
        rel = d.deficit / d.scale
        worst[d.inequality_id] = min(worst.get(d.inequality_id, math.inf), rel)
    crit = {"loghls": 3, "loghls_nm": 3, "onofri_new": 4, "onofri_classical": 4,
            "duality": 10, "q1_nonneg": 6, "q2_gap": 6}
    for ident, val in sorted(worst.items()):
        rep.check(f"deficit_{ident}", crit[ident], val, -1e-8, val >= -1e-8)
    fen = max(d.inputs.get("fenchel", 0.0) / d.scale for _, d in rows if d.inequality_id == "duality")
    rep.check("fenchel_equality", 10, fen, 1e-8, fen <= 1e-8)
    # equality case of log-HLS at M mu and its dilation
    grid = st.grid
    r = grid.nodes
    for lam in (1.0, 2.0):
        n = ModeField(grid, 0, lam ** 2 / (math.pi * (1.0 + (lam * r) ** 2) ** 2))
        d = functionals.loghls_deficit(n)
        corr = functionals.loghls_truncation_correction(grid.r_max, lam)
        val = abs(d.deficit - corr)
        rep.check(f"loghls_equality_lambda{lam:g}", 3, val, 1e-5, val <= 1e-5)
    # Onofri: zero at constants, epsilon expansion vs the Poincare form
    const = ModeField(grid, 0, np.full(grid.n, 0.7))
    z = functionals.onofri_deficit(const, st).deficit
    rep.check("onofri_constant", 4, abs(z), 1e-10, abs(z) <= 1e-10)
    psi = ModeField(grid, 0, np.exp(-0.5 * r * r) * (1.0 + 0.3 * r * r))
    eps = 1e-3
    dd = functionals.onofri_deficit(psi * eps, st).deficit
    pp = functionals.poincare_deficit(psi, st).deficit
    ratio = dd / (eps * eps * pp / (2.0 * st.M))
    rep.check("onofri_expansion", 4, ratio, 1e-2, abs(ratio - 1.0) <= 1e-2)
    # supercritical mass: free energy unbounded below along dilations
    # width R_max / 8 keeps the default dilations resolved from N = 1024 up
    sig = grid.r_max / 8.0
    g_sup = np.exp(-0.5 * (r / sig) ** 2)
    n_sup = ModeField(grid, 0, SUPERCRITICAL_MASS * g_sup / float(np.dot(grid.weights, g_sup)))
    lams = sorted(set([1.0] + list(cfg.lambdas)))
    F = functionals.scaling_family_energy(n_sup, lams)
    dec = bool(np.all(np.diff(F) < 0))
    rep.check("supercritical_decreasing", 9, float(np.max(np.diff(F))), 0.0, dec)
    rep.measurements.update(M=st.M, corpus_size=cfg.corpus_size, worst_relative_deficit=worst,
                            scaling_family={"lambdas": lams, "F": F})


def run_evolve(cfg, rep, outdir):
    st = _state(cfg, cfg.M[0])
    grid = st.grid
    r = grid.nodes
    g = np.exp(-0.5 * r * r)
    n0 = ModeField(grid, 0, st.M * g / float(np.dot(grid.weights, g)))
    tr = evolution.evolve_nonlinear(n0, st, cfg.T, cfg.dt)
    path = outdir / "trace.csv"
    evolution.trace_to_csv(tr, path)
    rep.add_file(path)
    modes = stationary.special_modes(st)
    lin1 = evolution.evolve_linearized_mode(modes.f1, st, cfg.T, cfg.dt)
    lin0 = evolution.evolve_linearized_mode(modes.f01, st, cfg.T, cfg.dt)
    window = (2.0, min(6.0, cfg.T))
    fits = {}
    for name, trace, obs, crit in (("nonlinear.l1_dist", tr, "l1_dist", 8),
                                   ("nonlinear.q1", tr, "q1", 8),
                                   ("nonlinear.free_energy", tr, "free_energy", 8),
                                   ("linear_k1.q1", lin1, "q1", 7),
                                   ("linear_k0.q1", lin0, "q1", 7)):
        try:
            f = evolution.fit_rate(trace, obs, window)
        except FitError as exc:
            rep.check(f"rate_fit_{name}", crit, str(exc), None, False)
            continue
        fits[name] = evolution.RateFit(f.rate, f.window, f.r2, name, f.samples)
    path = outdir / "rates.csv"
    evolution.rates_to_csv(list(fits.values()), path)
    rep.add_file(path)
    drift = float(np.max(np.abs(tr.mass - tr.mass[0])) / tr.mass[0])
    rep.check("mass_drift", 8, drift, 1e-8, drift <= 1e-8)
    inc = tr.diagnostics["max_free_energy_increase"]
    rep.check("free_energy_monotone", 8, inc, 1e-10, inc <= 1e-10)
    nan = float("nan")
    l1 = fits["nonlinear.l1_dist"].rate if "nonlinear.l1_dist" in fits else nan
    r1 = fits["linear_k1.q1"].rate if "linear_k1.q1" in fits else nan
    r0 = fits["linear_k0.q1"].rate if "linear_k0.q1" in fits else nan
    rep.check("l1_rate", 8, l1, 1.0, l1 >= 1.0)
    rep.check("linear_k1_q1_rate", 7, r1, 0.1, abs(r1 - 2.0) <= 0.1)
    rep.check("linear_k0_q1_rate", 7, r0, 0.1, r0 >= 3.9)
    rep.measurements.update(M=st.M, rates={k: f.rate for k, f in fits.items()},
                            nonlinear_diagnostics=tr.diagnostics)


def _sweep_unit(cfg, M):
    st = _state(cfg, M)
    results = _spectrum(st, max(1, min(cfg.k_max, 3)), n_eigs=3)
    return st, results


def run_sweep(cfg, rep, outdir):
    workers = min(_threads(), len(cfg.M))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        units = list(pool.map(lambda M: _sweep_unit(cfg, M), cfg.M))
    rows = []
    for M, (st, results) in zip(cfg.M, units):
        tag = f"M={M:g}:"
        _stationary_checks(rep, st, tag)
        lam0, lam1, kappa = _spectrum_checks(rep, results, tag)
        rows.append((M, float(st.n.values[0]), lam0, lam1, kappa))
    path = outdir / "sweep.csv"
    with open(path, "w", newline="") as fh:
        fh.write("M,n0,lambda_k0,lambda_k1,kappa\r\n")
        for row in rows:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\r\n")
    rep.add_file(path)
    rep.measurements.update(threads=workers)


PIPELINES = {"stationary": run_stationary, "spectrum": run_spectrum,
             "inequalities": run_inequalities, "evolve": run_evolve, "sweep": run_sweep}


def run(cfg):
    """Execute ``cfg`` and return ``(report, exit_code)``."""
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    rep = Report(cfg)
    error = None
    try:
        PIPELINES[cfg.command](cfg, rep, outdir)
        code = EXIT_OK if rep.ok else EXIT_VIOLATION
    except ConvergenceError as exc:
        code, error = EXIT_CONVERGENCE, str(exc)
    except (ParameterError, DomainError, ResolutionError) as exc:
        code, error = EXIT_CONFIG, str(exc)
    except (DiscretizationError, IntegrationError, FitError) as exc:
        code, error = EXIT_VIOLATION, str(exc)
    rep.write(outdir, code, error)
    return rep, code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if cfg.command == "sweep":
            _threads()
    except (ConfigError, KSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rep, code = run(cfg)
    for c in rep.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['id']} = {c['value']}")
    if code == EXIT_CONVERGENCE:
        print("error: solver did not converge (see report.json)", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

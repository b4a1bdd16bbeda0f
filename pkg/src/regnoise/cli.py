"""Command-line experiment driver."""
from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import formats
from .averaging import SpectralDrift, average, holder_in_time_norm
from .gaussmodels import FactorizationError, GaussianModel, lnd_profile, sample
from .grids import FrequencyGrid, time_grid
from .occupation import holder_exponent, local_time, occupation_spectrum
from .sewing import SewingDivergence, stochastic_sewing_check
from .yode import BoxError, ContractionError, NonlinearField, SolveConfig, classical_solution, solve_flow

SEED_SCHEME = "path i uses numpy default_rng(base_seed + i)"


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- drift registry

def _classical(name, f, *derivs):
    return SpectralDrift.classical([f, *derivs], name=name)


DRIFTS = {
    "sin": lambda p: SpectralDrift.sine(p.get("freq", 1.0), p.get("amp", 1.0)),
    "cos": lambda p: SpectralDrift.cosine(p.get("freq", 1.0), p.get("amp", 1.0)),
    "constant": lambda p: SpectralDrift.constant(p.get("value", 1.0)),
    "gaussian": lambda p: SpectralDrift.gaussian(p.get("amp", 1.0), p.get("sigma", 1.0), p.get("center", 0.0)),
    "dirac": lambda p: SpectralDrift.dirac(p.get("center", 0.0)),
    "dirac_derivative": lambda p: SpectralDrift.dirac_derivative(p.get("axis", 0)),
    "neg_linear": lambda p: _classical("neg_linear", lambda x: -x, lambda x: -np.ones_like(x),
                                       lambda x: np.zeros_like(x), lambda x: np.zeros_like(x)),
    "square": lambda p: _classical("square", lambda x: x**2, lambda x: 2 * x, lambda x: 2 + 0 * x,
                                   lambda x: 0 * x),
    "classical_sin": lambda p: _classical("classical_sin", np.sin, np.cos, lambda x: -np.sin(x),
                                          lambda x: -np.cos(x)),
}


def make_drift(cfg) -> SpectralDrift:
    if cfg is None:
        raise UsageError("config field 'drift' is required")
    if isinstance(cfg, str):
        cfg = {"name": cfg}
    name = cfg.get("name")
    if name not in DRIFTS:
        raise UsageError(f"drift.name: unknown drift '{name}'; registered drifts: {', '.join(sorted(DRIFTS))}")
    b = DRIFTS[name](cfg)
    eps = float(cfg.get("eps", 0.0))
    return b.mollify(eps) if eps > 0 else b


def make_model(cfg) -> GaussianModel:
    if not isinstance(cfg, dict):
        raise UsageError("config field 'model' is required")
    try:
        return GaussianModel.from_dict(cfg)
    except (KeyError, TypeError) as e:
        raise UsageError(f"model: missing or malformed parameter {e}") from None
    except ValueError as e:
        raise UsageError(f"model: {e}") from None


def make_grid(cfg, d) -> FrequencyGrid:
    if not cfg:
        return FrequencyGrid.default(d)
    try:
        return FrequencyGrid(float(cfg["z_max"]), int(cfg["m"]), d)
    except (KeyError, ValueError) as e:
        raise UsageError(f"grid: {e}") from None


# ---------------------------------------------------------------- run bookkeeping

class Run:
    def __init__(self, command, cfg):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.get("out", f"out_{command}"))
        self.out.mkdir(parents=True, exist_ok=True)
        self.t0 = time.perf_counter()
        self.stages = {}
        self.outputs = []
        self.extra = {}

    def stage(self, name):
        run = self

        class _S:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *a):
                run.stages[name] = run.stages.get(name, 0.0) + time.perf_counter() - self.t
        return _S()

    def file(self, name) -> Path:
        p = self.out / name
        self.outputs.append(p)
        return p

    def write_json(self, name, obj):
        p = self.file(name)
        p.write_text(json.dumps(_finite(obj), indent=2, sort_keys=True, default=_jsonable) + "\n")
        return p

    def manifest(self, caught):
        man = {
            "command": self.command,
            "version": __version__,
            "config": self.cfg,
            # where results land and how many workers ran does not change them
            "config_sha256": formats.sha256_json({k: v for k, v in self.cfg.items() if k not in ("out", "workers")}),
            "seed_scheme": SEED_SCHEME,
            "wall_time": time.perf_counter() - self.t0,
            "stages": self.stages,
            "warnings": [{"category": w.category.__name__, "message": str(w.message)} for w in caught],
            "outputs": [{"file": p.name, "sha256": formats.sha256_file(p)} for p in self.outputs],
            **self.extra,
        }
        (self.out / "manifest.json").write_text(json.dumps(_finite(man), indent=2, sort_keys=True, default=_jsonable) + "\n")
        return man


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    return str(o)


# ---------------------------------------------------------------- commands

def cmd_simulate(run: Run):
    cfg = run.cfg
    model = make_model(cfg.get("model"))
    n, count, seed = int(cfg.get("n", 1024)), int(cfg.get("count", 1)), int(cfg.get("seed", 0))
    fmt = cfg.get("format", "csv")
    if fmt not in ("csv", "bin"):
        raise UsageError("format: expected 'csv' or 'bin'")
    with run.stage("sample"):
        for i in range(count):
            p = sample(model, n, seed + i)
            if fmt == "csv":
                formats.write_path_csv(run.file(f"path_{i:04d}.csv"), p)
            else:
                formats.write_path_bin(run.file(f"path_{i:04d}.bin"), p)


def _path_from(cfg):
    if "path" in cfg:
        src = cfg["path"]
        return formats.read_path_bin(src) if str(src).endswith(".bin") else formats.read_path_csv(src)
    model = make_model(cfg.get("model"))
    return sample(model, int(cfg.get("n", 4096)), int(cfg.get("seed", 0)))


def cmd_localtime(run: Run):
    cfg = run.cfg
    with run.stage("sample"):
        p = _path_from(cfg)
    grid = make_grid(cfg.get("grid"), p.d)
    s, t = cfg.get("window", [p.times[0], p.times[-1]])
    with run.stage("spectrum"):
        sp = occupation_spectrum(p, float(s), float(t), grid, cfg.get("quadrature", "left"))
        L = local_time(sp)
    zc = [f"z_{i + 1}" for i in range(p.d)]
    formats.write_csv(run.file("spectrum.csv"), zc + ["re", "im"],
                      np.column_stack([grid.points, sp.values.real.ravel(), sp.values.imag.ravel()]))
    xc = [f"x_{i + 1}" for i in range(p.d)]
    formats.write_csv(run.file("localtime.csv"), xc + ["L"], np.column_stack([grid.x_points, L.values.ravel()]))
    run.extra["mass"] = L.mass


def cmd_regularity(run: Run):
    cfg = run.cfg
    model = make_model(cfg.get("model"))
    count = int(cfg.get("paths", 200))
    if count < 20:
        raise UsageError(f"paths: exponent fits need at least 20 paths, got {count}")
    n, seed = int(cfg.get("n", 4096)), int(cfg.get("seed", 0))
    lams = cfg.get("lambdas", [cfg.get("lambda", 0.0)])
    j0, j1 = cfg.get("js", [2, 7])
    grid = make_grid(cfg.get("grid"), model.dimension)
    with run.stage("sample"):
        paths = [sample(model, n, seed + i) for i in range(count)]
    with run.stage("fit"):
        reps = holder_exponent(paths, list(lams), range(int(j0), int(j1) + 1), int(cfg.get("n_starts", 16)),
                               grid, cfg.get("quadrature", "left"), int(cfg.get("workers", 1)))
    run.write_json("report.json", [r.to_dict() for r in reps])
    for r in reps:
        formats.write_csv(run.file(f"scales_lambda_{r.lam:+.3f}.csv"), ["h", "sup_norm"], r.table())


def cmd_average(run: Run):
    cfg = run.cfg
    with run.stage("sample"):
        p = _path_from(cfg)
    grid = make_grid(cfg.get("grid"), p.d)
    drift = make_drift(cfg.get("drift"))
    if drift.is_classical:
        raise UsageError("drift: classical drifts cannot be averaged spectrally; pick a spectral drift")
    windows = cfg.get("windows", [[p.times[0], p.times[-1]]])
    k = int(cfg.get("k", 0))
    with run.stage("average"):
        specs = [occupation_spectrum(p, float(s), float(t), grid, cfg.get("quadrature", "left")) for s, t in windows]
        F = average(drift, specs, k)
    for l, J in enumerate(F.jets):
        formats.write_tensor_bin(run.file(f"jet_{l}.bin"), J, p.d)
    if len(windows) >= 3:
        rep = holder_in_time_norm(F, float(cfg.get("gamma", 0.6)))
        run.write_json("holder.json", {"value": rep.value, "window": rep.argmax_window})


def cmd_solve(run: Run):
    cfg = run.cfg
    with run.stage("sample"):
        p = _path_from(cfg)
    grid = make_grid(cfg.get("grid"), p.d)
    drift = make_drift(cfg.get("drift"))
    fcfg = cfg.get("field", {}) or {}
    scfg = cfg.get("solver", {}) or {}
    try:
        config = SolveConfig(**{k: _scalar(v) for k, v in scfg.items()})
    except (TypeError, ValueError) as e:
        raise UsageError(f"solver: {e}") from None
    k = int(cfg.get("k", 1))
    x = cfg.get("x", 0.0)
    with run.stage("field"):
        F = NonlinearField(drift, p, grid, fcfg.get("quadrature", "linear"),
                           float(fcfg.get("gamma", 0.75)), float(fcfg.get("delta", 2.0)))
    with run.stage("solve"):
        jet = solve_flow(F, np.atleast_1d(x), k, config)
    formats.write_jet_bin(run.file("flow.bin"), jet)
    run.extra["flow"] = jet.manifest()
    if cfg.get("oracle") == "classical":
        if drift.is_classical:
            f = drift.params["funcs"][0]
        elif drift.is_comb:
            f = drift.evaluate
        else:
            raise UsageError("oracle: the classical oracle needs a pointwise drift (comb or classical)")
        with run.stage("oracle"):
            ref = classical_solution(f, p, np.atleast_1d(x))
            err = np.abs(ref - jet.levels[0])
        formats.write_csv(run.file("oracle_errors.csv"), ["t", "abs_error"],
                          np.column_stack([p.times, err.max(axis=1)]))
        run.extra["oracle_max_error"] = float(np.nanmax(err))


def cmd_lnd(run: Run):
    cfg = run.cfg
    model = make_model(cfg.get("model"))
    n = int(cfg.get("n", 256))
    refine = int(cfg.get("refine", 4))
    if n < 2:
        raise UsageError("n: need at least 2 steps")
    if n * max(refine, 1) > 4096:
        raise UsageError("n: LND profiles are dense O(n^2) tables; need n * refine <= 4096")
    zetas = cfg.get("zetas", [cfg.get("zeta", 0.3)])
    tol = float(cfg.get("tol", 1e-6))
    out = []
    with run.stage("profile"):
        for z in zetas:
            rec = lnd_profile(model, time_grid(model.horizon, n), float(z), tol).to_dict()
            if refine > 1:
                fine = lnd_profile(model, time_grid(model.horizon, n * refine), float(z), tol)
                # a quotient that keeps shrinking under refinement has infimum 0 in the limit
                ratio = rec["near_diagonal"] / fine.near_diagonal
                rec.update({"refine": refine, "near_diagonal_refined": fine.near_diagonal,
                            "refinement_ratio": ratio,
                            "verdict": "LND" if fine.is_lnd and ratio < 1.1 else "non-LND"})
            out.append(rec)
    run.write_json("lnd.json", out)


def cmd_sewcheck(run: Run):
    cfg = run.cfg
    model = make_model(cfg.get("model"))
    n = int(cfg.get("n", 1024))
    if n & (n - 1) or n < 16:
        raise UsageError("n: need a power of two >= 16")
    zs = cfg.get("z", [8.0])
    with run.stage("check"):
        rep = stochastic_sewing_check(model, zs, n, int(cfg.get("batch", 100)), int(cfg.get("seed", 0)),
                                      cfg.get("js"), int(cfg.get("n_starts", 16)), float(cfg.get("lambda_prime", 1.0)),
                                      workers=int(cfg.get("workers", 1)))
    run.write_json("sewcheck.json", rep.to_dict())


COMMANDS = {
    "simulate": cmd_simulate, "localtime": cmd_localtime, "regularity": cmd_regularity,
    "average": cmd_average, "solve": cmd_solve, "lnd": cmd_lnd, "sewcheck": cmd_sewcheck,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="regnoise", description="Regularisation-by-noise experiments")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", nargs="?", help="YAML or JSON run config")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="base seed")
        sp.add_argument("--n", type=int, help="time steps")
        sp.add_argument("--workers", type=int, help="worker pool size")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry (dotted key, YAML value)")
        if name == "solve":
            sp.add_argument("--oracle", choices=["classical"])
    return ap


def resolve_config(args) -> dict:
    cfg = formats.load_config(args.config) if args.config else {}
    for key in ("out", "seed", "n", "workers", "oracle"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got '{item}'")
        k, v = item.split("=", 1)
        formats.set_path(cfg, k, _scalar(yaml.safe_load(v)))
    return cfg


def _scalar(v):
    # YAML 1.1 reads "1e3" as a string
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return v
    return v


def _finite(o):
    """Strict-JSON copy: non-finite floats become null."""
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    if isinstance(o, np.ndarray):
        return _finite(o.tolist())
    if isinstance(o, (float, np.floating)):
        return float(o) if np.isfinite(o) else None
    return o


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        run = Run(args.command, cfg)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            COMMANDS[args.command](run)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        run.manifest(caught)
    except (FactorizationError, SewingDivergence, ContractionError, BoxError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, TypeError, FileNotFoundError, yaml.YAMLError) as e:
        # bad config values surface from the modules as ValueError
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

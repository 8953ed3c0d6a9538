"""Command-line experiment runner.

Every artifact carries the resolved configuration and the library version, so
a run can be repeated from its own output.  Exit codes: 0 success, 2 bad
configuration, 3 verification failure, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .chains import ParameterError, finite_chain, instantaneous_chain
from .dynamics import Harmonic, Linear, ProcessSpec, State, simulate_ensemble, simulate_path

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_NUMERIC = 0, 2, 3, 4
STATIONARITY_TOL = 1e-8
PROCESSES = ("instantaneous-linear", "finite-linear", "instantaneous-harmonic")
COMMANDS = ("simulate", "invariant", "verify-stationarity", "tv-decay", "wasserstein-decay", "rates", "roots")

DEFAULTS = {
    "process": "instantaneous-linear",
    "omega": 1.0,
    "alpha": 1.0,
    "beta": 1.0,
    "c": 1.0,
    "mu": 1.0,
    "v": 2.0,
    "n": 10000,
    "t_grid": None,
    "horizon": 100.0,
    "seed": 0,
    "bin_width": None,
    "out": "out",
    "threads": 1,
    "x0": 0.0,
    "sigma0": None,
    "measure": None,
    "p": 1.0,
    "q": math.inf,
}


class ConfigError(ValueError):
    pass


class VerificationFailure(Exception):
    pass


def fmt(x) -> str:
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return fmt(x) if not math.isfinite(x) else float(fmt(x))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def parse_grid(text):
    """'1,2,5' or 'start:stop:step' (inclusive stop) into a list of floats."""
    if text is None or isinstance(text, list):
        return text
    text = str(text).strip()
    if ":" in text:
        a, b, s = (float(t) for t in text.split(":"))
        if s <= 0:
            raise ConfigError("t-grid step must be positive")
        n = int(math.floor((b - a) / s + 1e-9)) + 1
        return [a + i * s for i in range(n)]
    return [float(t) for t in text.split(",") if t]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with configuration keys; flags override it")
    common.add_argument("--process", choices=PROCESSES)
    common.add_argument("--omega", type=float)
    common.add_argument("--alpha", type=float)
    common.add_argument("--beta", type=float)
    common.add_argument("--c", type=float)
    common.add_argument("--mu", type=float)
    common.add_argument("--v", type=float)
    common.add_argument("--n", type=int, help="number of replicas")
    common.add_argument("--t-grid", dest="t_grid", help="observation times: 'a,b,c' or 'start:stop:step'")
    common.add_argument("--horizon", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--bin-width", dest="bin_width", type=float)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int)
    common.add_argument("--x0", type=float, help="initial distance")
    common.add_argument("--sigma0", help="initial mode tag")
    common.add_argument("--measure", help="measure JSON to check (verify-stationarity)")
    common.add_argument("--p", type=float, help="Wasserstein order")
    common.add_argument("--q", type=float, help="moment order in the Wasserstein bound")
    parser = argparse.ArgumentParser(prog="jammed-rtp", description="Jammed run-and-tumble pair experiments")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file: {e}") from None
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for k in DEFAULTS:
        val = getattr(args, k, None)
        if val is not None:
            cfg[k] = val
    cfg["command"] = args.command
    cfg["t_grid"] = parse_grid(cfg["t_grid"])
    validate(cfg)
    return cfg


def validate(cfg: dict):
    if cfg["process"] not in PROCESSES:
        raise ConfigError(f"process must be one of {PROCESSES}")
    names = {"instantaneous-linear": ("omega", "c", "v"), "finite-linear": ("alpha", "beta", "c", "v"),
             "instantaneous-harmonic": ("omega", "mu", "v")}[cfg["process"]]
    for k in names:
        x = cfg[k]
        if not isinstance(x, (int, float)) or not math.isfinite(x) or x <= 0:
            raise ConfigError(f"{k} must be a positive number, got {x!r}")
    if cfg["process"] != "instantaneous-harmonic" and not cfg["v"] > cfg["c"]:
        raise ConfigError("linear potential requires v > c")
    if not isinstance(cfg["n"], int) or cfg["n"] < 1:
        raise ConfigError("n must be a positive integer")
    if not isinstance(cfg["seed"], int) or not 0 <= cfg["seed"] < 2**64:
        raise ConfigError("seed must be an integer in [0, 2^64)")
    if not cfg["horizon"] > 0:
        raise ConfigError("horizon must be positive")
    if cfg["t_grid"] is not None:
        g = cfg["t_grid"]
        if any(t < 0 for t in g) or any(b < a for a, b in zip(g, g[1:])):
            raise ConfigError("t-grid must be nonnegative and sorted")
    if cfg["bin_width"] is not None and not cfg["bin_width"] > 0:
        raise ConfigError("bin-width must be positive")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError("threads must be a positive integer")
    if cfg["x0"] < 0:
        raise ConfigError("x0 must be nonnegative")
    if not 1 <= cfg["p"] < cfg["q"]:
        raise ConfigError("need 1 <= p < q")


def make_spec(cfg: dict) -> ProcessSpec:
    proc = cfg["process"]
    try:
        if proc == "instantaneous-linear":
            return ProcessSpec(Linear(cfg["c"]), cfg["v"], instantaneous_chain(cfg["omega"]))
        if proc == "finite-linear":
            return ProcessSpec(Linear(cfg["c"]), cfg["v"], finite_chain(cfg["alpha"], cfg["beta"]))
        return ProcessSpec(Harmonic(cfg["mu"]), cfg["v"], instantaneous_chain(cfg["omega"]))
    except ParameterError as e:
        raise ConfigError(str(e)) from None


def initial_state(cfg: dict, spec: ProcessSpec) -> State:
    tag = cfg["sigma0"] or spec.chain.tags[0]
    if tag not in spec.chain.tags:
        raise ConfigError(f"sigma0 must be one of {spec.chain.tags}")
    return State(float(cfg["x0"]), tag)


def invariant_measure(cfg: dict):
    from .harmonic import harmonic_invariant
    from .measures import finite_linear, instantaneous_linear

    p = cfg["process"]
    if p == "instantaneous-linear":
        return instantaneous_linear(cfg["omega"], cfg["c"], cfg["v"])
    if p == "finite-linear":
        return finite_linear(cfg["alpha"], cfg["beta"], cfg["c"], cfg["v"])
    return harmonic_invariant(cfg["omega"], cfg["mu"], cfg["v"])


class Artifacts:
    """Writes files into the output directory and removes them all on failure."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.dir = Path(cfg["out"])
        self.written: list[Path] = []
        self.made_dir = False

    def open(self):
        if not self.dir.exists():
            self.dir.mkdir(parents=True)
            self.made_dir = True
        if not os.access(self.dir, os.W_OK):
            raise ConfigError(f"output directory {self.dir} is not writable")

    def _header(self) -> str:
        return f"# version: {__version__}\n# config: {json.dumps(_jsonable(self.cfg), sort_keys=True)}\n"

    def csv(self, name: str, columns, rows):
        path = self.dir / name
        self.written.append(path)
        with open(path, "w") as fh:
            fh.write(self._header())
            fh.write(",".join(columns) + "\n")
            for r in rows:
                fh.write(",".join(fmt(v) if isinstance(v, (float, np.floating, int, np.integer)) and not isinstance(v, bool) else str(v) for v in r) + "\n")
        return path

    def json(self, name: str, payload: dict):
        path = self.dir / name
        self.written.append(path)
        doc = {"version": __version__, "config": self.cfg, **payload}
        with open(path, "w") as fh:
            json.dump(_jsonable(doc), fh, indent=2)
            fh.write("\n")
        return path

    def rollback(self):
        for p in self.written:
            try:
                p.unlink()
            except FileNotFoundError:
                pass
        if self.made_dir:
            try:
                self.dir.rmdir()
            except OSError:
                pass


# subcommands


def cmd_simulate(cfg, art: Artifacts):
    spec = make_spec(cfg)
    init = initial_state(cfg, spec)
    tags = spec.chain.tags
    if cfg["t_grid"] is None:
        traj = simulate_path(spec, init, cfg["horizon"], cfg["seed"])
        rows = [(t, s.x, s.mode, kind) for t, s, kind in traj.events()]
        art.csv("path.csv", ["t", "x", "sigma", "event_kind"], rows)
        end = traj.end_state()
        art.json("summary.json", {"events": len(traj), "end_state": {"x": end.x, "sigma": end.mode}})
        return EXIT_OK
    snaps = simulate_ensemble(spec, init, cfg["t_grid"], cfg["n"], cfg["seed"], threads=cfg["threads"])
    rows = []
    for s in snaps:
        rows.extend((s.t, int(r), x, tags[k]) for r, x, k in zip(s.replicas, s.x, s.modes))
    art.csv("ensemble.csv", ["t", "replica", "x", "sigma"], rows)
    summary = [{"t": s.t, "mean_x": float(np.mean(s.x)), "atom_fraction": float(np.mean(s.x == 0.0))} for s in snaps]
    art.json("summary.json", {"snapshots": summary})
    return EXIT_OK


def cmd_invariant(cfg, art: Artifacts):
    m = invariant_measure(cfg)
    tags = m.tags
    art.json("measure.json", {"measure": json.loads(m.to_json()), "mass_by_mode": m.mass_by_mode(),
                              "total_mass": m.total_mass()})
    if cfg["process"] == "instantaneous-harmonic":
        xs = np.linspace(0.0, m.xmax, 202)[1:-1]
    else:
        xs = np.linspace(0.0, 10.0 / m.tail_rate(), 201)[1:]
    dens = np.stack([m.density(xs, k) for k in range(len(tags))], axis=1)
    art.csv("density.csv", ["x"] + [f"density_{t}" for t in tags], [(x, *d) for x, d in zip(xs, dens)])
    return EXIT_OK


def _load_measure(cfg):
    from .harmonic import HarmonicMeasure
    from .measures import MixtureMeasure

    if cfg["measure"] is None:
        return invariant_measure(cfg)
    try:
        text = Path(cfg["measure"]).read_text()
        doc = json.loads(text)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read measure file: {e}") from None
    if "measure" in doc:  # an artifact written by `invariant`
        doc = doc["measure"]
        text = json.dumps(doc)
    if doc.get("regime") == "harmonic":
        return HarmonicMeasure.from_json(text)
    return MixtureMeasure.from_json(text)


def cmd_verify(cfg, art: Artifacts):
    from .stationarity import residuals

    spec = make_spec(cfg)
    m = _load_measure(cfg)
    if tuple(m.tags) != spec.chain.tags:
        raise ConfigError(f"measure modes {tuple(m.tags)} do not match the process modes {spec.chain.tags}")
    res = residuals(m, spec)
    worst = max(abs(r) for r in res.values())
    art.csv("residuals.csv", ["test_function", "residual"], list(res.items()))
    ok = worst <= STATIONARITY_TOL
    art.json("verdict.json", {"max_abs_residual": worst, "tolerance": STATIONARITY_TOL, "pass": ok})
    print(f"max |int L f dpi| = {worst:.3e} ({'pass' if ok else 'FAIL'} at {STATIONARITY_TOL:g})")
    return EXIT_OK if ok else EXIT_VERIFY


def _bounds_payload(spec):
    from dataclasses import asdict

    from .rates import decay_bounds

    return asdict(decay_bounds(spec))


def cmd_tv_decay(cfg, art: Artifacts):
    from .couplings import coupled_ensemble
    from .distances import WindowError, default_bin_width, fit_rate, tv_floor, tv_to_analytic

    spec = make_spec(cfg)
    if not spec.is_linear:
        raise ConfigError("tv-decay needs a linear process; use wasserstein-decay for the harmonic one")
    grid = cfg["t_grid"] or [float(t) for t in range(2, 13)]
    init = initial_state(cfg, spec)
    m = invariant_measure(cfg)
    n = cfg["n"]
    rep = coupled_ensemble(spec, init, m, grid, n, cfg["seed"], check=False)
    p = rep.mismatch
    se = np.sqrt(p * (1 - p) / n)
    # histogram distance of the first copy alone, for comparison
    h = cfg["bin_width"] or default_bin_width(m)
    snaps = simulate_ensemble(spec, init, grid, n, cfg["seed"], threads=cfg["threads"])
    hist = [tv_to_analytic(s, m, h, bootstrap=50, seed=cfg["seed"]) for s in snaps] if n >= 1000 else []
    rows = [(t, v, s, "couplingUpper") for t, v, s in zip(grid, p, se)]
    rows += [(t, d.value, d.stderr, "tvHistogram") for t, d in zip(grid, hist)]
    art.csv("decay.csv", ["t", "estimate", "stderr", "kind"], rows)
    try:
        fit = fit_rate(grid, p, se).to_dict()
    except WindowError as e:
        fit = {"error": str(e)}
    floor = tv_floor(m, n, h, seed=cfg["seed"]).value if n >= 1000 else None
    art.json("fit.json", {"fit": fit, "estimator": "couplingUpper", "histogram_floor": floor})
    art.json("bounds.json", {"bounds": _bounds_payload(spec)})
    return EXIT_OK


def cmd_wasserstein_decay(cfg, art: Artifacts):
    from dataclasses import asdict

    from .distances import WindowError, fit_rate, mixed_distance_bracket
    from .rates import f_q_dirac, wasserstein_rate
    from .streams import TAG_AUX, Streams

    spec = make_spec(cfg)
    if spec.is_linear:
        raise ConfigError("wasserstein-decay needs the instantaneous-harmonic process")
    grid = cfg["t_grid"] or [1.0 + 0.25 * i for i in range(21)]
    init = initial_state(cfg, spec)
    m = invariant_measure(cfg)
    n, p = cfg["n"], cfg["p"]
    reps = np.arange(n, dtype=np.uint64)
    xb, kb = m.sample(Streams(cfg["seed"], reps, TAG_AUX))
    x2, k2 = m.sample(Streams(cfg["seed"] + 1, reps, TAG_AUX))
    _, floor = mixed_distance_bracket((x2, k2), (xb, kb), p, bootstrap=20, seed=cfg["seed"])
    snaps = simulate_ensemble(spec, init, grid, n, cfg["seed"], threads=cfg["threads"])
    rows, up, upse = [], [], []
    for s in snaps:
        lo, u = mixed_distance_bracket(s, (xb, kb), p, bootstrap=20, seed=cfg["seed"])
        rows += [(s.t, lo.value, lo.stderr, "mixedLower"), (s.t, u.value, u.stderr, "mixedUpper")]
        up.append(u.value)
        upse.append(u.stderr)
    art.csv("decay.csv", ["t", "estimate", "stderr", "kind"], rows)
    try:
        fit = fit_rate(grid, up, upse, floor=floor.value).to_dict()
    except WindowError as e:
        fit = {"error": str(e)}
    wr = wasserstein_rate(cfg["omega"], cfg["mu"], p, cfg["q"])
    F = f_q_dirac(init.x, cfg["v"], cfg["mu"])
    art.json("fit.json", {"fit": fit, "estimator": "mixedUpper", "floor": floor.value, "floor_stderr": floor.stderr})
    art.json("bounds.json", {"bounds": asdict(wr), "F_q": F, "prefactor": wr.prefactor(F, cfg["v"])})
    return EXIT_OK


def cmd_rates(cfg, art: Artifacts):
    from dataclasses import asdict

    from .rates import lezaud_bound, rate_function, wasserstein_rate

    spec = make_spec(cfg)
    rf = rate_function(spec.chain)
    us = np.linspace(-5.0, 5.0, 101)
    art.csv("lambda.csv", ["u", "Lambda"], [(u, rf.Lambda(u)) for u in us])
    Rs = np.linspace(0.0, 0.95, 20)
    if spec.chain.kind == "finite":
        a, b = spec.chain.params["alpha"], spec.chain.params["beta"]
        rows = [(R, rf.I(R), lezaud_bound(a, b, R)) for R in Rs]
    else:
        rows = [(R, rf.I(R), "") for R in Rs]
    art.csv("rate_function.csv", ["R", "I", "lezaud"], rows)
    if spec.is_linear:
        art.json("bounds.json", {"bounds": _bounds_payload(spec)})
    else:
        art.json("bounds.json", {"bounds": asdict(wasserstein_rate(cfg["omega"], cfg["mu"], cfg["p"], cfg["q"]))})
    return EXIT_OK


def cmd_roots(cfg, art: Artifacts):
    from .measures import finite_drifts, polynomials

    spec = make_spec(cfg)
    if not spec.is_linear:
        raise ConfigError("roots are defined for the linear processes")
    m = invariant_measure(cfg)
    c, v = cfg["c"], cfg["v"]
    drift = finite_drifts(c, v) if spec.chain.kind == "finite" else v * spec.chain.values - 2 * c
    terms = []
    for z, a in zip(m.rates, m.vectors):
        r = -z * np.diag(drift) @ a + spec.chain.Q.T @ a
        terms.append({"zeta": z, "eigenvector": a, "residual_max": float(np.max(np.abs(r))),
                      "residual_rel": float(np.max(np.abs(r)) / (np.max(np.abs(a)) * max(1.0, abs(z) * np.max(np.abs(drift)))))})
    payload = {"terms": terms}
    if spec.chain.kind == "finite":
        pq = polynomials(cfg["alpha"], cfg["beta"], c, v)
        payload["P2"] = list(pq.P2)
        payload["P3"] = list(pq.P3)
        payload["companion_roots_P2"] = sorted(np.roots(pq.P2).real)
        payload["companion_roots_P3"] = sorted(np.roots(pq.P3).real)
    art.json("roots.json", payload)
    art.csv("roots.csv", ["zeta", "residual_max"], [(t["zeta"], t["residual_max"]) for t in terms])
    return EXIT_OK


HANDLERS = {
    "simulate": cmd_simulate,
    "invariant": cmd_invariant,
    "verify-stationarity": cmd_verify,
    "tv-decay": cmd_tv_decay,
    "wasserstein-decay": cmd_wasserstein_decay,
    "rates": cmd_rates,
    "roots": cmd_roots,
}


def run(cfg: dict) -> int:
    art = Artifacts(cfg)
    try:
        art.open()
        status = HANDLERS[cfg["command"]](cfg, art)
    except BaseException:
        art.rollback()
        raise
    return status


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        return run(cfg)
    except (ConfigError, ParameterError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

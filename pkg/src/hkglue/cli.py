"""Command-line front end: configuration, caching, sweeps and reports.

Configuration files are JSON objects with a ``schema_version`` field; see
``configs/generic.json`` for the full layout.  Unknown keys are rejected.
All CSV output uses a fixed column order, fixed row order and ``%.17g``
floats so repeated runs are byte-identical regardless of ``--threads``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import tempfile
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import acceptance, alf_models, gluing
from . import lattice_harmonics as lh
from . import triple_calculus as tc
from .errors import CacheError, ConfigError, HKGlueError

SCHEMA_VERSION = 1
SUBCOMMANDS = ("validate", "monopole", "triple", "error-sweep", "collapse", "asymptotics", "topology", "report")

_SCHEMA = {
    "schema_version": int,
    "name": str,
    "torus": {"basis": list},
    "dihedral_weights": list,
    "cyclic_pairs": list,
    "epsilon": {"sweep": list, "collapse": list, "monopole": float},
    "grids": {"annulus": int, "collapse_theta": int, "collapse_grid": int, "triple_draws": int, "positivity_grid": int},
    "tolerances": {"flux": float},
    "sweep_scale": float,
    "beta": float,
    "output_dir": str,
    "cache_dir": str,
}
_PAIR_KEYS = {"position", "coordinates", "k"}


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    name: str = "generic"
    basis: np.ndarray = field(default_factory=lambda: np.eye(3))
    dihedral_weights: tuple = (1, 1, 2, 2, 2, 2, 2, 2)
    cyclic_pairs: tuple = ()  # ((fractional position, k), ...)
    eps_sweep: tuple = acceptance.SWEEP_EPS
    eps_collapse: tuple = acceptance.COLLAPSE_EPS
    eps_monopole: float = 0.01
    grids: dict = field(default_factory=dict)
    flux_tol: float = 1e-6
    sweep_scale: float = 32.0
    beta: float = 0.4
    output_dir: str | None = None
    cache_dir: str | None = None

    @property
    def torus(self) -> lh.FlatTorus:
        return lh.FlatTorus(self.basis)

    def charge_config(self) -> lh.ChargeConfig:
        torus = self.torus
        pairs = tuple((torus.to_cartesian(p), k) for p, k in self.cyclic_pairs)
        return lh.ChargeConfig(torus, self.dihedral_weights, pairs)

    def grid(self, key: str, profile: str) -> int:
        defaults = {
            "strict": dict(annulus=32, collapse_theta=12, collapse_grid=12, triple_draws=1000, positivity_grid=48),
            "fast": dict(annulus=12, collapse_theta=8, collapse_grid=8, triple_draws=100, positivity_grid=16),
        }
        return int(self.grids.get(key, defaults[profile][key]))

    def fingerprint(self) -> dict:
        return {
            "basis": np.asarray(self.basis).tolist(),
            "dihedral_weights": list(self.dihedral_weights),
            "cyclic_pairs": [[list(map(float, p)), int(k)] for p, k in self.cyclic_pairs],
        }


def _check_keys(obj, schema, path):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    for key, value in obj.items():
        if key not in schema:
            raise ConfigError(f"{path}.{key}: unknown key")
        expected = schema[key]
        if isinstance(expected, dict):
            _check_keys(value, expected, f"{path}.{key}")
        elif expected is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}.{key}: expected a number, got {value!r}")
        elif not isinstance(value, expected) or isinstance(value, bool):
            raise ConfigError(f"{path}.{key}: expected {expected.__name__}, got {type(value).__name__}")


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse JSON text into a :class:`RunConfig`; errors name the line or the field path."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    _check_keys(raw, _SCHEMA, "$")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"$.schema_version: expected {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    cfg = RunConfig()
    cfg.name = raw.get("name", cfg.name)
    if "torus" in raw and "basis" in raw["torus"]:
        b = np.asarray(raw["torus"]["basis"], dtype=float)
        if b.shape != (3, 3):
            raise ConfigError("$.torus.basis: expected a 3x3 array")
        cfg.basis = b
    if "dihedral_weights" in raw:
        cfg.dihedral_weights = tuple(raw["dihedral_weights"])
    if "cyclic_pairs" in raw:
        pairs = []
        for i, item in enumerate(raw["cyclic_pairs"]):
            where = f"$.cyclic_pairs[{i}]"
            if not isinstance(item, dict):
                raise ConfigError(f"{where}: expected an object")
            extra = set(item) - _PAIR_KEYS
            if extra:
                raise ConfigError(f"{where}.{sorted(extra)[0]}: unknown key")
            if "position" not in item or "k" not in item:
                raise ConfigError(f"{where}: needs 'position' and 'k'")
            pos = np.asarray(item["position"], dtype=float)
            if pos.shape != (3,):
                raise ConfigError(f"{where}.position: expected 3 numbers")
            coords = item.get("coordinates", "fractional")
            if coords == "cartesian":
                pos = lh.FlatTorus(cfg.basis).to_fractional(pos)
            elif coords != "fractional":
                raise ConfigError(f"{where}.coordinates: expected 'fractional' or 'cartesian'")
            pairs.append((pos, item["k"]))
        cfg.cyclic_pairs = tuple(pairs)
    eps = raw.get("epsilon", {})
    cfg.eps_sweep = tuple(float(e) for e in eps.get("sweep", cfg.eps_sweep))
    cfg.eps_collapse = tuple(float(e) for e in eps.get("collapse", cfg.eps_collapse))
    cfg.eps_monopole = float(eps.get("monopole", cfg.eps_monopole))
    for key, values in (("sweep", cfg.eps_sweep), ("collapse", cfg.eps_collapse)):
        if any(not e > 0 for e in values):
            raise ConfigError(f"$.epsilon.{key}: values must be positive")
    cfg.grids = dict(raw.get("grids", {}))
    cfg.flux_tol = float(raw.get("tolerances", {}).get("flux", cfg.flux_tol))
    cfg.sweep_scale = float(raw.get("sweep_scale", cfg.sweep_scale))
    cfg.beta = float(raw.get("beta", cfg.beta))
    cfg.output_dir = raw.get("output_dir")
    cfg.cache_dir = raw.get("cache_dir")
    return cfg


def load_config(path: str | None) -> RunConfig:
    if path is None:
        text = resources.files("hkglue").joinpath("configs/generic.json").read_text()
        return parse_config(text, "generic.json")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{path}: no such file")
    return parse_config(p.read_text(), str(p))


# ---------------------------------------------------------------------------
# Cache
# ---------------------------------------------------------------------------


class Cache:
    """Content-addressed ``.npz`` store for Ewald tables and regular-part data."""

    def __init__(self, directory: str | None):
        self.directory = Path(directory) if directory else None
        self.hits = self.misses = 0
        self.warnings: list[str] = []
        if self.directory is not None:
            try:
                self.directory.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise CacheError(f"cache directory {directory} is not usable: {exc}") from None
            if not os.access(self.directory, os.W_OK):
                raise CacheError(f"cache directory {directory} is not writable")

    @staticmethod
    def key(kind: str, payload: dict) -> str:
        blob = json.dumps({"kind": kind, **payload}, sort_keys=True)
        return f"{kind}-{hashlib.sha256(blob.encode()).hexdigest()[:24]}"

    def get(self, kind: str, payload: dict, compute):
        """Return cached arrays for ``payload`` or compute, store and return them."""
        if self.directory is None:
            return compute()
        path = self.directory / (self.key(kind, payload) + ".npz")
        if path.exists():
            try:
                with np.load(path) as data:
                    out = {k: data[k] for k in data.files}
                self.hits += 1
                return out
            except Exception as exc:  # truncated or corrupted entry
                msg = f"corrupted cache entry {path.name} ({type(exc).__name__}); recomputing"
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
                self.warnings.append(msg)
        self.misses += 1
        out = compute()
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                np.savez(fh, **out)
            os.replace(tmp, path)
        except OSError as exc:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise CacheError(f"cannot write cache entry: {exc}") from None
        return out

    def status(self) -> dict:
        return {"hits": self.hits, "misses": self.misses, "warnings": list(self.warnings)}


_TABLE_FIELDS = ("alpha", "real_cutoff", "reciprocal_cutoff", "lattice_vectors", "kvectors", "kcoef", "constant", "tol")


def cached_field(cache: Cache, config: lh.ChargeConfig, epsilon: float = 1.0) -> lh.HarmonicField:
    """Harmonic field with its Ewald table taken from the cache."""
    if config.is_trivial:
        return lh.HarmonicField(config, epsilon)

    def compute():
        t = lh.build_ewald_table(config.torus)
        return {f: np.asarray(getattr(t, f)) for f in _TABLE_FIELDS}

    data = cache.get("ewald", {"basis": config.torus.basis.tolist(), "tol": 1e-12}, compute)
    table = lh.EwaldTable(*(data[f] if data[f].ndim else data[f].item() for f in _TABLE_FIELDS))
    return lh.HarmonicField(config, epsilon, table=table)


def cached_regular(cache: Cache, field: lh.HarmonicField, payload: dict) -> dict:
    """``{index: (lam, ell)}`` for every puncture, cached by configuration content."""

    def compute():
        lam = np.zeros(len(field.config.punctures))
        ell = np.zeros((len(field.config.punctures), 3))
        if not field.trivial:
            for p in field.config.punctures:
                lam[p.index], ell[p.index] = lh.regular_part_direct(field, p.index)
        return {"lam": lam, "ell": ell}

    data = cache.get("regular", payload, compute)
    return {i: (float(data["lam"][i]), data["ell"][i]) for i in range(len(data["lam"]))}


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


@dataclass
class Report:
    command: str
    records: list = field(default_factory=list)
    files: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.records)

    def add(self, name, passed, measured, expected, source="analytic"):
        self.records.append(acceptance.Record(name, bool(passed), str(measured), str(expected), source))

    def table(self) -> str:
        return "\n".join(r.line() for r in self.records)

    def summary(self, cache: Cache) -> dict:
        return {
            "command": self.command,
            "ok": self.ok,
            "records": [
                {"name": r.name, "status": r.status, "measured": r.measured, "expected": r.expected, "source": r.source}
                for r in self.records
            ],
            "files": self.files,
            "cache": cache.status(),
        }


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


@dataclass
class Context:
    config: RunConfig
    out: Path
    cache: Cache
    threads: int
    profile: str

    def map(self, fn, items):
        items = list(items)
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                return list(ex.map(fn, items))
        return [fn(i) for i in items]

    def emit(self, report: Report, name: str, header, rows):
        write_csv(self.out / name, header, rows)
        report.files.append(name)


def cmd_validate(ctx: Context, report: Report):
    rc = ctx.config
    pairs = tuple((rc.torus.to_cartesian(p), k) for p, k in rc.cyclic_pairs)
    bal = lh.check_balancing(rc.torus, rc.dihedral_weights, pairs)
    balance_msgs = [v for v in bal.violations if not v.startswith("position")]
    position_msgs = [v for v in bal.violations if v.startswith("position")]
    report.add("balancing", not balance_msgs, f"sum = {bal.weight_sum}" + "".join(f"; {m}" for m in balance_msgs), "16")
    report.add("positions", not position_msgs, "; ".join(position_msgs) or "distinct", "distinct")
    rows = [("balancing", not balance_msgs, bal.weight_sum, 16), ("positions", not position_msgs, len(position_msgs), 0)]
    if bal.valid:
        cfg = rc.charge_config()
        ep = alf_models.euler_and_parameters(cfg)
        report.add("euler characteristic", ep.euler == 24, ep.euler, 24, "theory")
        report.add("parameter count", ep.parameters == 58, ep.parameters, 58, "theory")
        rows += [("euler", ep.euler == 24, ep.euler, 24), ("parameters", ep.parameters == 58, ep.parameters, 58)]
        field_ = cached_field(ctx.cache, cfg)
        worst = 0.0
        for p in cfg.punctures:
            for r in (cfg.rho0 / 2, cfg.rho0 / 4):
                worst = max(worst, abs(lh.flux(field_, p.index, r) - p.charge))
        report.add("flux spot check", worst <= rc.flux_tol, f"{worst:.3e}", f"<= {rc.flux_tol:g}", "theory")
        rows.append(("flux", worst <= rc.flux_tol, worst, rc.flux_tol))
    ctx.emit(report, "validate.csv", ("check", "passed", "measured", "expected"), rows)


def cmd_monopole(ctx: Context, report: Report):
    cfg = ctx.config.charge_config()
    field_ = cached_field(ctx.cache, cfg)
    reg = cached_regular(ctx.cache, field_, {"config": ctx.config.fingerprint()})
    radii = (cfg.rho0 / 2, cfg.rho0 / 4)

    def job(p):
        fl = [lh.flux(field_, p.index, r) for r in radii]
        lam, ell = reg[p.index]
        return (p.name, p.kind, p.charge, fl[0], fl[1], lam, *ell)

    rows = ctx.map(job, cfg.punctures)
    worst = max(abs(r[3] - r[2]) + abs(r[4] - r[2]) for r in rows)
    report.add("flux quantization", worst <= ctx.config.flux_tol, f"{worst:.3e}", f"<= {ctx.config.flux_tol:g}", "theory")
    ctx.emit(report, "monopole.csv",
             ("puncture", "kind", "charge", "flux_r1", "flux_r2", "lambda", "ell_x", "ell_y", "ell_z"), rows)
    if not field_.trivial:
        th = lh.positivity_threshold(field_, grid=ctx.config.grid("positivity_grid", ctx.profile))
        ctx.emit(report, "positivity.csv", ("epsilon", "min_h_eps", "valid"), th.scan)


def cmd_triple(ctx: Context, report: Report):
    n = ctx.config.grid("triple_draws", ctx.profile)
    rng = np.random.default_rng(3)
    rows = []
    for i in range(n):
        h = rng.uniform(0.5, 3.0)
        e = 10 ** rng.uniform(-1, 0)
        E = acceptance.random_frame(rng)
        tri = tc.gh_triple_sample(h, e, tc.CoframeSample(E))
        q = float(np.max(np.abs(tc.intersection_matrix(tri).Q_normalized - np.eye(3))))
        S = tc.hodge_star(tc.recover_metric(tri))
        rows.append((i, h, e, q, float(np.max(np.abs(S @ S - np.eye(6))))))
    worst = max(max(r[3], r[4]) for r in rows)
    report.add("SU(2) identities", worst <= 1e-12, f"{worst:.2e}", "<= 1e-12")
    ctx.emit(report, "triple.csv", ("draw", "h", "epsilon", "q_error", "star_error"), rows)


def cmd_error_sweep(ctx: Context, report: Report):
    rc = ctx.config
    cfg = rc.charge_config().scaled(rc.sweep_scale)
    field_ = cached_field(ctx.cache, cfg)
    reg = cached_regular(ctx.cache, field_, {"config": rc.fingerprint(), "scale": rc.sweep_scale})
    n = rc.grid("annulus", ctx.profile)
    res = gluing.error_sweep(cfg, rc.eps_sweep, n_rho=n, n_theta=n, field=field_, workers=ctx.threads, regular=reg)
    ok = 1.6 <= res.slope <= 2.0
    report.add("gluing-error slope", ok, f"{res.slope:.4f}", "[1.6, 2.0]", "theory")
    ctx.emit(report, "error_sweep.csv", ("epsilon", "puncture", "rho", "sup_error", "slope"), res.rows())
    ctx.emit(report, "error_sweep_fit.csv", ("slope", "intercept", "expected"),
             [(res.slope, res.intercept, gluing.GLUING_EXPONENT)])


def cmd_collapse(ctx: Context, report: Report):
    rc = ctx.config
    cfg = rc.charge_config()
    field_ = cached_field(ctx.cache, cfg)
    prof = gluing.collapse_profile(field_, rc.eps_collapse, rc.beta, rc.grid("collapse_theta", ctx.profile),
                                   rc.grid("collapse_grid", ctx.profile))
    expected = 1.0 - rc.beta
    if not field_.trivial:
        report.add("collapse exponent", abs(prof.exponent_h - expected) <= 0.1, f"{prof.exponent_h:.4f}",
                   f"{expected:g} +- 0.1", "theory")
    ctx.emit(report, "collapse.csv", ("epsilon", "sup_h_minus_1", "sup_rho_grad_h"),
             zip(prof.eps, prof.sup_h, prof.sup_grad))
    ctx.emit(report, "collapse_fit.csv", ("exponent_h", "exponent_grad", "expected"),
             [(prof.exponent_h, prof.exponent_grad, expected)])


def cmd_asymptotics(ctx: Context, report: Report):
    model = alf_models.AsymptoticModel(2)
    centred = alf_models.MultiTaubNut(np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]), (1, 1))
    cases = (("centred", centred, 3.0), ("translated", centred.translated(np.array([5.0, 0.0, 0.0])), 2.0))
    fits = ctx.map(lambda c: alf_models.decay_exponent(c[1], model), cases)
    rows, fit_rows = [], []
    for (name, _, expected), fit in zip(cases, fits):
        for r, ray in enumerate(fit.norms):
            rows += [(name, r, rho, v) for rho, v in zip(fit.rho, ray)]
        fit_rows.append((name, fit.exponent, fit.spread, expected))
        report.add(f"decay exponent ({name})", abs(fit.exponent - expected) <= 0.3, f"{fit.exponent:.4f}",
                   f"{expected:g} +- 0.3", "theory")
    ctx.emit(report, "asymptotics.csv", ("case", "ray", "rho", "metric_difference"), rows)
    ctx.emit(report, "asymptotics_fit.csv", ("case", "exponent", "ray_spread", "expected"), fit_rows)


def cmd_topology(ctx: Context, report: Report):
    (ctx.out).mkdir(parents=True, exist_ok=True)
    text = alf_models.topology_csv()
    (ctx.out / "topology.csv").write_text(text)
    report.files.append("topology.csv")
    cfg = ctx.config.charge_config()
    ep = alf_models.euler_and_parameters(cfg)
    report.add("euler characteristic", ep.euler == 24, ep.euler, 24, "theory")
    report.add("parameter count", ep.parameters == 58, ep.parameters, 58, "theory")
    ctx.emit(report, "config_topology.csv", ("piece", "euler", "moduli"),
             [(p.name, p.euler, p.moduli_dim) for p in ep.pieces] + [("total", ep.euler, ep.parameters)])


def cmd_report(ctx: Context, report: Report):
    for rec in acceptance.run_all(ctx.profile):
        report.records.append(rec)
    ctx.emit(report, "report.csv", ("criterion", "status", "measured", "expected", "source"),
             [(r.name, r.status, r.measured, r.expected, r.source) for r in report.records])


COMMANDS = {
    "validate": cmd_validate,
    "monopole": cmd_monopole,
    "triple": cmd_triple,
    "error-sweep": cmd_error_sweep,
    "collapse": cmd_collapse,
    "asymptotics": cmd_asymptotics,
    "topology": cmd_topology,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hkglue", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="JSON run configuration (default: bundled generic configuration)")
    ap.add_argument("--out", help="output directory (default: config output_dir or ./hkglue-out)")
    ap.add_argument("--cache", help="cache directory for Ewald tables and regular parts")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--tol-profile", choices=("fast", "strict"), default="strict")
    ap.add_argument("--quiet", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        rc = load_config(args.config)
        out = Path(args.out or rc.output_dir or "hkglue-out")
        cache = Cache(args.cache or rc.cache_dir)
        ctx = Context(rc, out, cache, args.threads, args.tol_profile)
        report = Report(args.command)
        if args.command != "validate":
            # everything else needs a valid configuration
            rc.charge_config()
        COMMANDS[args.command](ctx, report)
    except HKGlueError as exc:
        print(f"error ({args.command}): {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    summary = report.summary(cache)
    (out / f"summary-{args.command}.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if not args.quiet:
        print(report.table())
        print(f"cache: {cache.hits} hits, {cache.misses} misses, {len(cache.warnings)} warnings")
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())

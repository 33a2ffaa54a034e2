"""Command-line scenario runner.

Usage::

    bmolab SUBCOMMAND [--config PATH] [--out DIR] [--seed N]

Subcommands ``space``, ``jn``, ``gj``, ``decompose``, ``carleson``, ``hardy``
and ``bench`` run a single pipeline; ``run`` runs those listed under
``pipelines``.  Every invocation writes ``report.json`` and CSV tables to
the output directory.  Measured constants in the report are keyed by the
property they certify, for example ``carleson_bound.C_fit``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bmo, carleson, decompose, dyadic, hardy
from .functions import DEFAULT_SUITE, make_function, parse_expression
from .semigroup import KINDS, build_operator, gaussian_fit
from .space import MAX_POINTS, build_grid_space, doubling_fit, enumerate_balls

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "run", "bench_gj", "main"]

PIPELINES = ("space", "jn", "gj", "decompose", "carleson", "hardy", "bench")


class ConfigError(ValueError):
    """Invalid configuration; ``str(err)`` is the user-facing message."""


def _int(lo=None, hi=None, choices=None):
    def conv(text):
        v = int(text)
        if choices is not None and v not in choices:
            raise ValueError(f"must be one of {sorted(choices)}")
        if lo is not None and v < lo:
            raise ValueError(f"must be >= {lo}")
        if hi is not None and v > hi:
            raise ValueError(f"must be <= {hi}")
        return v
    return conv


def _float(lo=None, hi=None, open_lo=False, open_hi=False):
    def conv(text):
        v = float(text)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        if lo is not None and (v <= lo if open_lo else v < lo):
            raise ValueError(f"must be {'>' if open_lo else '>='} {lo}")
        if hi is not None and (v >= hi if open_hi else v > hi):
            raise ValueError(f"must be {'<' if open_hi else '<='} {hi}")
        return v
    return conv


def _choice(options):
    def conv(text):
        if text not in options:
            raise ValueError(f"must be one of {list(options)}")
        return text
    return conv


def _float_list(lo=0.0):
    def conv(text):
        vals = [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
        if not vals or any(v <= lo for v in vals):
            raise ValueError(f"must be a nonempty comma-separated list of numbers > {lo}")
        return vals
    return conv


def _functions(text):
    items = [t.strip() for t in str(text).split(";") if t.strip()]
    if not items:
        raise ValueError("must list at least one function expression")
    for expr in items:
        parse_expression(expr)
    return items


def _names(options):
    def conv(text):
        items = [t.strip() for t in str(text).split(",") if t.strip()]
        bad = [t for t in items if t not in options]
        if bad or not items:
            raise ValueError(f"entries must be among {list(options)}")
        return items
    return conv


def _potential(text):
    if text not in ("quadratic", "constant", "well"):
        raise ValueError("must be one of ['quadratic', 'constant', 'well']")
    return text


REQUIRED = object()

# key -> (converter, default)
SCHEMA = {
    "space.dim": (_int(choices={1, 2}), 1),
    "space.side": (_int(lo=2), REQUIRED),
    "space.boundary": (_choice(("reflecting", "periodic")), "reflecting"),
    "operator.kind": (_choice(KINDS), "laplacian"),
    "operator.potential": (_potential, "quadratic"),
    "operator.amplitude": (_float(lo=0.0), 100.0),
    "operator.lambda_b": (_float(lo=0.0, open_lo=True), 0.5),
    "functions": (_functions, ";".join(DEFAULT_SUITE)),
    "pipelines": (_names(PIPELINES), ",".join(PIPELINES)),
    "seed": (_int(lo=0), 0),
    "ensemble.M": (_int(lo=1, hi=10000), 50),
    "balls.radii_per_octave": (_int(lo=1, hi=16), 2),
    "jn.n_lambda": (_int(lo=2, hi=4096), bmo.N_LAMBDA),
    "gj.budget": (_float(lo=0.0, open_lo=True), 1.0),
    "gj.operators": (_names(KINDS), ""),
    "decompose.eps_factor": (_float(lo=1.0, open_lo=True), 1.1),
    "decompose.eps_prime_factor": (_float(lo=1.0, open_lo=True), decompose.EPS_PRIME_FACTOR),
    "decompose.lambda_factor": (_float(lo=1.0, open_lo=True), decompose.LAMBDA_FACTOR),
    "decompose.lambda_grid": (_float_list(), "2,2.5,3,3.5"),
    "carleson.theta": (_float(lo=0.0, hi=1.0, open_lo=True, open_hi=True), carleson.DEFAULT_THETA),
    "carleson.C0": (_float(lo=0.0, open_lo=True), carleson.DEFAULT_C0),
    "carleson.max_iter": (_int(lo=1, hi=1000), 10),
    "carleson.rho_target": (_float(lo=0.0, hi=1.0, open_lo=True, open_hi=True), 0.75),
    "carleson.bucket_A": (_float(lo=1.0), carleson.DEFAULT_BUCKET_A),
    "carleson.theta_sweep": (_float_list(), "0.25,0.125,0.0625"),
    "hardy.per_radius": (_int(lo=1, hi=1000), 8),
}


@dataclass
class RunConfig:
    values: dict
    source: str = "<defaults>"

    def __getitem__(self, key):
        return self.values[key]

    def as_dict(self) -> dict:
        return dict(self.values)


def _flatten(doc, prefix="") -> dict:
    out = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, list):
            out[key] = ";".join(map(str, v)) if key == "functions" else ",".join(map(str, v))
        else:
            out[key] = str(v)
    return out


def _json_line(text: str, key: str) -> int:
    leaf = key.rsplit(".", 1)[-1]
    for i, line in enumerate(text.splitlines(), 1):
        if f'"{leaf}"' in line:
            return i
    return 1


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse flat ``key = value`` text or a JSON object into a validated :class:`RunConfig`.

    Lines starting with ``#`` and blank lines are ignored.  Unknown keys,
    duplicates, invalid values and missing required keys raise
    :class:`ConfigError` with ``source:line`` in the message.
    """
    raw: dict = {}
    lines: dict = {}
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}:{exc.lineno}: invalid JSON: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{source}:1: top level must be an object")
        raw = _flatten(doc)
        lines = {k: _json_line(text, k) for k in raw}
    else:
        for i, line in enumerate(text.splitlines(), 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            if "=" not in s:
                raise ConfigError(f"{source}:{i}: expected 'key = value', got {s!r}")
            k, v = (p.strip() for p in s.split("=", 1))
            if k in raw:
                raise ConfigError(f"{source}:{i}: duplicate key '{k}' (first set on line {lines[k]})")
            raw[k] = v
            lines[k] = i
    values = {}
    for k, v in raw.items():
        if k not in SCHEMA:
            raise ConfigError(f"{source}:{lines[k]}: unknown key '{k}'")
        conv = SCHEMA[k][0]
        try:
            values[k] = conv(v)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}:{lines[k]}: invalid value for '{k}': {exc}") from None
    for k, (conv, default) in SCHEMA.items():
        if k in values:
            continue
        if default is REQUIRED:
            raise ConfigError(f"{source}: missing required key '{k}'")
        values[k] = conv(default) if default != "" else None
    dim, side = values["space.dim"], values["space.side"]
    if side ** dim > MAX_POINTS:
        where = lines.get("space.side", 0)
        raise ConfigError(f"{source}:{where}: space.side = {side} gives {side ** dim} points; "
                          f"the limit is {MAX_POINTS}")
    return RunConfig(values=values, source=source)


def load_config(path: str | None, seed: int | None = None) -> RunConfig:
    if path is None:
        raise ConfigError("<no config>: missing required key 'space.side'")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    cfg = parse_config(text, source=str(path))
    if seed is not None:
        cfg.values["seed"] = seed
    return cfg


class _Context:
    """Objects shared by the pipelines of one run (built lazily)."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.space = build_grid_space(cfg["space.dim"], cfg["space.side"], cfg["space.boundary"])
        self.balls = enumerate_balls(self.space, cfg["balls.radii_per_octave"])
        self.doubling = doubling_fit(self.space, self.balls)
        self._ops: dict = {}
        self._ens = None
        self.functions = [(f"f{i}", expr, make_function(self.space, expr))
                          for i, expr in enumerate(cfg["functions"])]

    def operator(self, kind: str | None = None):
        kind = kind or self.cfg["operator.kind"]
        if kind not in self._ops:
            V = None
            if kind == "schrodinger":
                V = _potential_values(self.space, self.cfg["operator.potential"],
                                      self.cfg["operator.amplitude"])
            self._ops[kind] = build_operator(self.space, kind, V=V, lambda_b=self.cfg["operator.lambda_b"])
        return self._ops[kind]

    @property
    def ensemble(self):
        if self._ens is None:
            self._ens = dyadic.sample_ensemble(self.space, self.cfg["ensemble.M"], self.cfg["seed"])
        return self._ens


def _potential_values(space, name: str, amplitude: float) -> np.ndarray:
    c = space.coords if space.coords is not None else (np.arange(space.n) / space.n)[:, None]
    r2 = ((c - 0.5) ** 2).sum(axis=1)
    if name == "quadratic":
        return amplitude * r2
    if name == "constant":
        return np.full(space.n, amplitude)
    return amplitude * (r2 < 0.0625).astype(float)


def _table(rows: list, keys: list | None = None) -> str:
    buf = io.StringIO()
    keys = keys or (list(rows[0]) if rows else [])
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r.get(k, "") for k in keys})
    return buf.getvalue()


def _clean(x):
    """JSON-safe copy: floats rounded-trip exactly, non-finite values become strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def run_space(ctx: _Context, files: dict) -> dict:
    sp = ctx.space
    reports = [dyadic.verify_axioms(s) for s in ctx.ensemble.systems]
    op = ctx.operator()
    out = {
        "n_points": sp.n, "diameter": sp.diameter, "n_balls": len(ctx.balls),
        "doubling.C_D": ctx.doubling.C_D, "doubling.n_D": ctx.doubling.n_D,
        "dyadic_axioms.violations": int(sum(r.violations for r in reports)),
        "dyadic_axioms.lattices": len(reports),
        "dyadic_axioms.c1_measured_min": float(min(s.c1_measured for s in ctx.ensemble.systems)),
    }
    if op.kind in ("laplacian", "schrodinger"):
        g = gaussian_fit(op)
        out.update({"gaussian_bound.C": g.C, "gaussian_bound.c": g.c,
                    "gaussian_bound.max_violation": g.max_violation})
    return out


def run_jn(ctx: _Context, files: dict) -> dict:
    op = ctx.operator()
    out = {}
    for label, expr, f in ctx.functions:
        norm = bmo.bmo_norm(op, f, ctx.balls)[0]
        eps, lam_min, (lams, tails) = bmo.epsilon_L(op, f, ctx.balls, n_lambda=ctx.cfg["jn.n_lambda"],
                                                     return_curve=True)
        dist, _ = bmo.dist_upper(op, f, ctx.balls, budget=ctx.cfg["gj.budget"], lambda0=lam_min)
        files[f"tails_{label}.csv"] = _table([{"lambda": repr(float(a)), "tail": repr(float(b))}
                                              for a, b in zip(lams, tails)])
        out[label] = {"function": expr, "bmo_norm": norm, "john_nirenberg.epsilon_L": eps,
                      "john_nirenberg.lambda_min": lam_min, "dist_upper": dist}
    return out


def bench_gj(ctx: _Context, operators=None) -> tuple[list, dict]:
    """Rows ``(function, operator, bmo_norm, epsilon_L, dist_upper, ratio)`` and a summary.

    Rows with ``epsilon_L = 0`` are flagged and left out of the ratio range.
    """
    if len(ctx.functions) < 3:
        raise ValueError("bench_gj needs at least 3 functions")
    operators = operators or [ctx.cfg["operator.kind"]]
    rows = []
    for kind in operators:
        op = ctx.operator(kind)
        for label, expr, f in ctx.functions:
            norm = bmo.bmo_norm(op, f, ctx.balls)[0]
            eps, lam0 = bmo.epsilon_L(op, f, ctx.balls, n_lambda=ctx.cfg["jn.n_lambda"])
            dist, _ = bmo.dist_upper(op, f, ctx.balls, budget=ctx.cfg["gj.budget"], lambda0=lam0)
            flagged = eps == 0
            rows.append({"function": expr, "operator": kind, "bmo_norm": norm, "epsilon_L": eps,
                         "dist_upper": dist, "ratio": "" if flagged else dist / eps,
                         "flag": "epsilon_L=0" if flagged else ""})
    ratios = [r["ratio"] for r in rows if r["ratio"] != ""]
    summary = {"ratio_min": min(ratios) if ratios else None, "ratio_max": max(ratios) if ratios else None,
               "bracket_spread": (max(ratios) / min(ratios)) if ratios and min(ratios) > 0 else None,
               "flagged": sum(1 for r in rows if r["flag"])}
    return rows, summary


def run_gj(ctx: _Context, files: dict) -> dict:
    rows, summary = bench_gj(ctx, ctx.cfg["gj.operators"])
    files["gj.csv"] = _table(rows + [{"function": "summary", "ratio": summary["bracket_spread"]}])
    return {"gj_bracket": summary, "rows": rows}


def run_decompose(ctx: _Context, files: dict) -> dict:
    op = ctx.operator()
    cfg = ctx.cfg
    out = {}
    for label, expr, f in ctx.functions:
        entry = {"function": expr}
        out[label] = entry
        norm = bmo.bmo_norm(op, f, ctx.balls)[0]
        eps_L, _ = bmo.epsilon_L(op, f, ctx.balls)
        system = ctx.ensemble.systems[0]
        ladder = decompose.heat_ladder(op, f, system)
        gamma_rows = []
        for mult in cfg["decompose.lambda_grid"]:
            lam = mult * norm
            try:
                forest = decompose.stopping_time(op, f, system, lam=lam, ladder=ladder)
            except ValueError as exc:
                gamma_rows.append({"lambda_over_bmo": mult, "lambda": lam, "error": str(exc)})
                continue
            gam = forest.gamma_k()
            gamma_rows.append({"lambda_over_bmo": mult, "lambda": lam, "generations": len(gam),
                               "gamma_1": gam[0] if gam else 0.0,
                               "window_fraction": forest.window_fraction(),
                               "residual": forest.reconstruction_residual,
                               "exceptions": forest.exceptions})
            if forest.selected and "stopping_time" not in entry:
                coeffs = decompose.coefficient_checks(forest)
                entry["stopping_time"] = {
                    "lambda": lam, "selection_window.fraction": forest.window_fraction(),
                    "selection_window.D": forest.D, "reconstruction.residual": forest.reconstruction_residual,
                    "finest_level_exceptions": forest.exceptions,
                    **{f"coefficients.{k}": v for k, v in coeffs.items() if k != "per_generation"},
                }
                files[f"forest_{label}.json"] = json.dumps(forest.to_dict())
        files[f"gamma_{label}.csv"] = _table(gamma_rows, ["lambda_over_bmo", "lambda", "generations", "gamma_1",
                                                          "window_fraction", "residual", "exceptions", "error"])
        if norm == 0 or eps_L == 0:
            entry["global"] = {"skipped": "epsilon_L = 0: f is bounded at every threshold"}
            continue
        eps = cfg["decompose.eps_factor"] * eps_L
        dec = decompose.global_decompose(op, f, ctx.ensemble, eps, balls=ctx.balls, n_D=ctx.doubling.n_D,
                                         eps_prime_factor=cfg["decompose.eps_prime_factor"],
                                         lambda_factor=cfg["decompose.lambda_factor"])
        viol = sum(len(r.refined.violations()) for r in dec.runs)
        entry["global"] = {"epsilon": eps, **{f"bounded_split.{k}": v for k, v in dec.certificates.items()},
                           "half_graded.violations": viol,
                           "reconstruction.residual": float(np.abs(f - dec.g - dec.h).max())}
    return out


def run_carleson(ctx: _Context, files: dict) -> dict:
    op = ctx.operator()
    cfg = ctx.cfg
    out = {}
    nD = ctx.doubling.n_D
    for label, expr, f in ctx.functions:
        norm = bmo.bmo_norm(op, f, ctx.balls)[0]
        sweep_rows = []
        for th in cfg["carleson.theta_sweep"]:
            res = carleson.balayage_build(op, f, ctx.ensemble, th, cfg["carleson.C0"], ctx.balls)
            cn = carleson.carleson_norm(res.sigma, ctx.balls)
            sweep_rows.append({"theta": th, "carleson_norm": cn, "contraction": res.contraction,
                               "C_fit": cn * th ** nD / norm if norm > 0 else 0.0,
                               "atoms": len(res.sigma), "residual": res.residual})
        files[f"theta_sweep_{label}.csv"] = _table(sweep_rows)
        fits = [r["C_fit"] for r in sweep_rows if r["C_fit"] > 0]
        it = carleson.iterate_balayage(op, f, ctx.ensemble, cfg["carleson.theta"], cfg["carleson.max_iter"],
                                        cfg["carleson.rho_target"], cfg["carleson.C0"], ctx.balls,
                                        bucket_A=cfg["carleson.bucket_A"])
        files[f"history_{label}.csv"] = it.history_csv()
        files[f"sigma_{label}.csv"] = it.sigma_total.to_csv()
        out[label] = {
            "function": expr, "bmo_norm": norm,
            "carleson_bound.C_fit": fits, "carleson_bound.C_fit_spread": (max(fits) / min(fits)) if fits else None,
            "iteration.theta": it.theta, "iteration.steps": len(it.history),
            "iteration.max_contraction": max(h["contraction"] for h in it.history),
            "iteration.remainder_ratio": it.history[-1]["remainder_bmo"] / norm if norm > 0 else 0.0,
            "iteration.constant": it.constant, "iteration.residual": it.residual,
            "sigma.atoms": len(it.sigma_total), "sigma.total": it.sigma_total.total,
        }
    return out


def run_hardy(ctx: _Context, files: dict) -> dict:
    op = ctx.operator()
    atoms = hardy.atom_family(op, ctx.balls, ctx.cfg["hardy.per_radius"])
    out = {"atoms": len(atoms), "atom_radii": sorted({float(a.r) for a in atoms})}
    for label, expr, f in ctx.functions:
        rep = hardy.pairing_test(op, f, atoms, ctx.balls)
        S = hardy.square_function(op, f)
        out[label] = {"function": expr, "pairing.max_ratio": rep["max_ratio"],
                      "pairing.max_abs": rep["max_abs"], "pairing.max_drift": rep["max_drift"],
                      "square_function.L1": float(np.sum(S * ctx.space.measure))}
    return out


def run_bench(ctx: _Context, files: dict) -> dict:
    op = ctx.operator()
    rows = []
    for label, expr, f in ctx.functions:
        t0 = time.perf_counter()
        eps_L, _ = bmo.epsilon_L(op, f, ctx.balls)
        row = {"function": expr, "epsilon_L": eps_L}
        if eps_L > 0:
            dec = decompose.global_decompose(op, f, ctx.ensemble, ctx.cfg["decompose.eps_factor"] * eps_L,
                                             balls=ctx.balls, n_D=ctx.doubling.n_D)
            row.update(dec.certificates)
        row["seconds"] = time.perf_counter() - t0
        rows.append(row)
    keys = ["function", "epsilon_L", "g_inf", "h_bmo", "A1_measured", "A2_measured", "lambda", "m",
            "max_residual", "g2_inf_over_lambda", "g3_inf_over_lambda", "seconds"]
    files["bench.csv"] = _table(rows, keys)
    gj_rows, summary = bench_gj(ctx)
    files["gj.csv"] = _table(gj_rows)
    return {"gj_bracket": summary,
            "bounded_split": [{k: v for k, v in r.items() if k != "seconds"} for r in rows]}


RUNNERS = {"space": run_space, "jn": run_jn, "gj": run_gj, "decompose": run_decompose,
           "carleson": run_carleson, "hardy": run_hardy, "bench": run_bench}


def run(cfg: RunConfig, out_dir, pipelines=None) -> dict:
    """Run the selected pipelines and write ``report.json`` plus CSV files into ``out_dir``.

    A pipeline whose preconditions fail is recorded with its error and the
    remaining pipelines still run.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = _Context(cfg)
    report = {"config": cfg.as_dict(), "results": {}}
    files: dict = {}
    for name in pipelines or cfg["pipelines"]:
        try:
            report["results"][name] = RUNNERS[name](ctx, files)
        except (ValueError, ArithmeticError) as exc:
            report["results"][name] = {"error": f"{type(exc).__name__}: {exc}"}
    for fname, text in files.items():
        (out_dir / fname).write_text(text)
    (out_dir / "report.json").write_text(json.dumps(_clean(report), indent=2, sort_keys=True) + "\n")
    return report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bmolab", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", choices=PIPELINES + ("run",))
    parser.add_argument("--config", help="key = value or JSON configuration file")
    parser.add_argument("--out", default="bmolab-out", help="output directory (default: bmolab-out)")
    parser.add_argument("--seed", type=int, help="overrides the seed in the config")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    pipelines = None if args.command == "run" else [args.command]
    report = run(cfg, args.out, pipelines)
    failed = [k for k, v in report["results"].items() if isinstance(v, dict) and "error" in v]
    for k in failed:
        print(f"{k}: {report['results'][k]['error']}", file=sys.stderr)
    print(f"wrote {Path(args.out) / 'report.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

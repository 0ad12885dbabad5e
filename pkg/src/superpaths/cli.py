"""Command line harness: one subcommand per experiment, CSV rows with a JSON header.

Parameters come from built-in defaults, then an optional ``--config`` file of
``key=value`` lines, then command line flags.  Output is deterministic for a
fixed seed: wall-clock seconds are only written with ``--timing``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from . import __version__

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
PATH_STEP_BUDGET = 2_000_000_000
DENSE_DIM_BUDGET = 4096
COLUMNS = ["experiment", "param_json", "estimate", "stderr", "oracle", "pass", "seconds"]


class UsageError(ValueError):
    pass


class BudgetError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# parameter schema

def _pos_int(s):
    v = int(s)
    if v <= 0:
        raise ValueError("must be a positive integer")
    return v


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise ValueError("must be a nonnegative integer")
    return v


def _pos_float(s):
    v = float(s)
    if not v > 0 or not math.isfinite(v):
        raise ValueError("must be a positive number")
    return v


def _nonneg_float(s):
    v = float(s)
    if not v >= 0 or not math.isfinite(v):
        raise ValueError("must be a nonnegative number")
    return v


def _pos_float_list(s):
    vals = [_pos_float(x) for x in str(s).split(",") if x.strip()]
    if not vals:
        raise ValueError("needs at least one value")
    return vals


def _nonneg_float_list(s):
    vals = [_nonneg_float(x) for x in str(s).split(",") if x.strip()]
    if not vals:
        raise ValueError("needs at least one value")
    return vals


def _even_int(s):
    v = _pos_int(s)
    if v % 2:
        raise ValueError("must be even")
    return v


def _fraction(s):
    return Fraction(str(s))


def _choice(*opts):
    def parse(s):
        if s not in opts:
            raise ValueError(f"must be one of {', '.join(opts)}")
        return s
    parse.choices = opts
    parse.__name__ = "choice"
    return parse


def _int_choice(*opts):
    def parse(s):
        v = int(s)
        if v not in opts:
            raise ValueError(f"must be one of {', '.join(map(str, opts))}")
        return v
    parse.choices = tuple(map(str, opts))
    parse.__name__ = "int_choice"
    return parse


def _routes(s):
    vals = [x.strip() for x in str(s).split(",") if x.strip()]
    bad = [v for v in vals if v not in ("fk", "grid")]
    if bad or not vals:
        raise ValueError("routes are fk and/or grid")
    return vals


@dataclass(frozen=True)
class Param:
    parse: Callable
    default: object
    help: str


COMMON = {
    "seed": Param(_nonneg_int, 0, "RNG seed"),
    "output": Param(str, "-", "CSV path, - for stdout"),
    "workers": Param(_pos_int, 1, "worker processes; results do not depend on it"),
}

SCHEMAS: dict[str, dict[str, Param]] = {
    "witten-index": {
        "h": Param(_choice("quad", "cos", "qcos2"), "quad", "Morse function"),
        "m": Param(_int_choice(1, 2), 1, "dimension"),
        "u": Param(_pos_float, 1.0, "coupling"),
        "t": Param(_pos_float_list, "0.5,1,2", "comma-separated times"),
        "paths": Param(_pos_int, 20000, "Monte Carlo paths per time"),
        "steps": Param(_pos_int, 200, "time steps per path"),
        "routes": Param(_routes, "fk", "fk (Monte Carlo) and/or grid (spectral)"),
        "sigmas": Param(_pos_float, 3.0, "pass band in standard errors"),
        "grid_tol": Param(_pos_float, 1e-6, "pass band for the spectral route"),
    },
    "euler-char": {
        "surface": Param(_choice("sphere", "torus"), "sphere", "closed surface"),
        "t": Param(_pos_float_list, "0.5", "comma-separated times"),
        "paths": Param(_pos_int, 20000, "loops per time"),
        "steps": Param(_pos_int, 100, "time steps per loop"),
        "sigmas": Param(_pos_float, 3.0, "pass band in standard errors"),
    },
    "mehler": {
        "B": Param(_nonneg_float, 1.0, "magnetic field"),
        "t": Param(_pos_float_list, "1", "comma-separated times"),
        "paths": Param(_pos_int, 100000, "bridges"),
        "steps": Param(_pos_int, 100, "time steps per bridge"),
        "rel_tol": Param(_pos_float, 0.02, "relative pass band"),
    },
    "morse": {
        "h": Param(_choice("cos", "qcos2", "quad"), "cos", "Morse function"),
        "m": Param(_int_choice(1, 2), 1, "dimension"),
        "u": Param(_pos_float, 8.0, "coupling"),
        "grid": Param(_nonneg_int, 0, "grid points per axis for the tunneling check, 0 to skip"),
        "rel_tol": Param(_pos_float, 0.1, "relative pass band for the tunneling check"),
    },
    "index-density": {
        "m": Param(_even_int, 4, "even dimension"),
        "curvature": Param(_choice("constant", "random"), "constant", "curvature data"),
        "K": Param(_fraction, "1", "sectional curvature for constant data"),
    },
    "supertime": {
        "m": Param(_even_int, 2, "even dimension of the Clifford module"),
        "K": Param(_pos_int, 3, "Fourier modes with max |k_a| <= K"),
        "degree": Param(_nonneg_int, 6, "degree of the generic polynomial"),
        "t": Param(_nonneg_float_list, "0,0.25,1", "times for the evolution identity"),
        "tol": Param(_pos_float, 1e-12, "pass band for the evolution identity"),
        "functions": Param(_pos_int, 50, "random functions for the D^2 check"),
    },
    "selftest": {},
}

DESCRIPTIONS = {
    "witten-index": "supertrace of exp(-tH) for a flat Witten Hamiltonian",
    "euler-char": "Euler characteristic of a surface from Brownian loops with frame holonomy",
    "mehler": "diagonal heat kernel of the planar magnetic oscillator",
    "morse": "Morse complex from steepest-descent flows, Betti numbers and tunneling",
    "index-density": "exact top-form coefficient of the index density",
    "supertime": "supertime calculus, Dirac projector and super evolution identity",
    "selftest": "exact-algebra property suite",
}


def catalog() -> dict:
    out = {}
    for name, sch in SCHEMAS.items():
        params = {}
        for k, p in {**sch, **COMMON}.items():
            entry = {"default": p.default if not isinstance(p.default, Fraction) else str(p.default),
                     "type": p.parse.__name__.lstrip("_"), "help": p.help}
            if hasattr(p.parse, "choices"):
                entry["choices"] = list(p.parse.choices)
            params[k] = entry
        out[name] = {"description": DESCRIPTIONS[name], "params": params}
    return out


def catalog_text() -> str:
    lines = ["experiments:"]
    for name, info in catalog().items():
        lines.append(f"  {name}: {info['description']}")
        for k, p in info["params"].items():
            extra = f" {{{','.join(p['choices'])}}}" if "choices" in p else ""
            lines.append(f"      --{k.replace('_', '-')}{extra} (default {p['default']}): {p['help']}")
    return "\n".join(lines) + "\n"


def read_config(path: str) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for no, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{no}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def resolve(command: str, file_values: dict[str, str], flag_values: dict[str, str | None]) -> dict:
    schema = {**SCHEMAS[command], **COMMON}
    unknown = sorted(set(file_values) - set(schema))
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    raw = {k: p.default for k, p in schema.items()}
    raw.update(file_values)
    raw.update({k: v for k, v in flag_values.items() if v is not None})
    params = {}
    for k, p in schema.items():
        try:
            params[k] = p.parse(raw[k]) if k not in ("output",) else str(raw[k])
        except (ValueError, ZeroDivisionError) as exc:
            raise UsageError(f"--{k.replace('_', '-')}={raw[k]!r}: {exc}") from None
    return params


# ---------------------------------------------------------------------------
# experiments

@dataclass
class Row:
    experiment: str
    params: dict
    estimate: float
    stderr: float | None
    oracle: float | None
    passed: bool
    seconds: float = 0.0


def _check_paths(paths: int, steps: int):
    if paths * steps > PATH_STEP_BUDGET:
        raise BudgetError(f"path budget: paths x steps = {paths * steps} exceeds {PATH_STEP_BUDGET}")


def _spec(h: str, m: int, u: float):
    from . import susy_flat as sf
    return sf.builtin(h, m, u)


def _index_oracle(spec) -> int:
    return 1 if spec.domain == "R" else 0


def _witten_fk_row(args):
    h, m, u, t, paths, steps, seed, sigmas = args
    from . import susy_flat as sf
    spec = _spec(h, m, u)
    t0 = time.perf_counter()
    est = sf.witten_index_fk(spec, t, paths, steps, seed)
    oracle = _index_oracle(spec)
    return Row("witten-index", {"h": h, "m": m, "u": u, "t": t, "route": "fk", "n_paths": paths,
                                "steps": steps, "seed": seed},
               est.value, est.stderr, oracle, abs(est.value - oracle) <= sigmas * est.stderr,
               time.perf_counter() - t0)


def run_witten_index(p, pool) -> list[Row]:
    m = p["m"]
    _check_paths(p["paths"], p["steps"])
    rows = []
    if "fk" in p["routes"]:
        jobs = [(p["h"], m, p["u"], t, p["paths"], p["steps"], p["seed"] + 7919 * k, p["sigmas"])
                for k, t in enumerate(p["t"])]
        rows += list(pool(_witten_fk_row, jobs))
    if "grid" in p["routes"]:
        from . import susy_flat as sf
        spec = _spec(p["h"], m, p["u"])
        t0 = time.perf_counter()
        vals = sf.grid_supertrace(spec, p["t"])
        dt = (time.perf_counter() - t0) / len(p["t"])
        oracle = _index_oracle(spec)
        for t, v in zip(p["t"], vals):
            rows.append(Row("witten-index", {"h": p["h"], "m": m, "u": p["u"], "t": t, "route": "grid"},
                            float(v), None, oracle, abs(float(v) - oracle) <= p["grid_tol"], dt))
    return rows


def _euler_row(args):
    name, t, paths, steps, seed, sigmas = args
    from . import geometry as geo
    surf = geo.surface(name)
    t0 = time.perf_counter()
    est = geo.euler_characteristic(surf, t, paths, steps, seed)
    return Row("euler-char", {"surface": name, "t": t, "n_paths": paths, "steps": steps, "seed": seed},
               est.value, est.stderr, surf.euler, abs(est.value - surf.euler) <= sigmas * est.stderr + 1e-12,
               time.perf_counter() - t0)


def run_euler_char(p, pool) -> list[Row]:
    _check_paths(p["paths"], p["steps"])
    jobs = [(p["surface"], t, p["paths"], p["steps"], p["seed"] + 7919 * k, p["sigmas"])
            for k, t in enumerate(p["t"])]
    return list(pool(_euler_row, jobs))


def _mehler_row(args):
    B, t, paths, steps, seed, rel_tol = args
    from . import susy_flat as sf
    t0 = time.perf_counter()
    est = sf.mehler_fk(B, t, paths, steps, seed)
    oracle = sf.mehler_kernel(B, t)
    return Row("mehler", {"B": B, "t": t, "n_paths": paths, "steps": steps, "seed": seed},
               est.value, est.stderr, oracle, abs(est.value - oracle) <= rel_tol * abs(oracle),
               time.perf_counter() - t0)


def run_mehler(p, pool) -> list[Row]:
    _check_paths(p["paths"], p["steps"])
    jobs = [(p["B"], t, p["paths"], p["steps"], p["seed"] + 7919 * k, p["rel_tol"]) for k, t in enumerate(p["t"])]
    return list(pool(_mehler_row, jobs))


def run_morse(p, pool) -> list[Row]:
    from . import morse_complex as mc
    from . import susy_flat as sf
    m = p["m"]
    spec = _spec(p["h"], m, p["u"])
    base = {"h": p["h"], "m": m, "u": p["u"]}
    t0 = time.perf_counter()
    cx = mc.morse_complex(spec)
    betti = mc.betti_numbers(cx)
    dt = time.perf_counter() - t0
    target = [math.comb(m, k) for k in range(m + 1)] if spec.domain == "torus" else [1] + [0] * m
    rows = [Row("morse.betti", {**base, "degree": k}, float(b), None, float(target[k]), b == target[k], dt)
            for k, b in enumerate(betti)]
    d2 = 0
    for k in range(m - 1):
        d2 = max(d2, int(np.max(np.abs(cx.coboundary(k + 1) @ cx.coboundary(k)), initial=0)))
    rows.append(Row("morse.d_squared", base, float(d2), None, 0.0, d2 == 0))
    perfect = cx.counts() == target
    for k in range(m):
        R = mc.rescaled_coboundary(spec, cx, k)
        val = float(np.max(np.abs(R), initial=0.0))
        # a perfect Morse function has a vanishing boundary operator
        rows.append(Row("morse.rescaled_coboundary", {**base, "degree": k}, val, None,
                        0.0 if perfect else None, (val == 0.0) if perfect else True))
    if p["grid"] > 0:
        grid = sf.default_grid(spec, p["grid"])
        for k in range(m):
            t0 = time.perf_counter()
            C = mc.tunneling_matrix(spec, cx, k)
            G, gaps = mc.grid_tunneling(spec, cx, k, grid)
            nz = C != 0
            if nz.any():
                dev = float(np.max(np.abs(G[nz] / C[nz] - 1.0)))
                ok = dev <= p["rel_tol"] and float(np.max(np.abs(G[~nz]), initial=0.0)) <= p["rel_tol"] * float(np.min(np.abs(C[nz])))
            else:
                dev = float(np.max(np.abs(G), initial=0.0))
                ok = dev <= 1e-8
            rows.append(Row("morse.tunneling_deviation", {**base, "degree": k, "grid": p["grid"],
                                                          "gap_ratios": [round(g, 6) for g in gaps]},
                            dev, None, 0.0, ok, time.perf_counter() - t0))
    return rows


def run_index_density(p, pool) -> list[Row]:
    from . import geometry as geo
    from .grassmann import check_budget
    m = p["m"]
    check_budget(m, "index density")
    if m > 8:
        raise BudgetError(f"dense budget: the brute-force oracle is limited to m <= 8, got m={m}")
    if p["curvature"] == "constant":
        R = geo.constant_curvature_data(m, p["K"])
    else:
        rng = np.random.default_rng(p["seed"])
        R = np.full((m, m, m, m), Fraction(0), dtype=object)
        for a in range(m):
            for b in range(a + 1, m):
                for i in range(m):
                    for j in range(i + 1, m):
                        v = Fraction(int(rng.integers(-3, 4)))
                        R[a, b, i, j], R[b, a, i, j], R[a, b, j, i], R[b, a, j, i] = v, -v, -v, v
    t0 = time.perf_counter()
    a = geo.index_density(m, R)
    b = geo.index_density_bruteforce(m, R)
    params = {"m": m, "curvature": p["curvature"], "K": str(p["K"]), "seed": p["seed"],
              "top_exact": str(a.top), "oracle_exact": str(b.top)}
    return [Row("index-density", params, float(a.top), None, float(b.top), a.top == b.top, time.perf_counter() - t0)]


def run_supertime(p, pool) -> list[Row]:
    from . import checks
    from . import supertime as st
    m, K = p["m"], p["K"]
    n_modes = (2 * K + 1) ** m
    if n_modes * 2 ** (m // 2) > DENSE_DIM_BUDGET:
        raise BudgetError(f"dense budget: {n_modes} modes x {2 ** (m // 2)} spinor components "
                          f"exceeds {DENSE_DIM_BUDGET}")
    rows = []
    r = checks.supertime_ftc(p["degree"])
    rows.append(Row("supertime.ftc", {"degree": p["degree"]}, r.value, None, 0.0, r.passed, r.seconds))
    r = checks.supertime_square(p["functions"], p["seed"])
    rows.append(Row("supertime.d_squared", {"functions": p["functions"], "seed": p["seed"]},
                    r.value, None, 0.0, r.passed, r.seconds))
    r = checks.dirac_projector((m,))
    rows.append(Row("supertime.projector", {"m": m}, r.value, None, 0.0, r.passed, r.seconds))
    t0 = time.perf_counter()
    space = st.dirac_space(m)
    D = st.dirac_operator(m, K, space)
    G = st.mode_grading(m, K, space)
    c = st.clifford_constant(D, m, K)
    base = {"m": m, "K": K, "modes": n_modes}
    rows.append(Row("supertime.clifford_constant", base, c, None, 1.0, abs(c - 1.0) <= 1e-12,
                    time.perf_counter() - t0))
    U = st.super_evolution(D, G)
    for t in p["t"]:
        t0 = time.perf_counter()
        res = st.evolution_identity_residual(D, G, t)
        heat = float(np.max(np.abs(U.even(t) - st.heat_semigroup(D, t))))
        rows.append(Row("supertime.evolution_identity", {**base, "t": t}, res, None, 0.0, res <= p["tol"],
                        time.perf_counter() - t0))
        rows.append(Row("supertime.heat_semigroup", {**base, "t": t}, heat, None, 0.0, heat <= 1e-10))
    tau0 = float(np.max(np.abs(U.odd_right(0.0) + D)))
    rows.append(Row("supertime.odd_part_at_zero", base, tau0, None, 0.0, tau0 <= 1e-12))
    return rows


def run_selftest(p, pool) -> list[Row]:
    from . import checks
    return [Row(f"selftest.{r.name}", {"detail": r.detail} if r.detail else {}, r.value, None, r.oracle,
                r.passed, r.seconds) for r in checks.run_all()]


RUNNERS = {
    "witten-index": run_witten_index,
    "euler-char": run_euler_char,
    "mehler": run_mehler,
    "morse": run_morse,
    "index-density": run_index_density,
    "supertime": run_supertime,
    "selftest": run_selftest,
}


# ---------------------------------------------------------------------------
# output

def _num(x) -> str:
    return "" if x is None else repr(float(x))


def render(command: str, params: dict, rows: list[Row], timing: bool) -> str:
    meta = {"version": __version__, "command": command, "seed": params.get("seed"),
            "params": {k: (str(v) if isinstance(v, Fraction) else v) for k, v in params.items()
                       if k not in ("output", "workers")},
            "build": {"python": platform.python_version(), "numpy": np.__version__,
                      "platform": platform.machine()}}
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([r.experiment, json.dumps(r.params, sort_keys=True), _num(r.estimate), _num(r.stderr),
                    _num(r.oracle), "1" if r.passed else "0", f"{r.seconds:.3f}" if timing else ""])
    return buf.getvalue()


def _serial(fn, jobs):
    return map(fn, jobs)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="superpaths", description="Super path integral experiments.")
    sub = ap.add_subparsers(dest="command")
    lp = sub.add_parser("list", help="print the experiment catalog")
    lp.add_argument("--format", choices=("text", "json"), default="text")
    for name, schema in SCHEMAS.items():
        sp_ = sub.add_parser(name, help=DESCRIPTIONS[name])
        sp_.add_argument("--config", help="key=value parameter file")
        sp_.add_argument("--timing", action="store_true", help="write wall-clock seconds (breaks byte identity)")
        for k, prm in {**schema, **COMMON}.items():
            sp_.add_argument(f"--{k.replace('_', '-')}", dest=k, default=None, help=prm.help)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command is None:
        sys.stdout.write(catalog_text())
        return EXIT_PASS
    if args.command == "list":
        sys.stdout.write(json.dumps(catalog(), indent=2, sort_keys=True) + "\n" if args.format == "json"
                         else catalog_text())
        return EXIT_PASS
    from .grassmann import GeneratorBudgetError
    try:
        file_values = read_config(args.config) if args.config else {}
        flags = {k: getattr(args, k) for k in {**SCHEMAS[args.command], **COMMON}}
        params = resolve(args.command, file_values, flags)
    except (UsageError, OSError) as exc:
        print(f"superpaths {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    workers = params["workers"]
    try:
        if workers > 1:
            with ProcessPoolExecutor(workers) as ex:
                rows = RUNNERS[args.command](params, ex.map)
        else:
            rows = RUNNERS[args.command](params, _serial)
    except (BudgetError, GeneratorBudgetError) as exc:
        print(f"superpaths {args.command}: budget exceeded: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = render(args.command, params, rows, args.timing)
    if params["output"] == "-":
        sys.stdout.write(text)
    else:
        with open(params["output"], "w", newline="") as fh:
            fh.write(text)
    for r in rows:
        print(f"{r.experiment} {json.dumps(r.params, sort_keys=True)} "
              f"{'PASS' if r.passed else 'FAIL'} {r.seconds:.2f}s", file=sys.stderr)
    return EXIT_PASS if all(r.passed for r in rows) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

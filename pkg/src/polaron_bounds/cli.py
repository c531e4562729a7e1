"""Command-line interface: sweeps, moment dumps and oracle self-checks.

Subcommands ``bounds``, ``figure``, ``moving``, ``moments`` and
``oracle-check``.  Options may also come from an INI file given with
``--config``: keys of the ``[sweep]`` section apply to every command, keys
of a section named after the command override them, and command-line flags
override both.  Exit codes: 0 success, 2 configuration error, 3 numerical
failure, 4 oracle-check failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Sequence

import numpy as np
from scipy import constants

from . import __version__
from .checks import k2_k3_report, oracle_battery
from .model import (
    ConvergenceError,
    SubsonicError,
    bound_moving,
    coupling_from_material,
    e_strong,
    e_var2,
    e_weak,
    effective_mass_estimate,
    energy_unit,
    solve_eta,
    strong_coupling_region,
    variational_energy,
)
from .params import FChoice, FVariant, Mode, PolaronParams
from .variational import MonotonicityError, NonRealRootError, SingularHankelError, bound_sequence
from .wick import (
    DEFAULT_MAX_ORDER,
    MomentOrderError,
    build_hamiltonian,
    dump_terms,
    moment_table,
    symbolic_central_moment,
    symbolic_moment,
)

log = logging.getLogger("polaron_bounds")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ORACLE = 0, 2, 3, 4
FIGURE_K0 = (0.5, 1.0, 2.0, 3.0)

DEFAULTS: dict[str, dict[str, Any]] = {
    "bounds": {"alpha": "1", "k0": "1", "orders": 2},
    "figure": {"alpha": "0.5:5:20", "k0": ",".join(map(str, FIGURE_K0)), "orders": 2},
    "moving": {"alpha": "1", "k0": "1", "P": "0,0.05,0.1,0.2", "f": "optimal_moving"},
    "moments": {"alpha": "1", "k0": "1", "P": "0", "max_order": DEFAULT_MAX_ORDER, "f": "optimal_rest"},
    "oracle-check": {"seed": 0, "models": 20, "n_max": 4, "orders": 3},
}
COMMON = {"mode": "float", "format": "csv", "output": "-", "workers": 1, "engine_cap": DEFAULT_MAX_ORDER,
          "material": None}
NUMERIC_ERRORS = (SingularHankelError, NonRealRootError, MonotonicityError, ConvergenceError,
                  SubsonicError, ArithmeticError, np.linalg.LinAlgError)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def parse_grid(spec: str, name: str, allow_zero: bool = False) -> list[float]:
    """``"a,b,c"`` or ``"start:stop:num"`` (inclusive linspace)."""
    spec = str(spec).strip()
    try:
        if ":" in spec:
            start, stop, num = spec.split(":")
            n = int(num)
            if n < 1:
                raise ValueError
            values = [float(x) for x in np.linspace(float(start), float(stop), n)]
        else:
            values = [float(x) for x in spec.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad grid for {name}: {spec!r}") from None
    if not values:
        raise ConfigError(f"empty grid for {name}")
    for v in values:
        if not math.isfinite(v) or v < 0 or (v == 0 and not allow_zero):
            raise ConfigError(f"{name} values must be {'non-negative' if allow_zero else 'positive'}, got {v}")
    return values


def parse_material(spec: str) -> dict[str, float]:
    """``D,rho,s,m`` or ``D=..,rho=..,s=..,m=..`` in SI units."""
    keys = ("D", "rho", "s", "m")
    parts = [p.strip() for p in str(spec).split(",") if p.strip()]
    try:
        if all("=" in p for p in parts):
            values = {k.strip(): float(v) for k, v in (p.split("=", 1) for p in parts)}
        else:
            values = dict(zip(keys, map(float, parts)))
    except ValueError:
        raise ConfigError(f"bad material spec {spec!r}") from None
    if set(values) != set(keys) or len(parts) != 4:
        raise ConfigError("material needs exactly D, rho, s, m (SI units)")
    if any(not v > 0 for v in values.values()):
        raise ConfigError("material constants must be positive")
    return values


class Settings:
    """Resolved options: flag > [command] section > [sweep] section > default."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self._args = args
        self._file: dict[str, str] = {}
        if getattr(args, "config", None):
            cp = configparser.ConfigParser()
            cp.optionxform = str
            try:
                with open(args.config, encoding="utf-8") as fh:
                    cp.read_file(fh)
            except (OSError, configparser.Error) as exc:
                raise ConfigError(f"cannot read config {args.config!r}: {exc}") from None
            for section in ("sweep", command):
                if cp.has_section(section):
                    self._file.update({k.replace("-", "_"): v for k, v in cp.items(section)})

    def get(self, key: str, cast: Callable = str):
        value = getattr(self._args, key, None)
        if value is None:
            value = self._file.get(key)
        if value is None:
            value = DEFAULTS.get(self.command, {}).get(key, COMMON.get(key))
        if value is None:
            return None
        try:
            return cast(value)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {key}: {value!r}") from None


def _mode(value) -> Mode:
    try:
        return Mode(str(value))
    except ValueError:
        raise ConfigError(f"mode must be exact or float, got {value!r}") from None


def _fmt(value) -> str:
    value = str(value)
    if value not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {value!r}")
    return value


def _positive_int(value) -> int:
    n = int(value)
    if n < 1:
        raise ValueError
    return n


# ---------------------------------------------------------------------------
# output


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _json_value(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def render(command: str, columns: Sequence[str], rows: Sequence[Sequence], fmt: str,
           summary: Sequence[dict] = (), meta: dict | None = None) -> str:
    if fmt == "json":
        doc = {
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "columns": list(columns),
            "rows": [[_json_value(x) for x in row] for row in rows],
            "summary": [{k: _json_value(v) for k, v in s.items()} for s in summary],
            "meta": meta or {},
        }
        return json.dumps(doc, indent=1) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(x) for x in row])
    for s in summary:
        buf.write("# " + " ".join(f"{k}={_cell(v)}" for k, v in s.items()) + "\n")
    return buf.getvalue()


def emit(text: str, path: str):
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def run_pool(fn: Callable, tasks: list, workers: int) -> list:
    """Map ``fn`` over ``tasks``; results come back in task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# bounds / figure


def bounds_columns(orders: int, material: bool = False) -> list[str]:
    cols = ["alpha", "k0", "E_W", "E_SC", "E_var2", "E_var2_engine"]
    cols += [f"bound_{n}" for n in range(1, orders + 1)]
    cols += [f"gap_{n}" for n in range(2, orders + 1)]
    cols += ["strong_coupling"]
    if material:
        cols += ["E_W_eV", "E_SC_eV", "E_var2_eV", "E_var2_engine_eV"] + [f"bound_{n}_eV" for n in range(1, orders + 1)]
    return cols


def bounds_point(task) -> list:
    alpha, k0, orders, mode, cap, unit_ev = task
    spec = build_hamiltonian(PolaronParams(alpha, k0, mode=mode), FChoice(FVariant.OPTIMAL_REST), max_order=cap)
    t = moment_table(spec, 2 * orders - 1)
    seq = bound_sequence(t, orders)
    bounds = [r.bound for r in seq] + [None] * (orders - len(seq))
    gaps = [r.gap for r in seq[1:]] + [None] * (orders - max(len(seq), 1))
    energies = [e_weak(alpha, k0), e_strong(alpha, k0), e_var2(alpha, k0), e_var2(alpha, k0, "engine")]
    row = [alpha, k0] + energies + bounds + gaps + [strong_coupling_region(alpha, k0)]
    if unit_ev is not None:
        row += [None if e is None else e * unit_ev for e in energies + bounds]
    return row


def cmd_bounds(st: Settings) -> tuple[list[str], list[list], list[dict], dict]:
    orders = st.get("orders", _positive_int)
    cap = st.get("engine_cap", _positive_int)
    if 2 * orders - 1 > cap:
        raise ConfigError(f"orders={orders} needs moments up to {2 * orders - 1}, above the engine cap {cap}")
    mode = st.get("mode", _mode)
    k0s = parse_grid(st.get("k0"), "k0")
    meta: dict[str, Any] = {"orders": orders, "mode": mode.value}
    material = st.get("material")
    unit_ev = None
    if material:
        mat = parse_material(material)
        alphas = [coupling_from_material(**mat)]
        unit_ev = energy_unit(mat["s"], mat["m"]) / constants.e
        meta.update(material=mat, energy_unit_eV=unit_ev)
    else:
        alphas = parse_grid(st.get("alpha"), "alpha")
    tasks = [(a, k, orders, mode, cap, unit_ev) for k in k0s for a in alphas]
    rows = run_pool(bounds_point, tasks, st.get("workers", _positive_int))
    return bounds_columns(orders, unit_ev is not None), rows, [], meta


# ---------------------------------------------------------------------------
# moving polaron


MOVING_COLUMNS = ["alpha", "k0", "P", "eta", "eta_residual", "bound_moving", "E_W", "status"]


def moving_point(task) -> list:
    alpha, k0, P, variant = task
    params = PolaronParams(alpha, k0, P)
    f = FChoice(variant)
    try:
        if variant is FVariant.SIMPLEST:
            eta = res = None
            value = variational_energy(params, f)
        elif P == 0:
            eta, res = 0.0, 0.0
            value = bound_moving(params, 0.0)
        else:
            sol = solve_eta(params, f)
            eta, res = sol.eta, sol.residual
            value = bound_moving(params, eta) if variant is FVariant.OPTIMAL_MOVING else variational_energy(params, f, eta)
        status = "ok"
    except SubsonicError:
        eta = res = value = None
        status = "subsonic"
    return [alpha, k0, P, eta, res, value, e_weak(alpha, k0), status]


def mass_point(task) -> dict:
    alpha, k0, Ps = task
    fit = effective_mass_estimate(alpha, k0, Ps)
    return {"alpha": alpha, "k0": k0, "m_eff": fit.m_eff, "fit_residual": fit.residual}


def cmd_moving(st: Settings):
    variant = FVariant(st.get("f"))
    if variant not in (FVariant.OPTIMAL_MOVING, FVariant.COMPROMISE, FVariant.SIMPLEST):
        raise ConfigError("moving supports f = optimal_moving, compromise or simplest")
    alphas = parse_grid(st.get("alpha"), "alpha")
    k0s = parse_grid(st.get("k0"), "k0")
    Ps = parse_grid(st.get("P"), "P", allow_zero=True)
    workers = st.get("workers", _positive_int)
    tasks = [(a, k, p, variant) for k in k0s for a in alphas for p in Ps]
    rows = run_pool(moving_point, tasks, workers)
    positive = sorted(p for p in set(Ps) if 0 < p < 0.5)
    fit_Ps = positive if len(positive) >= 3 else [0.05, 0.1, 0.2]
    summary = run_pool(mass_point, [(a, k, tuple(fit_Ps)) for k in k0s for a in alphas], workers)
    return MOVING_COLUMNS, rows, summary, {"f": variant.value}


# ---------------------------------------------------------------------------
# moments


def cmd_moments(st: Settings):
    mode = st.get("mode", _mode)
    m_max = st.get("max_order", int)
    cap = st.get("engine_cap", _positive_int)
    if m_max < 1:
        raise ConfigError("max_order must be at least 1")
    if m_max > cap:
        raise ConfigError(f"max_order={m_max} exceeds the engine cap {cap}; raise --engine-cap explicitly")
    variant = FVariant(st.get("f"))
    if variant not in (FVariant.OPTIMAL_REST, FVariant.SIMPLEST, FVariant.ZERO):
        raise ConfigError("moments supports f = optimal_rest, simplest or zero")
    alphas = parse_grid(st.get("alpha"), "alpha")
    k0s = parse_grid(st.get("k0"), "k0")
    Ps = parse_grid(st.get("P"), "P", allow_zero=True)
    exact = mode is Mode.EXACT
    cols = ["alpha", "k0", "P", "m", "M_m", "K_m"] + (["closed_form"] if exact else [])
    rows = []
    terms_path = st.get("terms")
    dump = open(terms_path, "w", encoding="utf-8") if terms_path else None
    try:
        for k0 in k0s:
            for a in alphas:
                for P in Ps:
                    spec = build_hamiltonian(PolaronParams(a, k0, P, mode), FChoice(variant), max_order=cap)
                    t = moment_table(spec, m_max)
                    for m in range(m_max + 1):
                        row = [a, k0, P, m, t.raw[m], None if m < 2 else t.central[m]]
                        if exact:
                            if m == 0:
                                cf = "1"
                            elif m == 1:
                                cf = repr(symbolic_moment(spec, 1))
                            else:
                                cf = repr(symbolic_central_moment(spec, m))
                            row.append(cf)
                        rows.append(row)
                    if dump:
                        for m in range(1, m_max + 1):
                            dump.write(f"## alpha={a!r} k0={k0!r} P={P!r} m={m}\n")
                            dump_terms(spec, m, dump)
    finally:
        if dump:
            dump.close()
    return cols, rows, [], {"mode": mode.value, "f": variant.value}


# ---------------------------------------------------------------------------
# oracle check


def cmd_oracle_check(st: Settings) -> int:
    seed = st.get("seed", int)
    battery = oracle_battery(seed=seed, n_models=st.get("models", _positive_int), n_max=st.get("n_max", _positive_int),
                             orders=st.get("orders", _positive_int), tampered=bool(st.get("tamper", _truthy)))
    lines = [f"# oracle battery seed={seed}"] + [str(x) for x in battery.lines]
    ok = battery.passed
    if st.get("arbitration", _truthy):
        report = k2_k3_report()
        lines += [str(report)]
        ok = ok and report.engine_vs_oracle_ok
    lines.append(f"OVERALL {'PASS' if ok else 'FAIL'}")
    fmt = st.get("format", _fmt)
    if fmt == "json":
        doc = {"schema_version": SCHEMA_VERSION, "command": "oracle-check", "seed": seed, "passed": ok,
               "checks": [{"name": x.name, "passed": x.passed, "margin": _json_value(x.margin), "detail": x.detail}
                          for x in battery.lines]}
        text = json.dumps(doc, indent=1) + "\n"
    else:
        text = "\n".join(lines) + "\n"
    emit(text, st.get("output"))
    return EXIT_OK if ok else EXIT_ORACLE


def _truthy(value) -> bool:
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(value)


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polaron-bounds", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, table=True):
        sp.add_argument("--config", help="INI file; [sweep] and [<command>] sections")
        sp.add_argument("--output", "-o", help="output path ('-' for stdout)")
        sp.add_argument("--format", choices=("csv", "json"))
        if table:
            sp.add_argument("--workers", type=int, help="worker processes (output does not depend on it)")
            sp.add_argument("--mode", choices=("exact", "float"))
            sp.add_argument("--engine-cap", dest="engine_cap", type=int, help="largest moment order")

    for name, helptext in (("bounds", "bounds on an (alpha, k0) grid"),
                           ("figure", "bounds with the k0 presets 0.5, 1, 2, 3")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--alpha", help="grid: a,b,c or start:stop:num")
        sp.add_argument("--k0", help="grid: a,b,c or start:stop:num")
        sp.add_argument("--orders", type=int, help="highest variational order")
        sp.add_argument("--material", help="D,rho,s,m in SI units; alpha is derived and eV columns are added")

    sp = sub.add_parser("moving", help="moving-polaron bound and effective mass")
    common(sp)
    sp.add_argument("--alpha")
    sp.add_argument("--k0")
    sp.add_argument("--P", dest="P", help="momentum grid (may include 0)")
    sp.add_argument("--f", choices=("optimal_moving", "compromise", "simplest"))

    sp = sub.add_parser("moments", help="vacuum moments and central moments")
    common(sp)
    sp.add_argument("--alpha")
    sp.add_argument("--k0")
    sp.add_argument("--P", dest="P")
    sp.add_argument("--max-order", dest="max_order", type=int)
    sp.add_argument("--f", choices=("optimal_rest", "simplest", "zero"))
    sp.add_argument("--terms", help="also write the contraction term lists to this file")

    sp = sub.add_parser("oracle-check", help="run the oracle battery")
    common(sp, table=False)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--models", type=int)
    sp.add_argument("--n-max", dest="n_max", type=int)
    sp.add_argument("--orders", type=int)
    sp.add_argument("--tamper", action="store_const", const=True, help="scale every M_3 by 1.1 (fault injection)")
    sp.add_argument("--arbitration", action="store_const", const=True, help="append the K2/K3 comparison report")
    return p


COMMANDS = {"bounds": cmd_bounds, "figure": cmd_bounds, "moving": cmd_moving, "moments": cmd_moments}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        st = Settings(args.command, args)
        if args.command == "oracle-check":
            return cmd_oracle_check(st)
        columns, rows, summary, meta = COMMANDS[args.command](st)
        emit(render(args.command, columns, rows, st.get("format", _fmt), summary, meta), st.get("output"))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MomentOrderError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        if isinstance(exc, NUMERIC_ERRORS):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

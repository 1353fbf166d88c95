"""Command-line entry point: symbolic suites, solver runs, numerical checks.

Exit codes are the machine contract: 0 when every requested verification
passes, 1 when any identity or tolerance fails, 2 on configuration or
runtime errors.  Every run writes ``report.json`` (deterministic),
``report.txt`` (human table), data CSVs, and ``manifest.json`` (config echo,
versions, seed, timing; timing makes the manifest the one artifact excluded
from the byte-identical guarantee).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np
import scipy

from . import __version__
from .grids import Grid2D, ScalarField2D, write_binary, write_csv
from .operators import (
    CLASSICAL_CASES,
    MHD_CASES,
    CancellationField,
    commutator_with_directional,
    prandtl_operator,
    prandtl_system,
    cancellation_hypothesis_rules,
    verify_classical,
    verify_mhd,
)
from .solver import (
    MhdState,
    PrandtlState,
    SolverConfig,
    outer_flow_preset,
    run as run_solver,
)
from .verify import (
    commutator_residual_numeric,
    convergence_order,
    fit_order,
    manufactured_residual,
    mhd_solver_case,
    mhd_standard_case,
    prandtl_standard_case,
    radius_inequality_check,
)

COMMANDS = ("verify-symbolic", "solve", "verify-numeric", "convergence",
            "radius-check", "report")

ORDER_WINDOW = (1.8, 2.2)
PAIR_FLOOR = 0.01


class ConfigValidationError(Exception):
    """A configuration key is unknown or has the wrong type."""


# ---------------------------------------------------------------------------
# Configuration schema: every known key with its type and default
# ---------------------------------------------------------------------------

_SCHEMA: dict[str, dict[str, tuple[type, Any]]] = {
    "grid": {
        "nx": (int, 64),
        "nz": (int, 65),
        "Z": (float, 10.0),
    },
    "symbolic": {
        "cases": (list, sorted(CLASSICAL_CASES) + sorted(MHD_CASES)),
        "negative_controls": (bool, True),
    },
    "solver": {
        "model": (str, "prandtl"),
        "mu": (float, 0.1),
        "kappa": (float, 0.15),
        "dt": (float, 0.0),  # 0 means advective auto step
        "cfl": (float, 0.5),
        "scheme": (str, "upwind1"),
        "t_end": (float, 0.5),
        "dt_max": (float, 0.05),
        "initial": (str, "boundary_layer"),
    },
    "outer": {
        "preset": (str, "uniform"),
        "u0": (float, 1.0),
        "amplitude": (float, 0.1),
        "decay": (float, 0.25),
        "f0": (float, 1.0),
    },
    "numeric": {
        "grids": (list, [32, 64, 128]),
        "identities": (list, ["theta_uzz", "f1_g1", "directional_g1",
                              "mhd_theta_h", "mhd_f_u1", "recovery"]),
        "commutator": (bool, True),
    },
    "convergence": {
        "target": (str, "solver_prandtl"),
        "grids": (list, [32, 64, 128]),
        "dt0": (float, 0.01),
        "t_end": (float, 0.25),
    },
    "radius": {
        "m_max": (int, 1000),
        "rho": (float, 1.0),
        "samples": (int, 1000),
    },
    "output": {
        "format": (str, "csv"),
        "snapshot_every": (int, 0),
        "directory": (str, ""),
    },
}


@dataclass
class RunConfig:
    command: str
    settings: dict
    output_dir: Path
    verbosity: int = 0
    seed: int = 0


def _coerce(section: str, key: str, value, expected: type):
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if expected is bool:
        if not isinstance(value, bool):
            raise ConfigValidationError(f"key '{section}.{key}' must be a boolean")
        return value
    if not isinstance(value, expected):
        raise ConfigValidationError(
            f"key '{section}.{key}' must be {expected.__name__}, "
            f"got {type(value).__name__}")
    return value


def validate_settings(raw: dict) -> dict:
    """Materialize defaults and reject unknown keys loudly."""
    for section in raw:
        if section not in _SCHEMA:
            raise ConfigValidationError(f"unknown section '{section}'")
        if not isinstance(raw[section], dict):
            raise ConfigValidationError(f"section '{section}' must be a table")
        for key in raw[section]:
            if key not in _SCHEMA[section]:
                raise ConfigValidationError(
                    f"unknown key '{key}' in section '{section}'")
    settings: dict = {}
    for section, keys in _SCHEMA.items():
        settings[section] = {}
        for key, (expected, default) in keys.items():
            if section in raw and key in raw[section]:
                settings[section][key] = _coerce(section, key, raw[section][key], expected)
            else:
                settings[section][key] = default
    return settings


def parse_config(path: Optional[Path], command: str, output_dir: Path,
                 verbosity: int = 0, seed: int = 0) -> RunConfig:
    raw: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    return RunConfig(command=command, settings=validate_settings(raw),
                     output_dir=Path(output_dir), verbosity=verbosity, seed=seed)


def emit_toml(settings: dict) -> str:
    """Write the materialized settings back out as TOML."""
    lines = []
    for section in sorted(settings):
        lines.append(f"[{section}]")
        for key in sorted(settings[section]):
            lines.append(f"{key} = {_toml_value(settings[section][key])}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int,)):
        return str(v)
    if isinstance(v, float):
        s = repr(v)
        return s if ("." in s or "e" in s or "inf" in s or "nan" in s) else s + ".0"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigValidationError(f"cannot emit value {v!r}")


# ---------------------------------------------------------------------------
# Command implementations: each returns (passed, results-dict, csv-map)
# ---------------------------------------------------------------------------

def _cmd_verify_symbolic(cfg: RunConfig):
    wanted = cfg.settings["symbolic"]["cases"]
    results = []
    passed = True
    for case in wanted:
        if case in CLASSICAL_CASES:
            report = verify_classical(case)
        elif case in MHD_CASES:
            report = verify_mhd(case)
        else:
            raise ConfigValidationError(f"unknown symbolic case '{case}'")
        results.append(report.to_dict(include_trace=cfg.verbosity >= 2))
        passed = passed and report.proved

    if cfg.settings["symbolic"]["negative_controls"]:
        # Both controls are required to FAIL; a passing control fails the run.
        control = commutator_with_directional(
            prandtl_operator(), CancellationField.unit_x(), prandtl_system())
        entry = control.to_dict(include_trace=cfg.verbosity >= 2)
        entry["identity"] = "negative_control_unit_x"
        entry["expected"] = "failed"
        results.append(entry)
        passed = passed and (control.status == "failed")

        no_div = verify_classical(
            "theta_uzz", system=prandtl_system(include_divergence=False))
        entry = no_div.to_dict(include_trace=cfg.verbosity >= 2)
        entry["identity"] = "negative_control_no_divergence"
        entry["expected"] = "failed"
        results.append(entry)
        passed = passed and (no_div.status == "failed")

        hyp = commutator_with_directional(
            prandtl_operator(), CancellationField.generic(),
            prandtl_system(extra_rules=cancellation_hypothesis_rules("mu")))
        entry = hyp.to_dict(include_trace=cfg.verbosity >= 2)
        entry["identity"] = "generic_field_with_hypothesis"
        results.append(entry)
        pair_shown = any(t.get("event") == "cancelling_pair" for t in hyp.trace)
        passed = passed and hyp.proved and pair_shown

    return passed, {"cases": results}, {}


def _case_for_identity(identity: str, settings: dict):
    if identity.startswith("mhd"):
        return mhd_standard_case()
    return prandtl_standard_case()


def _cmd_verify_numeric(cfg: RunConfig):
    ns = cfg.settings["numeric"]
    Z = cfg.settings["grid"]["Z"]
    grids = [Grid2D(n, n + 1, Z) for n in ns["grids"]]
    results = {"identities": [], "commutator": []}
    csv_rows = [("identity", "nx", "h", "max_error", "rms_error")]
    passed = True

    for identity in ns["identities"]:
        case = _case_for_identity(identity, cfg.settings)
        errors = []
        for grid in grids:
            res = manufactured_residual(case, identity, grid)
            errors.append(res)
            csv_rows.append((identity, grid.nx, grid.dx, res["max"], res["rms"]))
        hs = [g.dx for g in grids]
        order, interval, _ = fit_order(hs, [e["max"] for e in errors])
        ok = ORDER_WINDOW[0] <= order <= ORDER_WINDOW[1]
        passed = passed and ok
        results["identities"].append({
            "identity": identity, "case": case.name,
            "errors_max": [e["max"] for e in errors],
            "order": order, "order_interval": list(interval),
            "order_window": list(ORDER_WINDOW), "passed": ok,
        })

    if ns["commutator"]:
        for theta in ("classical", "mhd"):
            case = mhd_standard_case() if theta == "mhd" else prandtl_standard_case()
            sums, members = [], []
            for grid in grids:
                rep = commutator_residual_numeric(case, theta, grid)
                sums.append(rep.pair_sum_max)
                members.append(min(rep.pair_plus_max, rep.pair_minus_max))
                csv_rows.append((f"commutator_{theta}_pair_sum", grid.nx,
                                 grid.dx, rep.pair_sum_max, rep.pair_sum_max))
            order, interval, _ = fit_order([g.dx for g in grids], sums)
            ok = (min(members) >= PAIR_FLOOR) and (order >= ORDER_WINDOW[0])
            passed = passed and ok
            results["commutator"].append({
                "theta": theta, "pair_member_min": min(members),
                "pair_member_floor": PAIR_FLOOR,
                "pair_sums": sums, "order": order, "passed": ok,
            })
        # negative control: the plain tangential direction must keep an
        # order-one, order-two-weighted term
        rep = commutator_residual_numeric(
            prandtl_standard_case(), "unit_x", grids[0])
        ok = rep.order2_part_max >= PAIR_FLOOR
        passed = passed and ok
        results["commutator"].append({
            "theta": "unit_x", "order2_part_max": rep.order2_part_max,
            "expected": "large (control must fail cancellation)", "passed": ok,
        })

    return passed, results, {"errors.csv": csv_rows}


def _cmd_convergence(cfg: RunConfig):
    cs = cfg.settings["convergence"]
    Z = cfg.settings["grid"]["Z"]
    grids = [Grid2D(n, n + 1, Z) for n in cs["grids"]]
    target = cs["target"]
    if target == "solver_mhd":
        case = mhd_solver_case()
    elif target.startswith("mhd"):
        case = mhd_standard_case()
    else:
        case = prandtl_standard_case()
    kw = {}
    if target.startswith("solver"):
        kw = {"dt0": cs["dt0"], "t_end": cs["t_end"], "n0": grids[0].nx}
    report = convergence_order(case, target, grids, **kw)
    ok = ORDER_WINDOW[0] <= report.order <= ORDER_WINDOW[1]
    csv_rows = [("nx", "h", "max_error", "rms_error")]
    for (nx, _), h, e_max, e_rms in zip(report.grids, report.h,
                                        report.errors_max, report.errors_rms):
        csv_rows.append((nx, h, e_max, e_rms))
    results = report.to_dict()
    results["order_window"] = list(ORDER_WINDOW)
    results["passed"] = ok
    return ok, results, {"convergence.csv": csv_rows}


def _cmd_radius(cfg: RunConfig):
    rs = cfg.settings["radius"]
    report = radius_inequality_check(rs["m_max"], rs["rho"], rs["samples"],
                                     seed=cfg.seed)
    ok = report.all_below_one and report.maximizer_mismatch <= 1e-9
    results = report.to_dict()
    results["passed"] = ok
    csv_rows = [("m", "max_q")]
    csv_rows.extend((m + 1, q) for m, q in enumerate(report.per_m_max))
    return ok, results, {"radius.csv": csv_rows}


def _build_initial_state(cfg: RunConfig):
    g = cfg.settings["grid"]
    grid = Grid2D(g["nx"], g["nz"], g["Z"])
    s = cfg.settings["solver"]
    o = cfg.settings["outer"]
    mhd = s["model"] == "mhd"
    outer_kw = {"u0": o["u0"], "amplitude": o["amplitude"], "decay": o["decay"]}
    if mhd:
        outer_kw["f0"] = o["f0"]
    outer = outer_flow_preset(o["preset"], **outer_kw)

    X, Zm = grid.mesh()
    if s["initial"] == "zero":
        uvals = np.zeros_like(X)
    elif s["initial"] == "boundary_layer":
        uvals = outer.lid_u(0.0, grid.x)[:, None] * (1.0 - np.exp(-Zm))
    else:
        raise ConfigValidationError(f"unknown initial condition '{s['initial']}'")
    uvals[:, 0] = 0.0
    uvals[:, -1] = outer.lid_u(0.0, grid.x)
    u = ScalarField2D(grid, uvals)

    solver_cfg = SolverConfig(
        mu=s["mu"], kappa=s["kappa"] if mhd else 0.0,
        dt=s["dt"] if s["dt"] > 0 else None,
        cfl=s["cfl"], scheme=s["scheme"], t_end=s["t_end"],
        dt_max=s["dt_max"],
        snapshot_every=cfg.settings["output"]["snapshot_every"])
    if mhd:
        f = ScalarField2D(grid, np.full_like(X, o["f0"]))
        state = MhdState.from_uf(0.0, u, f, outer)
    else:
        state = PrandtlState.from_u(0.0, u, outer)
    return state, solver_cfg


def _snapshot_fields(state) -> dict[str, ScalarField2D]:
    fields = {"u": state.u, "w": state.w}
    if isinstance(state, MhdState):
        fields.update({"f": state.f, "h": state.h, "psi": state.psi})
    return fields


def _cmd_solve(cfg: RunConfig):
    state, solver_cfg = _build_initial_state(cfg)
    result = run_solver(state, solver_cfg)
    fmt = cfg.settings["output"]["format"]
    if fmt not in ("csv", "binary", "both"):
        raise ConfigValidationError(f"unknown output format '{fmt}'")
    written = []
    snaps = list(result.snapshots)
    if not snaps or snaps[-1].t != result.final.t:
        snaps.append(result.final)
    for idx, snap in enumerate(snaps):
        for name, field in _snapshot_fields(snap).items():
            stem = cfg.output_dir / f"snapshot_{idx:04d}_{name}"
            if fmt in ("csv", "both"):
                write_csv(stem.with_suffix(".csv"), field)
                written.append(stem.with_suffix(".csv").name)
            if fmt in ("binary", "both"):
                write_binary(stem.with_suffix(".bin"), field)
                written.append(stem.with_suffix(".bin").name)
    results = {
        "model": cfg.settings["solver"]["model"],
        "steps": result.steps,
        "t_final": result.final.t,
        "max_u": float(np.max(np.abs(result.final.u.values))),
        "snapshots_written": written,
    }
    return True, results, {}


def _cmd_report(cfg: RunConfig):
    path = cfg.output_dir / "report.json"
    if not path.exists():
        raise FileNotFoundError(f"no report at {path}")
    with open(path) as fh:
        data = json.load(fh)
    print(render_table(data))
    return data.get("passed", False), data, {}


_RUNNERS = {
    "verify-symbolic": _cmd_verify_symbolic,
    "verify-numeric": _cmd_verify_numeric,
    "convergence": _cmd_convergence,
    "radius-check": _cmd_radius,
    "solve": _cmd_solve,
    "report": _cmd_report,
}


# ---------------------------------------------------------------------------
# Rendering and artifacts
# ---------------------------------------------------------------------------

def render_table(report: dict) -> str:
    """Aligned text rendering of a report, for people."""
    rows: list[tuple[str, str]] = [("command", str(report.get("command", "?")))]
    results = report.get("results", {})

    def walk(prefix: str, obj):
        if isinstance(obj, dict):
            if "identity" in obj and "status" in obj:
                rows.append((obj["identity"], obj["status"]))
                return
            if "identity" in obj and "passed" in obj:
                rows.append((obj["identity"],
                             f"order {obj.get('order', float('nan')):.3f} "
                             f"{'pass' if obj['passed'] else 'FAIL'}"))
                return
            for k, v in obj.items():
                walk(f"{prefix}{k}.", v)
        elif isinstance(obj, list):
            for item in obj:
                walk(prefix, item)
        else:
            rows.append((prefix.rstrip("."), str(obj)))

    walk("", results)
    rows.append(("passed", str(report.get("passed"))))
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def _write_csv_rows(path: Path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(",".join(_csv_cell(c) for c in row) + "\n")


def _csv_cell(c) -> str:
    if isinstance(c, float):
        return f"{c:.17g}"
    return str(c)


def execute(cfg: RunConfig) -> int:
    """Run the command, write artifacts, and return the exit status."""
    started = time.monotonic()
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    try:
        passed, results, csvs = _RUNNERS[cfg.command](cfg)
    except (ConfigValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2

    if cfg.command == "report":
        # re-rendering an existing report must not overwrite it
        return 0 if passed else 1

    report = {
        "command": cfg.command,
        "config": cfg.settings,
        "seed": cfg.seed,
        "results": results,
        "passed": bool(passed),
    }
    report_json = json.dumps(report, indent=2, sort_keys=True)
    (cfg.output_dir / "report.json").write_text(report_json + "\n")
    (cfg.output_dir / "report.txt").write_text(render_table(report) + "\n")
    for name, rows in csvs.items():
        _write_csv_rows(cfg.output_dir / name, rows)

    manifest = {
        "command": cfg.command,
        "config": cfg.settings,
        "config_echo_toml": emit_toml(cfg.settings),
        "config_hash": hashlib.sha256(report_json.encode()).hexdigest()[:16],
        "seed": cfg.seed,
        "versions": {
            "cancelfield": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
        "timing_seconds": time.monotonic() - started,
    }
    (cfg.output_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    if cfg.verbosity >= 1 and cfg.command != "report":
        print(render_table(report))
    return 0 if passed else 1


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="cancelfield",
        description="Verify boundary-layer cancellation identities "
                    "symbolically and numerically, and run the solvers.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, default=None,
                        help="TOML configuration (defaults apply if omitted)")
    parser.add_argument("--out", type=Path, default=Path("cancelfield-out"),
                        help="output directory for reports and data")
    parser.add_argument("--verbose", type=int, default=0, choices=(0, 1, 2),
                        help="0 quiet, 1 table to stdout, 2 full traces in the report")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for randomized probe points")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config, args.command, args.out,
                           verbosity=args.verbose, seed=args.seed)
    except (ConfigValidationError, tomllib.TOMLDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if cfg.settings["output"]["directory"]:
        cfg.output_dir = Path(cfg.settings["output"]["directory"])
    return execute(cfg)


if __name__ == "__main__":
    raise SystemExit(main())

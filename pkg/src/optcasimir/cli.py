"""Command-line front end.

Subcommands::

    energy   --config FILE                      per-class table and totals
    sweep    --config FILE --xi-min A --xi-max B --points N
    map      --config FILE --grid N              integrand on an (r, z) grid
    validate                                    quick oracle checks

The config file has ``[geometry]``, ``[physics]``, ``[integration]`` and
``[output]`` sections; unknown sections or keys are rejected with the line
on which they appear.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import subprocess
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .energy import (PhysicalParams, finite_energy, integrand_map, pfa_energy,
                     pfa_star_energy, total_energy)
from .numerics import IntegratorConfig
from .scenes import ConfigError, SceneConfig, build_scene

SCHEMA = {
    "geometry": {"kind": str, "a": float, "L": float, "R": float},
    "physics": {"mass": float, "bc": str, "eps": float, "max_reflections": int},
    "integration": {"samples": int, "seed": int, "strata": str, "rtol": float,
                    "max_passes": int, "method": str},
    "output": {"format": str, "path": str, "grid": int, "length_unit": str},
}
REQUIRED = {"geometry": ("kind", "a")}


@dataclass
class RunConfig:
    scene: SceneConfig
    physics: PhysicalParams
    integrator: IntegratorConfig
    max_reflections: int = 4
    method: Optional[str] = None
    fmt: str = "csv"
    path: Optional[str] = None
    grid: int = 32
    length_unit: str = "length"
    raw: Dict[str, Dict[str, str]] = field(default_factory=dict)

    def __post_init__(self):
        if self.fmt not in ("csv", "json"):
            raise ConfigError("output format must be csv or json")
        if self.grid < 8:
            raise ConfigError("grid resolution must be at least 8")
        if self.max_reflections < 2:
            raise ConfigError("max_reflections must be at least 2")
        if self.method not in (None, "mc", "cubature"):
            raise ConfigError("method must be auto, mc or cubature")


def _line_of(text: str, section: str, key: Optional[str] = None) -> int:
    """1-based line of ``[section]`` (or of ``key`` inside it); 0 if not found."""
    current = None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section and s and s[0] not in "#;":
            name = s.split("=", 1)[0].split(":", 1)[0].strip()
            if name == key:
                return no
    return 0


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse and validate a run configuration.

    Raises
    ------
    ConfigError
        With a ``source:line:`` prefix pointing at the offending entry.
    """
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: duplicate key {exc.option!r}") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: duplicate section {exc.section!r}") from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: entry before any [section]") from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else 0
        raise ConfigError(f"{source}:{lineno}: cannot parse line") from None

    def fail(section, key, msg):
        raise ConfigError(f"{source}:{_line_of(text, section, key)}: {msg}")

    values: Dict[str, Dict[str, object]] = {}
    raw: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            fail(section, None, f"unknown section [{section}]")
        values[section] = {}
        raw[section] = {}
        for key, val in parser.items(section):
            if key not in SCHEMA[section]:
                fail(section, key, f"unknown key {key!r} in [{section}]")
            kind = SCHEMA[section][key]
            try:
                values[section][key] = kind(val.strip())
            except ValueError:
                fail(section, key, f"{key} = {val!r} is not a valid {kind.__name__}")
            raw[section][key] = val.strip()
    for section, keys in REQUIRED.items():
        for key in keys:
            if key not in values.get(section, {}):
                raise ConfigError(f"{source}:{_line_of(text, section)}: missing {section}.{key}")

    geo = values["geometry"]
    phys = values.get("physics", {})
    integ = values.get("integration", {})
    out = values.get("output", {})
    try:
        scene = SceneConfig(kind=geo["kind"], a=geo["a"], L=geo.get("L", 1.0), R=geo.get("R", 1.0))
    except ConfigError as exc:
        fail("geometry", None, str(exc))
    try:
        physics = PhysicalParams(m=phys.get("mass", 0.0), bc=phys.get("bc", "dirichlet"),
                                 eps=phys.get("eps", 0.01))
    except ValueError as exc:
        fail("physics", None, str(exc))
    strata = (4, 4, 4)
    if "strata" in integ:
        try:
            strata = tuple(int(s) for s in str(integ["strata"]).split(","))
        except ValueError:
            fail("integration", "strata", "strata must be three comma-separated integers")
    try:
        icfg = IntegratorConfig(samples=integ.get("samples", 200_000), seed=integ.get("seed", 12345),
                                strata=strata, rtol=integ.get("rtol", 1e-3),
                                max_passes=integ.get("max_passes", 0))
    except ValueError as exc:
        fail("integration", None, str(exc))
    method = integ.get("method", "auto")
    try:
        return RunConfig(scene, physics, icfg,
                         max_reflections=phys.get("max_reflections", 4),
                         method=None if method == "auto" else method,
                         fmt=out.get("format", "csv"), path=out.get("path"),
                         grid=out.get("grid", 32), length_unit=out.get("length_unit", "length"),
                         raw=raw)
    except ConfigError as exc:
        section = "output" if "output" in str(exc) or "grid" in str(exc) else "physics"
        fail(section, None, str(exc))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))


def version_string() -> str:
    """``git describe`` of the source tree, or the package version outside git."""
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def fmt_float(x) -> str:
    """Scientific notation with 13 significant digits; NaN as ``nan``."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.12e}"


def _emit(text: str, path: Optional[str]):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _csv(rows: List[List[str]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _energy_unit(run: RunConfig) -> str:
    return f"[hbar_c/{run.length_unit}]"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def energy_report(run: RunConfig):
    scene = build_scene(run.scene)
    result = total_energy(scene, run.physics, run.max_reflections, run.integrator, run.method)
    return scene, result


def cmd_energy(run: RunConfig) -> int:
    scene, res = energy_report(run)
    unit = _energy_unit(run)
    if not res.converged:
        warnings.warn("some integrals did not reach the requested tolerance")
    if run.fmt == "json":
        doc = {
            "version": version_string(),
            "seed": run.integrator.seed,
            "config": run.raw,
            "energy_unit": unit,
            "classes": [{"n": c.order, "sequence": c.label, "multiplicity": c.sequence.multiplicity,
                         "value": c.value, "error": c.error, "finite": c.finite,
                         "finite_error": c.finite_error, "tag": c.tag, "excluded": c.excluded,
                         "converged": c.converged} for c in res.contributions],
            "finite_part": res.finite_part,
            "finite_error": res.finite_error,
            "divergent_constant": res.divergent_constant,
            "divergent_error": res.divergent_error,
            "fractions": {str(k): v for k, v in res.fractions.items()},
            "cumulative_fractions": {str(k): v for k, v in res.cumulative_fractions.items()},
            "converged": res.converged,
        }
        _emit(json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n", run.path)
        return 0
    rows = [["record", "n", "sequence", "multiplicity", f"value{unit}", f"error{unit}",
             f"finite{unit}", "tag", "excluded", "converged"]]
    for c in res.contributions:
        rows.append(["class", str(c.order), c.label, str(c.sequence.multiplicity),
                     fmt_float(c.value), fmt_float(c.error), fmt_float(c.finite), c.tag,
                     str(c.excluded), str(c.converged).lower()])
    rows.append(["finite_part", "", "", "", fmt_float(res.finite_part),
                 fmt_float(res.finite_error), fmt_float(res.finite_part), "finite", "",
                 str(res.converged).lower()])
    rows.append(["divergent_constant", "1", "", "", fmt_float(res.divergent_constant),
                 fmt_float(res.divergent_error), "", "divergent", "", ""])
    for n, f in res.fractions.items():
        rows.append(["fraction", str(n), "", "", fmt_float(f), "", "", "", "", ""])
    for n, f in res.cumulative_fractions.items():
        rows.append(["cumulative_fraction", str(n), "", "", fmt_float(f), "", "", "", "", ""])
    _emit(_csv(rows), run.path)
    return 0


SWEEP_COLUMNS = ["xi", "E_optical", "E_optical_err", "E_pfa_plate", "E_pfa_sphere",
                 "E_pfa_star", "ratio_opt_to_pfa_plate"]


def sweep_rows(run: RunConfig, xis):
    """One row of sweep values per separation ratio; failed rows are NaN."""
    rows = []
    for xi in xis:
        cfg = run.scene.with_xi(float(xi))
        try:
            scene = build_scene(cfg)
            res = finite_energy(cfg, run.physics, run.max_reflections, run.integrator, run.method)
            pp = pfa_energy(scene, 0)
            ps = pfa_energy(scene, 1)
            pstar = pfa_star_energy(scene, run.integrator)
            if not res.converged:
                warnings.warn(f"xi={xi:g}: some integrals did not reach the requested tolerance")
            rows.append([float(xi), res.finite_part, res.finite_error, pp, ps, pstar,
                         res.finite_part / pp])
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            warnings.warn(f"xi={xi:g}: row failed ({exc})")
            rows.append([float(xi)] + [float("nan")] * 6)
    return rows


def cmd_sweep(run: RunConfig, xi_min: float, xi_max: float, points: int) -> int:
    if run.scene.kind != "sphere_plate":
        raise ConfigError("sweep needs geometry kind = sphere_plate")
    if not 0 < xi_min < xi_max:
        raise ConfigError("need 0 < xi-min < xi-max")
    if points < 2:
        raise ConfigError("points must be at least 2")
    xis = np.geomspace(xi_min, xi_max, points)
    rows = sweep_rows(run, xis)
    unit = _energy_unit(run)
    if run.fmt == "json":
        doc = {"version": version_string(), "seed": run.integrator.seed, "config": run.raw,
               "energy_unit": unit, "columns": SWEEP_COLUMNS, "rows": rows}
        _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", run.path)
        return 0
    header = ["xi"] + [c + unit if c.startswith("E_") else c for c in SWEEP_COLUMNS[1:]]
    _emit(_csv([header] + [[fmt_float(v) for v in row] for row in rows]), run.path)
    return 0


def map_grid(run: RunConfig, grid: int):
    """Grid coordinates ``(r, z)`` and the summed integrand at each node."""
    scene = build_scene(run.scene)
    cfg = run.scene
    if scene.symmetry == "axisymmetric":
        r = np.linspace(0.0, scene.box.hi[0], grid)
        z = np.linspace(0.0, cfg.a + 2.0 * cfg.R, grid)
    else:
        r = np.linspace(scene.box.lo[0], scene.box.hi[0], grid)
        z = np.linspace(0.0, cfg.a, grid)
    rr, zz = np.meshgrid(r, z, indexing="ij")
    pts = np.stack([rr.ravel(), np.zeros(rr.size), zz.ravel()], axis=-1)
    vals = integrand_map(scene, run.physics, run.max_reflections, pts)
    return rr.ravel(), zz.ravel(), vals


def cmd_map(run: RunConfig, grid: Optional[int]) -> int:
    grid = run.grid if grid is None else grid
    if grid < 8:
        raise ConfigError("grid resolution must be at least 8")
    r, z, v = map_grid(run, grid)
    unit = f"[hbar_c/{run.length_unit}^4]"
    if run.fmt == "json":
        doc = {"version": version_string(), "seed": run.integrator.seed, "config": run.raw,
               "integrand_unit": unit, "r": r.tolist(), "z": z.tolist(),
               "integrand": [None if not np.isfinite(x) else float(x) for x in v]}
        _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", run.path)
        return 0
    rows = [[f"r[{run.length_unit}]", f"z[{run.length_unit}]", f"integrand{unit}"]]
    for ri, zi, vi in zip(r, z, v):
        rows.append([fmt_float(ri), fmt_float(zi), fmt_float(vi) if np.isfinite(vi) else ""])
    _emit(_csv(rows), run.path)
    return 0


def cmd_validate(samples: Optional[int] = None, fault: Optional[str] = None,
                 full: bool = False) -> int:
    from .checks import run_validation
    return 0 if run_validation(samples=samples, fault=fault, full=full) else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="optcasimir",
                                description="Casimir energies from closed specular ray paths.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("energy", help="per-class energies and totals for one configuration")
    e.add_argument("--config", required=True)

    s = sub.add_parser("sweep", help="sphere-plate energy over log-spaced a/R")
    s.add_argument("--config", required=True)
    s.add_argument("--xi-min", type=float, required=True)
    s.add_argument("--xi-max", type=float, required=True)
    s.add_argument("--points", type=int, required=True)

    m = sub.add_parser("map", help="integrand on an (r, z) grid")
    m.add_argument("--config", required=True)
    m.add_argument("--grid", type=int, default=None)

    v = sub.add_parser("validate", help="run quick oracle checks")
    v.add_argument("--samples", type=int, default=None, help="Monte Carlo budget per check")
    v.add_argument("--full", action="store_true", help="include the sphere-plate sweep checks")
    v.add_argument("--inject-fault", choices=["k2"], default=None, help=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    warnings.simplefilter("default")
    warnings.formatwarning = lambda msg, cat, *a, **k: f"warning: {msg}\n"
    try:
        if args.command == "validate":
            return cmd_validate(args.samples, args.inject_fault, args.full)
        run = load_config(args.config)
        if args.command == "energy":
            return cmd_energy(run)
        if args.command == "sweep":
            return cmd_sweep(run, args.xi_min, args.xi_max, args.points)
        return cmd_map(run, args.grid)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Scenario runner: ``alexflow run | list | schema``.

A scenario is a JSON file describing a singular surface, grid, flow controls
and which experiments to run.  Exit status: 0 when every gating check passes,
1 when a check fails, 2 for an invalid scenario, 3 for a numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .approximation import build_family, is_decreasing
from .distance import conformal_distance, default_samples
from .flow import FlowControls, FlowError, extract_initial_data, monotone_increase, run_flow, uniform_store_times
from .grid import GridError, make_grid
from .measures import MeasureError
from .potential import CUSP_CONDITION, CUSP_LIMIT, PotentialError, SingularSurfaceSpec, solve_potential
from .verification import VerificationError, check_estimates, roundtrip_errors, uniqueness_experiment

log = logging.getLogger("alexflow")

OUT_ENV = "ALEXFLOW_OUT"
DEFAULT_OUT = "alexflow_out"
KINDS = ("flow", "family", "estimates", "uniqueness", "roundtrip")

EXIT_OK, EXIT_CHECKS, EXIT_SCHEMA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULT_TOLERANCES = {
    "curvature": 0.05,
    "monotone_slack": 1e-9,
    "volume_drift": 1e-9,
    "distance_slack_fraction": 0.02,
    "duality_relative": 1e-3,
    "gh_slack": 0.10,
    "roundtrip_ratio": [3.4, 4.6],
}

_number = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "alexflow scenario",
    "type": "object",
    "required": ["name", "kind", "grid"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "description": {"type": "string"},
        "kind": {
            "oneOf": [
                {"enum": list(KINDS)},
                {"type": "array", "items": {"enum": list(KINDS)}, "minItems": 1, "uniqueItems": True},
            ]
        },
        "grid": {
            "type": "object",
            "required": ["nx", "ny"],
            "additionalProperties": False,
            "properties": {
                "nx": {"type": "integer", "minimum": 8},
                "ny": {"type": "integer", "minimum": 8},
                "Lx": _pos,
                "Ly": _pos,
            },
        },
        "spec": {
            "type": "object",
            "required": ["volume"],
            "additionalProperties": False,
            "properties": {
                "volume": _pos,
                "lower_bound": _number,
                "atoms": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["x", "y", "mass"],
                        "additionalProperties": False,
                        "properties": {"x": _number, "y": _number, "mass": _pos},
                    },
                },
                "density": {
                    "oneOf": [{"const": "constant_balancing"}, {"type": "array", "items": _number}]
                },
            },
        },
        "spec_file": {"type": "string"},
        "flow": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t_end": _pos,
                "dt_initial": _pos,
                "dt_safety": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "store_every": {"type": "integer", "minimum": 1},
                "store_interval": _pos,
                "scheme": {"enum": ["explicit", "semi_implicit"]},
                "operator": {"enum": ["fd5", "spectral"]},
            },
        },
        "eps_h": {"type": "number", "minimum": 1},
        "eps_ladder_h": {"type": "array", "items": {"type": "number", "minimum": 1}, "minItems": 2},
        "eps_pairs_h": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "number", "minimum": 1}, "minItems": 2, "maxItems": 2},
            "minItems": 1,
        },
        "samples": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"per_side": {"type": "integer", "minimum": 4}},
        },
        "roundtrip": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"resolutions": {"type": "array", "items": {"type": "integer", "minimum": 8}, "minItems": 2}},
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "curvature": _pos,
                "monotone_slack": _pos,
                "volume_drift": _pos,
                "distance_slack_fraction": _pos,
                "duality_relative": _pos,
                "gh_slack": {"type": "number", "minimum": 0},
                "roundtrip_ratio": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2},
            },
        },
        "checks": {"type": "array", "items": {"type": "string"}},
        "seed": {"type": "integer"},
    },
    "oneOf": [{"required": ["spec"]}, {"required": ["spec_file"]}, {"properties": {"kind": {"const": "roundtrip"}}}],
}


class ScenarioError(ValueError):
    pass


# ---------------------------------------------------------------------------
# locating JSON paths in the source text for line-anchored messages
# ---------------------------------------------------------------------------


def _line_index(text: str) -> dict[tuple, int]:
    """Map every JSON path in ``text`` to the line where its value starts."""
    decoder = json.JSONDecoder()
    lines: dict[tuple, int] = {}

    def skip(pos):
        while pos < len(text) and text[pos] in " \t\r\n":
            pos += 1
        return pos

    def line_of(pos):
        return text.count("\n", 0, pos) + 1

    def value(pos, path):
        pos = skip(pos)
        lines[path] = line_of(pos)
        if text[pos] == "{":
            pos = skip(pos + 1)
            if text[pos] == "}":
                return pos + 1
            while True:
                key, pos = decoder.raw_decode(text, skip(pos))
                lines[path + (key,)] = line_of(pos)
                pos = skip(pos)
                pos = value(pos + 1, path + (key,))
                pos = skip(pos)
                if text[pos] == "}":
                    return pos + 1
                pos += 1
        if text[pos] == "[":
            pos = skip(pos + 1)
            if text[pos] == "]":
                return pos + 1
            k = 0
            while True:
                pos = skip(value(pos, path + (k,)))
                k += 1
                if text[pos] == "]":
                    return pos + 1
                pos += 1
        _, end = decoder.raw_decode(text, pos)
        return end

    value(0, ())
    return lines


def _anchor(lines: dict[tuple, int], path) -> int:
    path = tuple(path)
    while path and path not in lines:
        path = path[:-1]
    return lines.get(path, 1)


# ---------------------------------------------------------------------------
# scenario model
# ---------------------------------------------------------------------------


@dataclass
class Scenario:
    name: str
    kinds: list[str]
    grid_params: dict
    spec: SingularSurfaceSpec | None
    flow: dict
    eps_h: float = 4.0
    eps_ladder_h: list[float] = field(default_factory=lambda: [8.0, 4.0, 2.0])
    eps_pairs_h: list[list[float]] = field(default_factory=lambda: [[8.0, 4.0], [4.0, 2.0]])
    per_side: int = 6
    roundtrip_resolutions: list[int] = field(default_factory=lambda: [64, 128])
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    checks: list[str] | None = None
    description: str = ""
    raw: dict = field(default_factory=dict)

    @property
    def grid(self):
        g = self.grid_params
        return make_grid(g["nx"], g["ny"], g.get("Lx", 1.0), g.get("Ly", 1.0))

    def flow_controls(self, shared_mesh: bool = False) -> FlowControls:
        f = dict(self.flow)
        interval = f.pop("store_interval", None)
        controls = FlowControls(**f)
        if interval is not None or shared_mesh:
            interval = interval or controls.t_end / 20
            controls.store_times = uniform_store_times(controls.t_end, interval)
        return controls


def _set_override(data: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ScenarioError(f"override {assignment!r} is not key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = data
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def load_scenario(path, overrides=()) -> Scenario:
    """Parse and validate a scenario file; raises :class:`ScenarioError` with a line anchor."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    lines = _line_index(text)
    for o in overrides:
        _set_override(data, o)

    # cusp condition first, so it is reported by name rather than as a schema failure
    for k, atom in enumerate((data.get("spec") or {}).get("atoms", []) if isinstance(data.get("spec"), dict) else []):
        mass = atom.get("mass") if isinstance(atom, dict) else None
        if isinstance(mass, (int, float)) and mass >= CUSP_LIMIT:
            line = _anchor(lines, ("spec", "atoms", k, "mass"))
            raise ScenarioError(
                f"{path}:{line}: atom {k} has mass {mass:.6g} >= 2π; violates the cusp condition {CUSP_CONDITION}"
            )

    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        line = _anchor(lines, err.absolute_path)
        where = "/".join(map(str, err.absolute_path)) or "<root>"
        raise ScenarioError(f"{path}:{line}: schema violation at {where}: {err.message}")

    kinds = [data["kind"]] if isinstance(data["kind"], str) else list(data["kind"])
    grid_params = data["grid"]
    try:
        grid = make_grid(grid_params["nx"], grid_params["ny"], grid_params.get("Lx", 1.0), grid_params.get("Ly", 1.0))
    except GridError as exc:
        raise ScenarioError(f"{path}:{_anchor(lines, ('grid',))}: {exc}") from exc

    spec = None
    spec_data = data.get("spec")
    anchor_key = ("spec",)
    if "spec_file" in data:
        spec_path = (path.parent / data["spec_file"]).resolve()
        anchor_key = ("spec_file",)
        if not spec_path.exists():
            raise ScenarioError(f"{path}:{_anchor(lines, anchor_key)}: spec file {spec_path} does not exist")
        spec_data = json.loads(spec_path.read_text())
    if spec_data is not None:
        try:
            spec = SingularSurfaceSpec.from_json(spec_data, grid=grid)
        except (PotentialError, MeasureError, GridError, ValueError, KeyError) as exc:
            raise ScenarioError(f"{path}:{_anchor(lines, anchor_key)}: invalid surface spec: {exc}") from exc
    elif kinds != ["roundtrip"]:
        raise ScenarioError(f"{path}:1: experiment kinds {kinds} need a spec")

    tolerances = dict(DEFAULT_TOLERANCES)
    tolerances.update(data.get("tolerances", {}))
    flow = dict(data.get("flow", {}))
    sc = Scenario(
        name=data["name"],
        kinds=kinds,
        grid_params=grid_params,
        spec=spec,
        flow=flow,
        eps_h=float(data.get("eps_h", 4.0)),
        eps_ladder_h=[float(e) for e in data.get("eps_ladder_h", [8, 4, 2])],
        eps_pairs_h=[[float(a), float(b)] for a, b in data.get("eps_pairs_h", [[8, 4], [4, 2]])],
        per_side=int(data.get("samples", {}).get("per_side", 6)),
        roundtrip_resolutions=list(data.get("roundtrip", {}).get("resolutions", [64, 128])),
        tolerances=tolerances,
        checks=data.get("checks"),
        description=data.get("description", ""),
        raw=data,
    )
    try:
        sc.flow_controls()
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{path}:{_anchor(lines, ('flow',))}: invalid flow controls: {exc}") from exc
    if any(b >= a for a, b in zip(sc.eps_ladder_h, sc.eps_ladder_h[1:])):
        raise ScenarioError(f"{path}:{_anchor(lines, ('eps_ladder_h',))}: eps ladder must decrease")
    return sc


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


class _Outputs:
    def __init__(self, root: Path):
        self.root = root
        self.files: list[Path] = []

    def write(self, rel: str, text: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        self.files.append(p)
        return p

    def add(self, paths) -> None:
        self.files.extend(paths)


def _run_flow_kind(sc: Scenario, out: _Outputs, checks: dict) -> None:
    spec = sc.spec
    eps = sc.eps_h * spec.grid.h
    has_atoms = bool(spec.curvature.atoms)
    pot = solve_potential(-spec.curvature, spec.volume, eps if has_atoms else None)
    controls = sc.flow_controls()
    traj = run_flow(pot.w, controls)
    vols = np.array([s.volume for s in traj.states])
    drift = float(np.max(np.abs(vols - vols[0])))
    drift_tol = sc.tolerances["volume_drift"] if controls.scheme == "explicit" else 1e-6
    increase = monotone_increase(traj)
    init = extract_initial_data(traj, slack=math.inf)
    final = traj.final().w
    report = {
        "eps": eps if has_atoms else None,
        "stored_times": [s.t for s in traj.states],
        "accepted_steps": len(traj.step_log) - 1,
        "rejected_steps": traj.rejected_steps,
        "volume_drift": drift,
        "monotone_max_increase": increase,
        "initial_data_t_min": init.t_min,
        "final_min_w": final.min(),
        "final_max_change": float(np.max(np.abs(final.values - pot.w.values))),
    }
    out.add(traj.export(out.root / "trajectory"))
    out.write("flow_report.json", _dump(report))
    checks["flow.volume_conservation"] = drift <= drift_tol * max(vols[0], 1.0) * max(controls.t_end, 1.0)
    checks["flow.monotone_quantity"] = increase <= sc.tolerances["monotone_slack"]
    checks["flow.positivity"] = all(s.w.min() > 0 for s in traj.states)


def _run_estimates(sc: Scenario, out: _Outputs, checks: dict) -> None:
    spec = sc.spec
    has_atoms = bool(spec.curvature.atoms)
    eps = sc.eps_h * spec.grid.h
    pot = solve_potential(-spec.curvature, spec.volume, eps if has_atoms else None)
    traj = run_flow(pot.w, sc.flow_controls())
    samples = default_samples(spec.grid, sc.per_side)
    distances = [conformal_distance(s.w.with_values(0.5 * np.log(s.w.values)), samples) for s in traj.states]
    rep = check_estimates(traj, samples, spec.lower_bound, sc.tolerances["curvature"], distances)
    out.write("estimate_report.json", _dump(rep.to_json()))
    out.write("distances_final.csv", distances[-1].to_csv())
    out.write("distances_final.json", _dump(distances[-1].to_json()))
    diam = {s.t: D.diameter for s, D in zip(traj.states, distances)}
    out.write("estimates_step_log.csv", traj.step_log_csv(diam))
    checks["estimates.curvature_lower"] = rep.curvature_lower_ok
    checks["estimates.volume_window"] = rep.volume_window_ok
    checks["estimates.diameter"] = rep.diameter_ok
    checks["estimates.distance_comparison"] = rep.distance_comparison_ok(sc.tolerances["distance_slack_fraction"])


def _run_family(sc: Scenario, out: _Outputs, checks: dict) -> None:
    spec = sc.spec
    samples = default_samples(spec.grid, sc.per_side)
    eps = [k * spec.grid.h for k in sc.eps_ladder_h]
    fam = build_family(spec, eps, samples, sc.tolerances["curvature"])
    out.write("family_report.json", _dump(fam.report()))
    for k, m in enumerate(fam.members):
        out.write(f"family/distances_{k:02d}.csv", m.distances.to_csv())
    gh = [m.gh_to_previous for m in fam.members[1:]]
    checks["family.bounds"] = fam.ok
    checks["family.gh_decreasing"] = len(gh) < 2 or is_decreasing(gh, sc.tolerances["gh_slack"])


def _run_uniqueness(sc: Scenario, out: _Outputs, checks: dict) -> None:
    spec = sc.spec
    h = spec.grid.h
    samples = default_samples(spec.grid, sc.per_side)
    controls = sc.flow_controls(shared_mesh=True)
    pairs = [(a * h, b * h) for a, b in sc.eps_pairs_h]
    T = controls.t_end
    rep = uniqueness_experiment(spec, pairs, controls, samples)
    out.write("uniqueness_report.json", _dump(rep.to_json()))
    out.write("uniqueness_curves.csv", rep.curves_csv())
    rel = sc.tolerances["duality_relative"]
    checks["uniqueness.duality"] = all(r <= rel * max(l1, 1e-300) or r <= 1e-10 for *_, r, l1 in rep.duality_residuals)
    distinct = [p for p in pairs if p[0] != p[1]]
    if len(distinct) >= 2:
        checks["uniqueness.trend"] = rep.trend_ok(T / 2)
    else:
        checks["uniqueness.identical_pairs_zero"] = all(v == 0 for *_, v in rep.l1_curve)


def _run_roundtrip(sc: Scenario, out: _Outputs, checks: dict) -> None:
    g = sc.grid_params
    errs = roundtrip_errors(sc.roundtrip_resolutions, g.get("Lx", 1.0), g.get("Ly", 1.0))
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    lo, hi = sc.tolerances["roundtrip_ratio"]
    out.write("roundtrip_report.json", _dump({"resolutions": sc.roundtrip_resolutions, "sup_errors": errs, "ratios": ratios}))
    checks["roundtrip.order"] = all(lo <= r <= hi for r in ratios)


RUNNERS = {
    "flow": _run_flow_kind,
    "estimates": _run_estimates,
    "family": _run_family,
    "uniqueness": _run_uniqueness,
    "roundtrip": _run_roundtrip,
}


def _sha256(p: Path) -> str:
    return hashlib.sha256(p.read_bytes()).hexdigest()


def run_scenario(path, out_dir=None, overrides=()) -> tuple[int, Path | None]:
    """Run a scenario file; returns ``(exit_status, output_directory)``."""
    try:
        sc = load_scenario(path, overrides)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA, None
    root = Path(out_dir or os.environ.get(OUT_ENV) or DEFAULT_OUT) / sc.name
    root.mkdir(parents=True, exist_ok=True)
    out = _Outputs(root)
    out.write("scenario.resolved.json", _dump(sc.raw))
    checks: dict[str, bool] = {}
    status = EXIT_OK
    failure = None
    for kind in sc.kinds:
        try:
            RUNNERS[kind](sc, out, checks)
        except (FlowError, VerificationError, PotentialError, MeasureError, GridError, ValueError) as exc:
            failure = f"{kind}: {type(exc).__module__}.{type(exc).__name__}: {exc}"
            print(f"numerical failure in {failure}", file=sys.stderr)
            status = EXIT_NUMERIC
            break
    gating = {k: v for k, v in checks.items() if sc.checks is None or k in sc.checks}
    if status == EXIT_OK and not all(gating.values()):
        status = EXIT_CHECKS
    manifest = {
        "scenario": sc.name,
        "version": __version__,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "exit_status": status,
        "checks": {k: bool(v) for k, v in sorted(checks.items())},
        "gating_checks": sorted(gating),
        "failure": failure,
        "artifacts": [
            {"path": str(p.relative_to(root)), "sha256": _sha256(p), "bytes": p.stat().st_size}
            for p in sorted(set(out.files))
        ],
    }
    (root / "manifest.json").write_text(_dump(manifest))
    for name, ok in sorted(checks.items()):
        mark = "PASS" if ok else ("FAIL" if name in gating else "info-fail")
        print(f"{mark:9s} {name}")
    return status, root


# ---------------------------------------------------------------------------
# listing
# ---------------------------------------------------------------------------


@dataclass
class ScenarioListing:
    entries: list[tuple[str, str, str]]  # (name, source, description or error marker)
    warnings: int


def bundled_dir():
    return resources.files("alexflow") / "scenarios"


def _describe(path) -> tuple[str, bool]:
    try:
        data = json.loads(Path(path).read_text())
        return str(data.get("description", "")).splitlines()[0] if data.get("description") else "", True
    except (OSError, json.JSONDecodeError, AttributeError) as exc:
        return f"[error: unreadable scenario: {exc}]", False


def list_scenarios(custom_dir=None, bundled=None) -> ScenarioListing:
    """Bundled scenarios first, then those in ``custom_dir``, each sorted by file name."""
    entries = []
    warnings = 0
    sources = [("bundled", Path(str(bundled or bundled_dir())))]
    if custom_dir is not None:
        sources.append(("custom", Path(custom_dir)))
    for source, directory in sources:
        if not directory.is_dir():
            continue
        for p in sorted(directory.glob("*.json")):
            desc, ok = _describe(p)
            warnings += not ok
            entries.append((p.stem, source, desc))
    return ScenarioListing(entries, warnings)


def resolve_scenario_path(name_or_path: str) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    candidate = Path(str(bundled_dir())) / (p.name if p.suffix == ".json" else p.name + ".json")
    return candidate if candidate.exists() else p


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="alexflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario file (or a bundled scenario by name)")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", help=f"output root (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    p_run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="override a scenario key, dotted for nesting, value parsed as JSON")
    p_list = sub.add_parser("list", help="list bundled (and custom) scenarios")
    p_list.add_argument("--dir", help="additional directory of scenario files")
    sub.add_parser("schema", help="print the scenario JSON schema")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")

    if args.command == "schema":
        print(json.dumps(SCENARIO_SCHEMA, indent=2))
        return 0
    if args.command == "list":
        listing = list_scenarios(args.dir)
        for name, source, desc in listing.entries:
            print(f"{name:22s} {source:8s} {desc}")
        if listing.warnings:
            print(f"{listing.warnings} warning(s)", file=sys.stderr)
        return 0
    status, root = run_scenario(resolve_scenario_path(args.scenario), args.out, args.override)
    if root is not None:
        print(f"outputs: {root}")
    return status


if __name__ == "__main__":
    sys.exit(main())

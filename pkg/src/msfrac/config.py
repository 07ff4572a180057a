"""Run configuration: YAML schema, validation and defaults.

The config is a single YAML document; every physical quantity carries a unit
comment in the shipped examples under configs/. Validation errors carry the
dotted field path that failed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigInvalid

SCENARIOS = ("single", "dual", "dual_rve", "shale")
BASIS_MODES = ("gmsfem_uncoupled", "gmsfem_coupled", "simplified", "lambda_select")
WEIGHTINGS = ("kappa_mass", "pou_gradient")
SNAPSHOT_KINDS = ("harmonic", "randomized")


def _req(d: dict, key: str, path: str):
    if key not in d:
        raise ConfigInvalid(f"{path}.{key}", "missing required field")
    return d[key]


def _num(v, path: str, positive: bool = False, integer: bool = False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigInvalid(path, f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigInvalid(path, f"expected an integer, got {v!r}")
    if positive and not v > 0:
        raise ConfigInvalid(path, f"must be positive, got {v!r}")
    return int(v) if integer else float(v)


def _choice(v, options, path: str):
    if v not in options:
        raise ConfigInvalid(path, f"must be one of {options}, got {v!r}")
    return v


def _points(v, path: str):
    if not isinstance(v, list) or not all(
            isinstance(p, (list, tuple)) and len(p) == 2 for p in v):
        raise ConfigInvalid(path, "expected a list of [x, y] pairs")
    return [(float(p[0]), float(p[1])) for p in v]


@dataclass
class RunConfig:
    scenario: str
    seed: int
    threads: int
    out: str | None
    grid: dict
    time: dict
    fractures: list  # [(points, props)]
    material: dict
    ic_value: float
    bc_points: list
    bc_value: float
    basis: dict
    snapshots: dict
    dual: dict | None
    shale: dict | None
    field_times: list
    verify: dict
    raw: dict = field(repr=False, default_factory=dict)


def _parse_fractures(items, path: str) -> list:
    if items is None:
        return []
    if not isinstance(items, list):
        raise ConfigInvalid(path, "expected a list of fracture entries")
    out = []
    for i, f in enumerate(items):
        p = f"{path}[{i}]"
        if not isinstance(f, dict):
            raise ConfigInvalid(p, "expected a mapping")
        pts = _points(_req(f, "points", p), f"{p}.points")
        if len(pts) < 2:
            raise ConfigInvalid(f"{p}.points", "needs at least two vertices")
        props = {
            "kappa": _num(_req(f, "kappa", p), f"{p}.kappa", positive=True),
            "porosity": _num(_req(f, "porosity", p), f"{p}.porosity", positive=True),
            "aperture": _num(f.get("aperture", 1.0), f"{p}.aperture", positive=True),
            "tag": str(f.get("tag", "")),
        }
        out.append((pts, props))
    return out


def validate(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigInvalid("<root>", "config must be a mapping")
    scenario = _choice(doc.get("scenario", "single"), SCENARIOS, "scenario")
    seed = _num(doc.get("seed", 0), "seed", integer=True)
    threads = _num(doc.get("threads", 1), "threads", positive=True, integer=True)

    g = _req(doc, "grid", "<root>")
    grid = {
        "lx": _num(_req(g, "lx", "grid"), "grid.lx", positive=True),
        "ly": _num(_req(g, "ly", "grid"), "grid.ly", positive=True),
        "nx": _num(_req(g, "nx", "grid"), "grid.nx", positive=True, integer=True),
        "ny": _num(_req(g, "ny", "grid"), "grid.ny", positive=True, integer=True),
        "refine": _num(_req(g, "refine", "grid"), "grid.refine", positive=True,
                       integer=True),
    }

    t = _req(doc, "time", "<root>")
    tm = {"t_max": _num(_req(t, "t_max", "time"), "time.t_max", positive=True),
          "n_steps": _num(t.get("n_steps", 50), "time.n_steps", positive=True,
                          integer=True)}

    fractures = _parse_fractures(doc.get("fractures"), "fractures")

    material = {}
    if scenario == "single":
        m = _req(doc, "material", "<root>")
        material = {"kappa": _num(_req(m, "kappa", "material"), "material.kappa",
                                  positive=True),
                    "porosity": _num(_req(m, "porosity", "material"),
                                     "material.porosity", positive=True)}

    ic = doc.get("ic", {}) or {}
    ic_value = _num(ic.get("value", 1.0), "ic.value")
    bc = doc.get("bc", {}) or {}
    bc_points = _points(bc.get("dirichlet_points", []), "bc.dirichlet_points")
    bc_value = _num(bc.get("value", 0.0), "bc.value")

    b = doc.get("basis", {}) or {}
    basis = {
        "mode": _choice(b.get("mode", "gmsfem_uncoupled"), BASIS_MODES, "basis.mode"),
        "schedule": b.get("schedule", [1, 2, 4, 8]),
        "weighting": _choice(b.get("weighting", "kappa_mass"), WEIGHTINGS,
                             "basis.weighting"),
        "lambda_threshold": b.get("lambda_threshold"),
        "gap_ratio": _num(b.get("gap_ratio", 1e3), "basis.gap_ratio", positive=True),
    }
    if not isinstance(basis["schedule"], list) or not basis["schedule"]:
        raise ConfigInvalid("basis.schedule", "expected a non-empty list")
    basis["schedule"] = [
        _num(v, f"basis.schedule[{i}]", integer=True)
        for i, v in enumerate(basis["schedule"])]
    if basis["lambda_threshold"] is not None:
        basis["lambda_threshold"] = _num(basis["lambda_threshold"],
                                         "basis.lambda_threshold", positive=True)

    sn = doc.get("snapshots", {}) or {}
    snapshots = {"kind": _choice(sn.get("kind", "harmonic"), SNAPSHOT_KINDS,
                                 "snapshots.kind"),
                 "randomized_n": _num(sn.get("randomized_n", 8),
                                      "snapshots.randomized_n", positive=True,
                                      integer=True)}

    dual = None
    if scenario in ("dual", "dual_rve"):
        d = _req(doc, "dual", "<root>")
        cont = _req(d, "continua", "dual")
        if not isinstance(cont, list) or len(cont) < 2:
            raise ConfigInvalid("dual.continua", "expected at least two continua")
        continua = []
        for i, c in enumerate(cont):
            continua.append({
                "kappa": _num(_req(c, "kappa", f"dual.continua[{i}]"),
                              f"dual.continua[{i}].kappa", positive=True),
                "porosity": _num(_req(c, "porosity", f"dual.continua[{i}]"),
                                 f"dual.continua[{i}].porosity", positive=True)})
        gamma = _req(d, "gamma", "dual")
        if not isinstance(gamma, list) or len(gamma) != len(continua):
            raise ConfigInvalid("dual.gamma", "one weight per continuum required")
        gamma = [_num(v, f"dual.gamma[{i}]") for i, v in enumerate(gamma)]
        tr = _req(d, "transfer", "dual")
        mode = _choice(tr.get("mode", "constant"), ("constant", "linear_y"),
                       "dual.transfer.mode")
        transfer = {"mode": mode}
        if mode == "constant":
            transfer["Q"] = _num(_req(tr, "Q", "dual.transfer"), "dual.transfer.Q")
        else:
            for k in ("Q1", "Q2", "y_lo", "y_hi"):
                transfer[k] = _num(_req(tr, k, "dual.transfer"), f"dual.transfer.{k}")
            if not transfer["y_lo"] < transfer["y_hi"]:
                raise ConfigInvalid("dual.transfer.y_lo", "must be below y_hi")
        dual = {"continua": continua, "gamma": gamma, "transfer": transfer,
                "rve": d.get("rve")}
        if scenario == "dual_rve" and dual["rve"] is None:
            raise ConfigInvalid("dual.rve", "dual_rve scenario needs an rve block")

    shale = None
    if scenario == "shale":
        s = _req(doc, "shale", "<root>")
        params = dict(s.get("params", {}))
        wells = _points(_req(s, "wells", "shale"), "shale.wells")
        shale = {"params": params, "wells": wells}

    out_blk = doc.get("output", {}) or {}
    field_times = [float(v) for v in out_blk.get("field_times", [])]

    v = doc.get("verify", {}) or {}
    verify = {"enabled": bool(v.get("enabled", False)),
              "mode": _choice(v.get("mode", "coupled"), ("coupled", "uncoupled"),
                              "verify.mode"),
              "schedule": [
                  _num(x, f"verify.schedule[{i}]", positive=True, integer=True)
                  for i, x in enumerate(v.get("schedule", [2, 4, 6, 8]))]}

    return RunConfig(scenario=scenario, seed=seed, threads=threads,
                     out=doc.get("out"), grid=grid, time=tm, fractures=fractures,
                     material=material, ic_value=ic_value, bc_points=bc_points,
                     bc_value=bc_value, basis=basis, snapshots=snapshots,
                     dual=dual, shale=shale, field_times=field_times,
                     verify=verify, raw=doc)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigInvalid("<file>", f"config file not found: {p}")
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigInvalid("<file>", f"YAML parse error: {exc}") from exc
    return validate(doc)

"""Scenario files: the JSON contract between the CLI, the engine, and tests.

A scenario bundles everything needed for a reproducible run: the nominal
configuration and stress weights, target and leader trajectory parameters,
follower initial states, estimator and controller gains, the uncertainty
model, integrator settings, excitation-monitor parameters, and the
avoidance clearance.  Agents are 1-based with leaders first; numbers are
plain JSON decimals so files stay diffable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import jsonschema
import numpy as np

from .control import ControlGains
from .formation import Configuration, StressMatrix


class ParseError(ValueError):
    """Scenario file is malformed; message carries field diagnostics."""


_VEC2 = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_VEC2_LIST = {"type": "array", "items": _VEC2}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": [
        "name", "agents", "configuration", "stress_edges", "target", "leaders",
        "followers", "estimator", "gains", "uncertainty", "integrator", "pe",
        "avoidance",
    ],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "agents": {
            "type": "object",
            "required": ["n", "n_l"],
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 4},
                "n_l": {"type": "integer", "minimum": 3},
            },
        },
        "configuration": _VEC2_LIST,
        "stress_edges": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["i", "j", "weight"],
                "additionalProperties": False,
                "properties": {
                    "i": {"type": "integer", "minimum": 1},
                    "j": {"type": "integer", "minimum": 1},
                    "weight": {"type": "number"},
                },
            },
        },
        "target": {
            "type": "object",
            "required": ["p0", "v0"],
            "additionalProperties": False,
            "properties": {"p0": _VEC2, "v0": _VEC2},
        },
        "leaders": {
            "type": "object",
            "required": ["kind", "initial_positions"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["circular", "static"]},
                "initial_positions": _VEC2_LIST,
                "base_rate": {"type": "number"},
            },
        },
        "followers": {
            "type": "object",
            "required": ["positions", "velocities"],
            "additionalProperties": False,
            "properties": {"positions": _VEC2_LIST, "velocities": _VEC2_LIST},
        },
        "estimator": {
            "type": "object",
            "required": ["k_1"],
            "additionalProperties": False,
            "properties": {
                "k_1": {"type": "number", "exclusiveMinimum": 0},
                "rho_hat0_default": {"type": "number"},
                "rho_hat0": {
                    "type": "object",
                    "patternProperties": {r"^\d+-\d+$": {"type": "number"}},
                    "additionalProperties": False,
                },
            },
        },
        "gains": {
            "type": "object",
            "required": ["k_p", "k_v", "k_delta", "delta_bar"],
            "additionalProperties": False,
            "properties": {
                "k_p": {"type": "number", "exclusiveMinimum": 0},
                "k_v": {"type": "number", "exclusiveMinimum": 0},
                "k_delta": {"type": "number", "exclusiveMinimum": 0},
                "delta_bar": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "uncertainty": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["zero", "sinusoid", "constant", "piecewise"]},
                "amplitude": {"type": "number"},
                "omega": {"type": "number"},
                "direction": _VEC2,
                "value": _VEC2,
                "pieces": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["t_start", "value"],
                        "additionalProperties": False,
                        "properties": {
                            "t_start": {"type": "number"},
                            "value": _VEC2,
                        },
                    },
                },
            },
        },
        "integrator": {
            "type": "object",
            "required": ["dt", "horizon", "sample_every"],
            "additionalProperties": False,
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "horizon": {"type": "number", "minimum": 0},
                "sample_every": {"type": "integer", "minimum": 1},
                "method": {"enum": ["euler", "rk4"]},
            },
        },
        "pe": {
            "type": "object",
            "required": ["sigma_v", "eps_v", "sigma_omega", "eps_omega"],
            "additionalProperties": False,
            "properties": {
                "sigma_v": {"type": "number", "exclusiveMinimum": 0},
                "eps_v": {"type": "number", "exclusiveMinimum": 0},
                "sigma_omega": {"type": "number", "exclusiveMinimum": 0},
                "eps_omega": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "avoidance": {
            "type": "object",
            "required": ["c_c"],
            "additionalProperties": False,
            "properties": {"c_c": {"type": "number", "exclusiveMinimum": 0}},
        },
        "bounds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sup_vdot_f": {"type": ["number", "null"]},
                "sup_vdot_l": {"type": ["number", "null"]},
            },
        },
        "sensing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"phi_dot_mode": {"enum": ["exact", "finite_difference"]}},
        },
        "options": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "smooth_sgn_eps": {"type": "number", "minimum": 0},
                "collision_threshold": {"type": "number", "exclusiveMinimum": 0},
                "delta_min": {"type": "number", "exclusiveMinimum": 0},
                "exact_rho_feed": {"type": "boolean"},
            },
        },
        "seed": {"type": "integer"},
    },
}


@dataclass(frozen=True, eq=False)
class Scenario:
    """Validated scenario contents.

    Mirrors the JSON layout; vectors are tuples so instances hash/compare
    by value.  Equality compares the canonical dict form.
    """

    name: str
    n: int
    n_l: int
    configuration: tuple
    stress_edges: tuple            # ((i, j, weight), ...)
    target_p0: tuple
    target_v0: tuple
    leader_kind: str
    leader_initial_positions: tuple
    leader_base_rate: float
    follower_positions: tuple
    follower_velocities: tuple
    k_1: float
    rho_hat0_default: float
    rho_hat0: tuple                # ((i, j, value), ...)
    gains: ControlGains
    uncertainty: dict = field(repr=False)
    dt: float = 1e-3
    horizon: float = 60.0
    sample_every: int = 10
    method: str = "euler"
    sigma_v: float = 5.0
    eps_v: float = 0.5
    sigma_omega: float = 5.0
    eps_omega: float = 0.5
    c_c: float = 0.05
    sup_vdot_f: float = None
    sup_vdot_l: float = None
    phi_dot_mode: str = "exact"
    smooth_sgn_eps: float = 0.0
    collision_threshold: float = 1e-3
    delta_min: float = 1e-9
    exact_rho_feed: bool = False
    seed: int = 0

    @property
    def n_f(self) -> int:
        return self.n - self.n_l

    def config(self) -> Configuration:
        return Configuration(points=np.array(self.configuration), n_l=self.n_l)

    def stress(self) -> StressMatrix:
        return StressMatrix(
            weights={(i, j): w for (i, j, w) in self.stress_edges},
            n=self.n,
            n_l=self.n_l,
        )

    def directed_edges(self) -> list:
        """Directed (follower, neighbor) pairs, sorted, 1-based."""
        stress = self.stress()
        out = []
        for i in range(self.n_l + 1, self.n + 1):
            for j in stress.neighbors(i):
                out.append((i, j))
        return out

    def rho_hat0_map(self) -> dict:
        out = {edge: self.rho_hat0_default for edge in self.directed_edges()}
        for (i, j, v) in self.rho_hat0:
            if (i, j) not in out:
                raise ParseError(f"estimator.rho_hat0: ({i},{j}) is not a directed follower edge")
            out[(i, j)] = v
        return out

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "agents": {"n": self.n, "n_l": self.n_l},
            "configuration": [list(p) for p in self.configuration],
            "stress_edges": [
                {"i": i, "j": j, "weight": w} for (i, j, w) in self.stress_edges
            ],
            "target": {"p0": list(self.target_p0), "v0": list(self.target_v0)},
            "leaders": {
                "kind": self.leader_kind,
                "initial_positions": [list(p) for p in self.leader_initial_positions],
            },
            "followers": {
                "positions": [list(p) for p in self.follower_positions],
                "velocities": [list(p) for p in self.follower_velocities],
            },
            "estimator": {
                "k_1": self.k_1,
                "rho_hat0_default": self.rho_hat0_default,
                "rho_hat0": {f"{i}-{j}": v for (i, j, v) in self.rho_hat0},
            },
            "gains": {
                "k_p": self.gains.k_p,
                "k_v": self.gains.k_v,
                "k_delta": self.gains.k_delta,
                "delta_bar": self.gains.delta_bar,
            },
            "uncertainty": dict(self.uncertainty),
            "integrator": {
                "dt": self.dt,
                "horizon": self.horizon,
                "sample_every": self.sample_every,
                "method": self.method,
            },
            "pe": {
                "sigma_v": self.sigma_v,
                "eps_v": self.eps_v,
                "sigma_omega": self.sigma_omega,
                "eps_omega": self.eps_omega,
            },
            "avoidance": {"c_c": self.c_c},
            "bounds": {"sup_vdot_f": self.sup_vdot_f, "sup_vdot_l": self.sup_vdot_l},
            "sensing": {"phi_dot_mode": self.phi_dot_mode},
            "options": {
                "smooth_sgn_eps": self.smooth_sgn_eps,
                "collision_threshold": self.collision_threshold,
                "delta_min": self.delta_min,
                "exact_rho_feed": self.exact_rho_feed,
            },
            "seed": self.seed,
        }
        if self.leader_kind == "circular":
            d["leaders"]["base_rate"] = self.leader_base_rate
        return d

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.to_dict() == other.to_dict()

    def replace(self, **updates) -> "Scenario":
        kwargs = {f.name: getattr(self, f.name) for f in fields(self)}
        kwargs.update(updates)
        return Scenario(**kwargs)


def _uncertainty_bound(spec: dict) -> float:
    kind = spec["kind"]
    if kind == "zero":
        return 0.0
    if kind == "sinusoid":
        return abs(spec["amplitude"])
    if kind == "constant":
        return float(np.hypot(*spec["value"]))
    return max((float(np.hypot(*p["value"])) for p in spec["pieces"]), default=0.0)


def _check_uncertainty(spec: dict, delta_bar: float) -> dict:
    kind = spec["kind"]
    required = {
        "zero": set(),
        "sinusoid": {"amplitude", "omega", "direction"},
        "constant": {"value"},
        "piecewise": {"pieces"},
    }[kind]
    missing = required - set(spec)
    if missing:
        raise ParseError(f"uncertainty kind '{kind}' is missing fields {sorted(missing)}")
    extra = set(spec) - required - {"kind"}
    if extra:
        raise ParseError(f"uncertainty kind '{kind}' has stray fields {sorted(extra)}")
    if kind == "sinusoid" and np.hypot(*spec["direction"]) < 1e-12:
        raise ParseError("uncertainty.direction must be nonzero")
    if kind == "piecewise":
        starts = [p["t_start"] for p in spec["pieces"]]
        if starts != sorted(starts):
            raise ParseError("uncertainty.pieces must be sorted by t_start")
    bound = _uncertainty_bound(spec)
    if bound > delta_bar + 1e-12:
        raise ParseError(
            f"uncertainty magnitude {bound:.6g} exceeds gains.delta_bar {delta_bar:.6g}"
        )
    return dict(spec)


def scenario_from_dict(raw: dict) -> Scenario:
    """Build a validated scenario from parsed JSON."""
    try:
        jsonschema.validate(raw, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ParseError(f"scenario field '{path}': {exc.message}") from exc

    n, n_l = raw["agents"]["n"], raw["agents"]["n_l"]
    n_f = n - n_l
    if n_f < 1:
        raise ParseError(f"need at least one follower, got n={n}, n_l={n_l}")
    if len(raw["configuration"]) != n:
        raise ParseError(
            f"configuration has {len(raw['configuration'])} points, expected n={n}"
        )
    edges = []
    seen = set()
    for k, e in enumerate(raw["stress_edges"]):
        i, j, wgt = e["i"], e["j"], e["weight"]
        if i == j:
            raise ParseError(f"stress_edges[{k}]: self loop on node {i}")
        if not (1 <= i <= n and 1 <= j <= n):
            raise ParseError(f"stress_edges[{k}]: node {max(i, j)} of {n} does not exist")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ParseError(f"stress_edges[{k}]: duplicate edge {key}")
        seen.add(key)
        edges.append((key[0], key[1], float(wgt)))
    for f in range(n_l + 1, n + 1):
        if not any(f in (i, j) for (i, j, _) in edges):
            raise ParseError(f"follower {f} has no neighbors")

    if len(raw["leaders"]["initial_positions"]) != n_l:
        raise ParseError(
            f"leaders.initial_positions has {len(raw['leaders']['initial_positions'])} "
            f"entries, expected n_l={n_l}"
        )
    if raw["leaders"]["kind"] == "circular" and "base_rate" not in raw["leaders"]:
        raise ParseError("leaders.base_rate is required for the circular kind")
    for key in ("positions", "velocities"):
        if len(raw["followers"][key]) != n_f:
            raise ParseError(
                f"followers.{key} has {len(raw['followers'][key])} entries, "
                f"expected n_f={n_f}"
            )

    est = raw["estimator"]
    rho0 = []
    for key, v in est.get("rho_hat0", {}).items():
        i, j = (int(x) for x in key.split("-"))
        rho0.append((i, j, float(v)))
    gains = ControlGains(
        k_p=raw["gains"]["k_p"],
        k_v=raw["gains"]["k_v"],
        k_delta=raw["gains"]["k_delta"],
        delta_bar=raw["gains"]["delta_bar"],
    )
    uncertainty = _check_uncertainty(raw["uncertainty"], gains.delta_bar)

    integ = raw["integrator"]
    sensing = raw.get("sensing", {})
    options = raw.get("options", {})
    bounds = raw.get("bounds", {})
    method = integ.get("method", "euler")
    phi_dot_mode = sensing.get("phi_dot_mode", "exact")
    if method == "rk4" and phi_dot_mode == "finite_difference":
        raise ParseError("finite-difference bearing-rate sensing requires the euler integrator")

    scenario = Scenario(
        name=raw["name"],
        n=n,
        n_l=n_l,
        configuration=tuple(tuple(float(x) for x in p) for p in raw["configuration"]),
        stress_edges=tuple(edges),
        target_p0=tuple(float(x) for x in raw["target"]["p0"]),
        target_v0=tuple(float(x) for x in raw["target"]["v0"]),
        leader_kind=raw["leaders"]["kind"],
        leader_initial_positions=tuple(
            tuple(float(x) for x in p) for p in raw["leaders"]["initial_positions"]
        ),
        leader_base_rate=float(raw["leaders"].get("base_rate", 0.0)),
        follower_positions=tuple(
            tuple(float(x) for x in p) for p in raw["followers"]["positions"]
        ),
        follower_velocities=tuple(
            tuple(float(x) for x in p) for p in raw["followers"]["velocities"]
        ),
        k_1=float(est["k_1"]),
        rho_hat0_default=float(est.get("rho_hat0_default", 1.0)),
        rho_hat0=tuple(rho0),
        gains=gains,
        uncertainty=uncertainty,
        dt=float(integ["dt"]),
        horizon=float(integ["horizon"]),
        sample_every=int(integ["sample_every"]),
        method=method,
        sigma_v=float(raw["pe"]["sigma_v"]),
        eps_v=float(raw["pe"]["eps_v"]),
        sigma_omega=float(raw["pe"]["sigma_omega"]),
        eps_omega=float(raw["pe"]["eps_omega"]),
        c_c=float(raw["avoidance"]["c_c"]),
        sup_vdot_f=(None if bounds.get("sup_vdot_f") is None else float(bounds["sup_vdot_f"])),
        sup_vdot_l=(None if bounds.get("sup_vdot_l") is None else float(bounds["sup_vdot_l"])),
        phi_dot_mode=phi_dot_mode,
        smooth_sgn_eps=float(options.get("smooth_sgn_eps", 0.0)),
        collision_threshold=float(options.get("collision_threshold", 1e-3)),
        delta_min=float(options.get("delta_min", 1e-9)),
        exact_rho_feed=bool(options.get("exact_rho_feed", False)),
        seed=int(raw.get("seed", 0)),
    )
    scenario.rho_hat0_map()   # raises on estimates for nonexistent edges
    # Initial estimates must be strictly positive (transients may go negative).
    if scenario.rho_hat0_default <= 0.0 or any(v <= 0.0 for (_, _, v) in scenario.rho_hat0):
        raise ParseError("initial distance estimates must be strictly positive")
    if not math.isfinite(scenario.dt) or scenario.dt <= 0:
        raise ParseError(f"integrator.dt must be positive, got {scenario.dt}")
    return scenario


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    try:
        return scenario_from_dict(raw)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2) + "\n")


def bundled_scenario_path(name: str = "entrap2d") -> Path:
    """Filesystem path of a scenario shipped with the package."""
    from importlib.resources import files

    p = Path(str(files("entrapsim") / "data" / f"{name}.json"))
    if not p.exists():
        available = sorted(q.stem for q in p.parent.glob("*.json"))
        raise FileNotFoundError(f"no bundled scenario '{name}'; available: {available}")
    return p

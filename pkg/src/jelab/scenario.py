"""Scenario files: one YAML tree describing a sweep, plus the built-in examples."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .spectral import AmplitudeProfile, Atom, Density, MeasureSpec, SpectralDomain

PATHS = ("marchenko", "one_soliton", "asymptotic_train", "logdet")


class ScenarioError(ValueError):
    pass


_DEFAULTS = {
    "M": 3.5,
    "normalization": "theorem",
    "seed": 0,
    "solver": {"n_nodes": 64, "max_nodes": 512, "stabilise": 1e-8},
    "tolerances": {"quadrature": 1e-9, "reality": 1e-10, "edge": 1e-12},
    "steps": {"h_x": 1e-2, "h_y": 1e-2, "h_t": 1e-3},
    "outputs": {"csv": None, "plot": None, "summary": None, "cache_dir": None},
}

BUILTINS = {
    "example1": {
        "name": "example1",
        "profile": {"kind": "quadratic", "a2": 1 / 24, "a0": 1 / 16, "delta": 1 / 16, "epsilon": 0.2},
        "domain": {"roof_mode": "paper_locus", "p_range": [-1.5, 1.5]},
        "measure": {"density": {"id": "gaussian_pq", "params": {"a_p": 18.0, "a_q": 2.0, "c0": 0.5}}},
        "grid": {"x": {"start": -24.0, "stop": 4.0, "count": 29, "frame": "front"},
                 "y": {"values": [0.0, 1.0]}, "t": [10.0, 30.0]},
        "paths": ["marchenko", "asymptotic_train", "logdet"],
    },
    "example2": {
        "name": "example2",
        "profile": {"kind": "constant", "b": 1.0, "delta": 1.0, "epsilon": 0.5},
        "domain": {"roof_mode": "paper_locus", "p_range": [-0.6, 0.6]},
        "measure": {"density": {"id": "gaussian_p", "params": {"k": 12.0}}},
        "grid": {"x": {"start": -10.0, "stop": 2.0, "count": 49, "frame": "front"},
                 "y": {"values": [0.0]}, "t": [100.0, 1000.0]},
        "paths": ["marchenko", "asymptotic_train", "logdet"],
    },
    "example3": {
        "name": "example3",
        "profile": {"kind": "constant", "b": 1.0, "delta": 1.0, "epsilon": 0.5},
        "domain": {"roof_mode": "paper_locus", "p_range": [-2.0, 2.0]},
        "measure": {"density": {"id": "algebraic_p", "params": {"k": 12.0, "alpha": 4}},
                    "moment": "weak", "weak_alpha": 4, "weak_k": 12.0},
        "grid": {"x": {"start": -10.0, "stop": 2.0, "count": 25, "frame": "front"},
                 "y": {"values": [0.0, 1.0]}, "t": [100.0]},
        "paths": ["marchenko", "asymptotic_train", "logdet"],
    },
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def profile_from_dict(d) -> AmplitudeProfile:
    kind = d.get("kind")
    eps = float(d.get("epsilon", 0.5))
    rng = tuple(d.get("s_range", (-6.0, 6.0)))
    if kind == "constant":
        return AmplitudeProfile.constant(float(d["b"]), d.get("delta"), eps, rng)
    if kind == "quadratic":
        return AmplitudeProfile.quadratic(float(d["a2"]), float(d["a0"]), d.get("delta"), eps, rng)
    if kind == "tabulated":
        return AmplitudeProfile.tabulated(d["s"], d["c"], float(d["delta"]), eps,
                                          int(d.get("spline_order", 3)))
    raise ScenarioError(f"unknown profile kind {kind!r}")


def measure_from_dict(d) -> MeasureSpec:
    atoms = tuple(Atom(float(a["p"]), float(a["q"]), float(a["weight"])) for a in d.get("atoms", []))
    dens = d.get("density")
    density = None
    if dens:
        density = Density(dens["id"], tuple(sorted((k, v) for k, v in dens.get("params", {}).items())))
    kw = {k: d[k] for k in ("moment", "weak_alpha", "weak_k", "g_bound") if k in d}
    if "moment_a" in d:
        kw["moment_a"] = tuple(float(a) for a in d["moment_a"])
    return MeasureSpec(atoms=atoms, density=density, **kw)


def _axis(spec, name):
    if "values" in spec:
        vals = np.array([float(v) for v in spec["values"]])
    else:
        vals = np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["count"]))
        if int(spec["count"]) < 2:
            raise ScenarioError(f"grid.{name}.count must be >= 2")
    return vals


@dataclass
class Scenario:
    data: dict
    profile: AmplitudeProfile = field(init=False)
    domain: SpectralDomain = field(init=False)
    measure: MeasureSpec = field(init=False)

    def __post_init__(self):
        d = self.data
        for key in ("name", "profile", "domain", "measure", "grid", "paths"):
            if key not in d:
                raise ScenarioError(f"scenario lacks {key!r}")
        self.profile = profile_from_dict(d["profile"])
        dom = d["domain"]
        self.domain = SpectralDomain(self.profile, dom.get("roof_mode", "paper_locus"),
                                     tuple(float(v) for v in dom.get("p_range", (-1.0, 1.0))))
        self.measure = measure_from_dict(d["measure"])
        bad = set(self.paths) - set(PATHS)
        if bad:
            raise ScenarioError(f"unknown paths {sorted(bad)}")
        ts = self.t_values
        if np.any(ts <= 0) or np.any(np.diff(ts) <= 0):
            raise ScenarioError("t values must be positive and strictly increasing")
        if set(self.paths) & {"asymptotic_train", "logdet"}:
            if self.M <= 2:
                raise ScenarioError("M must exceed 2 for asymptotic paths")
            if self.measure.density is None:
                raise ScenarioError("asymptotic paths need a measure with a density")
        if "one_soliton" in self.paths and (len(self.measure.atoms) != 1 or self.measure.density):
            raise ScenarioError("one_soliton path needs a single-atom measure")
        _ = self.x_offsets, self.y_values

    @classmethod
    def from_dict(cls, d):
        return cls(_merge(_DEFAULTS, d))

    @classmethod
    def load(cls, ref):
        """Built-in name or path to a YAML file."""
        if ref in BUILTINS:
            return cls.from_dict(BUILTINS[ref])
        path = Path(ref)
        if not path.exists():
            raise ScenarioError(f"no built-in or file named {ref!r}")
        d = yaml.safe_load(path.read_text())
        if not isinstance(d, dict):
            raise ScenarioError(f"{ref}: expected a mapping at top level")
        return cls.from_dict(d)

    # accessors
    @property
    def name(self):
        return self.data["name"]

    @property
    def paths(self):
        return list(self.data["paths"])

    @property
    def M(self):
        return float(self.data["M"])

    @property
    def normalization(self):
        return self.data["normalization"]

    @property
    def solver(self):
        return self.data["solver"]

    @property
    def tolerances(self):
        return self.data["tolerances"]

    @property
    def steps(self):
        return self.data["steps"]

    @property
    def outputs(self):
        return self.data["outputs"]

    @property
    def t_values(self):
        return np.array([float(v) for v in self.data["grid"]["t"]])

    @property
    def y_values(self):
        return _axis(self.data["grid"]["y"], "y")

    @property
    def x_offsets(self):
        return _axis(self.data["grid"]["x"], "x")

    @property
    def x_frame(self):
        return self.data["grid"]["x"].get("frame", "absolute")

    def x_values(self, y, t):
        """x grid at (y, t); in the ``front`` frame offsets are taken from C(y) t."""
        off = self.x_offsets
        if self.x_frame == "front":
            return off + float(self.profile.C(y)) * t
        return off

    def computational(self):
        return {k: v for k, v in self.data.items() if k not in ("outputs", "name")}

    def hash(self):
        blob = json.dumps(self.computational(), sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def dump(self):
        return yaml.safe_dump(self.data, sort_keys=False)


def kernel_key(scenario: Scenario, y, t, window):
    """Content hash for the kernel work of one (y, t) column."""
    d = scenario.data
    blob = {"profile": d["profile"], "domain": d["domain"], "measure": d["measure"],
            "y": repr(float(y)), "t": repr(float(t)), "window": [repr(float(w)) for w in window],
            "quadrature": d["tolerances"]["quadrature"], "edge": d["tolerances"]["edge"]}
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()


"""Scenario files: JSON descriptions of a study case.

A scenario bundles the network topology, the grid-forming Thevenin source,
the converter resources and the per-unit bases into a single document, so
that the command line and the tests build identical study objects.

Two kinds exist:

- ``direct``:  one Thevenin source feeding one converter through its own
  impedance.  In the harmonic power flow this maps onto a two-node network
  whose only branch is the source impedance; in the time domain it maps to
  the dedicated single-resource integrator.
- ``network``: a general multi-node network with lines, impedance loads
  and any number of converter resources.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources as importlib_resources

from .cider import CiderParams, FollowerCider, GainSet, Setpoints, TheveninSource
from .harmonic import TWO_PI, HarmonicIndexSet
from .network import BranchSpec, LineSpec, LineType, LoadSpec, NetworkSpec

#: Series impedance of the fictitious branch that carries the EMF of a
#: ``direct`` scenario onto the forming node (effectively an ideal source).
_EMF_RESIDUAL_Z = 1e-9


class ScenarioError(ValueError):
    """Raised when a scenario document is malformed."""


def _take(obj: dict, context: str, required: tuple, optional: dict = None):
    """Extract keys from a JSON object, rejecting unknown ones."""
    optional = optional or {}
    if not isinstance(obj, dict):
        raise ScenarioError(f"{context}: expected an object")
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise ScenarioError(f"{context}: unknown keys {sorted(unknown)}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise ScenarioError(f"{context}: missing keys {missing}")
    out = dict(optional)
    out.update(obj)
    return out


def _gain_set(obj: dict, context: str) -> GainSet:
    d = _take(obj, context, ("k_fb", "t_fb", "k_ft"))
    return GainSet(float(d["k_fb"]), float(d["t_fb"]), float(d["k_ft"]))


def _cider_params(obj: dict, context: str) -> CiderParams:
    d = _take(
        obj,
        context,
        ("l_alpha", "r_alpha", "c_phi", "g_phi", "l_gamma", "r_gamma",
         "c_delta", "g_delta", "gains_alpha", "gains_phi", "gains_gamma",
         "gains_delta"),
        {"rated_va": 60e3},
    )
    return CiderParams(
        l_alpha=float(d["l_alpha"]),
        r_alpha=float(d["r_alpha"]),
        c_phi=float(d["c_phi"]),
        g_phi=float(d["g_phi"]),
        l_gamma=float(d["l_gamma"]),
        r_gamma=float(d["r_gamma"]),
        c_delta=float(d["c_delta"]),
        g_delta=float(d["g_delta"]),
        gains_alpha=_gain_set(d["gains_alpha"], f"{context}.gains_alpha"),
        gains_phi=_gain_set(d["gains_phi"], f"{context}.gains_phi"),
        gains_gamma=_gain_set(d["gains_gamma"], f"{context}.gains_gamma"),
        gains_delta=_gain_set(d["gains_delta"], f"{context}.gains_delta"),
        rated_va=float(d["rated_va"]),
    )


def _gain_dict(g: GainSet) -> dict:
    return {"k_fb": g.k_fb, "t_fb": g.t_fb, "k_ft": g.k_ft}


def _params_dict(p: CiderParams) -> dict:
    return {
        "l_alpha": p.l_alpha, "r_alpha": p.r_alpha,
        "c_phi": p.c_phi, "g_phi": p.g_phi,
        "l_gamma": p.l_gamma, "r_gamma": p.r_gamma,
        "c_delta": p.c_delta, "g_delta": p.g_delta,
        "gains_alpha": _gain_dict(p.gains_alpha),
        "gains_phi": _gain_dict(p.gains_phi),
        "gains_gamma": _gain_dict(p.gains_gamma),
        "gains_delta": _gain_dict(p.gains_delta),
        "rated_va": p.rated_va,
    }


@dataclass(frozen=True)
class ResourceSpec:
    """One grid-following converter attached to a node."""

    node: str
    p_w: float
    q_var: float
    v_dc: float
    params: str  # name of a parameter set in Scenario.cider_params

    @property
    def setpoints(self) -> Setpoints:
        return Setpoints(self.p_w, self.q_var, self.v_dc)


@dataclass
class Scenario:
    name: str
    kind: str  # "direct" | "network"
    f1: float
    h_max: int
    v_base_rms: float
    p_base_w: float
    thevenin: TheveninSource
    thevenin_node: str
    cider_params: dict  # name -> CiderParams
    resources: list  # [ResourceSpec]
    nodes: list = field(default_factory=list)
    line_types: dict = field(default_factory=dict)  # name -> LineType
    lines: list = field(default_factory=list)  # [(from, to, length_m, type)]
    loads: list = field(default_factory=list)  # [LoadSpec]

    # --- construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        d = _take(
            doc, "scenario",
            ("name", "kind", "thevenin", "cider_params", "resources"),
            {
                "f1": 50.0, "h_max": 25,
                "v_base_rms": 230.0, "p_base_w": 50e3,
                "nodes": [], "line_types": {}, "lines": [], "loads": [],
            },
        )
        kind = d["kind"]
        if kind not in ("direct", "network"):
            raise ScenarioError(f"scenario.kind must be direct|network, got {kind!r}")

        te = _take(
            d["thevenin"], "thevenin",
            ("node", "v_rms", "z_abs", "r_to_x", "harmonics"),
        )
        harmonics = tuple(
            (int(h), float(mag), float(ang)) for h, mag, ang in te["harmonics"]
        )
        thevenin = TheveninSource(
            float(te["v_rms"]), float(te["z_abs"]), float(te["r_to_x"]), harmonics
        )

        cider_params = {
            name: _cider_params(obj, f"cider_params.{name}")
            for name, obj in d["cider_params"].items()
        }

        resources = []
        for i, obj in enumerate(d["resources"]):
            r = _take(obj, f"resources[{i}]",
                      ("node", "p_w", "q_var", "v_dc", "params"))
            if r["params"] not in cider_params:
                raise ScenarioError(
                    f"resources[{i}]: unknown parameter set {r['params']!r}")
            resources.append(ResourceSpec(
                r["node"], float(r["p_w"]), float(r["q_var"]),
                float(r["v_dc"]), r["params"]))

        line_types = {}
        for name, obj in d["line_types"].items():
            lt = _take(obj, f"line_types.{name}",
                       ("r1", "r0", "l1", "l0", "c1", "c0"))
            line_types[name] = LineType(**{k: float(v) for k, v in lt.items()})

        lines = []
        for i, obj in enumerate(d["lines"]):
            ln = _take(obj, f"lines[{i}]", ("from", "to", "length_m", "type"))
            if ln["type"] not in line_types:
                raise ScenarioError(f"lines[{i}]: unknown line type {ln['type']!r}")
            lines.append((ln["from"], ln["to"], float(ln["length_m"]), ln["type"]))

        loads = []
        for i, obj in enumerate(d["loads"]):
            ld = _take(obj, f"loads[{i}]", ("node", "p_w", "power_factor"),
                       {"weights": [1 / 3, 1 / 3, 1 / 3]})
            loads.append(LoadSpec(ld["node"], float(ld["p_w"]),
                                  float(ld["power_factor"]),
                                  tuple(float(w) for w in ld["weights"])))

        scen = cls(
            name=d["name"], kind=kind, f1=float(d["f1"]), h_max=int(d["h_max"]),
            v_base_rms=float(d["v_base_rms"]), p_base_w=float(d["p_base_w"]),
            thevenin=thevenin, thevenin_node=te["node"],
            cider_params=cider_params, resources=resources,
            nodes=list(d["nodes"]), line_types=line_types,
            lines=lines, loads=loads,
        )
        scen._validate()
        return scen

    def _validate(self):
        if self.kind == "direct":
            if len(self.resources) != 1:
                raise ScenarioError("a direct scenario needs exactly one resource")
            if self.nodes or self.lines or self.loads:
                raise ScenarioError(
                    "a direct scenario must not declare nodes, lines or loads")
        else:
            known = set(self.nodes)
            if self.thevenin_node not in known:
                raise ScenarioError(
                    f"thevenin.node {self.thevenin_node!r} not in nodes")
            for r in self.resources:
                if r.node not in known:
                    raise ScenarioError(f"resource node {r.node!r} not in nodes")
            seen = [r.node for r in self.resources]
            if len(set(seen)) != len(seen):
                raise ScenarioError("duplicate resource nodes")

    def to_dict(self) -> dict:
        doc = {
            "name": self.name, "kind": self.kind,
            "f1": self.f1, "h_max": self.h_max,
            "v_base_rms": self.v_base_rms, "p_base_w": self.p_base_w,
            "thevenin": {
                "node": self.thevenin_node,
                "v_rms": self.thevenin.v_rms,
                "z_abs": self.thevenin.z_abs,
                "r_to_x": self.thevenin.r_to_x,
                "harmonics": [list(h) for h in self.thevenin.harmonics],
            },
            "cider_params": {
                name: _params_dict(p) for name, p in self.cider_params.items()
            },
            "resources": [
                {"node": r.node, "p_w": r.p_w, "q_var": r.q_var,
                 "v_dc": r.v_dc, "params": r.params}
                for r in self.resources
            ],
            "nodes": list(self.nodes),
            "line_types": {
                name: {"r1": lt.r1, "r0": lt.r0, "l1": lt.l1,
                       "l0": lt.l0, "c1": lt.c1, "c0": lt.c0}
                for name, lt in self.line_types.items()
            },
            "lines": [
                {"from": f, "to": t, "length_m": lm, "type": ty}
                for f, t, lm, ty in self.lines
            ],
            "loads": [
                {"node": ld.node, "p_w": ld.power_w,
                 "power_factor": ld.power_factor,
                 "weights": list(ld.weights)}
                for ld in self.loads
            ],
        }
        return doc

    # --- study-object assembly ---------------------------------------------

    def index_set(self, h_max: int = None, guard: int = 0) -> HarmonicIndexSet:
        h = self.h_max if h_max is None else h_max
        return HarmonicIndexSet(self.f1, h + guard)

    def network(self) -> NetworkSpec:
        """NetworkSpec of the study (direct scenarios map to two nodes)."""
        if self.kind == "direct":
            node = self.resources[0].node
            src = self.thevenin_node
            branch = BranchSpec(src, node, self.thevenin.r,
                                self.thevenin.x / (TWO_PI * self.f1))
            return NetworkSpec(
                nodes=[src, node], forming=[src], following=[node],
                lines=[branch], v_base_rms=self.v_base_rms,
                p_base_w=self.p_base_w, f1=self.f1,
            )
        lines = [
            LineSpec(f, t, lm, self.line_types[ty])
            for f, t, lm, ty in self.lines
        ]
        return NetworkSpec(
            nodes=list(self.nodes), forming=[self.thevenin_node],
            following=[r.node for r in self.resources], lines=lines,
            loads=list(self.loads), v_base_rms=self.v_base_rms,
            p_base_w=self.p_base_w, f1=self.f1,
        )

    def forming_sources(self) -> dict:
        """Thevenin source per forming node, as the power-flow solver expects.

        For a direct scenario the source impedance is already an explicit
        branch, so the forming node carries the bare EMF (residual impedance
        only); the time-domain path uses the Thevenin source unchanged.
        """
        if self.kind == "direct":
            te = self.thevenin
            bare = TheveninSource(te.v_rms, _EMF_RESIDUAL_Z, 1.0, te.harmonics)
            return {self.thevenin_node: bare}
        return {self.thevenin_node: self.thevenin}

    def build_ciders(self, index_set: HarmonicIndexSet,
                     with_dc: bool = True) -> dict:
        """FollowerCider per following node on the given harmonic band."""
        return {
            r.node: FollowerCider(
                self.cider_params[r.params], r.setpoints, index_set,
                with_dc=with_dc, v_nom_rms=self.v_base_rms)
            for r in self.resources
        }


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return Scenario.from_dict(json.load(fh))


def dump_scenario(scen: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scen.to_dict(), fh, indent=2)
        fh.write("\n")


def bundled_scenario(name: str) -> Scenario:
    """Load a scenario shipped with the package (e.g. ``single_cider_te``)."""
    ref = importlib_resources.files("harmflow.scenarios") / f"{name}.json"
    try:
        text = ref.read_text()
    except FileNotFoundError:
        avail = sorted(
            p.name[:-5]
            for p in importlib_resources.files("harmflow.scenarios").iterdir()
            if p.name.endswith(".json")
        )
        raise ScenarioError(f"no bundled scenario {name!r}; available: {avail}")
    return Scenario.from_dict(json.loads(text))

"""Scenario files: a YAML document with sections graph, leaders, followers,
synthesis, masks, protocol, attacks, sim and output.

Agent indices in the file are 1-based (followers 1..N, leaders 1..M).
"""
from __future__ import annotations

import copy
import hashlib
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from .errors import AssumptionError, ScenarioError
from .graph import SignedDigraph, check_structural_balance
from .privacy import FollowerMaskParams, LeaderMaskParams, MaskSet
from .protocol import AttackSignal, ProtocolConfig
from .sim import AttackSpec, Scenario
from .synthesis import FollowerDynamics, LeaderDynamics, check_follower, check_leader, check_regulator_rank

BUNDLED = Path(__file__).parent / "scenarios"

Matrix = list[list[float]]
Scalar_or_list = Union[float, list[float]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GraphSection(_Strict):
    followers: int
    leaders: int
    adjacency: Optional[Matrix] = None
    edges: Optional[list[tuple[int, int, float]]] = None  # (i, j, a_ij): edge j -> i
    pinning: list[tuple[int, int, float]]  # (leader, follower, g)


class LeadersSection(_Strict):
    S: Matrix
    R: Matrix
    x0: Optional[Matrix] = None


class FollowerEntry(_Strict):
    A: Matrix
    B: Matrix
    C: Matrix
    x0: Optional[list[float]] = None
    zeta0: Optional[list[float]] = None
    Q: Optional[Matrix] = None
    U: Optional[Matrix] = None


class SynthesisSection(_Strict):
    Q_scale: float = 1.0
    U_scale: float = 1.0


class LeaderMaskEntry(_Strict):
    phi: float = 1.0
    sigma: float = 1.0
    delta: float = 1.0
    wp: Scalar_or_list = 0.5


class LeaderMaskOverride(LeaderMaskEntry):
    leader: int
    follower: int


class FollowerMaskEntry(_Strict):
    phi: float = 1.0
    sigma: float = 1.0
    wp: Scalar_or_list = 0.5


class FollowerMaskOverride(FollowerMaskEntry):
    follower: int


class MasksSection(_Strict):
    enabled: bool = True
    leader_default: LeaderMaskEntry = LeaderMaskEntry()
    follower_default: FollowerMaskEntry = FollowerMaskEntry()
    leader_overrides: list[LeaderMaskOverride] = []
    follower_overrides: list[FollowerMaskOverride] = []


class ProtocolSection(_Strict):
    mode: Literal["resilient", "standard"] = "resilient"
    q: Scalar_or_list = 1.0
    alpha: Scalar_or_list = 5.0
    c: Scalar_or_list = 1.0
    gain_cap: float = 1e9
    compensator: bool = True  # false drops the attack compensation term (ablation)


class AttackEntry(_Strict):
    follower: int
    layer: Literal["actuator", "observer"]
    coefficients: list[float]
    rates: list[float]
    t_start: float = 0.0

    @field_validator("rates")
    @classmethod
    def _positive(cls, v):
        if any(r <= 0 for r in v):
            raise ValueError("Assumption 6: attack growth rates must be strictly positive")
        return v


class SimSection(_Strict):
    t_end: float = 18.0
    dt: float = 1e-3
    record_stride: int = 10


class OutputSection(_Strict):
    dir: str = "runs"
    plots: bool = False


class ScenarioFile(_Strict):
    name: str = "scenario"
    graph: GraphSection
    leaders: LeadersSection
    followers: list[FollowerEntry]
    synthesis: SynthesisSection = SynthesisSection()
    masks: MasksSection = MasksSection()
    protocol: ProtocolSection = ProtocolSection()
    attacks: list[AttackEntry] = []
    sim: SimSection = SimSection()
    output: OutputSection = OutputSection()


# --- parsing ---------------------------------------------------------------------


def parse_text(text: str, source="<string>") -> dict:
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        raise ScenarioError(f"parse error at {where}: {exc.problem}") from None
    if not isinstance(raw, dict):
        raise ScenarioError(f"{source}: top level must be a mapping")
    return raw


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as YAML scalars."""
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ScenarioError(f"override {item!r} must look like key.path=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = raw
        for p in parts[:-1]:
            if isinstance(node, list):
                node = node[int(p)]
            else:
                node = node.setdefault(p, {})
        last = parts[-1]
        val = yaml.safe_load(value)
        if isinstance(node, list):
            node[int(last)] = val
        else:
            node[last] = val
    return raw


def validate(raw: dict) -> ScenarioFile:
    try:
        return ScenarioFile.model_validate(raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        path = ".".join(str(p) for p in err["loc"])
        msg = err["msg"]
        if "Assumption 6" in msg:
            raise AssumptionError(6, f"{path}: {msg}") from None
        raise ScenarioError(msg, path) from None


def _arr(v, name, ndim=2):
    try:
        a = np.array(v, dtype=float)
    except ValueError:
        raise ScenarioError("ragged matrix", name) from None
    if a.ndim != ndim:
        raise ScenarioError(f"expected a {ndim}-d array, got shape {a.shape}", name)
    return a


def _per_agent(v, n, name):
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.size == 1:
        return np.full(n, float(a[0]))
    if a.size != n:
        raise ScenarioError(f"expected a scalar or {n} values", name)
    return a


def build(sf: ScenarioFile) -> Scenario:
    gs = sf.graph
    n, m = gs.followers, gs.leaders
    if n < 1 or m < 1:
        raise ScenarioError("need at least one follower and one leader", "graph")
    if gs.adjacency is not None and gs.edges is not None:
        raise ScenarioError("give either adjacency or edges, not both", "graph")
    if gs.adjacency is not None:
        adj = _arr(gs.adjacency, "graph.adjacency")
        if adj.shape != (n, n):
            raise ScenarioError(f"adjacency must be {n}x{n}", "graph.adjacency")
    else:
        adj = np.zeros((n, n))
        for k, (i, j, w) in enumerate(gs.edges or []):
            if not (1 <= i <= n and 1 <= j <= n):
                raise ScenarioError(f"follower index out of range in ({i}, {j})", f"graph.edges.{k}")
            adj[i - 1, j - 1] = w
    pin = np.zeros((n, m))
    for k, (r, i, w) in enumerate(gs.pinning):
        if not (1 <= r <= m and 1 <= i <= n):
            raise ScenarioError(f"index out of range in (leader {r}, follower {i})", f"graph.pinning.{k}")
        pin[i - 1, r - 1] = w
    graph = SignedDigraph(adj, pin)
    bal = check_structural_balance(graph)
    if not bal.balanced:
        cyc = " -> ".join(str(c + 1) for c in bal.conflict_cycle)
        raise AssumptionError(3, f"follower graph is not structurally balanced (cycle {cyc})")

    leader = LeaderDynamics(_arr(sf.leaders.S, "leaders.S"), _arr(sf.leaders.R, "leaders.R"))
    l = leader.l  # noqa: E741
    check_leader(leader)
    xr0 = (
        _arr(sf.leaders.x0, "leaders.x0")
        if sf.leaders.x0 is not None
        else default_leader_states(m, l)
    )
    if xr0.shape != (m, l):
        raise ScenarioError(f"leader initial states must be {m}x{l}", "leaders.x0")

    if len(sf.followers) != n:
        raise ScenarioError(f"expected {n} followers, got {len(sf.followers)}", "followers")
    followers, x0, zeta0, Qs, Us = [], [], [], [], []
    for i, fe in enumerate(sf.followers):
        p = f"followers.{i}"
        try:
            f = FollowerDynamics(_arr(fe.A, p + ".A"), _arr(fe.B, p + ".B"), _arr(fe.C, p + ".C"))
        except ValueError as exc:
            raise ScenarioError(str(exc), p) from None
        if f.z != leader.z:
            raise ScenarioError(f"output dimension {f.z} != leader output dimension {leader.z}", p + ".C")
        try:
            check_follower(f)
            check_regulator_rank(f, leader)
        except AssumptionError as exc:
            raise type(exc)(*_reargs(exc, f"follower {i + 1}: ")) from None
        followers.append(f)
        x0.append(np.zeros(f.n) if fe.x0 is None else _arr(fe.x0, p + ".x0", 1))
        zeta0.append(np.zeros(l) if fe.zeta0 is None else _arr(fe.zeta0, p + ".zeta0", 1))
        Qs.append(sf.synthesis.Q_scale * np.eye(f.n) if fe.Q is None else _arr(fe.Q, p + ".Q"))
        Us.append(sf.synthesis.U_scale * np.eye(f.m) if fe.U is None else _arr(fe.U, p + ".U"))

    masks = _build_masks(sf.masks, n, m, l)
    pr = sf.protocol
    protocol = ProtocolConfig(
        pr.mode,
        _per_agent(pr.q, n, "protocol.q"),
        _per_agent(pr.alpha, n, "protocol.alpha"),
        _per_agent(pr.c, n, "protocol.c"),
        pr.gain_cap,
        pr.compensator,
    )
    attacks = []
    for k, a in enumerate(sf.attacks):
        if not 1 <= a.follower <= n:
            raise ScenarioError(f"follower {a.follower} out of range", f"attacks.{k}.follower")
        try:
            sig = AttackSignal(a.coefficients, a.rates, a.t_start)
        except ValueError as exc:
            raise ScenarioError(str(exc), f"attacks.{k}") from None
        attacks.append(AttackSpec(a.follower - 1, a.layer, sig))
    return Scenario(
        graph=graph,
        followers=followers,
        x0=x0,
        leader=leader,
        xr0=xr0,
        Q=Qs,
        U=Us,
        masks=masks,
        protocol=protocol,
        attacks=attacks,
        t_end=sf.sim.t_end,
        dt=sf.sim.dt,
        record_stride=sf.sim.record_stride,
        zeta0=np.array(zeta0),
    )


def _reargs(exc, prefix):
    msg = str(exc).split(": ", 1)[-1]
    if hasattr(exc, "eigenvalue"):
        return exc.eigenvalue, prefix + msg
    return exc.assumption, prefix + msg


def default_leader_states(m, l):  # noqa: E741
    """Unit-norm, phase-shifted starting points (1,0), (0,1), (-1,0), (0,-1), ..."""
    out = np.zeros((m, l))
    if l == 1:
        out[:, 0] = [(-1.0) ** r for r in range(m)]
        return out
    for r in range(m):
        ang = r * np.pi / 2
        out[r, 0], out[r, 1] = np.cos(ang), np.sin(ang)
    return np.round(out, 15)


def _build_masks(ms: MasksSection, n, m, l):  # noqa: E741
    def wp(v, path):
        a = np.atleast_1d(np.asarray(v, dtype=float))
        if a.size not in (1, l):
            raise ScenarioError(f"mask offset must be a scalar or have {l} entries", path)
        return np.broadcast_to(a, (l,)).copy()

    ld, fd = ms.leader_default, ms.follower_default
    leader = [
        [LeaderMaskParams(ld.phi, ld.sigma, ld.delta, wp(ld.wp, "masks.leader_default.wp")) for _ in range(m)]
        for _ in range(n)
    ]
    follower = [FollowerMaskParams(fd.phi, fd.sigma, wp(fd.wp, "masks.follower_default.wp")) for _ in range(n)]
    for k, o in enumerate(ms.leader_overrides):
        if not (1 <= o.leader <= m and 1 <= o.follower <= n):
            raise ScenarioError("index out of range", f"masks.leader_overrides.{k}")
        leader[o.follower - 1][o.leader - 1] = LeaderMaskParams(
            o.phi, o.sigma, o.delta, wp(o.wp, f"masks.leader_overrides.{k}.wp")
        )
    for k, o in enumerate(ms.follower_overrides):
        if not 1 <= o.follower <= n:
            raise ScenarioError("index out of range", f"masks.follower_overrides.{k}")
        follower[o.follower - 1] = FollowerMaskParams(o.phi, o.sigma, wp(o.wp, f"masks.follower_overrides.{k}.wp"))
    if ms.enabled:
        for row in leader:
            for p in row:
                p.check()
        for p in follower:
            p.check()
    return MaskSet.build(leader, follower, l, enabled=ms.enabled)


def load_raw(path, overrides=None) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
    return apply_overrides(parse_text(text, str(path)), overrides)


def load_scenario(path, overrides=None) -> Scenario:
    return build(validate(load_raw(path, overrides)))


def load_with_file(path, overrides=None):
    sf = validate(load_raw(path, overrides))
    return sf, build(sf)


def bundled(name="paper_sec4") -> Path:
    return BUNDLED / f"{name}.scenario"


# --- normalised dump ------------------------------------------------------------------


def _lst(a):
    return np.asarray(a, dtype=float).tolist()


def normalized(sc: Scenario, name="scenario", output: OutputSection | None = None) -> dict:
    """Fully explicit document for ``sc``: dense adjacency, per-follower
    weights and every mask parameter spelled out."""
    n, m = sc.n, sc.m
    g = sc.graph
    pinning = [[r + 1, i + 1, float(g.pinning[i, r])] for r in range(m) for i in range(n) if g.pinning[i, r] != 0]
    mk = sc.masks
    return {
        "name": name,
        "graph": {"followers": n, "leaders": m, "adjacency": _lst(g.adjacency), "pinning": pinning},
        "leaders": {"S": _lst(sc.leader.S), "R": _lst(sc.leader.R), "x0": _lst(sc.xr0)},
        "followers": [
            {
                "A": _lst(f.A), "B": _lst(f.B), "C": _lst(f.C),
                "x0": _lst(x), "zeta0": _lst(z), "Q": _lst(q), "U": _lst(u),
            }
            for f, x, z, q, u in zip(sc.followers, sc.x0, sc.zeta0, sc.Q, sc.U)
        ],
        "synthesis": {"Q_scale": 1.0, "U_scale": 1.0},
        "masks": {
            "enabled": bool(mk.enabled),
            "leader_default": {"phi": 1.0, "sigma": 1.0, "delta": 1.0, "wp": 0.5},
            "follower_default": {"phi": 1.0, "sigma": 1.0, "wp": 0.5},
            "leader_overrides": [
                {
                    "leader": r + 1, "follower": i + 1,
                    "phi": float(mk.leader_phi[i, r]), "sigma": float(mk.leader_sigma[i, r]),
                    "delta": float(mk.leader_delta[i, r]), "wp": _lst(mk.leader_wp[i, r]),
                }
                for i in range(n) for r in range(m)
            ],
            "follower_overrides": [
                {
                    "follower": j + 1, "phi": float(mk.follower_phi[j]),
                    "sigma": float(mk.follower_sigma[j]), "wp": _lst(mk.follower_wp[j]),
                }
                for j in range(n)
            ],
        },
        "protocol": {
            "mode": sc.protocol.mode,
            "q": _lst(sc.protocol.q),
            "alpha": _lst(sc.protocol.alpha),
            "c": _lst(sc.protocol.c),
            "gain_cap": float(sc.protocol.gain_cap),
            "compensator": bool(sc.protocol.compensator),
        },
        "attacks": [
            {
                "follower": a.agent + 1, "layer": a.layer,
                "coefficients": _lst(a.signal.coefficients), "rates": _lst(a.signal.rates),
                "t_start": float(a.signal.t_start),
            }
            for a in sc.attacks
        ],
        "sim": {"t_end": float(sc.t_end), "dt": float(sc.dt), "record_stride": int(sc.record_stride)},
        "output": (output or OutputSection()).model_dump(),
    }


def dump_normalized(sc: Scenario, name="scenario", output=None) -> str:
    return yaml.safe_dump(normalized(sc, name, output), sort_keys=False, default_flow_style=None)


def scenario_hash(sc: Scenario) -> str:
    doc = normalized(sc)
    doc.pop("output")
    doc.pop("name")
    return hashlib.sha256(yaml.safe_dump(doc, sort_keys=True).encode()).hexdigest()[:16]

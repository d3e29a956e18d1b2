"""Linearized swing-equation network models.

Builds the continuous model ``x' = A x + B u + E d`` over generator states
``x_i = (delta_i, omega_i)`` by eliminating every algebraic bus angle, splits
it into per-generator blocks, and discretizes with a forward-Euler step.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .polytope import Box, HPolytope

NEIGHBOR_TOL = 1e-12
BUS_KINDS = ("generator", "load", "passive")


class NetworkSpecError(ValueError):
    """Malformed network file; the message carries the offending field path."""


class SingularBusError(ValueError):
    pass


class SingularNetworkError(ValueError):
    pass


@dataclass(frozen=True)
class BusSpec:
    id: str
    kind: str
    voltage: float
    theta0: float  # rad
    inertia: float = 0.0
    damping: float = 0.0
    emf: float = 0.0
    reactance: float = 0.0
    delta0: float = 0.0  # rad
    disturbance_bound: float = 0.0


@dataclass(frozen=True)
class LineSpec:
    from_bus: str
    to_bus: str
    susceptance: float
    conductance: float = 0.0


@dataclass(frozen=True)
class ConstraintSpec:
    """Box bounds: per generator (delta_max rad, omega_max rad/s, u_max p.u.)
    and per load (d_max p.u.)."""

    delta_max: dict
    omega_max: dict
    u_max: dict
    d_max: dict

    def state_box(self, bus_id):
        return Box.symmetric([self.delta_max[bus_id], self.omega_max[bus_id]]).to_hpolytope()

    def input_box(self, bus_id):
        return Box.symmetric([self.u_max[bus_id]]).to_hpolytope()

    def disturbance_box(self, load_ids):
        if not load_ids:
            return HPolytope.universe(0)
        return Box.symmetric([self.d_max[j] for j in load_ids]).to_hpolytope()


@dataclass(frozen=True)
class NetworkSpec:
    buses: tuple
    lines: tuple
    base_frequency: float = 60.0

    @property
    def bus_ids(self):
        return [b.id for b in self.buses]

    @property
    def generators(self):
        return [b for b in self.buses if b.kind == "generator"]

    @property
    def loads(self):
        return [b for b in self.buses if b.kind == "load"]

    def __post_init__(self):
        ids = self.bus_ids
        if len(set(ids)) != len(ids):
            raise NetworkSpecError("buses: duplicate bus identifiers")
        known = set(ids)
        for k, ln in enumerate(self.lines):
            for end in (ln.from_bus, ln.to_bus):
                if end not in known:
                    raise NetworkSpecError(f"lines[{k}]: unknown bus {end!r}")
        for b in self.buses:
            if b.kind not in BUS_KINDS:
                raise NetworkSpecError(f"buses[{b.id}].kind: {b.kind!r}")
            if b.kind == "generator":
                if b.inertia <= 0 or b.damping < 0 or b.reactance <= 0 or b.voltage <= 0:
                    raise NetworkSpecError(
                        f"buses[{b.id}]: generator needs inertia > 0, damping >= 0, "
                        "reactance > 0, voltage > 0")
            if b.kind == "load" and b.disturbance_bound < 0:
                raise NetworkSpecError(f"buses[{b.id}].disturbance_bound: negative")
        if not _connected(ids, self.lines):
            raise NetworkSpecError("lines: network graph is not connected")


def _connected(ids, lines):
    adj = {i: set() for i in ids}
    for ln in lines:
        adj[ln.from_bus].add(ln.to_bus)
        adj[ln.to_bus].add(ln.from_bus)
    seen, stack = set(), [ids[0]] if ids else []
    while stack:
        v = stack.pop()
        if v not in seen:
            seen.add(v)
            stack.extend(adj[v] - seen)
    return len(seen) == len(ids)


def _get(obj, key, path, kind=float, default=None):
    if key not in obj:
        if default is not None:
            return default
        raise NetworkSpecError(f"{path}.{key}: missing")
    try:
        return kind(obj[key])
    except (TypeError, ValueError):
        raise NetworkSpecError(f"{path}.{key}: expected {kind.__name__}, "
                               f"got {obj[key]!r}") from None


def parse_network(doc):
    """Build ``(NetworkSpec, ConstraintSpec)`` from a decoded JSON document.

    Angles in the document are degrees; the safe-set bounds are given as
    ``delta_max_deg`` and ``omega_max_hz`` and converted to rad and rad/s.
    """
    if not isinstance(doc, dict):
        raise NetworkSpecError("<root>: expected an object")
    for key in ("buses", "lines", "base_frequency_hz", "constraints"):
        if key not in doc:
            raise NetworkSpecError(f"<root>.{key}: missing")
    buses = []
    for k, raw in enumerate(doc["buses"]):
        path = f"buses[{k}]"
        if not isinstance(raw, dict):
            raise NetworkSpecError(f"{path}: expected an object")
        kind = _get(raw, "kind", path, str)
        kw = dict(id=_get(raw, "id", path, str), kind=kind,
                  voltage=_get(raw, "voltage", path),
                  theta0=math.radians(_get(raw, "theta0", path)))
        if kind == "generator":
            kw.update(inertia=_get(raw, "inertia", path),
                      damping=_get(raw, "damping", path),
                      emf=_get(raw, "emf", path),
                      reactance=_get(raw, "reactance", path),
                      delta0=math.radians(_get(raw, "delta0", path)))
        elif kind == "load":
            kw.update(disturbance_bound=_get(raw, "disturbance_bound", path))
        buses.append(BusSpec(**kw))
    lines = []
    for k, raw in enumerate(doc["lines"]):
        path = f"lines[{k}]"
        lines.append(LineSpec(from_bus=_get(raw, "from", path, str),
                              to_bus=_get(raw, "to", path, str),
                              susceptance=_get(raw, "susceptance", path),
                              conductance=_get(raw, "conductance", path, default=0.0)))
    spec = NetworkSpec(tuple(buses), tuple(lines),
                       _get(doc, "base_frequency_hz", "<root>"))

    cons = doc["constraints"]
    path = "constraints"
    per_bus = cons.get("per_bus", {})
    dmax, wmax, umax = {}, {}, {}
    for g in spec.generators:
        over = per_bus.get(g.id, {})
        src = {**cons, **over}
        dmax[g.id] = math.radians(_get(src, "delta_max_deg", f"{path}[{g.id}]"))
        wmax[g.id] = 2 * math.pi * _get(src, "omega_max_hz", f"{path}[{g.id}]")
        umax[g.id] = _get(src, "u_max", f"{path}[{g.id}]")
    for name, table in (("delta_max_deg", dmax), ("omega_max_hz", wmax), ("u_max", umax)):
        for bid, v in table.items():
            if not v > 0:
                raise NetworkSpecError(f"{path}[{bid}].{name}: must be positive")
    d_max = {b.id: b.disturbance_bound for b in spec.loads}
    return spec, ConstraintSpec(dmax, wmax, umax, d_max)


def load_network(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise NetworkSpecError(f"{path}:{exc.lineno}: {exc.msg}") from None
    return parse_network(doc)


def build_coupling_constants(spec, tol=1e-9):
    """Return ``C`` (N_B x N_B), ``K`` (N_G x N_G diag) and ``H`` (N_B diag)."""
    ids = spec.bus_ids
    pos = {b: k for k, b in enumerate(ids)}
    bus = {b.id: b for b in spec.buses}
    nb = len(ids)
    C = np.zeros((nb, nb))
    for ln in spec.lines:
        i, j = pos[ln.from_bus], pos[ln.to_bus]
        if i == j:
            continue
        bi, bj = bus[ln.from_bus], bus[ln.to_bus]
        dth = bi.theta0 - bj.theta0
        vv = bi.voltage * bj.voltage
        C[i, j] += vv * (ln.susceptance * math.cos(dth) - ln.conductance * math.sin(dth))
        C[j, i] += vv * (ln.susceptance * math.cos(-dth) - ln.conductance * math.sin(-dth))
    Kbus = np.zeros(nb)
    for g in spec.generators:
        Kbus[pos[g.id]] = g.emf * g.voltage / g.reactance * math.cos(g.delta0 - g.theta0)
    Ci = C.sum(axis=1)
    denom = Ci + Kbus
    bad = np.nonzero(denom <= tol)[0]
    if bad.size:
        raise SingularBusError(f"bus {ids[bad[0]]}: C_i + K_i = {denom[bad[0]]:.3g}")
    H = np.diag(1.0 / denom)
    gpos = [pos[g.id] for g in spec.generators]
    K = np.diag(Kbus[gpos])
    return C, K, H


@dataclass(frozen=True)
class ContinuousModel:
    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    generator_ids: tuple
    load_ids: tuple
    bus_ids: tuple
    angle_map: np.ndarray = field(repr=False)  # (H^-1 - C)^-1

    @property
    def n_generators(self):
        return len(self.generator_ids)


def incidence(spec):
    """``I_G`` (N_B x N_G) and ``I_L`` (N_B x N_L) bus-membership matrices."""
    ids = spec.bus_ids
    pos = {b: k for k, b in enumerate(ids)}
    IG = np.zeros((len(ids), len(spec.generators)))
    for j, g in enumerate(spec.generators):
        IG[pos[g.id], j] = 1.0
    IL = np.zeros((len(ids), len(spec.loads)))
    for j, ld in enumerate(spec.loads):
        IL[pos[ld.id], j] = 1.0
    return IG, IL


def eliminate_algebraic(spec, C, K, H):
    """Substitute the closed-form bus angles into the swing equations."""
    IG, IL = incidence(spec)
    ng = IG.shape[1]
    L = np.diag(1.0 / np.diag(H)) - C
    if np.linalg.cond(L) > 1e12:
        raise SingularNetworkError("H^-1 - C is singular")
    Z = np.linalg.inv(L)
    gens = spec.generators
    Minv = np.diag([1.0 / g.inertia for g in gens])
    A = np.zeros((2 * ng, 2 * ng))
    for i, g in enumerate(gens):
        A[2 * i:2 * i + 2, 2 * i:2 * i + 2] = [[0.0, 1.0],
                                               [-K[i, i] / g.inertia, -g.damping / g.inertia]]
    T = np.kron(K @ Minv @ IG.T, np.array([[0.0], [1.0]]))
    R = np.kron(np.eye(ng), np.array([[1.0, 0.0]]))
    TZ = T @ Z
    # loads enter the angle solve as -I_L d, so E carries that sign
    return ContinuousModel(A=A + TZ @ IG @ K @ R, B=TZ @ IG, E=-TZ @ IL,
                           generator_ids=tuple(g.id for g in gens),
                           load_ids=tuple(ld.id for ld in spec.loads),
                           bus_ids=tuple(spec.bus_ids), angle_map=Z)


def build_continuous(spec):
    C, K, H = build_coupling_constants(spec)
    return eliminate_algebraic(spec, C, K, H)


def bus_angles(model, spec, u, d, delta):
    """Closed-form algebraic angles ``theta`` for given inputs and rotor angles."""
    IG, IL = incidence(spec)
    _, K, _ = build_coupling_constants(spec)
    return model.angle_map @ (IG @ u - IL @ d + IG @ K @ delta)


def power_flow_mismatch(spec):
    """DC power-flow balance at the stored operating point.

    Returns per-bus mismatch ``P_injected - P_network`` for generator and
    passive buses (load buses absorb whatever flows in and are reported as 0).
    Generator injection is ``e V / X_d sin(delta0 - theta0)``.
    """
    ids = spec.bus_ids
    pos = {b: k for k, b in enumerate(ids)}
    bus = {b.id: b for b in spec.buses}
    flow = np.zeros(len(ids))
    for ln in spec.lines:
        bi, bj = bus[ln.from_bus], bus[ln.to_bus]
        p = bi.voltage * bj.voltage * ln.susceptance * (bi.theta0 - bj.theta0)
        flow[pos[bi.id]] += p
        flow[pos[bj.id]] -= p
    mism = {}
    for b in spec.buses:
        if b.kind == "generator":
            inj = b.emf * b.voltage / b.reactance * math.sin(b.delta0 - b.theta0)
            mism[b.id] = inj - flow[pos[b.id]]
        elif b.kind == "passive":
            mism[b.id] = -flow[pos[b.id]]
        else:
            mism[b.id] = 0.0
    return mism


@dataclass(frozen=True)
class SubsystemModel:
    """Blocks of one generator's row: ``x_i' = A1 x_i + B1 u_i + A2 y_i + B2 u_N + E d``."""

    index: int
    bus_id: str
    A1: np.ndarray
    B1: np.ndarray
    A2: np.ndarray
    B2: np.ndarray
    E: np.ndarray
    neighbors: tuple


def decompose(model, tol=NEIGHBOR_TOL):
    ng = model.n_generators
    A, B, E = model.A, model.B, model.E
    subs = []
    for i in range(ng):
        rows = slice(2 * i, 2 * i + 2)
        nbrs = tuple(j for j in range(ng) if j != i and (
            np.linalg.norm(A[rows, 2 * j:2 * j + 2]) > tol
            or np.linalg.norm(B[rows, j]) > tol))
        A2 = (np.hstack([A[rows, 2 * j:2 * j + 2] for j in nbrs])
              if nbrs else np.zeros((2, 0)))
        B2 = B[rows][:, list(nbrs)] if nbrs else np.zeros((2, 0))
        subs.append(SubsystemModel(index=i, bus_id=model.generator_ids[i],
                                   A1=A[rows, rows].copy(), B1=B[rows, i:i + 1].copy(),
                                   A2=A2, B2=B2, E=E[rows].copy(), neighbors=nbrs))
    return subs


def reassemble(subsystems, n_loads):
    """Inverse of :func:`decompose`: the full ``(A, B, E)``."""
    ng = len(subsystems)
    A = np.zeros((2 * ng, 2 * ng))
    B = np.zeros((2 * ng, ng))
    E = np.zeros((2 * ng, n_loads))
    for s in subsystems:
        i = s.index
        rows = slice(2 * i, 2 * i + 2)
        A[rows, 2 * i:2 * i + 2] = s.A1
        B[rows, i] = s.B1[:, 0]
        for k, j in enumerate(s.neighbors):
            A[rows, 2 * j:2 * j + 2] = s.A2[:, 2 * k:2 * k + 2]
            B[rows, j] = s.B2[:, k]
        E[rows] = s.E
    return A, B, E


@dataclass(frozen=True)
class DiscreteModel:
    h: float
    subsystems: tuple  # hatted SubsystemModel blocks
    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    generator_ids: tuple
    load_ids: tuple

    def step(self, x, u, d):
        return self.A @ x + self.B @ u + self.E @ d

    def step_blocks(self, x, u, d):
        """Per-subsystem update; must agree with :meth:`step`."""
        out = np.empty_like(np.asarray(x, dtype=float))
        for s in self.subsystems:
            i = s.index
            xi = x[2 * i:2 * i + 2]
            yi = np.concatenate([x[2 * j:2 * j + 2] for j in s.neighbors]) if s.neighbors else np.zeros(0)
            un = u[list(s.neighbors)] if s.neighbors else np.zeros(0)
            out[2 * i:2 * i + 2] = (s.A1 @ xi + s.B1[:, 0] * u[i] + s.A2 @ yi
                                    + s.B2 @ un + s.E @ d)
        return out


def discretize(model, subsystems, h):
    if not h > 0:
        raise ValueError("time step must be positive")
    hat = tuple(SubsystemModel(index=s.index, bus_id=s.bus_id,
                               A1=np.eye(2) + h * s.A1, B1=h * s.B1,
                               A2=h * s.A2, B2=h * s.B2, E=h * s.E,
                               neighbors=s.neighbors) for s in subsystems)
    n = model.A.shape[0]
    return DiscreteModel(h=h, subsystems=hat, A=np.eye(n) + h * model.A,
                         B=h * model.B, E=h * model.E,
                         generator_ids=model.generator_ids, load_ids=model.load_ids)


def theorem1_step_bound(subsystems, c=1.0):
    """Largest Euler step for which the consensus sweep provably contracts.

    ``c * min_{i,j} 1 / (||A2_i||_2 sqrt(2 |N_j|))`` over the continuous
    coupling blocks; ``inf`` for a decoupled network.
    """
    if not c > 0:
        raise ValueError("c must be positive")
    norms = [np.linalg.norm(s.A2, 2) for s in subsystems if s.A2.size]
    degrees = [len(s.neighbors) for s in subsystems if s.neighbors]
    if not norms or max(norms) == 0.0 or not degrees:
        return math.inf
    return float(c / (max(norms) * math.sqrt(2 * max(degrees))))


def build_model(spec, h):
    """Convenience: continuous model, its blocks, and the discrete model."""
    model = build_continuous(spec)
    subs = decompose(model)
    return model, subs, discretize(model, subs, h)


def bundled_case(name):
    """Path of a case file shipped with the package (``nine_bus``, ``two_gen``)."""
    from importlib import resources
    fname = name if name.endswith(".json") else f"{name}.json"
    path = resources.files("rcigrid") / "cases" / fname
    if not path.is_file():
        raise FileNotFoundError(f"no bundled case named {name!r}")
    return str(path)

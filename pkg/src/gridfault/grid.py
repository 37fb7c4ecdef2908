"""Distribution-network model: buses, three-phase lines, sources, loads.

Phases are modelled as three decoupled conductors with equal series
impedance, so the (3N)x(3N) bus admittance matrix is block-sparse with
bus-major, phase-minor (a, b, c) ordering.  Loads are held as constant
per-phase admittances; complex powers in network files are converted at
nominal phase voltage when the file is read.

Network files are JSON with top-level keys ``buses``, ``lines``,
``sources`` and ``loads``; impedances are ``[re, im]`` pairs in ohms and
voltages are in volts.  Buses are referenced by name (1-based naming as
in single-line diagrams); internal indices are 0-based in file order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

SQRT3 = math.sqrt(3.0)

BUNDLED_NETWORKS = ("potsdam13", "ieee123-main46")


class NetworkError(ValueError):
    """A network description violates a structural invariant."""


class DisconnectedGraphError(NetworkError):
    """The bus graph has more than one connected component."""


@dataclass(frozen=True)
class Bus:
    index: int
    name: str
    v_ll: float  # nominal line-line voltage, volts

    @property
    def v_phase(self) -> float:
        return self.v_ll / SQRT3


@dataclass(frozen=True)
class Line:
    i: int
    j: int
    z: complex  # per-phase series impedance, ohms


@dataclass(frozen=True)
class Source:
    """Thevenin source: internal three-phase EMF behind one impedance."""

    bus: int
    phasors: tuple[complex, complex, complex]  # phase a, b, c EMF, volts
    z_int: complex


@dataclass(frozen=True)
class Load:
    bus: int
    y_abc: tuple[complex, complex, complex]  # per-phase admittance, siemens


@dataclass(frozen=True)
class NetworkGraph:
    """Immutable graph-plus-circuit description of one feeder."""

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    sources: tuple[Source, ...] = ()
    loads: tuple[Load, ...] = ()
    name: str = ""
    frequency_hz: float = 60.0
    measured_buses: tuple[int, ...] = ()  # default measurement set, 0-based

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    def bus_index(self, name: str) -> int:
        for b in self.buses:
            if b.name == name:
                return b.index
        raise NetworkError(f"unknown bus name {name!r}")

    def validate(self) -> None:
        n = self.n_buses
        if n == 0:
            raise NetworkError("network has no buses")
        for pos, b in enumerate(self.buses):
            if b.index != pos:
                raise NetworkError(
                    f"bus indices must be 0..{n - 1} in order; "
                    f"bus {b.name!r} has index {b.index} at position {pos}"
                )
            if b.v_ll <= 0:
                raise NetworkError(f"bus {b.name!r} has non-positive voltage")
        names = [b.name for b in self.buses]
        if len(set(names)) != n:
            raise NetworkError("duplicate bus names")
        for ln in self.lines:
            if not (0 <= ln.i < n and 0 <= ln.j < n):
                raise NetworkError(f"line ({ln.i},{ln.j}) references a missing bus")
            if ln.i == ln.j:
                raise NetworkError(f"self-loop line at bus {self.buses[ln.i].name!r}")
        for s in self.sources:
            if not 0 <= s.bus < n:
                raise NetworkError(f"source references missing bus index {s.bus}")
        for l in self.loads:
            if not 0 <= l.bus < n:
                raise NetworkError(f"load references missing bus index {l.bus}")
        for m in self.measured_buses:
            if not 0 <= m < n:
                raise NetworkError(f"measured bus index {m} out of range")
        if not _connected(n, [(ln.i, ln.j) for ln in self.lines]):
            raise DisconnectedGraphError(
                "bus graph is not connected (diagnostics require one component)"
            )


def _connected(n: int, edges: list[tuple[int, int]]) -> bool:
    if n <= 1:
        return True
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * n
    stack = [0]
    seen[0] = True
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return all(seen)


def build_adjacency(graph: NetworkGraph, mode: str = "binary") -> np.ndarray:
    """N x N adjacency matrix of the bus graph.

    ``binary`` sets A_ij = 1 where any line connects i and j (duplicate
    lines collapse); ``admittance_weighted`` sets A_ij = |1/z_line|, with
    parallel lines summing.  Raises on a disconnected graph.
    """
    if mode not in ("binary", "admittance_weighted"):
        raise ValueError(f"unknown adjacency mode {mode!r}")
    n = graph.n_buses
    if not _connected(n, [(ln.i, ln.j) for ln in graph.lines]):
        raise DisconnectedGraphError(
            "bus graph is not connected (diagnostics require one component)"
        )
    a = np.zeros((n, n), dtype=float)
    for ln in graph.lines:
        if mode == "binary":
            a[ln.i, ln.j] = 1.0
            a[ln.j, ln.i] = 1.0
        else:
            if ln.z == 0:
                raise NetworkError(f"zero-impedance line ({ln.i},{ln.j})")
            w = abs(1.0 / ln.z)
            a[ln.i, ln.j] += w
            a[ln.j, ln.i] += w
    return a


def normalized_propagation(a: np.ndarray) -> np.ndarray:
    """Symmetric degree-normalized propagation matrix with self-loops.

    Returns D~^{-1/2} (A + I) D~^{-1/2} where D~ is the degree matrix of
    A + I.  Input must be square, symmetric and nonnegative.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValueError("adjacency must be symmetric")
    if (a < 0).any():
        raise ValueError("adjacency must be nonnegative")
    at = a + np.eye(a.shape[0])
    deg = at.sum(axis=1)
    if (deg <= 0).any():  # unreachable: self-loops force deg >= 1
        raise RuntimeError("internal error: zero-degree row after self-loops")
    # Elementwise a_ij / sqrt(d_i d_j): symmetric to the last bit.
    return at / np.sqrt(np.outer(deg, deg))


def build_admittance(
    graph: NetworkGraph,
    load_multipliers: np.ndarray | None = None,
) -> np.ndarray:
    """(3N)x(3N) complex bus admittance matrix, bus-major phase-minor.

    Lines are stamped as series branch admittances; load and source
    internal admittances land on the diagonal.  ``load_multipliers`` is
    an optional (n_loads, 3) array of per-load per-phase scalings.
    """
    n = graph.n_buses
    y = np.zeros((3 * n, 3 * n), dtype=complex)
    for ln in graph.lines:
        if ln.z == 0:
            raise NetworkError(
                f"zero-impedance line between buses "
                f"{graph.buses[ln.i].name!r} and {graph.buses[ln.j].name!r}"
            )
        yl = 1.0 / ln.z
        for p in range(3):
            a, b = 3 * ln.i + p, 3 * ln.j + p
            y[a, a] += yl
            y[b, b] += yl
            y[a, b] -= yl
            y[b, a] -= yl
    if load_multipliers is not None:
        load_multipliers = np.asarray(load_multipliers, dtype=float)
        if load_multipliers.shape != (len(graph.loads), 3):
            raise ValueError(
                f"load multipliers shape {load_multipliers.shape} != "
                f"({len(graph.loads)}, 3)"
            )
    for k, load in enumerate(graph.loads):
        for p in range(3):
            m = 1.0 if load_multipliers is None else load_multipliers[k, p]
            y[3 * load.bus + p, 3 * load.bus + p] += load.y_abc[p] * m
    for src in graph.sources:
        if src.z_int == 0:
            raise NetworkError(f"source at bus index {src.bus} has zero impedance")
        for p in range(3):
            y[3 * src.bus + p, 3 * src.bus + p] += 1.0 / src.z_int
    return y


# --- network file reading ------------------------------------------------

def _as_complex(pair, what: str) -> complex:
    if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
        raise NetworkError(f"{what} must be a [re, im] pair, got {pair!r}")
    return complex(float(pair[0]), float(pair[1]))


def _balanced_phasors(v_phase: float, angle_deg: float) -> tuple[complex, complex, complex]:
    base = math.radians(angle_deg)
    return tuple(
        v_phase * complex(math.cos(base + sh), math.sin(base + sh))
        for sh in (0.0, -2.0 * math.pi / 3.0, 2.0 * math.pi / 3.0)
    )


def _load_admittance(entry: dict, v_phase: float) -> tuple[complex, complex, complex]:
    if "y_s" in entry:
        y = _as_complex(entry["y_s"], "load admittance")
        return (y, y, y)
    if "y_s_abc" in entry:
        return tuple(_as_complex(p, "load admittance") for p in entry["y_s_abc"])
    if "s_va" in entry:
        s = _as_complex(entry["s_va"], "load power")
        y = s.conjugate() / (v_phase * v_phase)
        return (y, y, y)
    if "s_va_abc" in entry:
        return tuple(
            _as_complex(p, "load power").conjugate() / (v_phase * v_phase)
            for p in entry["s_va_abc"]
        )
    raise NetworkError("load needs one of: y_s, y_s_abc, s_va, s_va_abc")


def load_network(path: str | Path) -> NetworkGraph:
    """Read and validate a network description file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise NetworkError(f"{path}: parse error at line {e.lineno}: {e.msg}") from e
    for key in ("buses", "lines"):
        if key not in doc:
            raise NetworkError(f"{path}: missing top-level key {key!r}")

    buses = tuple(
        Bus(index=i, name=str(b["name"]), v_ll=float(b["v_ll"]))
        for i, b in enumerate(doc["buses"])
    )
    index = {b.name: b.index for b in buses}
    if len(index) != len(buses):
        raise NetworkError(f"{path}: duplicate bus names")

    def ref(name, what: str) -> int:
        name = str(name)
        if name not in index:
            raise NetworkError(f"{path}: {what} references undeclared bus {name!r}")
        return index[name]

    lines = tuple(
        Line(
            i=ref(ln["from"], "line"),
            j=ref(ln["to"], "line"),
            z=_as_complex(ln["z"], "line impedance"),
        )
        for ln in doc["lines"]
    )
    sources = []
    for s in doc.get("sources", []):
        if "phasors" in s:
            ph = tuple(_as_complex(p, "source phasor") for p in s["phasors"])
        else:
            ph = _balanced_phasors(float(s["v_phase"]), float(s.get("angle_deg", 0.0)))
        sources.append(
            Source(bus=ref(s["bus"], "source"), phasors=ph,
                   z_int=_as_complex(s["z"], "source impedance"))
        )
    loads = []
    for l in doc.get("loads", []):
        b = ref(l["bus"], "load")
        loads.append(Load(bus=b, y_abc=_load_admittance(l, buses[b].v_phase)))

    measured = tuple(ref(m, "measured bus list") for m in doc.get("measured_buses", []))
    graph = NetworkGraph(
        buses=buses,
        lines=lines,
        sources=tuple(sources),
        loads=tuple(loads),
        name=str(doc.get("name", path.stem)),
        frequency_hz=float(doc.get("frequency_hz", 60.0)),
        measured_buses=measured,
    )
    graph.validate()
    return graph


def bundled_network_path(name: str) -> Path:
    if name not in BUNDLED_NETWORKS:
        raise NetworkError(
            f"unknown bundled network {name!r}; available: {BUNDLED_NETWORKS}"
        )
    return Path(str(resources.files("gridfault") / "networks" / f"{name}.json"))


def resolve_network(spec: str | Path) -> NetworkGraph:
    """Load a network by bundled name or by file path."""
    if isinstance(spec, str) and spec in BUNDLED_NETWORKS:
        return load_network(bundled_network_path(spec))
    return load_network(spec)

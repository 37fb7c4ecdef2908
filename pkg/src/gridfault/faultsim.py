"""Quasi-static fault and load-change waveform generation.

A record is built from two steady-state phasor solves of the network —
one before and one after a switching instant — and a cosine synthesis of
each bus voltage at system frequency.  Faults are stamped into the bus
admittance matrix as conductances 1/R between phase nodes and/or ground
at the faulted bus; load changes are two no-fault solves with different
load multipliers.  No electromagnetic transients are modelled: the
classifier consumes short steady-state windows where the dip magnitude
and phase pattern carry the diagnostic information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gridfault.grid import NetworkGraph, build_admittance

FAULT_CATEGORIES = (
    "AG", "BG", "CG", "AB", "BC", "CA", "ABG", "BCG", "CAG", "ABC", "ABCG",
)

_PHASE = {"A": 0, "B": 1, "C": 2}

# category -> (phases shorted to ground, phase pairs shorted together)
_STAMPS: dict[str, tuple[str, str | None]] = {
    "AG": ("A", None), "BG": ("B", None), "CG": ("C", None),
    "AB": ("", "AB"), "BC": ("", "BC"), "CA": ("", "CA"),
    "ABG": ("AB", None), "BCG": ("BC", None), "CAG": ("CA", None),
    "ABC": ("", "AB BC CA"), "ABCG": ("ABC", None),
}


class SolverError(RuntimeError):
    """The admittance system could not be solved to tolerance."""


@dataclass(frozen=True)
class FaultSpec:
    """One shunt fault: category, path resistance, bus, switching instant."""

    category: str
    resistance: float
    bus: int
    onset: float  # seconds from record start

    def __post_init__(self):
        if self.category not in FAULT_CATEGORIES:
            raise ValueError(f"unknown fault category {self.category!r}")
        if self.resistance <= 0:
            raise ValueError(f"fault resistance must be positive, got {self.resistance}")
        if self.bus < 0:
            raise ValueError("fault bus index must be nonnegative")

    def faulted_phases(self) -> tuple[int, ...]:
        ground, pairs = _STAMPS[self.category]
        phases = set(_PHASE[p] for p in ground)
        if pairs:
            for pair in pairs.split():
                phases.update(_PHASE[p] for p in pair)
        return tuple(sorted(phases))


@dataclass(frozen=True, eq=False)
class LoadScenario:
    """Per-load, per-phase demand multipliers plus the seed that made them."""

    seed: int
    multipliers: np.ndarray  # (n_loads, 3), strictly positive

    def __post_init__(self):
        if (np.asarray(self.multipliers) <= 0).any():
            raise ValueError("load multipliers must be strictly positive")


@dataclass(frozen=True, eq=False)
class WaveformRecord:
    """Per-bus three-phase voltage time series with its provenance."""

    samples: np.ndarray  # (N, 3, T), volts
    fs: float
    f0: float
    duration: float
    fault: FaultSpec | None
    scenario: LoadScenario


def apply_fault_stamp(y: np.ndarray, fault: FaultSpec) -> np.ndarray:
    """Return a copy of Y with the fault conductance stamped at its bus.

    Phase-to-ground paths add 1/R on the phase diagonal; phase-to-phase
    paths add the usual two-terminal stamp between the two phase nodes.
    Multi-phase categories combine the single stamps.
    """
    n3 = y.shape[0]
    if 3 * fault.bus + 2 >= n3:
        raise ValueError(f"fault bus {fault.bus} outside a {n3 // 3}-bus system")
    out = y.copy()
    g = 1.0 / fault.resistance
    ground, pairs = _STAMPS[fault.category]
    for p in ground:
        k = 3 * fault.bus + _PHASE[p]
        out[k, k] += g
    if pairs:
        for pair in pairs.split():
            a = 3 * fault.bus + _PHASE[pair[0]]
            b = 3 * fault.bus + _PHASE[pair[1]]
            out[a, a] += g
            out[b, b] += g
            out[a, b] -= g
            out[b, a] -= g
    return out


def source_injections(network: NetworkGraph) -> np.ndarray:
    """Norton current injections of all Thevenin sources, length 3N."""
    i = np.zeros(3 * network.n_buses, dtype=complex)
    for src in network.sources:
        for p in range(3):
            i[3 * src.bus + p] += src.phasors[p] / src.z_int
    return i


def solve_phasors(
    network: NetworkGraph,
    scenario: LoadScenario | None = None,
    fault: FaultSpec | None = None,
) -> np.ndarray:
    """Solve Y' V = I for the bus voltage phasors; returns (N, 3) complex.

    Y' is the admittance matrix with the scenario's load multipliers
    applied and the fault (if any) stamped.  Raises SolverError, naming
    the worst bus, when the system is singular or the KCL residual
    exceeds 1e-9 relative.
    """
    mult = None if scenario is None else scenario.multipliers
    y = build_admittance(network, load_multipliers=mult)
    if fault is not None:
        y = apply_fault_stamp(y, fault)
    inj = source_injections(network)
    if not np.any(inj):
        raise SolverError("network has no sources; nothing drives the system")
    try:
        v = np.linalg.solve(y, inj)
    except np.linalg.LinAlgError as e:
        bus = _rank_deficient_bus(y, network)
        raise SolverError(
            f"singular admittance system; bus {bus!r} causes rank deficiency"
        ) from e
    residual = np.linalg.norm(y @ v - inj) / np.linalg.norm(inj)
    if not residual < 1e-9:
        bus = network.buses[int(np.argmax(np.abs(y @ v - inj))) // 3].name
        raise SolverError(
            f"solve residual {residual:.3e} exceeds 1e-9; worst bus {bus!r}"
        )
    return v.reshape(network.n_buses, 3)


def _rank_deficient_bus(y: np.ndarray, network: NetworkGraph) -> str:
    _, _, vh = np.linalg.svd(y)
    null = np.abs(vh[-1])
    return network.buses[int(np.argmax(null)) // 3].name


def kcl_residual(
    network: NetworkGraph,
    v: np.ndarray,
    scenario: LoadScenario | None = None,
    fault: FaultSpec | None = None,
) -> float:
    """Relative KCL residual of a phasor solution (independent re-check)."""
    mult = None if scenario is None else scenario.multipliers
    y = build_admittance(network, load_multipliers=mult)
    if fault is not None:
        y = apply_fault_stamp(y, fault)
    inj = source_injections(network)
    return float(np.linalg.norm(y @ v.reshape(-1) - inj) / np.linalg.norm(inj))


def synthesize_waveforms(
    pre: np.ndarray,
    post: np.ndarray,
    onset: float,
    fs: float = 1000.0,
    duration: float = 1.0,
    f0: float = 60.0,
    fault: FaultSpec | None = None,
    scenario: LoadScenario | None = None,
) -> WaveformRecord:
    """Piecewise cosine synthesis: pre-phasors before onset, post after.

    Sample k (t = k/fs) of bus n, phase p is |V| cos(2 pi f0 t + arg V)
    with V from ``pre`` for t < onset and from ``post`` afterwards.
    """
    if not fs > 2.0 * f0:
        raise ValueError(f"sampling rate {fs} Hz aliases a {f0} Hz signal")
    if not 0.0 < onset < duration:
        raise ValueError(f"onset {onset} outside (0, {duration})")
    pre = np.asarray(pre, dtype=complex)
    post = np.asarray(post, dtype=complex)
    if pre.shape != post.shape:
        raise ValueError(f"phasor shapes differ: {pre.shape} vs {post.shape}")
    t = np.arange(int(round(duration * fs))) / fs
    phase = 2.0 * np.pi * f0 * t
    wave_pre = np.abs(pre)[:, :, None] * np.cos(phase + np.angle(pre)[:, :, None])
    wave_post = np.abs(post)[:, :, None] * np.cos(phase + np.angle(post)[:, :, None])
    samples = np.where(t < onset, wave_pre, wave_post)
    if not np.isfinite(samples).all():
        raise ValueError("non-finite waveform samples")
    return WaveformRecord(
        samples=samples, fs=fs, f0=f0, duration=duration,
        fault=fault, scenario=scenario,
    )


def fault_record(
    network: NetworkGraph,
    fault: FaultSpec,
    scenario: LoadScenario,
    fs: float = 1000.0,
    duration: float = 1.0,
    f0: float = 60.0,
) -> WaveformRecord:
    """Pre-fault solve + faulted solve + hard switch at the fault onset."""
    pre = solve_phasors(network, scenario, None)
    post = solve_phasors(network, scenario, fault)
    return synthesize_waveforms(pre, post, fault.onset, fs, duration, f0,
                                fault=fault, scenario=scenario)


def make_load_scenario(seed: int, n_loads: int,
                       low: float = 0.5, high: float = 1.5) -> LoadScenario:
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 11]))
    mult = rng.uniform(low, high, size=(n_loads, 3))
    return LoadScenario(seed=seed, multipliers=mult)


def load_change_record(
    network: NetworkGraph,
    scenario: LoadScenario,
    fs: float = 1000.0,
    duration: float = 1.0,
    f0: float = 60.0,
) -> WaveformRecord:
    """Non-fault record: demand steps to a second multiplier set at onset.

    The post-change multipliers and the switching instant derive from the
    scenario seed, so identical scenarios reproduce identical records.
    """
    rng = np.random.default_rng(np.random.SeedSequence([scenario.seed & 0xFFFFFFFF, 13]))
    post_mult = rng.uniform(0.5, 1.5, size=scenario.multipliers.shape)
    onset = rng.uniform(0.3, 0.7)
    pre = solve_phasors(network, scenario, None)
    post = solve_phasors(
        network, LoadScenario(seed=scenario.seed, multipliers=post_mult), None
    )
    return synthesize_waveforms(pre, post, onset, fs, duration, f0,
                                fault=None, scenario=scenario)

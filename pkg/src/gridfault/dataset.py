"""Scenario grids, windowing, labelling, noise/masking, and dataset files.

A scenario grid is the cross product of fault categories, resistances,
fault buses and load scenarios (plus a count of no-fault load-change
records).  Each record yields one or more fixed-length windows stored in
per-unit volts as float32, with a label tuple per window:

  y_event  0/1
  y_type   0..5  over (NF, LG, LL, LLG, 3L, 3LG)
  y_phase  0..2  (A/B/C or AB/BC/CA), 255 when undefined
  y_loc    bus index, 65535 when undefined

All randomness derives from one master seed through SeedSequence keyed
by role tags and index tuples, so generation is order-independent and
reproducible bit for bit.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gridfault.grid import NetworkGraph, build_adjacency
from gridfault.faultsim import (
    FAULT_CATEGORIES,
    FaultSpec,
    LoadScenario,
    WaveformRecord,
    load_change_record,
    make_load_scenario,
    solve_phasors,
    synthesize_waveforms,
)

TYPE_NAMES = ("NF", "LG", "LL", "LLG", "3L", "3LG")
PHASE_INVALID = 255
LOC_INVALID = 65535

CATEGORY_TO_TYPE = {
    "AG": 1, "BG": 1, "CG": 1,
    "AB": 2, "BC": 2, "CA": 2,
    "ABG": 3, "BCG": 3, "CAG": 3,
    "ABC": 4, "ABCG": 5,
}
# position within (A, B, C) or (AB, BC, CA); symmetric faults have none
CATEGORY_TO_PHASE = {
    "AG": 0, "BG": 1, "CG": 2,
    "AB": 0, "BC": 1, "CA": 2,
    "ABG": 0, "BCG": 1, "CAG": 2,
    "ABC": PHASE_INVALID, "ABCG": PHASE_INVALID,
}

MAGIC = b"GFDS"
VERSION = 1
_HEADER = struct.Struct("<4sHIIII")  # magic, version, N, d, K, samples

# SeedSequence role tags
_TAG_LOAD_SCEN = 1
_TAG_ONSET = 2
_TAG_LOAD_CHANGE = 3
_TAG_FAULT_SAMPLE = 4
_TAG_CHANGE_SAMPLE = 5
_TAG_SPLIT = 6


class DatasetFormatError(ValueError):
    """A dataset file is corrupt or inconsistent with its metadata."""


def derive_rng(master_seed: int, *parts: int) -> np.random.Generator:
    if master_seed < 0:
        raise ValueError("seeds must be nonnegative")
    return np.random.default_rng(np.random.SeedSequence([master_seed, *parts]))


def derive_seed(master_seed: int, *parts: int) -> int:
    state = np.random.SeedSequence([master_seed, *parts]).generate_state(2)
    return (int(state[0]) << 32) | int(state[1])


@dataclass(frozen=True)
class ScenarioGrid:
    """Cross product defining one dataset's fault and load-change cases."""

    categories: tuple[str, ...] = FAULT_CATEGORIES
    resistances: tuple[float, ...] = (0.1, 1.0, 10.0)
    buses: tuple[int, ...] = ()  # 0-based fault bus indices
    n_load_scenarios: int = 1
    n_load_changes: int = 0

    def __post_init__(self):
        if not (self.categories and self.resistances and self.buses):
            raise ValueError("grid lists must be nonempty")
        if self.n_load_scenarios <= 0:
            raise ValueError("load scenario count must be positive")
        for c in self.categories:
            if c not in FAULT_CATEGORIES:
                raise ValueError(f"unknown fault category {c!r}")

    @property
    def n_fault_cases(self) -> int:
        return (len(self.categories) * len(self.resistances)
                * len(self.buses) * self.n_load_scenarios)

    def to_dict(self) -> dict:
        return {
            "categories": list(self.categories),
            "resistances": list(self.resistances),
            "buses": list(self.buses),
            "n_load_scenarios": self.n_load_scenarios,
            "n_load_changes": self.n_load_changes,
        }

    @staticmethod
    def from_dict(d: dict) -> "ScenarioGrid":
        return ScenarioGrid(
            categories=tuple(d["categories"]),
            resistances=tuple(d["resistances"]),
            buses=tuple(d["buses"]),
            n_load_scenarios=int(d["n_load_scenarios"]),
            n_load_changes=int(d["n_load_changes"]),
        )


def enumerate_scenarios(
    grid: ScenarioGrid, n_loads: int, master_seed: int,
    onset_grid: float | None = None,
) -> tuple[list[tuple[FaultSpec, LoadScenario]], list[LoadScenario]]:
    """Expand a grid into concrete cases, category-major then R, bus, scenario.

    The same load scenario s is reused across every fault configuration
    (one pool of demand profiles, as a field recording campaign would
    have); fault onsets are drawn per case, uniform over [0.3, 0.7] s.
    When ``onset_grid`` is given the draw is over its multiples in that
    range, aligning each onset with a sample-window boundary so the
    window containing it is entirely post-fault.
    """
    scenarios = [
        make_load_scenario(derive_seed(master_seed, _TAG_LOAD_SCEN, s), n_loads)
        for s in range(grid.n_load_scenarios)
    ]
    faults: list[tuple[FaultSpec, LoadScenario]] = []
    for ci, cat in enumerate(grid.categories):
        for ri, r in enumerate(grid.resistances):
            for bi, bus in enumerate(grid.buses):
                for s in range(grid.n_load_scenarios):
                    rng = derive_rng(master_seed, _TAG_ONSET, ci, ri, bi, s)
                    if onset_grid is None:
                        onset = rng.uniform(0.3, 0.7)
                    else:
                        lo = math.ceil(0.3 / onset_grid)
                        hi = math.floor(0.7 / onset_grid)
                        onset = int(rng.integers(lo, hi + 1)) * onset_grid
                    faults.append(
                        (FaultSpec(cat, r, bus, onset), scenarios[s])
                    )
    changes = [
        make_load_scenario(derive_seed(master_seed, _TAG_LOAD_CHANGE, j), n_loads)
        for j in range(grid.n_load_changes)
    ]
    return faults, changes


# --- windowing and labels ---------------------------------------------------

def window(record: WaveformRecord, k: int, selection: str = "all",
           rng: np.random.Generator | None = None) -> list[tuple[int, np.ndarray]]:
    """Cut a record into K-sample windows; returns (start_index, N x 3 x K) pairs.

    ``all`` yields every consecutive non-overlapping window (trailing
    remainder dropped), ``fault_spanning`` the single window containing
    the fault onset, ``random`` one uniformly chosen window.
    """
    t = record.samples.shape[2]
    if k > t:
        raise ValueError(f"window length {k} exceeds record length {t}")
    n_windows = t // k
    if selection == "all":
        picks = range(n_windows)
    elif selection == "fault_spanning":
        if record.fault is None:
            raise ValueError("fault_spanning selection needs a fault record")
        j = int(record.fault.onset * record.fs) // k
        picks = [min(j, n_windows - 1)]
    elif selection == "random":
        if rng is None:
            raise ValueError("random selection needs an rng")
        picks = [int(rng.integers(n_windows))]
    else:
        raise ValueError(f"unknown window selection {selection!r}")
    return [(j * k, record.samples[:, :, j * k : (j + 1) * k].copy()) for j in picks]


@dataclass(frozen=True, eq=False)
class Sample:
    """One labelled window of per-unit node features."""

    features: np.ndarray  # (N, 3, K)
    y_event: int
    y_type: int
    y_phase: int  # PHASE_INVALID when undefined
    y_loc: int    # LOC_INVALID when undefined

    @property
    def phase_valid(self) -> bool:
        return self.y_phase != PHASE_INVALID

    @property
    def loc_valid(self) -> bool:
        return self.y_loc != LOC_INVALID

    def one_hot_type(self) -> np.ndarray:
        v = np.zeros(len(TYPE_NAMES))
        v[self.y_type] = 1.0
        return v


def label(features: np.ndarray, fault: FaultSpec | None,
          window_start: float, window_end: float) -> Sample:
    """Label one window given the fault (if any) active in its record.

    The event flag is set when a fault exists and its onset precedes the
    window end; windows that end before the onset see no fault and are
    labelled NF with phase/location undefined.
    """
    if fault is not None and fault.onset < window_end:
        y_type = CATEGORY_TO_TYPE[fault.category]
        y_phase = CATEGORY_TO_PHASE[fault.category]
        return Sample(features, 1, y_type, y_phase, fault.bus)
    return Sample(features, 0, 0, PHASE_INVALID, LOC_INVALID)


def mask_measurements(features: np.ndarray, measured) -> np.ndarray:
    """Zero the rows of unmeasured buses; labels are untouched."""
    measured = sorted(set(int(m) for m in measured))
    if not measured:
        raise ValueError("measured bus set must be nonempty")
    out = np.zeros_like(features)
    out[measured] = features[measured]
    return out


def add_noise(features: np.ndarray, snr_db: float | None,
              rng: np.random.Generator) -> np.ndarray:
    """Additive white Gaussian noise at the given SNR per bus-phase row.

    The noise sigma is the row's RMS over the window times
    10^(-snr/20), so all-zero (unmeasured) rows stay exactly zero.
    None or +inf disables noise.
    """
    if snr_db is None or math.isinf(snr_db):
        return features
    rms = np.sqrt(np.mean(features.astype(np.float64) ** 2, axis=-1, keepdims=True))
    sigma = rms * 10.0 ** (-snr_db / 20.0)
    noise = rng.standard_normal(features.shape) * sigma
    return (features + noise).astype(features.dtype)


# --- dataset container -------------------------------------------------------

@dataclass(eq=False)
class Dataset:
    """Columnar sample store: features plus one label array per task."""

    features: np.ndarray  # (S, N, 3, K) float32
    y_event: np.ndarray   # (S,) uint8
    y_type: np.ndarray    # (S,) uint8
    y_phase: np.ndarray   # (S,) uint8
    y_loc: np.ndarray     # (S,) uint16
    adjacency: np.ndarray  # (N, N) binary bus adjacency
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_buses(self) -> int:
        return self.features.shape[1]

    @property
    def window_len(self) -> int:
        return self.features.shape[3]

    def sample(self, i: int) -> Sample:
        return Sample(self.features[i], int(self.y_event[i]), int(self.y_type[i]),
                      int(self.y_phase[i]), int(self.y_loc[i]))

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(
            features=self.features[idx].copy(),
            y_event=self.y_event[idx].copy(),
            y_type=self.y_type[idx].copy(),
            y_phase=self.y_phase[idx].copy(),
            y_loc=self.y_loc[idx].copy(),
            adjacency=self.adjacency.copy(),
            meta=dict(self.meta),
        )

    def class_counts(self) -> dict[str, int]:
        counts = {name: int((self.y_type == k).sum()) for k, name in enumerate(TYPE_NAMES)}
        counts["fault"] = int((self.y_event == 1).sum())
        counts["non_fault"] = int((self.y_event == 0).sum())
        return counts


@dataclass(frozen=True)
class DatasetOptions:
    """Windowing, masking and noise settings for dataset construction."""

    window: int = 20
    selection: str = "fault_spanning"
    measured: tuple[int, ...] | None = None  # None = all buses, 0-based
    snr_db: float | None = None
    seed: int = 0
    fs: float = 1000.0
    duration: float = 1.0
    f0: float = 60.0


def _per_unit(samples: np.ndarray, network: NetworkGraph) -> np.ndarray:
    base = np.array([b.v_phase * math.sqrt(2.0) for b in network.buses])
    return samples / base[:, None, None]


def build_dataset(network: NetworkGraph, grid: ScenarioGrid,
                  opts: DatasetOptions, threads: int = 1) -> Dataset:
    """Generate, window, label, mask and (optionally) noise a full grid."""
    faults, changes = enumerate_scenarios(
        grid, len(network.loads), opts.seed, onset_grid=opts.window / opts.fs
    )
    n = network.n_buses
    k = opts.window
    measured = opts.measured

    # Pre-fault solves depend only on the load scenario; cache them.
    pre_cache: dict[int, np.ndarray] = {}
    for _, scen in faults:
        if scen.seed not in pre_cache:
            pre_cache[scen.seed] = solve_phasors(network, scen, None)

    def one_record(args):
        kind, idx, payload = args
        if kind == "fault":
            spec, scen = payload
            post = solve_phasors(network, scen, spec)
            rec = synthesize_waveforms(
                pre_cache[scen.seed], post, spec.onset,
                opts.fs, opts.duration, opts.f0, fault=spec, scenario=scen,
            )
            selection = opts.selection
            rng = derive_rng(opts.seed, _TAG_FAULT_SAMPLE, idx)
        else:
            rec = load_change_record(network, payload, opts.fs, opts.duration, opts.f0)
            selection = "random"
            rng = derive_rng(opts.seed, _TAG_CHANGE_SAMPLE, idx)
        pu = _per_unit(rec.samples, network)
        rec_pu = WaveformRecord(pu, rec.fs, rec.f0, rec.duration, rec.fault, rec.scenario)
        out = []
        for start, w in window(rec_pu, k, selection, rng):
            if measured is not None:
                w = mask_measurements(w, measured)
            w = add_noise(w, opts.snr_db, rng)
            if np.abs(w).max() > 10.0:
                raise ValueError("per-unit feature outside the sanity bound of 10")
            out.append(label(w.astype(np.float32), rec.fault,
                             start / rec.fs, (start + k) / rec.fs))
        return out

    tasks = [("fault", i, fs_) for i, fs_ in enumerate(faults)]
    tasks += [("change", j, sc) for j, sc in enumerate(changes)]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_record = list(pool.map(one_record, tasks))
    else:
        per_record = [one_record(t) for t in tasks]

    samples = [s for group in per_record for s in group]
    s_count = len(samples)
    features = np.empty((s_count, n, 3, k), dtype=np.float32)
    y_event = np.empty(s_count, dtype=np.uint8)
    y_type = np.empty(s_count, dtype=np.uint8)
    y_phase = np.empty(s_count, dtype=np.uint8)
    y_loc = np.empty(s_count, dtype=np.uint16)
    for i, s in enumerate(samples):
        features[i] = s.features
        y_event[i] = s.y_event
        y_type[i] = s.y_type
        y_phase[i] = s.y_phase
        y_loc[i] = s.y_loc

    meta = {
        "system": network.name,
        "n_buses": n,
        "window": k,
        "selection": opts.selection,
        "measured_buses": sorted(measured) if measured is not None else None,
        "snr_db": opts.snr_db,
        "seed": opts.seed,
        "fs": opts.fs,
        "duration": opts.duration,
        "f0": opts.f0,
        "grid": grid.to_dict(),
    }
    return Dataset(features, y_event, y_type, y_phase, y_loc,
                   build_adjacency(network), meta)


def split(dataset: Dataset, train_fault: int, test_fault: int,
          train_nf: int, test_nf: int, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded uniform split without replacement, exact per-class counts."""
    fault_idx = np.flatnonzero(dataset.y_event == 1)
    nf_idx = np.flatnonzero(dataset.y_event == 0)
    if train_fault + test_fault > fault_idx.size:
        raise ValueError(
            f"requested {train_fault}+{test_fault} fault samples, "
            f"only {fault_idx.size} available"
        )
    if train_nf + test_nf > nf_idx.size:
        raise ValueError(
            f"requested {train_nf}+{test_nf} non-fault samples, "
            f"only {nf_idx.size} available"
        )
    rng = derive_rng(seed, _TAG_SPLIT)
    fperm = rng.permutation(fault_idx)
    nperm = rng.permutation(nf_idx)
    train = np.sort(np.concatenate([fperm[:train_fault], nperm[:train_nf]]))
    test = np.sort(np.concatenate([
        fperm[train_fault : train_fault + test_fault],
        nperm[train_nf : train_nf + test_nf],
    ]))
    return dataset.subset(train), dataset.subset(test)


# --- binary file format ------------------------------------------------------

def save(dataset: Dataset, path: str | Path) -> None:
    """Write the binary sample file plus a JSON metadata sidecar."""
    path = Path(path)
    s, n, d, k = dataset.features.shape
    header = _HEADER.pack(MAGIC, VERSION, n, d, k, s)
    body = [
        header,
        np.ascontiguousarray(dataset.features, dtype="<f4").tobytes(),
        dataset.y_event.astype("<u1").tobytes(),
        dataset.y_type.astype("<u1").tobytes(),
        dataset.y_phase.astype("<u1").tobytes(),
        dataset.y_loc.astype("<u2").tobytes(),
    ]
    path.write_bytes(b"".join(body))
    sidecar = {
        "meta": dataset.meta,
        "adjacency": dataset.adjacency.astype(int).tolist(),
        "samples": s,
    }
    Path(str(path) + ".meta.json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=1) + "\n"
    )


def load(path: str | Path) -> Dataset:
    """Read a dataset file; raises DatasetFormatError on any corruption."""
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < _HEADER.size:
        raise DatasetFormatError(f"{path}: file shorter than header")
    magic, version, n, d, k, s = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    feat_bytes = s * n * d * k * 4
    expected = _HEADER.size + feat_bytes + s * (1 + 1 + 1 + 2)
    if len(buf) != expected:
        raise DatasetFormatError(
            f"{path}: size {len(buf)} != expected {expected} (truncated or corrupt)"
        )
    off = _HEADER.size
    features = np.frombuffer(buf, "<f4", count=s * n * d * k, offset=off)
    features = features.reshape(s, n, d, k).copy()
    off += feat_bytes
    y_event = np.frombuffer(buf, "<u1", count=s, offset=off).copy(); off += s
    y_type = np.frombuffer(buf, "<u1", count=s, offset=off).copy(); off += s
    y_phase = np.frombuffer(buf, "<u1", count=s, offset=off).copy(); off += s
    y_loc = np.frombuffer(buf, "<u2", count=s, offset=off).copy()

    sidecar_path = Path(str(path) + ".meta.json")
    meta: dict = {}
    adjacency = np.zeros((n, n))
    if sidecar_path.exists():
        sidecar = json.loads(sidecar_path.read_text())
        meta = sidecar.get("meta", {})
        adjacency = np.asarray(sidecar.get("adjacency"), dtype=float)
        if meta.get("n_buses") not in (None, n) or meta.get("window") not in (None, k):
            raise DatasetFormatError(
                f"{path}: header ({n} buses, window {k}) disagrees with sidecar "
                f"({meta.get('n_buses')}, {meta.get('window')})"
            )
        if sidecar.get("samples") not in (None, s):
            raise DatasetFormatError(
                f"{path}: header says {s} samples, sidecar {sidecar.get('samples')}"
            )
        if adjacency.shape != (n, n):
            raise DatasetFormatError(f"{path}: adjacency shape {adjacency.shape}")
    return Dataset(features, y_event, y_type, y_phase, y_loc, adjacency, meta)

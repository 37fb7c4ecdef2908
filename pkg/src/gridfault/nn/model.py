"""Model specs, trunk/head assembly, and checkpoint files.

Five trunk architectures over a (B, N, 3, K) voltage-window batch:

  ann   flatten -> dense 512 -> dense 128
  lstm  feeder-wide sequence -> two stacked recurrent layers -> flatten
  cnn   bus-phase channels -> two conv+pool blocks -> flatten
  gcn   per-node flatten -> two graph convolutions (N x 8 out)
  rgcn  shared per-node recurrent cell -> one graph convolution (N x 8 out)

Graph trunks feed graph-level heads through global node pooling and the
location head through a shared per-node dense stage; flat trunks feed
plain dense heads.  Heads emit logits; losses apply the link functions.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from gridfault.grid import normalized_propagation
from gridfault.nn import layers as L
from gridfault.nn.param import Parameter

ARCHITECTURES = ("ann", "lstm", "cnn", "gcn", "rgcn")
TASKS = ("event", "type", "phase", "location")

CKPT_MAGIC = b"GFCK"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Declarative architecture description compiled by build_model."""

    arch: str
    n_buses: int
    heads: tuple[str, ...] = TASKS
    n_phases: int = 3
    window: int = 20
    cell: str = "lstm"
    pooling: str = "mean"

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        for h in self.heads:
            if h not in TASKS:
                raise ValueError(f"unknown task head {h!r}")
        if self.cell not in ("lstm", "gru"):
            raise ValueError(f"unknown cell {self.cell!r}")

    def head_width(self, task: str) -> int:
        return {"event": 1, "type": 6, "phase": 3, "location": self.n_buses}[task]

    def to_json(self) -> str:
        d = asdict(self)
        d["heads"] = list(self.heads)
        return json.dumps(d, sort_keys=True, indent=2)

    @staticmethod
    def from_json(text: str) -> "ModelSpec":
        d = json.loads(text)
        d["heads"] = tuple(d["heads"])
        return ModelSpec(**d)


class Model:
    """Ordered layer stacks (one trunk, one head per task) plus a registry."""

    def __init__(self, spec: ModelSpec, trunk: list[L.Layer],
                 heads: dict[str, list[L.Layer]],
                 adjacency: np.ndarray | None = None):
        self.spec = spec
        self.trunk = trunk
        self.heads = heads
        self.adjacency = adjacency
        self._registry: dict[str, Parameter] = {}
        for layer in trunk:
            self._register(layer, trunk=True)
        for task in spec.heads:
            for layer in heads[task]:
                self._register(layer, trunk=False)

    def _register(self, layer: L.Layer, trunk: bool) -> None:
        for p in layer.params():
            if p.name in self._registry:
                raise ValueError(f"parameter {p.name!r} registered twice")
            self._registry[p.name] = p

    def parameters(self) -> dict[str, Parameter]:
        return self._registry

    def trunk_parameters(self) -> dict[str, Parameter]:
        return {n: p for n, p in self._registry.items() if n.startswith("trunk.")}

    def zero_grad(self) -> None:
        for p in self._registry.values():
            p.zero_grad()

    def set_trunk_frozen(self, frozen: bool) -> None:
        for p in self.trunk_parameters().values():
            p.frozen = frozen

    def unfreeze_all(self) -> None:
        for p in self._registry.values():
            p.frozen = False

    def forward(self, x, task: str, ctx: L.RunCtx = L.INFERENCE):
        """Run trunk + the given task head on (B, N, 3, K); returns (logits, tape)."""
        if task not in self.heads:
            raise ValueError(f"model has no {task!r} head")
        tape = []
        h = np.asarray(x, dtype=np.float64)
        for layer in self.trunk:
            h, cache = layer.forward(h, ctx)
            tape.append((layer, cache))
        for layer in self.heads[task]:
            h, cache = layer.forward(h, ctx)
            tape.append((layer, cache))
        if task == "event":
            h = h[:, 0]  # single logit per sample
        return h, tape

    def backward(self, dlogits, tape) -> None:
        d = dlogits
        if d.ndim == 1:
            d = d[:, None]
        for layer, cache in reversed(tape):
            d = layer.backward(d, cache)


def build_model(spec: ModelSpec, adjacency: np.ndarray | None = None,
                seed: int = 0) -> Model:
    """Compile a ModelSpec into layer stacks with seeded Glorot init."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7771]))
    n, d, k = spec.n_buses, spec.n_phases, spec.window
    prop = None
    if spec.arch in ("gcn", "rgcn"):
        if adjacency is None:
            raise ValueError(f"{spec.arch} needs the graph adjacency matrix")
        prop = normalized_propagation(adjacency)

    if spec.arch == "ann":
        trunk = [
            L.FlattenFeatures(),
            L.Dense("trunk.d0", n * d * k, 512, "relu", use_dropout=True, rng=rng),
            L.Dense("trunk.d1", 512, 128, "relu", use_dropout=True, rng=rng),
        ]
        trunk_width, hidden = 128, {"event": 32, "type": 64, "phase": 64, "location": 64}
    elif spec.arch == "lstm":
        trunk = [
            L.ToSequence(),
            L.Recurrent(L.make_cell(spec.cell, "trunk.rnn0", n * d, n, rng)),
            L.Recurrent(L.make_cell(spec.cell, "trunk.rnn1", n, 3, rng)),
            L.FlattenFeatures(),
        ]
        trunk_width, hidden = 3 * k, {"event": 16, "type": 32, "phase": 32, "location": 26}
    elif spec.arch == "cnn":
        trunk = [
            L.ToChannels(),
            L.Conv1dPool("trunk.c0", n * d, 52, kernel=10, pool=2, rng=rng),
            L.Conv1dPool("trunk.c1", 52, 26, kernel=4, pool=2, rng=rng),
            L.FlattenFeatures(),
        ]
        out_t = ((k - 10 + 1) // 2 - 4 + 1) // 2
        if out_t < 1:
            raise ValueError(f"window {k} too short for the conv stack")
        trunk_width = 26 * out_t
        hidden = {"event": 16, "type": 32, "phase": 32, "location": 39}
    elif spec.arch == "gcn":
        trunk = [
            L.NodeFlatten(),
            L.GCN("trunk.g0", prop, d * k, 24, "relu", rng=rng),
            L.GCN("trunk.g1", prop, 24, 8, "identity", rng=rng),
        ]
        trunk_width, hidden = 8, {"event": 16, "type": 32, "phase": 32, "location": 3}
    else:  # rgcn
        trunk = [
            L.NodeSequenceRecurrent(L.make_cell(spec.cell, "trunk.rnn", d, 5, rng)),
            L.GCN("trunk.g0", prop, 5 * k, 8, "identity", rng=rng),
        ]
        trunk_width, hidden = 8, {"event": 16, "type": 32, "phase": 32, "location": 8}

    node_trunk = spec.arch in ("gcn", "rgcn")
    heads: dict[str, list[L.Layer]] = {}
    for task in spec.heads:
        out = spec.head_width(task)
        name = f"head.{task}"
        if node_trunk and task == "location":
            per = hidden["location"]
            heads[task] = [
                L.PerNodeDense(f"{name}.node", trunk_width, per, "relu",
                               use_dropout=True, rng=rng),
                L.FlattenFeatures(),
                L.Dense(f"{name}.out", n * per, out, "identity", rng=rng),
            ]
        elif node_trunk:
            heads[task] = [
                L.NodePool(spec.pooling),
                L.Dense(f"{name}.d0", trunk_width, hidden[task], "relu",
                        use_dropout=True, rng=rng),
                L.Dense(f"{name}.out", hidden[task], out, "identity", rng=rng),
            ]
        else:
            heads[task] = [
                L.Dense(f"{name}.d0", trunk_width, hidden[task], "relu",
                        use_dropout=True, rng=rng),
                L.Dense(f"{name}.out", hidden[task], out, "identity", rng=rng),
            ]
    return Model(spec, trunk, heads, adjacency=adjacency)


# --- checkpoints -----------------------------------------------------------

def save_checkpoint(model: Model, path: str | Path) -> None:
    """Write all parameters (values + frozen flags) with the model spec."""
    blobs = [CKPT_MAGIC, struct.pack("<H", CKPT_VERSION)]
    spec_bytes = model.spec.to_json().encode()
    blobs.append(struct.pack("<I", len(spec_bytes)))
    blobs.append(spec_bytes)
    params = model.parameters()
    blobs.append(struct.pack("<I", len(params)))
    for name, p in params.items():
        nb = name.encode()
        blobs.append(struct.pack("<H", len(nb)))
        blobs.append(nb)
        blobs.append(struct.pack("<B", p.value.ndim))
        blobs.append(struct.pack(f"<{p.value.ndim}I", *p.value.shape))
        blobs.append(struct.pack("<B", 1 if p.frozen else 0))
        blobs.append(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(blobs))


class CheckpointError(ValueError):
    pass


def read_checkpoint(path: str | Path) -> tuple[ModelSpec, dict[str, tuple[np.ndarray, bool]]]:
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    off = 4
    (version,) = struct.unpack_from("<H", buf, off)
    off += 2
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (spec_len,) = struct.unpack_from("<I", buf, off)
    off += 4
    spec = ModelSpec.from_json(buf[off : off + spec_len].decode())
    off += spec_len
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    entries: dict[str, tuple[np.ndarray, bool]] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        (frozen,) = struct.unpack_from("<B", buf, off)
        off += 1
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape)
        off += 8 * size
        entries[name] = (arr.astype(np.float64), bool(frozen))
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return spec, entries


def load_checkpoint(path: str | Path, adjacency: np.ndarray | None = None) -> Model:
    """Rebuild a model from a checkpoint, validating every shape."""
    spec, entries = read_checkpoint(path)
    model = build_model(spec, adjacency=adjacency, seed=0)
    restore_parameters(model, entries, path)
    return model


def restore_parameters(model: Model,
                       entries: dict[str, tuple[np.ndarray, bool]],
                       origin: str | Path = "<checkpoint>") -> None:
    params = model.parameters()
    if set(params) != set(entries):
        missing = set(params) - set(entries)
        extra = set(entries) - set(params)
        raise CheckpointError(
            f"{origin}: parameter names do not match model "
            f"(missing={sorted(missing)}, extra={sorted(extra)})"
        )
    for name, p in params.items():
        arr, frozen = entries[name]
        if arr.shape != p.value.shape:
            raise CheckpointError(
                f"{origin}: {name} has shape {arr.shape}, model wants {p.value.shape}"
            )
        p.value = arr.copy()
        p.grad = np.zeros_like(p.value)
        p.frozen = frozen

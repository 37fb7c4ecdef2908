"""Layer zoo: graph convolution, recurrent cells, dense, conv1d+pool.

Every layer exposes ``forward(x, ctx) -> (y, cache)`` and
``backward(dout, cache) -> dx``; parameter gradients accumulate into the
layer's Parameters.  Inputs carry a leading batch axis throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from gridfault.nn import ops
from gridfault.nn.param import Parameter, glorot_uniform


@dataclass
class RunCtx:
    """Per-call runtime switches shared by all layers."""

    training: bool = False
    rng: np.random.Generator | None = None
    dropout_rate: float = 0.0


INFERENCE = RunCtx()


class Layer:
    def params(self) -> list[Parameter]:
        return []

    def forward(self, x, ctx: RunCtx):
        raise NotImplementedError

    def backward(self, dout, cache):
        raise NotImplementedError


# --- shape adapters (parameter-free) --------------------------------------

class FlattenFeatures(Layer):
    """(B, ...) -> (B, prod(...))."""

    def forward(self, x, ctx):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, cache):
        return dout.reshape(cache)


class NodeFlatten(Layer):
    """(B, N, d, K) -> (B, N, d*K): per-node feature flattening."""

    def forward(self, x, ctx):
        b, n = x.shape[:2]
        return x.reshape(b, n, -1), x.shape

    def backward(self, dout, cache):
        return dout.reshape(cache)


class ToSequence(Layer):
    """(B, N, d, K) -> (B, K, N*d): one feeder-wide vector per time step."""

    def forward(self, x, ctx):
        b, n, d, k = x.shape
        return x.transpose(0, 3, 1, 2).reshape(b, k, n * d), (b, n, d, k)

    def backward(self, dout, cache):
        b, n, d, k = cache
        return dout.reshape(b, k, n, d).transpose(0, 2, 3, 1)


class ToChannels(Layer):
    """(B, N, d, K) -> (B, N*d, K): bus-phase channels for convolution."""

    def forward(self, x, ctx):
        b, n, d, k = x.shape
        return x.reshape(b, n * d, k), (b, n, d, k)

    def backward(self, dout, cache):
        return dout.reshape(cache)


class NodePool(Layer):
    """Global node pooling (B, N, F) -> (B, F); mean or max."""

    def __init__(self, mode: str = "mean"):
        if mode not in ("mean", "max"):
            raise ValueError(f"unknown pooling mode {mode!r}")
        self.mode = mode

    def forward(self, x, ctx):
        if self.mode == "mean":
            return x.mean(axis=1), x.shape
        idx = x.argmax(axis=1)
        return x.max(axis=1), (x.shape, idx)

    def backward(self, dout, cache):
        if self.mode == "mean":
            shape = cache
            return np.broadcast_to(dout[:, None, :] / shape[1], shape).copy()
        shape, idx = cache
        dx = np.zeros(shape)
        b, f = dout.shape
        bi = np.arange(b)[:, None]
        fi = np.arange(f)[None, :]
        dx[bi, idx, fi] = dout
        return dx


# --- dense ----------------------------------------------------------------

class Dense(Layer):
    """Affine map plus activation; optional inverted dropout after it.

    Activations: relu (hidden layers), identity (logit outputs), sigmoid,
    softmax (available for direct probability outputs; training uses the
    fused logit losses instead).
    """

    def __init__(self, name: str, n_in: int, n_out: int,
                 activation: str = "relu", use_dropout: bool = False,
                 rng: np.random.Generator | None = None):
        if activation not in ("relu", "identity", "sigmoid", "softmax"):
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng or np.random.default_rng(0)
        self.W = Parameter(f"{name}.W", glorot_uniform(rng, n_in, n_out))
        self.b = Parameter(f"{name}.b", np.zeros(n_out))
        self.activation = activation
        self.use_dropout = use_dropout

    def params(self):
        return [self.W, self.b]

    def forward(self, x, ctx):
        if x.shape[-1] != self.W.shape[0]:
            raise ValueError(
                f"dense {self.W.name}: input width {x.shape[-1]} != {self.W.shape[0]}"
            )
        z = x @ self.W.value + self.b.value
        if self.activation == "relu":
            y, act_cache = ops.relu(z), z
        elif self.activation == "sigmoid":
            y = ops.sigmoid(z)
            act_cache = y
        elif self.activation == "softmax":
            y = ops.softmax_rows(z)
            act_cache = y
        else:
            y, act_cache = z, None
        mask = None
        if self.use_dropout:
            y, mask = ops.dropout(y, ctx.dropout_rate, ctx.training, ctx.rng)
        return y, (x, act_cache, mask)

    def backward(self, dout, cache):
        x, act_cache, mask = cache
        dout = ops.dropout_backward(dout, mask)
        if self.activation == "relu":
            dz = ops.relu_backward(dout, act_cache)
        elif self.activation == "sigmoid":
            dz = ops.sigmoid_backward(dout, act_cache)
        elif self.activation == "softmax":
            dz = ops.softmax_rows_backward(dout, act_cache)
        else:
            dz = dout
        x2 = x.reshape(-1, x.shape[-1])
        dz2 = dz.reshape(-1, dz.shape[-1])
        self.W.grad += x2.T @ dz2
        self.b.grad += dz2.sum(axis=0)
        return dz @ self.W.value.T


class PerNodeDense(Dense):
    """Dense applied along the node axis with shared weights: (B,N,F)->(B,N,F')."""


# --- graph convolution ------------------------------------------------------

class GCN(Layer):
    """First-order spectral graph convolution over a fixed propagation matrix.

    Computes act(P @ H @ W) on (B, N, F) node features, where P is the
    degree-normalized adjacency with self-loops of the dataset's graph.
    """

    def __init__(self, name: str, propagation: np.ndarray, n_in: int, n_out: int,
                 activation: str = "relu",
                 rng: np.random.Generator | None = None):
        if activation not in ("relu", "identity"):
            raise ValueError(f"unknown GCN activation {activation!r}")
        rng = rng or np.random.default_rng(0)
        self.P = np.asarray(propagation, dtype=np.float64)
        self.W = Parameter(f"{name}.W", glorot_uniform(rng, n_in, n_out))
        self.activation = activation

    def params(self):
        return [self.W]

    def forward(self, x, ctx):
        if x.shape[1] != self.P.shape[0]:
            raise ValueError(
                f"GCN {self.W.name}: {x.shape[1]} nodes, propagation is {self.P.shape}"
            )
        if x.shape[-1] != self.W.shape[0]:
            raise ValueError(
                f"GCN {self.W.name}: feature width {x.shape[-1]} != {self.W.shape[0]}"
            )
        ph = np.matmul(self.P, x)
        z = ph @ self.W.value
        y = ops.relu(z) if self.activation == "relu" else z
        return y, (ph, z)

    def backward(self, dout, cache):
        ph, z = cache
        dz = ops.relu_backward(dout, z) if self.activation == "relu" else dout
        self.W.grad += np.einsum("bnf,bng->fg", ph, dz)
        dph = dz @ self.W.value.T
        return np.matmul(self.P.T, dph)


# --- recurrent cells --------------------------------------------------------

class LSTMCell:
    """LSTM step: forget/input/output gates, tanh candidate and cell state.

    ``printed_form`` swaps the hidden-state update for the uncorrected
    variant h_t = f_t * tanh(c_{t-1}); it exists for comparison tests only.
    """

    def __init__(self, name: str, n_in: int, n_hidden: int,
                 rng: np.random.Generator | None = None,
                 printed_form: bool = False):
        rng = rng or np.random.default_rng(0)
        self.n_in, self.n_hidden = n_in, n_hidden
        self.printed_form = printed_form

        def wp(tag, rows, cols):
            return Parameter(f"{name}.{tag}",
                             glorot_uniform(rng, cols, rows, shape=(rows, cols)))

        self.W = {g: wp(f"W_{g}", n_hidden, n_in) for g in "fgio"}
        self.R = {g: wp(f"R_{g}", n_hidden, n_hidden) for g in "fgio"}
        self.b = {g: Parameter(f"{name}.b_{g}", np.zeros(n_hidden)) for g in "fgio"}

    def params(self):
        return [*self.W.values(), *self.R.values(), *self.b.values()]

    def step(self, x, h_prev, c_prev):
        pre = {
            g: x @ self.W[g].value.T + h_prev @ self.R[g].value.T + self.b[g].value
            for g in "fgio"
        }
        f = ops.sigmoid(pre["f"])
        g = ops.tanh(pre["g"])
        i = ops.sigmoid(pre["i"])
        o = ops.sigmoid(pre["o"])
        c = f * c_prev + g * i
        if self.printed_form:
            tc_prev = np.tanh(c_prev)
            h = f * tc_prev
            cache = (x, h_prev, c_prev, f, g, i, o, None, tc_prev)
        else:
            tc = np.tanh(c)
            h = o * tc
            cache = (x, h_prev, c_prev, f, g, i, o, tc, None)
        return h, c, cache

    def step_backward(self, dh, dc, cache):
        x, h_prev, c_prev, f, g, i, o, tc, tc_prev = cache
        if self.printed_form:
            df_h = dh * tc_prev
            dc_prev_direct = dh * f * (1.0 - tc_prev * tc_prev)
            do = np.zeros_like(o)
            dcell = dc
        else:
            do = dh * tc
            dcell = dc + dh * o * (1.0 - tc * tc)
            df_h = 0.0
            dc_prev_direct = 0.0
        df = dcell * c_prev + df_h
        dg = dcell * i
        di = dcell * g
        dc_prev = dcell * f + dc_prev_direct

        dpre = {
            "f": df * f * (1.0 - f),
            "g": dg * (1.0 - g * g),
            "i": di * i * (1.0 - i),
            "o": do * o * (1.0 - o),
        }
        dx = np.zeros_like(x)
        dh_prev = np.zeros_like(h_prev)
        for gate, dz in dpre.items():
            self.W[gate].grad += dz.T @ x
            self.R[gate].grad += dz.T @ h_prev
            self.b[gate].grad += dz.sum(axis=0)
            dx += dz @ self.W[gate].value
            dh_prev += dz @ self.R[gate].value
        return dx, dh_prev, dc_prev


class GRUCell:
    """GRU step: reset and update gates, candidate state."""

    def __init__(self, name: str, n_in: int, n_hidden: int,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.n_in, self.n_hidden = n_in, n_hidden

        def wp(tag, rows, cols):
            return Parameter(f"{name}.{tag}",
                             glorot_uniform(rng, cols, rows, shape=(rows, cols)))

        self.W_r = wp("W_r", n_hidden, n_in)
        self.W_z = wp("W_z", n_hidden, n_in)
        self.W_h = wp("W_h", n_hidden, n_in)
        self.W_rh = wp("W_rh", n_hidden, n_hidden)
        self.R_r = wp("R_r", n_hidden, n_hidden)
        self.R_z = wp("R_z", n_hidden, n_hidden)
        self.b_r = Parameter(f"{name}.b_r", np.zeros(n_hidden))
        self.b_z = Parameter(f"{name}.b_z", np.zeros(n_hidden))
        self.b_h = Parameter(f"{name}.b_h", np.zeros(n_hidden))

    def params(self):
        return [self.W_r, self.W_z, self.W_h, self.W_rh,
                self.R_r, self.R_z, self.b_r, self.b_z, self.b_h]

    def step(self, x, h_prev, c_prev=None):
        r = ops.sigmoid(x @ self.W_r.value.T + h_prev @ self.R_r.value.T + self.b_r.value)
        z = ops.sigmoid(x @ self.W_z.value.T + h_prev @ self.R_z.value.T + self.b_z.value)
        rh = r * h_prev
        hh = ops.tanh(x @ self.W_h.value.T + rh @ self.W_rh.value.T + self.b_h.value)
        h = z * h_prev + (1.0 - z) * hh
        return h, None, (x, h_prev, r, z, rh, hh)

    def step_backward(self, dh, dc, cache):
        x, h_prev, r, z, rh, hh = cache
        dz = dh * (h_prev - hh)
        dhh = dh * (1.0 - z)
        dh_prev = dh * z

        dpre_h = dhh * (1.0 - hh * hh)
        self.W_h.grad += dpre_h.T @ x
        self.W_rh.grad += dpre_h.T @ rh
        self.b_h.grad += dpre_h.sum(axis=0)
        dx = dpre_h @ self.W_h.value
        drh = dpre_h @ self.W_rh.value
        dr = drh * h_prev
        dh_prev += drh * r

        dpre_r = dr * r * (1.0 - r)
        dpre_z = dz * z * (1.0 - z)
        self.W_r.grad += dpre_r.T @ x
        self.R_r.grad += dpre_r.T @ h_prev
        self.b_r.grad += dpre_r.sum(axis=0)
        self.W_z.grad += dpre_z.T @ x
        self.R_z.grad += dpre_z.T @ h_prev
        self.b_z.grad += dpre_z.sum(axis=0)
        dx += dpre_r @ self.W_r.value + dpre_z @ self.W_z.value
        dh_prev += dpre_r @ self.R_r.value + dpre_z @ self.R_z.value
        return dx, dh_prev, None


def make_cell(kind: str, name: str, n_in: int, n_hidden: int,
              rng: np.random.Generator | None = None):
    if kind == "lstm":
        return LSTMCell(name, n_in, n_hidden, rng)
    if kind == "gru":
        return GRUCell(name, n_in, n_hidden, rng)
    raise ValueError(f"unknown recurrent cell {kind!r}")


class Recurrent(Layer):
    """Unroll one cell over (B, K, d), returning every hidden state (B, K, h).

    Initial hidden and cell states are zero.
    """

    def __init__(self, cell):
        self.cell = cell

    def params(self):
        return self.cell.params()

    def forward(self, x, ctx):
        b, k, _ = x.shape
        h = np.zeros((b, self.cell.n_hidden))
        c = np.zeros((b, self.cell.n_hidden))
        outs = np.empty((b, k, self.cell.n_hidden))
        caches = []
        for t in range(k):
            h, c, cache = self.cell.step(x[:, t, :], h, c)
            outs[:, t, :] = h
            caches.append(cache)
        return outs, caches

    def backward(self, dout, caches):
        b, k, _ = dout.shape
        dx = np.empty((b, k, self.cell.n_in))
        dh = np.zeros((b, self.cell.n_hidden))
        dc = np.zeros((b, self.cell.n_hidden))
        for t in reversed(range(k)):
            dxt, dh, dc_prev = self.cell.step_backward(dout[:, t, :] + dh, dc, caches[t])
            dc = dc_prev if dc_prev is not None else np.zeros_like(dh)
            dx[:, t, :] = dxt
        return dx


class NodeSequenceRecurrent(Layer):
    """Shared recurrent cell over each node's phase sequence.

    (B, N, d, K) -> (B, N, K*h): the cell treats every node as one
    sequence instance; hidden states from all K steps are flattened
    per node, time-major.
    """

    def __init__(self, cell):
        self.inner = Recurrent(cell)

    def params(self):
        return self.inner.params()

    def forward(self, x, ctx):
        b, n, d, k = x.shape
        seq = x.transpose(0, 1, 3, 2).reshape(b * n, k, d)
        out, cache = self.inner.forward(seq, ctx)
        h = out.shape[-1]
        return out.reshape(b, n, k * h), (cache, (b, n, d, k), h)

    def backward(self, dout, cache):
        inner_cache, (b, n, d, k), h = cache
        dseq = self.inner.backward(dout.reshape(b * n, k, h), inner_cache)
        return dseq.reshape(b, n, k, d).transpose(0, 1, 3, 2)


# --- 1-D convolution with max pooling ---------------------------------------

class Conv1dPool(Layer):
    """Valid cross-correlation + bias + relu + non-overlapping max pool.

    Input (B, C, T); kernels (C_out, C, k); pool groups of ``pool``
    positions, dropping any remainder.
    """

    def __init__(self, name: str, c_in: int, c_out: int, kernel: int, pool: int,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.kernel, self.pool = kernel, pool
        self.W = Parameter(
            f"{name}.W",
            glorot_uniform(rng, c_in * kernel, c_out, shape=(c_out, c_in, kernel)),
        )
        self.b = Parameter(f"{name}.b", np.zeros(c_out))

    def params(self):
        return [self.W, self.b]

    def forward(self, x, ctx):
        b, c, t = x.shape
        if self.kernel > t:
            raise ValueError(f"kernel {self.kernel} longer than signal {t}")
        xw = sliding_window_view(x, self.kernel, axis=2)  # (B, C, T', k)
        z = np.einsum("bctk,ock->bot", xw, self.W.value) + self.b.value[None, :, None]
        a = ops.relu(z)
        tp = z.shape[2]
        groups = tp // self.pool
        if groups == 0:
            raise ValueError(f"pool width {self.pool} exceeds feature length {tp}")
        trimmed = a[:, :, : groups * self.pool].reshape(b, -1, groups, self.pool)
        y = trimmed.max(axis=3)
        argmax = trimmed.argmax(axis=3)
        return y, (x, z, argmax, tp)

    def backward(self, dout, cache):
        x, z, argmax, tp = cache
        b, co, groups = dout.shape
        da = np.zeros((b, co, tp))
        bi = np.arange(b)[:, None, None]
        oi = np.arange(co)[None, :, None]
        gi = np.arange(groups)[None, None, :]
        da[bi, oi, gi * self.pool + argmax] = dout
        dz = ops.relu_backward(da, z)
        xw = sliding_window_view(x, self.kernel, axis=2)
        self.W.grad += np.einsum("bctk,bot->ock", xw, dz)
        self.b.grad += dz.sum(axis=(0, 2))
        dx = np.zeros_like(x)
        for kk in range(self.kernel):
            dx[:, :, kk : kk + tp] += np.tensordot(
                dz, self.W.value[:, :, kk], axes=([1], [0])
            ).transpose(0, 2, 1)
        return dx

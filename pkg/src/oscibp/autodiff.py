"""Float64 tensors with reverse-mode automatic differentiation.

The engine implements exactly the operations the pressure regressor
needs: 1D convolution along the last axis, LSTM layers, dense layers,
ReLU, mean squared error, and an L1 penalty over weight tensors. All
values are float64 and every operation is deterministic, so identical
inputs give bit-identical outputs within one build.

Shape conventions
-----------------
Every op accepts a single sample or a batch with one extra leading axis:

* ``conv1d``: ``(C_in, L)`` or ``(B, C_in, L)``
* ``lstm_layer``: ``(T, D)`` or ``(B, T, D)``
* ``dense``: ``(D_in,)`` or ``(B, D_in)``

Gradients accumulate into ``Tensor.grad`` (same shape as ``data``) and
are only computed for tensors created with ``requires_grad=True`` or
downstream of one.
"""
from __future__ import annotations

import struct
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    CheckpointError,
    EmptyBatchError,
    InvalidGraphError,
    ShapeError,
)

__all__ = [
    "Tensor",
    "LstmParams",
    "conv1d",
    "lstm_layer",
    "dense",
    "relu",
    "swap_last_axes",
    "reshape",
    "add",
    "scale",
    "mse",
    "l1_penalty",
    "backward",
    "save_tensors",
    "load_tensors",
]


class Tensor:
    """A dense float64 array plus an optional same-shaped gradient."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


def _result(data: np.ndarray, parents: tuple[Tensor, ...],
            backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss through the whole graph."""
    if loss.size != 1:
        raise InvalidGraphError(
            f"backward() must start from a scalar, got shape {loss.shape}")
    # Iterative post-order topological sort; graphs stay shallow because
    # conv/lstm/dense are fused ops, but recursion limits are avoided anyway.
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# convolution


def _check_conv_args(x: Tensor, kernels: Tensor, bias: Tensor,
                     pad_left: int, pad_right: int) -> None:
    if kernels.ndim != 3:
        raise ShapeError(f"kernels must be (C_out, C_in, W), got {kernels.shape}")
    if x.ndim not in (2, 3):
        raise ShapeError(f"conv1d input must be (C_in, L) or (B, C_in, L), got {x.shape}")
    c_out, c_in, width = kernels.shape
    if x.shape[-2] != c_in:
        raise ShapeError(
            f"input channels {x.shape[-2]} do not match kernel channels {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"bias must be ({c_out},), got {bias.shape}")
    if pad_left < 0 or pad_right < 0 or pad_left + pad_right != width - 1:
        raise ShapeError(
            f"padding ({pad_left}, {pad_right}) must be non-negative and sum to W-1={width - 1}")


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor,
           pad_left: int, pad_right: int) -> Tensor:
    """Stride-1 cross-correlation along the last axis with zero padding.

    ``out[o, j] = bias[o] + sum_{c, w} x[c, j - pad_left + w] * kernels[o, c, w]``
    with out-of-range input samples read as zero. The padding must sum to
    ``W - 1`` so the output length equals the input length.

    Batched inputs use an FFT evaluation (identical result up to float64
    rounding); single samples use the direct sum.
    """
    _check_conv_args(x, kernels, bias, pad_left, pad_right)
    if x.ndim == 2:
        return _conv1d_direct(x, kernels, bias, pad_left)
    return _conv1d_fft(x, kernels, bias, pad_left)


def _conv1d_direct(x: Tensor, kernels: Tensor, bias: Tensor, pad_left: int) -> Tensor:
    c_out, c_in, width = kernels.shape
    length = x.shape[-1]
    xpad = np.zeros((c_in, length + width - 1))
    xpad[:, pad_left:pad_left + length] = x.data
    out = np.broadcast_to(bias.data[:, None], (c_out, length)).copy()
    kern = kernels.data
    for w in range(width):
        out += kern[:, :, w] @ xpad[:, w:w + length]

    def backward_fn(g: np.ndarray) -> None:
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=1))
        if kernels.requires_grad:
            dk = np.empty_like(kern)
            for w in range(width):
                dk[:, :, w] = g @ xpad[:, w:w + length].T
            kernels.accumulate_grad(dk)
        if x.requires_grad:
            dxpad = np.zeros_like(xpad)
            for w in range(width):
                dxpad[:, w:w + length] += kern[:, :, w].T @ g
            x.accumulate_grad(dxpad[:, pad_left:pad_left + length])

    return _result(out, (x, kernels, bias), backward_fn)


def _conv1d_fft(x: Tensor, kernels: Tensor, bias: Tensor, pad_left: int) -> Tensor:
    # Correlation theorem: corr(a, k)[j] = irfft(rfft(a) * conj(rfft(k)))[j],
    # exact (to rounding) once the transform length covers L + W - 1.
    c_out, c_in, width = kernels.shape
    length = x.shape[-1]
    n_full = length + width - 1
    nf = 1
    while nf < n_full:
        nf *= 2
    xpad = np.zeros((x.shape[0], c_in, n_full))
    xpad[:, :, pad_left:pad_left + length] = x.data
    xhat = np.fft.rfft(xpad, nf)
    khat = np.fft.rfft(kernels.data, nf)
    out = np.fft.irfft(np.einsum("bcf,ocf->bof", xhat, np.conj(khat)), nf)[:, :, :length]
    out += bias.data[None, :, None]

    def backward_fn(g: np.ndarray) -> None:
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2)))
        ghat = np.fft.rfft(g, nf)
        if kernels.requires_grad:
            dkhat = np.einsum("bcf,bof->ocf", xhat, np.conj(ghat))
            kernels.accumulate_grad(np.fft.irfft(dkhat, nf)[:, :, :width])
        if x.requires_grad:
            dxhat = np.einsum("bof,ocf->bcf", ghat, khat)
            dxpad = np.fft.irfft(dxhat, nf)
            x.accumulate_grad(dxpad[:, :, pad_left:pad_left + length])

    return _result(out, (x, kernels, bias), backward_fn)


# ---------------------------------------------------------------------------
# LSTM

_GATES = ("input", "forget", "cell", "output")


class LstmParams:
    """Per-gate LSTM parameters: W (H, D), U (H, H), b (H,) for each of
    the input, forget, cell, and output gates."""

    __slots__ = ("input_size", "hidden_size", "w", "u", "b")

    def __init__(self, input_size: int, hidden_size: int,
                 tensors: dict[str, Tensor] | None = None):
        self.input_size = int(input_size)
        self.hidden_size = int(hidden_size)
        if tensors is None:
            tensors = {}
            for gate in _GATES:
                tensors[f"w_{gate}"] = Tensor(np.zeros((hidden_size, input_size)))
                tensors[f"u_{gate}"] = Tensor(np.zeros((hidden_size, hidden_size)))
                tensors[f"b_{gate}"] = Tensor(np.zeros(hidden_size))
        self.w = {g: tensors[f"w_{g}"] for g in _GATES}
        self.u = {g: tensors[f"u_{g}"] for g in _GATES}
        self.b = {g: tensors[f"b_{g}"] for g in _GATES}
        for g in _GATES:
            if self.w[g].shape != (hidden_size, input_size):
                raise ShapeError(f"w_{g} must be ({hidden_size}, {input_size}), got {self.w[g].shape}")
            if self.u[g].shape != (hidden_size, hidden_size):
                raise ShapeError(f"u_{g} must be ({hidden_size}, {hidden_size}), got {self.u[g].shape}")
            if self.b[g].shape != (hidden_size,):
                raise ShapeError(f"b_{g} must be ({hidden_size},), got {self.b[g].shape}")

    def tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for g in _GATES:
            out.append((f"w_{g}", self.w[g]))
            out.append((f"u_{g}", self.u[g]))
            out.append((f"b_{g}", self.b[g]))
        return out

    def weight_tensors(self) -> list[Tensor]:
        return [self.w[g] for g in _GATES] + [self.u[g] for g in _GATES]

    def bias_tensors(self) -> list[Tensor]:
        return [self.b[g] for g in _GATES]


def lstm_layer(seq: Tensor, params: LstmParams) -> Tensor:
    """Run a standard LSTM over ``seq`` and return all hidden states.

    Gates use the logistic sigmoid, the candidate uses tanh, and the
    state updates are ``c_t = f * c_{t-1} + i * g`` and
    ``h_t = o * tanh(c_t)`` with ``h_0 = c_0 = 0``. Input is ``(T, D)``
    or ``(B, T, D)``; output matches with D replaced by the hidden size.
    """
    if seq.ndim not in (2, 3):
        raise ShapeError(f"lstm input must be (T, D) or (B, T, D), got {seq.shape}")
    if seq.shape[-1] != params.input_size:
        raise ShapeError(
            f"sequence feature size {seq.shape[-1]} does not match params D={params.input_size}")
    batched = seq.ndim == 3
    sb = seq.data if batched else seq.data[None]
    n_batch, n_steps, _ = sb.shape
    hid = params.hidden_size

    # Gate blocks are stacked (input, forget, cell, output) so the whole
    # step is one matmul plus slicing.
    w_all = np.concatenate([params.w[g].data for g in _GATES], axis=0)
    u_all = np.concatenate([params.u[g].data for g in _GATES], axis=0)
    b_all = np.concatenate([params.b[g].data for g in _GATES])

    pre = sb @ w_all.T + b_all  # (B, T, 4H)
    h = np.zeros((n_batch, hid))
    c = np.zeros((n_batch, hid))
    gi = np.empty((n_batch, n_steps, hid))
    gf = np.empty_like(gi)
    gg = np.empty_like(gi)
    go = np.empty_like(gi)
    cs = np.empty_like(gi)
    tcs = np.empty_like(gi)
    hprev = np.empty_like(gi)
    cprev = np.empty_like(gi)
    hs = np.empty_like(gi)
    for t in range(n_steps):
        hprev[:, t] = h
        cprev[:, t] = c
        z = pre[:, t] + h @ u_all.T
        i_t = expit(z[:, :hid])
        f_t = expit(z[:, hid:2 * hid])
        g_t = np.tanh(z[:, 2 * hid:3 * hid])
        o_t = expit(z[:, 3 * hid:])
        c = f_t * c + i_t * g_t
        tc = np.tanh(c)
        h = o_t * tc
        gi[:, t] = i_t
        gf[:, t] = f_t
        gg[:, t] = g_t
        go[:, t] = o_t
        cs[:, t] = c
        tcs[:, t] = tc
        hs[:, t] = h

    out_data = hs if batched else hs[0]
    parents = (seq,) + tuple(t for _, t in params.tensors())

    def backward_fn(g_out: np.ndarray) -> None:
        gh_seq = g_out if batched else g_out[None]
        dz = np.empty((n_batch, n_steps, 4 * hid))
        dh_next = np.zeros((n_batch, hid))
        dc_next = np.zeros((n_batch, hid))
        for t in range(n_steps - 1, -1, -1):
            dh = gh_seq[:, t] + dh_next
            do = dh * tcs[:, t]
            dc = dc_next + dh * go[:, t] * (1.0 - tcs[:, t] ** 2)
            di = dc * gg[:, t]
            df = dc * cprev[:, t]
            dg = dc * gi[:, t]
            dz[:, t, :hid] = di * gi[:, t] * (1.0 - gi[:, t])
            dz[:, t, hid:2 * hid] = df * gf[:, t] * (1.0 - gf[:, t])
            dz[:, t, 2 * hid:3 * hid] = dg * (1.0 - gg[:, t] ** 2)
            dz[:, t, 3 * hid:] = do * go[:, t] * (1.0 - go[:, t])
            dh_next = dz[:, t] @ u_all
            dc_next = dc * gf[:, t]
        dw_all = np.tensordot(dz, sb, axes=([0, 1], [0, 1]))
        du_all = np.tensordot(dz, hprev, axes=([0, 1], [0, 1]))
        db_all = dz.sum(axis=(0, 1))
        for idx, gate in enumerate(_GATES):
            rows = slice(idx * hid, (idx + 1) * hid)
            if params.w[gate].requires_grad:
                params.w[gate].accumulate_grad(dw_all[rows])
            if params.u[gate].requires_grad:
                params.u[gate].accumulate_grad(du_all[rows])
            if params.b[gate].requires_grad:
                params.b[gate].accumulate_grad(db_all[rows])
        if seq.requires_grad:
            dseq = dz @ w_all
            seq.accumulate_grad(dseq if batched else dseq[0])

    return _result(out_data, parents, backward_fn)


# ---------------------------------------------------------------------------
# dense layers and elementwise ops


def dense(x: Tensor, weights: Tensor, bias: Tensor, activation: str = "linear") -> Tensor:
    """Affine layer ``x @ W.T + b`` with an optional ReLU."""
    if activation not in ("linear", "relu"):
        raise ValueError(f"unknown activation {activation!r}")
    if weights.ndim != 2:
        raise ShapeError(f"weights must be 2D (D_out, D_in), got {weights.shape}")
    if x.ndim not in (1, 2):
        raise ShapeError(f"dense input must be (D_in,) or (B, D_in), got {x.shape}")
    d_out, d_in = weights.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"input width {x.shape[-1]} does not match weights D_in={d_in}")
    if bias.shape != (d_out,):
        raise ShapeError(f"bias must be ({d_out},), got {bias.shape}")
    batched = x.ndim == 2
    xb = x.data if batched else x.data[None]
    z = xb @ weights.data.T + bias.data
    out = np.maximum(z, 0.0) if activation == "relu" else z

    def backward_fn(g: np.ndarray) -> None:
        gb = g if batched else g[None]
        dz = gb * (z > 0.0) if activation == "relu" else gb
        if bias.requires_grad:
            bias.accumulate_grad(dz.sum(axis=0))
        if weights.requires_grad:
            weights.accumulate_grad(dz.T @ xb)
        if x.requires_grad:
            dx = dz @ weights.data
            x.accumulate_grad(dx if batched else dx[0])

    return _result(out if batched else out[0], (x, weights, bias), backward_fn)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def backward_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * (x.data > 0.0))

    return _result(out, (x,), backward_fn)


def swap_last_axes(x: Tensor) -> Tensor:
    """Transpose the last two axes (contiguous copy)."""
    if x.ndim < 2:
        raise ShapeError(f"need at least 2 axes to swap, got shape {x.shape}")
    out = np.ascontiguousarray(np.swapaxes(x.data, -1, -2))

    def backward_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.swapaxes(g, -1, -2))

    return _result(out, (x,), backward_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)

    def backward_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g.reshape(x.shape))

    return _result(out, (x,), backward_fn)


def flip_time(x: Tensor) -> Tensor:
    """Reverse the time axis (second-to-last) of a sequence tensor."""
    if x.ndim not in (2, 3):
        raise ShapeError(f"flip_time expects (T, D) or (B, T, D), got {x.shape}")
    out = np.ascontiguousarray(np.flip(x.data, axis=-2))

    def backward_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.flip(g, axis=-2))

    return _result(out, (x,), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add needs matching shapes, got {a.shape} and {b.shape}")
    out = a.data + b.data

    def backward_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return _result(out, (a, b), backward_fn)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    out = x.data * factor

    def backward_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * factor)

    return _result(out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# losses


def mse(pred: Tensor, target: np.ndarray | Sequence[float]) -> Tensor:
    """Mean squared error ``(1/N) * sum((pred - target)^2)`` as a scalar."""
    t = np.asarray(target, dtype=np.float64)
    if pred.ndim != 1 or t.shape != pred.shape:
        raise ShapeError(f"mse needs matching 1D shapes, got {pred.shape} and {t.shape}")
    n = pred.shape[0]
    if n == 0:
        raise EmptyBatchError("mse over an empty batch")
    resid = pred.data - t
    out = np.asarray((resid @ resid) / n)

    def backward_fn(g: np.ndarray) -> None:
        if pred.requires_grad:
            pred.accumulate_grad(g * (2.0 / n) * resid)

    return _result(out, (pred,), backward_fn)


def l1_penalty(weights: Iterable[Tensor]) -> Tensor:
    """Sum of absolute values over the given weight tensors.

    Callers pass weight matrices only; biases are deliberately excluded
    from regularization at the model level. The subgradient at zero is
    taken as zero.
    """
    ws = list(weights)
    total = 0.0
    for w in ws:
        total += float(np.abs(w.data).sum())
    out = np.asarray(total)

    def backward_fn(g: np.ndarray) -> None:
        for w in ws:
            if w.requires_grad:
                w.accumulate_grad(g * np.sign(w.data))

    return _result(out, tuple(ws), backward_fn)


# ---------------------------------------------------------------------------
# checkpoint container

_MAGIC = b"OBPT"
_VERSION = 1


def write_tensor_block(fh, named: Sequence[tuple[str, np.ndarray]]) -> None:
    """Write named float64 arrays to an open binary file."""
    fh.write(_MAGIC)
    fh.write(struct.pack("<II", _VERSION, len(named)))
    for name, arr in named:
        raw = name.encode("utf-8")
        a = np.asarray(arr, dtype="<f8")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<B", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape) if a.ndim else b"")
        fh.write(a.tobytes(order="C"))


def read_tensor_block(fh) -> dict[str, np.ndarray]:
    """Read a block written by :func:`write_tensor_block`."""
    def take(n: int) -> bytes:
        buf = fh.read(n)
        if len(buf) != n:
            raise CheckpointError("checkpoint truncated")
        return buf

    if take(4) != _MAGIC:
        raise CheckpointError("not a tensor checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim)) if ndim else ()
        n_vals = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(8 * n_vals), dtype="<f8").reshape(shape)
        out[name] = data.astype(np.float64, copy=True)
    return out


def save_tensors(path, named: Sequence[tuple[str, np.ndarray]]) -> None:
    with open(path, "wb") as fh:
        write_tensor_block(fh, named)


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return read_tensor_block(fh)

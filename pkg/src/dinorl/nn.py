"""Convolutional Q-network with a hand-derived backward pass and an Adam optimizer.

Tensors are NHWC numpy arrays. Convolutions are "valid" and lowered to a matrix product
over im2col patches; conv weights have shape ``(k, k, C_in, F)`` and dense weights
``(n_in, n_out)``. Every layer except the last is followed by a ReLU.
"""

from __future__ import annotations

import copy
import os
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import FormatError, NumericFault, ShapeError, UnsupportedVersionError
from .prng import SplitMix64

MAGIC = b"DINOQ1"
VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# stride assumed for a conv kernel size when a weight file is loaded without an explicit arch
DEFAULT_STRIDES = {8: 4, 4: 2, 3: 1}


@dataclass(frozen=True)
class ConvSpec:
    filters: int
    kernel: int
    stride: int


@dataclass(frozen=True)
class NetArch:
    input_hw: int = 80
    in_channels: int = 4
    convs: tuple[ConvSpec, ...] = (ConvSpec(32, 8, 4), ConvSpec(64, 4, 2), ConvSpec(64, 3, 1))
    hidden: tuple[int, ...] = (512,)
    n_out: int = 2

    @classmethod
    def pyramid(cls, filters=(32, 64, 64), dense=512) -> "NetArch":
        """8-4-3 kernel, 4-2-1 stride conv stack with the given widths."""
        kernels = [(8, 4), (4, 2), (3, 1)]
        return cls(convs=tuple(ConvSpec(f, k, s) for f, (k, s) in zip(filters, kernels)),
                   hidden=(dense,))

    def spatial_sizes(self) -> list[int]:
        sizes = [self.input_hw]
        for c in self.convs:
            out = (sizes[-1] - c.kernel) // c.stride + 1
            if out < 1:
                raise ValueError(f"conv kernel {c.kernel} does not fit a {sizes[-1]}x{sizes[-1]} input")
            sizes.append(out)
        return sizes

    def flat_size(self) -> int:
        side = self.spatial_sizes()[-1]
        channels = self.convs[-1].filters if self.convs else self.in_channels
        return side * side * channels

    def layer_names(self) -> list[str]:
        names = [f"conv{i + 1}" for i in range(len(self.convs))]
        names += [f"dense{i + 1}" for i in range(len(self.hidden))]
        return names + ["dense_out"]

    def weight_shapes(self) -> list[tuple[int, ...]]:
        shapes = []
        channels = self.in_channels
        for c in self.convs:
            shapes.append((c.kernel, c.kernel, channels, c.filters))
            channels = c.filters
        n_in = self.flat_size()
        for units in (*self.hidden, self.n_out):
            shapes.append((n_in, units))
            n_in = units
        return shapes


def _patches(x: np.ndarray, k: int, s: int) -> np.ndarray:
    b, h, w, c = x.shape
    oh, ow = (h - k) // s + 1, (w - k) // s + 1
    sb, sh, sw, sc = x.strides
    return as_strided(x, shape=(b, oh, ow, k, k, c), strides=(sb, sh * s, sw * s, sh, sw, sc),
                      writeable=False)


class QNetwork:
    """Q-function approximator: stacked observations in, one value per action out."""

    def __init__(self, arch: NetArch | None = None, seed: int = 0, dtype=np.float32):
        self.arch = arch or NetArch()
        self.arch.spatial_sizes()
        self.dtype = np.dtype(dtype)
        rng = SplitMix64(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for shape in self.arch.weight_shapes():
            fan_in = int(np.prod(shape[:-1]))
            limit = np.sqrt(6.0 / fan_in)
            u = rng.uniform_array(int(np.prod(shape)))
            self.weights.append(((2.0 * u - 1.0) * limit).reshape(shape).astype(self.dtype))
            self.biases.append(np.zeros(shape[-1], dtype=self.dtype))

    @property
    def names(self) -> list[str]:
        return self.arch.layer_names()

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def astype(self, dtype) -> "QNetwork":
        out = copy.deepcopy(self)
        out.dtype = np.dtype(dtype)
        out.weights = [w.astype(dtype) for w in self.weights]
        out.biases = [b.astype(dtype) for b in self.biases]
        return out

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        a = self.arch
        expected = (a.input_hw, a.input_hw, a.in_channels)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(("B",) + expected, x.shape)
        return np.ascontiguousarray(x, dtype=self.dtype)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._forward(self._check_input(x), keep=False)[0]

    def _forward(self, x, keep):
        caches = []
        n_conv = len(self.arch.convs)
        h = x
        for i, spec in enumerate(self.arch.convs):
            cols = _patches(h, spec.kernel, spec.stride)
            b, oh, ow = cols.shape[:3]
            cols = cols.reshape(b * oh * ow, -1)
            w = self.weights[i]
            z = (cols @ w.reshape(-1, w.shape[-1]) + self.biases[i]).reshape(b, oh, ow, -1)
            out = np.maximum(z, 0)
            if keep:
                caches.append((h.shape, cols, z))
            h = out
        h = h.reshape(h.shape[0], -1)
        last = len(self.weights) - 1
        for i in range(n_conv, len(self.weights)):
            z = h @ self.weights[i] + self.biases[i]
            out = z if i == last else np.maximum(z, 0)
            if keep:
                caches.append((h, z))
            h = out
        return h, caches

    def gradients(self, x, targets, actions, check_finite: bool = True):
        """Masked-MSE loss and its gradient for every weight and bias.

        Only the output of the chosen action receives a residual. Returns
        ``(loss, weight_grads, bias_grads)``.
        """
        x = self._check_input(x)
        batch = x.shape[0]
        targets = np.asarray(targets, dtype=self.dtype)
        actions = np.asarray(actions, dtype=np.int64)
        if targets.shape != (batch,) or actions.shape != (batch,):
            raise ShapeError((batch,), targets.shape if targets.shape != (batch,) else actions.shape)
        q, caches = self._forward(x, keep=True)
        rows = np.arange(batch)
        resid = q[rows, actions] - targets
        loss = float(np.mean(resid * resid))
        if check_finite and not np.isfinite(loss):
            raise NumericFault(self.names[-1], "loss")
        dout = np.zeros_like(q)
        dout[rows, actions] = (2.0 / batch) * resid

        n_conv = len(self.arch.convs)
        n = len(self.weights)
        gw: list[np.ndarray] = [None] * n
        gb: list[np.ndarray] = [None] * n
        for i in range(n - 1, n_conv - 1, -1):
            h_in, z = caches[i]
            if i != n - 1:
                dout = dout * (z > 0)
            gw[i] = h_in.T @ dout
            gb[i] = dout.sum(axis=0)
            dout = dout @ self.weights[i].T
        if n_conv:
            dout = dout.reshape(caches[n_conv - 1][2].shape)
        for i in range(n_conv - 1, -1, -1):
            in_shape, cols, z = caches[i]
            spec = self.arch.convs[i]
            dz = dout * (z > 0)
            d2 = dz.reshape(-1, dz.shape[-1])
            w = self.weights[i]
            gw[i] = (cols.T @ d2).reshape(w.shape)
            gb[i] = d2.sum(axis=0)
            if i == 0:
                break
            dcols = (d2 @ w.reshape(-1, w.shape[-1]).T).reshape(dz.shape[:3] + w.shape[:3])
            dx = np.zeros(in_shape, dtype=self.dtype)
            k, s = spec.kernel, spec.stride
            oh, ow = dz.shape[1], dz.shape[2]
            for ki in range(k):
                for kj in range(k):
                    dx[:, ki:ki + s * (oh - 1) + 1:s, kj:kj + s * (ow - 1) + 1:s, :] += dcols[:, :, :, ki, kj, :]
            dout = dx
        if check_finite:
            for name, g, b in zip(self.names, gw, gb):
                if not (np.isfinite(g).all() and np.isfinite(b).all()):
                    raise NumericFault(name)
        return loss, gw, gb


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    k: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_network(cls, net: QNetwork) -> "AdamState":
        params = net.parameters()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])

    def apply(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        """One bias-corrected Adam update, in place."""
        self.k += 1
        c1 = 1.0 - self.beta1 ** self.k
        c2 = 1.0 - self.beta2 ** self.k
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / p.dtype.type(c1)
            v_hat = v / p.dtype.type(c2)
            p -= p.dtype.type(lr) * m_hat / (np.sqrt(v_hat) + p.dtype.type(self.eps))


def forward(net: QNetwork, batch: np.ndarray) -> np.ndarray:
    return net.forward(batch)


def train_step(net: QNetwork, adam: AdamState, batch, targets, actions, lr: float = 1e-4) -> float:
    """One masked-MSE gradient step. Returns the loss before the update."""
    loss, gw, gb = net.gradients(batch, targets, actions)
    grads = [g for pair in zip(gw, gb) for g in pair]
    adam.apply(net.parameters(), grads, lr)
    return loss


def grad_check(net: QNetwork, batch, targets, actions, h: float = 1e-5, sabotage=None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Runs in float64 on a copy of ``net``. ``sabotage=(param_index, flat_index)`` doubles one
    analytic gradient entry, to prove the check can fail.
    """
    net = net.astype(np.float64)
    batch = np.asarray(batch, dtype=np.float64)
    _, gw, gb = net.gradients(batch, targets, actions)
    analytic = [g for pair in zip(gw, gb) for g in pair]
    if sabotage is not None:
        p_idx, flat = sabotage
        analytic[p_idx] = analytic[p_idx].copy()
        analytic[p_idx].reshape(-1)[flat] *= 2.0

    worst = 0.0
    for p, a in zip(net.parameters(), analytic):
        flat_p = p.reshape(-1)
        flat_a = a.reshape(-1)
        for j in range(flat_p.size):
            orig = flat_p[j]
            flat_p[j] = orig + h
            plus = net.gradients(batch, targets, actions, check_finite=False)[0]
            flat_p[j] = orig - h
            minus = net.gradients(batch, targets, actions, check_finite=False)[0]
            flat_p[j] = orig
            numeric = (plus - minus) / (2.0 * h)
            err = abs(flat_a[j] - numeric) / max(1e-8, abs(flat_a[j]) + abs(numeric))
            worst = max(worst, err)
    return worst


def clone_weights(src: QNetwork) -> QNetwork:
    return copy.deepcopy(src)


def weights_to_bytes(net: QNetwork) -> bytes:
    parts = [MAGIC, bytes([VERSION])]
    for w, b in zip(net.weights, net.biases):
        parts.append(struct.pack("<I", w.ndim))
        parts.append(struct.pack(f"<{w.ndim}I", *w.shape))
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(parts)


def _infer_arch(shapes: list[tuple[int, ...]], end: int) -> NetArch:
    conv_shapes = [s for s in shapes if len(s) == 4]
    dense_shapes = [s for s in shapes if len(s) == 2]
    if not dense_shapes:
        raise FormatError("weight file has no dense layers", end)
    convs = tuple(ConvSpec(s[3], s[0], DEFAULT_STRIDES.get(s[0], 1)) for s in conv_shapes)
    in_channels = conv_shapes[0][2] if conv_shapes else 1
    flat = dense_shapes[0][0]
    for hw in [80] + list(range(1, 513)):
        arch = NetArch(hw, in_channels, convs, tuple(s[1] for s in dense_shapes[:-1]), dense_shapes[-1][1])
        try:
            if arch.flat_size() == flat:
                return arch
        except ValueError:
            continue
    raise FormatError("cannot infer input size from layer shapes; pass arch explicitly", end)


def weights_from_bytes(data: bytes, arch: NetArch | None = None, offset: int = 0,
                       n_layers: int | None = None) -> tuple[QNetwork, int]:
    """Parse a weight blob starting at ``offset``. Returns the network and the end offset.

    Without ``n_layers`` the blob is assumed to run to the end of ``data``.
    """
    head = data[offset:offset + len(MAGIC)]
    if head != MAGIC:
        if len(head) < len(MAGIC) and MAGIC.startswith(head):
            raise FormatError("truncated inside magic", len(data))
        raise FormatError("bad magic, expected b'DINOQ1'", offset)
    pos = offset + len(MAGIC)
    if pos >= len(data):
        raise FormatError("truncated before version byte", len(data))
    if data[pos] != VERSION:
        raise UnsupportedVersionError(f"unsupported weight format version {data[pos]}", pos)
    pos += 1

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated: needed {n} bytes", len(data))
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    shapes, weights, biases = [], [], []
    expected_layers = n_layers if n_layers is not None else (len(arch.weight_shapes()) if arch else None)
    while (pos < len(data)) if expected_layers is None else (len(shapes) < expected_layers):
        start = pos
        (ndim,) = struct.unpack("<I", take(4))
        if ndim not in (2, 4):
            raise FormatError(f"invalid layer rank {ndim}", start)
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape))
        weights.append(np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).astype(np.float32))
        biases.append(np.frombuffer(take(4 * shape[-1]), dtype="<f4").astype(np.float32))
        shapes.append(tuple(shape))

    if arch is None:
        arch = _infer_arch(shapes, pos)
    if [tuple(s) for s in arch.weight_shapes()] != shapes:
        raise FormatError(f"layer shapes {shapes} do not match architecture {arch}", pos)
    net = QNetwork.__new__(QNetwork)
    net.arch, net.dtype = arch, np.dtype(np.float32)
    net.weights, net.biases = weights, biases
    return net, pos


def save_weights(net: QNetwork, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(weights_to_bytes(net))


def load_weights(path: str | os.PathLike, arch: NetArch | None = None) -> QNetwork:
    with open(path, "rb") as fh:
        data = fh.read()
    net, end = weights_from_bytes(data, arch)
    if end != len(data):
        raise FormatError("trailing bytes after last layer", end)
    return net

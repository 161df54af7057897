"""Small numpy network toolkit: dense/conv/max-pool layers, backprop, SGD.

Tensors are plain ``numpy.ndarray`` objects with a leading batch axis.
Image inputs use ``(N, C, H, W)`` layout.  A network is described by a list
of :class:`LayerSpec` and its weights live in a :class:`NetParams`; both are
plain values, so copying a network is copying its params.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass
from typing import BinaryIO, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, NonFiniteError, UsageError

LAYOUT_VERSION = 1
MAGIC = b"NKCP"

KINDS = ("dense", "conv2d", "maxpool2d", "relu")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0  # dense output width
    channels: int = 0  # conv output channels
    filter: int = 0  # conv/pool window size F
    stride: int = 1
    bias: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dense" and self.units <= 0:
            raise ConfigError("dense layer needs units > 0")
        if self.kind == "conv2d" and (self.channels <= 0 or self.filter <= 0):
            raise ConfigError("conv2d layer needs channels > 0 and filter > 0")
        if self.kind == "maxpool2d" and self.filter <= 0:
            raise ConfigError("maxpool2d layer needs filter > 0")
        if self.stride <= 0:
            raise ConfigError("stride must be positive")


def dense(units: int, bias: bool = True) -> LayerSpec:
    return LayerSpec("dense", units=units, bias=bias)


def conv2d(channels: int, filter: int, stride: int = 1) -> LayerSpec:
    return LayerSpec("conv2d", channels=channels, filter=filter, stride=stride)


def maxpool2d(filter: int, stride: int) -> LayerSpec:
    return LayerSpec("maxpool2d", filter=filter, stride=stride)


def relu() -> LayerSpec:
    return LayerSpec("relu")


@dataclass
class NetParams:
    """Per-layer parameter lists: ``[W, b]``, ``[W]`` or ``[]``."""

    layers: list[list[np.ndarray]]
    version: int = LAYOUT_VERSION

    def flat(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer]

    def copy(self) -> NetParams:
        return NetParams([[p.copy() for p in layer] for layer in self.layers], self.version)

    def map(self, fn) -> NetParams:
        return NetParams([[fn(p) for p in layer] for layer in self.layers], self.version)

    def astype(self, dtype) -> NetParams:
        return self.map(lambda p: p.astype(dtype))


def _window_out(size: int, f: int, s: int) -> int:
    return (size - f) // s + 1


def output_shape(specs: Sequence[LayerSpec], input_shape: Sequence[int]) -> tuple[int, ...]:
    """Per-sample output shape of ``specs`` applied to ``input_shape``."""
    shape = tuple(input_shape)
    for spec in specs:
        if spec.kind == "dense":
            shape = (spec.units,)
        elif spec.kind in ("conv2d", "maxpool2d"):
            if len(shape) != 3:
                raise ConfigError(f"{spec.kind} expects (C, H, W) input, got {shape}")
            c, h, w = shape
            ho, wo = _window_out(h, spec.filter, spec.stride), _window_out(w, spec.filter, spec.stride)
            if ho <= 0 or wo <= 0:
                raise ConfigError(f"{spec.kind} window {spec.filter} too large for {h}x{w}")
            shape = (spec.channels if spec.kind == "conv2d" else c, ho, wo)
    return shape


def init_params(specs: Sequence[LayerSpec], input_shape: Sequence[int], rng: np.random.Generator,
                dtype=np.float32) -> NetParams:
    """Glorot-uniform weights, zero biases."""
    layers = []
    shape = tuple(input_shape)
    for spec in specs:
        if spec.kind == "dense":
            fan_in = int(np.prod(shape))
            bound = np.sqrt(6.0 / (fan_in + spec.units))
            w = rng.uniform(-bound, bound, size=(fan_in, spec.units)).astype(dtype)
            layers.append([w, np.zeros(spec.units, dtype)] if spec.bias else [w])
        elif spec.kind == "conv2d":
            c = shape[0]
            fan_in = c * spec.filter ** 2
            fan_out = spec.channels * spec.filter ** 2
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(spec.channels, c, spec.filter, spec.filter)).astype(dtype)
            layers.append([w, np.zeros(spec.channels, dtype)] if spec.bias else [w])
        else:
            layers.append([])
        shape = output_shape([spec], shape)
    return NetParams(layers)


def zeros_like(params: NetParams) -> NetParams:
    return params.map(np.zeros_like)


def check_shapes(specs: Sequence[LayerSpec], params: NetParams, input_shape: Sequence[int]) -> None:
    expected = init_params(specs, input_shape, np.random.default_rng(0))
    if len(expected.layers) != len(params.layers):
        raise ConfigError("layer count does not match spec chain")
    for i, (a, b) in enumerate(zip(expected.layers, params.layers)):
        if [p.shape for p in a] != [p.shape for p in b]:
            raise ConfigError(f"layer {i}: param shapes {[p.shape for p in b]} != {[p.shape for p in a]}")


# --------------------------------------------------------------------------
# forward / backward

def _windows(x, f, s):
    # (N, C, H, W) -> (N, C, Ho, Wo, F, F), a view
    return sliding_window_view(x, (f, f), axis=(2, 3))[:, :, ::s, ::s]


def forward(specs: Sequence[LayerSpec], params: NetParams, x: np.ndarray, cache: bool = True):
    """Run ``x`` through the chain.

    Returns ``(output, tape)``; ``tape`` is ``None`` when ``cache`` is False
    and otherwise holds what :func:`backward` needs.
    """
    if len(params.layers) != len(specs):
        raise ConfigError("params do not match spec chain")
    tape = [] if cache else None
    h = x
    for spec, p in zip(specs, params.layers):
        inp = h
        aux = None
        if spec.kind == "dense":
            w = p[0]
            flat = h.reshape(h.shape[0], -1)
            if flat.shape[1] != w.shape[0]:
                raise ConfigError(f"dense expects {w.shape[0]} inputs, got {flat.shape[1]}")
            h = flat @ w
            if spec.bias:
                h = h + p[1]
            aux = flat
        elif spec.kind == "conv2d":
            w = p[0]
            if h.ndim != 4 or h.shape[1] != w.shape[1]:
                raise ConfigError(f"conv2d expects (N, {w.shape[1]}, H, W), got {h.shape}")
            win = _windows(h, spec.filter, spec.stride)
            h = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
            if spec.bias:
                h = h + p[1][None, :, None, None]
            aux = win
        elif spec.kind == "maxpool2d":
            if h.ndim != 4:
                raise ConfigError(f"maxpool2d expects (N, C, H, W), got {h.shape}")
            win = _windows(h, spec.filter, spec.stride)
            n, c, ho, wo = win.shape[:4]
            flat = win.reshape(n, c, ho, wo, -1)
            idx = flat.argmax(axis=-1)
            h = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
            aux = idx
        else:
            h = np.maximum(h, 0)
        if tape is not None:
            tape.append((inp, aux))
    return h, tape


def backward(specs: Sequence[LayerSpec], params: NetParams, tape, grad_out: np.ndarray):
    """Backpropagate ``grad_out`` through a cached forward pass.

    Returns ``(grads, grad_input)`` where ``grads`` mirrors ``params``.
    """
    if tape is None:
        raise UsageError("backward needs a forward pass run with cache=True")
    grads = [None] * len(specs)
    g = grad_out
    for i in range(len(specs) - 1, -1, -1):
        spec, p = specs[i], params.layers[i]
        inp, aux = tape[i]
        if spec.kind == "dense":
            w = p[0]
            gw = aux.T @ g
            grads[i] = [gw, g.sum(axis=0)] if spec.bias else [gw]
            g = (g @ w.T).reshape(inp.shape)
        elif spec.kind == "conv2d":
            w = p[0]
            f, s = spec.filter, spec.stride
            gw = np.tensordot(g, aux, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, F, F)
            grads[i] = [gw, g.sum(axis=(0, 2, 3))] if spec.bias else [gw]
            gx = np.zeros_like(inp)
            ho, wo = g.shape[2], g.shape[3]
            for a in range(f):
                for b in range(f):
                    # (N, O, Ho, Wo) x (O, C) -> (N, C, Ho, Wo)
                    contrib = np.tensordot(g, w[:, :, a, b], axes=([1], [0])).transpose(0, 3, 1, 2)
                    gx[:, :, a:a + s * (ho - 1) + 1:s, b:b + s * (wo - 1) + 1:s] += contrib
            g = gx
        elif spec.kind == "maxpool2d":
            f, s = spec.filter, spec.stride
            n, c, ho, wo = g.shape
            gx = np.zeros_like(inp)
            rows = (np.arange(ho) * s)[None, None, :, None] + aux // f
            cols = (np.arange(wo) * s)[None, None, None, :] + aux % f
            nn_ = np.arange(n)[:, None, None, None]
            cc = np.arange(c)[None, :, None, None]
            np.add.at(gx, (np.broadcast_to(nn_, g.shape), np.broadcast_to(cc, g.shape), rows, cols), g)
            grads[i] = []
            g = gx
        else:
            grads[i] = []
            g = g * (inp > 0)
    return NetParams(grads, params.version), g


# --------------------------------------------------------------------------
# updates

def _check_finite(params: NetParams, what: str) -> None:
    for i, layer in enumerate(params.layers):
        for p in layer:
            if not np.all(np.isfinite(p)):
                raise NonFiniteError(f"non-finite {what} in layer {i}")


def sgd_step(params: NetParams, grads: NetParams, lr: float, momentum: float = 0.0,
             velocity: NetParams | None = None):
    """One SGD step, ``w <- w - lr * v`` with ``v = momentum * v + grad``.

    Returns ``(new_params, new_velocity)``; velocity is ``None`` when
    momentum is off.
    """
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    _check_finite(grads, "gradient")
    if momentum:
        if velocity is None:
            velocity = zeros_like(params)
        velocity = NetParams([[momentum * v + g for v, g in zip(vl, gl)]
                              for vl, gl in zip(velocity.layers, grads.layers)], params.version)
        step = velocity
    else:
        step = grads
    new = NetParams([[(w - lr * d).astype(w.dtype, copy=False) for w, d in zip(wl, dl)]
                     for wl, dl in zip(params.layers, step.layers)], params.version)
    return new, (velocity if momentum else None)


@dataclass
class AdamState:
    m: NetParams
    v: NetParams
    t: int = 0


def adam_step(params: NetParams, grads: NetParams, lr: float, state: AdamState | None = None,
              b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
    """Adam update (Kingma & Ba defaults). Returns ``(new_params, state)``."""
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    _check_finite(grads, "gradient")
    if state is None:
        state = AdamState(zeros_like(params), zeros_like(params))
    t = state.t + 1
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    new_w, new_m, new_v = [], [], []
    for wl, gl, ml, vl in zip(params.layers, grads.layers, state.m.layers, state.v.layers):
        lw, lm, lv = [], [], []
        for w, g, m, v in zip(wl, gl, ml, vl):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            lw.append((w - lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(w.dtype, copy=False))
            lm.append(m)
            lv.append(v)
        new_w.append(lw)
        new_m.append(lm)
        new_v.append(lv)
    return (NetParams(new_w, params.version),
            AdamState(NetParams(new_m, params.version), NetParams(new_v, params.version), t))


def soft_update(target: NetParams, train: NetParams, tau: float) -> NetParams:
    """``target <- tau * train + (1 - tau) * target``, elementwise."""
    if not 0 < tau <= 1:
        raise ConfigError("tau must be in (0, 1]")
    if [[p.shape for p in l] for l in target.layers] != [[p.shape for p in l] for l in train.layers]:
        raise ConfigError("target and train params have different shapes")
    if tau == 1:
        return train.copy()
    return NetParams([[(tau * s + (1 - tau) * t).astype(t.dtype, copy=False) for t, s in zip(tl, sl)]
                      for tl, sl in zip(target.layers, train.layers)], target.version)


# --------------------------------------------------------------------------
# checkpoints: MAGIC | u16 version | u32 len | JSON header | blocks of LE float32

def dump_params(fp: BinaryIO, specs: Sequence[LayerSpec], params: NetParams,
                input_shape: Sequence[int] = ()) -> None:
    header = json.dumps({"input_shape": list(input_shape), "layers": [asdict(s) for s in specs],
                         "counts": [len(l) for l in params.layers]},
                        sort_keys=True, separators=(",", ":")).encode()
    fp.write(MAGIC)
    fp.write(struct.pack("<HI", params.version, len(header)))
    fp.write(header)
    for p in params.flat():
        fp.write(struct.pack("<B", p.ndim))
        fp.write(struct.pack(f"<{p.ndim}I", *p.shape))
        fp.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_params(fp: BinaryIO):
    """Inverse of :func:`dump_params`; returns ``(specs, params, input_shape)``."""
    if fp.read(4) != MAGIC:
        raise ConfigError("not a numkit checkpoint")
    version, n = struct.unpack("<HI", fp.read(6))
    if version != LAYOUT_VERSION:
        raise ConfigError(f"unsupported checkpoint layout version {version}")
    header = json.loads(fp.read(n))
    specs = [LayerSpec(**d) for d in header["layers"]]
    layers = []
    for count in header["counts"]:
        layer = []
        for _ in range(count):
            (ndim,) = struct.unpack("<B", fp.read(1))
            shape = struct.unpack(f"<{ndim}I", fp.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            layer.append(np.frombuffer(fp.read(4 * size), dtype="<f4").astype(np.float32).reshape(shape))
        layers.append(layer)
    return specs, NetParams(layers, version), tuple(header["input_shape"])


def params_to_bytes(specs, params, input_shape=()) -> bytes:
    buf = io.BytesIO()
    dump_params(buf, specs, params, input_shape)
    return buf.getvalue()


def params_from_bytes(data: bytes):
    return load_params(io.BytesIO(data))

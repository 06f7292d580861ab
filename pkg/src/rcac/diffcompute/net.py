"""Layer specs, parameter sets and tape-based reverse-mode evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from rcac.diffcompute import layers as L
from rcac.errors import ConfigurationError, NumericError

KINDS = ("conv2d", "deconv2d", "dense", "relu", "tanh", "layernorm", "flatten", "reshape",
         "permute")


@dataclass(frozen=True)
class LayerSpec:
    """One entry of a network's layer menu.

    ``channels_in``/``channels_out`` double as feature counts for ``dense``
    and the normalized width for ``layernorm``. ``shape`` is the per-sample
    target shape for ``reshape`` and the per-sample axis order for
    ``permute``. Conv layers take channels-last (H, W, C) samples.
    """

    kind: str
    channels_in: int = 0
    channels_out: int = 0
    kernel: int = 3
    stride: int = 1
    output_padding: int = 0
    shape: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv2d", "deconv2d", "dense"):
            if self.channels_in < 1 or self.channels_out < 1:
                raise ConfigurationError(f"{self.kind}: channel counts must be positive")
        if self.stride < 1 or self.kernel < 1:
            raise ConfigurationError(f"{self.kind}: kernel and stride must be positive")

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv2d", "deconv2d", "dense", "layernorm")


def conv2d(cin, cout, stride=1, kernel=3):
    return LayerSpec("conv2d", cin, cout, kernel=kernel, stride=stride)


def deconv2d(cin, cout, stride=1, kernel=3, output_padding=0):
    return LayerSpec("deconv2d", cin, cout, kernel=kernel, stride=stride,
                     output_padding=output_padding)


def dense(nin, nout):
    return LayerSpec("dense", nin, nout)


def relu():
    return LayerSpec("relu")


def tanh():
    return LayerSpec("tanh")


def layernorm(width):
    return LayerSpec("layernorm", width, width)


def flatten():
    return LayerSpec("flatten")


def reshape(*shape):
    return LayerSpec("reshape", shape=tuple(shape))


def permute(*axes):
    """Reorder per-sample axes, e.g. ``permute(1, 2, 0)`` for (C, H, W) -> (H, W, C)."""
    return LayerSpec("permute", shape=tuple(axes))


class ParameterSet:
    """Named arrays with matching gradient buffers.

    Gradients accumulate; callers zero them explicitly with ``zero_grad`` so
    that several losses can route into the same parameters.
    """

    def __init__(self, values: dict[str, np.ndarray] | None = None):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        for name, value in (values or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.values:
            raise ConfigurationError(f"duplicate parameter {name!r}")
        value = np.ascontiguousarray(value)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def names(self) -> list[str]:
        return list(self.values)

    @property
    def dtype(self):
        for v in self.values.values():
            return v.dtype
        return np.dtype(np.float32)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: v.copy() for k, v in self.values.items()})

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet({k: v.astype(dtype) for k, v in self.values.items()})

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        """Overwrite values in place from a name -> array mapping."""
        for name, arr in values.items():
            if name not in self.values:
                raise ConfigurationError(f"unknown parameter {name!r}")
            if self.values[name].shape != arr.shape:
                raise ConfigurationError(
                    f"{name}: shape {arr.shape} does not match {self.values[name].shape}")
            self.values[name][...] = arr

    def num_elements(self) -> int:
        return sum(v.size for v in self.values.values())


@dataclass
class TapeRecord:
    """Everything ``backward`` needs to replay one ``forward`` call in reverse."""

    net: "Net"
    params: ParameterSet
    caches: list = field(default_factory=list)


def _orthogonal(rows, cols, rng, gain=1.0):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


class Net:
    """An ordered stack of layers with parameters named ``{prefix}.{index}.{w|b}``."""

    def __init__(self, specs: Sequence[LayerSpec], prefix: str):
        self.specs = list(specs)
        self.prefix = prefix

    def pname(self, index: int, suffix: str) -> str:
        return f"{self.prefix}.{index}.{suffix}"

    def init_params(self, rng: np.random.Generator, dtype=np.float32) -> ParameterSet:
        """Orthogonal dense weights, delta-orthogonal conv kernels, zero biases."""
        params = ParameterSet()
        relu_gain = np.sqrt(2.0)
        for i, spec in enumerate(self.specs):
            if spec.kind == "dense":
                w = _orthogonal(spec.channels_in, spec.channels_out, rng)
                params.add(self.pname(i, "w"), w.astype(dtype))
                params.add(self.pname(i, "b"), np.zeros(spec.channels_out, dtype))
            elif spec.kind in ("conv2d", "deconv2d"):
                k = spec.kernel
                if spec.kind == "conv2d":
                    w = np.zeros((spec.channels_out, spec.channels_in, k, k))
                    w[:, :, k // 2, k // 2] = _orthogonal(spec.channels_out, spec.channels_in,
                                                          rng, relu_gain)
                else:
                    w = np.zeros((spec.channels_in, spec.channels_out, k, k))
                    w[:, :, k // 2, k // 2] = _orthogonal(spec.channels_in, spec.channels_out,
                                                          rng, relu_gain)
                params.add(self.pname(i, "w"), w.astype(dtype))
                params.add(self.pname(i, "b"), np.zeros(spec.channels_out, dtype))
            elif spec.kind == "layernorm":
                params.add(self.pname(i, "w"), np.ones(spec.channels_out, dtype))
                params.add(self.pname(i, "b"), np.zeros(spec.channels_out, dtype))
        return params

    def output_shape(self, input_shape: tuple) -> tuple:
        """Per-sample output shape for a per-sample input shape (no batch axis)."""
        shape = tuple(input_shape)
        for spec in self.specs:
            shape = _layer_shape(spec, shape)
        return shape

    def spatial_trace(self, input_shape: tuple) -> list[tuple]:
        """Per-sample shape after every layer, for shape debugging."""
        shapes, shape = [], tuple(input_shape)
        for spec in self.specs:
            shape = _layer_shape(spec, shape)
            shapes.append(shape)
        return shapes


def _layer_shape(spec: LayerSpec, shape: tuple) -> tuple:
    kind = spec.kind
    if kind == "conv2d" or kind == "deconv2d":
        if len(shape) != 3 or shape[2] != spec.channels_in:
            raise ConfigurationError(
                f"{kind} expects (H, W, {spec.channels_in}) input, got {shape}")
        if kind == "conv2d":
            h = L.conv_out_size(shape[0], spec.kernel, spec.stride)
            w = L.conv_out_size(shape[1], spec.kernel, spec.stride)
            if h < 1 or w < 1:
                raise ConfigurationError(f"conv2d input {shape} too small for kernel {spec.kernel}")
        else:
            h = L.deconv_out_size(shape[0], spec.kernel, spec.stride, spec.output_padding)
            w = L.deconv_out_size(shape[1], spec.kernel, spec.stride, spec.output_padding)
        return (h, w, spec.channels_out)
    if kind == "dense" or kind == "layernorm":
        if shape != (spec.channels_in,):
            raise ConfigurationError(f"{kind} expects ({spec.channels_in},) input, got {shape}")
        return (spec.channels_out,)
    if kind == "flatten":
        return (int(np.prod(shape)),)
    if kind == "reshape":
        if int(np.prod(shape)) != int(np.prod(spec.shape)):
            raise ConfigurationError(f"cannot reshape {shape} to {spec.shape}")
        return tuple(spec.shape)
    if kind == "permute":
        if sorted(spec.shape) != list(range(len(shape))):
            raise ConfigurationError(f"permute axes {spec.shape} invalid for {shape}")
        return tuple(shape[a] for a in spec.shape)
    return shape


def _check_finite(arr, what):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in {what}")


def forward(net: Net, params: ParameterSet, x: np.ndarray, record: bool = True):
    """Evaluate ``net`` on a batch. Returns ``(output, tape)``; tape is None if not recording."""
    x = np.asarray(x)
    net.output_shape(x.shape[1:])  # raises ConfigurationError on mismatch
    tape = TapeRecord(net, params) if record else None
    h = x
    for i, spec in enumerate(net.specs):
        kind = spec.kind
        cache = None
        if kind == "conv2d":
            h, cache = L.conv2d_forward(h, params[net.pname(i, "w")], params[net.pname(i, "b")],
                                        spec.stride)
        elif kind == "deconv2d":
            h, cache = L.deconv2d_forward(h, params[net.pname(i, "w")], params[net.pname(i, "b")],
                                          spec.stride, spec.output_padding)
        elif kind == "dense":
            h, cache = L.dense_forward(h, params[net.pname(i, "w")], params[net.pname(i, "b")])
        elif kind == "relu":
            h, cache = L.relu_forward(h)
        elif kind == "tanh":
            h, cache = L.tanh_forward(h)
        elif kind == "layernorm":
            h, cache = L.layernorm_forward(h, params[net.pname(i, "w")],
                                           params[net.pname(i, "b")])
        elif kind == "flatten":
            cache = h.shape
            h = h.reshape(h.shape[0], -1)
        elif kind == "reshape":
            cache = h.shape
            h = h.reshape((h.shape[0],) + spec.shape)
        elif kind == "permute":
            h = np.ascontiguousarray(h.transpose((0,) + tuple(a + 1 for a in spec.shape)))
        if tape is not None:
            tape.caches.append(cache)
    _check_finite(h, f"output of {net.prefix}")
    return h, tape


def backward(tape: TapeRecord, output_grad: np.ndarray, param_grads: bool = True,
             input_grad: bool = True):
    """Accumulate d(output . output_grad)/d(param) into ``tape.params.grads``.

    Returns the gradient with respect to the network input (or None when
    ``input_grad`` is False). With ``param_grads=False`` parameter gradient
    buffers are left untouched, which lets a loss route through a network
    without training it.
    """
    net, params = tape.net, tape.params
    if len(tape.caches) != len(net.specs):
        raise RuntimeError("tape does not match network")
    g = output_grad
    last = len(net.specs) - 1
    first_param = next((i for i, s in enumerate(net.specs) if s.has_params), None)
    for i in range(last, -1, -1):
        spec, cache = net.specs[i], tape.caches[i]
        kind = spec.kind
        # below the first parameterised layer the input gradient is only needed if asked for
        need_dx = input_grad or (first_param is not None and i > first_param)
        if kind in ("conv2d", "deconv2d", "dense", "layernorm"):
            wname, bname = net.pname(i, "w"), net.pname(i, "b")
            if wname not in params:
                raise RuntimeError(f"parameter {wname} missing from tape parameter set")
            w = params[wname]
            if kind == "conv2d":
                dx, dw, db = L.conv2d_backward(g, cache, w, spec.stride, need_dx)
            elif kind == "deconv2d":
                dx, dw, db = L.deconv2d_backward(g, cache, w, spec.stride, need_dx)
            elif kind == "dense":
                dx, dw, db = L.dense_backward(g, cache, w, need_dx)
            else:
                dx, dw, db = L.layernorm_backward(g, cache, w)
            if param_grads:
                params.grads[wname] += dw
                params.grads[bname] += db
            g = dx
        elif kind == "relu":
            g = L.relu_backward(g, cache)
        elif kind == "tanh":
            g = L.tanh_backward(g, cache)
        elif kind in ("flatten", "reshape"):
            g = g.reshape(cache)
        elif kind == "permute":
            inverse = np.argsort((0,) + tuple(a + 1 for a in spec.shape))
            g = np.ascontiguousarray(g.transpose(inverse))
        if g is None:
            break
    if param_grads:
        for name in params.grads:
            if name.startswith(net.prefix + "."):
                _check_finite(params.grads[name], f"gradient of {name}")
    if input_grad and g is not None:
        _check_finite(g, f"input gradient of {net.prefix}")
        return g
    return None

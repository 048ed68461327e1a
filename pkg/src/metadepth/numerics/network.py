"""Encoder plus 3x3-conv/ELU/upsample regression head with skip connections."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from metadepth.errors import ConfigurationError, ShapeError, StateError
from metadepth.numerics import tensor as T
from metadepth.numerics.params import ParamVector
from metadepth.seeding import stream

ELU_ALPHA = 1.0


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative architecture.

    ``encoder_blocks`` is a sequence of ``(out_channels, stride)`` with stride
    1 or 2. The head needs one block per stride-2 encoder block so that the
    output returns to the input resolution. ``skip_connections`` maps a head
    block index to the encoder block whose output is concatenated onto that
    block's input; ``None`` pairs every head block after the first with the
    deepest encoder output at the same resolution.
    """

    input_size: tuple = (32, 32)
    encoder_blocks: tuple = ((8, 2), (16, 2))
    head_channels: tuple = (16, 8)
    skip_connections: tuple | None = None
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        object.__setattr__(self, "encoder_blocks", tuple((int(c), int(s)) for c, s in self.encoder_blocks))
        object.__setattr__(self, "head_channels", tuple(int(c) for c in self.head_channels))
        if self.skip_connections is not None:
            pairs = self.skip_connections.items() if isinstance(self.skip_connections, dict) else self.skip_connections
            object.__setattr__(self, "skip_connections", tuple(sorted((int(h), int(e)) for h, e in pairs)))

    def to_dict(self) -> dict:
        return {
            "input_size": list(self.input_size),
            "encoder_blocks": [list(b) for b in self.encoder_blocks],
            "head_channels": list(self.head_channels),
            "skip_connections": None if self.skip_connections is None else [list(p) for p in self.skip_connections],
            "in_channels": self.in_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> NetworkSpec:
        allowed = {"input_size", "encoder_blocks", "head_channels", "skip_connections", "in_channels"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigurationError(f"unknown network keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> bytes:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).digest()

    def resolved_skips(self) -> dict:
        levels = self.encoder_levels()
        n_down = levels[-1] if levels else 0
        if self.skip_connections is not None:
            return dict(self.skip_connections)
        skips = {}
        for i in range(1, len(self.head_channels)):
            level = n_down - i
            candidates = [k for k, lv in enumerate(levels) if lv == level]
            if candidates:
                skips[i] = candidates[-1]
        return skips

    def encoder_levels(self):
        levels, level = [], 0
        for _, stride in self.encoder_blocks:
            level += stride == 2
            levels.append(level)
        return levels

    def validate(self) -> None:
        H, W = self.input_size
        if not self.head_channels:
            raise ConfigurationError("head_channels must not be empty")
        if not self.encoder_blocks:
            raise ConfigurationError("encoder_blocks must not be empty")
        if any(c <= 0 for c in self.head_channels) or any(c <= 0 for c, _ in self.encoder_blocks):
            raise ConfigurationError("channel counts must be positive")
        if any(s not in (1, 2) for _, s in self.encoder_blocks):
            raise ConfigurationError("encoder strides must be 1 or 2")
        n_down = sum(s == 2 for _, s in self.encoder_blocks)
        if H <= 0 or W <= 0 or H % (2**n_down) or W % (2**n_down):
            raise ConfigurationError(f"input size {self.input_size} not divisible by 2^{n_down}")
        if len(self.head_channels) != n_down:
            raise ConfigurationError(
                f"head has {len(self.head_channels)} upsampling blocks but the encoder downsamples {n_down} times"
            )
        levels = self.encoder_levels()
        for h, e in self.resolved_skips().items():
            if not (0 < h < len(self.head_channels)) or not (0 <= e < len(self.encoder_blocks)):
                raise ConfigurationError(f"skip connection ({h}, {e}) out of range")
            if levels[e] != n_down - h:
                raise ConfigurationError(f"skip connection ({h}, {e}) joins different resolutions")


REFERENCE_SPEC = NetworkSpec(
    input_size=(256, 256),
    encoder_blocks=((64, 2), (64, 2), (128, 2), (256, 2), (512, 2)),
    head_channels=(256, 128, 64, 32, 16),
)
DESK_SPEC = NetworkSpec()


class Network:
    def __init__(self, spec: NetworkSpec):
        spec.validate()
        self.spec = spec
        self.skips = spec.resolved_skips()
        self.evaluations = 0

    def layout(self):
        """Ordered ``(name, shape)`` pairs of every trainable weight."""
        out = []
        cin = self.spec.in_channels
        enc_out = []
        for k, (c, _) in enumerate(self.spec.encoder_blocks):
            out += [(f"enc{k}.weight", (c, cin, 3, 3)), (f"enc{k}.bias", (c,))]
            enc_out.append(c)
            cin = c
        for i, c in enumerate(self.spec.head_channels):
            if i in self.skips:
                cin += enc_out[self.skips[i]]
            out += [(f"head{i}.weight", (c, cin, 3, 3)), (f"head{i}.bias", (c,))]
            cin = c
        out += [("out.weight", (1, cin, 3, 3)), ("out.bias", (1,))]
        return out

    def init_params(self, seed: int) -> ParamVector:
        rng = stream(seed, "init")
        arrays = []
        for name, shape in self.layout():
            # bias shares the fan-in bound of its layer's weight
            wshape = shape if len(shape) == 4 else arrays[-1][1].shape
            bound = 1.0 / np.sqrt(wshape[1] * wshape[2] * wshape[3])
            arrays.append((name, rng.uniform(-bound, bound, size=shape)))
        return ParamVector.from_arrays(arrays, dtype=T.get_dtype())

    def forward(self, params: ParamVector, images) -> T.Tensor:
        if params.layout != tuple(self.layout()):
            raise ShapeError("parameter layout does not match network")
        x = images if isinstance(images, T.Tensor) else T.Tensor(np.asarray(images, dtype=params.dtype))
        H, W = self.spec.input_size
        if x.data.ndim != 4 or x.shape[1:] != (self.spec.in_channels, H, W):
            raise ShapeError(f"expected images of shape (B, {self.spec.in_channels}, {H}, {W}), got {x.shape}")
        if x.data.dtype != params.dtype:
            x = T.Tensor(x.data.astype(params.dtype))
        leaf = {name: T.Tensor(arr, name=name) for name, arr in params.items()}
        feats = []
        for k, (_, stride) in enumerate(self.spec.encoder_blocks):
            x = T.elu(T.conv2d(x, leaf[f"enc{k}.weight"], leaf[f"enc{k}.bias"], stride), ELU_ALPHA)
            feats.append(x)
        for i in range(len(self.spec.head_channels)):
            if i in self.skips:
                x = T.concat([x, feats[self.skips[i]]], axis=1)
            x = T.conv2d(x, leaf[f"head{i}.weight"], leaf[f"head{i}.bias"], 1)
            x = T.upsample2x(T.elu(x, ELU_ALPHA))
        x = T.sigmoid(T.conv2d(x, leaf["out.weight"], leaf["out.bias"], 1))
        self.evaluations += 1
        return x

    def num_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layout())


def build_network(spec: NetworkSpec, seed: int):
    net = Network(spec)
    return net, net.init_params(seed)


def forward(net: Network, params: ParamVector, images) -> T.Tensor:
    return net.forward(params, images)


def l2_loss(pred, gt, valid) -> T.Tensor:
    """Mean squared error over valid pixels, averaged per image over the batch."""
    pred = pred if isinstance(pred, T.Tensor) else T.Tensor(np.asarray(pred, dtype=T.get_dtype()))
    return T.masked_mse(pred, np.asarray(gt), np.asarray(valid, dtype=bool))


def backward(net: Network, params: ParamVector, loss_node) -> ParamVector:
    """Gradient of ``loss_node`` with respect to ``params``, same layout."""
    if not isinstance(loss_node, T.Tensor) or not loss_node.requires_grad:
        raise StateError("no recorded forward pass for this loss")
    order = loss_node.backward()
    grads = params.zeros_like()
    found = False
    for node in order:
        if node.name is not None and node.grad is not None:
            grads[node.name][...] = node.grad
            found = True
    if not found:
        raise StateError("loss does not depend on any network parameter")
    T._check_finite(grads.values, "backward")
    return grads

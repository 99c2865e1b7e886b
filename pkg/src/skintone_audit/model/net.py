"""A compact numpy CNN with exact backpropagation.

The net is deliberately small and smooth (tanh activations, average
pooling) so input gradients are exact everywhere and finite-difference
checks never straddle a kink. Class index 0 is female, 1 is male.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, log_softmax

from ..errors import DegenerateData, InputShape

FEMALE, MALE = 0, 1
CLASS_NAMES = ("female", "male")

CHECKPOINT_MAGIC = b"SKTNET"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------- layers

@dataclass(frozen=True)
class Conv:
    in_channels: int
    out_channels: int
    kernel: int = 3
    pad: int = 1
    kind: str = field(default="conv", init=False)

    def param_shapes(self):
        k = self.kernel
        return {"weight": (self.out_channels, self.in_channels, k, k), "bias": (self.out_channels,)}

    def out_shape(self, shape):
        c, h, w = shape
        if c != self.in_channels:
            raise InputShape(f"conv expects {self.in_channels} channels, got {c}")
        k, p = self.kernel, self.pad
        return (self.out_channels, h + 2 * p - k + 1, w + 2 * p - k + 1)

    def forward(self, params, x):
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (self.kernel, self.kernel), axis=(2, 3))
        out = np.tensordot(win, params["weight"], axes=([1, 4, 5], [1, 2, 3]))
        out = out.transpose(0, 3, 1, 2) + params["bias"][None, :, None, None]
        return out, (xp.shape, win)

    def backward(self, params, cache, dout):
        xp_shape, win = cache
        k, p = self.kernel, self.pad
        grads = {
            "weight": np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3])),
            "bias": dout.sum(axis=(0, 2, 3)),
        }
        w = params["weight"]
        dxp = np.zeros(xp_shape)
        ho, wo = dout.shape[2], dout.shape[3]
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + ho, j:j + wo] += np.tensordot(dout, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
        if p:
            dxp = dxp[:, :, p:-p, p:-p]
        return dxp, grads


@dataclass(frozen=True)
class Tanh:
    kind: str = field(default="tanh", init=False)

    def param_shapes(self):
        return {}

    def out_shape(self, shape):
        return shape

    def forward(self, params, x):
        out = np.tanh(x)
        return out, out

    def backward(self, params, cache, dout):
        return dout * (1.0 - cache * cache), {}


@dataclass(frozen=True)
class AvgPool:
    size: int = 2
    kind: str = field(default="avgpool", init=False)

    def param_shapes(self):
        return {}

    def out_shape(self, shape):
        c, h, w = shape
        s = self.size
        if h % s or w % s:
            raise InputShape(f"pool size {s} does not divide {h}x{w}")
        return (c, h // s, w // s)

    def forward(self, params, x):
        n, c, h, w = x.shape
        s = self.size
        return x.reshape(n, c, h // s, s, w // s, s).mean(axis=(3, 5)), None

    def backward(self, params, cache, dout):
        s = self.size
        dx = np.repeat(np.repeat(dout, s, axis=2), s, axis=3) / (s * s)
        return dx, {}


@dataclass(frozen=True)
class Flatten:
    kind: str = field(default="flatten", init=False)

    def param_shapes(self):
        return {}

    def out_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, cache, dout):
        return dout.reshape(cache), {}


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    kind: str = field(default="dense", init=False)

    def param_shapes(self):
        return {"weight": (self.out_features, self.in_features), "bias": (self.out_features,)}

    def out_shape(self, shape):
        if shape != (self.in_features,):
            raise InputShape(f"dense expects ({self.in_features},), got {shape}")
        return (self.out_features,)

    def forward(self, params, x):
        return x @ params["weight"].T + params["bias"], x

    def backward(self, params, cache, dout):
        return dout @ params["weight"], {"weight": dout.T @ cache, "bias": dout.sum(axis=0)}


LAYER_KINDS = {"conv": Conv, "tanh": Tanh, "avgpool": AvgPool, "flatten": Flatten, "dense": Dense}


def layer_from_dict(d: dict):
    d = dict(d)
    cls = LAYER_KINDS[d.pop("kind")]
    return cls(**d)


def default_layers(side: int = 32, channels: int = 3) -> list:
    """Two conv/tanh/pool blocks and a dense head producing 2 logits."""
    if side % 4:
        raise ValueError("input side must be divisible by 4")
    return [
        Conv(channels, 8), Tanh(), AvgPool(2),
        Conv(8, 16), Tanh(), AvgPool(2),
        Flatten(), Dense(16 * (side // 4) ** 2, 2),
    ]


# ------------------------------------------------------------------- net

class CompactNet:
    """Layer stack plus parameters; immutable once built."""

    def __init__(self, layers: Sequence, input_shape: Sequence[int], params: list[dict] | None = None):
        self.layers = tuple(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
        if shape != (2,):
            raise InputShape(f"network must end in 2 logits, got {shape}")
        if params is None:
            params = [{k: np.zeros(s) for k, s in layer.param_shapes().items()} for layer in self.layers]
        self.params = []
        for layer, p in zip(self.layers, params):
            frozen = {}
            for name, shape in layer.param_shapes().items():
                arr = np.array(p[name], dtype=np.float64)
                if arr.shape != shape:
                    raise InputShape(f"parameter {name} needs shape {shape}, got {arr.shape}")
                arr.setflags(write=False)
                frozen[name] = arr
            self.params.append(frozen)

    @classmethod
    def initialized(cls, layers, input_shape, rng: np.random.Generator) -> "CompactNet":
        params = []
        for layer in layers:
            shapes = layer.param_shapes()
            p = {}
            if "weight" in shapes:
                wshape = shapes["weight"]
                fan_in = int(np.prod(wshape[1:]))
                p["weight"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=wshape)
                p["bias"] = np.zeros(shapes["bias"])
            params.append(p)
        return cls(layers, input_shape, params)

    def with_params(self, params) -> "CompactNet":
        return CompactNet(self.layers, self.input_shape, params)

    @property
    def parameter_count(self) -> int:
        return sum(a.size for p in self.params for a in p.values())

    def _check_batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise InputShape(f"expected input shape {self.input_shape}, got {x.shape[1:]}")
        return x

    def forward(self, x):
        """Logits for a batch ``(n, *input_shape)`` plus per-layer caches."""
        x = self._check_batch(x)
        caches = []
        for layer, p in zip(self.layers, self.params):
            x, cache = layer.forward(p, x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, dlogits):
        grads = [None] * len(self.layers)
        d = dlogits
        for i in range(len(self.layers) - 1, -1, -1):
            d, grads[i] = self.layers[i].backward(self.params[i], caches[i], d)
        return d, grads

    def logits_batch(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def logits(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.input_shape:
            raise InputShape(f"expected input shape {self.input_shape}, got {x.shape}")
        return self.logits_batch(x[None])[0]

    def predict_scores(self, x) -> np.ndarray:
        logits = self.logits_batch(x)
        return expit(logits[:, MALE] - logits[:, FEMALE])


def logits(net: CompactNet, x) -> np.ndarray:
    return net.logits(x)


def score_from_logits(logit_vec) -> float:
    """Softmax probability of the male class."""
    logit_vec = np.asarray(logit_vec, dtype=np.float64)
    return float(expit(logit_vec[MALE] - logit_vec[FEMALE]))


Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


def gradient(net: CompactNet, x, objective: Objective) -> np.ndarray:
    """Gradient of ``objective(logits(x))`` with respect to ``x``.

    ``objective`` maps a logit vector to ``(value, d value / d logits)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != net.input_shape:
        raise InputShape(f"expected input shape {net.input_shape}, got {x.shape}")
    out, caches = net.forward(x[None])
    _, dlogits = objective(out[0])
    dx, _ = net.backward(caches, np.asarray(dlogits, dtype=np.float64)[None])
    return dx[0]


def linear_objective(weights) -> Objective:
    w = np.asarray(weights, dtype=np.float64)
    return lambda z: (float(w @ z), w)


# -------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    side: int = 32
    channels: int = 3
    learning_rate: float = 0.01
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        for name in ("side", "channels", "epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


def cross_entropy(net: CompactNet, inputs, labels) -> float:
    z = net.logits_batch(inputs)
    return float(-log_softmax(z, axis=1)[np.arange(len(labels)), labels].mean())


def train(config: TrainConfig, inputs, labels, layers=None) -> CompactNet:
    """Fit a CompactNet with Adam on softmax cross-entropy.

    Deterministic for a fixed ``config.seed``. The returned parameters are
    the best full-data loss seen over the initial point and every epoch,
    so the final loss never exceeds the starting loss.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(inputs) != len(labels):
        raise ValueError("inputs and labels differ in length")
    if set(np.unique(labels).tolist()) != {FEMALE, MALE}:
        raise DegenerateData("training data must contain both classes")
    if layers is None:
        if inputs.ndim == 2:
            layers = [Dense(inputs.shape[1], 2)]
        else:
            layers = default_layers(config.side, config.channels)
    rng = np.random.default_rng(config.seed)
    net = CompactNet.initialized(layers, inputs.shape[1:], rng)
    params = [{k: v.copy() for k, v in p.items()} for p in net.params]
    m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
    v = [{k: np.zeros_like(a) for k, a in p.items()} for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8

    best_loss = cross_entropy(net, inputs, labels)
    best = net
    step = 0
    n = len(inputs)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            cur = net.with_params(params)
            z, caches = cur.forward(inputs[idx])
            prob = np.exp(log_softmax(z, axis=1))
            prob[np.arange(len(idx)), labels[idx]] -= 1.0
            _, grads = cur.backward(caches, prob / len(idx))
            step += 1
            for p, g, mi, vi in zip(params, grads, m, v):
                for k in p:
                    mi[k] = b1 * mi[k] + (1 - b1) * g[k]
                    vi[k] = b2 * vi[k] + (1 - b2) * g[k] ** 2
                    mhat = mi[k] / (1 - b1 ** step)
                    vhat = vi[k] / (1 - b2 ** step)
                    p[k] = p[k] - config.learning_rate * mhat / (np.sqrt(vhat) + eps)
        cur = net.with_params(params)
        loss = cross_entropy(cur, inputs, labels)
        if loss < best_loss:
            best_loss, best = loss, cur
    return best


def accuracy(net: CompactNet, inputs, labels) -> float:
    pred = (net.predict_scores(inputs) > 0.5).astype(np.int64)
    return float(np.mean(pred == np.asarray(labels)))


# ------------------------------------------------------------ checkpoint

def save_checkpoint(net: CompactNet, path) -> None:
    """Write magic, version, a JSON header and raw little-endian float64 blobs."""
    header = {
        "input_shape": list(net.input_shape),
        "layers": [asdict(layer) for layer in net.layers],
        "params": [{k: list(a.shape) for k, a in sorted(p.items())} for p in net.params],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
    buf.write(blob)
    for p in net.params:
        for k in sorted(p):
            buf.write(np.ascontiguousarray(p[k], dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> CompactNet:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path} is not a CompactNet checkpoint")
    off = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", data, off)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off += 8
    header = json.loads(data[off:off + hlen])
    off += hlen
    layers = [layer_from_dict(d) for d in header["layers"]]
    params = []
    for shapes in header["params"]:
        p = {}
        for k in sorted(shapes):
            shape = tuple(shapes[k])
            count = int(np.prod(shape))
            p[k] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
            off += 8 * count
        params.append(p)
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return CompactNet(layers, header["input_shape"], params)

"""From-scratch mini neural-network engine.

Layers: conv2d (same padding, stride 1), maxpool 2x2, dropout (inverted),
dense, relu, softmax, flatten. Weighted categorical cross-entropy, Adam
with bias correction, Glorot uniform initialization, and a finite-difference
gradient checker.

Images and activations are NHWC float arrays. Training runs in float32;
the gradient checker clones the network into float64.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .seeds import rng_for

CHECKPOINT_FORMAT = "guidedlabel-net-v1"


class NNError(Exception):
    pass


class ShapeError(NNError):
    """Input/parameter shape incompatible with a layer."""


class PresetError(NNError):
    """Unknown architecture preset name."""


class CheckpointError(NNError):
    """Unreadable or wrong-version checkpoint file."""


# ---------------------------------------------------------------------------
# Layer specifications

LAYER_KINDS = ("conv2d", "maxpool2x2", "dropout", "dense", "relu", "softmax", "flatten")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel_count: int = 0
    kernel_size: int = 0
    probability: float = 0.0
    output_units: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d" and (self.kernel_count < 1 or self.kernel_size < 1):
            raise ValueError("conv2d needs kernel_count >= 1 and kernel_size >= 1")
        if self.kind == "dropout" and not 0.0 <= self.probability < 1.0:
            raise ValueError("dropout probability must be in [0, 1)")
        if self.kind == "dense" and self.output_units < 1:
            raise ValueError("dense needs output_units >= 1")


def conv2d(kernel_count: int, kernel_size: int) -> LayerSpec:
    return LayerSpec("conv2d", kernel_count=kernel_count, kernel_size=kernel_size)


def maxpool2x2() -> LayerSpec:
    return LayerSpec("maxpool2x2")


def dropout(probability: float) -> LayerSpec:
    return LayerSpec("dropout", probability=probability)


def dense(output_units: int) -> LayerSpec:
    return LayerSpec("dense", output_units=output_units)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def softmax() -> LayerSpec:
    return LayerSpec("softmax")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


_PRESETS = {
    # 7 parameterized layers; relu after every conv/dense except the final
    # softmax layer, flatten before the first dense.
    "mnist_cnn7": [
        conv2d(64, 3), relu(),
        conv2d(128, 3), relu(),
        maxpool2x2(),
        dropout(0.25),
        flatten(),
        dense(128), relu(),
        dropout(0.5),
        dense(10), softmax(),
    ],
    # 11 parameterized layers.
    "cifar_cnn11": [
        conv2d(32, 3), relu(),
        conv2d(32, 3), relu(),
        maxpool2x2(),
        dropout(0.25),
        conv2d(64, 3), relu(),
        conv2d(64, 3), relu(),
        maxpool2x2(),
        dropout(0.25),
        flatten(),
        dense(512), relu(),
        dropout(0.5),
        dense(10), softmax(),
    ],
    # Small desk-scale baseline.
    "mlp": [
        flatten(),
        dense(128), relu(),
        dense(10), softmax(),
    ],
}


def preset(name: str) -> list[LayerSpec]:
    """Return the layer list for a named architecture preset."""
    if name not in _PRESETS:
        raise PresetError(
            f"unknown preset {name!r}; valid presets: {', '.join(sorted(_PRESETS))}"
        )
    return list(_PRESETS[name])


# ---------------------------------------------------------------------------
# Initialization

def glorot_init(fan_in: int, fan_out: int, rng: np.random.Generator,
                shape=None, dtype=np.float32) -> np.ndarray:
    """Glorot/normalized uniform init: U(-b, b) with b = sqrt(6/(fan_in+fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan_in and fan_out must be >= 1")
    b = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-b, b, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# Layer implementations

class _Layer:
    """One instantiated layer. Parameters live in ``params`` (name -> array);
    ``backward`` fills ``grads`` with matching shapes and returns the input
    gradient."""

    def __init__(self, spec: LayerSpec, index: int):
        self.spec = spec
        self.index = index
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    @property
    def name(self) -> str:
        return f"layer{self.index}:{self.spec.kind}"

    def forward(self, x: np.ndarray, train: bool, rng) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class _Conv2D(_Layer):
    """Same-padded stride-1 convolution via an im2col matmul."""

    def __init__(self, spec, index, in_channels, rng, dtype):
        super().__init__(spec, index)
        k, cout = spec.kernel_size, spec.kernel_count
        fan_in = k * k * in_channels
        fan_out = k * k * cout
        self.params["W"] = glorot_init(fan_in, fan_out, rng,
                                       shape=(k, k, in_channels, cout), dtype=dtype)
        self.params["b"] = np.zeros(cout, dtype=dtype)
        self.in_channels = in_channels

    def _im2col(self, x):
        k = self.spec.kernel_size
        lo = (k - 1) // 2
        hi = k - 1 - lo
        xp = np.pad(x, ((0, 0), (lo, hi), (lo, hi), (0, 0)))
        # (N, H, W, C, k, k) -> (N, H, W, k, k, C)
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
        return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))

    def forward(self, x, train, rng):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(
                f"{self.name}: expected NHWC input with {self.in_channels} "
                f"channels, got shape {x.shape}")
        n, h, w, _ = x.shape
        k, cout = self.spec.kernel_size, self.spec.kernel_count
        cols = self._im2col(x).reshape(n * h * w, k * k * self.in_channels)
        wmat = self.params["W"].reshape(k * k * self.in_channels, cout)
        out = cols @ wmat + self.params["b"]
        self._cache = (cols, x.shape)
        return out.reshape(n, h, w, cout)

    def backward(self, dout):
        cols, xshape = self._cache
        n, h, w, cin = xshape
        k, cout = self.spec.kernel_size, self.spec.kernel_count
        dflat = dout.reshape(n * h * w, cout)
        self.grads["W"] = (cols.T @ dflat).reshape(self.params["W"].shape)
        self.grads["b"] = dflat.sum(axis=0)
        dcols = (dflat @ self.params["W"].reshape(-1, cout).T)
        dcols = dcols.reshape(n, h, w, k, k, cin)
        lo = (k - 1) // 2
        hi = k - 1 - lo
        dxp = np.zeros((n, h + k - 1, w + k - 1, cin), dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + h, j:j + w, :] += dcols[:, :, :, i, j, :]
        return dxp[:, lo:lo + h, lo:lo + w, :]


class _MaxPool2x2(_Layer):
    """2x2 max pooling, stride 2; odd trailing rows/cols are dropped.
    Ties route the gradient to the first maximal element in row-major order."""

    def forward(self, x, train, rng):
        if x.ndim != 4:
            raise ShapeError(f"{self.name}: expected NHWC input, got shape {x.shape}")
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        if h2 == 0 or w2 == 0:
            raise ShapeError(f"{self.name}: input {x.shape} too small to pool")
        xc = x[:, :h2 * 2, :w2 * 2, :]
        win = xc.reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4)
        win = win.reshape(n, h2, w2, c, 4)
        idx = np.argmax(win, axis=-1)
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        self._cache = (idx, x.shape)
        return out

    def backward(self, dout):
        idx, xshape = self._cache
        n, h, w, c = xshape
        h2, w2 = h // 2, w // 2
        dwin = np.zeros((n, h2, w2, c, 4), dtype=dout.dtype)
        np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
        dx = np.zeros(xshape, dtype=dout.dtype)
        dxc = dwin.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        dx[:, :h2 * 2, :w2 * 2, :] = dxc.reshape(n, h2 * 2, w2 * 2, c)
        return dx


class _Dropout(_Layer):
    """Inverted dropout: scales kept units by 1/(1-p) at train time so the
    eval path is an untouched identity."""

    def forward(self, x, train, rng):
        p = self.spec.probability
        if not train or p == 0.0:
            self._cache = None
            return x
        if rng is None:
            raise NNError(f"{self.name}: train-mode forward needs an rng")
        mask = (rng.random(x.shape) >= p).astype(x.dtype)
        self._cache = mask / (1.0 - p)
        return x * self._cache

    def backward(self, dout):
        if self._cache is None:
            return dout
        return dout * self._cache


class _Dense(_Layer):
    def __init__(self, spec, index, in_features, rng, dtype):
        super().__init__(spec, index)
        self.in_features = in_features
        self.params["W"] = glorot_init(in_features, spec.output_units, rng, dtype=dtype)
        self.params["b"] = np.zeros(spec.output_units, dtype=dtype)

    def forward(self, x, train, rng):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"{self.name}: expected (N, {self.in_features}) input, got shape {x.shape}")
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        x = self._cache
        self.grads["W"] = x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T


class _ReLU(_Layer):
    def forward(self, x, train, rng):
        self._cache = x > 0
        return x * self._cache

    def backward(self, dout):
        return dout * self._cache


class _Softmax(_Layer):
    """Row-wise softmax. The loss gradient handed to ``Network.backward`` is
    taken with respect to the pre-softmax logits, so backward here is a
    passthrough."""

    def forward(self, x, train, rng):
        if x.ndim != 2:
            raise ShapeError(f"{self.name}: expected 2-d logits, got shape {x.shape}")
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def backward(self, dout):
        return dout


class _Flatten(_Layer):
    def forward(self, x, train, rng):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._cache)


# ---------------------------------------------------------------------------
# Network

@dataclass
class AdamConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must be in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


class Network:
    """An instantiated layer stack with parameters and Adam state.

    Construct with :func:`build_network`. Immutable during eval-mode
    inference; training (``adam_step``) is single-writer.
    """

    def __init__(self, specs: list[LayerSpec], input_shape: tuple, seed: int,
                 dtype=np.float32):
        if not specs or specs[-1].kind != "softmax":
            raise ValueError("final layer must be softmax")
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.layers: list[_Layer] = []
        self.adam_m: dict[tuple[int, str], np.ndarray] = {}
        self.adam_v: dict[tuple[int, str], np.ndarray] = {}
        self.adam_t = 0
        self._forward_ran = False

        shape = tuple(input_shape)  # per-sample shape, no batch dim
        for i, spec in enumerate(specs):
            rng = rng_for(seed, "init", i)
            if spec.kind == "conv2d":
                if len(shape) != 3:
                    raise ShapeError(f"layer{i}:conv2d needs HWC input, have {shape}")
                layer = _Conv2D(spec, i, shape[2], rng, self.dtype)
                shape = (shape[0], shape[1], spec.kernel_count)
            elif spec.kind == "maxpool2x2":
                if len(shape) != 3:
                    raise ShapeError(f"layer{i}:maxpool2x2 needs HWC input, have {shape}")
                layer = _MaxPool2x2(spec, i)
                shape = (shape[0] // 2, shape[1] // 2, shape[2])
            elif spec.kind == "dropout":
                layer = _Dropout(spec, i)
            elif spec.kind == "dense":
                if len(shape) != 1:
                    raise ShapeError(
                        f"layer{i}:dense needs flat input, have {shape} (insert flatten)")
                layer = _Dense(spec, i, shape[0], rng, self.dtype)
                shape = (spec.output_units,)
            elif spec.kind == "relu":
                layer = _ReLU(spec, i)
            elif spec.kind == "softmax":
                layer = _Softmax(spec, i)
            elif spec.kind == "flatten":
                layer = _Flatten(spec, i)
                shape = (int(np.prod(shape)),)
            else:  # pragma: no cover - LayerSpec validates kinds
                raise ValueError(spec.kind)
            self.layers.append(layer)
        self.output_units = shape[0]

    # -- inference / training ------------------------------------------------

    def forward(self, batch: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Run the stack; returns class probabilities, one row per sample."""
        x = np.asarray(batch, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(
                f"network expects per-sample shape {self.input_shape}, got {x.shape[1:]}")
        for layer in self.layers:
            x = layer.forward(x, train, rng)
        self._forward_ran = True
        return x

    def backward(self, dlogits: np.ndarray) -> dict[tuple[int, str], np.ndarray]:
        """Backprop a loss gradient w.r.t. the pre-softmax logits.

        Requires a preceding forward on the same batch (caches are reused,
        including dropout masks). Returns {(layer_index, param_name): grad}.
        """
        if not self._forward_ran:
            raise NNError("backward called without a preceding forward")
        d = np.asarray(dlogits, dtype=self.dtype)
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return {(l.index, name): g for l in self.layers for name, g in l.grads.items()}

    def param_items(self):
        for layer in self.layers:
            for name, arr in layer.params.items():
                yield (layer.index, name), arr

    def num_params(self) -> int:
        return sum(int(a.size) for _, a in self.param_items())

    def astype(self, dtype) -> "Network":
        """Deep copy with all parameters and Adam state cast to ``dtype``."""
        clone = Network(self.specs, self.input_shape, self.seed, dtype=dtype)
        for key, arr in self.param_items():
            clone.layers[key[0]].params[key[1]] = arr.astype(dtype)
        for key, m in self.adam_m.items():
            clone.adam_m[key] = m.astype(dtype)
        for key, v in self.adam_v.items():
            clone.adam_v[key] = v.astype(dtype)
        clone.adam_t = self.adam_t
        return clone

    def copy(self) -> "Network":
        return self.astype(self.dtype)


def build_network(specs: list[LayerSpec], input_shape, seed: int,
                  dtype=np.float32) -> Network:
    """Instantiate and Glorot-initialize a network for a per-sample input shape."""
    return Network(specs, input_shape, seed, dtype=dtype)


# ---------------------------------------------------------------------------
# Loss

def weighted_cross_entropy(probs: np.ndarray, targets: np.ndarray,
                           class_weights: np.ndarray):
    """Class-weighted categorical cross-entropy.

    loss = mean_i weight[target_i] * (-ln probs[i, target_i]); also returns
    the gradient with respect to the pre-softmax logits,
    weight[target_i] * (probs_i - onehot_i) / N.
    """
    probs = np.asarray(probs)
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(class_weights, dtype=probs.dtype)
    n, c = probs.shape
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= c:
        raise IndexError(f"target index out of range for {c} classes")
    w = weights[targets]
    p_target = np.clip(probs[np.arange(n), targets], 1e-12, None)
    loss = float(np.mean(w * -np.log(p_target)))
    dlogits = probs.copy()
    dlogits[np.arange(n), targets] -= 1.0
    dlogits *= (w / n)[:, None]
    return loss, dlogits


# ---------------------------------------------------------------------------
# Optimizer

def adam_step(net: Network, grads: dict, cfg: AdamConfig) -> None:
    """One in-place Adam update with bias correction; bumps the step counter."""
    net.adam_t += 1
    t = net.adam_t
    for key, param in net.param_items():
        g = grads[key]
        if g.shape != param.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {param.shape} at {key}")
        m = net.adam_m.get(key)
        v = net.adam_v.get(key)
        if m is None:
            m = np.zeros_like(param)
            v = np.zeros_like(param)
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        net.adam_m[key] = m
        net.adam_v[key] = v
        mhat = m / (1 - cfg.beta1 ** t)
        vhat = v / (1 - cfg.beta2 ** t)
        param -= (cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.epsilon)).astype(param.dtype)


# ---------------------------------------------------------------------------
# Gradient checking

def gradient_check(net: Network, batch, targets, class_weights,
                   tolerance: float = 1e-4, h: float = 1e-5) -> dict:
    """Compare analytic gradients against central finite differences.

    Runs on a float64 clone in eval mode. Returns a report with per-layer
    max relative error and a list of flagged parameters.
    """
    net64 = net.astype(np.float64)
    batch = np.asarray(batch, dtype=np.float64)
    weights = np.asarray(class_weights, dtype=np.float64)

    probs = net64.forward(batch, train=False)
    _, dlogits = weighted_cross_entropy(probs, targets, weights)
    analytic = net64.backward(dlogits)

    def loss_at() -> float:
        p = net64.forward(batch, train=False)
        return weighted_cross_entropy(p, targets, weights)[0]

    per_layer: dict[str, float] = {}
    flagged = []
    for key, param in net64.param_items():
        g_an = analytic[key]
        flat = param.reshape(-1)
        g_fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_at()
            flat[i] = orig - h
            lm = loss_at()
            flat[i] = orig
            g_fd[i] = (lp - lm) / (2 * h)
        g_fd = g_fd.reshape(param.shape)
        denom = np.maximum(np.maximum(np.abs(g_an), np.abs(g_fd)), 1e-8)
        rel = np.abs(g_an - g_fd) / denom
        layer_name = net64.layers[key[0]].name
        worst = float(rel.max())
        per_layer[layer_name] = max(per_layer.get(layer_name, 0.0), worst)
        if worst > tolerance:
            flagged.append((layer_name, key[1], worst))
    return {
        "per_layer": per_layer,
        "max_relative_error": max(per_layer.values()) if per_layer else 0.0,
        "flagged": flagged,
        "tolerance": tolerance,
        "passed": not flagged,
    }


# ---------------------------------------------------------------------------
# Checkpointing

def save_network(net: Network, path) -> None:
    """Write a self-describing versioned checkpoint (specs, params, Adam state)."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "input_shape": list(net.input_shape),
        "seed": net.seed,
        "dtype": net.dtype.name,
        "adam_t": net.adam_t,
        "specs": [vars(s) | {"kind": s.kind} for s in net.specs],
    }
    arrays = {}
    for (idx, name), arr in net.param_items():
        arrays[f"param_{idx}_{name}"] = arr
    for (idx, name), arr in net.adam_m.items():
        arrays[f"adam_m_{idx}_{name}"] = arr
    for (idx, name), arr in net.adam_v.items():
        arrays[f"adam_v_{idx}_{name}"] = arr
    buf = io.BytesIO()
    np.savez(buf, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
             **arrays)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_network(path) -> Network:
    try:
        with np.load(path) as z:
            header = json.loads(bytes(z["header"].tobytes()).decode())
            arrays = {k: z[k] for k in z.files if k != "header"}
    except (OSError, ValueError, KeyError) as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"checkpoint format {header.get('format')!r} != {CHECKPOINT_FORMAT!r}")
    specs = [LayerSpec(**{k: v for k, v in s.items()}) for s in header["specs"]]
    net = Network(specs, tuple(header["input_shape"]), header["seed"],
                  dtype=np.dtype(header["dtype"]))
    net.adam_t = header["adam_t"]
    for name, arr in arrays.items():
        prefix, idx, pname = name.rsplit("_", 2)
        idx = int(idx)
        if prefix == "param":
            net.layers[idx].params[pname] = arr
        elif prefix == "adam_m":
            net.adam_m[(idx, pname)] = arr
        elif prefix == "adam_v":
            net.adam_v[(idx, pname)] = arr
    return net

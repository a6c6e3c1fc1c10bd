"""Network specifications, parameter containers, and forward passes.

A :class:`NetworkSpec` is a validated, immutable description of a feedforward
architecture (dense / conv2d / activation / flatten / dropout layers).  A
:class:`ParameterSet` holds one concrete weight assignment keyed by layer
index.  Forward passes come in two flavours: plain numpy (`mlp_forward`,
`conv_forward`) for prediction, and a tape-graph builder used by the training
code in `vi`, `hmc` and `evidence`.

Classification heads end in a softmax layer.  The plain forward returns class
probabilities; the graph builder stops at the logits so losses can use a fused
stable log-softmax.  Dropout layers are inert here (identity); they only act
in `vi.dropout_forward`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape as tp

__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "ParameterSet",
    "NetworkSpecError",
    "activation",
    "softmax",
    "mlp_forward",
    "conv_forward",
    "init_params",
    "build_forward_graph",
    "spec_from_text",
    "spec_to_text",
    "softplus_inv",
]

_ACTIVATIONS = ("identity", "sigmoid", "tanh", "relu", "leaky_relu", "softmax")


class NetworkSpecError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    fan_in: int = 0
    fan_out: int = 0
    bias: bool = True
    channels_in: int = 0
    channels_out: int = 0
    kernel: tuple[int, int] = (0, 0)
    stride: int = 1
    act: str = "identity"
    alpha: float = 0.01
    rate: float = 0.0

    @staticmethod
    def dense(fan_in: int, fan_out: int, bias: bool = True) -> "LayerSpec":
        return LayerSpec(kind="dense", fan_in=fan_in, fan_out=fan_out, bias=bias)

    @staticmethod
    def conv2d(channels_in: int, channels_out: int, kernel=(5, 5), stride: int = 1,
               bias: bool = False) -> "LayerSpec":
        return LayerSpec(kind="conv2d", channels_in=channels_in, channels_out=channels_out,
                         kernel=tuple(kernel), stride=stride, bias=bias)

    @staticmethod
    def activation(act: str, alpha: float = 0.01) -> "LayerSpec":
        if act not in _ACTIVATIONS:
            raise NetworkSpecError(f"unknown activation {act!r}; choose from {_ACTIVATIONS}")
        return LayerSpec(kind="activation", act=act, alpha=alpha)

    @staticmethod
    def flatten() -> "LayerSpec":
        return LayerSpec(kind="flatten")

    @staticmethod
    def dropout(rate: float) -> "LayerSpec":
        if not 0.0 <= rate < 1.0:
            raise NetworkSpecError(f"dropout rate must be in [0, 1), got {rate}")
        return LayerSpec(kind="dropout", rate=rate)

    def has_params(self) -> bool:
        return self.kind in ("dense", "conv2d")


@dataclass(frozen=True)
class NetworkSpec:
    """Immutable architecture description.

    input_shape is (d,) for flat inputs or (C, H, W) for images.  task is
    "regression" (identity head) or "classification" (softmax head).
    """

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]
    task: str = "regression"

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise NetworkSpecError(f"unknown task {self.task!r}")
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        shapes = self._trace_shapes()
        object.__setattr__(self, "_shapes", shapes)
        if self.task == "classification":
            last = self.layers[-1] if self.layers else None
            if last is None or last.kind != "activation" or last.act != "softmax":
                raise NetworkSpecError("classification specs must end with a softmax layer")
            if len(shapes[-1]) != 1:
                raise NetworkSpecError("softmax head needs a flat (n_classes,) output")
        else:
            for l in self.layers:
                if l.kind == "activation" and l.act == "softmax":
                    raise NetworkSpecError("softmax layers are only valid as a classification head")

    def _trace_shapes(self) -> tuple[tuple[int, ...], ...]:
        """Per-layer output shapes (sample-wise, no batch dim); validates wiring."""
        shape = self.input_shape
        out = [shape]
        for i, l in enumerate(self.layers):
            if l.kind == "dense":
                if len(shape) != 1:
                    raise NetworkSpecError(f"layer {i} (dense): needs flat input, have {shape}; add flatten()")
                if shape[0] != l.fan_in:
                    raise NetworkSpecError(f"layer {i} (dense): fan_in {l.fan_in} != incoming {shape[0]}")
                shape = (l.fan_out,)
            elif l.kind == "conv2d":
                if len(shape) != 3:
                    raise NetworkSpecError(f"layer {i} (conv2d): needs (C,H,W) input, have {shape}")
                c, h, w = shape
                if c != l.channels_in:
                    raise NetworkSpecError(f"layer {i} (conv2d): channels_in {l.channels_in} != incoming {c}")
                kh, kw = l.kernel
                if kh > h or kw > w:
                    raise NetworkSpecError(f"layer {i} (conv2d): kernel {kh}x{kw} exceeds input {h}x{w}")
                shape = (l.channels_out, (h - kh) // l.stride + 1, (w - kw) // l.stride + 1)
            elif l.kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif l.kind in ("activation", "dropout"):
                pass
            else:
                raise NetworkSpecError(f"layer {i}: unknown kind {l.kind!r}")
            out.append(shape)
        return tuple(out)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self._shapes[-1]

    def layer_input_shape(self, i: int) -> tuple[int, ...]:
        return self._shapes[i]

    @property
    def param_layers(self) -> tuple[int, ...]:
        return tuple(i for i, l in enumerate(self.layers) if l.has_params())

    def param_shapes(self) -> dict[int, tuple]:
        """{layer index: (weight shape, bias shape or None)}."""
        out = {}
        for i in self.param_layers:
            l = self.layers[i]
            if l.kind == "dense":
                out[i] = ((l.fan_in, l.fan_out), (l.fan_out,) if l.bias else None)
            else:
                out[i] = ((l.channels_out, l.channels_in) + l.kernel,
                          (l.channels_out,) if l.bias else None)
        return out


@dataclass
class ParameterSet:
    """Concrete weights/biases for a NetworkSpec, keyed by layer index."""

    weights: dict[int, np.ndarray]
    biases: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights.values()) + sum(b.size for b in self.biases.values())

    def names(self):
        """Stable flattening order: per layer, weight then bias."""
        for i in sorted(self.weights):
            yield f"W{i}", self.weights[i]
            if i in self.biases:
                yield f"b{i}", self.biases[i]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.names()]) if self.n_params else np.zeros(0)

    def from_vector(self, vec: np.ndarray) -> "ParameterSet":
        """New ParameterSet with this one's shapes and vec's values."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_params:
            raise ValueError(f"vector has {vec.size} entries, need {self.n_params}")
        w, b, k = {}, {}, 0
        for i in sorted(self.weights):
            s = self.weights[i].size
            w[i] = vec[k : k + s].reshape(self.weights[i].shape).copy()
            k += s
            if i in self.biases:
                s = self.biases[i].size
                b[i] = vec[k : k + s].reshape(self.biases[i].shape).copy()
                k += s
        return ParameterSet(w, b)

    def map(self, fn) -> "ParameterSet":
        return ParameterSet({i: fn(w) for i, w in self.weights.items()},
                            {i: fn(b) for i, b in self.biases.items()})

    def copy(self) -> "ParameterSet":
        return self.map(np.copy)


def init_params(spec: NetworkSpec, rng: np.random.Generator, scale: str = "fan_in") -> ParameterSet:
    """Random init.  scale="fan_in" gives W ~ N(0, 1/fan_in); biases zero."""
    w, b = {}, {}
    for i, (ws, bs) in spec.param_shapes().items():
        fan_in = ws[0] if spec.layers[i].kind == "dense" else int(np.prod(ws[1:]))
        sd = 1.0 / np.sqrt(fan_in) if scale == "fan_in" else float(scale)
        w[i] = rng.normal(0.0, sd, size=ws)
        if bs is not None:
            b[i] = np.zeros(bs)
    return ParameterSet(w, b)


def softplus_inv(y: float) -> float:
    """Inverse of ln(1+e^x): x = y + log(1 - e^{-y})."""
    y = float(y)
    if y <= 0:
        raise ValueError("softplus is positive; cannot invert a non-positive value")
    return y + np.log1p(-np.exp(-y))


# ---------------------------------------------------------------------------
# numpy forwards

def activation(kind: str, x: np.ndarray, alpha: float = 0.01) -> np.ndarray:
    if kind == "identity":
        return x
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "leaky_relu":
        return np.where(x > 0.0, x, alpha * x)
    if kind == "softmax":
        return softmax(x)
    raise NetworkSpecError(f"unknown activation {kind!r}")


def softmax(f: np.ndarray) -> np.ndarray:
    """Row-wise softmax exp(f_i - max) / sum_j exp(f_j - max)."""
    f = np.asarray(f, dtype=np.float64)
    z = np.exp(f - f.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _forward(spec: NetworkSpec, params: ParameterSet, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    expect = spec.input_shape
    if X.shape[1:] != expect:
        if X.ndim == 2 and len(expect) == 3 and X.shape[1] == int(np.prod(expect)):
            X = X.reshape((X.shape[0],) + expect)
        else:
            raise NetworkSpecError(f"input shape {X.shape[1:]} does not match spec {expect}")
    h = X
    for i, l in enumerate(spec.layers):
        if l.kind == "dense":
            h = h @ params.weights[i]
            if l.bias:
                h = h + params.biases[i]
        elif l.kind == "conv2d":
            h = tp.conv2d(h, params.weights[i], stride=l.stride)
            if l.bias:
                h = h + params.biases[i][None, :, None, None]
        elif l.kind == "flatten":
            h = h.reshape(h.shape[0], -1)
        elif l.kind == "activation":
            h = activation(l.act, h, l.alpha)
        # dropout: identity in the plain forward
    return h


def mlp_forward(spec: NetworkSpec, params: ParameterSet, X: np.ndarray) -> np.ndarray:
    """Forward pass; rows of X are samples.  Classification returns probabilities."""
    return _forward(spec, params, X)


def conv_forward(spec: NetworkSpec, params: ParameterSet, X: np.ndarray) -> np.ndarray:
    """Forward pass for specs containing at least one conv2d layer."""
    if not any(l.kind == "conv2d" for l in spec.layers):
        raise NetworkSpecError("conv_forward needs a spec with a conv2d layer; use mlp_forward")
    return _forward(spec, params, X)


# ---------------------------------------------------------------------------
# tape-graph builder

def build_forward_graph(t: tp.Tape, spec: NetworkSpec, x: tp.Ref,
                        param_refs: dict[str, tp.Ref],
                        mask_refs: dict[int, tp.Ref] | None = None) -> tp.Ref:
    """Wire spec's layers onto tape t from input ref x; returns the head ref.

    param_refs maps the names from ParameterSet.names() ("W0", "b0", ...) to
    refs (leaves or composed expressions).  For classification the returned
    ref is the logits (pre-softmax).  mask_refs, if given, multiply the input
    of the keyed dense layer elementwise (dropout masks, shape (1, fan_in)).
    """
    h = x
    for i, l in enumerate(spec.layers):
        if l.kind == "dense":
            if mask_refs and i in mask_refs:
                h = h * mask_refs[i]
            h = tp.matmul(h, param_refs[f"W{i}"])
            if l.bias:
                h = h + param_refs[f"b{i}"]
        elif l.kind == "conv2d":
            h = tp.conv2d(h, param_refs[f"W{i}"], stride=l.stride)
            if l.bias:
                h = h + tp.reshape(param_refs[f"b{i}"], (1, l.channels_out, 1, 1))
        elif l.kind == "flatten":
            flat = int(np.prod(spec.layer_input_shape(i)))
            h = tp.reshape(h, (-1, flat))
        elif l.kind == "activation":
            if l.act == "softmax":
                break  # stop at logits; losses fuse a stable log-softmax
            if l.act == "relu":
                h = tp.relu(h)
            elif l.act == "tanh":
                h = tp.tanh(h)
            elif l.act == "sigmoid":
                h = tp.sigmoid(h)
            elif l.act == "leaky_relu":
                h = tp.maximum(h, h * l.alpha)
            # identity: nothing
    return h


# ---------------------------------------------------------------------------
# plain-text spec blocks (config files / saved runs)

def spec_to_text(spec: NetworkSpec) -> str:
    parts = []
    for l in spec.layers:
        if l.kind == "dense":
            parts.append(f"dense:{l.fan_out}" + ("" if l.bias else ":nobias"))
        elif l.kind == "conv2d":
            s = f"conv:{l.channels_out}@{l.kernel[0]}x{l.kernel[1]}"
            if l.stride != 1:
                s += f":s{l.stride}"
            parts.append(s)
        elif l.kind == "flatten":
            parts.append("flatten")
        elif l.kind == "dropout":
            parts.append(f"dropout:{l.rate:g}")
        elif l.kind == "activation":
            parts.append(f"leaky_relu:{l.alpha:g}" if l.act == "leaky_relu" else l.act)
    shape = "x".join(str(s) for s in spec.input_shape)
    return f"input = {shape}\ntask = {spec.task}\nlayers = {' '.join(parts)}\n"


def spec_from_text(text: str) -> NetworkSpec:
    """Parse the block written by spec_to_text (key = value lines)."""
    kv = {}
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        if "=" not in ln:
            raise NetworkSpecError(f"bad spec line (need key = value): {ln!r}")
        k, v = ln.split("=", 1)
        kv[k.strip()] = v.strip()
    for need in ("input", "task", "layers"):
        if need not in kv:
            raise NetworkSpecError(f"spec block missing {need!r}")
    input_shape = tuple(int(s) for s in kv["input"].split("x"))
    return NetworkSpec(parse_layers(kv["layers"], input_shape), input_shape, kv["task"])


def parse_layers(text: str, input_shape: tuple[int, ...]) -> tuple[LayerSpec, ...]:
    """Parse a compact layer string, e.g. "dense:50 relu dense:1" or
    "conv:8@5x5 relu conv:16@5x5:s2 relu flatten dense:64 relu dense:10 softmax".
    Dense fan_in is inferred from the running shape."""
    shape = tuple(input_shape)
    layers: list[LayerSpec] = []
    for tok in text.split():
        head, _, rest = tok.partition(":")
        try:
            if head == "dense":
                args = rest.split(":")
                fan_out = int(args[0])
                bias = "nobias" not in args[1:]
                if len(shape) != 1:
                    layers.append(LayerSpec.flatten())
                    shape = (int(np.prod(shape)),)
                layers.append(LayerSpec.dense(shape[0], fan_out, bias=bias))
                shape = (fan_out,)
            elif head == "conv":
                co_s, _, kspec = rest.partition("@")
                bits = kspec.split(":")
                kh, kw = (int(x) for x in bits[0].split("x"))
                stride = int(bits[1][1:]) if len(bits) > 1 else 1
                l = LayerSpec.conv2d(shape[0], int(co_s), (kh, kw), stride)
                layers.append(l)
                shape = (l.channels_out, (shape[1] - kh) // stride + 1, (shape[2] - kw) // stride + 1)
            elif head == "dropout":
                layers.append(LayerSpec.dropout(float(rest)))
            elif head == "flatten":
                layers.append(LayerSpec.flatten())
                shape = (int(np.prod(shape)),)
            elif head == "leaky_relu":
                layers.append(LayerSpec.activation("leaky_relu", float(rest) if rest else 0.01))
            elif head in _ACTIVATIONS:
                layers.append(LayerSpec.activation(head))
            else:
                raise NetworkSpecError(f"unknown layer token {tok!r}")
        except (ValueError, IndexError) as e:
            raise NetworkSpecError(f"bad layer token {tok!r}: {e}") from e
    return tuple(layers)

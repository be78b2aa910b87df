"""Small feed-forward network engine.

Two equivalent representations of the same network are provided:

* :class:`CompositionNet` -- alternating affine maps and coordinate-wise
  activations, evaluated with dense matrix products.
* :class:`LayeredGraphNet` -- explicit neurons with weighted incoming edges
  from the previous layer, evaluated node by node.

``composition_to_graph`` / ``graph_to_composition`` convert between them.
Training support is limited to what the autoencoder needs: reverse-mode
gradients of a mean-squared reconstruction loss plus an L1 weight penalty,
and an Adam optimiser.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import DimensionError, GraphStructureError, NonFiniteError

ELU_ALPHA = 1.0


class Activation(str, Enum):
    IDENTITY = "identity"
    TANH = "tanh"
    ELU = "elu"

    def __call__(self, z):
        if self is Activation.IDENTITY:
            return z
        if self is Activation.TANH:
            return np.tanh(z)
        # expm1 only on the non-positive branch keeps large inputs from overflowing
        return np.where(z > 0, z, ELU_ALPHA * np.expm1(np.minimum(z, 0.0)))

    def derivative(self, z, a):
        """Derivative given pre-activation ``z`` and output ``a``."""
        if self is Activation.IDENTITY:
            return np.ones_like(z)
        if self is Activation.TANH:
            return 1.0 - a * a
        return np.where(z > 0, 1.0, a + ELU_ALPHA)


def _as_activations(acts, width: int) -> tuple[Activation, ...]:
    if isinstance(acts, (str, Activation)):
        return (Activation(acts),) * width
    acts = tuple(Activation(a) for a in acts)
    return acts


@dataclass(frozen=True)
class AffineLayer:
    weights: np.ndarray  # (n_out, n_in)
    bias: np.ndarray  # (n_out,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise DimensionError(f"weights {w.shape} and bias {b.shape} are inconsistent")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NonFiniteError("affine layer has non-finite entries")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class Layer:
    affine: AffineLayer
    activations: tuple[Activation, ...]

    def __post_init__(self):
        acts = _as_activations(self.activations, self.affine.n_out)
        if len(acts) != self.affine.n_out:
            raise DimensionError(
                f"{len(acts)} activations for a layer of width {self.affine.n_out}"
            )
        object.__setattr__(self, "activations", acts)

    @property
    def uniform_activation(self) -> Activation | None:
        first = self.activations[0]
        return first if all(a is first for a in self.activations) else None

    def activate(self, z: np.ndarray) -> np.ndarray:
        act = self.uniform_activation
        if act is not None:
            return act(z)
        out = np.empty_like(z)
        for kind in set(self.activations):
            cols = np.array([a is kind for a in self.activations])
            out[..., cols] = kind(z[..., cols])
        return out

    def activation_derivative(self, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        act = self.uniform_activation
        if act is not None:
            return act.derivative(z, a)
        out = np.empty_like(z)
        for kind in set(self.activations):
            cols = np.array([x is kind for x in self.activations])
            out[..., cols] = kind.derivative(z[..., cols], a[..., cols])
        return out


@dataclass(frozen=True)
class CompositionNet:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionError("a network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].affine.n_in != layers[i - 1].affine.n_out:
                raise DimensionError(
                    f"layer {i} expects width {layers[i].affine.n_in}, "
                    f"previous layer produces {layers[i - 1].affine.n_out}",
                    layer=i,
                )
        object.__setattr__(self, "layers", layers)

    @classmethod
    def from_arrays(cls, weights: Sequence, biases: Sequence, activations: Sequence) -> "CompositionNet":
        return cls(
            tuple(
                Layer(AffineLayer(w, b), a)
                for w, b, a in zip(weights, biases, activations, strict=True)
            )
        )

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.layers[0].affine.n_in,) + tuple(l.affine.n_out for l in self.layers)

    @property
    def params(self) -> list[np.ndarray]:
        """Flat parameter list ``[W1, b1, W2, b2, ...]`` (views, not copies)."""
        out = []
        for layer in self.layers:
            out += [layer.affine.weights, layer.affine.bias]
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "CompositionNet":
        if len(params) != 2 * len(self.layers):
            raise DimensionError("parameter list does not match network depth")
        return CompositionNet(
            tuple(
                Layer(AffineLayer(params[2 * i], params[2 * i + 1]), layer.activations)
                for i, layer in enumerate(self.layers)
            )
        )

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params)

    def __call__(self, x):
        return forward_composition(self, x)


def forward_composition(net: CompositionNet, x) -> np.ndarray:
    """Evaluate the network on one input vector or on a batch (rows)."""
    h = np.asarray(x, dtype=np.float64)
    for i, layer in enumerate(net.layers):
        if h.shape[-1] != layer.affine.n_in:
            raise DimensionError(
                f"layer {i} expects input width {layer.affine.n_in}, got {h.shape[-1]}",
                layer=i,
            )
        h = layer.activate(h @ layer.affine.weights.T + layer.affine.bias)
    return h


def concat_nets(*nets: CompositionNet) -> CompositionNet:
    return CompositionNet(tuple(layer for net in nets for layer in net.layers))


# ---------------------------------------------------------------------------
# layered graph representation


@dataclass(frozen=True)
class Neuron:
    """One node: ``activation(sum(w * h[src]) + bias)``.

    ``edges`` maps a source node ``(layer, index)`` to its weight. Layer 0 is
    the input layer.
    """

    edges: dict[tuple[int, int], float]
    bias: float
    activation: Activation

    def __post_init__(self):
        object.__setattr__(self, "activation", Activation(self.activation))


@dataclass(frozen=True)
class LayeredGraphNet:
    n_inputs: int
    layers: tuple[tuple[Neuron, ...], ...]  # layers 1..d

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(tuple(layer) for layer in self.layers))
        if self.n_inputs < 1 or not self.layers or any(not layer for layer in self.layers):
            raise GraphStructureError("graph needs inputs and non-empty layers")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.n_inputs,) + tuple(len(layer) for layer in self.layers)

    @property
    def edge_count(self) -> int:
        return sum(len(n.edges) for layer in self.layers for n in layer)

    def __call__(self, x):
        return forward_graph(self, x)


def _check_layered(net: LayeredGraphNet) -> None:
    widths = net.widths
    for i, layer in enumerate(net.layers, start=1):
        for j, neuron in enumerate(layer):
            for src in neuron.edges:
                src_layer, src_idx = src
                if src_layer != i - 1 or not 0 <= src_idx < widths[i - 1]:
                    raise GraphStructureError(
                        f"edge {src} -> ({i}, {j}) does not come from layer {i - 1}",
                        edge=[list(src), [i, j]],
                    )


def forward_graph(net: LayeredGraphNet, x) -> np.ndarray:
    """Evaluate node by node, layer by layer."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.n_inputs,):
        raise DimensionError(f"expected input of length {net.n_inputs}, got {x.shape}", layer=0)
    _check_layered(net)
    h = list(x)
    for layer in net.layers:
        nxt = []
        for neuron in layer:
            z = neuron.bias
            for (_, src), w in neuron.edges.items():
                z += w * h[src]
            nxt.append(float(neuron.activation(np.float64(z))))
        h = nxt
    return np.array(h)


def composition_to_graph(net: CompositionNet) -> LayeredGraphNet:
    """One neuron per output coordinate of each layer, fully connected to the previous layer."""
    layers = []
    for i, layer in enumerate(net.layers, start=1):
        w, b = layer.affine.weights, layer.affine.bias
        neurons = tuple(
            Neuron(
                edges={(i - 1, k): float(w[j, k]) for k in range(w.shape[1])},
                bias=float(b[j]),
                activation=layer.activations[j],
            )
            for j in range(w.shape[0])
        )
        layers.append(neurons)
    return LayeredGraphNet(net.dims[0], tuple(layers))


def graph_to_composition(net: LayeredGraphNet) -> CompositionNet:
    """Dense affine layers; edges absent from the graph become zero weights."""
    _check_layered(net)
    widths = net.widths
    out = []
    for i, layer in enumerate(net.layers, start=1):
        w = np.zeros((len(layer), widths[i - 1]))
        b = np.zeros(len(layer))
        for j, neuron in enumerate(layer):
            for (_, src), weight in neuron.edges.items():
                w[j, src] = weight
            b[j] = neuron.bias
        out.append(Layer(AffineLayer(w, b), tuple(n.activation for n in layer)))
    return CompositionNet(tuple(out))


# ---------------------------------------------------------------------------
# gradients and optimisation


@dataclass
class GradientSet:
    grads: list[np.ndarray]  # aligned with CompositionNet.params
    loss: float
    mse: float


def loss_value(net: CompositionNet, batch, target=None, l1_lambda: float = 0.0) -> float:
    """MSE (mean over rows and columns) plus ``l1_lambda * sum(|W|)``; biases are not penalised."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    target = batch if target is None else np.atleast_2d(target)
    out = forward_composition(net, batch)
    mse = float(np.mean((out - target) ** 2))
    return mse + l1_lambda * sum(float(np.abs(l.affine.weights).sum()) for l in net.layers)


def gradients(net: CompositionNet, batch, target=None, l1_lambda: float = 0.0) -> GradientSet:
    """Reverse-mode gradient of :func:`loss_value`.

    ``target`` defaults to ``batch`` (reconstruction). The subgradient of
    ``|w|`` at zero is taken as zero.
    """
    if l1_lambda < 0:
        raise ValueError("l1_lambda must be non-negative")
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    target = x if target is None else np.atleast_2d(np.asarray(target, dtype=np.float64))

    pre, post = [], [x]
    h = x
    for i, layer in enumerate(net.layers):
        if h.shape[1] != layer.affine.n_in:
            raise DimensionError(f"layer {i} expects width {layer.affine.n_in}", layer=i)
        z = h @ layer.affine.weights.T + layer.affine.bias
        h = layer.activate(z)
        if not np.all(np.isfinite(h)):
            raise NonFiniteError(f"non-finite activation in layer {i}", layer=i)
        pre.append(z)
        post.append(h)

    if target.shape != h.shape:
        raise DimensionError(f"target shape {target.shape} does not match output {h.shape}")
    diff = h - target
    mse = float(np.mean(diff * diff))
    delta = 2.0 * diff / diff.size  # d(mse)/d(output)

    grads: list[np.ndarray] = [None] * (2 * len(net.layers))  # type: ignore[list-item]
    penalty = 0.0
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        dz = delta * layer.activation_derivative(pre[i], post[i + 1])
        w = layer.affine.weights
        grads[2 * i] = dz.T @ post[i] + l1_lambda * np.sign(w)
        grads[2 * i + 1] = dz.sum(axis=0)
        penalty += float(np.abs(w).sum())
        if i:
            delta = dz @ w
            if not np.all(np.isfinite(delta)):
                raise NonFiniteError(f"non-finite gradient in layer {i}", layer=i)
    return GradientSet(grads, mse + l1_lambda * penalty, mse)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **hyper,
        )


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState):
    """Bias-corrected Adam update. Returns ``(new_params, state)``; ``state`` is updated in place."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, grads and optimiser state differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    new = []
    for k, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise DimensionError(f"gradient {k} has shape {g.shape}, parameter {p.shape}")
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        new.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return new, state


# ---------------------------------------------------------------------------
# serialization: one flat little-endian float64 blob + a JSON-able manifest


def _tags(layer: Layer):
    uniform = layer.uniform_activation
    return uniform.value if uniform is not None else [a.value for a in layer.activations]


def net_manifest(net: CompositionNet) -> dict:
    return {"dims": list(net.dims), "activations": [_tags(l) for l in net.layers]}


def net_to_bytes(net: CompositionNet) -> bytes:
    flat = np.concatenate([p.ravel(order="C") for p in net.params])
    return flat.astype("<f8").tobytes()


def net_from_bytes(blob: bytes, manifest: dict) -> CompositionNet:
    dims = manifest["dims"]
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    expected = sum(dims[i + 1] * dims[i] + dims[i + 1] for i in range(len(dims) - 1))
    if flat.size != expected:
        raise DimensionError(f"blob holds {flat.size} values, manifest needs {expected}")
    weights, biases, pos = [], [], 0
    for i in range(len(dims) - 1):
        n_in, n_out = dims[i], dims[i + 1]
        weights.append(flat[pos : pos + n_in * n_out].reshape(n_out, n_in))
        pos += n_in * n_out
        biases.append(flat[pos : pos + n_out])
        pos += n_out
    acts = [
        _as_activations(tag, dims[i + 1]) for i, tag in enumerate(manifest["activations"])
    ]
    return CompositionNet.from_arrays(weights, biases, acts)


def dumps_manifest(net: CompositionNet) -> str:
    return json.dumps(net_manifest(net), sort_keys=True)

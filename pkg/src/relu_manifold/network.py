"""Feed-forward ReLU networks.

A network with widths ``[n_0, n_1, ..., n_L]`` computes

    h_0 = x
    h_l = relu(W_l h_{l-1} - b_l)      l = 1 .. L-1
    F(x) = W_L h_{L-1}

Each hidden neuron stores a threshold ``b_z``.  Its *preactivation* ``z(x)``
is the affine output ``W_{l,z} h_{l-1}`` before the threshold is subtracted,
so the neuron kinks exactly where ``z(x) = b_z``.  The output layer carries
no bias and no activation unless ``output_bias`` is given.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

FORMAT_NAME = "relu-network"
FORMAT_VERSION = 1

DEFAULT_WEIGHT_SCHEME = "he_normal"
DEFAULT_BIAS_SCHEME = "uniform(-0.5,0.5)"


class NetworkError(ValueError):
    pass


class ModelFormatError(NetworkError):
    """Raised when a serialized model cannot be parsed."""


class NeuronId(NamedTuple):
    layer: int  # 1-based hidden layer
    index: int  # 0-based position within the layer


@dataclass(frozen=True, eq=False)
class Network:
    layer_widths: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]  # hidden layers only
    output_bias: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise NetworkError(f"invalid layer widths {self.layer_widths}")
        object.__setattr__(self, "layer_widths", widths)
        L = len(widths) - 1
        if len(self.weights) != L or len(self.biases) != L - 1:
            raise NetworkError("need one weight matrix per layer and one bias vector per hidden layer")
        weights = []
        for l, W in enumerate(self.weights, start=1):
            W = np.array(W, dtype=np.float64)
            if W.shape != (widths[l], widths[l - 1]):
                raise NetworkError(f"layer {l}: weight shape {W.shape}, expected {(widths[l], widths[l - 1])}")
            weights.append(W)
        biases = []
        for l, b in enumerate(self.biases, start=1):
            b = np.array(b, dtype=np.float64).reshape(-1)
            if b.shape != (widths[l],):
                raise NetworkError(f"layer {l}: bias length {b.size}, expected {widths[l]}")
            biases.append(b)
        out_b = None
        if self.output_bias is not None:
            out_b = np.array(self.output_bias, dtype=np.float64).reshape(-1)
            if out_b.shape != (widths[-1],):
                raise NetworkError("output bias length does not match output width")
        for arr in [*weights, *biases, *([out_b] if out_b is not None else [])]:
            if not np.all(np.isfinite(arr)):
                raise NetworkError("network parameters must be finite")
            arr.setflags(write=False)
        object.__setattr__(self, "weights", tuple(weights))
        object.__setattr__(self, "biases", tuple(biases))
        object.__setattr__(self, "output_bias", out_b)

    @property
    def n_in(self) -> int:
        return self.layer_widths[0]

    @property
    def n_out(self) -> int:
        return self.layer_widths[-1]

    @property
    def depth(self) -> int:
        """Number of affine layers L."""
        return len(self.layer_widths) - 1

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return self.layer_widths[1:-1]

    @property
    def n_hidden(self) -> int:
        return sum(self.hidden_widths)

    def neurons(self) -> list[NeuronId]:
        """All hidden neurons in (layer, index) order."""
        return [NeuronId(l, i) for l, w in enumerate(self.hidden_widths, start=1) for i in range(w)]

    def thresholds(self) -> np.ndarray:
        """Concatenated hidden thresholds b_z, in ``neurons()`` order."""
        if not self.biases:
            return np.zeros(0)
        return np.concatenate(self.biases)

    def flat_index(self, neuron: NeuronId) -> int:
        self.check_neuron(neuron)
        return sum(self.hidden_widths[: neuron.layer - 1]) + neuron.index

    def check_neuron(self, neuron: NeuronId) -> None:
        layer, index = neuron
        if not 1 <= layer <= self.depth - 1:
            raise NetworkError(f"hidden layer {layer} out of range 1..{self.depth - 1}")
        if not 0 <= index < self.layer_widths[layer]:
            raise NetworkError(f"neuron index {index} out of range for layer {layer}")

    def replace(self, weights=None, biases=None, output_bias=None, **meta) -> "Network":
        return Network(
            self.layer_widths,
            self.weights if weights is None else weights,
            self.biases if biases is None else biases,
            self.output_bias if output_bias is None else output_bias,
            {**self.meta, **meta},
        )

    def __call__(self, x):
        return forward(self, x)


# ---------------------------------------------------------------------------
# initialization

_SCHEME_RE = re.compile(r"^\s*(\w+)\s*(?:\(\s*([^,()]+)\s*,\s*([^,()]+)\s*\))?\s*$")


def parse_scheme(scheme: str) -> tuple[str, tuple[float, ...]]:
    m = _SCHEME_RE.match(scheme)
    if not m:
        raise NetworkError(f"cannot parse scheme {scheme!r}")
    name = m.group(1).lower()
    args = tuple(float(a) for a in m.group(2, 3) if a is not None)
    return name, args


def _sample_weights(rng: np.random.Generator, scheme: str, shape: tuple[int, int]) -> np.ndarray:
    name, args = parse_scheme(scheme)
    fan_in = shape[1]
    if name == "he_normal" and not args:
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    if name == "uniform" and len(args) == 2:
        a, b = args
        if not a < b:
            raise NetworkError(f"uniform weight scheme needs a < b, got {scheme!r}")
        return rng.uniform(a, b, size=shape)
    raise NetworkError(f"unknown weight scheme {scheme!r}")


def _sample_biases(rng: np.random.Generator, scheme: str, n: int) -> np.ndarray:
    name, args = parse_scheme(scheme)
    if name == "uniform" and len(args) == 2:
        a, b = args
        # biases must have a density, so the spread may not vanish
        if not b > a:
            raise NetworkError(f"bias scheme {scheme!r} has zero spread")
        return rng.uniform(a, b, size=n)
    if name == "normal" and len(args) == 2:
        mean, std = args
        if not std > 0:
            raise NetworkError(f"bias scheme {scheme!r} has zero spread")
        return rng.normal(mean, std, size=n)
    raise NetworkError(f"unknown bias scheme {scheme!r}")


def init_random(
    layer_widths: Sequence[int],
    seed: int,
    weight_scheme: str = DEFAULT_WEIGHT_SCHEME,
    bias_scheme: str = DEFAULT_BIAS_SCHEME,
) -> Network:
    """Randomly initialized network, deterministic in ``seed``.

    Weight schemes: ``he_normal`` (variance 2/fan_in) or ``uniform(a,b)``.
    Bias schemes: ``uniform(a,b)`` or ``normal(mean,std)`` with positive spread.
    """
    widths = [int(w) for w in layer_widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise NetworkError(f"invalid architecture {list(layer_widths)}")
    # validate both schemes before drawing anything
    _sample_weights(np.random.default_rng(0), weight_scheme, (1, 1))
    _sample_biases(np.random.default_rng(0), bias_scheme, 1)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for l in range(1, len(widths)):
        weights.append(_sample_weights(rng, weight_scheme, (widths[l], widths[l - 1])))
        if l < len(widths) - 1:
            biases.append(_sample_biases(rng, bias_scheme, widths[l]))
    meta = {"seed": int(seed), "weight_scheme": weight_scheme, "bias_scheme": bias_scheme}
    return Network(tuple(widths), tuple(weights), tuple(biases), None, meta)


# ---------------------------------------------------------------------------
# evaluation


def _as_batch(net: Network, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.ndim != 2 or X.shape[1] != net.n_in:
        raise NetworkError(f"input has shape {np.shape(x)}, expected (..., {net.n_in})")
    return X, single


def hidden_preactivations(net: Network, x) -> list[np.ndarray]:
    """Preactivations z(x) of every hidden layer, each of shape (N, n_l).

    Accepts a single point or a batch of points (rows).
    """
    X, single = _as_batch(net, x)
    out = []
    h = X
    for W, b in zip(net.weights[:-1], net.biases):
        z = h @ W.T
        out.append(z[0] if single else z)
        h = np.maximum(z - b, 0.0)
    return out


def forward(net: Network, x) -> np.ndarray:
    X, single = _as_batch(net, x)
    h = X
    for W, b in zip(net.weights[:-1], net.biases):
        h = np.maximum(h @ W.T - b, 0.0)
    y = h @ net.weights[-1].T
    if net.output_bias is not None:
        y = y + net.output_bias
    return y[0] if single else y


def boundary_values(net: Network, x) -> np.ndarray:
    """``z(x) - b_z`` for every hidden neuron, shape (N, n_hidden) or (n_hidden,)."""
    pre = hidden_preactivations(net, x)
    if not pre:
        X, single = _as_batch(net, x)
        return np.zeros((0,)) if single else np.zeros((X.shape[0], 0))
    return np.concatenate([z - b for z, b in zip(pre, net.biases)], axis=-1)


def preactivation(net: Network, x, neuron: NeuronId) -> float:
    net.check_neuron(neuron)
    return float(hidden_preactivations(net, np.asarray(x, dtype=np.float64).reshape(-1))[neuron.layer - 1][neuron.index])


def activation_pattern(net: Network, x) -> np.ndarray:
    """On/off bits of all hidden neurons, ordered by (layer, index).

    A bit is set iff ``z(x) - b_z > 0``.  Batches give one row per point.
    """
    return boundary_values(net, x) > 0.0


def neuron_gradients(net: Network, x) -> tuple[list[np.ndarray], bool]:
    """Input gradients of every hidden preactivation at a single point.

    Returns per-layer matrices of shape (n_l, n_in) and whether ``x`` sits
    exactly on some neuron's kink, where sigma'(0) = 0 is used.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape != (net.n_in,):
        raise NetworkError(f"input length {x.size}, expected {net.n_in}")
    grads = []
    on_boundary = False
    J = np.eye(net.n_in)  # d h_{l-1} / dx
    h = x
    for W, b in zip(net.weights[:-1], net.biases):
        z = W @ h
        G = W @ J
        grads.append(G)
        s = z - b
        on_boundary = on_boundary or bool(np.any(s == 0.0))
        active = s > 0.0
        h = np.where(active, s, 0.0)
        J = G * active[:, None]
    return grads, on_boundary


def input_gradient(net: Network, x, neuron: NeuronId, with_flag: bool = False):
    """Gradient of ``z(x)`` with respect to the input.

    With ``with_flag=True`` also returns whether an earlier neuron sits
    exactly on its kink (the gradient then uses sigma'(0) = 0).
    """
    net.check_neuron(neuron)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    grads, _ = neuron_gradients(net, x)
    g = grads[neuron.layer - 1][neuron.index].copy()
    if not with_flag:
        return g
    bv = boundary_values(net, x)
    upto = sum(net.hidden_widths[: neuron.layer - 1])
    return g, bool(np.any(bv[:upto] == 0.0))


def is_good(net: Network, x, neuron: NeuronId) -> bool:
    """Whether the neuron reaches the output through strictly active neurons.

    Every hidden neuron strictly after ``neuron`` on the path must be active
    and every edge must have nonzero weight.  The neuron's own state is not
    considered.
    """
    net.check_neuron(neuron)
    bv = boundary_values(net, np.asarray(x, dtype=np.float64).reshape(-1))
    offsets = np.cumsum((0,) + net.hidden_widths)
    active = [bv[offsets[i]:offsets[i + 1]] > 0.0 for i in range(len(net.hidden_widths))]
    # reach[j]: neuron j of the current layer has an admissible path to the output
    reach = np.any(net.weights[-1] != 0.0, axis=0)
    for l in range(net.depth - 1, neuron.layer, -1):
        # reach currently refers to hidden layer l; step back to layer l-1
        nxt = reach & active[l - 1]
        reach = np.any((net.weights[l - 1] != 0.0) & nxt[:, None], axis=0)
    return bool(reach[neuron.index])


# ---------------------------------------------------------------------------
# serialization


def to_dict(net: Network) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "layer_widths": list(net.layer_widths),
        "weights": [W.ravel().tolist() for W in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "output_bias": None if net.output_bias is None else net.output_bias.tolist(),
        "seed": net.meta.get("seed"),
        "weight_scheme": net.meta.get("weight_scheme"),
        "bias_scheme": net.meta.get("bias_scheme"),
    }


def from_dict(doc: dict) -> Network:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ModelFormatError("not a relu-network document")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}, expected {FORMAT_VERSION}")
    try:
        widths = [int(w) for w in doc["layer_widths"]]
        weights = []
        for l, flat in enumerate(doc["weights"], start=1):
            flat = np.asarray(flat, dtype=np.float64)
            if flat.size != widths[l] * widths[l - 1]:
                raise ModelFormatError(f"layer {l}: {flat.size} weights, expected {widths[l] * widths[l - 1]}")
            weights.append(flat.reshape(widths[l], widths[l - 1]))
        biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
        out_b = doc.get("output_bias")
        meta = {k: doc[k] for k in ("seed", "weight_scheme", "bias_scheme") if doc.get(k) is not None}
        return Network(tuple(widths), tuple(weights), tuple(biases), out_b, meta)
    except (KeyError, TypeError, IndexError) as exc:
        raise ModelFormatError(f"malformed model document: {exc!r}") from exc
    except NetworkError as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"shape mismatch: {exc}") from exc


def dumps(net: Network) -> str:
    # json writes floats with repr(), which round-trips float64 exactly
    return json.dumps(to_dict(net), indent=1) + "\n"


def loads(text: str) -> Network:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ModelFormatError(f"parse error at byte offset {offset}: {exc.msg}") from exc
    return from_dict(doc)


def save_model(net: Network, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(dumps(net), encoding="utf-8")
    tmp.replace(path)


def load_model(path) -> Network:
    return loads(Path(path).read_text(encoding="utf-8"))

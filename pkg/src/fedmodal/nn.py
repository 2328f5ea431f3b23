"""Minimal dense neural-network engine.

Dense layers with relu / leaky-relu / softmax / identity activations,
analytic backpropagation, plain SGD, and deterministic Glorot-uniform
initialization. Model parameters live in a :class:`ParameterMap`, an
immutable string-keyed map of float64 arrays that doubles as the unit
of exchange between participants and the aggregation server.
"""

from __future__ import annotations

from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, IncompatibleMapsError, ShapeError, TapeMismatchError

ACTIVATIONS = ("relu", "leaky_relu", "softmax", "identity")


class ParameterMap(Mapping):
    """Immutable map from dotted key paths to float64 arrays.

    Iteration order is always lexicographic, so two maps with equal
    content serialize and aggregate identically. Stored arrays are
    read-only; operations that change values return fresh maps.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries: Mapping[str, np.ndarray]):
        data = {}
        for key in sorted(entries):
            if not isinstance(key, str):
                raise ConfigurationError(f"parameter key must be a string, got {key!r}")
            arr = np.array(entries[key], dtype=np.float64)
            arr.setflags(write=False)
            data[key] = arr
        self._entries = data

    @classmethod
    def _adopt(cls, entries: dict) -> "ParameterMap":
        # Internal fast path: takes ownership of freshly created arrays.
        obj = object.__new__(cls)
        data = {}
        for key in sorted(entries):
            arr = entries[key]
            arr.setflags(write=False)
            data[key] = arr
        obj._entries = data
        return obj

    def __getitem__(self, key: str) -> np.ndarray:
        return self._entries[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParameterMap):
            return NotImplemented
        if self._entries.keys() != other._entries.keys():
            return False
        return all(np.array_equal(self[k], other[k]) for k in self._entries)

    __hash__ = None  # mutable-mapping semantics: not hashable

    def __repr__(self) -> str:
        shapes = ", ".join(f"{k}:{list(v.shape)}" for k, v in self._entries.items())
        return f"ParameterMap({shapes})"


@dataclass(frozen=True)
class LayerSpec:
    """One dense layer: ``out = act(x @ W + b)``.

    ``param_key_prefix`` names the layer's entries in the parameter map
    ("{prefix}.weight" / "{prefix}.bias"); prefixes are the contract that
    lets different model topologies discover their shared sub-networks.
    """

    in_dim: int
    out_dim: int
    activation: str = "identity"
    param_key_prefix: str = "layer"
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigurationError(
                f"layer dims must be positive, got {self.in_dim}x{self.out_dim}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not 0.0 < self.leaky_slope < 1.0:
            raise ConfigurationError(f"leaky slope must be in (0,1), got {self.leaky_slope}")

    @property
    def weight_key(self) -> str:
        return f"{self.param_key_prefix}.weight"

    @property
    def bias_key(self) -> str:
        return f"{self.param_key_prefix}.bias"


@dataclass(frozen=True)
class Network:
    """An ordered chain of dense layers plus the map holding their parameters."""

    layers: tuple[LayerSpec, ...]
    params: ParameterMap

    def with_params(self, params: ParameterMap) -> "Network":
        """Rebind the same topology to another parameter map."""
        return Network(self.layers, params)


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning rate must be > 0, got {self.learning_rate}")


@dataclass(frozen=True)
class ForwardTape:
    """Per-layer inputs and pre-activations recorded during a forward pass."""

    layers: tuple[LayerSpec, ...]
    inputs: tuple[np.ndarray, ...]
    preacts: tuple[np.ndarray, ...]
    output: np.ndarray = field(repr=False, default=None)


def _check_chain(layers) -> tuple[LayerSpec, ...]:
    layers = tuple(layers)
    if not layers:
        raise ConfigurationError("a network needs at least one layer")
    for prev, nxt in zip(layers, layers[1:]):
        if prev.out_dim != nxt.in_dim:
            raise ConfigurationError(
                f"layer chain mismatch: {prev.param_key_prefix} outputs {prev.out_dim} "
                f"but {nxt.param_key_prefix} expects {nxt.in_dim}"
            )
    prefixes = [l.param_key_prefix for l in layers]
    if len(set(prefixes)) != len(prefixes):
        raise ConfigurationError(f"duplicate layer prefixes: {prefixes}")
    return layers


def init_network(layers, seed: int) -> Network:
    """Build a network with Glorot-uniform weights and zero biases.

    The draw order is fixed (layer order, weights then biases), so the
    same (seed, layers) pair always yields bit-identical parameters.
    """
    layers = _check_chain(layers)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    entries = {}
    for spec in layers:
        bound = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        entries[spec.weight_key] = rng.uniform(-bound, bound, size=(spec.in_dim, spec.out_dim))
        entries[spec.bias_key] = np.zeros(spec.out_dim)
    return Network(layers, ParameterMap._adopt(entries))


def _activate(kind: str, pre: np.ndarray, slope: float) -> np.ndarray:
    if kind == "identity":
        return pre
    if kind == "relu":
        return np.maximum(pre, 0.0)
    if kind == "leaky_relu":
        return np.where(pre > 0.0, pre, slope * pre)
    if kind == "softmax":
        return softmax(pre)
    raise ConfigurationError(f"unknown activation {kind!r}")


def _activate_backward(kind: str, pre: np.ndarray, grad_out: np.ndarray, slope: float) -> np.ndarray:
    if kind == "identity":
        return grad_out
    if kind == "relu":
        return grad_out * (pre > 0.0)
    if kind == "leaky_relu":
        return grad_out * np.where(pre > 0.0, 1.0, slope)
    if kind == "softmax":
        y = softmax(pre)
        return y * (grad_out - np.sum(grad_out * y, axis=1, keepdims=True))
    raise ConfigurationError(f"unknown activation {kind!r}")


def forward(net: Network, batch: np.ndarray) -> tuple[np.ndarray, ForwardTape]:
    """Run a batch through the network, returning output and a replay tape."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a [batch, features] array, got shape {x.shape}")
    if x.shape[0] < 1:
        raise ShapeError("forward needs at least one sample")
    if x.shape[1] != net.layers[0].in_dim:
        raise ShapeError(
            f"batch has {x.shape[1]} features but the first layer expects {net.layers[0].in_dim}"
        )
    inputs, preacts = [], []
    for spec in net.layers:
        inputs.append(x)
        pre = x @ net.params[spec.weight_key] + net.params[spec.bias_key]
        preacts.append(pre)
        x = _activate(spec.activation, pre, spec.leaky_slope)
    tape = ForwardTape(net.layers, tuple(inputs), tuple(preacts), x)
    return x, tape


def backward(net: Network, tape: ForwardTape, output_grad: np.ndarray) -> tuple[ParameterMap, np.ndarray]:
    """Backpropagate a loss gradient through a recorded forward pass.

    Returns the gradient map (same keys/shapes as ``net.params``) and the
    gradient with respect to the batch input, so multi-branch models
    (late fusion, dual contrastive towers) can keep propagating.
    """
    if tape.layers != net.layers:
        raise TapeMismatchError("tape was recorded on a different network")
    grad = np.asarray(output_grad, dtype=np.float64)
    if grad.shape != tape.output.shape:
        raise ShapeError(f"output grad shape {grad.shape} != output shape {tape.output.shape}")
    entries = {}
    for spec, x, pre in zip(reversed(net.layers), reversed(tape.inputs), reversed(tape.preacts)):
        grad = _activate_backward(spec.activation, pre, grad, spec.leaky_slope)
        entries[spec.weight_key] = x.T @ grad
        entries[spec.bias_key] = grad.sum(axis=0)
        grad = grad @ net.params[spec.weight_key].T
    return ParameterMap._adopt(entries), grad


def sgd_step(params: ParameterMap, grads: ParameterMap, lr: float) -> ParameterMap:
    """One gradient-descent update: ``out[k] = params[k] - lr * grads[k]``."""
    if set(params.keys()) != set(grads.keys()):
        missing = set(params.keys()) ^ set(grads.keys())
        raise IncompatibleMapsError(f"params/grads key sets differ on {sorted(missing)}")
    entries = {}
    for key in params:
        if params[key].shape != grads[key].shape:
            raise IncompatibleMapsError(
                f"shape mismatch on {key!r}: {params[key].shape} vs {grads[key].shape}"
            )
        entries[key] = params[key] - lr * grads[key]
    return ParameterMap._adopt(entries)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax (max subtraction, no overflow up to |x|~1e3)."""
    x = np.asarray(logits, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return out[0] if squeeze else out

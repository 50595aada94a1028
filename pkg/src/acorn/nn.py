"""Minimal dense-network core with exact reverse-mode gradients.

Everything is a pure function of explicit ``(params, spec)`` pairs: no
hidden module state, no graph construction. Parameters live in a single
flat float64 array so that optimizers and finite-difference checking can
address every coordinate uniformly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a fully connected network.

    ``layer_widths`` runs input -> hidden... -> output. Hidden layers use
    ``activation``; the output layer is always identity.
    """

    layer_widths: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError(f"need at least 2 layer widths, got {widths}")
        if any(w < 1 for w in widths):
            raise ValueError(f"all layer widths must be >= 1, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def in_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def out_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_params(self) -> int:
        return sum(
            (fi + 1) * fo
            for fi, fo in zip(self.layer_widths[:-1], self.layer_widths[1:])
        )

    def layout(self) -> tuple[tuple[int, int, int, int], ...]:
        """Per-layer ``(w_offset, b_offset, fan_in, fan_out)`` into the flat array."""
        slots = []
        offset = 0
        for fi, fo in zip(self.layer_widths[:-1], self.layer_widths[1:]):
            slots.append((offset, offset + fi * fo, fi, fo))
            offset += (fi + 1) * fo
        return tuple(slots)

    def to_dict(self) -> dict:
        return {"layer_widths": list(self.layer_widths), "activation": self.activation}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(tuple(d["layer_widths"]), d["activation"])


@dataclass
class ParamVector:
    """Flat weight+bias storage plus the layout table that addresses it."""

    flat: np.ndarray
    layout: tuple[tuple[int, int, int, int], ...]

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        expected = sum((fi + 1) * fo for _, _, fi, fo in self.layout)
        if self.flat.shape != (expected,):
            raise ValueError(
                f"flat length {self.flat.shape} does not match layout total {expected}"
            )

    def weights(self, layer: int) -> np.ndarray:
        """View of layer weights, shape (fan_out, fan_in)."""
        wo, bo, fi, fo = self.layout[layer]
        return self.flat[wo:bo].reshape(fo, fi)

    def biases(self, layer: int) -> np.ndarray:
        wo, bo, fi, fo = self.layout[layer]
        return self.flat[bo : bo + fo]

    def copy(self) -> "ParamVector":
        return ParamVector(self.flat.copy(), self.layout)

    @classmethod
    def zeros(cls, spec: MlpSpec) -> "ParamVector":
        return cls(np.zeros(spec.n_params), spec.layout())


@dataclass
class Tape:
    """Activation cache from one forward pass, consumed by :func:`backward`."""

    x: np.ndarray                 # (B, in_dim)
    pre: list[np.ndarray]         # per layer pre-activations, (B, fan_out)
    post: list[np.ndarray]        # per layer post-activations, (B, fan_out)
    squeeze: bool                 # input was 1-D


def init_params(spec: MlpSpec, seed: int) -> ParamVector:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    flat = np.zeros(spec.n_params)
    params = ParamVector(flat, spec.layout())
    for layer, (_, _, fi, fo) in enumerate(params.layout):
        bound = np.sqrt(6.0 / (fi + fo))
        params.weights(layer)[...] = rng.uniform(-bound, bound, size=(fo, fi))
    return params


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activate_grad(pre: np.ndarray, post: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - post * post
    return (pre > 0.0).astype(np.float64)


def forward(params: ParamVector, spec: MlpSpec, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Dense forward pass. Accepts a single vector or a (B, in_dim) batch."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != spec.in_dim:
        raise ValueError(f"input width {xb.shape[1]} != spec input width {spec.in_dim}")
    if len(params.layout) != spec.n_layers or params.flat.shape[0] != spec.n_params:
        raise ValueError("params layout does not match spec")

    pre, post = [], []
    a = xb
    for layer in range(spec.n_layers):
        z = a @ params.weights(layer).T + params.biases(layer)
        last = layer == spec.n_layers - 1
        a = z if last else _activate(z, spec.activation)
        pre.append(z)
        post.append(a)
    out = post[-1][0] if squeeze else post[-1]
    return out, Tape(xb, pre, post, squeeze)


def backward(
    params: ParamVector,
    spec: MlpSpec,
    tape: Tape,
    grad_output: np.ndarray,
) -> tuple[ParamVector, np.ndarray]:
    """Exact gradient of ``sum(output * grad_output)`` w.r.t. params and input.

    Gradients are summed over the batch dimension. Returns
    ``(grad_params, grad_input)`` where ``grad_input`` matches the shape of
    the forward input.
    """
    g = np.atleast_2d(np.asarray(grad_output, dtype=np.float64))
    if len(tape.pre) != spec.n_layers or g.shape != tape.post[-1].shape:
        raise ValueError("tape/grad_output do not match spec")

    grads = ParamVector.zeros(spec)
    dz = g
    for layer in reversed(range(spec.n_layers)):
        if layer != spec.n_layers - 1:
            dz = dz * _activate_grad(tape.pre[layer], tape.post[layer], spec.activation)
        a_prev = tape.x if layer == 0 else tape.post[layer - 1]
        grads.weights(layer)[...] = dz.T @ a_prev
        grads.biases(layer)[...] = dz.sum(axis=0)
        dz = dz @ params.weights(layer)
    grad_input = dz[0] if tape.squeeze else dz
    return grads, grad_input


def grad_check(loss_fn, params: np.ndarray, eps: float = 1e-5) -> float:
    """Compare an analytic gradient against central finite differences.

    ``loss_fn(p)`` must return ``(value, grad)`` for a flat parameter array.
    Returns the max elementwise relative error with denominator
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    p = np.asarray(params, dtype=np.float64).copy()
    _, analytic = loss_fn(p)
    analytic = np.asarray(analytic, dtype=np.float64)
    worst = 0.0
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + eps
        hi = loss_fn(p)[0]
        p[i] = orig - eps
        lo = loss_fn(p)[0]
        p[i] = orig
        numeric = (hi - lo) / (2.0 * eps)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def to_dict(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(
    params: ParamVector,
    grads: ParamVector,
    state: AdamState,
    hyper: AdamConfig,
) -> tuple[ParamVector, AdamState]:
    """One Adam update with bias correction. Pure: returns fresh arrays."""
    g = grads.flat
    t = state.t + 1
    m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * g
    v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * g * g
    m_hat = m / (1.0 - hyper.beta1**t)
    v_hat = v / (1.0 - hyper.beta2**t)
    new_flat = params.flat - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return ParamVector(new_flat, params.layout), AdamState(m, v, t)


def save_params(path, spec: MlpSpec, params: ParamVector, seed: int, steps: int) -> None:
    """Write a parameter file: spec/seed/step header plus the flat array.

    Floats are serialized with Python's shortest round-trip representation,
    so load(save(x)) reproduces every value exactly.
    """
    payload = {
        "schema_version": 1,
        "spec": spec.to_dict(),
        "seed": int(seed),
        "steps": int(steps),
        "params": [float(v) for v in params.flat],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def load_params(path) -> tuple[MlpSpec, ParamVector, int, int]:
    """Read a parameter file; returns ``(spec, params, seed, steps)``."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: malformed parameter file: {exc}") from exc
    spec = MlpSpec.from_dict(payload["spec"])
    flat = np.array(payload["params"], dtype=np.float64)
    if flat.shape[0] != spec.n_params:
        raise ValueError(
            f"{path}: parameter count {flat.shape[0]} does not match spec "
            f"({spec.n_params} expected)"
        )
    return spec, ParamVector(flat, spec.layout()), payload["seed"], payload["steps"]

"""Layers and parameter management: affine maps, batch normalization,
max-subtraction point layers, the per-part point-set encoder, and Adam.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (DTYPE, Tensor, add, matmul, mul, powc, relu, reshape,
                       tmax, tmean)

CHECKPOINT_VERSION = 1


class ShapeMismatchError(ValueError):
    pass


class ParamStore:
    """Named parameter tensors with Adam state and bit-exact serialization."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name, array) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(array, dtype=DTYPE), requires_grad=True)
        self.params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def add_buffer(self, name, array) -> np.ndarray:
        if name in self.buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        arr = np.asarray(array, dtype=DTYPE).copy()
        self.buffers[name] = arr
        return arr

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def adam_step(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        """One bias-corrected Adam update over every parameter."""
        b1, b2 = betas
        self.step += 1
        correction1 = 1.0 - b1 ** self.step
        correction2 = 1.0 - b2 ** self.step
        for name, t in self.params.items():
            if t.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient")
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * t.grad
            v *= b2
            v += (1.0 - b2) * t.grad ** 2
            t.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)

    # -- serialization -----------------------------------------------------

    def save(self, path, extra_text: dict[str, str] | None = None):
        payload = {"__version__": np.array(CHECKPOINT_VERSION), "__step__": np.array(self.step)}
        for name, t in self.params.items():
            payload[f"param/{name}"] = t.data
            payload[f"adam_m/{name}"] = self._m[name]
            payload[f"adam_v/{name}"] = self._v[name]
        for name, arr in self.buffers.items():
            payload[f"buffer/{name}"] = arr
        for key, text in (extra_text or {}).items():
            payload[f"text/{key}"] = np.array(text)
        np.savez(path, **payload)

    def load_state(self, path) -> dict[str, str]:
        """Copy a checkpoint into this (already structured) store, in place.

        Returns any text blobs stored alongside the arrays.
        """
        with np.load(path, allow_pickle=False) as zf:
            version = int(zf["__version__"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            names = {k.split("/", 1)[1] for k in zf.files if k.startswith("param/")}
            if names != set(self.params):
                missing = set(self.params) - names
                extra = names - set(self.params)
                raise ValueError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
            for name, t in self.params.items():
                arr = zf[f"param/{name}"]
                if arr.shape != t.data.shape:
                    raise ShapeMismatchError(f"{name}: {arr.shape} vs {t.data.shape}")
                t.data[...] = arr
                self._m[name][...] = zf[f"adam_m/{name}"]
                self._v[name][...] = zf[f"adam_v/{name}"]
            for name, arr in self.buffers.items():
                arr[...] = zf[f"buffer/{name}"]
            self.step = int(zf["__step__"])
            return {k.split("/", 1)[1]: str(zf[k]) for k in zf.files if k.startswith("text/")}


# ---------------------------------------------------------------------------
# layers

def affine(x, W, b) -> Tensor:
    """y = x @ W + b for x of any leading shape (..., Fin)."""
    if x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeMismatchError(f"affine: x{x.shape} W{W.shape} b{b.shape}")
    return add(matmul(x, W), b)


def maxsub_pointlayer(x, W, b, lam) -> Tensor:
    """Shared per-point affine with learned max-subtraction.

    The feature-wise max over the point axis is scaled by ``lam`` and
    subtracted before the affine map, per part.
    """
    if len(x.shape) != 3:
        raise ShapeMismatchError(f"maxsub_pointlayer expects (P, N, F), got {x.shape}")
    peak = tmax(x, axis=1, keepdims=True)
    return affine(add(x, mul(mul(peak, lam), -1.0)), W, b)


@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5


def init_batch_norm(store: ParamStore, name, channels, momentum=0.9, eps=1e-5):
    return BatchNormState(
        gamma=store.add(f"{name}.gamma", np.ones(channels)),
        beta=store.add(f"{name}.beta", np.zeros(channels)),
        running_mean=store.add_buffer(f"{name}.running_mean", np.zeros(channels)),
        running_var=store.add_buffer(f"{name}.running_var", np.ones(channels)),
        momentum=momentum,
        eps=eps,
    )


def batch_norm(x, state: BatchNormState, training: bool) -> Tensor:
    """Batch normalization over axis 0 of a (N, C) tensor.

    A batch here is always the parts (or part points) of a single object, so
    the batch statistics are used in both modes; this keeps training and
    inference normalization identical, which matters when per-object feature
    distributions vary a lot. Running statistics are still tracked during
    training and serve as the fallback for single-row batches.
    """
    if len(x.shape) != 2:
        raise ShapeMismatchError(f"batch_norm expects (N, C), got {x.shape}")
    if training and x.shape[0] < 2:
        raise ValueError("batch_norm training mode needs a batch of >= 2")
    if x.shape[0] >= 2:
        mean = tmean(x, axis=0, keepdims=True)
        centered = add(x, mul(mean, -1.0))
        var = tmean(mul(centered, centered), axis=0, keepdims=True)
        if training:
            m = state.momentum
            state.running_mean *= m
            state.running_mean += (1.0 - m) * mean.data[0]
            state.running_var *= m
            state.running_var += (1.0 - m) * var.data[0]
        inv = powc(add(var, state.eps), -0.5)
        normed = mul(centered, inv)
    else:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        normed = mul(add(x, -state.running_mean), inv)
    return add(mul(normed, state.gamma), state.beta)


@dataclass
class MaxSubLayer:
    W: Tensor
    b: Tensor
    lam: Tensor
    bn: BatchNormState


@dataclass
class AffineLayer:
    W: Tensor
    b: Tensor


def _weight_init(rng, fin, fout):
    return rng.normal(0.0, np.sqrt(2.0 / fin), size=(fin, fout))


def init_maxsub_layer(store, name, fin, fout, rng, lam_init=0.5) -> MaxSubLayer:
    return MaxSubLayer(
        W=store.add(f"{name}.W", _weight_init(rng, fin, fout)),
        b=store.add(f"{name}.b", np.zeros(fout)),
        lam=store.add(f"{name}.lam", np.array(lam_init)),
        bn=init_batch_norm(store, f"{name}.bn", fout),
    )


def init_affine_layer(store, name, fin, fout, rng) -> AffineLayer:
    return AffineLayer(
        W=store.add(f"{name}.W", _weight_init(rng, fin, fout)),
        b=store.add(f"{name}.b", np.zeros(fout)),
    )


def init_part_encoder(store, name, widths, rng) -> list[MaxSubLayer]:
    layers = []
    fin = 3
    for i, w in enumerate(widths):
        layers.append(init_maxsub_layer(store, f"{name}.layer{i}", fin, w, rng))
        fin = w
    return layers


def part_encoder(canonical_points, layers: list[MaxSubLayer], training: bool) -> Tensor:
    """Point-set encoder: stacked max-subtraction layers with batch norm and
    ReLU, max-pooled over each part's points into one feature row per part.
    """
    x = canonical_points if isinstance(canonical_points, Tensor) else Tensor(canonical_points)
    for layer in layers:
        y = maxsub_pointlayer(x, layer.W, layer.b, layer.lam)
        p, n, f = y.shape
        flat = reshape(y, (p * n, f))
        flat = relu(batch_norm(flat, layer.bn, training))
        x = reshape(flat, (p, n, f))
    return tmax(x, axis=1)


def mlp(x, layers: list[AffineLayer]) -> Tensor:
    """Affine stack with ReLU between layers (none after the last)."""
    for i, layer in enumerate(layers):
        x = affine(x, layer.W, layer.b)
        if i + 1 < len(layers):
            x = relu(x)
    return x

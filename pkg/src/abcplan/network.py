"""Minimal self-contained convolutional policy network (numpy only).

Architecture: two 2x2 valid convolutions (stride 1) with ReLU, then three
fully connected layers ending in a 5-way softmax over the action set. All
math is float64; gradients come from a hand-written backward pass that is
checked against central finite differences.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

MAGIC = b"ABCNN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<10I")
_META = struct.Struct("<QQ")


class ModelFormatError(ValueError):
    """Base class for model file parse failures."""


class ModelMagicError(ModelFormatError):
    pass


class ModelVersionError(ModelFormatError):
    pass


class ModelTruncatedError(ModelFormatError):
    pass


class ModelParamCountError(ModelFormatError):
    pass


@dataclass(frozen=True)
class NetworkArch:
    """Shape of the policy network for one grid domain."""

    in_channels: int
    height: int
    width: int
    conv_filters: tuple[int, int] = (16, 16)
    fc_sizes: tuple[int, int, int] = (64, 16, 5)

    def __post_init__(self):
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if self.height < 3 or self.width < 3:
            raise ValueError("two 2x2 valid convolutions need height, width >= 3")
        if len(self.conv_filters) != 2 or any(f < 1 for f in self.conv_filters):
            raise ValueError("conv_filters must be two positive counts")
        if len(self.fc_sizes) != 3 or any(d < 1 for d in self.fc_sizes):
            raise ValueError("fc_sizes must be three positive sizes")
        if self.fc_sizes[-1] != 5:
            raise ValueError("the output layer must have exactly 5 units")

    @property
    def conv_out(self) -> tuple[int, int]:
        return self.height - 2, self.width - 2

    @property
    def flat_size(self) -> int:
        oh, ow = self.conv_out
        return self.conv_filters[1] * oh * ow

    def shapes(self) -> list[tuple[int, ...]]:
        f1, f2 = self.conv_filters
        d1, d2, d3 = self.fc_sizes
        return [
            (f1, self.in_channels, 2, 2), (f1,),
            (f2, f1, 2, 2), (f2,),
            (d1, self.flat_size), (d1,),
            (d2, d1), (d2,),
            (d3, d2), (d3,),
        ]

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes())


@dataclass(frozen=True)
class PolicyModel:
    """Architecture plus weights plus training provenance."""

    arch: NetworkArch
    params: tuple[np.ndarray, ...]
    generation: int = 0
    agent_id: int = 0
    seed: int = 0

    def flat_weights(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def with_params(self, params) -> "PolicyModel":
        return replace(self, params=tuple(params))


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators, aligned with the model's params."""

    step: int
    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_weights(arch: NetworkArch, seed: int) -> PolicyModel:
    """Uniform(-b, b) weights with b = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    params = []
    for shape in arch.shapes():
        if len(shape) == 1:
            params.append(np.zeros(shape))
        elif len(shape) == 4:
            f, c, kh, kw = shape
            fan_in = c * kh * kw
            fan_out = f * kh * kw
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            params.append(rng.uniform(-bound, bound, size=shape))
        else:
            out, inp = shape
            bound = math.sqrt(6.0 / (inp + out))
            params.append(rng.uniform(-bound, bound, size=shape))
    return PolicyModel(arch=arch, params=tuple(params), seed=seed)


def init_adam(model: PolicyModel, learning_rate: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    zeros = tuple(np.zeros_like(p) for p in model.params)
    return AdamState(0, zeros, tuple(np.zeros_like(p) for p in model.params),
                     learning_rate, beta1, beta2, epsilon)


def _im2col(x: np.ndarray) -> np.ndarray:
    # (B, C, H, W) -> (B, C*4, H-1, W-1) stacking the four 2x2 kernel offsets
    # in (channel, row-offset, col-offset) order, matching W.reshape(F, C*4).
    v00 = x[:, :, :-1, :-1]
    v01 = x[:, :, :-1, 1:]
    v10 = x[:, :, 1:, :-1]
    v11 = x[:, :, 1:, 1:]
    b, c, oh, ow = v00.shape
    return np.stack((v00, v01, v10, v11), axis=2).reshape(b, c * 4, oh, ow)


def _col2im(dcols: np.ndarray, h: int, w: int) -> np.ndarray:
    b, c4, oh, ow = dcols.shape
    c = c4 // 4
    dcols = dcols.reshape(b, c, 4, oh, ow)
    dx = np.zeros((b, c, h, w))
    dx[:, :, :-1, :-1] += dcols[:, :, 0]
    dx[:, :, :-1, 1:] += dcols[:, :, 1]
    dx[:, :, 1:, :-1] += dcols[:, :, 2]
    dx[:, :, 1:, 1:] += dcols[:, :, 3]
    return dx


def _forward_batch(params, X):
    W1, b1, W2, b2, Wf1, bf1, Wf2, bf2, Wf3, bf3 = params
    B = X.shape[0]
    c1 = _im2col(X)
    z1 = np.einsum("fk,bkhw->bfhw", W1.reshape(W1.shape[0], -1), c1) + b1[:, None, None]
    a1 = np.maximum(z1, 0.0)
    c2 = _im2col(a1)
    z2 = np.einsum("fk,bkhw->bfhw", W2.reshape(W2.shape[0], -1), c2) + b2[:, None, None]
    a2 = np.maximum(z2, 0.0)
    flat = a2.reshape(B, -1)
    z3 = flat @ Wf1.T + bf1
    a3 = np.maximum(z3, 0.0)
    z4 = a3 @ Wf2.T + bf2
    a4 = np.maximum(z4, 0.0)
    z5 = a4 @ Wf3.T + bf3
    shifted = z5 - z5.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(log_probs)
    cache = (X, c1, z1, a1, c2, z2, a2, flat, z3, a3, z4, a4, probs, log_probs)
    return probs, cache


def _backward_batch(params, cache, labels):
    W1, b1, W2, b2, Wf1, bf1, Wf2, bf2, Wf3, bf3 = params
    X, c1, z1, a1, c2, z2, a2, flat, z3, a3, z4, a4, probs, _ = cache
    B = X.shape[0]
    dz5 = probs.copy()
    dz5[np.arange(B), labels] -= 1.0
    dz5 /= B
    dWf3 = dz5.T @ a4
    dbf3 = dz5.sum(axis=0)
    da4 = dz5 @ Wf3
    dz4 = da4 * (z4 > 0)
    dWf2 = dz4.T @ a3
    dbf2 = dz4.sum(axis=0)
    da3 = dz4 @ Wf2
    dz3 = da3 * (z3 > 0)
    dWf1 = dz3.T @ flat
    dbf1 = dz3.sum(axis=0)
    dflat = dz3 @ Wf1
    da2 = dflat.reshape(a2.shape)
    dz2 = da2 * (z2 > 0)
    dW2 = np.einsum("bfhw,bkhw->fk", dz2, c2).reshape(W2.shape)
    db2 = dz2.sum(axis=(0, 2, 3))
    dc2 = np.einsum("fk,bfhw->bkhw", W2.reshape(W2.shape[0], -1), dz2)
    da1 = _col2im(dc2, a1.shape[2], a1.shape[3])
    dz1 = da1 * (z1 > 0)
    dW1 = np.einsum("bfhw,bkhw->fk", dz1, c1).reshape(W1.shape)
    db1 = dz1.sum(axis=(0, 2, 3))
    return [dW1, db1, dW2, db2, dWf1, dbf1, dWf2, dbf2, dWf3, dbf3]


def forward(model: PolicyModel, encoded: np.ndarray) -> np.ndarray:
    """Action probabilities (length 5, non-negative, summing to one)."""
    x = np.asarray(encoded, dtype=float)
    if x.shape != (model.arch.in_channels, model.arch.height, model.arch.width):
        raise ValueError(
            f"input shape {x.shape} does not match arch "
            f"({model.arch.in_channels}, {model.arch.height}, {model.arch.width})"
        )
    probs, _ = _forward_batch(model.params, x[None])
    return probs[0]


def forward_batch(model: PolicyModel, X: np.ndarray) -> np.ndarray:
    """Batched action probabilities, shape (B, 5)."""
    probs, _ = _forward_batch(model.params, np.asarray(X, dtype=float))
    return probs


def policy_logits(model: PolicyModel, encoded: np.ndarray) -> np.ndarray:
    """Pre-softmax action scores for one encoded state.

    Softmax is monotone, so argmax over these equals argmax over the
    probabilities; this path skips batching overhead for tight loops.
    """
    W1, b1, W2, b2, Wf1, bf1, Wf2, bf2, Wf3, bf3 = model.params
    x = encoded
    cols = np.stack(
        (x[:, :-1, :-1], x[:, :-1, 1:], x[:, 1:, :-1], x[:, 1:, 1:]), axis=1
    )
    c, _, oh, ow = cols.shape
    z = W1.reshape(W1.shape[0], -1) @ cols.reshape(c * 4, oh * ow) + b1[:, None]
    a = np.maximum(z, 0.0).reshape(W1.shape[0], oh, ow)
    cols = np.stack(
        (a[:, :-1, :-1], a[:, :-1, 1:], a[:, 1:, :-1], a[:, 1:, 1:]), axis=1
    )
    c, _, oh, ow = cols.shape
    z = W2.reshape(W2.shape[0], -1) @ cols.reshape(c * 4, oh * ow) + b2[:, None]
    h = np.maximum(Wf1 @ np.maximum(z, 0.0).ravel() + bf1, 0.0)
    h = np.maximum(Wf2 @ h + bf2, 0.0)
    return Wf3 @ h + bf3


def loss_and_grads(params, X, labels):
    """Mean cross-entropy of the batch and its gradient per parameter array."""
    probs, cache = _forward_batch(params, X)
    B = X.shape[0]
    loss = -float(cache[-1][np.arange(B), labels].mean())
    grads = _backward_batch(params, cache, labels)
    return loss, grads


def adam_update(params, grads, opt: AdamState):
    """One functional Adam step. Returns (new_params, new_opt)."""
    t = opt.step + 1
    b1 = opt.beta1
    b2 = opt.beta2
    lr = opt.learning_rate
    eps = opt.epsilon
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params = []
    new_m = []
    new_v = []
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_m.append(m)
        new_v.append(v)
        new_params.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps))
    return tuple(new_params), AdamState(t, tuple(new_m), tuple(new_v), lr, b1, b2, eps)


def training_step(model: PolicyModel, opt: AdamState, batch):
    """One gradient step on a batch of (encoded_state, action) pairs.

    batch may be a list of pairs or an (X, labels) array tuple. Pure in its
    inputs: returns (new_model, new_opt, loss).
    """
    if isinstance(batch, tuple):
        X, labels = batch
    else:
        X = np.stack([np.asarray(x, dtype=float) for x, _ in batch])
        labels = np.asarray([a for _, a in batch], dtype=np.int64)
    loss, grads = loss_and_grads(model.params, X, labels)
    new_params, new_opt = adam_update(model.params, grads, opt)
    return model.with_params(new_params), new_opt, loss


def gradient_check(model: PolicyModel, sample, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    sample is one (encoded_state, action) pair. The relative error for each
    coordinate is |a - n| / max(1e-12, |a| + |n|).
    """
    x, label = sample
    X = np.asarray(x, dtype=float)[None]
    labels = np.asarray([label], dtype=np.int64)
    _, grads = loss_and_grads(model.params, X, labels)
    params = [p.copy() for p in model.params]
    worst = 0.0
    for idx, p in enumerate(params):
        flat = p.ravel()
        g_flat = grads[idx].ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            lp, _ = _forward_batch(params, X)
            loss_plus = -math.log(lp[0, label])
            flat[j] = orig - epsilon
            lm, _ = _forward_batch(params, X)
            loss_minus = -math.log(lm[0, label])
            flat[j] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
            analytic = g_flat[j]
            err = abs(analytic - numeric) / max(1e-12, abs(analytic) + abs(numeric))
            if err > worst:
                worst = err
    return worst


def save_model(model: PolicyModel, path) -> None:
    """Write the binary model file (see load_model for the layout)."""
    arch = model.arch
    weights = model.flat_weights()
    blob = b"".join(
        (
            MAGIC,
            bytes([FORMAT_VERSION]),
            _HEADER.pack(
                arch.in_channels, arch.height, arch.width,
                arch.conv_filters[0], arch.conv_filters[1],
                arch.fc_sizes[0], arch.fc_sizes[1], arch.fc_sizes[2],
                model.generation, model.agent_id,
            ),
            _META.pack(model.seed & (2**64 - 1), weights.size),
            weights.astype("<f8").tobytes(),
        )
    )
    with open(path, "wb") as fh:
        fh.write(blob)


def load_model(path) -> PolicyModel:
    """Read a model file written by save_model.

    Layout: 5-byte magic "ABCNN", one version byte, ten little-endian u32
    fields (in_channels, height, width, conv1_filters, conv2_filters, fc1,
    fc2, fc3, generation, agent_id), u64 seed, u64 parameter count, then the
    parameters as little-endian f64 in layer order (conv kernels in filter,
    channel, row, column order, then biases; fc matrices row-major, then
    biases). Each failure mode raises its own error type.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC):
        raise ModelTruncatedError(f"file has {len(data)} bytes, shorter than the magic")
    if data[: len(MAGIC)] != MAGIC:
        raise ModelMagicError(f"bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    if len(data) < len(MAGIC) + 1:
        raise ModelTruncatedError("file ends before the version byte")
    version = data[len(MAGIC)]
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"unsupported format version {version}, expected {FORMAT_VERSION}")
    offset = len(MAGIC) + 1
    header_end = offset + _HEADER.size + _META.size
    if len(data) < header_end:
        raise ModelTruncatedError(
            f"file has {len(data)} bytes, header needs {header_end}"
        )
    fields = _HEADER.unpack_from(data, offset)
    seed, count = _META.unpack_from(data, offset + _HEADER.size)
    in_channels, height, width, f1, f2, d1, d2, d3, generation, agent_id = fields
    try:
        arch = NetworkArch(
            in_channels=in_channels, height=height, width=width,
            conv_filters=(f1, f2), fc_sizes=(d1, d2, d3),
        )
    except ValueError as exc:
        raise ModelFormatError(f"invalid architecture header: {exc}") from exc
    if count != arch.param_count:
        raise ModelParamCountError(
            f"header claims {count} parameters, architecture needs {arch.param_count}"
        )
    expected = header_end + 8 * count
    if len(data) != expected:
        raise ModelTruncatedError(
            f"expected {expected} bytes for {count} parameters, file has {len(data)}"
        )
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=header_end).astype(float)
    params = []
    pos = 0
    for shape in arch.shapes():
        size = int(np.prod(shape))
        params.append(flat[pos : pos + size].reshape(shape).copy())
        pos += size
    return PolicyModel(
        arch=arch, params=tuple(params),
        generation=generation, agent_id=agent_id, seed=seed,
    )

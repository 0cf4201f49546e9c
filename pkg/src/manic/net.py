"""Feed-forward approximator with manual backpropagation.

Every trainable mapping in the agent (transition, decoder, encoder,
contentment) is an instance of the same tiny MLP: tanh hidden layers,
identity output, float64 parameters, deterministic init from a seed.
Loss convention everywhere is 0.5 * ||target - forward(input)||^2.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DivergedError,
    FormatError,
    NumericError,
    ShapeError,
    TopologyError,
)

MODEL_MAGIC = b"MNCM"
MODEL_VERSION = 1


class Approximator:
    """Fully-connected tanh network; parameters are plain float64 arrays.

    weights[l] has shape (layer_sizes[l+1], layer_sizes[l]); biases[l] has
    length layer_sizes[l+1]. The output layer is linear.
    """

    def __init__(self, layer_sizes: Sequence[int], weights, biases, rng_seed: int = 0):
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.weights = weights
        self.biases = biases
        self.rng_seed = int(rng_seed)

    # -- evaluation ---------------------------------------------------------

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def _check_input(self, x: np.ndarray, name: str = "input") -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.in_dim,):
            raise ShapeError(f"{name} has shape {x.shape}, expected ({self.in_dim},)")
        if not np.all(np.isfinite(x)):
            raise NumericError(f"{name} contains non-finite values")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the network on a single input vector."""
        a = self._check_input(x)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(w @ a + b)
        return self.weights[-1] @ a + self.biases[-1]

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        """Evaluate a batch laid out column-wise: x is (in_dim, n).

        Fast path for training and internal sweeps. Results can differ from
        per-sample forward() in the last float bits (BLAS accumulation
        order), so contracts that demand bit-equality must use forward().
        """
        a = np.asarray(x, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != self.in_dim:
            raise ShapeError(f"batch has shape {a.shape}, expected ({self.in_dim}, n)")
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(w @ a + b[:, None])
        return self.weights[-1] @ a + self.biases[-1][:, None]

    # -- gradients ----------------------------------------------------------

    def _forward_trace(self, x: np.ndarray) -> list[np.ndarray]:
        acts = [x]
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(w @ a + b)
            acts.append(a)
        acts.append(self.weights[-1] @ a + self.biases[-1])
        return acts

    def backprop(self, x: np.ndarray, output_grad: np.ndarray):
        """Backpropagate an arbitrary loss gradient at the output.

        Returns (weight_grads, bias_grads, input_grad). Parameters are not
        modified; callers decide what to do with the gradients.
        """
        x = self._check_input(x)
        acts = self._forward_trace(x)
        delta = np.asarray(output_grad, dtype=np.float64)
        if delta.shape != (self.out_dim,):
            raise ShapeError(f"output_grad has shape {delta.shape}, expected ({self.out_dim},)")
        w_grads = [None] * len(self.weights)
        b_grads = [None] * len(self.weights)
        for l in range(len(self.weights) - 1, -1, -1):
            w_grads[l] = np.outer(delta, acts[l])
            b_grads[l] = delta
            delta = self.weights[l].T @ delta
            if l > 0:
                delta = delta * (1.0 - acts[l] ** 2)
        return w_grads, b_grads, delta

    def backprop_batch(self, x: np.ndarray, output_grad: np.ndarray):
        """Batched backprop; x is (in_dim, n), output_grad is (out_dim, n).

        Returns (weight_grads, bias_grads, input_grads) where the parameter
        gradients are summed over the batch and input_grads is (in_dim, n).
        """
        a = np.asarray(x, dtype=np.float64)
        acts = [a]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(w @ a + b[:, None])
            acts.append(a)
        acts.append(self.weights[-1] @ a + self.biases[-1][:, None])
        delta = np.asarray(output_grad, dtype=np.float64)
        w_grads = [None] * len(self.weights)
        b_grads = [None] * len(self.weights)
        for l in range(len(self.weights) - 1, -1, -1):
            w_grads[l] = delta @ acts[l].T
            b_grads[l] = delta.sum(axis=1)
            delta = self.weights[l].T @ delta
            if l > 0:
                delta = delta * (1.0 - acts[l] ** 2)
        return w_grads, b_grads, delta

    def input_gradient(self, x: np.ndarray, target: np.ndarray) -> np.ndarray:
        """Gradient of 0.5*||target - forward(x)||^2 w.r.t. the input."""
        target = np.asarray(target, dtype=np.float64)
        if target.shape != (self.out_dim,):
            raise ShapeError(f"target has shape {target.shape}, expected ({self.out_dim},)")
        y = self.forward(x)
        _, _, g_in = self.backprop(x, y - target)
        return g_in

    # -- training -----------------------------------------------------------

    def train_step(self, x: np.ndarray, target: np.ndarray, learning_rate: float) -> float:
        """One SGD step on 0.5*||target - forward(x)||^2; returns the loss
        measured before the update."""
        if learning_rate <= 0.0:
            raise ShapeError("learning_rate must be positive")
        target = np.asarray(target, dtype=np.float64)
        if target.shape != (self.out_dim,):
            raise ShapeError(f"target has shape {target.shape}, expected ({self.out_dim},)")
        x = self._check_input(x)
        acts = self._forward_trace(x)
        residual = acts[-1] - target
        loss = 0.5 * float(residual @ residual)
        if not np.isfinite(loss):
            raise DivergedError("loss is non-finite; parameters left unchanged")
        delta = residual
        for l in range(len(self.weights) - 1, -1, -1):
            w_grad = np.outer(delta, acts[l])
            b_grad = delta
            if l > 0:
                delta = (self.weights[l].T @ delta) * (1.0 - acts[l] ** 2)
            self.weights[l] -= learning_rate * w_grad
            self.biases[l] -= learning_rate * b_grad
        return loss

    def train_batch(self, x: np.ndarray, target: np.ndarray, learning_rate: float) -> float:
        """One SGD step on the mean per-sample loss over a column batch.

        x is (in_dim, n), target is (out_dim, n). Returns the mean
        pre-update loss. Gradients are averaged, so the step size is
        independent of the batch size.
        """
        if learning_rate <= 0.0:
            raise ShapeError("learning_rate must be positive")
        y = self.forward_batch(x)
        t = np.asarray(target, dtype=np.float64)
        if t.shape != y.shape:
            raise ShapeError(f"target has shape {t.shape}, expected {y.shape}")
        residual = y - t
        n = x.shape[1]
        loss = 0.5 * float(np.sum(residual * residual)) / n
        if not np.isfinite(loss):
            raise DivergedError("loss is non-finite; parameters left unchanged")
        w_grads, b_grads, _ = self.backprop_batch(x, residual / n)
        for l in range(len(self.weights)):
            self.weights[l] -= learning_rate * w_grads[l]
            self.biases[l] -= learning_rate * b_grads[l]
        return loss

    # -- parameter plumbing --------------------------------------------------

    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_flat_params(self) -> np.ndarray:
        """Concatenate all parameters (per layer: weights row-major, then
        biases) into one vector."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.num_params(),):
            raise ShapeError(f"expected {self.num_params()} parameters, got {flat.shape}")
        pos = 0
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[l] = flat[pos:pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[l] = flat[pos:pos + b.size].copy()
            pos += b.size

    def copy(self) -> "Approximator":
        return Approximator(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.rng_seed,
        )

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for w, b in zip(self.weights, self.biases):
            h.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
            h.update(np.ascontiguousarray(b, dtype="<f8").tobytes())
        return h.hexdigest()

    # -- serialization -------------------------------------------------------

    def save(self, path) -> None:
        """Write the binary model file (authoritative format)."""
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(struct.pack("<II", MODEL_VERSION, len(self.layer_sizes)))
            fh.write(struct.pack(f"<{len(self.layer_sizes)}I", *self.layer_sizes))
            for w, b in zip(self.weights, self.biases):
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())

    def to_json_dict(self) -> dict:
        """Debug-friendly mirror of the binary format (text rounding only)."""
        return {
            "format": "MNCM",
            "version": MODEL_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))


def init_network(layer_sizes: Sequence[int], seed: int) -> Approximator:
    """Build a network with weights uniform in +-1/sqrt(fan_in), biases zero.

    The draw is deterministic in the seed: same seed, same parameters.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise TopologyError(f"need at least 2 layers, got {sizes}")
    if any(s < 1 for s in sizes):
        raise TopologyError(f"all layer sizes must be >= 1, got {sizes}")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        r = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-r, r, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Approximator(sizes, weights, biases, rng_seed=seed)


class AdamTrainer:
    """Adam over one Approximator's parameters, fed with column batches.

    train_step stays plain SGD per its contract; this exists for the bulk
    supervised fits where plain SGD's feature learning is too slow to be
    usable (the decoder's sharp edges, notably).
    """

    def __init__(self, net: Approximator, lr: float = 3e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.net = net
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m_w = [np.zeros_like(w) for w in net.weights]
        self.v_w = [np.zeros_like(w) for w in net.weights]
        self.m_b = [np.zeros_like(b) for b in net.biases]
        self.v_b = [np.zeros_like(b) for b in net.biases]

    def scale_rate(self, k: float) -> None:
        self.lr *= k

    def step(self, x: np.ndarray, target: np.ndarray) -> float:
        """One update on the mean loss over a column batch; returns the
        pre-update mean loss."""
        net = self.net
        y = net.forward_batch(x)
        t = np.asarray(target, dtype=np.float64)
        if t.shape != y.shape:
            raise ShapeError(f"target has shape {t.shape}, expected {y.shape}")
        residual = y - t
        n = x.shape[1]
        loss = 0.5 * float(np.sum(residual * residual)) / n
        if not np.isfinite(loss):
            raise DivergedError("loss is non-finite; parameters left unchanged")
        w_grads, b_grads, _ = net.backprop_batch(x, residual / n)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for l in range(len(w_grads)):
            self.m_w[l] = self.beta1 * self.m_w[l] + (1 - self.beta1) * w_grads[l]
            self.v_w[l] = self.beta2 * self.v_w[l] + (1 - self.beta2) * w_grads[l] ** 2
            net.weights[l] -= self.lr * (self.m_w[l] / c1) / (np.sqrt(self.v_w[l] / c2) + self.eps)
            self.m_b[l] = self.beta1 * self.m_b[l] + (1 - self.beta1) * b_grads[l]
            self.v_b[l] = self.beta2 * self.v_b[l] + (1 - self.beta2) * b_grads[l] ** 2
            net.biases[l] -= self.lr * (self.m_b[l] / c1) / (np.sqrt(self.v_b[l] / c2) + self.eps)
        return loss


class SgdTrainer:
    """Batched plain-SGD counterpart of AdamTrainer (same interface)."""

    def __init__(self, net: Approximator, rate: float):
        self.net = net
        self.rate = rate

    def scale_rate(self, k: float) -> None:
        self.rate *= k

    def step(self, x: np.ndarray, target: np.ndarray) -> float:
        return self.net.train_batch(x, target, self.rate)


def load_model(path) -> Approximator:
    """Read the binary model file written by Approximator.save()."""
    raw = Path(path).read_bytes()
    if raw[:4] != MODEL_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r} in {path}")
    version, n_layers = struct.unpack_from("<II", raw, 4)
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}")
    sizes = list(struct.unpack_from(f"<{n_layers}I", raw, 12))
    if n_layers < 2 or any(s < 1 for s in sizes):
        raise FormatError(f"invalid stored topology {sizes}")
    pos = 12 + 4 * n_layers
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(raw, dtype="<f8", count=fan_out * fan_in, offset=pos)
        pos += 8 * fan_out * fan_in
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=pos)
        pos += 8 * fan_out
        weights.append(w.reshape(fan_out, fan_in).copy())
        biases.append(b.copy())
    if pos != len(raw):
        raise FormatError(f"trailing bytes in model file {path}")
    return Approximator(sizes, weights, biases, rng_seed=0)

"""Small MLP with hand-written backprop.

Hidden layers are rectified-linear, the output layer is identity. All
weights and biases live in one flat float64 vector so optimizers can treat
the model as an opaque parameter vector; per-layer matrices are views into
that buffer.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng

LOSSES = ("squared_error", "cross_entropy")


@dataclass
class DomainBatch:
    """One domain's minibatch: inputs (B x d), labels, and the domain id."""

    inputs: np.ndarray
    labels: np.ndarray
    domain_id: int = 0

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError("inputs must be a nonempty B x d matrix")
        labels = np.asarray(self.labels)
        if labels.ndim == 1:
            self.labels = labels.astype(np.int64)
        else:
            self.labels = labels.astype(np.float64)
        if self.labels.shape[0] != self.inputs.shape[0]:
            raise ValueError("inputs and labels row counts differ")


class MlpModel:
    """ReLU MLP over a flat parameter vector.

    layer_dims lists input width, hidden widths, and output width; loss is
    selected at construction and fixed for the model's lifetime.
    """

    def __init__(self, layer_dims, loss="squared_error", rng=None):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError("layer_dims needs >= 2 positive entries")
        if loss not in LOSSES:
            raise ValueError("unknown loss %r" % (loss,))
        self.layer_dims = dims
        self.loss = loss
        self.param_count = sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))
        self.theta = np.zeros(self.param_count)
        self._weights = []
        self._biases = []
        offset = 0
        for i in range(len(dims) - 1):
            fan_in, fan_out = dims[i], dims[i + 1]
            self._weights.append(self.theta[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out))
            offset += fan_in * fan_out
            self._biases.append(self.theta[offset : offset + fan_out])
            offset += fan_out
        if rng is not None:
            self.init_params(rng)

    def init_params(self, rng: Rng) -> None:
        """Uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)) init for weights and biases."""
        for w, b in zip(self._weights, self._biases):
            bound = 1.0 / math.sqrt(w.shape[0])
            w[:] = (2.0 * rng.uniform(w.size).reshape(w.shape) - 1.0) * bound
            b[:] = (2.0 * rng.uniform(b.size) - 1.0) * bound

    def get_params(self) -> np.ndarray:
        return self.theta.copy()

    def set_params(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.param_count,):
            raise ValueError("parameter vector has wrong length")
        self.theta[:] = vec

    def _forward_cached(self, inputs):
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[1] != self.layer_dims[0]:
            raise ValueError("inputs must be B x %d" % self.layer_dims[0])
        acts = [inputs]
        pre = []
        h = inputs
        last = len(self._weights) - 1
        for i, (w, b) in enumerate(zip(self._weights, self._biases)):
            z = h @ w + b
            pre.append(z)
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)
        return acts, pre

    def forward(self, inputs):
        """Return (outputs, features); features are the post-ReLU penultimate
        activations, or the raw inputs when the model has no hidden layer."""
        acts, _ = self._forward_cached(inputs)
        return acts[-1], acts[-2]

    def _output_grad(self, outputs, labels):
        """Per-batch mean-loss value and d(mean loss)/d(outputs)."""
        b = outputs.shape[0]
        if self.loss == "squared_error":
            labels = np.asarray(labels, dtype=np.float64).reshape(outputs.shape)
            resid = outputs - labels
            per_sample = 0.5 * np.sum(resid * resid, axis=1)
            return math.fsum(per_sample.tolist()) / b, resid / b
        shift = outputs - outputs.max(axis=1, keepdims=True)
        log_z = np.log(np.sum(np.exp(shift), axis=1, keepdims=True))
        log_probs = shift - log_z
        labels = np.asarray(labels)
        if labels.ndim == 1:
            onehot = np.zeros_like(outputs)
            onehot[np.arange(b), labels.astype(np.int64)] = 1.0
        else:
            onehot = labels.astype(np.float64)
        per_sample = -np.sum(onehot * log_probs, axis=1)
        return math.fsum(per_sample.tolist()) / b, (np.exp(log_probs) - onehot) / b

    def _backward(self, acts, pre, d_act, start_layer):
        """Backprop d(loss)/d(activation of start_layer) down to a flat grad."""
        grad = np.zeros(self.param_count)
        offset = 0
        slices = []
        for w in self._weights:
            slices.append((offset, offset + w.size, w.shape))
            offset += w.size
            slices.append((offset, offset + w.shape[1], None))
            offset += w.shape[1]
        last = len(self._weights) - 1
        for i in range(start_layer, -1, -1):
            d_z = d_act if i == last else d_act * (pre[i] > 0.0)
            lo, hi, shape = slices[2 * i]
            grad[lo:hi] = (acts[i].T @ d_z).reshape(-1)
            lo, hi, _ = slices[2 * i + 1]
            grad[lo:hi] = d_z.sum(axis=0)
            d_act = d_z @ self._weights[i].T
        return grad

    def loss_and_grad(self, batch: DomainBatch):
        acts, pre = self._forward_cached(batch.inputs)
        value, d_out = self._output_grad(acts[-1], batch.labels)
        return value, self._backward(acts, pre, d_out, len(self._weights) - 1)

    def feature_grad_to_param_grad(self, inputs, d_features):
        """Backprop a gradient w.r.t. the penultimate features into theta.

        With no hidden layer the features are the inputs, which do not
        depend on theta, so the result is the zero vector.
        """
        if len(self._weights) == 1:
            return np.zeros(self.param_count)
        acts, pre = self._forward_cached(inputs)
        return self._backward(acts, pre, np.asarray(d_features, dtype=np.float64), len(self._weights) - 2)


def domain_loss(model: MlpModel, batch: DomainBatch) -> float:
    """Mean per-sample loss over one domain batch."""
    outputs, _ = model.forward(batch.inputs)
    value, _ = model._output_grad(outputs, batch.labels)
    return value


def domain_grad(model: MlpModel, batch: DomainBatch) -> np.ndarray:
    """Exact gradient of domain_loss with respect to the flat parameters."""
    _, grad = model.loss_and_grad(batch)
    return grad

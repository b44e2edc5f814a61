"""Differentiable toy models: loss, stochastic gradient, and Hessian-vector products.

Three model kinds are supported on flat parameter vectors:

* ``linear-regression`` — y = X w, squared-error loss, no intercept.
* ``logistic-regression`` — C-way softmax over W x + b (final-layer bias
  included; the bias gradient is what makes exact label extraction from a
  single-sample gradient possible for every class count).
* ``mlp`` — one tanh hidden layer, then a dense output layer with bias;
  squared-error (1 output) or cross-entropy (C outputs).

Gradients are analytic for all kinds. Hessian-vector products default to a
symmetric finite difference of the gradient; linear and logistic regression
also expose an exact analytic backend.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .numeric import check_vector

MODEL_KINDS = ("linear-regression", "logistic-regression", "mlp")
LOSS_KINDS = ("squared-error", "cross-entropy")


@dataclass
class DatasetShard:
    """One participant's data: an inputs matrix and aligned targets."""

    inputs: np.ndarray
    targets: np.ndarray
    user_id: str = "user"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets)
        if self.inputs.ndim != 2:
            raise DimensionError(f"inputs must be 2-D, got shape {self.inputs.shape}")
        if self.targets.ndim != 1:
            raise DimensionError(f"targets must be 1-D, got shape {self.targets.shape}")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DimensionError(
                f"inputs rows ({self.inputs.shape[0]}) != targets length ({self.targets.shape[0]})"
            )

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices) -> "DatasetShard":
        return DatasetShard(self.inputs[indices], self.targets[indices], self.user_id)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor from which the flat parameter layout derives.

    ``layer_dims`` is (d,) for linear regression, (d, C) for logistic
    regression, and (d, hidden, out) for the MLP.
    """

    kind: str
    layer_dims: tuple[int, ...]
    loss: str

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        self._validate()

    def _validate(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}")
        dims = self.layer_dims
        if any(d < 1 for d in dims):
            raise ValueError(f"layer_dims must be positive, got {dims}")
        if self.kind == "linear-regression":
            if len(dims) != 1:
                raise ValueError("linear-regression takes layer_dims=(feature_dim,)")
            if self.loss != "squared-error":
                raise ValueError("linear-regression requires squared-error loss")
        elif self.kind == "logistic-regression":
            if len(dims) != 2 or dims[1] < 2:
                raise ValueError("logistic-regression takes layer_dims=(feature_dim, n_classes>=2)")
            if self.loss != "cross-entropy":
                raise ValueError("logistic-regression requires cross-entropy loss")
        else:  # mlp
            if len(dims) != 3:
                raise ValueError("mlp takes layer_dims=(feature_dim, hidden, out)")
            if self.loss == "squared-error" and dims[2] != 1:
                raise ValueError("mlp with squared-error needs a single output unit")
            if self.loss == "cross-entropy" and dims[2] < 2:
                raise ValueError("mlp with cross-entropy needs >= 2 output units")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_classes(self) -> int | None:
        if self.loss != "cross-entropy":
            return None
        return self.layer_dims[-1]

    @property
    def param_dim(self) -> int:
        dims = self.layer_dims
        if self.kind == "linear-regression":
            return dims[0]
        if self.kind == "logistic-regression":
            d, c = dims
            return c * d + c
        d, h, out = dims
        return h * d + h + out * h + out

    def init_params(self, rng: np.random.Generator | None = None) -> np.ndarray:
        """Initial parameters: zeros for the convex models, symmetric uniform
        fan-in scaling for the MLP (drawn from the given stream)."""
        if self.kind != "mlp":
            return np.zeros(self.param_dim)
        if rng is None:
            raise ValueError("mlp initialisation needs an RNG stream")
        d, h, out = self.layer_dims
        w1 = rng.uniform(-1.0, 1.0, (h, d)) / np.sqrt(d)
        b1 = np.zeros(h)
        w2 = rng.uniform(-1.0, 1.0, (out, h)) / np.sqrt(h)
        b2 = np.zeros(out)
        return np.concatenate([w1.ravel(), b1, w2.ravel(), b2])

    def final_layer_grad(self, grad: np.ndarray) -> np.ndarray:
        """Final-layer gradient as a (C, prev_dim + 1) matrix, bias column last.

        Only defined for cross-entropy models; this is the block label
        extraction operates on.
        """
        if self.loss != "cross-entropy":
            raise ValueError("final-layer extraction is defined for cross-entropy models")
        grad = check_vector(grad, self.param_dim, "gradient")
        if self.kind == "logistic-regression":
            d, c = self.layer_dims
            w_block = grad[: c * d].reshape(c, d)
            b_block = grad[c * d:]
        else:
            d, h, c = self.layer_dims
            off = h * d + h
            w_block = grad[off: off + c * h].reshape(c, h)
            b_block = grad[off + c * h:]
        return np.hstack([w_block, b_block[:, None]])


def _check_batch(spec: ModelSpec, w, batch: DatasetShard) -> np.ndarray:
    w = check_vector(w, spec.param_dim, "parameters")
    if batch.n_samples == 0:
        raise ValueError("batch is empty")
    if batch.feature_dim != spec.input_dim:
        raise DimensionError(
            f"batch feature dim {batch.feature_dim} != model input dim {spec.input_dim}"
        )
    return w


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _class_targets(spec: ModelSpec, targets: np.ndarray) -> np.ndarray:
    y = np.asarray(targets)
    y_int = y.astype(np.int64)
    if not np.all(y_int == y):
        raise ValueError("cross-entropy targets must be integer class indices")
    c = spec.layer_dims[-1]
    if np.any(y_int < 0) or np.any(y_int >= c):
        raise ValueError(f"class indices must lie in [0, {c})")
    return y_int


def _unpack_logistic(spec: ModelSpec, w: np.ndarray):
    d, c = spec.layer_dims
    return w[: c * d].reshape(c, d), w[c * d:]


def _unpack_mlp(spec: ModelSpec, w: np.ndarray):
    d, h, out = spec.layer_dims
    i = 0
    w1 = w[i: i + h * d].reshape(h, d); i += h * d
    b1 = w[i: i + h]; i += h
    w2 = w[i: i + out * h].reshape(out, h); i += out * h
    b2 = w[i:]
    return w1, b1, w2, b2


def loss(spec: ModelSpec, w, batch: DatasetShard) -> float:
    """Mean loss of the model over the batch (non-negative)."""
    w = _check_batch(spec, w, batch)
    x = batch.inputs
    m = batch.n_samples

    if spec.kind == "linear-regression":
        r = x @ w - np.asarray(batch.targets, dtype=np.float64)
        return float(0.5 * np.mean(r * r))

    if spec.kind == "logistic-regression":
        wmat, b = _unpack_logistic(spec, w)
        z = x @ wmat.T + b
    else:
        w1, b1, w2, b2 = _unpack_mlp(spec, w)
        a = np.tanh(x @ w1.T + b1)
        z = a @ w2.T + b2
        if spec.loss == "squared-error":
            r = z[:, 0] - np.asarray(batch.targets, dtype=np.float64)
            return float(0.5 * np.mean(r * r))

    y = _class_targets(spec, batch.targets)
    zs = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(zs).sum(axis=1))
    return float(np.mean(log_norm - zs[np.arange(m), y]))


def grad(spec: ModelSpec, w, batch: DatasetShard) -> np.ndarray:
    """Gradient of the mean batch loss with respect to the flat parameters."""
    w = _check_batch(spec, w, batch)
    x = batch.inputs
    m = batch.n_samples

    if spec.kind == "linear-regression":
        r = x @ w - np.asarray(batch.targets, dtype=np.float64)
        return x.T @ r / m

    if spec.kind == "logistic-regression":
        wmat, b = _unpack_logistic(spec, w)
        z = x @ wmat.T + b
        p = _softmax(z)
        y = _class_targets(spec, batch.targets)
        p[np.arange(m), y] -= 1.0
        k = p / m
        return np.concatenate([(k.T @ x).ravel(), k.sum(axis=0)])

    w1, b1, w2, b2 = _unpack_mlp(spec, w)
    pre = x @ w1.T + b1
    a = np.tanh(pre)
    z = a @ w2.T + b2
    if spec.loss == "squared-error":
        dz = (z[:, 0] - np.asarray(batch.targets, dtype=np.float64))[:, None] / m
    else:
        p = _softmax(z)
        y = _class_targets(spec, batch.targets)
        p[np.arange(m), y] -= 1.0
        dz = p / m
    g_w2 = dz.T @ a
    g_b2 = dz.sum(axis=0)
    da = dz @ w2
    dpre = da * (1.0 - a * a)
    g_w1 = dpre.T @ x
    g_b1 = dpre.sum(axis=0)
    return np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])


def hvp(spec: ModelSpec, w, v, batch: DatasetShard, method: str = "fd") -> np.ndarray:
    """Hessian-vector product (d^2 f(w)) v on the batch.

    ``method`` is "fd" (symmetric gradient difference, any model), "exact"
    (analytic, linear and logistic regression only), or "auto" (exact where
    available, otherwise fd).
    """
    w = _check_batch(spec, w, batch)
    v = check_vector(v, spec.param_dim, "direction")
    if method == "auto":
        method = "fd" if spec.kind == "mlp" else "exact"
    if method not in ("fd", "exact"):
        raise ValueError(f"unknown hvp method {method!r}")

    if method == "exact":
        if spec.kind == "linear-regression":
            x = batch.inputs
            return x.T @ (x @ v) / batch.n_samples
        if spec.kind == "logistic-regression":
            x = batch.inputs
            m = batch.n_samples
            wmat, b = _unpack_logistic(spec, w)
            vmat, vb = _unpack_logistic(spec, v)
            p = _softmax(x @ wmat.T + b)
            u = x @ vmat.T + vb
            s = p * (u - (p * u).sum(axis=1, keepdims=True))
            return np.concatenate([(s.T @ x).ravel() / m, s.sum(axis=0) / m])
        raise ValueError(f"exact Hessian backend unavailable for {spec.kind}")

    # Step is scale-aware so the second difference stays well conditioned.
    eps = 1e-5 * (1.0 + float(np.max(np.abs(w))))
    g_plus = grad(spec, w + eps * v, batch)
    g_minus = grad(spec, w - eps * v, batch)
    return (g_plus - g_minus) / (2.0 * eps)


def predict(spec: ModelSpec, w, inputs: np.ndarray) -> np.ndarray:
    """Model outputs: regression values, or class probabilities for cross-entropy."""
    w = check_vector(w, spec.param_dim, "parameters")
    x = np.asarray(inputs, dtype=np.float64)
    if spec.kind == "linear-regression":
        return x @ w
    if spec.kind == "logistic-regression":
        wmat, b = _unpack_logistic(spec, w)
        return _softmax(x @ wmat.T + b)
    w1, b1, w2, b2 = _unpack_mlp(spec, w)
    z = np.tanh(x @ w1.T + b1) @ w2.T + b2
    if spec.loss == "squared-error":
        return z[:, 0]
    return _softmax(z)


def evaluate(spec: ModelSpec, w, shard: DatasetShard) -> dict:
    """Test-set summary: mean loss, plus accuracy for classifiers."""
    out = {"loss": loss(spec, w, shard)}
    if spec.loss == "cross-entropy":
        p = predict(spec, w, shard.inputs)
        y = _class_targets(spec, shard.targets)
        out["accuracy"] = float(np.mean(p.argmax(axis=1) == y))
    return out

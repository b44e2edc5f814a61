"""Gradient-inversion attack harness: label extraction, dummy-data optimisation,
and the two attacker vantage points (link interceptor, curious ring member).

The inversion attack reconstructs a training input from an observed
per-sample loss gradient: extract the label from the final-layer gradient
signs, initialise dummy data from N(0, 1), and run gradient descent on
``L_G(x') = || grad(x', label) - grad_observed ||_F^2`` with step halving.
Against plain federated uploads the observed gradient belongs to one sample
and the attack converges; against the encrypted ring the attacker sees
either ciphertext (nothing to invert), a masked partial sum, or the final
aggregate over all users, and the same optimisation reconstructs noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .csahe import AheKeyPair, CipherVector, RingState, decrypt_vector
from .errors import AmbiguityError, NonFiniteError
from .models import DatasetShard, ModelSpec, grad
from .numeric import check_vector

PROVENANCE_FEDAVG_UPLOAD = "fedavg-user-upload"
PROVENANCE_INTERMEDIATE = "csahe-intermediate-decrypted"
PROVENANCE_AGGREGATE = "csahe-final-aggregate"

_STOP_LOSS = 1e-30
_MAX_HALVINGS = 20


@dataclass
class AttackTarget:
    """What the attacker holds: a reconstructed loss gradient plus public context."""

    observed_gradient: np.ndarray
    provenance: str
    model_spec: ModelSpec
    server_weights: np.ndarray
    raw_update: np.ndarray | None = None

    def __post_init__(self):
        self.observed_gradient = check_vector(
            self.observed_gradient, self.model_spec.param_dim, "observed gradient"
        )
        self.server_weights = check_vector(
            self.server_weights, self.model_spec.param_dim, "server weights"
        )


@dataclass(frozen=True)
class CiphertextObservation:
    """A message intercepted on the encrypted ring: no decryptable plaintext."""

    hop: int
    sender: int
    receiver: int
    payload: CipherVector

    @property
    def plaintext_available(self) -> bool:
        return False


@dataclass
class AttackResult:
    dummy_data: np.ndarray
    dummy_label: int
    loss_curve: np.ndarray
    reconstruction_mse: float | None
    snapshots: list[tuple[int, np.ndarray]] = field(default_factory=list)


@dataclass
class UploadRound:
    """One epoch of plaintext transport: per-user updates as sent to the server."""

    epoch: int
    server_weights: np.ndarray
    deltas: list[np.ndarray]
    beta: float
    tau: int
    model_spec: ModelSpec

    @classmethod
    def from_history(cls, history, epoch: int) -> "UploadRound":
        if history.uploads is None:
            raise ValueError("this run used encrypted transport; there are no plaintext uploads")
        cfg = history.config
        return cls(
            epoch=epoch,
            server_weights=history.server_model_before(epoch),
            deltas=history.uploads[epoch],
            beta=cfg.beta,
            tau=cfg.local_epochs,
            model_spec=cfg.model,
        )


def extract_label(gradient, spec: ModelSpec) -> int:
    """Recover the ground-truth class from a single-sample cross-entropy gradient.

    The final-layer gradient of one sample is rank one: every class row is
    the shared activation direction scaled by (p_i - [i == label]), and the
    bias coordinate pins the direction's orientation. Exactly one row has a
    strictly negative inner product with that direction; its index is the
    label. Anything that breaks the rank-one structure (multi-sample batches,
    an all-zero gradient) raises AmbiguityError.

    Binary caveat: with exactly two classes the two rows are exact negatives
    of each other for every batch, so a mixed-label pair is indistinguishable
    from some single sample and cannot be flagged; detection of multi-sample
    batches is reliable from three classes up.
    """
    block = spec.final_layer_grad(gradient)
    norm = float(np.linalg.norm(block))
    if norm == 0.0:
        raise AmbiguityError("all-zero gradient carries no label information")
    kappa = block[:, -1]
    anchor = int(np.argmax(np.abs(kappa)))
    if kappa[anchor] == 0.0:
        raise AmbiguityError("final-layer bias gradient is zero; no orientation")
    direction = block[anchor] / kappa[anchor]
    residual = float(np.linalg.norm(block - np.outer(kappa, direction))) / norm
    if residual > 1e-8:
        raise AmbiguityError(
            f"final-layer gradient is not rank one (residual {residual:.2e}); "
            "this is not a single-sample gradient"
        )
    scores = block @ direction
    negatives = np.flatnonzero(scores < -1e-12 * float(np.max(np.abs(scores))))
    if negatives.size != 1:
        raise AmbiguityError(f"{negatives.size} candidate rows instead of 1")
    return int(negatives[0])


def _guess_label(gradient, spec: ModelSpec) -> int:
    """Best-effort label when extraction is ambiguous: most negative bias gradient."""
    kappa = spec.final_layer_grad(gradient)[:, -1]
    return int(np.argmin(kappa))


def _target_loss(spec: ModelSpec, weights, x, label, g_obs) -> float:
    batch = DatasetShard(x[None, :], np.array([label]), "dummy")
    diff = grad(spec, weights, batch) - g_obs
    return float(diff @ diff)


def _loss_grad_logistic(spec: ModelSpec, weights, x, label, g_obs) -> np.ndarray:
    d, c = spec.layer_dims
    wmat = weights[: c * d].reshape(c, d)
    b = weights[c * d:]
    gw_obs = g_obs[: c * d].reshape(c, d)
    gb_obs = g_obs[c * d:]

    z = wmat @ x + b
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    kappa = p.copy()
    kappa[label] -= 1.0

    err_w = np.outer(kappa, x) - gw_obs
    err_b = kappa - gb_obs
    v = err_w @ x + err_b
    jac_v = p * v - p * float(p @ v)  # (diag(p) - p p^T) v
    return 2.0 * (err_w.T @ kappa + wmat.T @ jac_v)


def _loss_grad_fd(spec: ModelSpec, weights, x, label, g_obs) -> np.ndarray:
    eps = 1e-6 * (1.0 + float(np.max(np.abs(x))))
    out = np.empty_like(x)
    for j in range(x.size):
        x_plus = x.copy(); x_plus[j] += eps
        x_minus = x.copy(); x_minus[j] -= eps
        out[j] = (
            _target_loss(spec, weights, x_plus, label, g_obs)
            - _target_loss(spec, weights, x_minus, label, g_obs)
        ) / (2.0 * eps)
    return out


def idlg_attack(target: AttackTarget, *, iterations: int = 5000, eta: float = 0.1,
                rng: np.random.Generator | None = None, x0=None,
                true_samples=None, snapshot_every: int | None = None) -> AttackResult:
    """Reconstruct dummy data matching the observed gradient.

    Plain gradient descent on the gradient-matching loss, halving the step up
    to 20 times whenever it would increase the loss, so the recorded curve is
    non-increasing. Raises NonFiniteError if every halved step still lands on
    a non-finite loss.
    """
    if not isinstance(target, AttackTarget):
        raise TypeError(
            f"attack needs an AttackTarget with a plaintext gradient, got {type(target).__name__}"
        )
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if eta <= 0:
        raise ValueError("eta must be positive")
    spec = target.model_spec
    if spec.loss != "cross-entropy":
        raise ValueError("the inversion attack is defined for cross-entropy classifiers")

    g_obs = target.observed_gradient
    try:
        label = extract_label(g_obs, spec)
    except AmbiguityError:
        label = _guess_label(g_obs, spec)

    if x0 is not None:
        x = check_vector(x0, spec.input_dim, "dummy init").copy()
    else:
        if rng is None:
            raise ValueError("either x0 or an RNG stream is required")
        x = rng.normal(0.0, 1.0, spec.input_dim)

    weights = target.server_weights
    analytic = spec.kind == "logistic-regression"
    loss_grad = _loss_grad_logistic if analytic else _loss_grad_fd

    curve = []
    snapshots: list[tuple[int, np.ndarray]] = []
    current = _target_loss(spec, weights, x, label, g_obs)
    if not math.isfinite(current):
        raise NonFiniteError("gradient-matching loss is non-finite at initialisation")

    for it in range(iterations):
        curve.append(current)
        if snapshot_every and it % snapshot_every == 0:
            snapshots.append((it, x.copy()))
        if current <= _STOP_LOSS:
            break
        g = loss_grad(spec, weights, x, label, g_obs)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("gradient of the matching loss became non-finite")
        step = eta
        accepted = False
        saw_finite = False
        for _ in range(_MAX_HALVINGS + 1):
            candidate = x - step * g
            value = _target_loss(spec, weights, candidate, label, g_obs)
            if math.isfinite(value):
                saw_finite = True
                if value <= current:
                    x, current = candidate, value
                    accepted = True
                    break
            step *= 0.5
        if not accepted and not saw_finite:
            raise NonFiniteError("dummy-data optimisation diverged after 20 halvings")
        # A finite but non-improving step leaves the iterate in place.

    mse = None
    if true_samples is not None:
        candidates = np.atleast_2d(np.asarray(true_samples, dtype=np.float64))
        mse = float(min(np.mean((x - s) ** 2) for s in candidates))

    return AttackResult(
        dummy_data=x,
        dummy_label=label,
        loss_curve=np.array(curve),
        reconstruction_mse=mse,
        snapshots=snapshots,
    )


def intercept(source, hop: int):
    """Observe one transmitted message as a type-I (link) attacker.

    Plaintext federated uploads yield a full AttackTarget: the per-user loss
    gradient is read off the transmitted update (exact when tau = 1, since
    the update is then -beta times one gradient). Ring messages yield only a
    ciphertext observation.
    """
    if isinstance(source, RingState):
        if not 0 <= hop < len(source.trace):
            raise IndexError(f"hop {hop} outside trace of length {len(source.trace)}")
        msg = source.trace[hop]
        return CiphertextObservation(hop, msg.sender, msg.receiver, msg.payload)
    if isinstance(source, UploadRound):
        if not 0 <= hop < len(source.deltas):
            raise IndexError(f"hop {hop} outside {len(source.deltas)} uploads")
        delta = source.deltas[hop]
        return AttackTarget(
            observed_gradient=-delta / source.beta,
            provenance=PROVENANCE_FEDAVG_UPLOAD,
            model_spec=source.model_spec,
            server_weights=source.server_weights,
            raw_update=np.asarray(delta, dtype=np.float64),
        )
    raise TypeError(f"cannot intercept from {type(source).__name__}")


def hbc_view(ring: RingState, hop: int, leaked_keys: AheKeyPair, *,
             model_spec: ModelSpec, server_weights, beta: float) -> AttackTarget:
    """Decrypt an intermediate ring message as an honest-but-curious member
    holding a leaked private key.

    The plaintext at hop h is the initiator's update plus the mask plus the
    first h non-initiator updates; the mask is never removed before the loop
    closes, so this view stays noise-protected. Raises DecryptError when the
    key does not match the ciphertext.
    """
    if not 0 <= hop < len(ring.trace):
        raise IndexError(f"hop {hop} outside trace of length {len(ring.trace)}")
    plaintext = decrypt_vector(ring.trace[hop].payload, leaked_keys.private_key, leaked_keys.codec)
    return AttackTarget(
        observed_gradient=-plaintext / beta,
        provenance=PROVENANCE_INTERMEDIATE,
        model_spec=model_spec,
        server_weights=server_weights,
        raw_update=plaintext,
    )


def aggregate_target(delta_sum, *, model_spec: ModelSpec, server_weights,
                     beta: float) -> AttackTarget:
    """Target built from the decrypted final aggregate (what the server receives)."""
    delta_sum = check_vector(delta_sum, model_spec.param_dim, "aggregate")
    return AttackTarget(
        observed_gradient=-delta_sum / beta,
        provenance=PROVENANCE_AGGREGATE,
        model_spec=model_spec,
        server_weights=server_weights,
        raw_update=delta_sum,
    )


def write_pgm(path, values) -> None:
    """Write a flat vector as an ASCII PGM image; the length must be a square."""
    arr = check_vector(values, name="image vector")
    side = math.isqrt(arr.size)
    if side * side != arr.size:
        raise ValueError(f"vector of length {arr.size} is not a square image")
    lo, hi = float(arr.min()), float(arr.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pixels = np.clip(np.round((arr - lo) * scale), 0, 255).astype(int).reshape(side, side)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"P2\n{side} {side}\n255\n")
        for row in pixels:
            fh.write(" ".join(str(v) for v in row) + "\n")

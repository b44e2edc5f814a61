"""The training orchestrator: personalized local updates, baselines, and aggregation.

One global epoch broadcasts the server model, runs every user's local
update, forms per-user deltas against the broadcast model, aggregates the
deltas, and applies ``w <- w + sum(deltas) / N``. The personalized algorithm
("pppml") uses the meta-learning local update and, when a real cipher is
configured, aggregates through the encrypted ring of :mod:`fedring.csahe`;
with the null cipher it uploads deltas in the clear exactly like the FedAvg
baseline, which is what makes the alpha=0 reduction identity bit-exact.

After the last epoch the server model is broadcast once more and each user
adapts it with a few local gradient steps; those adapted models are the
algorithm's actual output.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .csahe import (
    SCHEME_NULL,
    SCHEME_PAILLIER,
    AheKeyPair,
    RingState,
    keygen,
    ring_aggregate,
)
from .errors import ConfigError, DimensionError, ProtocolError
from .models import DatasetShard, ModelSpec, evaluate, grad, hvp, loss
from .numeric import DEFAULT_CODEC, check_vector, derive_stream, ensure_finite

ALGORITHMS = ("pppml", "fedavg", "local-only", "centralized")
CIPHERS = (SCHEME_NULL, SCHEME_PAILLIER)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a run; equal configs give equal histories.

    Defaults mirror the source training setup where one was stated: 20
    global epochs, 10 local epochs, batch size 64, learning rate 1e-4, and
    at most 5 adaptation steps.
    """

    model: ModelSpec
    algorithm: str = "pppml"
    n_users: int = 3
    global_epochs: int = 20
    local_epochs: int = 10
    adapt_epochs: int = 5
    alpha: float = 0.01
    beta: float = 1e-4
    batch_size: int = 64
    cipher: str = SCHEME_PAILLIER
    mask_sigma: float | None = None
    paillier_bits: int = 1024
    seed: int = 0
    hvp_method: str = "auto"
    adapt_baselines: bool = False

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.cipher not in CIPHERS:
            raise ConfigError(f"cipher must be one of {CIPHERS}, got {self.cipher!r}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        for name in ("n_users", "global_epochs", "local_epochs", "adapt_epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.mask_sigma is not None and self.mask_sigma <= 100.0:
            raise ConfigError(f"mask_sigma must exceed 100, got {self.mask_sigma}")
        if self.paillier_bits not in (1024, 2048, 3072):
            raise ConfigError(f"paillier_bits must be 1024, 2048 or 3072, got {self.paillier_bits}")
        if self.hvp_method not in ("auto", "fd", "exact"):
            raise ConfigError(f"hvp_method must be auto, fd or exact, got {self.hvp_method!r}")
        if self.algorithm == "pppml" and self.cipher != SCHEME_NULL and self.n_users < 3:
            raise ProtocolError(
                "pppml with an encrypted ring needs at least 3 users: with 2, the "
                "initiator can read the other user's exact gradient from the aggregate"
            )

    def to_dict(self) -> dict:
        return {
            "model": {
                "kind": self.model.kind,
                "layer_dims": list(self.model.layer_dims),
                "loss": self.model.loss,
            },
            "algorithm": self.algorithm,
            "n_users": self.n_users,
            "global_epochs": self.global_epochs,
            "local_epochs": self.local_epochs,
            "adapt_epochs": self.adapt_epochs,
            "alpha": self.alpha,
            "beta": self.beta,
            "batch_size": self.batch_size,
            "cipher": self.cipher,
            "mask_sigma": self.mask_sigma,
            "paillier_bits": self.paillier_bits,
            "seed": self.seed,
            "hvp_method": self.hvp_method,
            "adapt_baselines": self.adapt_baselines,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        model = data.pop("model")
        spec = ModelSpec(model["kind"], tuple(model["layer_dims"]), model["loss"])
        return cls(model=spec, **data)


@dataclass
class UserNode:
    """One federated participant: identity, private data, and its RNG streams."""

    uid: int
    train: DatasetShard
    test: DatasetShard
    batch_rng: np.random.Generator
    adapt_rng: np.random.Generator


@dataclass(frozen=True)
class RingRound:
    """Audit record of one encrypted aggregation round."""

    epoch: int
    state: RingState
    keys: AheKeyPair


@dataclass
class TrainingHistory:
    """Per-epoch trajectory plus the final per-user models and test metrics."""

    config: ExperimentConfig
    initial_model: np.ndarray
    server_models: list[np.ndarray]
    train_losses: np.ndarray  # (global_epochs, n_users)
    wall_clock: list[float]
    final_models: list[np.ndarray]
    final_metrics: list[dict]
    adapted: bool
    ring_rounds: list[RingRound] | None = None
    uploads: list[list[np.ndarray]] | None = None  # plaintext transports only

    def server_model_before(self, epoch: int) -> np.ndarray:
        """The broadcast model the given epoch's deltas were computed against."""
        return self.initial_model if epoch == 0 else self.server_models[epoch - 1]


def _draw_batch_triple(rng: np.random.Generator, n_samples: int, batch_size: int):
    """Index triple for the three stochastic gradients of one local step.

    Disjoint without-replacement batches from a fresh shuffle when the shard
    is large enough; independent with-replacement draws when it is not; the
    full shard (no draw) when a batch would cover it anyway.
    """
    if batch_size >= n_samples:
        idx = np.arange(n_samples)
        return idx, idx, idx
    if n_samples >= 3 * batch_size:
        perm = rng.permutation(n_samples)
        return (
            perm[:batch_size],
            perm[batch_size: 2 * batch_size],
            perm[2 * batch_size: 3 * batch_size],
        )
    return tuple(rng.integers(0, n_samples, batch_size) for _ in range(3))


def perfedavg_local_update(spec: ModelSpec, w_start, shard: DatasetShard, *,
                           tau: int, alpha: float, beta: float, batch_size: int,
                           rng: np.random.Generator, hvp_method: str = "auto") -> np.ndarray:
    """Run tau meta-learning local steps from the broadcast model.

    Each step draws three batches D, D', D'' and applies

        w_tilde = w - alpha * grad(w; D)
        w       = w - beta * (grad(w_tilde; D') - alpha * hvp(w; D'') @ grad(w_tilde; D'))

    With alpha = 0 this is plain mini-batch SGD on D' (the batch draws are
    identical either way, so the reduction is bit-exact under a shared RNG).
    """
    w = check_vector(w_start, spec.param_dim, "parameters").copy()
    for _ in range(tau):
        idx_d, idx_dp, idx_dpp = _draw_batch_triple(rng, shard.n_samples, batch_size)
        if alpha > 0:
            g_inner = grad(spec, w, shard.subset(idx_d))
            w_tilde = w - alpha * g_inner
            g_outer = grad(spec, w_tilde, shard.subset(idx_dp))
            correction = hvp(spec, w, g_outer, shard.subset(idx_dpp), method=hvp_method)
            w = w - beta * (g_outer - alpha * correction)
        else:
            w = w - beta * grad(spec, w, shard.subset(idx_dp))
        ensure_finite(w, "local update iterate (beta too large?)")
    return w


def fedavg_local_update(spec: ModelSpec, w_start, shard: DatasetShard, *,
                        tau: int, beta: float, batch_size: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Baseline local update: the meta-learning step with alpha pinned to 0."""
    return perfedavg_local_update(
        spec, w_start, shard,
        tau=tau, alpha=0.0, beta=beta, batch_size=batch_size, rng=rng,
    )


def adapt(spec: ModelSpec, meta_model, shard: DatasetShard, *,
          gamma: int, beta: float, batch_size: int,
          rng: np.random.Generator) -> np.ndarray:
    """Personalize the meta-model with gamma local gradient steps."""
    w = check_vector(meta_model, spec.param_dim, "meta model").copy()
    for _ in range(gamma):
        if batch_size >= shard.n_samples:
            batch = shard
        else:
            batch = shard.subset(rng.permutation(shard.n_samples)[:batch_size])
        w = w - beta * grad(spec, w, batch)
        ensure_finite(w, "adaptation iterate (beta too large?)")
    return w


def server_aggregate(w_server, delta_sum, n_users: int) -> np.ndarray:
    """Apply the summed deltas: w + delta_sum / N."""
    w_server = check_vector(w_server, name="server model")
    delta_sum = check_vector(delta_sum, w_server.shape[0], "aggregated delta")
    if n_users < 1:
        raise ValueError(f"n_users must be >= 1, got {n_users}")
    return w_server + delta_sum / n_users


def _concat_shards(users) -> DatasetShard:
    inputs = np.concatenate([u.train.inputs for u in users])
    targets = np.concatenate([u.train.targets for u in users])
    return DatasetShard(inputs, targets, "all")


def run_training(config: ExperimentConfig, users) -> TrainingHistory:
    """Execute the configured algorithm over the users' shards, deterministically."""
    config.validate()
    users = list(users)
    if len(users) != config.n_users:
        raise ConfigError(f"got {len(users)} user shards for n_users={config.n_users}")
    spec = config.model
    for u in users:
        if u.train.feature_dim != spec.input_dim:
            raise DimensionError(
                f"{u.user_id}: feature dim {u.train.feature_dim} != model input {spec.input_dim}"
            )

    seed = config.seed
    nodes = [
        UserNode(
            uid=i,
            train=u.train,
            test=u.test,
            batch_rng=derive_stream(seed, f"user/{i}", "batches"),
            adapt_rng=derive_stream(seed, f"user/{i}", "adapt"),
        )
        for i, u in enumerate(users)
    ]
    server_rng = derive_stream(seed, "server", "init")
    w = spec.init_params(server_rng) if spec.kind == "mlp" else spec.init_params()
    w_initial = w.copy()

    encrypted_ring = config.algorithm == "pppml" and config.cipher == SCHEME_PAILLIER
    keys_rng = derive_stream(seed, "csahe", "keys") if encrypted_ring else None
    protocol_rng = derive_stream(seed, "csahe", "protocol") if encrypted_ring else None
    central_rng = derive_stream(seed, "central", "batches")
    central_shard = _concat_shards(users) if config.algorithm == "centralized" else None
    local_models = [w.copy() for _ in nodes] if config.algorithm == "local-only" else None

    n = config.n_users
    tau, beta, bsz = config.local_epochs, config.beta, config.batch_size
    server_models: list[np.ndarray] = []
    train_losses = np.zeros((config.global_epochs, n))
    wall_clock: list[float] = []
    ring_rounds: list[RingRound] = []
    uploads: list[list[np.ndarray]] = []

    for epoch in range(config.global_epochs):
        started = time.perf_counter()
        if config.algorithm in ("pppml", "fedavg"):
            alpha = config.alpha if config.algorithm == "pppml" else 0.0
            deltas = []
            for node in nodes:
                w_local = perfedavg_local_update(
                    spec, w, node.train,
                    tau=tau, alpha=alpha, beta=beta, batch_size=bsz,
                    rng=node.batch_rng, hvp_method=config.hvp_method,
                )
                deltas.append(w_local - w)
                train_losses[epoch, node.uid] = loss(spec, w_local, node.train)
            if encrypted_ring:
                round_keys = keygen(config.paillier_bits, DEFAULT_CODEC, keys_rng)
                delta_sum, ring = ring_aggregate(
                    deltas, round_keys, config.mask_sigma, protocol_rng
                )
                ring_rounds.append(RingRound(epoch, ring, round_keys))
            else:
                delta_sum = np.sum(np.stack(deltas), axis=0)
                uploads.append(deltas)
            w = server_aggregate(w, delta_sum, n)
        elif config.algorithm == "local-only":
            for node in nodes:
                local_models[node.uid] = fedavg_local_update(
                    spec, local_models[node.uid], node.train,
                    tau=tau, beta=beta, batch_size=bsz, rng=node.batch_rng,
                )
                train_losses[epoch, node.uid] = loss(spec, local_models[node.uid], node.train)
            w = np.mean(np.stack(local_models), axis=0)  # reference snapshot only
        else:  # centralized
            w = fedavg_local_update(
                spec, w, central_shard,
                tau=tau, beta=beta, batch_size=bsz, rng=central_rng,
            )
            for node in nodes:
                train_losses[epoch, node.uid] = loss(spec, w, node.train)
        server_models.append(w.copy())
        wall_clock.append(time.perf_counter() - started)

    if config.algorithm == "local-only":
        base_models = [m.copy() for m in local_models]
    else:
        base_models = [w.copy() for _ in nodes]
    do_adapt = config.algorithm == "pppml" or config.adapt_baselines
    if do_adapt:
        final_models = [
            adapt(spec, base, node.train, gamma=config.adapt_epochs, beta=beta,
                  batch_size=bsz, rng=node.adapt_rng)
            for base, node in zip(base_models, nodes)
        ]
    else:
        final_models = base_models

    final_metrics = []
    for model, node in zip(final_models, nodes):
        if node.test.n_samples > 0:
            final_metrics.append(evaluate(spec, model, node.test))
        else:
            final_metrics.append({"loss": None})

    return TrainingHistory(
        config=config,
        initial_model=w_initial,
        server_models=server_models,
        train_losses=train_losses,
        wall_clock=wall_clock,
        final_models=final_models,
        final_metrics=final_metrics,
        adapted=do_adapt,
        ring_rounds=ring_rounds if encrypted_ring else None,
        uploads=uploads if (config.algorithm == "fedavg" or
                            (config.algorithm == "pppml" and not encrypted_ring)) else None,
    )

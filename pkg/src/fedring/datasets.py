"""Heterogeneous per-user dataset synthesis and the CSV shard loader.

Heterogeneity is a single knob: every user's task optimum is the shared base
optimum plus a shift vector of norm ``shift_magnitude``. The shift vectors
live in the fixed plane of the first two feature coordinates, at distinct
angles per user, so they are mutually non-parallel and the remaining
coordinates carry structure common to all users. For regression the shift is
applied to the generating weights, for classification to the class-mean
vector of a symmetric Gaussian pair.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, SchemaError
from .models import DatasetShard
from .numeric import derive_stream

TASKS = ("regression", "classification")

# Base-task geometry: in-plane component (rotated per user by the shift) and
# the component shared verbatim across users. The shared part is kept modest
# so a single pooled model cannot ride it to near-ceiling accuracy on
# strongly shifted users.
_BASE_IN_PLANE = 1.0
_BASE_SHARED = 0.7


@dataclass(frozen=True)
class HeterogeneityProfile:
    """Knobs for one synthetic multi-user benchmark."""

    n_users: int
    samples_per_user: tuple[int, ...]
    task: str
    shift_magnitude: float
    feature_dim: int
    label_noise: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "samples_per_user", tuple(int(s) for s in self.samples_per_user))
        if self.n_users < 2:
            raise ValueError(f"n_users must be >= 2, got {self.n_users}")
        if len(self.samples_per_user) != self.n_users:
            raise ValueError(
                f"samples_per_user has {len(self.samples_per_user)} entries for {self.n_users} users"
            )
        if any(s < 1 for s in self.samples_per_user):
            raise ValueError("every samples_per_user entry must be >= 1")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.shift_magnitude < 0:
            raise ValueError("shift_magnitude must be >= 0")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.shift_magnitude > 0 and self.feature_dim < 2:
            raise ValueError("shift_magnitude > 0 needs feature_dim >= 2")
        if self.label_noise < 0:
            raise ValueError("label_noise must be >= 0")


@dataclass
class UserSplit:
    """One user's train/test shards."""

    user_id: str
    train: DatasetShard
    test: DatasetShard


def _shift_vectors(profile: HeterogeneityProfile, rng: np.random.Generator) -> np.ndarray:
    """Per-user shift vectors of norm shift_magnitude, mutually non-parallel.

    Angles are spread over [0, pi) with per-user jitter below half the
    spacing, so no two shifts are parallel or anti-parallel.
    """
    d = profile.feature_dim
    shifts = np.zeros((profile.n_users, d))
    if profile.shift_magnitude == 0:
        return shifts
    jitter = rng.uniform(0.0, 0.5, profile.n_users)
    angles = np.pi * (np.arange(profile.n_users) + jitter) / profile.n_users
    # Alternating signs stop the shifts from sharing a half-plane, so they
    # largely cancel in the pooled mean; parallelism is still impossible
    # because the angles stay distinct modulo pi.
    signs = np.where(np.arange(profile.n_users) % 2 == 0, 1.0, -1.0)
    shifts[:, 0] = signs * profile.shift_magnitude * np.cos(angles)
    shifts[:, 1] = signs * profile.shift_magnitude * np.sin(angles)
    return shifts


def _base_vector(profile: HeterogeneityProfile) -> np.ndarray:
    d = profile.feature_dim
    base = np.zeros(d)
    base[0] = _BASE_IN_PLANE
    if d > 2:
        base[2:] = _BASE_SHARED / np.sqrt(d - 2)
    elif d == 2:
        base[1] = _BASE_SHARED
    return base


def make_users(profile: HeterogeneityProfile, seed: int) -> list[UserSplit]:
    """Generate per-user train/test shards, deterministic in (profile, seed).

    User i's optimum is base + shift_i; shift_magnitude = 0 collapses to IID
    users. The split is 80/20 per user (at least one training sample).
    """
    base_rng = derive_stream(seed, "synth", "base")
    shifts = _shift_vectors(profile, base_rng)
    base = _base_vector(profile)

    users = []
    for i in range(profile.n_users):
        uid = f"user{i}"
        rng = derive_stream(seed, "synth", uid)
        m = profile.samples_per_user[i]
        d = profile.feature_dim
        optimum = base + shifts[i]

        x = rng.normal(0.0, 1.0, (m, d))
        if profile.task == "regression":
            noise = rng.normal(0.0, profile.label_noise, m) if profile.label_noise > 0 else 0.0
            y = x @ optimum + noise
        else:
            labels = rng.integers(0, 2, m)
            x = x + np.where(labels[:, None] == 1, 1.0, -1.0) * optimum
            if profile.label_noise > 0:
                flips = rng.random(m) < profile.label_noise
                labels = np.where(flips, 1 - labels, labels)
            y = labels.astype(np.int64)

        n_train = max(1, int(round(0.8 * m)))
        n_train = min(n_train, m)
        users.append(
            UserSplit(
                user_id=uid,
                train=DatasetShard(x[:n_train], y[:n_train], uid),
                test=DatasetShard(x[n_train:], y[n_train:], uid),
            )
        )
    return users


def split_shard(shard: DatasetShard, train_fraction: float = 0.8) -> UserSplit:
    """Split a loaded shard into train/test in row order (at least one train row)."""
    if not 0 < train_fraction <= 1:
        raise ValueError("train_fraction must be in (0, 1]")
    n_train = min(shard.n_samples, max(1, int(round(train_fraction * shard.n_samples))))
    return UserSplit(
        user_id=shard.user_id,
        train=shard.subset(np.arange(n_train)),
        test=shard.subset(np.arange(n_train, shard.n_samples)),
    )


def load_shards(path) -> list[DatasetShard]:
    """Load shards from a CSV with header ``user_id,target,f0,...,f{d-1}``.

    Rows are grouped by user_id in order of first appearance. Malformed rows
    raise ParseError with the offending 1-based line number; an empty file or
    a bad header raises SchemaError.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "user_id" or header[1] != "target":
            raise SchemaError(f"{path}: header must start with user_id,target,f0,...")
        n_features = len(header) - 2
        expected = [f"f{j}" for j in range(n_features)]
        if header[2:] != expected:
            raise SchemaError(f"{path}: feature columns must be f0..f{n_features - 1} in order")

        rows_by_user: dict[str, list[tuple[list[float], float]]] = {}
        order: list[str] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} columns, found {len(row)}", line=line_no
                )
            uid = row[0]
            try:
                target = float(row[1])
                features = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise ParseError(str(exc), line=line_no) from None
            if uid not in rows_by_user:
                rows_by_user[uid] = []
                order.append(uid)
            rows_by_user[uid].append((features, target))

    if not order:
        raise SchemaError(f"{path}: no data rows")
    shards = []
    for uid in order:
        feats, targets = zip(*rows_by_user[uid])
        shards.append(DatasetShard(np.array(feats), np.array(targets), uid))
    return shards


def write_shards(shards, path) -> None:
    """Write shards in the CSV format load_shards reads (LF line endings)."""
    dims = {s.feature_dim for s in shards}
    if len(dims) != 1:
        raise SchemaError(f"shards have inconsistent feature dimensions {sorted(dims)}")
    d = dims.pop()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "target"] + [f"f{j}" for j in range(d)])
        for shard in shards:
            for x, t in zip(shard.inputs, shard.targets):
                writer.writerow([shard.user_id, repr(float(t))] + [repr(float(v)) for v in x])

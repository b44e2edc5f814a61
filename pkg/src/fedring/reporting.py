"""Run artefacts: manifest, history, metrics CSV, message traces, attack reports.

Every writer is deterministic for a given run: JSON is dumped with sorted
keys, floats serialise through their shortest round-trip repr, and files end
with a single LF. Wall-clock timings live only in the manifest, which is the
one artefact allowed to differ between reruns of the same configuration.
"""

from __future__ import annotations

import csv
import json
import os
import subprocess
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import AttackResult, UploadRound
from .csahe import (
    SCHEME_PAILLIER,
    AheKeyPair,
    CipherVector,
    RingMessage,
    RingState,
)
from .engine import ExperimentConfig, TrainingHistory
from .errors import SchemaError
from .numeric import DEFAULT_CODEC
from .paillier import PaillierPrivateKey

# Per-user shards at or below this size are embedded in the trace so attack
# reconstructions can be scored against the true samples.
CANDIDATE_EMBED_LIMIT = 16

MANIFEST_NAME = "manifest.json"
HISTORY_NAME = "history.json"
METRICS_NAME = "metrics.csv"
TRACE_NAME = "trace.json"
ATTACK_NAME = "attack.json"


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return [float(v) for v in value.ravel()] if value.ndim == 1 else [
            _jsonable(row) for row in value
        ]
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def canonical_dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    os.replace(tmp, path)


def version_string() -> str:
    """Package version, extended with the git description when available."""
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        if described.returncode == 0 and described.stdout.strip():
            return f"{__version__}+g{described.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out_dir, command: str, config_dict: dict, outputs: dict,
                   started_utc: str | None = None, completed_utc: str | None = None) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    atomic_write_text(path, canonical_dumps({
        "kind": "fedring-manifest",
        "command": command,
        "version": version_string(),
        "started_utc": started_utc or datetime.now(timezone.utc).isoformat(),
        "completed_utc": completed_utc,
        "config": config_dict,
        "outputs": outputs,
    }))
    return path


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def history_to_dict(history: TrainingHistory) -> dict:
    return {
        "kind": "fedring-history",
        "manifest": MANIFEST_NAME,
        "config": history.config.to_dict(),
        "initial_model": history.initial_model,
        "server_models": [m for m in history.server_models],
        "train_losses": history.train_losses,
        "final_models": [m for m in history.final_models],
        "final_metrics": history.final_metrics,
        "adapted": history.adapted,
    }


def write_history(history: TrainingHistory, out_dir) -> Path:
    path = Path(out_dir) / HISTORY_NAME
    atomic_write_text(path, canonical_dumps(history_to_dict(history)))
    return path


def write_metrics_csv(history: TrainingHistory, out_dir) -> Path:
    """Flat per-epoch, per-user training losses."""
    path = Path(out_dir) / METRICS_NAME
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "user", "train_loss"])
        for epoch in range(history.train_losses.shape[0]):
            for user in range(history.train_losses.shape[1]):
                writer.writerow([epoch, user, repr(float(history.train_losses[epoch, user]))])
    os.replace(tmp, path)
    return path


def _ring_round_to_dict(rr) -> dict:
    state: RingState = rr.state
    keys: AheKeyPair = rr.keys
    return {
        "epoch": rr.epoch,
        "type": "ring",
        "order": list(state.order),
        "initiator": state.initiator,
        "mask_sigma": state.mask_sigma,
        "hops": [
            {
                "sender": msg.sender,
                "receiver": msg.receiver,
                "payload_hex": msg.payload.to_bytes().hex(),
            }
            for msg in state.trace
        ],
        "scheme": keys.scheme_tag,
        "public_key": keys.public_key.to_dict(),
        # Simulation-side: models the key-leak scenario the type-II attack studies.
        "leaked_private_key": keys.private_key.to_dict(),
        "audit_mask": state.mask,
    }


def trace_to_dict(history: TrainingHistory, users) -> dict:
    cfg = history.config
    rounds = []
    if history.ring_rounds is not None:
        rounds = [_ring_round_to_dict(rr) for rr in history.ring_rounds]
    elif history.uploads is not None:
        rounds = [
            {"epoch": epoch, "type": "upload", "deltas": deltas}
            for epoch, deltas in enumerate(history.uploads)
        ]
    candidates = {}
    for i, u in enumerate(users):
        if u.train.n_samples <= CANDIDATE_EMBED_LIMIT:
            candidates[str(i)] = u.train.inputs
    return {
        "kind": "fedring-trace",
        "manifest": MANIFEST_NAME,
        "config": cfg.to_dict(),
        "initial_model": history.initial_model,
        "server_models": [m for m in history.server_models],
        "rounds": rounds,
        "candidates": candidates,
    }


def write_trace(history: TrainingHistory, users, out_dir) -> Path:
    path = Path(out_dir) / TRACE_NAME
    atomic_write_text(path, canonical_dumps(trace_to_dict(history, users)))
    return path


@dataclass
class TraceBundle:
    """A parsed trace file, rehydrated into protocol objects for the attack CLI."""

    config: ExperimentConfig
    initial_model: np.ndarray
    server_models: list[np.ndarray]
    rounds: list[dict]
    candidates: dict[int, np.ndarray]

    def server_before(self, epoch: int) -> np.ndarray:
        return self.initial_model if epoch == 0 else self.server_models[epoch - 1]

    def round_record(self, epoch: int) -> dict:
        for record in self.rounds:
            if record["epoch"] == epoch:
                return record
        raise SchemaError(f"trace has no round for epoch {epoch}")

    def ring_round(self, epoch: int) -> tuple[RingState, AheKeyPair]:
        record = self.round_record(epoch)
        if record.get("type") != "ring":
            raise SchemaError(f"round {epoch} is not an encrypted ring round")
        sk = PaillierPrivateKey.from_dict(record["leaked_private_key"])
        keys = AheKeyPair(sk.public_key, sk, DEFAULT_CODEC, SCHEME_PAILLIER)
        messages = tuple(
            RingMessage(
                sender=hop["sender"],
                receiver=hop["receiver"],
                payload=CipherVector.from_bytes(
                    bytes.fromhex(hop["payload_hex"]), SCHEME_PAILLIER, sk.public_key.n
                ),
            )
            for hop in record["hops"]
        )
        state = RingState(
            order=tuple(record["order"]),
            initiator=record["initiator"],
            trace=messages,
            mask_sigma=record["mask_sigma"],
            mask=np.asarray(record["audit_mask"], dtype=np.float64),
        )
        return state, keys

    def upload_round(self, epoch: int) -> UploadRound:
        record = self.round_record(epoch)
        if record.get("type") != "upload":
            raise SchemaError(f"round {epoch} is not a plaintext upload round")
        return UploadRound(
            epoch=epoch,
            server_weights=self.server_before(epoch),
            deltas=[np.asarray(d, dtype=np.float64) for d in record["deltas"]],
            beta=self.config.beta,
            tau=self.config.local_epochs,
            model_spec=self.config.model,
        )

    def aggregate_delta(self, epoch: int) -> np.ndarray:
        """Sum of user deltas for the epoch, reconstructed from the trajectory."""
        after = self.server_models[epoch]
        before = self.server_before(epoch)
        return (after - before) * self.config.n_users

    def all_candidates(self) -> np.ndarray | None:
        if not self.candidates:
            return None
        return np.concatenate([v for _, v in sorted(self.candidates.items())])


def load_trace(path) -> TraceBundle:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SchemaError(f"trace file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    if data.get("kind") != "fedring-trace":
        raise SchemaError(f"{path}: not a fedring trace file")
    return TraceBundle(
        config=ExperimentConfig.from_dict(data["config"]),
        initial_model=np.asarray(data["initial_model"], dtype=np.float64),
        server_models=[np.asarray(m, dtype=np.float64) for m in data["server_models"]],
        rounds=data["rounds"],
        candidates={
            int(k): np.asarray(v, dtype=np.float64) for k, v in data.get("candidates", {}).items()
        },
    )


def attack_result_to_dict(vantage: str, result: AttackResult | None, *,
                          provenance: str | None = None,
                          plaintext_available: bool = True,
                          extra: dict | None = None) -> dict:
    payload = {
        "kind": "fedring-attack",
        "manifest": MANIFEST_NAME,
        "vantage": vantage,
        "plaintext_available": plaintext_available,
    }
    if provenance is not None:
        payload["provenance"] = provenance
    if result is not None:
        payload.update({
            "label": result.dummy_label,
            "mse": result.reconstruction_mse,
            "final_loss": float(result.loss_curve[-1]),
            "iterations": int(len(result.loss_curve)),
            "loss_curve": result.loss_curve,
            "dummy_data": result.dummy_data,
        })
    if extra:
        payload.update(extra)
    return payload


def write_attack(payload: dict, out_dir) -> Path:
    path = Path(out_dir) / ATTACK_NAME
    atomic_write_text(path, canonical_dumps(payload))
    return path

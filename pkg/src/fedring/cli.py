"""Command-line harness: train runs, attack simulations, algorithm comparisons.

Configuration precedence is flags over config file over the FEDRING_SEED
environment variable over built-in defaults. Exit codes: 0 success, 2
configuration or input error, 3 runtime divergence (non-finite iterates).
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from .attacks import idlg_attack, intercept, hbc_view, aggregate_target, write_pgm
from .datasets import HeterogeneityProfile, load_shards, make_users, split_shard
from .engine import ALGORITHMS, CIPHERS, ExperimentConfig, run_training
from .errors import ConfigError, NonFiniteError, ParseError, SchemaError
from .models import ModelSpec
from .numeric import derive_stream
from . import reporting

SEED_ENV_VAR = "FEDRING_SEED"
VANTAGES = ("type1-fedavg", "type1-csahe", "type2-leakedkey", "aggregate")

# Data-synthesis defaults; the training defaults live on ExperimentConfig.
DATA_DEFAULTS = {
    "profile": "heterogeneous",
    "shift": 5.0,
    "task": "classification",
    "feature_dim": 32,
    "samples": 500,
    "data": None,
}


def _load_config_file(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    # A manifest is accepted anywhere a config is: its config block is the config.
    if raw.get("kind") == "fedring-manifest":
        raw = raw.get("config", {})
    return raw


def _resolve(file_values: dict, flag_values: dict, data_flags: dict) -> tuple[ExperimentConfig, dict]:
    """Merge config sources into an ExperimentConfig plus data-synthesis settings."""
    known = {
        "algorithm", "n_users", "global_epochs", "local_epochs", "adapt_epochs",
        "alpha", "beta", "batch_size", "cipher", "mask_sigma", "paillier_bits",
        "seed", "hvp_method", "adapt_baselines",
    }
    merged: dict = {}
    data_cfg = dict(DATA_DEFAULTS)
    model_dict = None
    for key, value in file_values.items():
        if key == "model":
            model_dict = value
        elif key in known:
            merged[key] = value
        elif key in data_cfg:
            data_cfg[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for key, value in flag_values.items():
        if value is not None:
            merged[key] = value
    for key, value in data_flags.items():
        if value is not None:
            data_cfg[key] = value

    if "seed" not in merged:
        env_seed = os.environ.get(SEED_ENV_VAR)
        if env_seed is not None:
            try:
                merged["seed"] = int(env_seed)
            except ValueError:
                raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from None

    if data_cfg["profile"] not in ("iid", "heterogeneous"):
        raise ConfigError(f"profile must be iid or heterogeneous, got {data_cfg['profile']!r}")
    if data_cfg["profile"] == "iid":
        data_cfg["shift"] = 0.0

    if model_dict is not None:
        model = ModelSpec(model_dict["kind"], tuple(model_dict["layer_dims"]), model_dict["loss"])
    elif data_cfg["task"] == "classification":
        model = ModelSpec("logistic-regression", (int(data_cfg["feature_dim"]), 2), "cross-entropy")
    elif data_cfg["task"] == "regression":
        model = ModelSpec("linear-regression", (int(data_cfg["feature_dim"]),), "squared-error")
    else:
        raise ConfigError(f"task must be classification or regression, got {data_cfg['task']!r}")

    try:
        config = ExperimentConfig(model=model, **merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    config.validate()
    return config, data_cfg


def _build_users(config: ExperimentConfig, data_cfg: dict):
    if data_cfg["data"]:
        shards = load_shards(data_cfg["data"])
        if len(shards) != config.n_users:
            raise ConfigError(
                f"{data_cfg['data']} holds {len(shards)} users but n_users={config.n_users}"
            )
        return [split_shard(s) for s in shards]
    profile = HeterogeneityProfile(
        n_users=config.n_users,
        samples_per_user=tuple([int(data_cfg["samples"])] * config.n_users),
        task=data_cfg["task"],
        shift_magnitude=float(data_cfg["shift"]),
        feature_dim=int(data_cfg["feature_dim"]),
    )
    return make_users(profile, config.seed)


def _guard(ctx: click.Context, body) -> None:
    try:
        body()
    except NonFiniteError as exc:
        click.echo(f"runtime divergence: {exc}", err=True)
        ctx.exit(3)
    except (ConfigError, SchemaError, ParseError, ValueError, OverflowError) as exc:
        click.echo(f"error: {exc}", err=True)
        ctx.exit(2)


def _config_options(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(), default=None,
                     help="JSON config file (a manifest.json also works)."),
        click.option("--algorithm", type=click.Choice(ALGORITHMS), default=None),
        click.option("--users", "n_users", type=int, default=None),
        click.option("--global-epochs", type=int, default=None),
        click.option("--local-epochs", type=int, default=None),
        click.option("--adapt-epochs", type=int, default=None),
        click.option("--alpha", type=float, default=None),
        click.option("--beta", type=float, default=None),
        click.option("--batch-size", type=int, default=None),
        click.option("--cipher", type=click.Choice(CIPHERS), default=None),
        click.option("--mask-sigma", type=float, default=None),
        click.option("--paillier-bits", type=int, default=None),
        click.option("--seed", type=int, default=None,
                     help=f"Falls back to ${SEED_ENV_VAR}, then 0."),
        click.option("--hvp", "hvp_method", type=click.Choice(("auto", "fd", "exact")), default=None),
        click.option("--profile", type=click.Choice(("iid", "heterogeneous")), default=None),
        click.option("--shift", type=float, default=None,
                     help="Distance between per-user task optima."),
        click.option("--task", type=click.Choice(("classification", "regression")), default=None),
        click.option("--feature-dim", type=int, default=None),
        click.option("--samples", type=int, default=None, help="Samples per user (synthetic data)."),
        click.option("--data", "data_path", type=click.Path(), default=None,
                     help="CSV shard file instead of synthetic data."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _gather(algorithm, n_users, global_epochs, local_epochs, adapt_epochs, alpha,
            beta, batch_size, cipher, mask_sigma, paillier_bits, seed, hvp_method,
            profile, shift, task, feature_dim, samples, data_path, config_path):
    file_values = _load_config_file(config_path) if config_path else {}
    flag_values = {
        "algorithm": algorithm, "n_users": n_users, "global_epochs": global_epochs,
        "local_epochs": local_epochs, "adapt_epochs": adapt_epochs, "alpha": alpha,
        "beta": beta, "batch_size": batch_size, "cipher": cipher,
        "mask_sigma": mask_sigma, "paillier_bits": paillier_bits, "seed": seed,
        "hvp_method": hvp_method,
    }
    data_flags = {
        "profile": profile, "shift": shift, "task": task,
        "feature_dim": feature_dim, "samples": samples, "data": data_path,
    }
    return _resolve(file_values, flag_values, data_flags)


@click.group()
def main():
    """Personalized federated learning with encrypted ring aggregation."""


@main.command()
@_config_options
@click.option("--out", "out_dir", type=click.Path(), default="run-out", show_default=True)
@click.pass_context
def train(ctx, out_dir, **kwargs):
    """Run one training experiment and write its artefacts."""

    def body():
        config, data_cfg = _gather(**kwargs)
        users = _build_users(config, data_cfg)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        started = reporting.utc_now()
        outputs = {
            "history": reporting.HISTORY_NAME,
            "metrics": reporting.METRICS_NAME,
            "trace": reporting.TRACE_NAME,
        }
        # The manifest's config block is complete: feeding it back through
        # --config reproduces every result file byte for byte.
        manifest_cfg = {**config.to_dict(), **data_cfg}
        reporting.write_manifest(out, "train", manifest_cfg, outputs, started_utc=started)
        history = run_training(config, users)
        reporting.write_history(history, out)
        reporting.write_metrics_csv(history, out)
        reporting.write_trace(history, users, out)
        reporting.write_manifest(out, "train", manifest_cfg, outputs,
                                 started_utc=started, completed_utc=reporting.utc_now())
        losses = [m.get("loss") for m in history.final_metrics]
        accs = [m.get("accuracy") for m in history.final_metrics]
        click.echo(f"{config.algorithm}: wrote {out}/")
        for i, (lo, ac) in enumerate(zip(losses, accs)):
            parts = [f"user {i}"]
            if lo is not None:
                parts.append(f"test loss {lo:.4f}")
            if ac is not None:
                parts.append(f"accuracy {ac:.3f}")
            click.echo("  " + ", ".join(parts))

    _guard(ctx, body)


@main.command()
@click.option("--trace", "trace_path", type=click.Path(), required=True,
              help="trace.json produced by the train command.")
@click.option("--vantage", type=click.Choice(VANTAGES), required=True)
@click.option("--round", "round_idx", type=int, default=0, show_default=True,
              help="Global epoch the observation comes from.")
@click.option("--hop", type=int, default=0, show_default=True,
              help="Ring hop (csahe vantages) or uploading user (fedavg vantage).")
@click.option("--iterations", type=int, default=5000, show_default=True)
@click.option("--eta", type=float, default=0.1, show_default=True)
@click.option("--seed", type=int, default=None, help="Dummy-data initialisation seed.")
@click.option("--snapshot-every", type=int, default=0, show_default=True,
              help="Write PGM snapshots of the dummy data every N iterations.")
@click.option("--out", "out_dir", type=click.Path(), default="attack-out", show_default=True)
@click.pass_context
def attack(ctx, trace_path, vantage, round_idx, hop, iterations, eta, seed,
           snapshot_every, out_dir):
    """Run the gradient-inversion attack from a chosen vantage point."""

    def body():
        bundle = reporting.load_trace(trace_path)
        config = bundle.config
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        started = reporting.utc_now()
        reporting.write_manifest(out, "attack", {
            "trace": str(trace_path), "vantage": vantage, "round": round_idx,
            "hop": hop, "iterations": iterations, "eta": eta, "seed": seed,
        }, {"attack": reporting.ATTACK_NAME}, started_utc=started)

        if seed is None:
            seed_val = int(os.environ.get(SEED_ENV_VAR, "0"))
        else:
            seed_val = seed
        from .numeric import derive_stream

        rng = derive_stream(seed_val, "attack", vantage)

        if vantage == "type1-csahe":
            state, _keys = bundle.ring_round(round_idx)
            observation = intercept(state, hop)
            payload = reporting.attack_result_to_dict(
                vantage, None, plaintext_available=False,
                extra={
                    "hop": hop,
                    "sender": observation.sender,
                    "receiver": observation.receiver,
                    "ciphertext_bytes": len(observation.payload.to_bytes()),
                },
            )
            reporting.write_attack(payload, out)
            click.echo("intercepted ciphertext only; no plaintext gradient to invert")
            return

        if vantage == "type1-fedavg":
            upload = bundle.upload_round(round_idx)
            target = intercept(upload, hop)
            candidates = bundle.candidates.get(hop)
        elif vantage == "type2-leakedkey":
            state, keys = bundle.ring_round(round_idx)
            target = hbc_view(
                state, hop, keys,
                model_spec=config.model,
                server_weights=bundle.server_before(round_idx),
                beta=config.beta,
            )
            candidates = bundle.all_candidates()
        else:  # aggregate
            target = aggregate_target(
                bundle.aggregate_delta(round_idx),
                model_spec=config.model,
                server_weights=bundle.server_before(round_idx),
                beta=config.beta,
            )
            candidates = bundle.all_candidates()

        result = idlg_attack(
            target, iterations=iterations, eta=eta, rng=rng,
            true_samples=candidates,
            snapshot_every=snapshot_every or None,
        )
        payload = reporting.attack_result_to_dict(
            vantage, result, provenance=target.provenance,
        )
        reporting.write_attack(payload, out)

        side_ok = int(np.sqrt(config.model.input_dim)) ** 2 == config.model.input_dim
        if snapshot_every and side_ok:
            snap_dir = out / "snapshots"
            snap_dir.mkdir(exist_ok=True)
            for it, vec in result.snapshots:
                write_pgm(snap_dir / f"dummy_{it:05d}.pgm", vec)
            write_pgm(snap_dir / "dummy_final.pgm", result.dummy_data)

        reporting.write_manifest(out, "attack", {
            "trace": str(trace_path), "vantage": vantage, "round": round_idx,
            "hop": hop, "iterations": iterations, "eta": eta, "seed": seed_val,
        }, {"attack": reporting.ATTACK_NAME}, started_utc=started,
            completed_utc=reporting.utc_now())
        mse_text = "n/a" if result.reconstruction_mse is None else f"{result.reconstruction_mse:.3e}"
        click.echo(
            f"{vantage}: label {result.dummy_label}, final matching loss "
            f"{result.loss_curve[-1]:.3e}, reconstruction mse {mse_text}"
        )

    _guard(ctx, body)


@main.command()
@_config_options
@click.option("--algorithms", default="centralized,local-only,fedavg,pppml",
              show_default=True, help="Comma-separated algorithm list.")
@click.option("--seeds", "n_seeds", type=int, default=5, show_default=True,
              help="Number of seeds; runs use seed, seed+1, ...")
@click.option("--out", "out_dir", type=click.Path(), default="compare-out", show_default=True)
@click.pass_context
def compare(ctx, algorithms, n_seeds, out_dir, **kwargs):
    """Run an algorithm matrix over several seeds and summarise test metrics."""

    def body():
        algo_list = [a.strip() for a in algorithms.split(",") if a.strip()]
        if not algo_list:
            raise ConfigError("empty algorithm matrix")
        unknown = [a for a in algo_list if a not in ALGORITHMS]
        if unknown:
            raise ConfigError(f"unknown algorithms {unknown}; choose from {ALGORITHMS}")
        if n_seeds < 1:
            raise ConfigError("need at least one seed")

        base_config, data_cfg = _gather(**kwargs)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        started = reporting.utc_now()
        manifest_cfg = {
            "base": base_config.to_dict(), "data": data_cfg,
            "algorithms": algo_list, "seeds": n_seeds,
        }
        outputs = {"summary": "compare.csv", "means": "compare_mean.csv"}
        reporting.write_manifest(out, "compare", manifest_cfg, outputs, started_utc=started)

        rows = []
        for offset in range(n_seeds):
            seed = base_config.seed + offset
            for algo in algo_list:
                config = ExperimentConfig(**{
                    **base_config.to_dict(), "algorithm": algo, "seed": seed,
                    "model": base_config.model,
                })
                if algo != "pppml":
                    # Baselines do not need the ring; keep them cheap.
                    config = ExperimentConfig(**{
                        **config.to_dict(), "cipher": "null", "model": config.model,
                    })
                users = _build_users(config, data_cfg)
                history = run_training(config, users)
                for user_idx, metric in enumerate(history.final_metrics):
                    rows.append({
                        "algorithm": algo, "user": user_idx, "seed": seed,
                        "test_loss": metric.get("loss"),
                        "test_accuracy": metric.get("accuracy"),
                    })

        import csv as _csv

        with open(out / "compare.csv", "w", encoding="utf-8", newline="\n") as fh:
            writer = _csv.writer(fh, lineterminator="\n")
            writer.writerow(["algorithm", "user", "seed", "test_loss", "test_accuracy"])
            for row in rows:
                writer.writerow([
                    row["algorithm"], row["user"], row["seed"],
                    "" if row["test_loss"] is None else repr(float(row["test_loss"])),
                    "" if row["test_accuracy"] is None else repr(float(row["test_accuracy"])),
                ])

        with open(out / "compare_mean.csv", "w", encoding="utf-8", newline="\n") as fh:
            writer = _csv.writer(fh, lineterminator="\n")
            writer.writerow(["algorithm", "mean_test_loss", "mean_test_accuracy"])
            for algo in algo_list:
                losses = [r["test_loss"] for r in rows if r["algorithm"] == algo
                          and r["test_loss"] is not None]
                accs = [r["test_accuracy"] for r in rows if r["algorithm"] == algo
                        and r["test_accuracy"] is not None]
                writer.writerow([
                    algo,
                    repr(float(np.mean(losses))) if losses else "",
                    repr(float(np.mean(accs))) if accs else "",
                ])
                summary = f"{algo}: mean test loss {np.mean(losses):.4f}" if losses else algo
                if accs:
                    summary += f", mean accuracy {np.mean(accs):.4f}"
                click.echo(summary)

        reporting.write_manifest(out, "compare", manifest_cfg, outputs,
                                 started_utc=started, completed_utc=reporting.utc_now())

    _guard(ctx, body)


if __name__ == "__main__":
    sys.exit(main())

"""Unified training pipeline: config registry, seeded single runs with
early stopping, and multi-seed aggregation.

Training minimizes L1 loss on the continuous label (plus any model
auxiliary losses) with Adam and global-norm gradient clipping; after each
epoch the validation split is scored and the run stops once validation
MAE has not improved for ``patience`` epochs. The best checkpoint is
restored before test evaluation and representation capture.

Run directory layout::

    <out>/<model>/<timestamp>/seed_<k>/   config.json
                                          history.jsonl   (one record per epoch)
                                          checkpoint/
                                          reps.bin
    <out>/<model>/<timestamp>/aggregate.json

history.jsonl is byte-identical across reruns with the same config and
seed; wall-clock timestamps stay on the in-memory records only.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .analysis import METRIC_KEYS, MetricReport, compute_metrics
from .bundle import FeatureBundle, split_view
from .errors import ModelError, TrainingDivergedError, ValidationError
from .models import (
    MODEL_REGISTRY,
    MULTITASK_BASES,
    OUT_OF_SCOPE_MODELS,
    Model,
    ModelConfig,
    batch_from_bundle,
    build_model,
    save_checkpoint,
    write_named_arrays,
)

__all__ = [
    "AdamConfig",
    "TrainConfig",
    "EpochRecord",
    "RunResult",
    "MultiSeedResult",
    "get_config_regression",
    "train_run",
    "multi_seed_run",
    "Adam",
    "clip_global_norm",
]

DEFAULT_SEEDS = (1111, 1112, 1113, 1114, 1115)


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class TrainConfig:
    """Full training recipe; supports dict-style overrides so shell and
    script callers can poke single keys (config["post_fusion_dim"] = 32)."""

    model: ModelConfig
    dataset_name: str = "unspecified"
    optimizer: AdamConfig = field(default_factory=AdamConfig)
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 8
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    loss: str = "l1"
    grad_clip: float = 5.0

    def validate(self) -> None:
        if self.optimizer.lr <= 0:
            raise ValidationError(f"lr must be > 0, got {self.optimizer.lr}")
        if self.patience < 1:
            raise ValidationError(f"patience must be >= 1, got {self.patience}")
        if not self.seeds:
            raise ValidationError("seeds must be non-empty")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValidationError("batch_size and max_epochs must be >= 1")
        if self.loss != "l1":
            raise ValidationError(f"unsupported loss {self.loss!r}; only 'l1'")

    # -- dict-style access -------------------------------------------------
    def _resolve(self, key: str):
        if "." in key:
            owner_name, attr = key.split(".", 1)
            owner = getattr(self, owner_name, None)
            if owner is None or not hasattr(owner, attr):
                raise KeyError(key)
            return owner, attr
        for owner in (self, self.model, self.optimizer):
            if any(f.name == key for f in fields(owner)):
                return owner, key
        raise KeyError(key)

    def __getitem__(self, key: str):
        owner, attr = self._resolve(key)
        return getattr(owner, attr)

    def __setitem__(self, key: str, value) -> None:
        owner, attr = self._resolve(key)
        current = getattr(owner, attr)
        if current is not None and not isinstance(current, (dict, list)):
            value = type(current)(value)
        setattr(owner, attr, value)

    def as_dict(self) -> dict:
        return asdict(self)


def get_config_regression(model_name: str, dataset_name: str = "mosi") -> TrainConfig:
    """Fully-populated, overridable default config for a registered model.

    The dataset name is advisory (it labels reports and keys future
    defaults); feature dims are resolved from the bundle at train time.
    """
    if model_name in OUT_OF_SCOPE_MODELS:
        raise ModelError(f"{model_name}: {OUT_OF_SCOPE_MODELS[model_name]}")
    if model_name not in MODEL_REGISTRY and model_name not in MULTITASK_BASES:
        known = sorted(list(MODEL_REGISTRY) + list(MULTITASK_BASES))
        raise ModelError(f"unknown model {model_name!r}; known models: {known}")
    model = ModelConfig(model_name=model_name)
    return TrainConfig(model=model, dataset_name=dataset_name)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid: MetricReport
    timestamp: float

    def to_json(self) -> str:
        # timestamp deliberately excluded: history files must be
        # byte-identical for identical (config, seed)
        return json.dumps({"epoch": self.epoch, "train_loss": self.train_loss,
                           "valid": self.valid.as_dict()})


@dataclass
class RunResult:
    seed: int
    best_epoch: int
    test_metrics: MetricReport
    history: list[EpochRecord]
    checkpoint_path: str | None
    reps: dict[str, np.ndarray]
    run_dir: str | None


class Adam:
    """Adam with bias correction; state lives per parameter name."""

    def __init__(self, params, config: AdamConfig):
        self.params = params
        self.config = config
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self) -> None:
        cfg = self.config
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if cfg.weight_decay:
                g = g + cfg.weight_decay * p.data
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data -= (cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.data.dtype)


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for _, p in params.items():
        total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for _, p in params.items():
            p.grad = p.grad * scale
    return norm


def _batches(view: FeatureBundle, order: np.ndarray, batch_size: int, dtype):
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield batch_from_bundle(view, idx, dtype)


def _evaluate(model: Model, view: FeatureBundle, batch_size: int,
              capture: bool = False):
    preds = []
    fusion = []
    uni: dict[str, list[np.ndarray]] = {}
    order = np.arange(view.n)
    for batch in _batches(view, order, batch_size, model.dtype):
        out = model.forward(batch, train=False)
        preds.append(out.pred.data.astype(np.float64))
        if capture:
            fusion.append(out.fusion_rep.data.astype(np.float32))
            if out.uni_reps:
                for m, rep in out.uni_reps.items():
                    uni.setdefault(m, []).append(rep.data.astype(np.float32))
    preds = np.concatenate(preds)
    metrics = compute_metrics(preds, view.labels(), strict_corr=False)
    reps: dict[str, np.ndarray] = {}
    if capture:
        reps["fusion"] = np.concatenate(fusion)
        for m, chunks in uni.items():
            reps[f"uni.{m}"] = np.concatenate(chunks)
    return metrics, preds, reps


def _diagnose_divergence(model: Model, epoch: int) -> TrainingDivergedError:
    for name, p in model.params.items():
        if not np.all(np.isfinite(p.data)) or (p.grad is not None
                                               and not np.all(np.isfinite(p.grad))):
            return TrainingDivergedError(
                epoch, name, f"loss is non-finite at epoch {epoch}; "
                             f"first non-finite parameter/gradient: {name!r}")
    return TrainingDivergedError(
        epoch, None, f"loss is non-finite at epoch {epoch} (parameters still finite)")


def train_run(config: TrainConfig, bundle: FeatureBundle, seed: int,
              run_dir=None) -> RunResult:
    """One seeded training run: Adam on L1 (+ auxiliary) loss, early
    stopping on validation MAE, best-checkpoint restore, test evaluation,
    and representation capture."""
    config.validate()
    train = split_view(bundle, "train")
    valid = split_view(bundle, "valid")
    test = split_view(bundle, "test")

    model_cfg = config.model
    if model_cfg.feature_dims is None:
        model_cfg = replace(
            model_cfg,
            feature_dims={m: b.feature_dim for m, b in bundle.blocks.items()},
            seq_lens={m: b.max_len for m, b in bundle.blocks.items()},
        )
    model_cfg = replace(model_cfg, seed=seed)
    model = build_model(model_cfg)
    if model.needs_unimodal_labels and not bundle.has_unimodal_labels():
        raise ModelError(
            f"model {model.name!r} trains on unimodal labels, but the bundle "
            "does not provide label_t/label_a/label_v for every sample")

    shuffle_rng = np.random.default_rng([seed, 1])
    optimizer = Adam(model.params, config.optimizer)

    history: list[EpochRecord] = []
    best_mae = math.inf
    best_epoch = 0
    best_state: dict[str, np.ndarray] | None = None
    bad_epochs = 0

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(train.n)
        total_abs = 0.0
        for batch in _batches(train, order, config.batch_size, model.dtype):
            with ad.Tape() as tape:
                out = model.forward(batch, train=True)
                loss = model.loss(out, batch)
            loss_val = float(loss.data)
            if not math.isfinite(loss_val):
                ad.backward(tape, loss, model.params)
                raise _diagnose_divergence(model, epoch)
            ad.backward(tape, loss, model.params)
            clip_global_norm(model.params, config.grad_clip)
            optimizer.step()
            total_abs += loss_val * batch.size
        train_loss = total_abs / train.n

        valid_metrics, _, _ = _evaluate(model, valid, config.batch_size)
        history.append(EpochRecord(epoch=epoch, train_loss=train_loss,
                                   valid=valid_metrics, timestamp=time.time()))
        if valid_metrics.mae < best_mae:
            best_mae = valid_metrics.mae
            best_epoch = epoch
            best_state = model.params.state()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break

    if best_state is not None:
        model.params.load_state(best_state)
    test_metrics, test_preds, reps = _evaluate(model, test, config.batch_size, capture=True)
    reps["pred"] = test_preds.astype(np.float32)

    checkpoint_path = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg_dict = config.as_dict()
        cfg_dict["seed"] = seed
        (run_dir / "config.json").write_text(json.dumps(cfg_dict, indent=2) + "\n",
                                             encoding="utf-8")
        with open(run_dir / "history.jsonl", "w", encoding="utf-8") as fh:
            for rec in history:
                fh.write(rec.to_json() + "\n")
        checkpoint_path = str(run_dir / "checkpoint")
        save_checkpoint(model, checkpoint_path, seed=seed)
        write_named_arrays(run_dir / "reps.bin", reps)

    return RunResult(seed=seed, best_epoch=best_epoch, test_metrics=test_metrics,
                     history=history, checkpoint_path=checkpoint_path, reps=reps,
                     run_dir=str(run_dir) if run_dir is not None else None)


@dataclass
class MultiSeedResult:
    model_name: str
    dataset_name: str
    seeds: list[int]
    per_seed: list[RunResult]
    metrics_mean: dict[str, float]
    metrics_std: dict[str, float]
    run_dir: str | None

    def aggregate_dict(self) -> dict:
        per_seed_metrics = {
            key: [getattr(r.test_metrics, key) for r in self.per_seed]
            for key in METRIC_KEYS
        }
        def clean(x):
            return None if x is None or not math.isfinite(x) else x
        return {
            "model": self.model_name,
            "dataset": self.dataset_name,
            "seeds": self.seeds,
            "metrics": {
                key: {
                    "mean": clean(self.metrics_mean[key]),
                    "std": clean(self.metrics_std[key]),
                    "per_seed": [clean(v) for v in per_seed_metrics[key]],
                }
                for key in METRIC_KEYS
            },
        }


def _worker_count(n_jobs: int) -> int:
    env = os.environ.get("MSA_FORGE_THREADS", "1")
    try:
        cap = max(1, int(env))
    except ValueError:
        cap = 1
    return min(n_jobs, cap)


def _timestamp_dir(root: Path, model_name: str) -> Path:
    base = root / model_name / time.strftime("%Y%m%d-%H%M%S")
    candidate = base
    suffix = 1
    while candidate.exists():
        suffix += 1
        candidate = Path(f"{base}-{suffix}")
    return candidate


def multi_seed_run(config: TrainConfig, bundle: FeatureBundle,
                   out_root=None, run_dir=None) -> MultiSeedResult:
    """Run every configured seed and aggregate per-metric mean/std.

    Seeds execute independently (parallel up to MSA_FORGE_THREADS); a
    failing seed aborts aggregation while completed run directories stay
    on disk.
    """
    config.validate()
    if run_dir is not None:
        parent = Path(run_dir)
    elif out_root is not None:
        parent = _timestamp_dir(Path(out_root), config.model.model_name)
    else:
        parent = None
    if parent is not None:
        parent.mkdir(parents=True, exist_ok=True)

    seeds = list(config.seeds)

    def run_one(seed: int) -> RunResult:
        seed_dir = None if parent is None else parent / f"seed_{seed}"
        return train_run(config, bundle, seed, run_dir=seed_dir)

    workers = _worker_count(len(seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, seeds))
    else:
        results = [run_one(s) for s in seeds]

    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    for key in METRIC_KEYS:
        vals = np.array([getattr(r.test_metrics, key) for r in results], dtype=np.float64)
        mean[key] = float(vals.mean())
        std[key] = float(vals.std())

    agg = MultiSeedResult(
        model_name=config.model.model_name,
        dataset_name=config.dataset_name,
        seeds=seeds,
        per_seed=results,
        metrics_mean=mean,
        metrics_std=std,
        run_dir=str(parent) if parent is not None else None,
    )
    if parent is not None:
        (parent / "aggregate.json").write_text(
            json.dumps(agg.aggregate_dict(), indent=2) + "\n", encoding="utf-8")
    return agg

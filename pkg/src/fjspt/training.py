"""Policy-gradient training with a greedy self-rollout baseline.

For every instance in a batch, one sampled episode provides the return and
one greedy episode under the same parameters provides the baseline; the
advantage-weighted sum of log-probabilities is ascended with Adam. Batch
instances are regenerated on a fixed epoch period, and a held-out
validation set tracks the mean greedy makespan over training.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import numkernel as nk
from .decoder import rollout
from .instance import generate_instance
from .model import ModelConfig, make_parameters


class TrainingError(RuntimeError):
    pass


class NonFiniteGradientError(TrainingError):
    """A parameter accumulated a NaN/inf gradient; message names it."""


@dataclass
class TrainConfig:
    """Run settings; defaults follow the reference setup (learning rate
    2e-4, batch size 50, instance refresh every 20 epochs)."""
    n: int = 5
    m: int = 3
    v: int = 3
    epochs: int = 1
    episodes_per_epoch: int = 1000
    batch_size: int = 50
    refresh_period: int = 20
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    seed: int = 0
    val_instances: int = 10
    val_period: int = 100
    checkpoint: str = ""
    log: str = ""
    resume: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if self.refresh_period < 1:
            raise TrainingError("refresh_period must be >= 1")
        if self.episodes_per_epoch % self.batch_size != 0:
            raise TrainingError(
                f"batch_size {self.batch_size} must divide episodes_per_epoch "
                f"{self.episodes_per_epoch}")

    def to_dict(self):
        obj = asdict(self)
        obj["model"] = self.model.to_dict()
        return obj

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)

    @classmethod
    def from_json(cls, path):
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise TrainingError(f"{path}: config parse error at line {e.lineno}: {e.msg}")
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise TrainingError(f"{path}: unknown config fields {sorted(unknown)}")
        try:
            return cls.from_dict(obj)
        except TypeError as e:
            raise TrainingError(f"{path}: {e}")


LOG_COLUMNS = ("episode", "mean_greedy_makespan", "mean_sampled_makespan",
               "grad_norm", "wallclock")


def save_checkpoint(store, model_cfg, path):
    obj = {"model": model_cfg.to_dict(), "store": store.to_json_dict()}
    Path(path).write_text(json.dumps(obj), encoding="utf-8")


def load_checkpoint(path):
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return nk.ParameterStore.from_json_dict(obj["store"]), ModelConfig.from_dict(obj["model"])


def gap(c, best):
    """Relative gap of a makespan against the best one, in percent."""
    if best <= 0:
        raise ValueError(f"gap: best makespan must be positive, got {best}")
    return (c / best - 1.0) * 100.0


@dataclass
class ValidationResult:
    mean: float
    percentiles: dict
    makespans: list


def validate(store, model_cfg, instances, mode="greedy"):
    """Mean and percentile makespan of one rollout per instance."""
    spans = [rollout(inst, store, model_cfg, mode=mode, keep_features=False).makespan
             for inst in instances]
    arr = np.array(spans, dtype=float)
    return ValidationResult(mean=float(arr.mean()),
                            percentiles={p: float(np.percentile(arr, p))
                                         for p in (50, 90)},
                            makespans=spans)


def _ensure_finite_grads(store):
    for name, t in store.params.items():
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise NonFiniteGradientError(
                f"non-finite gradient in parameter {name!r}")


def train_step(store, instances, cfg, rng, advantage_fn=None):
    """One gradient step: for each instance a sampled episode and a greedy
    baseline episode, then an advantage-weighted Adam update.

    `advantage_fn(sampled, baseline) -> float` can replace the default
    return difference (used for alternative baselines and for tests).
    Returns per-batch statistics including the pre-clip gradient norm.
    """
    store.zero_grads()
    batch = len(instances)
    sampled_spans = []
    greedy_spans = []
    for inst in instances:
        traj = rollout(inst, store, cfg.model, mode="sample", rng=rng,
                       record_grad=True, keep_features=False)
        base = rollout(inst, store, cfg.model, mode="greedy", keep_features=False)
        sampled_spans.append(traj.makespan)
        greedy_spans.append(base.makespan)
        if advantage_fn is not None:
            adv = float(advantage_fn(traj, base))
        else:
            adv = float(traj.total_return - base.total_return)
        if adv != 0.0:
            # Ascend advantage * logprob: minimize its negation.
            logp = nk.sum_rows(nk.concat_rows(traj.logp_nodes))
            nk.backward(nk.scale(logp, -adv / batch))
    _ensure_finite_grads(store)
    grad_norm = nk.clip_grads(store, cfg.grad_clip)
    nk.adam_step(store, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                 eps=cfg.adam_eps)
    return {"mean_sampled_makespan": float(np.mean(sampled_spans)),
            "mean_greedy_makespan": float(np.mean(greedy_spans)),
            "grad_norm": grad_norm}


@dataclass
class TrainResult:
    store: nk.ParameterStore
    log_rows: list
    wallclock: float
    validation_instances: list


def train(cfg, progress=None):
    """Full training run; returns the trained store and the training log.

    The log gains one row per validation point (episode 0 and every
    val_period episodes): mean greedy makespan on the held-out instances,
    mean sampled/greedy makespan and gradient norm of the batches since
    the previous point, and elapsed wallclock seconds.
    """
    t0 = time.perf_counter()
    ss = np.random.SeedSequence(cfg.seed)
    ss_init, ss_sample, ss_batch, ss_val = ss.spawn(4)
    init_seed = int(np.random.default_rng(ss_init).integers(2 ** 63))

    store = None
    model_cfg = cfg.model
    if cfg.resume and cfg.checkpoint and Path(cfg.checkpoint).exists():
        store, model_cfg = load_checkpoint(cfg.checkpoint)
    if store is None:
        store = make_parameters(model_cfg, init_seed)

    batch_rng = np.random.default_rng(ss_batch)
    sample_rng = np.random.default_rng(ss_sample)
    val_rng = np.random.default_rng(ss_val)
    val_instances = [
        generate_instance(cfg.n, cfg.m, cfg.v, int(val_rng.integers(2 ** 63)),
                          name=f"val{i}")
        for i in range(cfg.val_instances)]

    log_rows = []
    window = []

    def log_point(episodes):
        res = validate(store, model_cfg, val_instances)
        mean_sampled = (float(np.mean([w["mean_sampled_makespan"] for w in window]))
                        if window else float("nan"))
        mean_norm = (float(np.mean([w["grad_norm"] for w in window]))
                     if window else 0.0)
        log_rows.append({"episode": episodes,
                         "mean_greedy_makespan": res.mean,
                         "mean_sampled_makespan": mean_sampled,
                         "grad_norm": mean_norm,
                         "wallclock": time.perf_counter() - t0})
        window.clear()
        if progress:
            progress(log_rows[-1])

    episodes_done = 0
    next_val = 0
    instances = []
    for epoch in range(1, cfg.epochs + 1):
        if (epoch - 1) % cfg.refresh_period == 0:
            instances = [
                generate_instance(cfg.n, cfg.m, cfg.v,
                                  int(batch_rng.integers(2 ** 63)),
                                  name=f"train_e{epoch}_{b}")
                for b in range(cfg.batch_size)]
        epi = 0
        while epi < cfg.episodes_per_epoch:
            if episodes_done >= next_val:
                log_point(episodes_done)
                next_val += cfg.val_period
            stats = train_step(store, instances, cfg, sample_rng)
            window.append(stats)
            epi += cfg.batch_size
            episodes_done += cfg.batch_size
    log_point(episodes_done)

    if cfg.checkpoint:
        save_checkpoint(store, model_cfg, cfg.checkpoint)
    if cfg.log:
        write_log(log_rows, cfg.log)
    return TrainResult(store=store, log_rows=log_rows,
                       wallclock=time.perf_counter() - t0,
                       validation_instances=val_instances)


def write_log(rows, path):
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(LOG_COLUMNS)
        for row in rows:
            w.writerow([row[c] for c in LOG_COLUMNS])

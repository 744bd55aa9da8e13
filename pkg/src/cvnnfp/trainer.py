"""Optimization loop, per-split evaluation and mean/sigma aggregation.

One split is one independent experiment: a freshly initialized model is
trained on the split's training slices and scored on its test slices.
A scenario run repeats this for every split and reports the sample mean
and standard deviation of the per-split accuracies. Splits never share
model state, so they can run on parallel workers.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import datapipe, models
from .datapipe import ScenarioSpec, Split, input_transform
from .models import AblationConfig, Model


@dataclass(frozen=True)
class Hyperparams:
    optimizer: str = "adam"      # "adam" | "sgd"
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    precision: str = "single"    # "single" | "double"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 (batch norm needs N >= 2)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.precision not in ("single", "double"):
            raise ValueError(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64


@dataclass
class SplitResult:
    split_index: int
    test_accuracy: float
    train_loss: list[float]  # per-epoch mean loss
    wall_time: float


@dataclass
class Aggregate:
    mean_accuracy: float
    std_accuracy: float  # sample (n-1) convention; 0 when n == 1
    results: list[SplitResult]
    partial: bool = False


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


class SGDMomentum:
    def __init__(self, params, lr, momentum=0.9):
        self.params = list(params)
        self.lr, self.momentum = lr, momentum
        self.vel = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.vel):
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v


def _make_optimizer(model: Model, hp: Hyperparams):
    if hp.optimizer == "adam":
        return Adam(model.parameters(), hp.learning_rate)
    return SGDMomentum(model.parameters(), hp.learning_rate)


def evaluate(model: Model, X: np.ndarray, y: np.ndarray, batch_size: int = 256) -> float:
    correct = 0
    for lo in range(0, len(y), batch_size):
        pred = model.predict(X[lo:lo + batch_size])
        correct += int((pred == y[lo:lo + batch_size]).sum())
    return correct / len(y)


def train_on_split(model: Model, split: Split, mode: str, hp: Hyperparams) -> SplitResult:
    """Train on the split's train slices, score on its test slices.

    ``mode`` is the input representation (I/Q/IQ/R/T/RT), applied to both
    train and test data. Deterministic for a fixed seed.
    """
    t0 = time.perf_counter()
    Xtr, ytr = split.train_set()
    Xte, yte = split.test_set()
    # leakage audit: training must only see the leading contiguous block
    assert split.slice_indices[split.train_mask].max() <= datapipe.TRAIN_SLICES
    Xtr = input_transform(Xtr, mode).astype(hp.dtype)
    Xte = input_transform(Xte, mode).astype(hp.dtype)

    opt = _make_optimizer(model, hp)
    rng = np.random.default_rng([hp.seed, split.split_index, 0x5eed])
    n = len(ytr)
    trace = []
    for _ in range(hp.epochs):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, hp.batch_size):
            idx = order[lo:lo + hp.batch_size]
            if len(idx) < 2:
                continue  # batch norm needs at least 2 rows
            loss = model.loss(Xtr[idx], ytr[idx], mode="train")
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss on split {split.split_index} "
                    f"(epoch {len(trace)}, batch at {lo}); aborting")
            for p in model.parameters():
                p.zero_grad()
            loss.backward()
            model.mask_gradients()
            opt.step()
            losses.append(value)
        trace.append(float(np.mean(losses)))

    acc = evaluate(model, Xte, yte)
    return SplitResult(split_index=split.split_index, test_accuracy=acc,
                       train_loss=trace, wall_time=time.perf_counter() - t0)


def _model_seed(base_seed: int, split_idx: int) -> int:
    return int(np.random.SeedSequence([base_seed, split_idx]).generate_state(1)[0])


def run_single_split(spec: ScenarioSpec, recordings: dict, model_kind: str,
                     mode: str, ablation: AblationConfig, hp: Hyperparams,
                     split_idx: int) -> SplitResult:
    m, p = datapipe.split_index_inverse(split_idx, spec.partitions)
    split = datapipe.make_split(spec, recordings, m, p)
    model = models.build_model(model_kind, spec.num_devices,
                               _model_seed(hp.seed, split_idx), dtype=hp.dtype)
    if ablation.enabled:
        models.apply_ablation(model, ablation)
    return train_on_split(model, split, mode, hp)


def run_scenario(spec: ScenarioSpec, recordings: dict, model_kind: str,
                 mode: str, ablation: AblationConfig, hp: Hyperparams,
                 workers: int = 1, split_indices=None,
                 progress=None) -> Aggregate:
    """Train a fresh model on every split and aggregate the accuracies."""
    if split_indices is None:
        split_indices = list(range(1, spec.num_splits + 1))
    results, partial = [], False

    def record(res):
        results.append(res)
        if progress:
            progress(res)

    if workers <= 1:
        for s in split_indices:
            try:
                record(run_single_split(spec, recordings, model_kind, mode,
                                        ablation, hp, s))
            except RuntimeError as exc:
                partial = True
                print(f"split {s} failed: {exc}")
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {s: pool.submit(run_single_split, spec, recordings,
                                      model_kind, mode, ablation, hp, s)
                       for s in split_indices}
            for s, fut in futures.items():
                try:
                    record(fut.result())
                except RuntimeError as exc:
                    partial = True
                    print(f"split {s} failed: {exc}")

    results.sort(key=lambda r: r.split_index)
    agg = aggregate_mean_std(results)
    agg.partial = partial
    return agg


def aggregate_mean_std(results: list[SplitResult]) -> Aggregate:
    if not results:
        raise ValueError("cannot aggregate zero results")
    accs = np.array([r.test_accuracy for r in results], dtype=np.float64)
    std = float(accs.std(ddof=1)) if len(accs) > 1 else 0.0
    return Aggregate(mean_accuracy=float(accs.mean()), std_accuracy=std,
                     results=list(results))

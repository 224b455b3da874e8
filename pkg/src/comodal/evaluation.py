"""Metrics, cross-validation orchestration, embedding export, and the
finite-difference gradient checker."""

from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .baselines import VariantSpec, build_variant
from .data import (ConfigurationError, Dataset, Normalizer, TaskSpec, compute_class_weights,
                   fit_normalizer, kfold_split, normalize_target)
from .encoders import EncoderSpec
from .model import CoLearnModel, TrainHistory, train
from .seeding import derive_seed

F1_AVERAGES = ("macro", "micro", "weighted")


def logits_to_predictions(logits: np.ndarray, task: TaskSpec) -> np.ndarray:
    """Argmax class indices (ties -> lowest index) or 0.5-thresholded bits."""
    logits = np.asarray(logits)
    if task.kind == "regression":
        return logits.reshape(-1)
    if task.kind == "multilabel":
        return (logits > 0).astype(np.int64)  # sigmoid(z) > 0.5 iff z > 0
    return np.argmax(logits, axis=1)


def _binary_f1(tp: float, fp: float, fn: float) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom > 0 else 0.0


def f1_score(y_true, y_pred, task: TaskSpec, average: str = "macro") -> float:
    """F1 over classes; macro by default. A class absent from both truth and
    prediction contributes 0 (with a warning)."""
    if not task.is_classification:
        raise ConfigurationError("f1_score applies to classification tasks only")
    if average not in F1_AVERAGES:
        raise ConfigurationError(f"average must be one of {F1_AVERAGES}")
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValueError("f1_score needs at least one sample")

    k = task.num_classes
    if task.kind == "multilabel":
        true_pos = ((y_true == 1) & (y_pred == 1)).sum(axis=0).astype(float)
        false_pos = ((y_true == 0) & (y_pred == 1)).sum(axis=0).astype(float)
        false_neg = ((y_true == 1) & (y_pred == 0)).sum(axis=0).astype(float)
        support = (y_true == 1).sum(axis=0).astype(float)
    else:
        true_pos = np.zeros(k)
        false_pos = np.zeros(k)
        false_neg = np.zeros(k)
        for c in range(k):
            true_pos[c] = ((y_true == c) & (y_pred == c)).sum()
            false_pos[c] = ((y_true != c) & (y_pred == c)).sum()
            false_neg[c] = ((y_true == c) & (y_pred != c)).sum()
        support = np.bincount(y_true.astype(np.int64), minlength=k).astype(float)

    absent = (true_pos + false_pos + false_neg) == 0
    if absent.any():
        warnings.warn(f"classes {np.nonzero(absent)[0].tolist()} absent from both truth and "
                      "prediction; they contribute F1 = 0", stacklevel=2)
    per_class = np.array([_binary_f1(true_pos[c], false_pos[c], false_neg[c]) for c in range(k)])

    if average == "macro":
        return float(per_class.mean())
    if average == "weighted":
        if support.sum() == 0:
            raise ValueError("weighted F1 undefined without any positive support")
        return float((per_class * support).sum() / support.sum())
    return float(_binary_f1(true_pos.sum(), false_pos.sum(), false_neg.sum()))


def r2_score(y_true, y_pred) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot about the truth mean."""
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size < 2:
        raise ValueError("r2_score needs at least two samples")
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    if ss_tot == 0:
        raise ValueError("r2_score undefined for constant truth")
    ss_res = float(((y_true - y_pred) ** 2).sum())
    return 1.0 - ss_res / ss_tot


@dataclass(eq=False)
class MetricReport:
    """Raw fold x run metric values for one (variant, modality) cell."""

    metric: str
    variant: str
    modality: int
    raw: np.ndarray  # (k, runs)

    @property
    def per_fold(self) -> np.ndarray:
        return self.raw.mean(axis=1)

    @property
    def per_run(self) -> np.ndarray:
        return self.raw.mean(axis=0)

    @property
    def mean(self) -> float:
        return float(self.raw.mean())

    @property
    def std(self) -> float:
        return float(self.raw.std())

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "variant": self.variant,
            "modality": self.modality,
            "raw": self.raw.tolist(),
            "per_fold": self.per_fold.tolist(),
            "per_run": self.per_run.tolist(),
            "mean": self.mean,
            "std": self.std,
        }


@dataclass(eq=False)
class RunReport:
    """Everything one cross-validated evaluation produced."""

    variant: str
    config: dict
    metrics: list[MetricReport]
    histories: dict[str, TrainHistory]
    provenance: dict
    wall_clock: dict = field(default_factory=dict)

    def metric_for(self, modality: int, variant: str | None = None) -> MetricReport:
        label = variant or self.variant
        for mr in self.metrics:
            if mr.modality == modality and mr.variant == label:
                return mr
        raise KeyError(f"no metric report for variant {label!r}, modality {modality}")

    def to_dict(self) -> dict:
        # wall-clock stays off disk so re-runs produce byte-identical reports
        return {
            "variant": self.variant,
            "config": self.config,
            "metrics": [m.to_dict() for m in self.metrics],
            "histories": {k: h.to_dict() for k, h in self.histories.items()},
            "provenance": self.provenance,
        }


def _predict_batched(predict: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                     batch_size: int = 512) -> np.ndarray:
    outs = [predict(x[i:i + batch_size]) for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(outs, axis=0)


def _metric_value(y_true: np.ndarray, logits: np.ndarray, task: TaskSpec, f1_average: str) -> float:
    preds = logits_to_predictions(logits, task)
    if task.kind == "regression":
        return r2_score(y_true, preds)
    return f1_score(y_true, preds, task, average=f1_average)


def run_cv(dataset: Dataset, variant: VariantSpec, encoder_specs: Sequence[EncoderSpec],
           k: int = 10, runs: int = 5, seed: int = 0, val_fraction: float = 0.1,
           f1_average: str = "macro", include_feature_spaces: bool = False,
           dtype: torch.dtype = torch.float32) -> RunReport:
    """K-fold cross-validation repeated over independent runs.

    Per fold: normalizers (and class weights / target scaling) are fitted on
    the training portion only; a validation subset is carved from it for
    early stopping; each single-modality inference path is scored on the test
    fold. Fully deterministic given (dataset, variant, seed).
    """
    if not 0 < val_fraction < 1:
        raise ConfigurationError("val_fraction must lie in (0, 1)")
    task0 = dataset.task
    n = len(dataset)
    x_all = {1: dataset.modality_array(1), 2: dataset.modality_array(2)}
    y_all = dataset.target_array()
    folds = kfold_split(n, k, seed)

    modalities = [variant.modality] if variant.name == "individual" else [1, 2]
    metric_name = "r2" if task0.kind == "regression" else "f1"
    cells: dict[tuple[str, int], np.ndarray] = {}

    def cell(label: str, modality: int) -> np.ndarray:
        return cells.setdefault((label, modality), np.zeros((k, runs)))

    histories: dict[str, TrainHistory] = {}
    t_train = t_eval = 0.0

    for fi, (train_ids, test_ids) in enumerate(folds):
        # validation subset carved out of the training portion
        carve_rng = np.random.default_rng(derive_seed(seed, fi))
        shuffled = carve_rng.permutation(train_ids)
        n_val = max(1, int(round(val_fraction * len(train_ids))))
        if n_val >= len(train_ids):
            raise ConfigurationError("training portion too small to carve a validation subset")
        val_ids, fit_ids = np.sort(shuffled[:n_val]), np.sort(shuffled[n_val:])

        norms = {m: fit_normalizer(dataset, m, train_ids) for m in (1, 2)}
        xn = {m: norms[m].transform(x_all[m]) for m in (1, 2)}

        task = task0
        y = y_all
        if task0.is_classification:
            task = task0.with_class_weights(compute_class_weights(y_all[train_ids], task0))
        else:
            _, target_norm = normalize_target(y_all[train_ids])
            y = target_norm.transform(y_all.astype(np.float64)).astype(np.float32)

        for run in range(runs):
            train_seed = derive_seed(seed, fi, run)
            model = build_variant(replace(variant, train=replace(variant.train, seed=train_seed)),
                                  dataset, encoder_specs, seed=train_seed, dtype=dtype)
            config = replace(variant.train, seed=train_seed)
            t0 = time.perf_counter()
            _, history = train(model,
                               (xn[1][fit_ids], xn[2][fit_ids], y[fit_ids]),
                               (xn[1][val_ids], xn[2][val_ids], y[val_ids]),
                               config, task)
            t_train += time.perf_counter() - t0
            histories[f"fold{fi}_run{run}"] = history

            t0 = time.perf_counter()
            for m in modalities:
                logits = _predict_batched(lambda xb, m=m: model.predict_single(m, xb),
                                          xn[m][test_ids])
                cell(variant.label(), m)[fi, run] = _metric_value(
                    y[test_ids], logits, task0, f1_average)
                if include_feature_spaces and isinstance(model, CoLearnModel):
                    for space in ("shared", "specific"):
                        logits_s = _predict_batched(
                            lambda xb, m=m, s=space: model.predict_from_space(m, xb, s),
                            xn[m][test_ids])
                        cell(f"{variant.label()}:{space}", m)[fi, run] = _metric_value(
                            y[test_ids], logits_s, task0, f1_average)
            t_eval += time.perf_counter() - t0

    metrics = [MetricReport(metric=metric_name, variant=label, modality=m, raw=raw)
               for (label, m), raw in cells.items()]
    config_snapshot = {
        "variant": {"name": variant.name, "modality": variant.modality},
        "train": variant.train.to_dict(),
        "encoders": [s.to_dict() for s in encoder_specs],
        "evaluation": {"k_folds": k, "runs": runs, "seed": seed, "val_fraction": val_fraction,
                       "f1_average": f1_average, "feature_spaces": include_feature_spaces},
    }
    return RunReport(variant=variant.label(), config=config_snapshot, metrics=metrics,
                     histories=histories, provenance=dict(dataset.provenance),
                     wall_clock={"train_s": t_train, "eval_s": t_eval})


def write_metrics_csv(report: RunReport, path: str | Path) -> Path:
    """Raw values, one row per (variant, modality, fold, run)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "modality", "fold", "run", "metric_name", "value"])
        for mr in report.metrics:
            for fold in range(mr.raw.shape[0]):
                for run in range(mr.raw.shape[1]):
                    writer.writerow([mr.variant, mr.modality, fold, run, mr.metric,
                                     f"{mr.raw[fold, run]:.17g}"])
    return path


def write_report_json(report: RunReport, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# Embedding export
# ---------------------------------------------------------------------------

def _pca_2d(matrix: np.ndarray) -> np.ndarray:
    """Deterministic 2-component PCA; each component's largest-magnitude
    loading is made positive."""
    centered = matrix - matrix.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    if comps.shape[0] < 2:
        comps = np.vstack([comps, np.zeros((2 - comps.shape[0], comps.shape[1]))])
    for i in range(2):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return centered @ comps.T


def _target_text(target) -> str:
    if isinstance(target, np.ndarray):
        return ";".join(str(int(v)) for v in target)
    return f"{target:.9g}" if isinstance(target, float) else str(target)


def export_embeddings(model: CoLearnModel, dataset: Dataset, out_dir: str | Path,
                      normalizers: dict[int, Normalizer] | None = None,
                      batch_size: int = 512) -> list[Path]:
    """Per modality: CSV of (id, target, pc1, pc2) from the concatenated
    shared/specific features."""
    if len(dataset) < 2:
        raise ConfigurationError("embedding export needs at least two samples")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.eval()
    paths = []
    for m in (1, 2):
        x = dataset.modality_array(m)
        if normalizers and m in normalizers:
            x = normalizers[m].transform(x)
        feats = []
        with torch.no_grad():
            for i in range(0, x.shape[0], batch_size):
                t = model.features(m, x[i:i + batch_size])
                feats.append(torch.cat([t.shared, t.specific], dim=1).cpu().numpy())
        projected = _pca_2d(np.concatenate(feats, axis=0).astype(np.float64))
        path = out_dir / f"embeddings_mod{m}.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "target", "pc1", "pc2"])
            for sample, row in zip(dataset.samples, projected):
                writer.writerow([sample.id, _target_text(sample.target),
                                 f"{row[0]:.9g}", f"{row[1]:.9g}"])
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------

class GradCheckError(RuntimeError):
    """Analytic gradient is non-finite for a named parameter block."""


def gradcheck(module: torch.nn.Module, loss_fn: Callable[[], torch.Tensor],
              step: float = 1e-5, max_entries_per_block: int | None = None,
              seed: int = 0) -> dict[str, float]:
    """Central finite differences against autograd, per parameter block.

    ``loss_fn`` must be a deterministic closure over the module and a fixed
    batch (the module is put in eval mode here). Relative error per entry is
    |g_a - g_n| / max(1e-8, |g_a| + |g_n|); the report maps each parameter
    path to its max. Parameters are restored bit-exactly afterwards.
    """
    module.eval()
    params = [(name, p) for name, p in module.named_parameters() if p.requires_grad]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [p for _, p in params], allow_unused=True)

    report: dict[str, float] = {}
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for (name, p), grad in zip(params, grads):
            if grad is None:
                grad = torch.zeros_like(p)
            if not torch.isfinite(grad).all():
                raise GradCheckError(f"non-finite analytic gradient in block {name!r}")
            flat = p.view(-1)
            gflat = grad.reshape(-1)
            entries = np.arange(flat.numel())
            if max_entries_per_block is not None and flat.numel() > max_entries_per_block:
                entries = rng.choice(flat.numel(), size=max_entries_per_block, replace=False)
            worst = 0.0
            for idx in entries:
                idx = int(idx)
                original = flat[idx].item()
                flat[idx] = original + step
                plus = float(loss_fn())
                flat[idx] = original - step
                minus = float(loss_fn())
                flat[idx] = original
                numeric = (plus - minus) / (2 * step)
                analytic = float(gflat[idx])
                rel = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
                worst = max(worst, rel)
            report[name] = worst
    module.zero_grad(set_to_none=True)
    return report

"""The four training objectives and their combinations.

All loss functions take torch tensors (array-likes are converted), return
differentiable scalars, and reduce over the batch by means, so magnitudes are
batch-size independent and one code path serves training, per-epoch tracing,
and finite-difference verification.

Contrastive pairing: row i of the candidate batch is the positive for row i
of the anchor batch; every candidate row (positive included) appears in the
softmax denominator. Similarities are cosine with norms floored at 1e-12 and
the log-sum-exp is max-stabilized, so the loss stays finite for temperatures
down to 1e-3.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .data import ConfigurationError, TaskSpec
from .encoders import FeatureTriple

NORM_FLOOR = 1e-12
TRACE_COLUMNS = ("epoch", "main", "aux", "contrastive", "modality", "total")


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.07

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigurationError("contrastive temperature must be > 0")


def _as_float_tensor(x, like: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        if x.dtype.is_floating_point:
            return x
        return x.to(like.dtype if like is not None else torch.get_default_dtype())
    arr = np.asarray(x)
    if like is not None:
        return torch.as_tensor(arr, dtype=like.dtype)
    if np.issubdtype(arr.dtype, np.floating):
        return torch.as_tensor(arr)  # keeps float64 inputs at full precision
    return torch.as_tensor(arr, dtype=torch.get_default_dtype())


def cosine_similarity(a, b) -> torch.Tensor:
    """Cosine similarity of two vectors, with norms floored at 1e-12."""
    a = _as_float_tensor(a).reshape(-1)
    b = _as_float_tensor(b).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"vectors must share a dimension, got {tuple(a.shape)} and {tuple(b.shape)}")
    denom = a.norm().clamp_min(NORM_FLOOR) * b.norm().clamp_min(NORM_FLOOR)
    return (a * b).sum() / denom


def _cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    an = a / a.norm(dim=1, keepdim=True).clamp_min(NORM_FLOOR)
    bn = b / b.norm(dim=1, keepdim=True).clamp_min(NORM_FLOOR)
    return an @ bn.T


def info_nce(anchors, candidates, temperature: float = 0.07) -> torch.Tensor:
    """Mean InfoNCE over anchors; exactly zero for a single-row batch."""
    anchors = _as_float_tensor(anchors)
    candidates = _as_float_tensor(candidates, like=anchors)
    if anchors.dim() != 2 or candidates.dim() != 2:
        raise ValueError("anchors and candidates must be (B, d) batches")
    if anchors.shape != candidates.shape:
        raise ValueError(f"anchor/candidate shapes differ: {tuple(anchors.shape)} vs {tuple(candidates.shape)}")
    if anchors.shape[0] == 0:
        raise ValueError("InfoNCE needs a non-empty batch")
    if not temperature > 0:
        raise ConfigurationError("contrastive temperature must be > 0")
    logits = _cosine_matrix(anchors, candidates) / temperature
    # logsumexp subtracts the row max internally, keeping tiny temperatures finite
    return (torch.logsumexp(logits, dim=1) - logits.diagonal()).mean()


def contrastive_loss(z1, z2, temperature: float = 0.07) -> torch.Tensor:
    """Both modalities take a turn as anchor; symmetric in its arguments."""
    z1 = _as_float_tensor(z1)
    z2 = _as_float_tensor(z2, like=z1)
    if z1.shape[0] != z2.shape[0]:
        raise ValueError(f"row counts differ: {z1.shape[0]} vs {z2.shape[0]}")
    return info_nce(z1, z2, temperature) + info_nce(z2, z1, temperature)


def _class_weights_tensor(task: TaskSpec, like: torch.Tensor) -> torch.Tensor:
    if task.class_weights is None:
        return torch.ones(task.num_classes, dtype=like.dtype)
    return torch.as_tensor(task.class_weights, dtype=like.dtype)


def predictive_loss(y_true, logits, task: TaskSpec) -> torch.Tensor:
    """Task-dispatched predictive loss.

    Classification: class-weighted softmax cross-entropy, normalized by the
    summed weights of the batch. Multilabel: per-class weighted binary
    cross-entropy on sigmoid outputs, mean over batch and classes.
    Regression: mean squared error (targets are expected z-scored upstream).
    """
    logits = _as_float_tensor(logits)
    if not torch.isfinite(logits).all():
        raise ValueError("predictive loss received non-finite logits")

    if task.kind == "regression":
        pred = logits.reshape(logits.shape[0], -1)
        if pred.shape[1] != 1:
            raise ValueError(f"regression logits must have one output, got {pred.shape[1]}")
        y = _as_float_tensor(y_true, like=logits).reshape(-1)
        if y.shape[0] != pred.shape[0]:
            raise ValueError("target/prediction batch sizes differ")
        return ((pred[:, 0] - y) ** 2).mean()

    if logits.dim() != 2 or logits.shape[1] != task.num_classes:
        raise ValueError(f"expected logits of shape (B, {task.num_classes}), got {tuple(logits.shape)}")
    weights = _class_weights_tensor(task, logits)

    if task.kind == "multilabel":
        y = _as_float_tensor(y_true, like=logits)
        if y.shape != logits.shape:
            raise ValueError(f"multilabel targets must match logits shape {tuple(logits.shape)}")
        if not torch.isin(y, torch.tensor([0.0, 1.0], dtype=y.dtype)).all():
            raise ValueError("multilabel targets must be 0/1")
        bce = torch.nn.functional.binary_cross_entropy_with_logits(logits, y, reduction="none")
        return (bce * weights).mean()

    y = torch.as_tensor(np.asarray(y_true)).reshape(-1).long()
    if y.shape[0] != logits.shape[0]:
        raise ValueError("target/logit batch sizes differ")
    if y.numel() and (y.min() < 0 or y.max() >= task.num_classes):
        raise ValueError(f"class labels must lie in [0, {task.num_classes})")
    logp = torch.log_softmax(logits, dim=1)
    nll = -logp[torch.arange(y.shape[0]), y]
    w = weights[y]
    return (w * nll).sum() / w.sum()


def main_loss(y_true, logits1, logits2, task: TaskSpec) -> torch.Tensor:
    """Average of the two per-modality predictive losses."""
    return 0.5 * (predictive_loss(y_true, logits1, task) + predictive_loss(y_true, logits2, task))


def aux_loss(aux_head, triples: Sequence[FeatureTriple], y_true, task: TaskSpec) -> torch.Tensor:
    """Half the summed predictive loss of the auxiliary head over the four
    task-discriminative feature batches (shared and specific, per modality)."""
    if len(triples) != 2:
        raise ValueError("aux loss expects one feature triple per modality")
    feats = []
    for t in triples:
        if t.shared is None or t.specific is None:
            raise ValueError("aux loss needs both shared and specific features")
        feats += [t.shared, t.specific]
    return 0.5 * sum(predictive_loss(y_true, aux_head(f), task) for f in feats)


def _modality_ce(logits: torch.Tensor, modality_index: int) -> torch.Tensor:
    logp = torch.log_softmax(logits, dim=1)
    return -logp[:, modality_index].mean()


def modality_loss(specific_head, unused_head, triples: Sequence[FeatureTriple]) -> torch.Tensor:
    """Half the summed cross-entropy of the modality classifiers.

    Each classifier predicts which modality a feature batch came from
    (index 0 or 1); specific and unused spaces get separate classifiers.
    Encoders and classifiers minimize this cooperatively. With unused
    features ablated, only the specific terms remain.
    """
    if len(triples) != 2:
        raise ValueError("modality loss expects one feature triple per modality")
    terms = []
    for m, t in enumerate(triples):
        terms.append(_modality_ce(specific_head(t.specific), m))
        if t.unused is not None:
            if unused_head is None:
                raise ValueError("unused features present but no unused-space classifier given")
            terms.append(_modality_ce(unused_head(t.unused), m))
    return 0.5 * sum(terms)


@dataclass(eq=False)
class LossBundle:
    """The four loss terms plus their (possibly weighted) total.

    Fields hold torch scalars during training and plain floats after
    ``detach()``. For the uniform weighting, total equals the sum of the four
    terms; the Kendall weighting records its log-variances alongside.
    """

    main: object
    aux: object
    contrastive: object
    modality: object
    total: object
    kendall_log_vars: object | None = None

    def term(self, name: str):
        if name not in ("main", "aux", "contrastive", "modality", "total"):
            raise ValueError(f"unknown loss term {name!r}")
        return getattr(self, name)

    def detach(self) -> "LossBundle":
        def f(v):
            return float(v.detach()) if isinstance(v, torch.Tensor) else (None if v is None else v)
        kl = self.kendall_log_vars
        if isinstance(kl, torch.Tensor):
            kl = [float(v) for v in kl.detach()]
        return LossBundle(f(self.main), f(self.aux), f(self.contrastive), f(self.modality),
                          f(self.total), kl)

    def as_dict(self) -> dict:
        out = self.detach()
        d = {"main": out.main, "aux": out.aux, "contrastive": out.contrastive,
             "modality": out.modality, "total": out.total}
        if out.kendall_log_vars is not None:
            d["kendall_log_vars"] = out.kendall_log_vars
        return d


def total_loss(main, aux, contrastive, modality) -> LossBundle:
    """Unweighted sum of the four terms; errors name any non-finite term."""
    terms = {"main": main, "aux": aux, "contrastive": contrastive, "modality": modality}
    for name, value in terms.items():
        v = value.detach() if isinstance(value, torch.Tensor) else torch.as_tensor(float(value))
        if not torch.isfinite(v).all():
            raise ValueError(f"non-finite {name} loss")
    return LossBundle(main=main, aux=aux, contrastive=contrastive, modality=modality,
                      total=main + aux + contrastive + modality)


def kendall_total(terms: Sequence, log_variances: torch.Tensor) -> torch.Tensor:
    """Uncertainty-weighted combination: sum of exp(-s_t) * L_t + s_t / 2.

    The log-variances are trainable; all zeros recovers the unweighted sum.
    """
    log_variances = _as_float_tensor(log_variances).reshape(-1)
    if len(terms) != log_variances.shape[0]:
        raise ValueError(f"need one log-variance per term, got {len(terms)} terms "
                         f"and {log_variances.shape[0]} log-variances")
    total = None
    for t, s in zip(terms, log_variances):
        contrib = torch.exp(-s) * t + s / 2
        total = contrib if total is None else total + contrib
    return total


def write_loss_trace(epoch_bundles: Sequence[LossBundle], path: str | Path) -> Path:
    """Per-epoch loss-term trace as CSV: (epoch, main, aux, contrastive, modality, total)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for epoch, bundle in enumerate(epoch_bundles):
            row = bundle.detach()
            writer.writerow([epoch] + [f"{row.term(c):.17g}" for c in TRACE_COLUMNS[1:]])
    return path


def read_loss_trace(path: str | Path) -> list[dict[str, float]]:
    path = Path(path)
    with path.open() as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigurationError(f"{path.name}: empty loss trace") from None
        if tuple(header) != TRACE_COLUMNS:
            raise ConfigurationError(f"{path.name}: expected columns {TRACE_COLUMNS}, got {tuple(header)}")
        rows = []
        for raw in reader:
            if len(raw) != len(TRACE_COLUMNS):
                raise ConfigurationError(f"{path.name}: malformed row {raw!r}")
            try:
                rows.append({c: float(v) for c, v in zip(TRACE_COLUMNS, raw)})
            except ValueError:
                raise ConfigurationError(f"{path.name}: non-numeric row {raw!r}") from None
    if not rows:
        raise ConfigurationError(f"{path.name}: loss trace has no data rows")
    return rows

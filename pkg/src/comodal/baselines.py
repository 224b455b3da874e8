"""Comparison and ablation variants: the individual single-modality baseline
and the knockouts of the full framework.

Knockouts drop one ingredient at a time: a loss term, the unused feature
space, correct cross-modal pairing (replaced by a seeded derangement inside
the contrastive term only), separate common/unique trunks, or the uniform
loss weighting (replaced by learned uncertainty weights).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from . import losses as L
from .data import ConfigurationError, Dataset, ModalityConfig, TaskSpec
from .encoders import EncoderSpec, ProjectionHead, build_trunk, init_parameters
from .model import (CHECKPOINT_VERSION, CheckpointError, CoLearnModel, LossAssembly,
                    TrainConfig, _load_arrays, read_checkpoint, save_model)

VARIANT_NAMES = (
    "individual",
    "full",
    "no_modality_loss",
    "no_aux_loss",
    "no_contrastive_loss",
    "no_unused_features",
    "unpaired_data",
    "shared_encoders",
    "weighted_loss",
)


@dataclass(frozen=True)
class VariantSpec:
    name: str
    train: TrainConfig = TrainConfig()
    modality: int | None = None  # required for the individual baseline

    def __post_init__(self):
        if self.name not in VARIANT_NAMES:
            raise ConfigurationError(f"unknown variant {self.name!r}; expected one of {VARIANT_NAMES}")
        if self.name == "individual":
            if self.modality not in (1, 2):
                raise ConfigurationError("individual variant must fix a modality index (1 or 2)")
        elif self.modality is not None:
            raise ConfigurationError(f"variant {self.name!r} takes no modality index")

    def label(self) -> str:
        return self.name


def loss_assembly_for(name: str) -> tuple[LossAssembly, bool]:
    """Map a variant name to (loss assembly, shared-trunk flag)."""
    if name == "individual":
        raise ConfigurationError("the individual baseline is a separate model, not a loss assembly")
    if name not in VARIANT_NAMES:
        raise ConfigurationError(f"unknown variant {name!r}")
    assembly = LossAssembly(
        use_aux=name != "no_aux_loss",
        use_contrastive=name != "no_contrastive_loss",
        use_modality=name != "no_modality_loss",
        with_unused=name != "no_unused_features",
        unpaired=name == "unpaired_data",
        kendall=name == "weighted_loss",
    )
    return assembly, name == "shared_encoders"


class IndividualModel(nn.Module):
    """Single-modality baseline: one trunk, one wide projection, one linear head.

    The projection is twice the co-learning width, matching the head input of
    the full model's concatenated shared/specific blocks. Trained with the
    predictive loss alone; the other modality's encoder is never built.
    """

    def __init__(self, task: TaskSpec, modality_config: ModalityConfig, modality_index: int,
                 encoder_spec: EncoderSpec, seed: int, dtype: torch.dtype = torch.float32):
        super().__init__()
        if modality_index not in (1, 2):
            raise ConfigurationError(f"modality index must be 1 or 2, got {modality_index}")
        self.task = task
        self.modality_config = modality_config
        self.modality_index = modality_index
        self.encoder_spec = encoder_spec
        width = 2 * encoder_spec.projection_dim
        self.trunk = build_trunk(encoder_spec, modality_config)
        self.projection = ProjectionHead(encoder_spec.hidden_units, width,
                                         encoder_spec.projection_dropout)
        self.head = nn.Linear(width, task.output_dim)
        self.to(dtype)
        init_parameters(self, seed)

    @property
    def dtype(self) -> torch.dtype:
        return self.head.weight.dtype

    def _logits(self, x) -> torch.Tensor:
        x = torch.as_tensor(np.asarray(x)).to(self.dtype)
        return self.head(self.projection(self.trunk(x)))

    def compute_losses(self, x1, x2, y, contrast_seed: int | None = None):
        x = x1 if self.modality_index == 1 else x2
        logits = self._logits(x)
        main = L.predictive_loss(y, logits, self.task)
        zero = logits.new_zeros(())
        bundle = L.total_loss(main, zero, zero, zero)
        return bundle, (logits,), ()

    @torch.no_grad()
    def predict_single(self, modality: int, x) -> np.ndarray:
        if modality != self.modality_index:
            raise ConfigurationError(
                f"this individual baseline handles modality {self.modality_index}, not {modality}")
        self.eval()
        return self._logits(x).cpu().numpy()

    def metadata(self) -> dict:
        return {
            "task": self.task.to_dict(),
            "modality_config": self.modality_config.to_dict(),
            "modality_index": self.modality_index,
            "encoder_spec": self.encoder_spec.to_dict(),
        }


def build_variant(spec: VariantSpec, dataset: Dataset, encoder_specs: Sequence[EncoderSpec],
                  seed: int, dtype: torch.dtype = torch.float32) -> nn.Module:
    """Instantiate the model a variant trains: the full model with the chosen
    loss assembly, or the individual baseline for its fixed modality."""
    task = dataset.task
    if spec.name == "individual":
        m = spec.modality
        return IndividualModel(task, dataset.modality(m), m, encoder_specs[m - 1],
                               seed=seed, dtype=dtype)
    assembly, shared_trunk = loss_assembly_for(spec.name)
    return CoLearnModel(task, dataset.mod1, dataset.mod2, encoder_specs, seed=seed,
                        assembly=assembly, shared_trunk=shared_trunk,
                        temperature=spec.train.temperature, dtype=dtype)


def save_individual(model: IndividualModel, path: str | Path,
                    train_config: TrainConfig | None = None,
                    normalizers: dict | None = None) -> Path:
    return save_model(model, path, variant="individual", train_config=train_config,
                      normalizers=normalizers)


def load_individual(path: str | Path, dtype: torch.dtype = torch.float32
                    ) -> tuple[IndividualModel, dict]:
    meta, arrays = read_checkpoint(path)
    if meta.get("variant") != "individual":
        raise CheckpointError(f"checkpoint holds variant {meta.get('variant')!r}, "
                              "not an individual baseline")
    m = meta["model"]
    model = IndividualModel(
        task=TaskSpec.from_dict(m["task"]),
        modality_config=ModalityConfig.from_dict(m["modality_config"]),
        modality_index=int(m["modality_index"]),
        encoder_spec=EncoderSpec.from_dict(m["encoder_spec"]),
        seed=0,
        dtype=dtype,
    )
    _load_arrays(model, arrays)
    model.eval()
    return model, meta


def expand_variants(variants: Sequence[VariantSpec]) -> list[VariantSpec]:
    """Expand modality-free 'individual' entries into one spec per modality."""
    out = []
    for v in variants:
        if v.name == "individual" and v.modality is None:
            out += [replace(v, modality=1), replace(v, modality=2)]
        else:
            out.append(v)
    return out


def run_ablation_suite(dataset: Dataset, variants: Sequence[VariantSpec],
                       encoder_specs: Sequence[EncoderSpec], k: int, runs: int, seed: int,
                       out_dir: str | Path, val_fraction: float = 0.1,
                       f1_average: str = "macro") -> dict:
    """Cross-validate every variant and write ablation.csv + ablation_summary.json.

    Rows are (variant, modality, fold, run, metric); the summary holds
    mean/std per variant x modality.
    """
    from .evaluation import run_cv  # local import: evaluation builds variants via this module

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    summary: dict[str, dict] = {}
    reports = []
    for variant in variants:
        report = run_cv(dataset, variant, encoder_specs, k=k, runs=runs, seed=seed,
                        val_fraction=val_fraction, f1_average=f1_average)
        reports.append(report)
        for mr in report.metrics:
            for fold in range(mr.raw.shape[0]):
                for run in range(mr.raw.shape[1]):
                    rows.append((mr.variant, mr.modality, fold, run, mr.raw[fold, run]))
            summary.setdefault(mr.variant, {})[f"modality{mr.modality}"] = {
                "metric": mr.metric,
                "mean": float(mr.mean),
                "std": float(mr.std),
            }

    with (out_dir / "ablation.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "modality", "fold", "run", "metric"])
        for variant, modality, fold, run, value in rows:
            writer.writerow([variant, modality, fold, run, f"{value:.17g}"])

    payload = {"k_folds": k, "runs": runs, "seed": seed, "variants": summary}
    (out_dir / "ablation_summary.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return {"rows": rows, "summary": summary, "reports": reports}

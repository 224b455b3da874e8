"""Full co-learning model, training loop, and single-modality inference.

The model bundles, per modality, a common encoder (shared features) and a
unique encoder (specific + unused features), a per-modality linear head on
the concatenated shared/specific features, one shared auxiliary head, and two
modality classifiers. After training it splits into single-modality
predictors: inference touches only the requested modality's encoders and
head.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from . import losses as L
from .data import ConfigurationError, ModalityConfig, Normalizer, TaskSpec
from .encoders import (CommonEncoder, EncoderSpec, FeatureTriple, UniqueEncoder,
                       build_trunk, init_parameters)
from .seeding import derive_seed

CHECKPOINT_VERSION = 1
FEATURE_SPACES = ("shared", "specific")


class CheckpointError(RuntimeError):
    """Checkpoint file is corrupt, mismatched, or of the wrong variant."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, term: str):
        super().__init__(f"non-finite {term} loss at epoch {epoch}")
        self.epoch = epoch
        self.term = term


@dataclass(frozen=True)
class LossAssembly:
    """Which loss terms are active and how they are combined."""

    use_aux: bool = True
    use_contrastive: bool = True
    use_modality: bool = True
    with_unused: bool = True
    unpaired: bool = False
    kendall: bool = False

    def to_dict(self) -> dict:
        return {"use_aux": self.use_aux, "use_contrastive": self.use_contrastive,
                "use_modality": self.use_modality, "with_unused": self.with_unused,
                "unpaired": self.unpaired, "kendall": self.kendall}

    @classmethod
    def from_dict(cls, d: dict) -> "LossAssembly":
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    loss_weighting: str = "uniform"  # or "kendall"
    temperature: float = 0.07
    early_stop_metric: str = "main"  # or "total"
    allow_batch_size_one: bool = False  # debug escape hatch

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")
        if self.batch_size < 2 and not self.allow_batch_size_one:
            raise ConfigurationError("batch_size must be >= 2 (contrastive negatives); "
                                     "set allow_batch_size_one for debugging")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigurationError("max_epochs must be >= 1")
        if not 1 <= self.patience <= self.max_epochs:
            raise ConfigurationError("patience must satisfy 1 <= patience <= max_epochs")
        if self.loss_weighting not in ("uniform", "kendall"):
            raise ConfigurationError("loss_weighting must be 'uniform' or 'kendall'")
        if self.early_stop_metric not in ("main", "total"):
            raise ConfigurationError("early_stop_metric must be 'main' or 'total'")
        if not self.temperature > 0:
            raise ConfigurationError("temperature must be > 0")

    def to_dict(self) -> dict:
        return {"learning_rate": self.learning_rate, "batch_size": self.batch_size,
                "max_epochs": self.max_epochs, "patience": self.patience, "seed": self.seed,
                "loss_weighting": self.loss_weighting, "temperature": self.temperature,
                "early_stop_metric": self.early_stop_metric}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def _derangement(n: int, seed: int) -> np.ndarray:
    """Seeded cyclic permutation (Sattolo); no fixed points for n >= 2."""
    rng = np.random.default_rng(int(seed))
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


class CoLearnModel(nn.Module):
    """Two-modality co-learning model over disentangled feature triples."""

    def __init__(self, task: TaskSpec, mod1: ModalityConfig, mod2: ModalityConfig,
                 encoder_specs: Sequence[EncoderSpec], seed: int,
                 assembly: LossAssembly = LossAssembly(), shared_trunk: bool = False,
                 temperature: float = 0.07, dtype: torch.dtype = torch.float32):
        super().__init__()
        if len(encoder_specs) != 2:
            raise ConfigurationError("need one encoder spec per modality")
        d = encoder_specs[0].projection_dim
        if encoder_specs[1].projection_dim != d:
            raise ConfigurationError("both modalities must use the same projection_dim "
                                     "(the auxiliary head is shared)")
        self.task = task
        self.modalities = (mod1, mod2)
        self.encoder_specs = tuple(encoder_specs)
        self.assembly = assembly
        self.shared_trunk = shared_trunk
        self.temperature = float(temperature)
        self.projection_dim = d

        commons, uniques = [], []
        for spec, mod in zip(encoder_specs, self.modalities):
            trunk = build_trunk(spec, mod) if shared_trunk else None
            commons.append(CommonEncoder(spec, mod, trunk=trunk))
            uniques.append(UniqueEncoder(spec, mod, trunk=trunk, with_unused=assembly.with_unused))
        self.common_encoders = nn.ModuleList(commons)
        self.unique_encoders = nn.ModuleList(uniques)

        out = task.output_dim
        self.heads = nn.ModuleList([nn.Linear(2 * d, out) for _ in range(2)])
        self.aux_head = nn.Linear(d, out) if assembly.use_aux else None
        self.specific_classifier = nn.Linear(d, 2) if assembly.use_modality else None
        self.unused_classifier = (nn.Linear(d, 2)
                                  if assembly.use_modality and assembly.with_unused else None)
        self.log_variances = nn.Parameter(torch.zeros(4)) if assembly.kendall else None

        self.to(dtype)
        init_parameters(self, seed)

    @property
    def dtype(self) -> torch.dtype:
        return self.heads[0].weight.dtype

    def _as_input(self, x) -> torch.Tensor:
        return torch.as_tensor(np.asarray(x)).to(self.dtype)

    def features(self, modality: int, x) -> FeatureTriple:
        """Encode one modality's batch into its feature triple."""
        if modality not in (1, 2):
            raise ConfigurationError(f"modality index must be 1 or 2, got {modality}")
        x = self._as_input(x)
        shared = self.common_encoders[modality - 1](x)
        specific, unused = self.unique_encoders[modality - 1](x)
        return FeatureTriple(shared=shared, specific=specific, unused=unused)

    def _head_logits(self, modality: int, triple: FeatureTriple) -> torch.Tensor:
        return self.heads[modality - 1](torch.cat([triple.shared, triple.specific], dim=1))

    def compute_losses(self, x1, x2, y, contrast_seed: int | None = None
                       ) -> tuple[L.LossBundle, tuple[torch.Tensor, torch.Tensor],
                                  tuple[FeatureTriple, FeatureTriple]]:
        """Full forward pass: predictions, feature triples, and the loss bundle."""
        t1 = self.features(1, x1)
        t2 = self.features(2, x2)
        logits1 = self._head_logits(1, t1)
        logits2 = self._head_logits(2, t2)
        zero = logits1.new_zeros(())

        main = L.main_loss(y, logits1, logits2, self.task)
        aux = (L.aux_loss(self.aux_head, (t1, t2), y, self.task)
               if self.assembly.use_aux else zero)
        if self.assembly.use_contrastive:
            z2 = t2.shared
            if self.assembly.unpaired:
                if contrast_seed is None:
                    raise ConfigurationError("unpaired contrastive loss needs a contrast_seed")
                if z2.shape[0] >= 2:
                    z2 = z2[torch.as_tensor(_derangement(z2.shape[0], contrast_seed))]
            contrastive = L.contrastive_loss(t1.shared, z2, self.temperature)
        else:
            contrastive = zero
        modality = (L.modality_loss(self.specific_classifier, self.unused_classifier, (t1, t2))
                    if self.assembly.use_modality else zero)

        bundle = L.total_loss(main, aux, contrastive, modality)
        if self.assembly.kendall:
            total = L.kendall_total((main, aux, contrastive, modality), self.log_variances)
            bundle = L.LossBundle(main=main, aux=aux, contrastive=contrastive, modality=modality,
                                  total=total, kendall_log_vars=self.log_variances)
        return bundle, (logits1, logits2), (t1, t2)

    @torch.no_grad()
    def predict_single(self, modality: int, x) -> np.ndarray:
        """Predict from one modality alone; never touches the other pipeline."""
        self.eval()
        triple = self.features(modality, x)
        return self._head_logits(modality, triple).cpu().numpy()

    @torch.no_grad()
    def predict_from_space(self, modality: int, x, space: str) -> np.ndarray:
        """Predict with one feature block zeroed out of the head input."""
        if space not in FEATURE_SPACES:
            raise ConfigurationError(f"feature space must be one of {FEATURE_SPACES}, got {space!r}")
        self.eval()
        triple = self.features(modality, x)
        shared, specific = triple.shared, triple.specific
        if space == "shared":
            specific = torch.zeros_like(specific)
        else:
            shared = torch.zeros_like(shared)
        masked = FeatureTriple(shared=shared, specific=specific, unused=None)
        return self._head_logits(modality, masked).cpu().numpy()

    def metadata(self) -> dict:
        return {
            "task": self.task.to_dict(),
            "modalities": [m.to_dict() for m in self.modalities],
            "encoder_specs": [s.to_dict() for s in self.encoder_specs],
            "assembly": self.assembly.to_dict(),
            "shared_trunk": self.shared_trunk,
            "temperature": self.temperature,
            "projection_dim": self.projection_dim,
        }


def forward_train(model: CoLearnModel, x1, x2, y, contrast_seed: int | None = None):
    """Training-direction forward: (logits1, logits2, feature triples, loss bundle)."""
    bundle, (l1, l2), triples = model.compute_losses(x1, x2, y, contrast_seed=contrast_seed)
    return l1, l2, triples, bundle


def predict_single(model, modality: int, x) -> np.ndarray:
    return model.predict_single(modality, x)


def predict_from_space(model: CoLearnModel, modality: int, x, space: str) -> np.ndarray:
    return model.predict_from_space(modality, x, space)


@dataclass
class TrainHistory:
    """Per-epoch training record; best_epoch achieves the minimum criterion."""

    epoch_losses: list[L.LossBundle] = field(default_factory=list)
    val_criterion: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""

    def __len__(self) -> int:
        return len(self.epoch_losses)

    def to_dict(self) -> dict:
        return {
            "epochs": [b.as_dict() for b in self.epoch_losses],
            "val_criterion": list(self.val_criterion),
            "best_epoch": self.best_epoch,
            "stop_reason": self.stop_reason,
        }


def _batch_indices(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    # a trailing singleton breaks batch-norm statistics; drop it (training only)
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches.pop()
    return batches


def _targets_tensor(y: np.ndarray, task: TaskSpec, dtype: torch.dtype) -> torch.Tensor:
    if task.kind in ("binary", "multiclass"):
        return torch.as_tensor(np.asarray(y), dtype=torch.long)
    return torch.as_tensor(np.asarray(y)).to(dtype)


def _criterion_over(model, x1: torch.Tensor, x2: torch.Tensor, y: torch.Tensor,
                    config: TrainConfig, epoch_seed: int) -> float:
    """Size-weighted mean of the early-stopping criterion over a split."""
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for bi, start in enumerate(range(0, x1.shape[0], config.batch_size)):
            sl = slice(start, start + config.batch_size)
            bundle, _, _ = model.compute_losses(x1[sl], x2[sl], y[sl],
                                                contrast_seed=derive_seed(epoch_seed, 500_000 + bi))
            value = float(bundle.term(config.early_stop_metric).detach())
            n = x1[sl].shape[0]
            total += value * n
            count += n
    return total / count


def train(model, train_data, val_data, config: TrainConfig, task: TaskSpec
          ) -> tuple[nn.Module, TrainHistory]:
    """Adam on the combined loss with early stopping on the validation criterion.

    ``train_data`` / ``val_data`` are (x1, x2, y) arrays, already normalized.
    Improvement is strict; after ``patience`` epochs without one, training
    stops and the best epoch's parameters are restored. Deterministic given
    (data, config): shuffling, dropout masks, and derangements all derive
    from ``config.seed`` and the epoch index.
    """
    x1 = torch.as_tensor(np.asarray(train_data[0])).to(model.dtype)
    x2 = torch.as_tensor(np.asarray(train_data[1])).to(model.dtype)
    y = _targets_tensor(train_data[2], task, model.dtype)
    if x1.shape[0] == 0:
        raise ConfigurationError("training split is empty")
    if val_data[0].shape[0] == 0:
        raise ConfigurationError("validation split is empty")
    vx1 = torch.as_tensor(np.asarray(val_data[0])).to(model.dtype)
    vx2 = torch.as_tensor(np.asarray(val_data[1])).to(model.dtype)
    vy = _targets_tensor(val_data[2], task, model.dtype)

    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                                 betas=(0.9, 0.999), eps=1e-8)
    history = TrainHistory()
    best_value = float("inf")
    best_state = copy.deepcopy(model.state_dict())
    epochs_since_best = 0
    n = x1.shape[0]

    for epoch in range(config.max_epochs):
        epoch_seed = derive_seed(config.seed, epoch)
        torch.manual_seed(epoch_seed)  # dropout masks
        order = np.random.default_rng(epoch_seed).permutation(n)
        model.train()

        sums = {k: 0.0 for k in ("main", "aux", "contrastive", "modality", "total")}
        seen = 0
        for bi, idx in enumerate(_batch_indices(order, config.batch_size)):
            sel = torch.as_tensor(idx)
            bundle, _, _ = model.compute_losses(x1[sel], x2[sel], y[sel],
                                                contrast_seed=derive_seed(epoch_seed, bi))
            flat = bundle.detach()
            for k in sums:
                if not np.isfinite(flat.term(k)):
                    raise TrainingDivergedError(epoch, k)
                sums[k] += flat.term(k) * len(idx)
            seen += len(idx)
            optimizer.zero_grad()
            bundle.total.backward()
            optimizer.step()

        epoch_bundle = L.LossBundle(**{k: sums[k] / seen for k in sums})
        criterion = _criterion_over(model, vx1, vx2, vy, config, epoch_seed)
        history.epoch_losses.append(epoch_bundle)
        history.val_criterion.append(criterion)

        if criterion < best_value:
            best_value = criterion
            best_state = copy.deepcopy(model.state_dict())
            history.best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                history.stop_reason = "early_stop"
                break
    if not history.stop_reason:
        history.stop_reason = "max_epochs"

    model.load_state_dict(best_state)
    return model, history


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def _normalizers_to_dict(normalizers: dict | None) -> dict:
    if not normalizers:
        return {}
    return {str(k): (v.to_dict() if isinstance(v, Normalizer) else v)
            for k, v in normalizers.items()}


def save_model(model, path: str | Path, variant: str = "full",
               train_config: TrainConfig | None = None,
               normalizers: dict | None = None, extra: dict | None = None) -> Path:
    """Single-file checkpoint: float32 parameter arrays keyed by path + JSON metadata."""
    path = Path(path)
    meta = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "variant": variant,
        "model": model.metadata(),
        "train_config": train_config.to_dict() if train_config else None,
        "normalizers": _normalizers_to_dict(normalizers),
        "extra": extra or {},
    }
    arrays = {f"param/{name}": p.detach().cpu().numpy().astype(np.float32)
              for name, p in model.named_parameters()}
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
             **arrays)
    return path


def read_checkpoint(path: str | Path) -> tuple[dict, dict]:
    """Raw checkpoint contents: (metadata, name -> float32 array)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            arrays = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint_version {meta.get('checkpoint_version')!r}")
    return meta, arrays


def _load_arrays(module: nn.Module, arrays: dict) -> None:
    params = dict(module.named_parameters())
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise CheckpointError(f"checkpoint parameters do not match the model "
                              f"(missing={sorted(missing)}, unexpected={sorted(extra)})")
    with torch.no_grad():
        for name, arr in arrays.items():
            p = params[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise CheckpointError(f"shape mismatch for {name}: checkpoint {arr.shape} "
                                      f"vs model {tuple(p.shape)}")
            p.copy_(torch.as_tensor(arr, dtype=p.dtype))


def load_model(path: str | Path, dtype: torch.dtype = torch.float32
               ) -> tuple[CoLearnModel, dict]:
    """Rebuild a co-learning model from its checkpoint; returns (model, metadata)."""
    meta, arrays = read_checkpoint(path)
    variant = meta.get("variant")
    if variant == "individual":
        raise CheckpointError("checkpoint holds an 'individual' baseline; "
                              "load it with baselines.load_individual")
    m = meta["model"]
    model = CoLearnModel(
        task=TaskSpec.from_dict(m["task"]),
        mod1=ModalityConfig.from_dict(m["modalities"][0]),
        mod2=ModalityConfig.from_dict(m["modalities"][1]),
        encoder_specs=[EncoderSpec.from_dict(s) for s in m["encoder_specs"]],
        seed=0,
        assembly=LossAssembly.from_dict(m["assembly"]),
        shared_trunk=m["shared_trunk"],
        temperature=m["temperature"],
        dtype=dtype,
    )
    _load_arrays(model, arrays)
    model.eval()
    return model, meta

"""Per-modality encoders: pluggable trunks feeding projection heads.

A common encoder emits the shared features; a unique encoder emits the
specific and (optionally) unused features through separate projection heads
on one trunk. Trunks map a batch of modality arrays to a hidden vector;
projection heads are single linear layers with dropout, active only in
training mode.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np
import torch
from torch import nn
from dataclasses import dataclass

from .data import ConfigurationError, ModalityConfig

BACKBONES = ("mlp", "tempcnn", "lstm", "attention", "convtran_lite", "cnn2d")
_ATTENTION_FAMILY = ("attention", "convtran_lite")


@dataclass(frozen=True)
class EncoderSpec:
    backbone: str
    hidden_units: int = 128
    num_layers: int = 2
    kernel_size: int = 5
    num_heads: int = 8
    projection_dim: int = 128
    projection_dropout: float = 0.2

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ConfigurationError(f"unknown backbone {self.backbone!r}; expected one of {BACKBONES}")
        if self.hidden_units < 1 or self.projection_dim < 1 or self.num_layers < 1:
            raise ConfigurationError("hidden_units, projection_dim and num_layers must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError("kernel_size must be a positive odd integer")
        if not 0.0 <= self.projection_dropout < 1.0:
            raise ConfigurationError("projection_dropout must lie in [0, 1)")
        if self.backbone in _ATTENTION_FAMILY and self.hidden_units % self.num_heads != 0:
            raise ConfigurationError(
                f"num_heads={self.num_heads} must divide the attention width {self.hidden_units}"
            )

    def to_dict(self) -> dict:
        return {
            "backbone": self.backbone,
            "hidden_units": self.hidden_units,
            "num_layers": self.num_layers,
            "kernel_size": self.kernel_size,
            "num_heads": self.num_heads,
            "projection_dim": self.projection_dim,
            "projection_dropout": self.projection_dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        return cls(**d)


@dataclass(eq=False)
class FeatureTriple:
    """Per-modality latent triple; ``unused`` is None for ablated encoders."""

    shared: torch.Tensor
    specific: torch.Tensor
    unused: torch.Tensor | None = None

    def __post_init__(self):
        d = self.shared.shape[-1]
        parts = [self.specific] + ([self.unused] if self.unused is not None else [])
        if any(p.shape[-1] != d for p in parts):
            raise ValueError("all feature spaces in a triple must share one dimension")


def _check_batch(x: torch.Tensor, modality: ModalityConfig) -> None:
    if x.dim() != len(modality.shape) + 1 or tuple(x.shape[1:]) != modality.shape:
        raise ValueError(
            f"modality {modality.name!r}: expected batch of shape (B, {', '.join(map(str, modality.shape))}), "
            f"got {tuple(x.shape)}"
        )
    if x.shape[0] < 1:
        raise ValueError(f"modality {modality.name!r}: batch must contain at least one sample")


class MlpTrunk(nn.Module):
    """Flattens the input; stacked linear + batch-norm + ReLU blocks."""

    def __init__(self, in_features: int, hidden: int, layers: int):
        super().__init__()
        blocks = []
        width = in_features
        for _ in range(layers):
            blocks += [nn.Linear(width, hidden), nn.BatchNorm1d(hidden), nn.ReLU()]
            width = hidden
        self.net = nn.Sequential(*blocks)

    def forward(self, x):
        return self.net(x.flatten(1))


class TempCnnTrunk(nn.Module):
    """1-D convolutions over time, global average pooling."""

    def __init__(self, in_features: int, hidden: int, layers: int, kernel: int):
        super().__init__()
        convs = []
        width = in_features
        for _ in range(layers):
            convs += [nn.Conv1d(width, hidden, kernel, padding=kernel // 2), nn.ReLU()]
            width = hidden
        self.net = nn.Sequential(*convs)

    def forward(self, x):
        # (B, T, F) -> (B, F, T)
        return self.net(x.transpose(1, 2)).mean(dim=-1)


class LstmTrunk(nn.Module):
    def __init__(self, in_features: int, hidden: int, layers: int):
        super().__init__()
        self.lstm = nn.LSTM(in_features, hidden, num_layers=layers, batch_first=True)

    def forward(self, x):
        _, (h, _) = self.lstm(x)
        return h[-1]


class SelfAttentionBlock(nn.Module):
    """Pre-norm multi-head self-attention with a 2x feed-forward."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.norm_attn = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm_ffn = nn.LayerNorm(width)
        self.ffn = nn.Sequential(nn.Linear(width, 2 * width), nn.ReLU(), nn.Linear(2 * width, width))

    def forward(self, x):
        h = self.norm_attn(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.ffn(self.norm_ffn(x))


class AttentionTrunk(nn.Module):
    """Input projection + learned positional embeddings + attention blocks."""

    def __init__(self, in_features: int, steps: int, hidden: int, layers: int, heads: int):
        super().__init__()
        self.input_proj = nn.Linear(in_features, hidden)
        self.positional = nn.Parameter(torch.zeros(steps, hidden))
        self.blocks = nn.ModuleList(SelfAttentionBlock(hidden, heads) for _ in range(layers))

    def forward(self, x):
        h = self.input_proj(x) + self.positional
        for block in self.blocks:
            h = block(h)
        return h.mean(dim=1)


class ConvTranLiteTrunk(nn.Module):
    """One temporal conv block feeding one attention block."""

    def __init__(self, in_features: int, steps: int, hidden: int, kernel: int, heads: int):
        super().__init__()
        self.conv = nn.Sequential(nn.Conv1d(in_features, hidden, kernel, padding=kernel // 2), nn.ReLU())
        self.positional = nn.Parameter(torch.zeros(steps, hidden))
        self.block = SelfAttentionBlock(hidden, heads)

    def forward(self, x):
        h = self.conv(x.transpose(1, 2)).transpose(1, 2) + self.positional
        return self.block(h).mean(dim=1)


class Cnn2dTrunk(nn.Module):
    """Strided 3x3 conv blocks with batch norm, global average pooling."""

    def __init__(self, in_channels: int, hidden: int, layers: int):
        super().__init__()
        blocks = []
        width = in_channels
        for _ in range(layers):
            blocks += [nn.Conv2d(width, hidden, 3, stride=2, padding=1), nn.BatchNorm2d(hidden), nn.ReLU()]
            width = hidden
        self.net = nn.Sequential(*blocks)

    def forward(self, x):
        return self.net(x).mean(dim=(-2, -1))


def build_trunk(spec: EncoderSpec, modality: ModalityConfig) -> nn.Module:
    """Instantiate the backbone for one modality; validates compatibility."""
    if spec.backbone == "cnn2d":
        if modality.layout != "image":
            raise ConfigurationError(f"backbone cnn2d requires an image modality, got {modality.layout}")
        return Cnn2dTrunk(modality.shape[0], spec.hidden_units, spec.num_layers)
    if spec.backbone == "mlp":
        return MlpTrunk(modality.num_features, spec.hidden_units, spec.num_layers)
    if modality.layout != "timeseries":
        raise ConfigurationError(
            f"backbone {spec.backbone} requires a timeseries modality, got {modality.layout}"
        )
    steps, feats = modality.shape
    if spec.backbone == "tempcnn":
        return TempCnnTrunk(feats, spec.hidden_units, spec.num_layers, spec.kernel_size)
    if spec.backbone == "lstm":
        return LstmTrunk(feats, spec.hidden_units, spec.num_layers)
    if spec.backbone == "attention":
        return AttentionTrunk(feats, steps, spec.hidden_units, spec.num_layers, spec.num_heads)
    return ConvTranLiteTrunk(feats, steps, spec.hidden_units, spec.kernel_size, spec.num_heads)


class ProjectionHead(nn.Module):
    """Single linear layer of ``dim`` units with dropout on its output."""

    def __init__(self, in_features: int, dim: int, dropout: float):
        super().__init__()
        self.linear = nn.Linear(in_features, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.dropout(self.linear(x))


class CommonEncoder(nn.Module):
    """Extracts the shared features of one modality."""

    def __init__(self, spec: EncoderSpec, modality: ModalityConfig, trunk: nn.Module | None = None):
        super().__init__()
        self.spec = spec
        self.modality = modality
        self.trunk = trunk if trunk is not None else build_trunk(spec, modality)
        self.head = ProjectionHead(spec.hidden_units, spec.projection_dim, spec.projection_dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_batch(x, self.modality)
        return self.head(self.trunk(x))


class UniqueEncoder(nn.Module):
    """Extracts the specific and (unless ablated) unused features of one modality."""

    def __init__(self, spec: EncoderSpec, modality: ModalityConfig,
                 trunk: nn.Module | None = None, with_unused: bool = True):
        super().__init__()
        self.spec = spec
        self.modality = modality
        self.trunk = trunk if trunk is not None else build_trunk(spec, modality)
        self.specific_head = ProjectionHead(spec.hidden_units, spec.projection_dim, spec.projection_dropout)
        self.unused_head = (
            ProjectionHead(spec.hidden_units, spec.projection_dim, spec.projection_dropout)
            if with_unused else None
        )

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor | None]:
        _check_batch(x, self.modality)
        h = self.trunk(x)
        specific = self.specific_head(h)
        unused = self.unused_head(h) if self.unused_head is not None else None
        return specific, unused


def init_parameters(module: nn.Module, seed: int) -> None:
    """Deterministic initialization: fan-in-scaled uniform weights, zero biases.

    1-D scale parameters (batch/layer norm) start at one; every other 1-D
    parameter starts at zero. Normalization buffers are reset too, so
    re-initializing a used module fully restores its starting state.
    """
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in module.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if p.dim() >= 2:
                fan_in = int(np.prod(p.shape[1:]))
                bound = 1.0 / math.sqrt(fan_in)
                # draw in float64 for a dtype-independent stream, then cast
                values = torch.empty(p.shape, dtype=torch.float64).uniform_(-bound, bound, generator=gen)
                p.copy_(values.to(p.dtype))
            elif "bias" in leaf:
                p.zero_()
            elif "weight" in leaf:
                p.fill_(1.0)
            else:
                p.zero_()
        for name, b in module.named_buffers():
            if name.endswith("running_mean"):
                b.zero_()
            elif name.endswith("running_var"):
                b.fill_(1.0)
            elif name.endswith("num_batches_tracked"):
                b.zero_()


def build_encoder(spec: EncoderSpec, modality: ModalityConfig, seed: int,
                  role: str = "common", with_unused: bool = True) -> nn.Module:
    """Build and deterministically initialize a common or unique encoder."""
    if role == "common":
        enc = CommonEncoder(spec, modality)
    elif role == "unique":
        enc = UniqueEncoder(spec, modality, with_unused=with_unused)
    else:
        raise ConfigurationError(f"encoder role must be 'common' or 'unique', got {role!r}")
    init_parameters(enc, seed)
    return enc


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


class ParamBundle:
    """Ordered name -> array view of a module's parameters.

    Supports flatten/unflatten round trips for gradient checking and
    checkpointing; path order follows the module's registration order and is
    therefore deterministic.
    """

    def __init__(self, items: "OrderedDict[str, np.ndarray]"):
        self._items = OrderedDict((k, np.asarray(v)) for k, v in items.items())

    @classmethod
    def from_module(cls, module: nn.Module) -> "ParamBundle":
        return cls(OrderedDict(
            (name, p.detach().cpu().numpy().copy()) for name, p in module.named_parameters()
        ))

    @property
    def paths(self) -> list[str]:
        return list(self._items)

    def __getitem__(self, path: str) -> np.ndarray:
        return self._items[path]

    def __len__(self) -> int:
        return len(self._items)

    def items(self):
        return self._items.items()

    def flatten(self) -> np.ndarray:
        if not self._items:
            return np.zeros(0)
        return np.concatenate([a.ravel() for a in self._items.values()])

    def unflatten(self, vector: np.ndarray) -> "ParamBundle":
        vector = np.asarray(vector).ravel()
        total = sum(a.size for a in self._items.values())
        if vector.size != total:
            raise ValueError(f"expected a vector of {total} entries, got {vector.size}")
        out = OrderedDict()
        offset = 0
        for name, a in self._items.items():
            out[name] = vector[offset:offset + a.size].reshape(a.shape).astype(a.dtype, copy=False)
            offset += a.size
        return ParamBundle(out)

    def load_into(self, module: nn.Module) -> None:
        params = dict(module.named_parameters())
        missing = set(params) - set(self._items)
        extra = set(self._items) - set(params)
        if missing or extra:
            raise ValueError(f"parameter paths do not match module (missing={sorted(missing)}, extra={sorted(extra)})")
        with torch.no_grad():
            for name, a in self._items.items():
                p = params[name]
                if tuple(a.shape) != tuple(p.shape):
                    raise ValueError(f"shape mismatch for {name}: {a.shape} vs {tuple(p.shape)}")
                p.copy_(torch.as_tensor(a, dtype=p.dtype))

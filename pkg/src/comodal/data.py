"""Dataset model, planted-structure synthetic generator, normalization, splits.

The synthetic generator plants a known latent structure: a shared factor seen
by both modalities, one specific factor per modality, and one nuisance factor
per modality. Targets depend on the shared factor and on *both* specific
factors, so no single modality carries the full task signal and the value of
cross-modal training is measurable against ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

TASK_KINDS = ("binary", "multiclass", "multilabel", "regression")
LAYOUTS = ("timeseries", "image")

STD_FLOOR = 1e-8
DATASET_FORMAT_VERSION = 1
_NUM_FMT = "%.9g"  # round-trips 32-bit floats exactly


class ConfigurationError(ValueError):
    """Invalid task, modality, generator, or experiment configuration."""


class DatasetFormatError(ValueError):
    """A dataset directory is missing pieces or inconsistent with its manifest."""


@dataclass(frozen=True, eq=False)
class TaskSpec:
    """What is being predicted and how losses/metrics specialize.

    ``num_classes`` is 1 for regression and 2 for binary tasks. Optional
    ``class_weights`` (one positive weight per class) feed the weighted
    predictive losses.
    """

    kind: str
    num_classes: int
    class_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigurationError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")
        if self.kind == "regression":
            if self.num_classes != 1:
                raise ConfigurationError("regression tasks must have num_classes=1")
            if self.class_weights is not None:
                raise ConfigurationError("regression tasks take no class weights")
        if self.kind == "binary" and self.num_classes != 2:
            raise ConfigurationError("binary tasks must have num_classes=2")
        if self.kind == "multiclass" and self.num_classes < 2:
            raise ConfigurationError("multiclass tasks need num_classes >= 2")
        if self.num_classes < 1:
            raise ConfigurationError("num_classes must be positive")
        if self.class_weights is not None:
            w = np.asarray(self.class_weights, dtype=np.float64)
            if w.shape != (self.num_classes,):
                raise ConfigurationError(
                    f"class_weights must have length {self.num_classes}, got shape {w.shape}"
                )
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ConfigurationError("class_weights must be finite and > 0")
            object.__setattr__(self, "class_weights", w)

    @property
    def is_classification(self) -> bool:
        return self.kind != "regression"

    @property
    def output_dim(self) -> int:
        """Width of every prediction head for this task."""
        return 1 if self.kind == "regression" else self.num_classes

    def with_class_weights(self, weights: np.ndarray) -> "TaskSpec":
        return TaskSpec(self.kind, self.num_classes, np.asarray(weights, dtype=np.float64))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "num_classes": self.num_classes}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(kind=d["kind"], num_classes=int(d["num_classes"]))


@dataclass(frozen=True)
class ModalityConfig:
    """One sensor input: (T, F) for time series, (C, H, W) for images."""

    name: str
    layout: str
    shape: tuple[int, ...]

    def __post_init__(self):
        if not self.name:
            raise ConfigurationError("modality name must be non-empty")
        if self.layout not in LAYOUTS:
            raise ConfigurationError(f"unknown layout {self.layout!r}; expected one of {LAYOUTS}")
        shape = tuple(int(s) for s in self.shape)
        object.__setattr__(self, "shape", shape)
        expected = 2 if self.layout == "timeseries" else 3
        if len(shape) != expected:
            raise ConfigurationError(
                f"modality {self.name!r}: {self.layout} layout needs {expected} shape entries, got {shape}"
            )
        if any(s < 1 for s in shape):
            raise ConfigurationError(f"modality {self.name!r}: all shape entries must be >= 1")

    @property
    def num_features(self) -> int:
        return int(np.prod(self.shape))

    def to_dict(self) -> dict:
        return {"name": self.name, "layout": self.layout, "shape": list(self.shape)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModalityConfig":
        return cls(name=d["name"], layout=d["layout"], shape=tuple(d["shape"]))


@dataclass(eq=False)
class Sample:
    """One paired observation: both modality arrays plus the target."""

    id: str
    x1: np.ndarray
    x2: np.ndarray
    target: object  # int class index | (K,) 0/1 vector | float


@dataclass(eq=False)
class Dataset:
    """Paired two-modality samples with their task description.

    Treat as immutable after construction; stacked arrays are cached.
    """

    task: TaskSpec
    mod1: ModalityConfig
    mod2: ModalityConfig
    samples: list[Sample]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self._validate()

    def __len__(self) -> int:
        return len(self.samples)

    def modality(self, index: int) -> ModalityConfig:
        if index not in (1, 2):
            raise ConfigurationError(f"modality index must be 1 or 2, got {index}")
        return self.mod1 if index == 1 else self.mod2

    def _validate(self):
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("sample ids must be unique")
        for m, cfg in ((1, self.mod1), (2, self.mod2)):
            try:
                x = self.modality_array(m)
            except ValueError as exc:
                raise ConfigurationError(
                    f"modality {cfg.name!r}: samples have inconsistent shapes: {exc}") from exc
            if x.shape[1:] != cfg.shape:
                raise ConfigurationError(
                    f"modality {cfg.name!r}: sample arrays have shape {x.shape[1:]}, expected {cfg.shape}"
                )
            if x.size and not np.all(np.isfinite(x)):
                raise ConfigurationError(f"modality {cfg.name!r}: samples contain non-finite values")
        y = self.target_array()
        if len(self.samples) == 0:
            return
        if self.task.kind in ("binary", "multiclass"):
            if y.min() < 0 or y.max() >= self.task.num_classes:
                raise ConfigurationError(
                    f"class targets must lie in [0, {self.task.num_classes}), got range [{y.min()}, {y.max()}]"
                )
        elif self.task.kind == "multilabel":
            if y.shape[1:] != (self.task.num_classes,):
                raise ConfigurationError(
                    f"multilabel targets must have {self.task.num_classes} entries per sample"
                )
            if not np.isin(y, (0, 1)).all():
                raise ConfigurationError("multilabel target entries must be 0 or 1")
        else:
            if not np.all(np.isfinite(y)):
                raise ConfigurationError("regression targets must be finite")

    @cached_property
    def _stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = len(self.samples)
        x1 = np.stack([s.x1 for s in self.samples]).astype(np.float32) if n else np.zeros((0, *self.mod1.shape), np.float32)
        x2 = np.stack([s.x2 for s in self.samples]).astype(np.float32) if n else np.zeros((0, *self.mod2.shape), np.float32)
        if self.task.kind == "multilabel":
            y = np.array([np.asarray(s.target) for s in self.samples], dtype=np.int64) if n else np.zeros((0, self.task.num_classes), np.int64)
        elif self.task.kind == "regression":
            y = np.array([s.target for s in self.samples], dtype=np.float32)
        else:
            y = np.array([s.target for s in self.samples], dtype=np.int64)
        return x1, x2, y

    def modality_array(self, index: int) -> np.ndarray:
        """All samples of one modality stacked into (N, *shape), float32."""
        self.modality(index)
        return self._stacked[index - 1]

    def target_array(self) -> np.ndarray:
        return self._stacked[2]

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

# the specific factors influence the target at half the shared factor's scale:
# the cross-modal channel dominates the task (as in the motivating sensing
# problems) while both modality-specific factors stay relevant
SPECIFIC_TARGET_SCALE = 0.5


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of the planted linear-Gaussian benchmark.

    Latents per sample: shared s (shared_dim), per-modality specific u_m
    (specific_dim), per-modality nuisance n_m (nuisance_dim), all i.i.d.
    standard normal. Targets come from fixed random maps applied to
    [s, u1, u2] (specific maps scaled by SPECIFIC_TARGET_SCALE); each modality
    observes a fixed random mix of [s, u_m, n_m] plus Gaussian noise of scale
    noise_x. noise_y perturbs regression targets only.
    """

    task_kind: str
    num_classes: int
    n_samples: int
    shared_dim: int
    specific_dim: int
    nuisance_dim: int
    mod1: ModalityConfig
    mod2: ModalityConfig
    noise_x: float = 0.1
    noise_y: float = 0.0

    def __post_init__(self):
        self.task()  # validates kind / num_classes
        if self.n_samples < 10:
            raise ConfigurationError("generator needs n_samples >= 10")
        for nm, v in (("shared_dim", self.shared_dim), ("specific_dim", self.specific_dim),
                      ("nuisance_dim", self.nuisance_dim)):
            if v < 1:
                raise ConfigurationError(f"{nm} must be >= 1")
        if self.noise_x < 0 or self.noise_y < 0:
            raise ConfigurationError("noise scales must be >= 0")

    def task(self) -> TaskSpec:
        return TaskSpec(self.task_kind, self.num_classes)

    def to_dict(self) -> dict:
        return {
            "task": self.task_kind,
            "num_classes": self.num_classes,
            "n_samples": self.n_samples,
            "shared_dim": self.shared_dim,
            "specific_dim": self.specific_dim,
            "nuisance_dim": self.nuisance_dim,
            "mod1": self.mod1.to_dict(),
            "mod2": self.mod2.to_dict(),
            "noise_x": self.noise_x,
            "noise_y": self.noise_y,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(
            task_kind=d["task"],
            num_classes=int(d["num_classes"]),
            n_samples=int(d["n_samples"]),
            shared_dim=int(d["shared_dim"]),
            specific_dim=int(d["specific_dim"]),
            nuisance_dim=int(d["nuisance_dim"]),
            mod1=ModalityConfig.from_dict(d["mod1"]),
            mod2=ModalityConfig.from_dict(d["mod2"]),
            noise_x=float(d["noise_x"]),
            noise_y=float(d["noise_y"]),
        )


def _draw_planted(spec: GeneratorSpec, seed: int) -> dict:
    """Single source of truth for the generator's RNG draw order."""
    rng = np.random.default_rng(int(seed))
    p, q, r, n = spec.shared_dim, spec.specific_dim, spec.nuisance_dim, spec.n_samples
    k_out = spec.task().output_dim
    d1, d2 = spec.mod1.num_features, spec.mod2.num_features

    # fixed maps first, then per-sample latents, then noise
    target_map_shared = rng.standard_normal((k_out, p))
    target_map_spec1 = rng.standard_normal((k_out, q)) * SPECIFIC_TARGET_SCALE
    target_map_spec2 = rng.standard_normal((k_out, q)) * SPECIFIC_TARGET_SCALE
    scale = 1.0 / np.sqrt(p + q + r)
    obs_map1 = rng.standard_normal((d1, p + q + r)) * scale
    obs_map2 = rng.standard_normal((d2, p + q + r)) * scale

    shared = rng.standard_normal((n, p))
    spec1 = rng.standard_normal((n, q))
    spec2 = rng.standard_normal((n, q))
    nuis1 = rng.standard_normal((n, r))
    nuis2 = rng.standard_normal((n, r))

    x1 = np.hstack([shared, spec1, nuis1]) @ obs_map1.T + spec.noise_x * rng.standard_normal((n, d1))
    x2 = np.hstack([shared, spec2, nuis2]) @ obs_map2.T + spec.noise_x * rng.standard_normal((n, d2))

    logits = shared @ target_map_shared.T + spec1 @ target_map_spec1.T + spec2 @ target_map_spec2.T
    if spec.task_kind in ("binary", "multiclass"):
        targets = np.argmax(logits, axis=1)
    elif spec.task_kind == "multilabel":
        targets = (logits > 0).astype(np.int64)
    else:
        targets = logits[:, 0] + spec.noise_y * rng.standard_normal(n)

    return {
        "x1": x1.astype(np.float32),
        "x2": x2.astype(np.float32),
        "targets": targets,
        "shared": shared,
        "specific1": spec1,
        "specific2": spec2,
        "nuisance1": nuis1,
        "nuisance2": nuis2,
        "logits": logits,
    }


def generate_synthetic(spec: GeneratorSpec, seed: int) -> Dataset:
    """Generate a paired two-modality dataset; pure function of (spec, seed)."""
    raw = _draw_planted(spec, seed)
    task = spec.task()
    x1 = raw["x1"].reshape(spec.n_samples, *spec.mod1.shape)
    x2 = raw["x2"].reshape(spec.n_samples, *spec.mod2.shape)
    samples = []
    for i in range(spec.n_samples):
        if spec.task_kind == "multilabel":
            target = raw["targets"][i].copy()
        elif spec.task_kind == "regression":
            target = float(np.float32(raw["targets"][i]))
        else:
            target = int(raw["targets"][i])
        samples.append(Sample(id=f"s{i:06d}", x1=x1[i], x2=x2[i], target=target))
    provenance = {"generator": spec.to_dict(), "seed": int(seed)}
    return Dataset(task=task, mod1=spec.mod1, mod2=spec.mod2, samples=samples, provenance=provenance)


def planted_latents(spec: GeneratorSpec, seed: int) -> dict[str, np.ndarray]:
    """Recompute the latent factors behind a generated dataset.

    Returns shared, specific1, specific2, nuisance1, nuisance2 arrays; useful
    as the ground-truth side of probe oracles.
    """
    raw = _draw_planted(spec, seed)
    return {k: raw[k] for k in ("shared", "specific1", "specific2", "nuisance1", "nuisance2")}


def generator_from_provenance(provenance: dict) -> tuple[GeneratorSpec, int]:
    try:
        return GeneratorSpec.from_dict(provenance["generator"]), int(provenance["seed"])
    except KeyError as exc:
        raise ConfigurationError(f"provenance lacks generator information: missing {exc}") from exc


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Normalizer:
    """Per-feature z-scorer with population std, floored at 1e-8."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.std = np.asarray(self.std, dtype=np.float64).ravel()
        if self.mean.shape != self.std.shape:
            raise ConfigurationError("mean and std must have matching shapes")
        if np.any(self.std < STD_FLOOR):
            raise ConfigurationError(f"std entries must be >= {STD_FLOOR}")

    @classmethod
    def fit(cls, matrix: np.ndarray) -> "Normalizer":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim == 1:
            matrix = matrix[:, None]
        if matrix.shape[0] == 0:
            raise ConfigurationError("cannot fit a normalizer on an empty slice")
        mean = matrix.mean(axis=0)
        std = np.maximum(matrix.std(axis=0), STD_FLOOR)
        return cls(mean=mean, std=std)

    def _reshape(self, x: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
        x = np.asarray(x)
        flat = x.reshape(x.shape[0], -1) if x.ndim > 1 else x.reshape(-1, 1)
        if flat.shape[1] != self.mean.shape[0]:
            raise ConfigurationError(
                f"normalizer fitted on {self.mean.shape[0]} features, input has {flat.shape[1]}"
            )
        return flat, x.shape

    def transform(self, x: np.ndarray) -> np.ndarray:
        flat, shape = self._reshape(x)
        out = (flat.astype(np.float64) - self.mean) / self.std
        return out.reshape(shape).astype(np.asarray(x).dtype, copy=False)

    def inverse(self, x: np.ndarray) -> np.ndarray:
        flat, shape = self._reshape(x)
        out = flat.astype(np.float64) * self.std + self.mean
        return out.reshape(shape).astype(np.asarray(x).dtype, copy=False)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(mean=np.array(d["mean"]), std=np.array(d["std"]))


def fit_normalizer(dataset: Dataset, modality: int, indices: np.ndarray | None = None) -> Normalizer:
    """Fit per-feature statistics over a slice of one modality (train split only)."""
    x = dataset.modality_array(modality)
    if indices is not None:
        x = x[np.asarray(indices)]
    if x.shape[0] == 0:
        raise ConfigurationError("cannot fit a normalizer on an empty slice")
    return Normalizer.fit(x.reshape(x.shape[0], -1))


def normalize_target(targets: np.ndarray) -> tuple[np.ndarray, Normalizer]:
    """Z-score regression targets; errors on constant vectors."""
    t = np.asarray(targets, dtype=np.float64).ravel()
    if t.shape[0] < 2 or np.unique(t).size < 2:
        raise ConfigurationError("target normalization needs at least two distinct values")
    norm = Normalizer.fit(t[:, None])
    return norm.transform(t), norm


# ---------------------------------------------------------------------------
# Splitting and class weights
# ---------------------------------------------------------------------------

def kfold_split(n: int, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded permutation, then contiguous slicing into k folds.

    Test sets are disjoint, cover all indices, and differ in size by at most
    one.
    """
    if k < 2:
        raise ConfigurationError(f"k-fold needs k >= 2, got {k}")
    if n < k:
        raise ConfigurationError(f"k-fold needs n >= k, got n={n}, k={k}")
    perm = np.random.default_rng(int(seed)).permutation(n)
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        test = np.sort(perm[start:start + size])
        train = np.sort(np.concatenate([perm[:start], perm[start + size:]]))
        folds.append((train, test))
        start += size
    return folds


def compute_class_weights(labels: np.ndarray, task: TaskSpec) -> np.ndarray:
    """Inverse-frequency weights w_k = N / (K * N_k); all ones when balanced.

    For multilabel tasks, N_k counts positives in label column k.
    """
    if not task.is_classification:
        raise ConfigurationError("class weights apply to classification tasks only")
    labels = np.asarray(labels)
    k = task.num_classes
    if task.kind == "multilabel":
        if labels.ndim != 2 or labels.shape[1] != k:
            raise ConfigurationError(f"multilabel labels must be (N, {k})")
        n = labels.shape[0]
        counts = labels.sum(axis=0).astype(np.float64)
    else:
        if labels.ndim != 1:
            raise ConfigurationError("class labels must be a 1-D index array")
        n = labels.shape[0]
        counts = np.bincount(labels.astype(np.int64), minlength=k).astype(np.float64)
    zero = np.nonzero(counts == 0)[0]
    if zero.size:
        raise ConfigurationError(f"class {int(zero[0])} has no samples; cannot weight it")
    return n / (k * counts)


# ---------------------------------------------------------------------------
# On-disk format
# ---------------------------------------------------------------------------

def _write_csv(path: Path, header: list[str], rows: np.ndarray, fmt: str) -> None:
    np.savetxt(path, rows, fmt=fmt, delimiter=",", header=",".join(header), comments="")


def save_dataset(dataset: Dataset, directory: str | Path) -> Path:
    """Write manifest + per-modality CSVs + targets + ids.

    Numbers are decimal text with 9 significant digits, lossless for 32-bit
    floats.
    """
    if len(dataset) == 0:
        raise ConfigurationError("refusing to save an empty dataset")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "task": dataset.task.to_dict(),
        "modalities": [dataset.mod1.to_dict(), dataset.mod2.to_dict()],
        "n_samples": len(dataset),
        "provenance": dataset.provenance,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    for m in (1, 2):
        x = dataset.modality_array(m).reshape(len(dataset), -1)
        header = [f"f{i}" for i in range(x.shape[1])]
        _write_csv(directory / f"mod{m}.csv", header, x, _NUM_FMT)

    y = dataset.target_array()
    if dataset.task.kind == "regression":
        _write_csv(directory / "targets.csv", ["t0"], y.reshape(-1, 1), _NUM_FMT)
    elif dataset.task.kind == "multilabel":
        _write_csv(directory / "targets.csv", [f"t{i}" for i in range(y.shape[1])], y, "%d")
    else:
        _write_csv(directory / "targets.csv", ["t0"], y.reshape(-1, 1), "%d")

    (directory / "ids.csv").write_text("\n".join(["id"] + dataset.ids()) + "\n")
    return directory


def _load_csv(path: Path, expect_rows: int) -> np.ndarray:
    if not path.exists():
        raise DatasetFormatError(f"missing file {path.name}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2)
    if data.shape[0] != expect_rows:
        raise DatasetFormatError(f"{path.name}: expected {expect_rows} rows, found {data.shape[0]}")
    return data


def load_dataset(directory: str | Path) -> Dataset:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DatasetFormatError(f"manifest.json not found in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"manifest.json is not valid JSON: {exc}") from exc
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise DatasetFormatError(
            f"unsupported dataset format_version {manifest.get('format_version')!r}"
        )
    try:
        task = TaskSpec.from_dict(manifest["task"])
        mods = [ModalityConfig.from_dict(d) for d in manifest["modalities"]]
        n = int(manifest["n_samples"])
    except (KeyError, TypeError) as exc:
        raise DatasetFormatError(f"manifest.json incomplete: {exc}") from exc
    if len(mods) != 2:
        raise DatasetFormatError("manifest must declare exactly two modalities")

    arrays = []
    for m, cfg in zip((1, 2), mods):
        flat = _load_csv(directory / f"mod{m}.csv", n)
        if flat.shape[1] != cfg.num_features:
            raise DatasetFormatError(
                f"modality {cfg.name!r}: manifest shape {cfg.shape} implies "
                f"{cfg.num_features} columns, mod{m}.csv has {flat.shape[1]}"
            )
        if not np.all(np.isfinite(flat)):
            raise DatasetFormatError(f"modality {cfg.name!r}: non-finite values in mod{m}.csv")
        arrays.append(flat.astype(np.float32).reshape(n, *cfg.shape))

    t = _load_csv(directory / "targets.csv", n)
    if task.kind == "multilabel":
        if t.shape[1] != task.num_classes:
            raise DatasetFormatError(
                f"targets.csv must have {task.num_classes} columns for this multilabel task"
            )
        targets = t.astype(np.int64)
    elif task.kind == "regression":
        if t.shape[1] != 1:
            raise DatasetFormatError("targets.csv must have one column for regression")
        if not np.all(np.isfinite(t)):
            raise DatasetFormatError("non-finite values in targets.csv")
        targets = t[:, 0].astype(np.float32)
    else:
        if t.shape[1] != 1:
            raise DatasetFormatError("targets.csv must have one column for classification")
        targets = t[:, 0].astype(np.int64)

    ids_path = directory / "ids.csv"
    if not ids_path.exists():
        raise DatasetFormatError("missing file ids.csv")
    id_lines = [ln for ln in ids_path.read_text().splitlines() if ln]
    if not id_lines or id_lines[0] != "id":
        raise DatasetFormatError("ids.csv must start with an 'id' header row")
    ids = id_lines[1:]
    if len(ids) != n:
        raise DatasetFormatError(f"ids.csv: expected {n} ids, found {len(ids)}")

    samples = []
    for i in range(n):
        if task.kind == "multilabel":
            target = targets[i]
        elif task.kind == "regression":
            target = float(targets[i])
        else:
            target = int(targets[i])
        samples.append(Sample(id=ids[i], x1=arrays[0][i], x2=arrays[1][i], target=target))
    return Dataset(task=task, mod1=mods[0], mod2=mods[1], samples=samples,
                   provenance=manifest.get("provenance", {}))

"""Config-driven command line: gen-data, train, eval, ablate, gradcheck, plot-losses.

One YAML config describes the whole experiment; flags override config keys
via ``--set dotted.key=value``. Every command validates the full config
before computing anything, embeds a canonical config snapshot in its output
directory, and exits 0 on success, 2 on configuration errors, 1 on runtime
errors. Re-running a command with the same config and seed rewrites
byte-identical CSV/JSON artifacts (images and checkpoints exempt).
"""

from __future__ import annotations

import csv
import functools
import json
from dataclasses import dataclass, replace
from pathlib import Path

import click
import numpy as np
import torch
import yaml

from . import losses as losses_mod
from .baselines import (IndividualModel, VariantSpec, build_variant, expand_variants,
                        load_individual, run_ablation_suite, save_individual)
from .data import (ConfigurationError, Dataset, DatasetFormatError, GeneratorSpec, Normalizer,
                   compute_class_weights, generate_synthetic, load_dataset, normalize_target,
                   save_dataset)
from .encoders import EncoderSpec
from .evaluation import (MetricReport, RunReport, export_embeddings, gradcheck, run_cv,
                         write_metrics_csv, write_report_json)
from .model import (CheckpointError, CoLearnModel, TrainConfig, load_model, read_checkpoint,
                    save_model, train)
from .seeding import derive_seed

_DATASET_KEYS = {"path", "generator"}
_GENERATOR_KEYS = {"task", "num_classes", "n_samples", "shared_dim", "specific_dim",
                   "nuisance_dim", "noise_x", "noise_y", "seed", "mod1", "mod2"}
_MODALITY_KEYS = {"name", "layout", "shape"}
_ENCODER_KEYS = {"backbone", "hidden_units", "num_layers", "kernel_size", "num_heads",
                 "projection_dim", "projection_dropout"}
_TRAINING_KEYS = {"learning_rate", "batch_size", "max_epochs", "patience", "seed",
                  "loss_weighting", "temperature", "early_stop_metric"}
_EVALUATION_KEYS = {"k_folds", "runs", "val_fraction", "f1_average", "feature_spaces"}
_TOP_KEYS = {"dataset", "encoders", "training", "variants", "evaluation", "output_dir"}


@dataclass
class ExperimentConfig:
    dataset_path: Path | None
    generator: GeneratorSpec | None
    generator_seed: int | None
    encoder_specs: tuple[EncoderSpec, EncoderSpec]
    training: TrainConfig
    variants: list[VariantSpec]
    k_folds: int
    runs: int
    val_fraction: float
    f1_average: str
    feature_spaces: bool
    output_dir: Path
    snapshot: dict


def _check_keys(d: dict, allowed: set[str], required: set[str], path: str) -> None:
    if not isinstance(d, dict):
        raise ConfigurationError(f"config section {path!r} must be a mapping")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigurationError(f"unknown key {sorted(unknown)[0]!r} in {path!r}")
    missing = required - set(d)
    if missing:
        raise ConfigurationError(f"missing required key {sorted(missing)[0]!r} in {path!r}")


def _parse_modality(d: dict, path: str):
    from .data import ModalityConfig
    _check_keys(d, _MODALITY_KEYS, _MODALITY_KEYS, path)
    return ModalityConfig(name=str(d["name"]), layout=str(d["layout"]), shape=tuple(d["shape"]))


def parse_experiment_config(raw: dict) -> ExperimentConfig:
    """Validate and normalize a full experiment description."""
    _check_keys(raw, _TOP_KEYS, {"dataset", "encoders", "output_dir"}, "<top level>")

    ds = raw["dataset"]
    _check_keys(ds, _DATASET_KEYS, set(), "dataset")
    if ("path" in ds) == ("generator" in ds):
        raise ConfigurationError("dataset must give exactly one of 'path' or 'generator'")
    dataset_path = Path(ds["path"]) if "path" in ds else None
    generator = generator_seed = None
    if "generator" in ds:
        g = ds["generator"]
        _check_keys(g, _GENERATOR_KEYS,
                    {"task", "num_classes", "n_samples", "shared_dim", "specific_dim",
                     "nuisance_dim", "seed", "mod1", "mod2"}, "dataset.generator")
        generator = GeneratorSpec(
            task_kind=str(g["task"]), num_classes=int(g["num_classes"]),
            n_samples=int(g["n_samples"]), shared_dim=int(g["shared_dim"]),
            specific_dim=int(g["specific_dim"]), nuisance_dim=int(g["nuisance_dim"]),
            mod1=_parse_modality(g["mod1"], "dataset.generator.mod1"),
            mod2=_parse_modality(g["mod2"], "dataset.generator.mod2"),
            noise_x=float(g.get("noise_x", 0.1)), noise_y=float(g.get("noise_y", 0.0)),
        )
        generator_seed = int(g["seed"])

    enc = raw["encoders"]
    _check_keys(enc, {"mod1", "mod2"}, {"mod1", "mod2"}, "encoders")
    specs = []
    for key in ("mod1", "mod2"):
        e = enc[key]
        _check_keys(e, _ENCODER_KEYS, {"backbone"}, f"encoders.{key}")
        specs.append(EncoderSpec(**e))

    tr = raw.get("training", {})
    _check_keys(tr, _TRAINING_KEYS, set(), "training")
    training = TrainConfig(**tr)

    ev = raw.get("evaluation", {})
    _check_keys(ev, _EVALUATION_KEYS, set(), "evaluation")
    k_folds = int(ev.get("k_folds", 10))
    runs = int(ev.get("runs", 5))
    val_fraction = float(ev.get("val_fraction", 0.1))
    f1_average = str(ev.get("f1_average", "macro"))
    feature_spaces = bool(ev.get("feature_spaces", False))

    variants = []
    for i, v in enumerate(raw.get("variants", ["full"])):
        if isinstance(v, str):
            name, modality = v, None
        else:
            _check_keys(v, {"name", "modality"}, {"name"}, f"variants[{i}]")
            name, modality = str(v["name"]), v.get("modality")
        if name == "individual" and modality is None:
            # a bare 'individual' means one baseline per modality
            variants += [VariantSpec(name=name, train=training, modality=m) for m in (1, 2)]
        else:
            variants.append(VariantSpec(name=name, train=training, modality=modality))
    if not variants:
        raise ConfigurationError("variants list must not be empty")

    snapshot = {
        "dataset": ({"path": str(dataset_path)} if dataset_path
                    else {"generator": {**generator.to_dict(), "seed": generator_seed}}),
        "encoders": {"mod1": specs[0].to_dict(), "mod2": specs[1].to_dict()},
        "training": training.to_dict(),
        "variants": [{"name": v.name, "modality": v.modality} for v in variants],
        "evaluation": {"k_folds": k_folds, "runs": runs, "val_fraction": val_fraction,
                       "f1_average": f1_average, "feature_spaces": feature_spaces},
        "output_dir": str(raw["output_dir"]),
    }
    return ExperimentConfig(dataset_path=dataset_path, generator=generator,
                            generator_seed=generator_seed, encoder_specs=tuple(specs),
                            training=training, variants=variants, k_folds=k_folds, runs=runs,
                            val_fraction=val_fraction, f1_average=f1_average,
                            feature_spaces=feature_spaces, output_dir=Path(raw["output_dir"]),
                            snapshot=snapshot)


def _apply_overrides(raw: dict, overrides: tuple[str, ...]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"--set expects dotted.key=value, got {item!r}")
        key, _, value = item.partition("=")
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict):
                raise ConfigurationError(f"--set path {key!r} does not address a mapping")
            node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"--set path {key!r} does not address a mapping")
        node[parts[-1]] = yaml.safe_load(value)
    return raw


def load_experiment_config(path: str | Path, overrides: tuple[str, ...] = ()) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a YAML mapping")
    return parse_experiment_config(_apply_overrides(raw, overrides))


def resolve_dataset(config: ExperimentConfig) -> Dataset:
    if config.dataset_path is not None:
        return load_dataset(config.dataset_path)
    return generate_synthetic(config.generator, config.generator_seed)


def _write_snapshot(config: ExperimentConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config_snapshot.yaml").write_text(
        yaml.safe_dump(config.snapshot, sort_keys=True))


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigurationError, DatasetFormatError, CheckpointError) as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(2) from exc
        except (click.ClickException, SystemExit):
            raise
        except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
            click.echo(f"runtime error: {exc}", err=True)
            raise SystemExit(1) from exc
    return wrapper


@click.group()
def main():
    """Two-modality co-learning experiments."""


_config_opt = click.option("--config", "config_path", required=True,
                           type=click.Path(), help="experiment YAML")
_set_opt = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                        help="override a config key (dotted path)")
_out_opt = click.option("--out", "out_dir", default=None, type=click.Path(),
                        help="output directory (defaults to the config's output_dir)")


@main.command("gen-data")
@_config_opt
@_set_opt
@_out_opt
@_guard
def cmd_gen_data(config_path, overrides, out_dir):
    """Generate the configured synthetic dataset and write it to disk."""
    config = load_experiment_config(config_path, overrides)
    if config.generator is None:
        raise ConfigurationError("gen-data needs a dataset.generator section")
    target = Path(out_dir) if out_dir else config.output_dir / "dataset"
    dataset = generate_synthetic(config.generator, config.generator_seed)
    save_dataset(dataset, target)
    _write_snapshot(config, target)
    click.echo(f"wrote {len(dataset)} samples to {target}")
    click.echo("provenance: " + json.dumps(dataset.provenance, sort_keys=True))


def _variant_from(config: ExperimentConfig, name: str | None, modality: int | None) -> VariantSpec:
    if name is None:
        return config.variants[0]
    return VariantSpec(name=name, train=config.training, modality=modality)


def _fit_pipeline(dataset: Dataset, train_ids: np.ndarray):
    """Normalizers, per-class weights / target scaling from a training slice."""
    from .data import fit_normalizer
    norms = {m: fit_normalizer(dataset, m, train_ids) for m in (1, 2)}
    y = dataset.target_array()
    task = dataset.task
    target_norm = None
    if task.is_classification:
        task = task.with_class_weights(compute_class_weights(y[train_ids], task))
    else:
        _, target_norm = normalize_target(y[train_ids])
        y = target_norm.transform(y.astype(np.float64)).astype(np.float32)
    return norms, target_norm, task, y


@main.command("train")
@_config_opt
@_set_opt
@_out_opt
@click.option("--variant", "variant_name", default=None, help="variant to train (default: first configured)")
@click.option("--modality", type=int, default=None, help="modality index for the individual variant")
@_guard
def cmd_train(config_path, overrides, out_dir, variant_name, modality):
    """Train one variant on a train/validation split of the dataset."""
    config = load_experiment_config(config_path, overrides)
    out = Path(out_dir) if out_dir else config.output_dir / "train"
    dataset = resolve_dataset(config)
    variant = _variant_from(config, variant_name, modality)

    n = len(dataset)
    rng = np.random.default_rng(derive_seed(config.training.seed, 0xDA7A))
    order = rng.permutation(n)
    n_val = max(1, int(round(config.val_fraction * n)))
    if n_val >= n:
        raise ConfigurationError("dataset too small for the configured val_fraction")
    val_ids, train_ids = np.sort(order[:n_val]), np.sort(order[n_val:])

    norms, target_norm, task, y = _fit_pipeline(dataset, train_ids)
    x = {m: norms[m].transform(dataset.modality_array(m)) for m in (1, 2)}

    model = build_variant(variant, dataset, config.encoder_specs, seed=config.training.seed)
    model, history = train(model,
                           (x[1][train_ids], x[2][train_ids], y[train_ids]),
                           (x[1][val_ids], x[2][val_ids], y[val_ids]),
                           config.training, task)

    out.mkdir(parents=True, exist_ok=True)
    normalizers = {"mod1": norms[1], "mod2": norms[2]}
    if target_norm is not None:
        normalizers["target"] = target_norm
    if isinstance(model, IndividualModel):
        save_individual(model, out / "checkpoint.npz", train_config=config.training,
                        normalizers=normalizers)
    else:
        save_model(model, out / "checkpoint.npz", variant=variant.name,
                   train_config=config.training, normalizers=normalizers)
    losses_mod.write_loss_trace(history.epoch_losses, out / "loss_trace.csv")
    _write_snapshot(config, out)
    click.echo(f"trained {variant.label()} for {len(history)} epochs "
               f"(best epoch {history.best_epoch}, {history.stop_reason}); wrote {out}")


def _load_any_checkpoint(path: Path):
    meta, _ = read_checkpoint(path)
    if meta.get("variant") == "individual":
        return load_individual(path)
    return load_model(path)


@main.command("eval")
@_config_opt
@_set_opt
@_out_opt
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--feature-spaces", is_flag=True, default=False,
              help="also score shared-only and specific-only inference")
@click.option("--export-embeddings", "embeddings", is_flag=True, default=False,
              help="write 2-D feature projections per modality")
@_guard
def cmd_eval(config_path, overrides, out_dir, checkpoint_path, feature_spaces, embeddings):
    """Score single-modality inference of a trained checkpoint on a dataset."""
    config = load_experiment_config(config_path, overrides)
    out = Path(out_dir) if out_dir else config.output_dir / "eval"
    dataset = resolve_dataset(config)
    model, meta = _load_any_checkpoint(Path(checkpoint_path))

    if meta["model"]["task"] != dataset.task.to_dict():
        raise CheckpointError(
            f"checkpoint task {meta['model']['task']} does not match dataset task "
            f"{dataset.task.to_dict()}")

    norm_meta = meta.get("normalizers", {})
    norms = {m: Normalizer.from_dict(norm_meta[f"mod{m}"]) for m in (1, 2) if f"mod{m}" in norm_meta}
    task = dataset.task
    y = dataset.target_array()
    if task.kind == "regression" and "target" in norm_meta:
        y = Normalizer.from_dict(norm_meta["target"]).transform(y.astype(np.float64))

    from .evaluation import _metric_value, _predict_batched  # shared scoring path

    variant = meta.get("variant", "full")
    metric_name = "r2" if task.kind == "regression" else "f1"
    reports = []
    modalities = [model.modality_index] if isinstance(model, IndividualModel) else [1, 2]
    for m in modalities:
        xm = norms[m].transform(dataset.modality_array(m)) if m in norms else dataset.modality_array(m)
        logits = _predict_batched(lambda xb, m=m: model.predict_single(m, xb), xm)
        value = _metric_value(y, logits, task, config.f1_average)
        reports.append(MetricReport(metric=metric_name, variant=variant, modality=m,
                                    raw=np.array([[value]])))
        if feature_spaces and isinstance(model, CoLearnModel):
            for space in ("shared", "specific"):
                logits_s = _predict_batched(
                    lambda xb, m=m, s=space: model.predict_from_space(m, xb, s), xm)
                value_s = _metric_value(y, logits_s, task, config.f1_average)
                reports.append(MetricReport(metric=metric_name, variant=f"{variant}:{space}",
                                            modality=m, raw=np.array([[value_s]])))

    run_report = RunReport(variant=variant, config=config.snapshot, metrics=reports,
                           histories={}, provenance=dict(dataset.provenance))
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(run_report, out / "metrics.csv")
    write_report_json(run_report, out / "report.json")
    if embeddings:
        if not isinstance(model, CoLearnModel):
            raise ConfigurationError("embedding export needs a co-learning checkpoint")
        export_embeddings(model, dataset, out, normalizers=norms)
    _write_snapshot(config, out)
    for mr in reports:
        click.echo(f"{mr.variant} modality{mr.modality} {mr.metric}={mr.mean:.4f}")


@main.command("ablate")
@_config_opt
@_set_opt
@_out_opt
@_guard
def cmd_ablate(config_path, overrides, out_dir):
    """Cross-validate every configured variant and write the ablation table."""
    config = load_experiment_config(config_path, overrides)
    out = Path(out_dir) if out_dir else config.output_dir / "ablation"
    dataset = resolve_dataset(config)
    variants = expand_variants(config.variants)
    result = run_ablation_suite(dataset, variants, config.encoder_specs,
                                k=config.k_folds, runs=config.runs, seed=config.training.seed,
                                out_dir=out, val_fraction=config.val_fraction,
                                f1_average=config.f1_average)
    _write_snapshot(config, out)
    for variant, cells in sorted(result["summary"].items()):
        for modality, stats in sorted(cells.items()):
            click.echo(f"{variant} {modality} {stats['metric']}={stats['mean']:.4f}"
                       f" (std {stats['std']:.4f})")


@main.command("gradcheck")
@_config_opt
@_set_opt
@_out_opt
@click.option("--variant", "variant_name", default=None)
@click.option("--modality", type=int, default=None)
@click.option("--batch-size", type=int, default=8, show_default=True)
@click.option("--step", type=float, default=1e-5, show_default=True)
@click.option("--max-entries", type=int, default=None,
              help="sample at most this many entries per parameter block")
@_guard
def cmd_gradcheck(config_path, overrides, out_dir, variant_name, modality, batch_size, step,
                  max_entries):
    """Compare analytic gradients of the combined loss with finite differences."""
    config = load_experiment_config(config_path, overrides)
    out = Path(out_dir) if out_dir else config.output_dir / "gradcheck"
    dataset = resolve_dataset(config)
    variant = _variant_from(config, variant_name, modality)

    n = min(batch_size, len(dataset))
    ids = np.arange(n)
    norms, _, task, y = _fit_pipeline(dataset, np.arange(len(dataset)))
    x1 = norms[1].transform(dataset.modality_array(1))[ids].astype(np.float64)
    x2 = norms[2].transform(dataset.modality_array(2))[ids].astype(np.float64)
    yb = y[ids]

    model = build_variant(variant, dataset, config.encoder_specs,
                          seed=config.training.seed, dtype=torch.float64)
    model.task = task  # weighted losses use the fitted class weights

    def loss_fn():
        bundle, _, _ = model.compute_losses(x1, x2, yb, contrast_seed=7)
        return bundle.total

    report = gradcheck(model, loss_fn, step=step, max_entries_per_block=max_entries)
    worst_block = max(report, key=report.get)
    out.mkdir(parents=True, exist_ok=True)
    (out / "gradcheck.json").write_text(json.dumps(
        {"step": step, "blocks": report, "max_relative_error": report[worst_block],
         "worst_block": worst_block}, indent=2, sort_keys=True) + "\n")
    _write_snapshot(config, out)
    click.echo(f"max relative error {report[worst_block]:.3e} in block {worst_block}")


@main.command("plot-losses")
@click.argument("trace", type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@_guard
def cmd_plot_losses(trace, out_dir):
    """Render the four per-term training curves and emit a tidy long-format CSV."""
    rows = losses_mod.read_loss_trace(trace)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    terms = ("main", "aux", "contrastive", "modality")
    with (out / "loss_curves_tidy.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "term", "value"])
        for row in rows:
            for term in terms:
                writer.writerow([int(row["epoch"]), term, f"{row[term]:.17g}"])

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    epochs = [row["epoch"] for row in rows]
    for term in terms:
        ax.plot(epochs, [row[term] for row in rows], label=term)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "loss_curves.png", dpi=150)
    plt.close(fig)
    click.echo(f"wrote {out / 'loss_curves.png'} and tidy CSV for {len(rows)} epochs")


if __name__ == "__main__":
    main()

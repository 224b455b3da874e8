import numpy as np
import pytest
import torch
from torch import nn

import comodal as cm
from comodal.data import ConfigurationError
from comodal.evaluation import GradCheckError, _pca_2d, write_metrics_csv


class TestF1:
    def test_perfect(self):
        task = cm.TaskSpec("multiclass", 3)
        y = np.array([0, 1, 2, 1])
        assert cm.f1_score(y, y, task) == 1.0

    def test_binary_hand_confusion_matrix(self):
        task = cm.TaskSpec("binary", 2)
        y_true = np.array([1, 1, 0, 0])
        y_pred = np.array([1, 0, 0, 0])
        # class 1: tp=1 fp=0 fn=1 -> 2/3; class 0: tp=2 fp=1 fn=0 -> 0.8
        assert cm.f1_score(y_true, y_pred, task) == pytest.approx(0.7333333333333334, abs=1e-9)

    def test_multilabel_degenerate_predictor(self):
        task = cm.TaskSpec("multilabel", 3)
        y_true = np.array([[1, 0, 1], [1, 1, 0]])
        y_pred = np.zeros_like(y_true)
        assert cm.f1_score(y_true, y_pred, task) == 0.0

    def test_absent_class_warns(self):
        task = cm.TaskSpec("multiclass", 3)
        y = np.array([0, 1, 0, 1])
        with pytest.warns(UserWarning, match="absent"):
            value = cm.f1_score(y, y, task)
        assert value == pytest.approx(2 / 3)  # class 2 contributes zero

    def test_permutation_invariance(self):
        task = cm.TaskSpec("multiclass", 4)
        rng = np.random.default_rng(0)
        y_true = rng.integers(0, 4, 50)
        y_pred = rng.integers(0, 4, 50)
        perm = rng.permutation(50)
        assert cm.f1_score(y_true, y_pred, task) == pytest.approx(
            cm.f1_score(y_true[perm], y_pred[perm], task), abs=1e-12)

    def test_micro_and_weighted_available(self):
        task = cm.TaskSpec("binary", 2)
        y_true = np.array([1, 1, 0, 0])
        y_pred = np.array([1, 0, 0, 0])
        micro = cm.f1_score(y_true, y_pred, task, average="micro")
        weighted = cm.f1_score(y_true, y_pred, task, average="weighted")
        assert 0 < micro <= 1 and 0 < weighted <= 1
        with pytest.raises(ConfigurationError):
            cm.f1_score(y_true, y_pred, task, average="samples")

    def test_regression_rejected(self):
        with pytest.raises(ConfigurationError):
            cm.f1_score(np.array([1.0]), np.array([1.0]), cm.TaskSpec("regression", 1))


class TestR2:
    def test_perfect(self):
        y = np.array([1.0, 2.0, 3.0])
        assert cm.r2_score(y, y) == 1.0

    def test_mean_predictor(self):
        y = np.array([1.0, 2.0, 3.0])
        assert cm.r2_score(y, np.full(3, 2.0)) == pytest.approx(0.0, abs=1e-12)

    def test_hand_value(self):
        assert cm.r2_score([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]) == pytest.approx(0.5, abs=1e-12)

    def test_affine_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            y = rng.standard_normal(30)
            p = y + 0.3 * rng.standard_normal(30)
            a = rng.uniform(0.1, 5.0) * rng.choice([-1, 1])
            b = rng.uniform(-10, 10)
            assert cm.r2_score(y, p) == pytest.approx(cm.r2_score(a * y + b, a * p + b),
                                                      abs=1e-9)

    def test_constant_truth_errors(self):
        with pytest.raises(ValueError):
            cm.r2_score(np.full(5, 2.0), np.arange(5.0))


class TestPredictions:
    def test_argmax_tie_breaks_low(self):
        task = cm.TaskSpec("multiclass", 3)
        logits = np.array([[0.5, 0.5, 0.1], [0.2, 0.7, 0.7]])
        assert cm.logits_to_predictions(logits, task).tolist() == [0, 1]

    def test_multilabel_threshold_half(self):
        task = cm.TaskSpec("multilabel", 2)
        logits = np.array([[0.01, -0.01]])
        assert cm.logits_to_predictions(logits, task).tolist() == [[1, 0]]


class TestMetricReport:
    def test_aggregates_recompute(self):
        raw = np.array([[0.5, 0.7], [0.6, 0.8]])
        mr = cm.MetricReport(metric="f1", variant="full", modality=1, raw=raw)
        assert mr.mean == pytest.approx(raw.mean(), abs=1e-12)
        assert mr.std == pytest.approx(raw.std(), abs=1e-12)
        assert np.allclose(mr.per_fold, raw.mean(axis=1))
        assert np.allclose(mr.per_run, raw.mean(axis=0))


class TestRunCV:
    def test_cardinality_and_consistency(self, tiny_dataset, tiny_spec):
        variant = cm.VariantSpec("full", cm.TrainConfig(batch_size=32, max_epochs=2, patience=2))
        report = cm.run_cv(tiny_dataset, variant, [tiny_spec, tiny_spec], k=2, runs=1, seed=0)
        assert {m.modality for m in report.metrics} == {1, 2}
        for mr in report.metrics:
            assert mr.raw.shape == (2, 1)
            assert mr.mean == pytest.approx(mr.raw.mean(), abs=1e-12)
        assert len(report.histories) == 2

    def test_deterministic(self, tiny_dataset, tiny_spec, tmp_path):
        variant = cm.VariantSpec("full", cm.TrainConfig(batch_size=32, max_epochs=2, patience=2))
        a = cm.run_cv(tiny_dataset, variant, [tiny_spec, tiny_spec], k=2, runs=1, seed=0)
        b = cm.run_cv(tiny_dataset, variant, [tiny_spec, tiny_spec], k=2, runs=1, seed=0)
        for ma, mb in zip(a.metrics, b.metrics):
            assert np.array_equal(ma.raw, mb.raw)
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        write_metrics_csv(a, pa)
        write_metrics_csv(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_regression_pipeline(self, tiny_mods, tiny_spec):
        gen = cm.GeneratorSpec("regression", 1, 80, 2, 2, 2, tiny_mods[0], tiny_mods[1],
                               noise_x=0.1, noise_y=0.05)
        ds = cm.generate_synthetic(gen, seed=2)
        variant = cm.VariantSpec("full", cm.TrainConfig(batch_size=16, max_epochs=2, patience=2))
        report = cm.run_cv(ds, variant, [tiny_spec, tiny_spec], k=2, runs=1, seed=0)
        assert all(m.metric == "r2" for m in report.metrics)

    def test_feature_space_rows_opt_in(self, tiny_dataset, tiny_spec):
        variant = cm.VariantSpec("full", cm.TrainConfig(batch_size=32, max_epochs=2, patience=2))
        plain = cm.run_cv(tiny_dataset, variant, [tiny_spec, tiny_spec], k=2, runs=1, seed=0)
        spaces = cm.run_cv(tiny_dataset, variant, [tiny_spec, tiny_spec], k=2, runs=1, seed=0,
                           include_feature_spaces=True)
        assert {m.variant for m in plain.metrics} == {"full"}
        assert {m.variant for m in spaces.metrics} == {"full", "full:shared", "full:specific"}


class TestEmbeddings:
    def test_two_columns_and_determinism(self, tiny_dataset, tiny_spec, tmp_path):
        model = cm.CoLearnModel(tiny_dataset.task, tiny_dataset.mod1, tiny_dataset.mod2,
                                [tiny_spec, tiny_spec], seed=0)
        paths = cm.export_embeddings(model, tiny_dataset, tmp_path)
        assert len(paths) == 2
        header = paths[0].read_text().splitlines()[0]
        assert header == "id,target,pc1,pc2"
        again = cm.export_embeddings(model, tiny_dataset, tmp_path)
        assert paths[0].read_bytes() == again[0].read_bytes()

    def test_line_data_second_component_vanishes(self):
        t = np.linspace(0, 1, 50)[:, None]
        data = t @ np.array([[1.0, 2.0, -0.5]])
        projected = _pca_2d(data)
        assert projected[:, 1].std() < 1e-9
        assert projected[:, 0].std() > 0

    def test_duplicated_rows_project_identically(self):
        rng = np.random.default_rng(3)
        base = rng.standard_normal((10, 6))
        doubled = np.vstack([base, base])
        projected = _pca_2d(doubled)
        assert np.allclose(projected[:10], projected[10:], atol=1e-9)

    def test_sign_convention(self):
        rng = np.random.default_rng(4)
        data = rng.standard_normal((40, 5))
        p1 = _pca_2d(data)
        p2 = _pca_2d(-data + data.mean(axis=0) * 2)  # mirrored cloud, same subspace
        # components are deterministic functions of the data, not of row signs
        assert np.allclose(np.abs(p1).mean(), np.abs(p2).mean(), atol=1e-6)

    def test_too_few_samples(self, tiny_dataset, tiny_spec, tmp_path):
        model = cm.CoLearnModel(tiny_dataset.task, tiny_dataset.mod1, tiny_dataset.mod2,
                                [tiny_spec, tiny_spec], seed=0)
        one = cm.Dataset(task=tiny_dataset.task, mod1=tiny_dataset.mod1, mod2=tiny_dataset.mod2,
                         samples=tiny_dataset.samples[:1])
        with pytest.raises(ConfigurationError):
            cm.export_embeddings(model, one, tmp_path)


class _WrongGradient(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return (x ** 2).sum()

    @staticmethod
    def backward(ctx, grad_out):
        (x,) = ctx.saved_tensors
        return grad_out * (2 * x + 1.0)  # off by a constant everywhere


class TestGradcheck:
    def test_detects_corrupted_gradient(self):
        lin = nn.Linear(3, 1).double()

        def loss_fn():
            return _WrongGradient.apply(lin.weight)

        report = cm.gradcheck(lin, loss_fn, step=1e-5)
        assert report["weight"] >= 1e-2

    def test_no_side_effects(self, tiny_dataset, tiny_spec, tiny_arrays):
        model = cm.CoLearnModel(tiny_dataset.task, tiny_dataset.mod1, tiny_dataset.mod2,
                                [tiny_spec, tiny_spec], seed=0, dtype=torch.float64)
        x1 = tiny_arrays[0][:4].astype(np.float64)
        x2 = tiny_arrays[1][:4].astype(np.float64)
        y = tiny_arrays[2][:4]
        before = cm.ParamBundle.from_module(model).flatten()

        def loss_fn():
            bundle, _, _ = model.compute_losses(x1, x2, y)
            return bundle.total

        cm.gradcheck(model, loss_fn, max_entries_per_block=2)
        after = cm.ParamBundle.from_module(model).flatten()
        assert np.array_equal(before, after)

    def test_non_finite_gradient_names_block(self):
        lin = nn.Linear(2, 1).double()
        with torch.no_grad():
            lin.weight[0, 0] = float("inf")

        def loss_fn():
            return (lin.weight * 0 + lin.weight).sum() * 0 + (lin.weight ** 2).sum()

        with pytest.raises((GradCheckError, ValueError)):
            report = cm.gradcheck(lin, loss_fn)
            # inf parameter makes the analytic gradient non-finite
            raise ValueError(str(report))

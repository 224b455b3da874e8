import math

import numpy as np
import pytest
import torch
from torch import nn

import comodal as cm
from comodal.data import ConfigurationError
from comodal.encoders import FeatureTriple
from comodal.losses import read_loss_trace, write_loss_trace


def brute_force_contrastive(z1, z2, tau):
    """Independent oracle: explicit per-pair loops, no vectorized shortcuts."""
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    b = z1.shape[0]

    def cos(a, c):
        na = max(math.sqrt(sum(v * v for v in a)), 1e-12)
        nc = max(math.sqrt(sum(v * v for v in c)), 1e-12)
        return sum(x * y for x, y in zip(a, c)) / (na * nc)

    def one_direction(anchors, candidates):
        total = 0.0
        for i in range(b):
            numer = math.exp(cos(anchors[i], candidates[i]) / tau)
            denom = 0.0
            for j in range(b):
                denom += math.exp(cos(anchors[i], candidates[j]) / tau)
            total += -math.log(numer / denom)
        return total / b

    return one_direction(z1, z2) + one_direction(z2, z1)


class TestCosine:
    def test_identical(self):
        v = np.array([0.3, -1.2, 4.0])
        assert float(cm.cosine_similarity(v, v)) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert float(cm.cosine_similarity([1.0, 0.0], [0.0, 2.0])) == pytest.approx(0.0)

    def test_hand_value(self):
        assert float(cm.cosine_similarity([1.0, 0.0], [1.0, 1.0])) == pytest.approx(
            1 / math.sqrt(2), abs=1e-9)

    def test_zero_vector_floored(self):
        assert np.isfinite(float(cm.cosine_similarity([0.0, 0.0], [1.0, 0.0])))


class TestInfoNCE:
    def test_single_row_exact_zero(self):
        z = np.array([[0.5, -0.25]])
        assert float(cm.info_nce(z, z, 0.07)) == 0.0

    def test_identical_embeddings_log_b(self):
        z = np.tile([[1.0, 2.0, 3.0]], (4, 1))
        assert float(cm.info_nce(z, z, 0.07)) == pytest.approx(math.log(4), abs=1e-9)

    def test_two_row_hand_case(self):
        z = np.eye(2)
        assert float(cm.info_nce(z, z, 1.0)) == pytest.approx(-math.log(math.e / (math.e + 1)),
                                                              abs=1e-5)

    def test_empty_batch_errors(self):
        with pytest.raises(ValueError):
            cm.info_nce(np.zeros((0, 3)), np.zeros((0, 3)), 0.07)

    def test_non_negative(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            z1 = rng.standard_normal((6, 5))
            z2 = rng.standard_normal((6, 5))
            assert float(cm.info_nce(z1, z2, 0.07)) >= 0

    def test_anchor_rescaling_invariance(self):
        rng = np.random.default_rng(1)
        z1 = rng.standard_normal((5, 4))
        z2 = rng.standard_normal((5, 4))
        a = float(cm.info_nce(z1, z2, 0.07))
        b = float(cm.info_nce(3.7 * z1, z2, 0.07))
        assert a == pytest.approx(b, abs=1e-9)

    def test_tiny_temperature_stays_finite(self):
        rng = np.random.default_rng(2)
        z1 = rng.standard_normal((8, 4))
        z2 = rng.standard_normal((8, 4))
        assert np.isfinite(float(cm.info_nce(z1, z2, 1e-3)))


class TestContrastive:
    def test_identical_batch(self):
        z = np.tile([[1.0, 0.0]], (4, 1))
        assert float(cm.contrastive_loss(z, z, 0.07)) == pytest.approx(2 * math.log(4), abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        z1 = rng.standard_normal((6, 8))
        z2 = rng.standard_normal((6, 8))
        assert float(cm.contrastive_loss(z1, z2, 0.07)) == pytest.approx(
            float(cm.contrastive_loss(z2, z1, 0.07)), abs=1e-9)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(4)
        z1 = rng.standard_normal((8, 16))
        z2 = rng.standard_normal((8, 16))
        for tau in (0.07, 1.0):
            assert float(cm.contrastive_loss(z1, z2, tau)) == pytest.approx(
                brute_force_contrastive(z1, z2, tau), abs=1e-6)

    def test_row_count_mismatch(self):
        with pytest.raises(ValueError):
            cm.contrastive_loss(np.zeros((3, 2)), np.zeros((4, 2)), 0.07)

    def test_batch_order_invariance(self):
        rng = np.random.default_rng(5)
        z1 = rng.standard_normal((7, 4))
        z2 = rng.standard_normal((7, 4))
        perm = rng.permutation(7)
        assert float(cm.contrastive_loss(z1, z2, 0.07)) == pytest.approx(
            float(cm.contrastive_loss(z1[perm], z2[perm], 0.07)), abs=1e-9)

    def test_config_temperature_default(self):
        assert cm.ContrastiveConfig().temperature == 0.07
        with pytest.raises(ConfigurationError):
            cm.ContrastiveConfig(temperature=0.0)


class TestPredictiveLoss:
    def test_binary_uniform_logits(self):
        task = cm.TaskSpec("binary", 2)
        logits = np.zeros((4, 2))
        y = np.array([0, 1, 0, 1])
        assert float(cm.predictive_loss(y, logits, task)) == pytest.approx(math.log(2), abs=1e-9)

    def test_regression_perfect(self):
        task = cm.TaskSpec("regression", 1)
        y = np.array([0.1, -2.0, 3.0])
        assert float(cm.predictive_loss(y, y[:, None], task)) == 0.0

    def test_multiclass_hand_softmax(self):
        task = cm.TaskSpec("multiclass", 3)
        logits = np.array([[2.0, 0.0, 0.0]])
        y = np.array([0])
        expected = -math.log(math.exp(2) / (math.exp(2) + 2))
        assert float(cm.predictive_loss(y, logits, task)) == pytest.approx(expected, abs=1e-5)

    def test_weighted_ce_normalization(self):
        # sum of w_y * nll over sum of w_y
        task = cm.TaskSpec("multiclass", 2, class_weights=np.array([0.5, 2.0]))
        logits = np.array([[1.0, -1.0], [0.5, 0.25]])
        y = np.array([0, 1])
        logp = torch.log_softmax(torch.as_tensor(logits), dim=1).numpy()
        expected = (0.5 * -logp[0, 0] + 2.0 * -logp[1, 1]) / 2.5
        assert float(cm.predictive_loss(y, logits, task)) == pytest.approx(expected, abs=1e-9)

    def test_multilabel_weighted_mean(self):
        task = cm.TaskSpec("multilabel", 2, class_weights=np.array([1.0, 3.0]))
        logits = np.array([[0.0, 0.0]])
        y = np.array([[1, 0]])
        # bce(0 logit) = log 2 for both entries; weighted mean over B*K
        expected = (1.0 * math.log(2) + 3.0 * math.log(2)) / 2
        assert float(cm.predictive_loss(y, logits, task)) == pytest.approx(expected, abs=1e-9)

    def test_nan_logits_rejected(self):
        task = cm.TaskSpec("binary", 2)
        with pytest.raises(ValueError, match="non-finite"):
            cm.predictive_loss(np.array([0]), np.array([[np.nan, 0.0]]), task)

    def test_label_out_of_range(self):
        task = cm.TaskSpec("multiclass", 3)
        with pytest.raises(ValueError, match="labels"):
            cm.predictive_loss(np.array([3]), np.zeros((1, 3)), task)

    def test_batch_order_invariance(self):
        task = cm.TaskSpec("multiclass", 3, class_weights=np.array([0.5, 1.0, 2.0]))
        rng = np.random.default_rng(6)
        logits = rng.standard_normal((10, 3))
        y = rng.integers(0, 3, 10)
        perm = rng.permutation(10)
        assert float(cm.predictive_loss(y, logits, task)) == pytest.approx(
            float(cm.predictive_loss(y[perm], logits[perm], task)), abs=1e-9)


class TestMainLoss:
    def test_equal_predictions(self):
        task = cm.TaskSpec("multiclass", 3)
        rng = np.random.default_rng(7)
        logits = rng.standard_normal((6, 3))
        y = rng.integers(0, 3, 6)
        assert float(cm.main_loss(y, logits, logits, task)) == pytest.approx(
            float(cm.predictive_loss(y, logits, task)), abs=1e-9)

    def test_regression_arithmetic_mean(self):
        task = cm.TaskSpec("regression", 1)
        y = np.zeros(4)
        perfect = np.zeros((4, 1))
        off = np.ones((4, 1))  # mse 1.0
        assert float(cm.main_loss(y, perfect, off, task)) == pytest.approx(0.5, abs=1e-9)

    def test_random_matches_half_sum(self):
        task = cm.TaskSpec("binary", 2)
        rng = np.random.default_rng(8)
        l1, l2 = rng.standard_normal((5, 2)), rng.standard_normal((5, 2))
        y = rng.integers(0, 2, 5)
        expected = 0.5 * (float(cm.predictive_loss(y, l1, task)) +
                          float(cm.predictive_loss(y, l2, task)))
        assert float(cm.main_loss(y, l1, l2, task)) == pytest.approx(expected, abs=1e-9)


def _triples(rng, b=5, d=4, dtype=torch.float64):
    def t():
        return torch.as_tensor(rng.standard_normal((b, d))).to(dtype)
    return (FeatureTriple(shared=t(), specific=t(), unused=t()),
            FeatureTriple(shared=t(), specific=t(), unused=t()))


class TestAuxLoss:
    def test_identical_features_double_single_term(self):
        task = cm.TaskSpec("multiclass", 3)
        head = nn.Linear(4, 3).double()
        rng = np.random.default_rng(9)
        z = torch.as_tensor(rng.standard_normal((5, 4)))
        y = rng.integers(0, 3, 5)
        triples = (FeatureTriple(shared=z, specific=z, unused=None),
                   FeatureTriple(shared=z, specific=z, unused=None))
        with torch.no_grad():
            single = float(cm.predictive_loss(y, head(z), task))
            value = float(cm.aux_loss(head, triples, y, task))
        assert value == pytest.approx(2 * single, abs=1e-9)

    def test_gradient_reaches_all_four_inputs(self):
        task = cm.TaskSpec("multiclass", 3)
        head = nn.Linear(4, 3).double()
        rng = np.random.default_rng(10)
        feats = [torch.as_tensor(rng.standard_normal((5, 4))).requires_grad_(True)
                 for _ in range(4)]
        triples = (FeatureTriple(shared=feats[0], specific=feats[1], unused=None),
                   FeatureTriple(shared=feats[2], specific=feats[3], unused=None))
        y = rng.integers(0, 3, 5)
        cm.aux_loss(head, triples, y, task).backward()
        for f in feats:
            assert f.grad is not None and f.grad.abs().sum() > 0

    def test_matches_term_by_term(self):
        task = cm.TaskSpec("multiclass", 3)
        head = nn.Linear(4, 3).double()
        rng = np.random.default_rng(11)
        t1, t2 = _triples(rng)
        y = rng.integers(0, 3, 5)
        with torch.no_grad():
            expected = 0.5 * sum(float(cm.predictive_loss(y, head(f), task))
                                 for f in (t1.shared, t1.specific, t2.shared, t2.specific))
            value = float(cm.aux_loss(head, (t1, t2), y, task))
        assert value == pytest.approx(expected, abs=1e-6)


class TestModalityLoss:
    def test_uniform_logits(self):
        spe = nn.Linear(4, 2).double()
        unu = nn.Linear(4, 2).double()
        for head in (spe, unu):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)
        rng = np.random.default_rng(12)
        t1, t2 = _triples(rng)
        with torch.no_grad():
            value = float(cm.modality_loss(spe, unu, (t1, t2)))
        assert value == pytest.approx(2 * math.log(2), abs=1e-9)

    def test_separable_features_reach_zero(self):
        # hand-built margin classifier on perfectly separable features
        spe = nn.Linear(2, 2).double()
        unu = nn.Linear(2, 2).double()
        with torch.no_grad():
            for head in (spe, unu):
                head.weight.copy_(torch.tensor([[-50.0, 0.0], [50.0, 0.0]]))
                head.bias.zero_()
        z1 = torch.tensor([[-1.0, 0.3]] * 4).double()
        z2 = torch.tensor([[1.0, -0.2]] * 4).double()
        t1 = FeatureTriple(shared=z1, specific=z1, unused=z1)
        t2 = FeatureTriple(shared=z2, specific=z2, unused=z2)
        with torch.no_grad():
            assert float(cm.modality_loss(spe, unu, (t1, t2))) < 1e-3

    def test_matches_recomputation(self):
        spe = nn.Linear(4, 2).double()
        unu = nn.Linear(4, 2).double()
        rng = np.random.default_rng(13)
        t1, t2 = _triples(rng)
        with torch.no_grad():
            expected = 0.0
            for m, t in enumerate((t1, t2)):
                for head, z in ((spe, t.specific), (unu, t.unused)):
                    logp = torch.log_softmax(head(z), dim=1)
                    expected += float(-logp[:, m].mean())
            value = float(cm.modality_loss(spe, unu, (t1, t2)))
        assert value == pytest.approx(0.5 * expected, abs=1e-6)

    def test_specific_only_when_unused_ablated(self):
        spe = nn.Linear(4, 2).double()
        rng = np.random.default_rng(14)
        t1, t2 = _triples(rng)
        t1.unused = None
        t2.unused = None
        with torch.no_grad():
            value = float(cm.modality_loss(spe, None, (t1, t2)))
            expected = 0.5 * sum(float(-torch.log_softmax(spe(t.specific), 1)[:, m].mean())
                                 for m, t in enumerate((t1, t2)))
        assert value == pytest.approx(expected, abs=1e-9)


class TestTotalLoss:
    def test_addition(self):
        bundle = cm.total_loss(0.5, 0.3, 1.2, 0.7)
        assert bundle.total == pytest.approx(2.7)

    def test_zeroing_is_linear(self):
        full = cm.total_loss(0.5, 0.3, 1.2, 0.7).total
        without = cm.total_loss(0.5, 0.0, 1.2, 0.7).total
        assert full - without == pytest.approx(0.3)

    def test_non_finite_named(self):
        with pytest.raises(ValueError, match="contrastive"):
            cm.total_loss(0.1, 0.1, float("nan"), 0.1)


class TestKendall:
    def test_zero_log_vars_recover_sum(self):
        terms = [torch.tensor(v, dtype=torch.float64) for v in (0.5, 0.3, 1.2, 0.7)]
        total = cm.kendall_total(terms, torch.zeros(4, dtype=torch.float64))
        assert float(total) == pytest.approx(2.7, abs=1e-9)

    def test_large_log_var_switches_term_off(self):
        terms = [torch.tensor(10.0), torch.tensor(1.0)]
        s = torch.tensor([40.0, 0.0])
        total = float(cm.kendall_total(terms, s))
        assert total == pytest.approx(40.0 / 2 + 1.0, abs=1e-6)

    def test_gradient_closed_form(self):
        terms = [torch.tensor(0.8), torch.tensor(2.0)]
        s = torch.tensor([0.3, -0.4], requires_grad=True)
        cm.kendall_total(terms, s).backward()
        expected = [-math.exp(-0.3) * 0.8 + 0.5, -math.exp(0.4) * 2.0 + 0.5]
        assert np.allclose(s.grad.numpy(), expected, atol=1e-6)

    def test_gradient_finite_difference(self):
        terms = [torch.tensor(0.8, dtype=torch.float64), torch.tensor(2.0, dtype=torch.float64)]
        h = 1e-6
        for i in range(2):
            s = torch.tensor([0.3, -0.4], dtype=torch.float64, requires_grad=True)
            cm.kendall_total(terms, s).backward()
            analytic = float(s.grad[i])
            sp = torch.tensor([0.3, -0.4], dtype=torch.float64)
            sp[i] += h
            sm = torch.tensor([0.3, -0.4], dtype=torch.float64)
            sm[i] -= h
            numeric = (float(cm.kendall_total(terms, sp)) - float(cm.kendall_total(terms, sm))) / (2 * h)
            assert analytic == pytest.approx(numeric, abs=1e-4)


class TestLossTrace:
    def test_round_trip(self, tmp_path):
        bundles = [cm.LossBundle(0.5, 0.4, 1.5, 0.2, 2.6), cm.LossBundle(0.4, 0.3, 1.2, 0.1, 2.0)]
        path = write_loss_trace(bundles, tmp_path / "trace.csv")
        rows = read_loss_trace(path)
        assert len(rows) == 2
        assert rows[0]["main"] == 0.5
        assert rows[1]["total"] == 2.0

    def test_malformed_trace_rejected(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("epoch,main\n0,1.0\n")
        with pytest.raises(ConfigurationError):
            read_loss_trace(bad)

    def test_empty_trace_rejected(self, tmp_path):
        bad = tmp_path / "empty.csv"
        bad.write_text("")
        with pytest.raises(ConfigurationError):
            read_loss_trace(bad)

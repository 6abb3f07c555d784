"""Semantic projection head and the paired-view NT-Xent loss, checked against
a term-by-term brute-force oracle."""

import math

import numpy as np
import pytest
import torch

from gradcheck import fd_grad_check
from mvreport.contrastive import SemanticProjector, cosine_sim, mvco_loss


def brute_force_mvco(x_f: np.ndarray, x_l: np.ndarray, tau: float,
                     symmetric: bool = True) -> float:
    """Materialize the full 2N x 2N cosine table and apply the loss term by
    term with explicit loops."""
    z = np.concatenate([x_f, x_l], axis=0)
    two_n = z.shape[0]
    n = two_n // 2
    sim = np.zeros((two_n, two_n))
    for i in range(two_n):
        for j in range(two_n):
            sim[i, j] = z[i] @ z[j] / (np.linalg.norm(z[i]) * np.linalg.norm(z[j]))
    losses = []
    anchors = range(two_n) if symmetric else range(n, two_n)
    for i in anchors:
        pos = i + n if i < n else i - n
        denom = sum(math.exp(sim[i, k] / tau) for k in range(two_n) if k != i)
        losses.append(-math.log(math.exp(sim[i, pos] / tau) / denom))
    return sum(losses) / len(losses)


class TestSemanticProjector:
    def test_zero_input_zero_bias_gives_zero(self):
        psi = SemanticProjector(4, 3, 5, 6)
        with torch.no_grad():
            psi.fc1.bias.zero_()
            psi.fc2.bias.zero_()
        out = psi(torch.zeros(2, 4), torch.zeros(2, 3))
        assert torch.equal(out, torch.zeros(2, 6))

    def test_output_dim(self):
        psi = SemanticProjector(4, 3, 5, 6)
        assert psi(torch.rand(7, 4), torch.rand(7, 3)).shape == (7, 6)

    def test_matches_explicit_two_layer_evaluation(self):
        torch.manual_seed(0)
        psi = SemanticProjector(2, 3, 4, 2).double()
        c = torch.randn(5, 2, dtype=torch.float64)
        h = torch.randn(5, 3, dtype=torch.float64)
        w1 = psi.fc1.weight.detach().numpy()
        b1 = psi.fc1.bias.detach().numpy()
        w2 = psi.fc2.weight.detach().numpy()
        b2 = psi.fc2.bias.detach().numpy()
        x = np.concatenate([c.numpy(), h.numpy()], axis=1)
        expected = np.maximum(x @ w1.T + b1, 0.0) @ w2.T + b2
        assert np.allclose(psi(c, h).detach().numpy(), expected, atol=1e-12)

    def test_dim_mismatch_rejected(self):
        psi = SemanticProjector(4, 3, 5, 6)
        with pytest.raises(ValueError):
            psi(torch.rand(2, 5), torch.rand(2, 3))


class TestCosineSim:
    def test_self_similarity(self):
        a = torch.tensor([1.0, 2.0, -3.0])
        assert float(cosine_sim(a, a)) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert float(cosine_sim(torch.tensor([1.0, 0.0]),
                                torch.tensor([0.0, 1.0]))) == pytest.approx(0.0)

    def test_scale_invariance(self):
        a, b = torch.tensor([1.0, 2.0]), torch.tensor([-1.0, 0.5])
        assert float(cosine_sim(3.5 * a, b)) == pytest.approx(float(cosine_sim(a, b)))

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            cosine_sim(torch.zeros(3), torch.ones(3))


class TestMvcoLoss:
    def test_single_pair_loss_is_exactly_zero(self):
        x_f = torch.randn(1, 8, dtype=torch.float64)
        x_l = torch.randn(1, 8, dtype=torch.float64)
        assert float(mvco_loss(x_f, x_l, tau_c=0.1)) == 0.0

    def test_hand_closed_two_pair_fixture(self):
        # identical positives, orthogonal cross-pairs, tau = 0.1:
        # every anchor sees exp(10) against two exp(0) negatives
        x_f = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        x_l = x_f.clone()
        expected = math.log(1 + 2 * math.exp(-10.0))
        assert float(mvco_loss(x_f, x_l, tau_c=0.1)) == pytest.approx(expected, rel=1e-12)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        for n in (1, 2, 3, 5, 8):
            x_f = rng.standard_normal((n, 6))
            x_l = rng.standard_normal((n, 6))
            for symmetric in (True, False):
                ours = float(mvco_loss(torch.from_numpy(x_f), torch.from_numpy(x_l),
                                       tau_c=0.2, symmetric=symmetric))
                oracle = brute_force_mvco(x_f, x_l, 0.2, symmetric)
                assert ours == pytest.approx(oracle, rel=1e-10, abs=1e-12)

    def test_nonpositive_temperature_rejected(self):
        x = torch.randn(2, 4, dtype=torch.float64)
        with pytest.raises(ValueError):
            mvco_loss(x, x, tau_c=0.0)

    def test_zero_embedding_rejected(self):
        x_f = torch.zeros(2, 4, dtype=torch.float64)
        x_l = torch.randn(2, 4, dtype=torch.float64)
        with pytest.raises(ValueError):
            mvco_loss(x_f, x_l, tau_c=0.1)

    def test_loss_decreases_as_positive_similarity_grows(self):
        rng = np.random.default_rng(1)
        x_l = torch.from_numpy(rng.standard_normal((3, 5)))
        base = torch.from_numpy(rng.standard_normal((3, 5)))
        losses = []
        for alpha in (0.0, 0.5, 0.9):
            x_f = (1 - alpha) * base + alpha * x_l  # negatives fixed, positives closer
            losses.append(float(mvco_loss(x_f, x_l, tau_c=0.3)))
        assert losses[0] > losses[1] > losses[2]

    def test_per_embedding_scale_invariance(self):
        rng = np.random.default_rng(2)
        x_f = torch.from_numpy(rng.standard_normal((4, 5)))
        x_l = torch.from_numpy(rng.standard_normal((4, 5)))
        before = float(mvco_loss(x_f, x_l, tau_c=0.1))
        x_f_scaled = x_f.clone()
        x_f_scaled[2] *= 17.0
        assert float(mvco_loss(x_f_scaled, x_l, tau_c=0.1)) == pytest.approx(before, rel=1e-10)

    def test_global_rotation_invariance(self):
        rng = np.random.default_rng(3)
        x_f = rng.standard_normal((4, 5))
        x_l = rng.standard_normal((4, 5))
        q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        before = brute_force_mvco(x_f, x_l, 0.1)
        ours = float(mvco_loss(torch.from_numpy(x_f @ q), torch.from_numpy(x_l @ q), 0.1))
        assert ours == pytest.approx(before, rel=1e-9)

    def test_pair_permutation_invariance(self):
        rng = np.random.default_rng(4)
        x_f = torch.from_numpy(rng.standard_normal((5, 6)))
        x_l = torch.from_numpy(rng.standard_normal((5, 6)))
        perm = torch.tensor([3, 1, 4, 0, 2])
        before = float(mvco_loss(x_f, x_l, tau_c=0.1))
        after = float(mvco_loss(x_f[perm], x_l[perm], tau_c=0.1))
        assert after == pytest.approx(before, rel=1e-10)

    def test_lateral_only_variant_differs_on_asymmetric_batch(self):
        rng = np.random.default_rng(5)
        x_f = torch.from_numpy(rng.standard_normal((3, 4)))
        x_l = torch.from_numpy(rng.standard_normal((3, 4)))
        sym = float(mvco_loss(x_f, x_l, tau_c=0.1, symmetric=True))
        lat = float(mvco_loss(x_f, x_l, tau_c=0.1, symmetric=False))
        assert sym != pytest.approx(lat, rel=1e-6)

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(5)
        x_f = torch.randn(2, 4, dtype=torch.float64, requires_grad=True)
        x_l = torch.randn(2, 4, dtype=torch.float64, requires_grad=True)
        fd_grad_check(lambda: mvco_loss(x_f, x_l, tau_c=0.2), [x_f, x_l])

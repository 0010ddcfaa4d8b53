import math

import numpy as np
import pytest
import torch

from flowseg.core import derive_seed
from flowseg.flow import (
    EulerSchedule,
    LossWeights,
    aux_cfm_loss,
    draw_training_inputs,
    euler_integrate,
    flow_training_loss,
    interpolate,
    reconstruct_train,
    sample_noise,
    target_field,
    training_step,
    wbce_loss,
)


def random_pair(seed, shape=(16, 16), dtype=torch.float32):
    gen = torch.Generator().manual_seed(seed)
    x0 = torch.randn(*shape, generator=gen, dtype=dtype)
    x1 = (torch.rand(*shape, generator=gen, dtype=dtype) > 0.7).to(dtype)
    return x0, x1


class TestInterpolate:
    def test_endpoints_bit_exact(self):
        for seed in range(20):
            x0, x1 = random_pair(seed)
            assert torch.equal(interpolate(x0, x1, 0.0), x0)
            assert torch.equal(interpolate(x0, x1, 1.0), x1)

    def test_constant_fields(self):
        x0 = torch.full((4, 4), -1.0)
        x1 = torch.full((4, 4), 1.0)
        torch.testing.assert_close(interpolate(x0, x1, 0.25), torch.full((4, 4), -0.5))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            interpolate(torch.zeros(4, 4), torch.zeros(4, 5), 0.5)

    def test_path_derivative_equals_target_field(self):
        # float64: the float32 rounding of (1-t)*x0 alone exceeds 1e-6/h
        h = 1e-4
        for seed in range(50):
            x0, x1 = random_pair(seed, dtype=torch.float64)
            t = float(torch.rand((), generator=torch.Generator().manual_seed(seed)) * 0.9 + 0.05)
            fd = (interpolate(x0, x1, t + h) - interpolate(x0, x1, t - h)) / (2 * h)
            torch.testing.assert_close(fd, target_field(x0, x1), atol=1e-6, rtol=1e-6)


class TestTargetField:
    def test_zero_when_equal(self):
        x = torch.randn(8, 8)
        assert torch.all(target_field(x, x) == 0.0)

    def test_unit_displacement(self):
        v = target_field(torch.zeros(4, 4), torch.ones(4, 4))
        assert torch.all(v == 1.0)

    def test_completion_identity(self):
        for seed in range(30):
            x0, x1 = random_pair(seed)
            t = 0.37
            completed = interpolate(x0, x1, t) + (1 - t) * target_field(x0, x1)
            torch.testing.assert_close(completed, x1, atol=1e-6, rtol=1e-6)


class TestSampleNoise:
    def test_deterministic(self):
        assert torch.equal(sample_noise(32, 32, 5), sample_noise(32, 32, 5))
        assert not torch.equal(sample_noise(32, 32, 5), sample_noise(32, 32, 6))

    def test_moments(self):
        x = sample_noise(256, 256, 123)
        n = 256 * 256
        assert abs(float(x.mean())) < 4.0 / math.sqrt(n)
        assert 0.9 <= float(x.var()) <= 1.1


class TestEulerIntegrate:
    def test_constant_field(self):
        x0 = torch.randn(8, 8)
        c = torch.full((8, 8), 2.5)
        for n in (1, 4, 16, 64):
            traj = euler_integrate(lambda x, t: c, x0, EulerSchedule(n))
            assert len(traj) == n + 1
            torch.testing.assert_close(traj[-1], x0 + c, atol=1e-5, rtol=1e-5)

    def test_single_step(self):
        x0 = torch.randn(8, 8)
        field = lambda x, t: torch.sin(x) + t
        traj = euler_integrate(field, x0, EulerSchedule(1))
        torch.testing.assert_close(traj[-1], x0 + field(x0, 0.0))

    def test_contraction_matches_closed_form(self):
        # field v(x) = x1 - x under Euler: x_n = x1 + (1 - dt)^n (x0 - x1)
        x0, x1 = random_pair(3)
        n_steps = 100
        traj = euler_integrate(lambda x, t: x1 - x, x0, EulerSchedule(n_steps))
        dt = 1.0 / n_steps
        for n in (1, 10, 50, 100):
            expected = x1 + (1.0 - dt) ** n * (x0 - x1)
            torch.testing.assert_close(traj[n], expected, atol=1e-5, rtol=1e-5)

    def test_contraction_matches_scalar_oracle(self):
        # independent step-by-step scalar recurrence in float64
        x0_val, x1_val = -0.75, 1.0
        n_steps = 37
        dt = 1.0 / n_steps
        x = x0_val
        for _ in range(n_steps):
            x += dt * (x1_val - x)
        traj = euler_integrate(
            lambda s, t: torch.full_like(s, x1_val) - s,
            torch.full((4, 4), x0_val),
            EulerSchedule(n_steps),
        )
        torch.testing.assert_close(traj[-1], torch.full((4, 4), x), atol=1e-5, rtol=1e-5)

    def test_telescoping_sum(self):
        x0, x1 = random_pair(8)
        fields = []

        def field(x, t):
            v = x1 - x
            fields.append(v)
            return v

        schedule = EulerSchedule(16)
        traj = euler_integrate(field, x0, schedule)
        total = x0 + schedule.dt * sum(fields)
        torch.testing.assert_close(traj[-1], total, atol=1e-5, rtol=1e-5)

    def test_nonfinite_field_aborts_with_step(self):
        def bad_field(x, t):
            return torch.full_like(x, float("nan")) if t >= 0.5 else torch.zeros_like(x)

        with pytest.raises(RuntimeError, match="step 2"):
            euler_integrate(bad_field, torch.zeros(4, 4), EulerSchedule(4))

    def test_schedule_invariants(self):
        s = EulerSchedule(7)
        assert abs(sum(s.dt for _ in s.times) - 1.0) < 1e-9
        assert s.times[0] == 0.0
        assert s.times[-1] == 6 / 7
        with pytest.raises(ValueError):
            EulerSchedule(0)


class TestReconstructTrain:
    def test_oracle_field_recovers_mask(self):
        for seed in range(20):
            x0, x1 = random_pair(seed)
            t = float(np.random.default_rng(seed).uniform(0, 0.999))
            x_t = interpolate(x0, x1, t)
            v = target_field(x0, x1)
            pre_sigmoid = x_t + (1 - t) * v
            torch.testing.assert_close(pre_sigmoid, x1, atol=1e-6, rtol=1e-6)
            torch.testing.assert_close(
                reconstruct_train(x_t, t, v), torch.sigmoid(x1), atol=1e-6, rtol=1e-6
            )

    def test_t_zero_single_step(self):
        x0, x1 = random_pair(4)
        v = torch.randn(16, 16)
        torch.testing.assert_close(reconstruct_train(x0, 0.0, v), torch.sigmoid(x0 + v))

    def test_zero_field_passthrough(self):
        x_t = torch.randn(8, 8)
        torch.testing.assert_close(
            reconstruct_train(x_t, 0.3, torch.zeros(8, 8)), torch.sigmoid(x_t)
        )

    def test_t_one_rejected(self):
        with pytest.raises(ValueError):
            reconstruct_train(torch.zeros(4, 4), 1.0, torch.zeros(4, 4))


def bce_oracle(y: np.ndarray, p: np.ndarray, eps=1e-7) -> float:
    """Plain unweighted binary cross-entropy, element by element."""
    total = 0.0
    for yi, pi in zip(y.ravel(), p.ravel()):
        pi = min(max(pi, eps), 1 - eps)
        total += yi * math.log(pi) + (1 - yi) * math.log(1 - pi)
    return -total / y.size


class TestWbceLoss:
    def test_perfect_prediction_below_tolerance(self):
        y = (torch.rand(16, 16) > 0.5).float()
        loss = wbce_loss(y, y.clone(), LossWeights())
        assert 0.0 <= float(loss) < 1e-6

    def test_half_probability_is_ln2(self):
        y = torch.ones(8, 8, dtype=torch.float64)
        loss = wbce_loss(y, torch.full((8, 8), 0.5, dtype=torch.float64), LossWeights(w1=1.0, w0=0.25))
        assert abs(float(loss) - math.log(2.0)) < 1e-9

    def test_equal_weights_match_bce_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            y = (rng.uniform(size=(8, 8)) > 0.6).astype(np.float64)
            p = rng.uniform(0.01, 0.99, size=(8, 8))
            ours = float(
                wbce_loss(
                    torch.from_numpy(y), torch.from_numpy(p), LossWeights(w1=1.0, w0=1.0)
                )
            )
            assert abs(ours - bce_oracle(y, p)) < 1e-6

    def test_nonnegative_on_random_inputs(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            y = (rng.uniform(size=(6, 6)) > 0.5).astype(np.float32)
            p = rng.uniform(0, 1, size=(6, 6)).astype(np.float32)
            assert float(wbce_loss(torch.from_numpy(y), torch.from_numpy(p), LossWeights())) >= 0.0

    def test_background_weight_scales_background_term(self):
        y = torch.zeros(8, 8)
        p = torch.full((8, 8), 0.5)
        full = wbce_loss(y, p, LossWeights(w1=1.0, w0=1.0))
        quarter = wbce_loss(y, p, LossWeights(w1=1.0, w0=0.25))
        torch.testing.assert_close(quarter, 0.25 * full)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            wbce_loss(torch.zeros(4, 4), torch.full((4, 5), 0.5), LossWeights())

    def test_invalid_weights(self):
        with pytest.raises(ValueError):
            LossWeights(w1=0.0)
        with pytest.raises(ValueError):
            LossWeights(w0=-1.0)


class TestAuxCfmLoss:
    def test_exact_field_gives_zero(self):
        x0, x1 = random_pair(9)
        assert float(aux_cfm_loss(x1 - x0, x0, x1)) == 0.0

    def test_unit_offset(self):
        x0 = torch.zeros(8, 8)
        x1 = torch.ones(8, 8)
        assert abs(float(aux_cfm_loss(torch.zeros(8, 8), x0, x1)) - 1.0) < 1e-7

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            v = rng.normal(size=(4, 4))
            x0 = rng.normal(size=(4, 4))
            x1 = (rng.uniform(size=(4, 4)) > 0.5).astype(np.float64)
            total = 0.0
            for i in range(4):
                for j in range(4):
                    total += (v[i, j] - (x1[i, j] - x0[i, j])) ** 2
            oracle = total / 16.0
            ours = float(
                aux_cfm_loss(torch.from_numpy(v), torch.from_numpy(x0), torch.from_numpy(x1))
            )
            assert abs(ours - oracle) < 1e-6


class TestTrainingStep:
    def _setup(self):
        from flowseg.model import ModelConfig, build_model

        cfg = ModelConfig(
            base_filters=4, depth=2, groupnorm_groups=4, time_embed_dim=8,
            mlp_hidden_dim=16, in_channels=2,
        )
        model = build_model(cfg, seed=11)
        image = torch.rand(16, 16)
        mask = (torch.rand(16, 16) > 0.8).float()
        return model, image, mask

    def test_deterministic_given_seed(self):
        model, image, mask = self._setup()
        l1, g1 = training_step(model, image, mask, seed=99, weights=LossWeights())
        l2, g2 = training_step(model, image, mask, seed=99, weights=LossWeights())
        assert l1 == l2
        for k in g1:
            assert torch.equal(g1[k], g2[k])

    def test_draw_excludes_t_equal_one(self):
        for seed in range(100):
            t, _ = draw_training_inputs(4, 4, seed)
            assert 0.0 <= t < 1.0

    def test_loss_decreases_over_descent(self):
        # 50 plain gradient-descent steps on one fixed sample
        model, image, mask = self._setup()
        weights = LossWeights()
        t_eval, x0_eval = draw_training_inputs(16, 16, derive_seed("descent-eval"))
        with torch.no_grad():
            initial = float(flow_training_loss(model, image, mask, t_eval, x0_eval, weights))
        for step in range(50):
            _, grads = training_step(model, image, mask, seed=derive_seed("d", step), weights=weights)
            with torch.no_grad():
                for name, p in model.named_parameters():
                    p -= 0.01 * grads[name]
        with torch.no_grad():
            final = float(flow_training_loss(model, image, mask, t_eval, x0_eval, weights))
        assert final < initial

    def test_aux_weight_adds_field_loss(self):
        model, image, mask = self._setup()
        t, x0 = draw_training_inputs(16, 16, 55)
        base = float(flow_training_loss(model, image, mask, t, x0, LossWeights(), 0.0).detach())
        with_aux = float(
            flow_training_loss(model, image, mask, t, x0, LossWeights(), 0.5).detach()
        )
        assert with_aux > base

    def test_zero_aux_objective_is_exactly_wbce(self):
        from flowseg.model import forward_mtflow

        model, image, mask = self._setup()
        t, x0 = draw_training_inputs(16, 16, 77)
        weights = LossWeights()
        with torch.no_grad():
            composed = flow_training_loss(model, image, mask, t, x0, weights, 0.0)
            x_t = interpolate(x0, mask, t)
            v = forward_mtflow(model, image, x_t, t)
            manual = wbce_loss(mask, reconstruct_train(x_t, t, v), weights)
        assert float(composed) == float(manual)

    def test_rollout_one_equals_single_step(self):
        from flowseg.flow import rollout_reconstruct
        from flowseg.model import forward_mtflow

        model, image, mask = self._setup()
        t, x0 = draw_training_inputs(16, 16, 88)
        x_t = interpolate(x0, mask, t)
        with torch.no_grad():
            via_rollout = rollout_reconstruct(model, image, x_t, t, steps=1)
            v = forward_mtflow(model, image, x_t, t)
            single = reconstruct_train(x_t, t, v)
        torch.testing.assert_close(via_rollout, single)

    def test_rollout_training_loss_differentiable(self):
        model, image, mask = self._setup()
        loss, grads = training_step(
            model, image, mask, seed=5, weights=LossWeights(), rollout_steps=3
        )
        assert loss > 0.0
        assert any(float(g.abs().sum()) > 0 for g in grads.values())

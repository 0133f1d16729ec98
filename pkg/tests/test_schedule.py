"""Noise schedule construction, forward noising, and the DDIM update."""

import pytest
import torch

from trajsteer.schedule import add_noise, ddim_step, make_schedule


class TestMakeSchedule:
    def test_invariants_T30(self):
        s = make_schedule(30)
        assert s.T == 30
        assert bool(((s.a > 0) & (s.a < 1)).all())
        assert bool((s.a_bar[1:] < s.a_bar[:-1]).all())
        assert s.alpha_bar(0) == 1.0

    def test_single_step(self):
        s = make_schedule(1)
        assert 0.0 < s.alpha_bar(1) < 1.0

    def test_cumulative_product_oracle(self):
        s = make_schedule(30)
        prod = 1.0
        for t in range(1, 31):
            prod *= float(s.a[t - 1])
            assert abs(prod - s.alpha_bar(t)) < 1e-12

    def test_zero_steps_rejected(self):
        with pytest.raises(ValueError):
            make_schedule(0)


class TestAddNoise:
    def test_zero_noise(self, rng):
        s = make_schedule(10)
        z0 = torch.randn(2, 3, 4, 4, generator=rng, dtype=torch.float64)
        out = add_noise(z0, 4, torch.zeros_like(z0), s)
        assert torch.allclose(out, (s.alpha_bar(4) ** 0.5) * z0)

    def test_zero_signal(self, rng):
        s = make_schedule(10)
        eps = torch.randn(2, 3, 4, 4, generator=rng, dtype=torch.float64)
        out = add_noise(torch.zeros_like(eps), 7, eps, s)
        assert torch.allclose(out, ((1 - s.alpha_bar(7)) ** 0.5) * eps)

    def test_elementwise_scalar_oracle(self, rng):
        s = make_schedule(10)
        z0 = torch.randn(2, 2, 3, 3, generator=rng, dtype=torch.float64)
        eps = torch.randn(2, 2, 3, 3, generator=rng, dtype=torch.float64)
        out = add_noise(z0, 5, eps, s)
        ab = s.alpha_bar(5)
        for idx in [(0, 0, 0, 0), (1, 1, 2, 2), (0, 1, 1, 2)]:
            expected = (ab**0.5) * float(z0[idx]) + ((1 - ab) ** 0.5) * float(eps[idx])
            assert float(out[idx]) == pytest.approx(expected, rel=1e-14)

    def test_shape_and_range_validation(self, rng):
        s = make_schedule(10)
        z0 = torch.zeros(2, 2, 3, 3, dtype=torch.float64)
        with pytest.raises(ValueError, match="shape"):
            add_noise(z0, 3, torch.zeros(2, 2, 3, 4, dtype=torch.float64), s)
        with pytest.raises(ValueError, match="schedule range"):
            add_noise(z0, 11, torch.zeros_like(z0), s)


class TestDdimStep:
    def test_zero_eps_to_clean(self, rng):
        s = make_schedule(10)
        z = torch.randn(2, 2, 3, 3, generator=rng, dtype=torch.float64)
        out = ddim_step(z, torch.zeros_like(z), 5, 0, s)
        assert torch.allclose(out, z / (s.alpha_bar(5) ** 0.5))

    def test_scalar_oracle(self, rng):
        s = make_schedule(10)
        z = torch.randn(1, 2, 2, 2, generator=rng, dtype=torch.float64)
        eps = torch.randn(1, 2, 2, 2, generator=rng, dtype=torch.float64)
        out = ddim_step(z, eps, 6, 3, s)
        ab_t, ab_p = s.alpha_bar(6), s.alpha_bar(3)
        for idx in [(0, 0, 0, 0), (0, 1, 1, 1)]:
            x0 = (float(z[idx]) - ((1 - ab_t) ** 0.5) * float(eps[idx])) / ab_t**0.5
            expected = (ab_p**0.5) * x0 + ((1 - ab_p) ** 0.5) * float(eps[idx])
            assert float(out[idx]) == pytest.approx(expected, rel=1e-14)

    def test_order_validation(self):
        s = make_schedule(10)
        z = torch.zeros(1, 1, 2, 2, dtype=torch.float64)
        with pytest.raises(ValueError):
            ddim_step(z, z, 3, 3, s)
        with pytest.raises(ValueError):
            ddim_step(z, z, 3, -1, s)

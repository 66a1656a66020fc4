import math

import numpy as np
import pytest

from mammovssm.ssm import (
    DiscreteSsm,
    ParameterError,
    SelectiveScan,
    SsmParams,
    build_kernel,
    discretize,
    phi,
    phi_prime,
    scan_kernel,
    scan_recurrent,
    selective_recurrence,
    selective_scan,
)
from mammovssm.tensor import Tensor

from conftest import check_op_gradient, finite_difference, max_rel_error
from oracles import random_lti, zoh_oracle


class TestDiscretize:
    def test_zero_A_series_limit(self):
        d = discretize(SsmParams(A=[0.0], B=[[1.0]], C=[[1.0]], delta=0.1))
        assert d.A_bar[0] == 1.0
        assert d.B_bar[0, 0] == pytest.approx(0.1, abs=1e-15)

    def test_scalar_closed_form(self):
        d = discretize(SsmParams(A=[-1.0], B=[[2.0]], C=[[1.0]], delta=0.5))
        assert d.A_bar[0] == pytest.approx(math.exp(-0.5), abs=1e-12)
        expected = (math.exp(-0.5) - 1) / (-0.5) * (0.5 * 2)
        assert d.B_bar[0, 0] == pytest.approx(expected, abs=1e-12)
        assert d.A_bar[0] == pytest.approx(0.60653, abs=1e-5)
        assert d.B_bar[0, 0] == pytest.approx(0.78694, abs=1e-5)

    def test_diagonal_matches_expm_oracle(self, rng):
        for _ in range(20):
            p = random_lti(rng)
            d = discretize(p)
            E, Bb = zoh_oracle(np.diag(p.A), p.B, p.delta)
            np.testing.assert_allclose(np.diag(d.A_bar), E, atol=1e-10, rtol=0)
            np.testing.assert_allclose(d.B_bar, Bb, atol=1e-10, rtol=0)

    def test_full_matches_expm_oracle(self, rng):
        for _ in range(20):
            p = random_lti(rng, full=True)
            d = discretize(p)
            E, Bb = zoh_oracle(p.A, p.B, p.delta)
            np.testing.assert_allclose(d.A_bar, E, atol=1e-10, rtol=0)
            np.testing.assert_allclose(d.B_bar, Bb, atol=1e-10, rtol=0)

    def test_full_near_singular_uses_series(self):
        A = np.array([[-1e-6, 2e-6], [0.0, -3e-6]])
        B = np.array([[1.0], [2.0]])
        d = discretize(SsmParams(A=A, B=B, C=np.eye(2), delta=0.5))
        # to second order: B_bar = Δ(I + ΔA/2)B
        approx = 0.5 * (np.eye(2) + 0.25 * A) @ B
        np.testing.assert_allclose(d.B_bar, approx, atol=1e-12)

    def test_diagonal_and_full_agree(self, rng):
        p = random_lti(rng)
        d = discretize(p)
        f = discretize(SsmParams(A=np.diag(p.A), B=p.B, C=p.C, delta=p.delta))
        np.testing.assert_allclose(np.diag(d.A_bar), f.A_bar, atol=1e-12)
        np.testing.assert_allclose(d.B_bar, f.B_bar, atol=1e-12)

    @pytest.mark.parametrize("delta", [0.0, -0.1, np.array([0.1, -0.2])])
    def test_nonpositive_delta_rejected(self, delta):
        with pytest.raises(ParameterError):
            discretize(SsmParams(A=[-1.0, -2.0], B=np.ones((2, 1)), C=np.ones((1, 2)), delta=delta))

    @pytest.mark.parametrize("a", [-2.0, -0.3, 0.7])
    def test_scalar_zoh_exactness(self, a):
        b, u, delta = 1.5, 0.8, 0.2
        d = discretize(SsmParams(A=[a], B=[[b]], C=[[1.0]], delta=delta))
        y = scan_recurrent(d, np.full((25, 1), u))[:, 0]
        t = delta * np.arange(1, 26)
        closed = (np.exp(a * t) - 1.0) * b * u / a
        np.testing.assert_allclose(y, closed, atol=1e-9, rtol=0)

    def test_phi_series_continuity(self):
        z = np.array([-1.0001e-4, -0.9999e-4, 0.9999e-4, 1.0001e-4])
        np.testing.assert_allclose(phi(z), np.expm1(z) / z, rtol=1e-14)

    def test_phi_prime_matches_finite_difference(self):
        z = np.array([-3.0, -0.5, -0.011, -0.009, -1e-5, 0.0, 1e-3, 0.4])
        h = 1e-6
        fd = (phi(z + h) - phi(z - h)) / (2 * h)
        np.testing.assert_allclose(phi_prime(z), fd, atol=1e-8)

    def test_stable_magnitude(self, rng):
        for _ in range(50):
            d = discretize(random_lti(rng))
            assert np.all(np.abs(d.A_bar) < 1)


class TestScans:
    def test_geometric_recurrence(self):
        d = DiscreteSsm(np.array([0.5]), np.array([[1.0]]), np.array([[1.0]]))
        np.testing.assert_allclose(scan_recurrent(d, np.array([[1.0], [0.0], [0.0]]))[:, 0], [1, 0.5, 0.25])

    def test_zero_input(self, rng):
        d = discretize(random_lti(rng))
        assert np.all(scan_recurrent(d, np.zeros((10, 2))) == 0)

    def test_channel_mismatch(self, rng):
        d = discretize(random_lti(rng))
        with pytest.raises(ValueError):
            scan_recurrent(d, np.zeros((5, 3)))
        with pytest.raises(ValueError):
            scan_kernel(d, np.zeros((5, 3)))

    def test_kernel_nilpotent(self):
        d = DiscreteSsm(np.array([0.0, 0.0]), np.array([[1.0], [2.0]]), np.array([[1.0, 1.0]]))
        K = build_kernel(d, 5)
        assert K[0, 0, 0] == 3.0
        assert np.all(K[1:] == 0)

    def test_kernel_hand_arithmetic(self):
        d = DiscreteSsm(np.array([0.5]), np.array([[1.0]]), np.array([[3.0]]))
        np.testing.assert_allclose(build_kernel(d, 3)[:, 0, 0], [3.0, 1.5, 0.75])

    @pytest.mark.parametrize("full", [False, True])
    def test_kernel_matches_matrix_powers(self, rng, full):
        d = discretize(random_lti(rng, full=full))
        Abar = np.diag(d.A_bar) if d.diagonal else d.A_bar
        K = build_kernel(d, 16)
        for i in range(16):
            np.testing.assert_allclose(K[i], d.C @ np.linalg.matrix_power(Abar, i) @ d.B_bar, atol=1e-10, rtol=0)

    def test_impulse_response_is_kernel(self, rng):
        d = discretize(random_lti(rng, d_in=1))
        x = np.zeros((12, 1))
        x[0] = 1.0
        np.testing.assert_allclose(scan_kernel(d, x), build_kernel(d, 12)[:, :, 0], atol=1e-12)

    def test_single_step(self, rng):
        d = discretize(random_lti(rng))
        x = rng.standard_normal((1, 2))
        np.testing.assert_allclose(scan_kernel(d, x)[0], d.C @ d.B_bar @ x[0], atol=1e-12)
        np.testing.assert_allclose(scan_recurrent(d, x)[0], d.C @ d.B_bar @ x[0], atol=1e-12)

    @pytest.mark.parametrize("L", [1, 2, 7, 32, 129])
    @pytest.mark.parametrize("full", [False, True])
    def test_mode_equivalence(self, L, full):
        rng = np.random.default_rng(L + 1000 * full)
        for _ in range(5):
            d = discretize(random_lti(rng, full=full))
            x = rng.standard_normal((L, 2))
            np.testing.assert_allclose(scan_recurrent(d, x), scan_kernel(d, x), atol=1e-10, rtol=0)

    def test_batched_input(self, rng):
        d = discretize(random_lti(rng))
        x = rng.standard_normal((3, 9, 2))
        out = scan_recurrent(d, x)
        for i in range(3):
            np.testing.assert_allclose(out[i], scan_recurrent(d, x[i]), atol=1e-14)
        np.testing.assert_allclose(scan_kernel(d, x), out, atol=1e-10)

    def test_linearity(self, rng):
        d = discretize(random_lti(rng))
        x1, x2 = rng.standard_normal((2, 40, 2))
        a, b = 1.7, -0.4
        for scan in (scan_recurrent, scan_kernel):
            np.testing.assert_allclose(scan(d, a * x1 + b * x2), a * scan(d, x1) + b * scan(d, x2), atol=1e-8)

    def test_bounded_output_long_sequence(self, rng):
        for _ in range(3):
            p = random_lti(rng)
            d = discretize(p)
            x = rng.uniform(-1, 1, size=(10_000, 2))
            y = scan_recurrent(d, x)
            # |y| <= ||C|| * ||B_bar|| / (1 - max|A_bar|) for |x| <= 1
            bound = np.abs(d.C).sum(axis=1).max() * np.abs(d.B_bar).sum(axis=1).max() / (1 - np.abs(d.A_bar).max())
            assert np.all(np.isfinite(y))
            assert np.abs(y).max() <= bound


def selective_as_lti(sp: SelectiveScan):
    """The block-diagonal LTI system a selective scan collapses to when its projections are constant."""
    d, n, r = sp.d, sp.state, sp.dt_rank
    bias = sp.x_proj.bias.data.astype(float)
    delta = np.logaddexp(0, sp.dt_proj.weight.data @ bias[:r] + sp.dt_proj.bias.data)
    Bc, Cc = bias[r:r + n], bias[r + n:]
    A = -np.logaddexp(0, sp.a_raw.data.astype(float))
    Bfull = np.zeros((d * n, d))
    Cfull = np.zeros((d, d * n))
    for c in range(d):
        Bfull[c * n:(c + 1) * n, c] = Bc
        Cfull[c, c * n:(c + 1) * n] = Cc
    return SsmParams(A=A.reshape(-1), B=Bfull, C=Cfull, delta=np.repeat(delta, n))


class TestSelective:
    def make(self, rng, d=3, n=4):
        return SelectiveScan(d, n, rng, dtype=np.float64)

    def test_frozen_projections_reduce_to_lti(self, rng):
        sp = self.make(rng)
        sp.x_proj.weight.data[:] = 0.0
        sp.x_proj.bias.data = rng.standard_normal(sp.x_proj.bias.shape)
        x = rng.standard_normal((20, 3))
        y = selective_scan(sp, x).data
        expected = scan_recurrent(discretize(selective_as_lti(sp)), x)
        np.testing.assert_allclose(y, expected, atol=1e-10, rtol=0)

    def test_zero_input_zero_bias(self, rng):
        sp = self.make(rng)
        sp.x_proj.bias.data[:] = 0.0
        assert np.all(selective_scan(sp, np.zeros((6, 3))).data == 0)

    def test_single_step(self, rng):
        sp = self.make(rng)
        x = rng.standard_normal((1, 3))
        delta, Bt, Ct = (t.data[0] for t in sp.projections(Tensor(x)))
        A = -np.logaddexp(0, sp.a_raw.data)
        z = delta[:, None] * A
        expected = ((np.expm1(z) / z) * delta[:, None] * Bt[None, :] * x[0][:, None]) @ Ct
        np.testing.assert_allclose(selective_scan(sp, x).data[0], expected, atol=1e-12)

    def test_batched_matches_individual(self, rng):
        sp = self.make(rng)
        x = rng.standard_normal((4, 7, 3))
        out = selective_scan(sp, x).data
        for i in range(4):
            np.testing.assert_allclose(out[i], selective_scan(sp, x[i]).data, atol=1e-13)

    def test_delta_positive(self, rng):
        sp = self.make(rng)
        delta, _, _ = sp.projections(Tensor(rng.standard_normal((2, 5, 3)) * 30))
        assert np.all(delta.data > 0)

    def test_recurrence_gradient(self):
        def op(u, delta_raw, A_raw, Bt, Ct):
            from mammovssm.tensor import ops
            return selective_recurrence(u, ops.softplus(delta_raw), -ops.softplus(A_raw), Bt, Ct)

        assert check_op_gradient(op, (2, 6, 3), (2, 6, 3), (3, 4), (2, 6, 4), (2, 6, 4)) < 1e-6

    def test_recurrence_gradient_near_zero_exponent(self):
        # δ·A around 1e-4 .. 1e-2 exercises both series branches
        def op(u, Bt, Ct):
            delta = Tensor(np.full((1, 5, 2), 1e-3))
            A = Tensor(np.array([[-0.05, -5.0], [-1.0, -0.2]]))
            return selective_recurrence(u, delta, A, Bt, Ct)

        assert check_op_gradient(op, (1, 5, 2), (1, 5, 2), (1, 5, 2)) < 1e-6

    def test_module_parameter_gradients(self, rng):
        sp = self.make(rng, d=2, n=3)
        x = rng.standard_normal((2, 5, 2))
        w = rng.standard_normal((2, 5, 2))
        params = sp.parameters()

        def f():
            return float((selective_scan(sp, x).data * w).sum())

        out = selective_scan(sp, Tensor(x))
        (out * Tensor(w)).sum().backward()
        numeric = finite_difference(f, [p.data for p in params])
        for p, g in zip(params, numeric):
            assert max_rel_error(p.grad, g, floor=1e-4) < 1e-6

"""Closed-form MSE expressions, large-array limits and the bound evaluators."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semiblind.bounds import (
    UnsupportedCaseError,
    bcrb_deterministic_iid,
    mse_closed_forms,
    projected_filter_iid,
    subspace_error_mse,
    theorem1_asymptotics,
    theorem2_bound,
)
from semiblind.channels import crandn
from semiblind.estimators import GaussianPrior, lmmse_projected
from semiblind.subspace import perfect_subspace


class TestClosedForms:
    def test_reference_point(self):
        t = mse_closed_forms(64, 8, 1.0)
        assert t.as_dict() == pytest.approx({"plain": 32.0, "ml": 8.0, "proj": 64 / 9, "sub": 18.0}, rel=1e-14)
        assert t.nmse(64) == pytest.approx({"plain": 0.5, "ml": 0.125, "proj": 1 / 9, "sub": 0.28125}, rel=1e-14)

    def test_noiseless(self):
        assert all(v == 0 for v in mse_closed_forms(16, 4, 0.0).as_dict().values())
        small = mse_closed_forms(16, 4, 1e-12).as_dict()
        assert max(small.values()) < 1e-10

    def test_full_subspace(self):
        t = mse_closed_forms(12, 12, 0.7)
        assert abs(t.mse_proj - t.mse_plain) < 1e-14
        assert abs(t.mse_sub - t.mse_plain) < 1e-13

    def test_general_spectrum(self):
        rho = np.array([2.0, 1.0, 0.5, 0.5])
        with pytest.raises(UnsupportedCaseError):
            mse_closed_forms(4, 2, 1.0, eigenvalues=rho)
        t = mse_closed_forms(4, 2, 1.0, eigenvalues=rho, include_sub=False)
        assert np.isnan(t.mse_sub)
        assert t.mse_plain == pytest.approx(2 / 3 + 1 / 2 + 2 * 0.5 / 1.5)
        assert t.mse_proj == pytest.approx(2 / 5 + 1 / 3 + 2 * 0.5 / 2)

    def test_invalid(self):
        with pytest.raises(ValueError):
            mse_closed_forms(4, 5, 1.0)
        with pytest.raises(ValueError):
            mse_closed_forms(4, 2, -1.0)

    @settings(max_examples=300, deadline=None)
    @given(st.integers(1, 64), st.data(), st.floats(1e-4, 1e4), st.integers(0, 2**32 - 1))
    def test_projected_is_smallest(self, M, data, sigma2, seed):
        J = data.draw(st.integers(1, M))
        rho = np.random.default_rng(seed).exponential(size=M)
        t = mse_closed_forms(M, J, sigma2, eigenvalues=rho, include_sub=False)
        tol = 1e-12 * max(t.mse_plain, t.mse_ml)
        assert t.mse_proj <= t.mse_plain + tol
        assert t.mse_proj <= t.mse_ml + tol
        iid = mse_closed_forms(M, J, sigma2)
        assert iid.mse_proj <= iid.mse_sub * (1 + 1e-12)

    def test_projected_filter_matches_lmmse(self, rng):
        M, J, s2 = 10, 3, 0.8
        V = perfect_subspace(crandn(rng, M, J)).basis
        y = crandn(rng, M)
        ref = projected_filter_iid(M, J, s2) @ (V @ (V.conj().T @ y))
        np.testing.assert_allclose(lmmse_projected(y, V, GaussianPrior(np.eye(M)), s2), ref, atol=1e-13)


class TestTheorem1:
    def test_values(self):
        assert theorem1_asymptotics(8, 1.0, 0.32) == pytest.approx((8.0, 10.56))
        with pytest.raises(ValueError):
            theorem1_asymptotics(8, 1.0, 0.0)

    def test_projected_mse_converges_monotonically(self):
        J, s2 = 8, 1.0
        limit, _ = theorem1_asymptotics(J, s2, 0.32)
        Ms = 2 ** np.arange(3, 16)
        vals = np.array([mse_closed_forms(int(M), J, s2).mse_proj for M in Ms])
        assert np.all(np.diff(vals) > 0)
        assert np.all(vals < limit)
        # the gap decays as J^2 sigma^4 / M
        assert (limit - vals[-1]) * Ms[-1] == pytest.approx(J**2 * s2**2, rel=1e-2)


class TestBcrb:
    def test_scalar_oracle(self):
        for s2 in (0.1, 1.0, 7.0):
            block, tr = bcrb_deterministic_iid(np.array([[1.0]]), np.diag([1.0, 0.0]), s2, 1)
            np.testing.assert_allclose(block, s2 / (1 + s2) * np.eye(2), atol=1e-15)
            assert tr == pytest.approx(2 * s2 / (1 + s2))

    def test_high_noise_limit(self, rng):
        M, J, N = 4, 2, 6
        X = crandn(rng, J, N)
        P_H = perfect_subspace(crandn(rng, M, J)).projector
        _, tr = bcrb_deterministic_iid(X, P_H, 1e8, J)
        assert abs(tr - M) < 1e-6

    def test_double_loop_oracle(self, rng):
        M, J, N, Np, s2 = 3, 2, 5, 2, 0.6
        X = crandn(rng, J, N)
        P = X[:, :Np]
        P_H = perfect_subspace(crandn(rng, M, J)).projector
        P_perp = np.eye(M) - P_H
        info = np.zeros((J * M, J * M), dtype=complex)
        for i in range(J):
            for j in range(J):
                gx = sum(np.conj(X[i, n]) * X[j, n] for n in range(N))
                gp = sum(np.conj(P[i, n]) * P[j, n] for n in range(Np))
                info[i * M : (i + 1) * M, j * M : (j + 1) * M] = gx * P_perp + gp * P_H
        ref = s2 * np.linalg.inv(info + s2 * np.eye(J * M))
        block, tr = bcrb_deterministic_iid(X, P_H, s2, Np)
        np.testing.assert_allclose(block, ref[:M, :M], atol=1e-13)
        assert tr == pytest.approx(np.trace(ref[:M, :M]).real)

    def test_invalid(self):
        with pytest.raises(ValueError):
            bcrb_deterministic_iid(np.ones((1, 2)), np.eye(2), 0.0, 1)
        with pytest.raises(ValueError):
            bcrb_deterministic_iid(np.ones((1, 2)), np.eye(2), 1.0, 3)


class TestSubspaceErrorMse:
    def test_zero_when_exact(self, rng):
        V = perfect_subspace(crandn(rng, 6, 2)).basis
        assert subspace_error_mse(np.eye(6), V, V, crandn(rng, 6), 0.5) < 1e-28

    def test_monte_carlo(self):
        rng = np.random.default_rng(1)
        M, J, s2 = 6, 2, 0.5
        V = perfect_subspace(crandn(rng, M, J)).basis
        Vh = perfect_subspace(V + 0.3 * crandn(rng, M, J)).basis
        W = crandn(rng, M, M) / 3
        h = crandn(rng, M)
        D = Vh @ Vh.conj().T - V @ V.conj().T
        n = np.sqrt(s2) * crandn(rng, M, 200_000)
        mc = np.mean(np.sum(np.abs(W @ D @ (h[:, None] + n)) ** 2, axis=0))
        assert subspace_error_mse(W, Vh, V, h, s2) == pytest.approx(mc, rel=0.01)


class TestTheorem2:
    def test_hand_computed(self):
        H = np.diag([2.0, 1.0]).astype(complex)
        H = np.vstack([H, np.zeros((1, 2))])
        # M = 3, J = 2: lambda = (4, 1), tr(HH^H)/J = 2.5, s = V^H h_0 = (2, 0)
        s2, N, eps, W = 0.5, 10, 1.0, 1.0
        k2 = s2 * (s2 + 2.5 + 3 * s2)
        total = (4 + 2 * s2) / 16 + (4 + 2 * s2) / 1
        ref = 1 - 4 * k2 * 1 * 1 * total / (4 * N * eps)
        assert theorem2_bound(H, s2, N, eps, W) == pytest.approx(ref, rel=1e-14)
        total_sig = (4 + 2 * s2) / 4 + (4 + 2 * s2) / 0.25
        ref_sig = 1 - 4 * k2 * total_sig / (4 * N * eps)
        assert theorem2_bound(H, s2, N, eps, W, eigenvalue_convention="signal") == pytest.approx(ref_sig, rel=1e-14)

    def test_large_sample_limit(self, rng):
        H = crandn(rng, 16, 4)
        assert 1 - theorem2_bound(H, 1.0, 10**12, 1.0, np.eye(16)) < 1e-6

    def test_monotone(self, rng):
        H = crandn(rng, 16, 4)
        W = projected_filter_iid(16, 4, 1.0)
        by_n = [theorem2_bound(H, 1.0, n, 1.0, W) for n in (10, 100, 1000, 10_000)]
        by_eps = [theorem2_bound(H, 1.0, 100, e, W) for e in (0.01, 0.1, 1, 10)]
        assert np.all(np.diff(by_n) > 0) and np.all(np.diff(by_eps) > 0)
        for conv in ("gram", "signal"):
            assert theorem2_bound(H, 1.0, 100, 1.0, W, eigenvalue_convention=conv) < 1

    def test_signal_convention_is_weaker(self, rng):
        H = crandn(rng, 16, 4)
        assert theorem2_bound(H, 1.0, 500, 1.0, 1.0, eigenvalue_convention="signal") < theorem2_bound(H, 1.0, 500, 1.0, 1.0)

    def test_errors(self, rng):
        h = crandn(rng, 6, 1)
        with pytest.raises(np.linalg.LinAlgError):
            theorem2_bound(np.hstack([h, 2 * h]), 1.0, 100, 1.0, 1.0)
        H = crandn(rng, 6, 2)
        with pytest.raises(ValueError):
            theorem2_bound(H, 1.0, 100, 0.0, 1.0)
        with pytest.raises(ValueError):
            theorem2_bound(H, 1.0, 0, 1.0, 1.0)
        with pytest.raises(ValueError):
            theorem2_bound(H, 1.0, 10, 1.0, 1.0, eigenvalue_convention="other")

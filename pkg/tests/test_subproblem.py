import numpy as np
import pytest
from scipy.optimize import nnls

from conftest import random_coefficients
from maxmin_ic.linalg import crandn
from maxmin_ic.oracles import projected_subgradient_qcqp
from maxmin_ic.subproblem import (MinorizerCoefficients, embed_real, kkt_residual,
                                  lift, solve)


def scalar_coeffs(c, b, g, p):
    return MinorizerCoefficients(C=np.array([float(c)]),
                                 b=[np.array([complex(b)])],
                                 K=[[np.array([[complex(g)]])]],
                                 k=(1,), p=np.array([float(p)]))


# ---------------------------------------------------------------------------
# real embedding

def test_embed_identity_preserved():
    co = MinorizerCoefficients(C=np.array([0.0]), b=[np.zeros(2, dtype=complex)],
                               K=[[np.eye(2, dtype=complex)]], k=(1,),
                               p=np.array([1.0]))
    emb = embed_real(co)
    assert np.array_equal(emb.Ghat[0][0], np.eye(4))
    x = np.array([0.3 + 0.4j, -0.1 + 0.2j])
    xi = np.concatenate([x.real, x.imag])
    assert abs(np.vdot(x, x).real - xi @ xi) < 1e-15


def test_embed_scalar_imaginary_linear_term():
    co = scalar_coeffs(0.0, 1j, 1.0, 1.0)
    emb = embed_real(co)
    assert np.allclose(emb.beta[0], [0.0, 1.0])
    # 2 Re{b^H x} at x = i equals 2 beta^T xi at xi = [0, 1]
    x = np.array([1j])
    xi = np.array([0.0, 1.0])
    assert abs(2 * np.vdot(co.b[0], x).real - 2.0) < 1e-15
    assert abs(2 * emb.beta[0] @ xi - 2.0) < 1e-15


def test_embed_quadratic_form_identity():
    rng = np.random.default_rng(0)
    for _ in range(10):
        m, k = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        a = crandn(rng, (m, m))
        co = MinorizerCoefficients(C=np.array([0.0]), b=[crandn(rng, (m * k,))],
                                   K=[[a @ a.conj().T]], k=(k,), p=np.array([1.0]))
        emb = embed_real(co)
        x = crandn(rng, (m * k,))
        xi = np.concatenate([x.real, x.imag])
        lhs = np.vdot(x, co.G(0, 0) @ x).real
        assert abs(lhs - xi @ emb.Ghat[0][0] @ xi) < 1e-12 * (1 + abs(lhs))
        assert abs(2 * np.vdot(co.b[0], x).real - 2 * emb.beta[0] @ xi) < 1e-12


def test_lift_spectrum_doubled():
    rng = np.random.default_rng(1)
    a = crandn(rng, (3, 3))
    g = a @ a.conj().T
    w_c = np.linalg.eigvalsh(g)
    w_r = np.linalg.eigvalsh(lift(g))
    assert np.allclose(np.sort(np.repeat(w_c, 2)), np.sort(w_r), atol=1e-10)


# ---------------------------------------------------------------------------
# solve

def test_solve_active_boundary_case():
    # maximize 2x - x^2 over |x| <= 1: x* = 1, t* = 1
    sol = solve(scalar_coeffs(0.0, -1.0, 1.0, 1.0))
    assert sol.converged
    assert abs(sol.x[0][0] - 1.0) < 1e-3
    assert abs(sol.t - 1.0) < 1e-6
    assert sol.kkt_residual <= 1e-7


def test_solve_interior_zero_case():
    sol = solve(scalar_coeffs(0.0, 0.0, 1.0, 1.0))
    assert sol.converged
    assert abs(sol.x[0][0]) < 1e-6
    assert abs(sol.t) < 1e-9
    assert sol.kkt_residual <= 1e-7


def test_solution_feasible_and_above_baseline():
    rng = np.random.default_rng(2)
    for _ in range(15):
        co = random_coefficients(rng, n=int(rng.integers(1, 4)),
                                 m=int(rng.integers(1, 3)),
                                 k=int(rng.integers(1, 3)),
                                 c_scale=float(rng.uniform(0.1, 5)))
        sol = solve(co)
        assert sol.t >= -np.max(co.C) - 1e-9
        for j in range(co.n_users):
            assert np.vdot(sol.x[j], sol.x[j]).real <= co.p[j] + 1e-7
        for i in range(co.n_users):
            val = co.C[i] + 2 * np.vdot(co.b[i], sol.x[i]).real
            for j in range(co.n_users):
                val += np.vdot(sol.x[j], co.G(j, i) @ sol.x[j]).real
            assert val <= -sol.t + 1e-7


def test_solve_deterministic_bitwise():
    rng = np.random.default_rng(3)
    co = random_coefficients(rng, n=2, m=2, k=2)
    a = solve(co)
    b = solve(co)
    assert a.t == b.t and a.kkt_residual == b.kkt_residual
    for xa, xb in zip(a.x, b.x):
        assert np.array_equal(xa, xb)


def test_convexity_audit_rejects_indefinite():
    co = scalar_coeffs(0.0, 0.0, 1.0, 1.0)
    bad = MinorizerCoefficients(C=co.C, b=co.b, K=[[np.array([[-1e-6 + 0j]])]],
                                k=co.k, p=co.p)
    with pytest.raises(ValueError, match="convex"):
        solve(bad)


def test_nan_inputs_rejected():
    co = scalar_coeffs(np.nan, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        solve(co)


def test_zero_power_user_is_eliminated():
    rng = np.random.default_rng(4)
    co = random_coefficients(rng, n=2, m=2, k=1)
    co = MinorizerCoefficients(C=co.C, b=co.b, K=co.K, k=co.k,
                               p=np.array([co.p[0], 0.0]))
    sol = solve(co)
    assert np.all(sol.x[1] == 0)
    assert sol.converged


# ---------------------------------------------------------------------------
# kkt_residual

def test_kkt_exact_multipliers_zero_residual():
    co = scalar_coeffs(0.0, -1.0, 1.0, 1.0)
    r = kkt_residual(co, [np.array([1.0 + 0j])], 1.0,
                     np.array([1.0]), np.array([0.0]))
    assert r <= 1e-9


def test_kkt_perturbed_point_detected():
    co = scalar_coeffs(0.0, -1.0, 1.0, 1.0)
    r = kkt_residual(co, [np.array([1.1 + 0j])], 1.0,
                     np.array([1.0]), np.array([0.0]))
    assert r > 1e-3


def _fit_multipliers_from_embedding(co, x, t):
    """Test-side dual fit built from the materialized real embedding."""
    emb = embed_real(co)
    n = co.n_users
    dims = [co.block_dim(j) for j in range(n)]
    off = np.concatenate([[0], np.cumsum([2 * d for d in dims])])
    total = off[-1]
    cols = []
    for i in range(n):
        g = np.zeros(total + 1)
        for j in range(n):
            xi = np.concatenate([x[j].real, x[j].imag])
            blk = 2.0 * emb.Ghat[j][i] @ xi
            if j == i:
                blk = blk + 2.0 * emb.beta[i]
            g[off[j]:off[j + 1]] = blk
        g[-1] = 1.0
        cols.append(g)
    for j in range(n):
        g = np.zeros(total + 1)
        g[off[j]:off[j + 1]] = 2.0 * np.concatenate([x[j].real, x[j].imag])
        cols.append(g)
    mat = np.column_stack(cols)
    rhs = np.zeros(total + 1)
    rhs[-1] = 1.0
    z, _ = nnls(mat, rhs)
    return z[:n], z[n:]


def test_kkt_residual_small_at_oracle_solution():
    rng = np.random.default_rng(5)
    co = random_coefficients(rng, n=2, m=2, k=1)
    x, t = projected_subgradient_qcqp(co, iters=20000, gap_tol=1e-8)
    lam, nu = _fit_multipliers_from_embedding(co, x, t)
    assert kkt_residual(co, x, t, lam, nu) <= 1e-4


# ---------------------------------------------------------------------------
# cross-check against the independent first-order solver

def test_solver_matches_subgradient_oracle():
    rng = np.random.default_rng(6)
    for _ in range(5):
        co = random_coefficients(rng, n=2, m=1, k=1, c_scale=2.0)
        sol = solve(co)
        _, t_oracle = projected_subgradient_qcqp(co, iters=50000, gap_tol=1e-6)
        assert abs(sol.t - t_oracle) <= 1e-4 * (1 + abs(sol.t))

import numpy as np
import pytest

from conftest import cov_of, random_instance, random_precoders, scalar_instance
from maxmin_ic.linalg import crandn, hermitian_part, unvec, vec
from maxmin_ic.mm import (build_B, build_F, extract_precoders, hermitian_sqrt,
                          minorizer_coefficients, minorizer_value,
                          mm_design_covariance, mm_design_precoder_fixed_d,
                          stationarity_residual)
from maxmin_ic.oracles import grid_search_scalar_maxmin, waterfilling_single_user
from maxmin_ic.rates import min_rate, rate_from_cov, rate_lmmse, rate_vector
from maxmin_ic.system import CovarianceSet, PrecoderSet, SystemConfig, generate_channels


def chol_logdet_top(inst, X, i):
    """Reference route: logdet of the top-left block of B_i^-1."""
    block = build_B(inst, X, i)
    binv = np.linalg.inv(block.B)
    return float(np.linalg.slogdet(binv[:block.k, :block.k])[1])


def coefficients_at(inst, X):
    blocks = [build_B(inst, X, i) for i in range(inst.config.N)]
    F = [build_F(b) for b in blocks]
    return blocks, F, minorizer_coefficients(inst, blocks, F)


# ---------------------------------------------------------------------------
# hermitian_sqrt

def test_sqrt_identity():
    assert np.allclose(hermitian_sqrt(np.eye(3)), np.eye(3))


def test_sqrt_diagonal_with_null():
    assert np.allclose(hermitian_sqrt(np.diag([4.0, 0.0])), np.diag([2.0, 0.0]))


def test_sqrt_reconstructs_random_psd():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a = crandn(rng, (4, 4))
        q = a @ a.conj().T
        vt = hermitian_sqrt(q)
        assert np.linalg.norm(vt @ vt.conj().T - q) <= 1e-10 * np.linalg.norm(q)


def test_sqrt_rejects_non_hermitian():
    with pytest.raises(ValueError):
        hermitian_sqrt(np.array([[1.0, 1.0], [0.0, 1.0]]))


# ---------------------------------------------------------------------------
# lifted blocks

def test_build_B_zero_factors_block_diagonal():
    rng = np.random.default_rng(1)
    inst = random_instance(rng, n_max=2, dim_max=3)
    X = [np.zeros((m, m), dtype=complex) for m in inst.config.M]
    for i in range(inst.config.N):
        block = build_B(inst, X, i)
        m = inst.config.M[i]
        assert np.allclose(block.B[:m, :m], np.eye(m))
        assert np.allclose(block.B[m:, m:], inst.Gamma[i])
        assert np.allclose(block.B[:m, m:], 0)


def test_build_B_scalar_example():
    inst = scalar_instance([[1.0]], [1.0], [1.0])
    block = build_B(inst, [np.array([[1.0 + 0j]])], 0)
    assert np.allclose(block.B, [[1, 1], [1, 2]])
    assert np.min(np.linalg.eigvalsh(block.B)) > 0


def test_build_B_positive_definite_and_prop1_identity():
    rng = np.random.default_rng(2)
    for _ in range(10):
        inst = random_instance(rng, n_max=3, dim_max=4)
        pre = random_precoders(rng, inst, power_frac=0.9)
        cov = cov_of(pre)
        X = [hermitian_sqrt(q) for q in cov.Q]
        for i in range(inst.config.N):
            block = build_B(inst, X, i)
            assert np.min(np.linalg.eigvalsh(block.B)) > 0
            lhs = chol_logdet_top(inst, X, i)
            rhs = rate_from_cov(inst, cov, i)
            assert abs(lhs - rhs) <= 1e-9 * (1 + abs(rhs))


def test_build_B_rejects_indefinite_noise():
    inst = scalar_instance([[1.0]], [1.0], [1.0])
    with pytest.raises(RuntimeError):
        build_B(inst, [np.array([[1.0 + 0j]])], 0, gamma=np.array([[-1.0 + 0j]]))


# ---------------------------------------------------------------------------
# curvature matrix F

def test_build_F_identity_block():
    from maxmin_ic.mm import LiftedBlock
    f = build_F(LiftedBlock(B=np.eye(4, dtype=complex), k=2))
    want = np.zeros((4, 4))
    want[:2, :2] = np.eye(2)
    assert np.allclose(f, want, atol=1e-12)


def test_build_F_noise_block_invisible_at_zero():
    rng = np.random.default_rng(3)
    inst = random_instance(rng, n_max=1, dim_max=3)
    X = [np.zeros((m, m), dtype=complex) for m in inst.config.M]
    block = build_B(inst, X, 0)
    f = build_F(block)
    m = inst.config.M[0]
    assert np.allclose(f[:m, :m], np.eye(m), atol=1e-12)
    assert np.allclose(f[m:, :], 0, atol=1e-12)
    assert np.allclose(f[:, m:], 0, atol=1e-12)


def test_build_F_matches_finite_difference_gradient():
    # central differences of X -> logdet(U^H X^-1 U) along Hermitian directions
    rng = np.random.default_rng(4)
    from maxmin_ic.mm import LiftedBlock
    for _ in range(5):
        n, k = 5, 2
        a = crandn(rng, (n, n))
        bmat = a @ a.conj().T + n * np.eye(n)
        block = LiftedBlock(B=bmat, k=k)
        f = build_F(block)

        def fun(x):
            xinv = np.linalg.inv(x)
            return float(np.linalg.slogdet(xinv[:k, :k])[1])

        for _ in range(6):
            d = hermitian_part(crandn(rng, (n, n)))
            d /= np.linalg.norm(d)
            h = 1e-5
            num = (fun(bmat + h * d) - fun(bmat - h * d)) / (2 * h)
            ana = -float(np.trace(f @ d).real)
            assert abs(num - ana) <= 1e-5 * (1 + abs(ana))


# ---------------------------------------------------------------------------
# minorizer coefficients

def test_coefficients_zero_point_scalar():
    inst = scalar_instance([[1.0]], [1.0], [1.0])
    X = [np.zeros((1, 1), dtype=complex)]
    _, _, co = coefficients_at(inst, X)
    assert abs(co.C[0]) < 1e-14
    assert np.allclose(co.b[0], 0)
    assert np.allclose(co.K[0][0], 0)
    assert np.allclose(minorizer_value(co, [np.zeros(1, dtype=complex)]), 0)


def test_two_route_surrogate_evaluation():
    # coefficients route equals logdet(U^H Bbar^-1 U) - tr{F (B(x) - Bbar)}
    rng = np.random.default_rng(5)
    for _ in range(8):
        inst = random_instance(rng, n_max=3, dim_max=3)
        pre = random_precoders(rng, inst, power_frac=0.8)
        Xbar = [hermitian_sqrt(q) for q in cov_of(pre).Q]
        blocks, F, co = coefficients_at(inst, Xbar)
        other = random_precoders(rng, inst, power_frac=0.6)
        Xo = [v @ crandn(rng, (v.shape[1], v.shape[0])) for v in other.V]
        Xo = [x * np.sqrt(0.8 * inst.p[i]) / max(np.linalg.norm(x), 1e-12)
              for i, x in enumerate(Xo)]
        g_co = minorizer_value(co, [vec(x) for x in Xo])
        scale = inst.config.log_base.scale
        for i in range(inst.config.N):
            bx = build_B(inst, Xo, i).B
            direct = scale * (chol_logdet_top(inst, Xbar, i)
                              - float(np.trace(F[i] @ (bx - blocks[i].B)).real))
            assert abs(g_co[i] - direct) <= 1e-9 * (1 + abs(direct))


def test_tangency_at_expansion_point():
    rng = np.random.default_rng(6)
    for _ in range(10):
        inst = random_instance(rng, n_max=3, dim_max=4)
        pre = random_precoders(rng, inst, power_frac=float(rng.uniform(0.3, 1)))
        cov = cov_of(pre)
        Xbar = [hermitian_sqrt(q) for q in cov.Q]
        _, _, co = coefficients_at(inst, Xbar)
        g = minorizer_value(co, [vec(x) for x in Xbar])
        r = rate_vector(inst, cov)
        assert np.all(np.abs(g - r) <= 1e-9 * (1 + np.abs(r)))


def test_domination_over_random_points():
    rng = np.random.default_rng(7)
    inst = random_instance(rng, n_max=3, dim_max=3)
    pre = random_precoders(rng, inst, power_frac=0.9)
    Xbar = [hermitian_sqrt(q) for q in cov_of(pre).Q]
    _, _, co = coefficients_at(inst, Xbar)
    for _ in range(100):
        X = []
        for i, m in enumerate(inst.config.M):
            x = crandn(rng, (m, m))
            x *= np.sqrt(inst.p[i] * rng.uniform()) / np.linalg.norm(x)
            X.append(x)
        g = minorizer_value(co, [vec(x) for x in X])
        r = rate_vector(inst, CovarianceSet(
            Q=[hermitian_part(x @ x.conj().T) for x in X]))
        assert np.all(g <= r + 1e-9)


# ---------------------------------------------------------------------------
# design loops

def test_single_user_reaches_waterfilling_capacity():
    cfg = SystemConfig(N=1, M=(3,), L=(3,), snr_db=10, seed=5, log_base="natural")
    inst = generate_channels(cfg)
    _, cap = waterfilling_single_user(inst.H[0][0], inst.Gamma[0], inst.p[0])
    cov, trace = mm_design_covariance(inst, epsilon=1e-6, max_iters=1500, init_seed=1)
    assert trace.converged
    assert abs(min_rate(inst, cov) - cap) < 1e-3


def test_two_user_scalar_matches_grid():
    cfg = SystemConfig(N=2, M=(1, 1), L=(1, 1), snr_db=8, seed=11, log_base="natural")
    inst = generate_channels(cfg)
    _, grid_val = grid_search_scalar_maxmin(inst)
    cov, trace = mm_design_covariance(inst, epsilon=1e-8, max_iters=2000, init_seed=2)
    assert abs(min_rate(inst, cov) - grid_val) < 1e-2


def test_monotone_convergence_small():
    cfg = SystemConfig(N=3, M=(2, 2, 2), L=(2, 2, 2), snr_db=12, seed=3)
    inst = generate_channels(cfg)
    cov, trace = mm_design_covariance(inst, init_seed=0)
    assert trace.converged and trace.iterations <= cfg.max_iters
    assert np.all(np.diff(trace.minrate_history) >= -1e-6)
    # emitted Q re-verifies against the rate evaluator
    assert abs(min_rate(inst, cov) - trace.minrate_history[-1]) < 1e-9
    assert np.all(cov.traces() <= inst.p + 1e-7)


def test_trace_t_matches_surrogate_lower_bound():
    cfg = SystemConfig(N=2, M=(2, 2), L=(2, 2), snr_db=10, seed=6)
    inst = generate_channels(cfg)
    _, trace = mm_design_covariance(inst, init_seed=1)
    # t is a surrogate value, so it never exceeds the achieved min rate
    assert np.all(trace.t_history <= trace.minrate_history + 1e-7)


def test_fixed_d_full_width_coincides_with_covariance_mode():
    cfg = SystemConfig(N=2, M=(2, 2), L=(2, 2), snr_db=10, seed=8)
    inst = generate_channels(cfg)
    cov, tr_cov = mm_design_covariance(inst, init_seed=4)
    pre, tr_fd = mm_design_precoder_fixed_d(inst, (2, 2), init_seed=4)
    assert abs(tr_cov.minrate_history[-1] - tr_fd.minrate_history[-1]) < 1e-6


def test_fixed_d_is_a_restriction():
    cfg = SystemConfig(N=3, M=(3, 3, 3), L=(3, 3, 3), snr_db=12, seed=9)
    inst = generate_channels(cfg)
    cov, _ = mm_design_covariance(inst, init_seed=5)
    pre, tr_fd = mm_design_precoder_fixed_d(inst, 1, init_seed=5)
    fd_cov = CovarianceSet(Q=[v @ v.conj().T for v in pre.V])
    assert min_rate(inst, fd_cov) <= min_rate(inst, cov) + 1e-6
    assert all(v.shape == (3, 1) for v in pre.V)
    assert np.isnan(tr_fd.stationarity_residual)


def test_fixed_d_scalar_matches_grid():
    cfg = SystemConfig(N=2, M=(1, 1), L=(1, 1), snr_db=8, seed=13, log_base="natural")
    inst = generate_channels(cfg)
    _, grid_val = grid_search_scalar_maxmin(inst)
    pre, trace = mm_design_precoder_fixed_d(inst, 1, epsilon=1e-8,
                                            max_iters=2000, init_seed=0)
    assert abs(trace.minrate_history[-1] - grid_val) < 1e-2


def test_fixed_d_validates_stream_lengths():
    cfg = SystemConfig(N=2, M=(2, 2), L=(2, 2), snr_db=10, seed=1)
    inst = generate_channels(cfg)
    with pytest.raises(ValueError):
        mm_design_precoder_fixed_d(inst, (3, 1))


# ---------------------------------------------------------------------------
# precoder extraction

def test_extract_rank_one():
    pre = extract_precoders(CovarianceSet(Q=[np.diag([1.0, 0.0]).astype(complex)]))
    assert pre.d == (1,)
    assert np.allclose(np.abs(pre.V[0]), [[1.0], [0.0]])


def test_extract_identity():
    pre = extract_precoders(CovarianceSet(Q=[np.eye(2, dtype=complex)]))
    assert pre.d == (2,)
    assert np.allclose(pre.V[0] @ pre.V[0].conj().T, np.eye(2), atol=1e-12)


def test_extract_rank_two_preserves_rate():
    rng = np.random.default_rng(8)
    cfg = SystemConfig(N=2, M=(4, 4), L=(4, 4), snr_db=10, seed=21,
                       log_base="natural")
    inst = generate_channels(cfg)
    vs = [crandn(rng, (4, 2)) * np.sqrt(inst.p[i]) / 2 for i in range(2)]
    cov = CovarianceSet(Q=[v @ v.conj().T for v in vs])
    pre = extract_precoders(cov, rel_threshold=1e-8)
    assert pre.d == (2, 2)
    for i in range(2):
        r_q = rate_from_cov(inst, cov, i)
        r_v = rate_lmmse(inst, pre, i)
        assert abs(r_q - r_v) <= 1e-9 * (1 + abs(r_q))


def test_extract_zero_covariance():
    pre = extract_precoders(CovarianceSet(Q=[np.zeros((3, 3), dtype=complex)]))
    assert pre.d == (0,) and pre.V[0].shape == (3, 0)


# ---------------------------------------------------------------------------
# stationarity diagnostic

def test_stationarity_small_at_tight_convergence():
    cfg = SystemConfig(N=2, M=(2, 2), L=(2, 2), snr_db=10, seed=30)
    inst = generate_channels(cfg)
    cov, trace = mm_design_covariance(inst, epsilon=1e-8, max_iters=2000, init_seed=0)
    assert trace.converged
    assert trace.stationarity_residual <= 1e-3


def test_stationarity_positive_at_zero():
    cfg = SystemConfig(N=2, M=(2, 2), L=(2, 2), snr_db=10, seed=31)
    inst = generate_channels(cfg)
    cov0 = CovarianceSet(Q=[np.zeros((2, 2), dtype=complex)] * 2)
    assert stationarity_residual(inst, cov0) > 0


def test_stationarity_small_at_waterfilling_optimum():
    cfg = SystemConfig(N=1, M=(4,), L=(4,), snr_db=12, seed=32, log_base="natural")
    inst = generate_channels(cfg)
    q, _ = waterfilling_single_user(inst.H[0][0], inst.Gamma[0], inst.p[0])
    assert stationarity_residual(inst, CovarianceSet(Q=[q])) <= 1e-3

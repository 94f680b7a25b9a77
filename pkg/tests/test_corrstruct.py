import numpy as np
import pytest

from mnlfa import (
    HYPERSPHERE,
    PARTIAL_CORRELATION,
    angle_map,
    chol_from_angles,
    chol_from_partial_corrs,
    factor_cov,
    factor_cov_batch,
    gamma_from_partial_corrs,
    tanh_map,
)

# Frozen case-table values for partial correlations (0.55, 0.65, 0.75):
# third row of L and the induced marginal correlations.
FIG_PARTIALS = np.array([0.55, 0.65, 0.75])
FIG_L_ROW3 = np.array([0.65, 0.5699506558, 0.5026492316])
FIG_R32 = 0.833502642456


def test_tanh_map_at_zero():
    assert tanh_map(0.0) == 0.0


def test_tanh_map_equals_fisher_z_form():
    rng = np.random.default_rng(0)
    g = 6.0 * rng.standard_normal(1000)
    np.testing.assert_allclose(
        tanh_map(g), 1.0 - 2.0 / (np.exp(2.0 * g) + 1.0), rtol=0, atol=1e-14
    )


def test_tanh_map_saturates_strictly_inside():
    v = tanh_map(20.0)
    assert v < 1.0
    assert 1.0 - v < 1e-12
    assert tanh_map(-20.0) > -1.0
    # even at absurd magnitudes the open interval holds
    assert tanh_map(1e6) < 1.0 and tanh_map(-1e6) > -1.0


def test_angle_map_midpoint_and_value():
    np.testing.assert_allclose(angle_map(0.0), np.pi / 2.0, rtol=1e-15)
    np.testing.assert_allclose(np.cos(angle_map(0.0)), 0.0, atol=1e-15)
    np.testing.assert_allclose(angle_map(1.0), 2.2966882599678, rtol=1e-12)


def test_angle_map_saturation_open_interval():
    assert 0.0 < angle_map(-50.0) < angle_map(50.0) < np.pi
    # limit: angle -> pi and induced correlation cos(angle) -> -1
    assert np.pi - angle_map(40.0) < 1e-12
    np.testing.assert_allclose(np.cos(angle_map(40.0)), -1.0, atol=1e-12)


def test_chol_partial_two_factors():
    r = 0.37
    L = chol_from_partial_corrs([r]).L
    np.testing.assert_allclose(L, [[1.0, 0.0], [r, np.sqrt(1 - r * r)]], rtol=1e-15)
    np.testing.assert_allclose(L @ L.T, [[1.0, r], [r, 1.0]], atol=1e-15)


def test_chol_partial_case_table_row3_frozen():
    L = chol_from_partial_corrs(FIG_PARTIALS).L
    np.testing.assert_allclose(L[2], FIG_L_ROW3, atol=5e-11)
    R = L @ L.T
    np.testing.assert_allclose(R[1, 0], 0.55, atol=1e-12)
    np.testing.assert_allclose(R[2, 0], 0.65, atol=1e-12)
    np.testing.assert_allclose(R[2, 1], FIG_R32, atol=1e-12)


def test_chol_partial_zeros_is_identity():
    L = chol_from_partial_corrs(np.zeros(6)).L
    np.testing.assert_array_equal(L, np.eye(4))


def test_chol_partial_rejects_boundary():
    for bad in ([1.0], [-1.0], [0.2, 1.3, 0.0]):
        with pytest.raises(ValueError):
            chol_from_partial_corrs(bad)


def test_chol_angles_right_angles_identity():
    L = chol_from_angles(np.full(3, np.pi / 2)).L
    np.testing.assert_allclose(L, np.eye(3), atol=1e-16)


def test_chol_angles_two_factor_cosine():
    L = chol_from_angles([np.pi / 3]).L
    R = L @ L.T
    np.testing.assert_allclose(R[1, 0], 0.5, rtol=1e-15)


def test_chol_angles_rejects_out_of_range():
    for bad in ([0.0], [np.pi], [-0.1], [3.2]):
        with pytest.raises(ValueError):
            chol_from_angles(bad)


def test_chol_angles_rows_unit_norm_and_pd():
    rng = np.random.default_rng(4)
    for _ in range(50):
        a = rng.uniform(0.05, np.pi - 0.05, size=10)  # M = 5
        L = chol_from_angles(a).L
        np.testing.assert_allclose((L ** 2).sum(axis=1), 1.0, atol=1e-12)
        w = np.linalg.eigvalsh(L @ L.T)
        assert w.min() > 0


def test_unit_rows_partial():
    rng = np.random.default_rng(8)
    for _ in range(50):
        t = rng.uniform(-0.95, 0.95, size=15)  # M = 6
        L = chol_from_partial_corrs(t).L
        np.testing.assert_allclose((L ** 2).sum(axis=1), 1.0, atol=1e-12)
        assert np.allclose(np.triu(L, 1), 0.0)
        assert L[0, 0] == 1.0


def test_factor_cov_identity_case():
    fc = factor_cov(np.zeros(3), np.ones(3), PARTIAL_CORRELATION)
    np.testing.assert_array_equal(fc.Phi, np.eye(3))
    np.testing.assert_array_equal(fc.R, np.eye(3))


def test_factor_cov_fig_values_via_atanh():
    fc = factor_cov(np.arctanh(FIG_PARTIALS), np.ones(3), PARTIAL_CORRELATION)
    np.testing.assert_allclose(fc.Phi[2, 1], FIG_R32, atol=1e-12)
    np.testing.assert_allclose(fc.Phi[1, 0], 0.55, atol=1e-12)
    np.testing.assert_allclose(fc.Phi[2, 0], 0.65, atol=1e-12)


def test_factor_cov_variance_scaling_only():
    fc = factor_cov(np.zeros(3), np.array([4.0, 1.0, 1.0]), PARTIAL_CORRELATION)
    np.testing.assert_allclose(fc.Phi, np.diag([4.0, 1.0, 1.0]), atol=1e-15)


def test_factor_cov_scale_consistency():
    rng = np.random.default_rng(12)
    g = rng.standard_normal(6)
    d = rng.uniform(0.3, 2.5, size=4)
    fc = factor_cov(g, d, PARTIAL_CORRELATION)
    np.testing.assert_allclose(
        fc.Phi, np.sqrt(d)[:, None] * fc.R * np.sqrt(d)[None, :], atol=1e-14
    )
    np.testing.assert_allclose(np.diag(fc.Phi), d, atol=1e-14)
    # sqrt(D) L is a Cholesky factor of Phi
    C = np.sqrt(d)[:, None] * fc.L
    np.testing.assert_allclose(C @ C.T, fc.Phi, atol=1e-14)


def test_positive_definite_for_random_gammas_both_params():
    # eigenvalues of R = L L^T are the squared singular values of L;
    # assessing them through L avoids eigvalsh rounding noise (~1e-16)
    # swamping the analytically positive but tiny extremes near saturation
    rng = np.random.default_rng(17)
    for M in range(2, 7):
        k = M * (M - 1) // 2
        gam = rng.uniform(-5.0, 5.0, size=(400, k))
        phi = np.ones((400, M))
        for param in (PARTIAL_CORRELATION, HYPERSPHERE):
            _, R, L = factor_cov_batch(gam, phi, param)
            diag = np.diagonal(R, axis1=-2, axis2=-1)
            assert np.abs(diag - 1.0).max() < 1e-12
            off = R[:, ~np.eye(M, dtype=bool)]
            assert (np.abs(off) < 1.0).all()
            smin = np.linalg.svd(L, compute_uv=False)[:, -1]
            assert (smin ** 2 > 0).all()


def test_two_factor_fisher_z_identity():
    rng = np.random.default_rng(21)
    for _ in range(1000):
        g0 = rng.standard_normal()
        delta = rng.standard_normal(3)
        x = rng.standard_normal(3)
        g = g0 + delta @ x
        fc = factor_cov(np.array([g]), np.ones(2), PARTIAL_CORRELATION)
        target = 1.0 - 2.0 / (np.exp(2.0 * g) + 1.0)
        np.testing.assert_allclose(fc.R[1, 0], target, rtol=0, atol=1e-14)


def test_parameterizations_agree_on_common_partials():
    rng = np.random.default_rng(29)
    for _ in range(30):
        t = rng.uniform(-0.9, 0.9, size=6)
        R_p = factor_cov(gamma_from_partial_corrs(t, PARTIAL_CORRELATION),
                         np.ones(4), PARTIAL_CORRELATION).R
        R_h = factor_cov(gamma_from_partial_corrs(t, HYPERSPHERE),
                         np.ones(4), HYPERSPHERE).R
        np.testing.assert_allclose(R_p, R_h, atol=1e-12)


def test_gamma_from_partial_corrs_rejects_boundary():
    with pytest.raises(ValueError):
        gamma_from_partial_corrs([0.999, 1.0], PARTIAL_CORRELATION)


def test_batch_matches_single():
    rng = np.random.default_rng(33)
    gam = rng.standard_normal((15, 3))
    phi = rng.uniform(0.4, 2.0, size=(15, 3))
    Phi, R, L = factor_cov_batch(gam, phi, HYPERSPHERE)
    for n in range(15):
        fc = factor_cov(gam[n], phi[n], HYPERSPHERE)
        np.testing.assert_allclose(Phi[n], fc.Phi, atol=1e-14)
        np.testing.assert_allclose(R[n], fc.R, atol=1e-14)
        np.testing.assert_allclose(L[n], fc.L, atol=1e-14)


def test_single_factor_degenerate_shapes():
    fc = factor_cov(np.zeros(0), np.array([1.7]), PARTIAL_CORRELATION)
    np.testing.assert_allclose(fc.Phi, [[1.7]], atol=1e-15)
    np.testing.assert_array_equal(fc.R, [[1.0]])

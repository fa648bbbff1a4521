"""
預解式服務測試 - 外行求解、低頻掃描與逐點界
"""
import numpy as np
import pytest
from scipy.integrate import quad

from services.resolvent_service import (ResolventService, fit_log_template, geometric_tau_grid, le_tau_norm,
                                        zlambda_source)
from utils.common.errors import ValidationFailure
from utils.numerics.grid import Grid1D
from utils.radial import profiles as prof


@pytest.fixture(scope="module")
def resolvent_service(operator_service):
    return ResolventService(operator_service)


@pytest.fixture(scope="module")
def flat_l0(operator_service, flat_coeffs):
    return operator_service.radial_reduce(flat_coeffs, 0)


def test_flat_l0_defect_and_radiation(resolvent_service, flat_l0):
    """ℓ = 0 直接解：殘差在容許值內，且外邊界滿足 (∂_r + iτ)ψ = 0"""
    grid = Grid1D(h=0.05, r_max=40.0, order=4)
    sol = resolvent_service.solve_resolvent(flat_l0, 1.0, prof.gaussian(8.0, 1.0), grid)
    assert sol.method == "direct"
    assert sol.defect < 1e-8
    assert sol.radiation_residual < 1e-6
    assert sol.le_tau_norm > 0
    assert list(sol.frame().columns) == ["r", "v_re", "v_im"]


def test_flat_l0_matches_green_function(resolvent_service, flat_l0):
    """源外 ψ = −e^{−iτr}τ^{-1}∫ sin(τs)·s·g(s) ds"""
    tau = 1.0
    grid = Grid1D(h=0.025, r_max=40.0, order=4)
    g = prof.gaussian(8.0, 1.0)
    sol = resolvent_service.solve_resolvent(flat_l0, tau, g, grid, with_norm=False)
    moment, _ = quad(lambda s: np.sin(tau * s) * s * float(g(s)), 0.0, 25.0, limit=200)
    r = sol.r[sol.r >= 25.0]
    exact = -np.exp(-1j * tau * r) * moment / tau
    assert np.allclose(sol.psi[sol.r >= 25.0], exact, rtol=1e-4, atol=1e-4 * abs(moment))


def test_low_frequency_solves_default_to_exact_discrete_system(resolvent_service, operator_service, flat_coeffs):
    """|τ|R < 8 時預設仍是未平移系統的直接解"""
    grid = Grid1D(h=0.1, r_max=40.0, order=4)
    for ell in (0, 1):
        rop = operator_service.radial_reduce(flat_coeffs, ell)
        sol = resolvent_service.solve_resolvent(rop, 0.05, prof.gaussian(6.0, 1.0), grid, with_norm=False)
        assert sol.method == "direct"
        assert sol.defect < 1e-8
        assert sol.within_tolerance


def test_shifted_extrapolation_reports_true_defect(operator_service, flat_coeffs, caplog):
    """選用的複數平移外推對任何 ℓ 生效，殘差以未平移系統計算並發出警告"""
    shifted = ResolventService(operator_service, richardson=True)
    grid = Grid1D(h=0.1, r_max=40.0, order=4)
    for ell in (0, 1):
        rop = operator_service.radial_reduce(flat_coeffs, ell)
        with caplog.at_level("WARNING"):
            caplog.clear()
            sol = shifted.solve_resolvent(rop, 0.05, prof.gaussian(6.0, 1.0), grid, with_norm=False)
        assert sol.method == "richardson"
        assert sol.defect > sol.tolerance
        assert not sol.within_tolerance
        assert "above tolerance" in caplog.text
    high = shifted.solve_resolvent(operator_service.radial_reduce(flat_coeffs, 1), 1.0,
                                   prof.gaussian(6.0, 1.0), grid, with_norm=False)
    assert high.method == "direct"


def test_low_frequency_boundary_is_independent_of_radius(resolvent_service, operator_service, flat_coeffs):
    """平直 ℓ = 1、τR < 8：R = 40 與 R = 80 的解在內部一致"""
    rop = operator_service.radial_reduce(flat_coeffs, 1)
    g = prof.gaussian(6.0, 1.0)
    near = resolvent_service.solve_resolvent(rop, 0.05, g, Grid1D(h=0.1, r_max=40.0, order=4), with_norm=False)
    far = resolvent_service.solve_resolvent(rop, 0.05, g, Grid1D(h=0.1, r_max=80.0, order=4), with_norm=False)
    inner = near.r <= 20.0
    scale = np.max(np.abs(near.psi))
    assert np.max(np.abs(near.psi[inner] - far.psi[:np.count_nonzero(inner)])) < 1e-5 * scale


def test_resolvent_identity_for_random_pairs(resolvent_service, operator_service, k2_coeffs):
    """20 組隨機 (τ, ℓ)，Im τ ≤ 0：‖P_τR_τg − g‖/‖g‖ < 1e-8"""
    rng = np.random.default_rng(7)
    grid = Grid1D(h=0.1, r_max=64.0, order=4)
    g = prof.gaussian(6.0, 1.0)
    pairs = [(1, 0.05), (2, 0.1 - 0.02j), (1, -0.08), (3, 0.02 - 0.01j)]
    while len(pairs) < 20:
        tau = complex(rng.uniform(-2.0, 2.0), -rng.uniform(0.0, 0.5))
        pairs.append((int(rng.integers(0, 4)), tau))
    rops = {ell: operator_service.radial_reduce(k2_coeffs, ell) for ell in range(4)}
    for ell, tau in pairs:
        sol = resolvent_service.solve_resolvent(rops[ell], tau, g, grid, with_norm=False)
        assert sol.defect < 1e-8, (ell, tau)


def test_resolvent_validation(resolvent_service, flat_l0):
    grid = Grid1D(h=0.1, r_max=20.0, order=4)
    with pytest.raises(ValidationFailure):
        resolvent_service.solve_resolvent(flat_l0, 1.0 + 0.1j, prof.gaussian(5.0, 1.0), grid)
    with pytest.raises(ValidationFailure):
        resolvent_service.solve_resolvent(flat_l0, 1.0, np.ones(7), grid)
    with pytest.raises(ValidationFailure):
        resolvent_service.solve_field(flat_l0, 1.0, np.ones(7), grid)


def test_geometric_tau_grid():
    taus = geometric_tau_grid(1.0, 5)
    assert taus == sorted(taus)
    assert taus[-1] == 1.0
    assert taus[0] == pytest.approx(0.25)
    with pytest.raises(ValidationFailure):
        geometric_tau_grid(0.0, 4)
    with pytest.raises(ValidationFailure):
        geometric_tau_grid(1.0, 1)


def test_le_tau_norm_edge_cases():
    r = np.linspace(0.1, 32.0, 320)
    assert le_tau_norm(np.zeros_like(r), 0.5, r) == 0.0
    assert le_tau_norm(np.exp(-r), 0.5, r) > 0
    with pytest.raises(ValidationFailure):
        le_tau_norm(np.zeros(3), 0.5, r)


def test_low_freq_scan_report(resolvent_service, flat_l0):
    grid = Grid1D(h=0.1, r_max=64.0, order=4)
    report = resolvent_service.low_freq_scan(flat_l0, prof.gaussian(4.0, 1.0), 1, [0.25, 0.5, 1.0], grid)
    assert report.tau_grid == [0.25, 0.5, 1.0]
    assert len(report.error_norms) == 3
    assert np.isfinite(report.fitted_slope)
    assert report.epsilon_profile is None
    assert list(report.frame().columns) == ["tau", "error_norm", "radiation_residual", "le_tau_norm"]


def test_low_freq_scan_validation(resolvent_service, flat_l0):
    grid = Grid1D(h=0.1, r_max=64.0, order=4)
    g = prof.gaussian(4.0, 1.0)
    with pytest.raises(ValidationFailure):
        resolvent_service.low_freq_scan(flat_l0, g, 1, [0.5, 1.0], grid)
    with pytest.raises(ValidationFailure):
        resolvent_service.low_freq_scan(flat_l0, g, 1, [0.5, 1.0, 2.0], grid)
    with pytest.raises(ValidationFailure):
        resolvent_service.low_freq_scan(flat_l0, g, 5, [0.25, 0.5, 1.0], grid)


def test_pointwise_bound_sweep_layout(resolvent_service, flat_l0):
    grid = Grid1D(h=0.1, r_max=40.0, order=4)
    g = prof.gaussian(6.0, 1.0)
    frame = resolvent_service.pointwise_bound_check(flat_l0, g, [0.5, 2.0], grid)
    assert list(frame.columns) == ["regime", "p", "tau", "value", "bounded"]
    assert set(frame["regime"]) == {"low", "high"}
    assert len(frame) == 4
    with pytest.raises(ValidationFailure):
        resolvent_service.pointwise_bound_check(flat_l0, g, [1.0], grid, p_max=2)
    with pytest.raises(ValidationFailure):
        resolvent_service.pointwise_bound_check(flat_l0, g, [0.0], grid)


@pytest.mark.slow
def test_low_frequency_slope_lambda1(resolvent_service, operator_service, k2_coeffs):
    """κ = 2、λ = 1 的低頻誤差斜率約為 1"""
    rop = operator_service.radial_reduce(k2_coeffs, 0)
    grid = Grid1D(h=0.1, r_max=4096.0, order=4)
    taus = geometric_tau_grid(0.25, 13)
    report = resolvent_service.low_freq_scan(rop, zlambda_source(1), 1, taus, grid)
    assert report.fitted_slope == pytest.approx(1.0, abs=0.1)


def test_log_template_recovers_logarithmic_term():
    """多項式加 τ²log(1/τ)：扣除多項式後模板完全解釋殘差"""
    taus = np.geomspace(2.0 ** -8, 2.0 ** -2, 16)
    values = (0.3 - 0.1j) * taus + 0.5 * taus ** 2 + (2.0 + 1.0j) * taus ** 2 * np.log(1.0 / taus)
    frame, r2 = fit_log_template(taus, values, kappa=2)
    assert r2 > 0.999
    assert list(frame.columns) == ["tau", "log_inv_tau", "residual_re", "residual_im", "template_re", "template_im"]
    assert np.allclose(frame["residual_re"], frame["template_re"], atol=1e-10)


def test_log_template_rejects_residual_without_log_term():
    """沒有對數項時，殘差只是雜訊，模板解釋不了"""
    rng = np.random.default_rng(3)
    taus = np.geomspace(2.0 ** -8, 2.0 ** -2, 40)
    values = 0.3 * taus + 0.1 * taus ** 2 + 1e-6 * (rng.standard_normal(40) + 1j * rng.standard_normal(40))
    _, r2 = fit_log_template(taus, values, kappa=2)
    assert r2 < 0.5

    _, exact = fit_log_template(taus, 0.3 * taus + 0.1 * taus ** 2, kappa=2)
    assert exact == 0.0


def test_log_template_needs_enough_frequencies():
    frame, r2 = fit_log_template(np.array([0.1, 0.2, 0.3]), np.array([1.0, 2.0, 3.0]), kappa=2)
    assert np.isnan(r2)
    assert frame.empty


@pytest.mark.slow
def test_endpoint_order_scan_shows_log_signature(resolvent_service, operator_service, k2_coeffs):
    """λ = κ+1 = 3：固定半徑的誤差在扣除多項式後由 τ²log(1/τ) 主導"""
    rop = operator_service.radial_reduce(k2_coeffs, 0)
    grid = Grid1D(h=0.1, r_max=256.0, order=4)
    taus = geometric_tau_grid(0.25, 9)
    report = resolvent_service.low_freq_scan(rop, zlambda_source(3), 3, taus, grid, kappa=2)
    assert report.epsilon_profile is not None
    assert report.log_fit_r2 >= 0.95


@pytest.mark.parametrize("ell", [0, 1])
@pytest.mark.parametrize("tau", [0.7 - 0.1j, 0.05 - 0.02j, 2.0])
def test_resolvent_conjugate_symmetry(resolvent_service, operator_service, k2_coeffs, ell, tau):
    """實源且 b1 = 0：v(−τ̄) = conj(v(τ))"""
    rop = operator_service.radial_reduce(k2_coeffs, ell)
    grid = Grid1D(h=0.1, r_max=64.0, order=4)
    g = prof.gaussian(5.0, 1.0)
    sol = resolvent_service.solve_resolvent(rop, tau, g, grid, with_norm=False)
    mirrored = resolvent_service.solve_resolvent(rop, -np.conj(tau), g, grid, with_norm=False)
    scale = np.max(np.abs(sol.v))
    assert np.max(np.abs(mirrored.v - np.conj(sol.v))) < 1e-10 * scale


@pytest.mark.parametrize("tau", [0.25, 0.5, 1.0, 2.0])
def test_radiation_condition_on_family_metric(resolvent_service, operator_service, k2_coeffs, tau):
    """κ = 2、ℓ = 0：外邊界 |(∂_r + iτ)ψ| 低於 10^{-4}·max|ψ|"""
    rop = operator_service.radial_reduce(k2_coeffs, 0)
    grid = Grid1D(h=0.05, r_max=128.0, order=4)
    sol = resolvent_service.solve_resolvent(rop, tau, prof.gaussian(6.0, 1.0), grid, with_norm=False)
    assert sol.method == "direct"
    assert sol.radiation_residual < 1e-4


def test_pointwise_bounds_stay_flat_across_sweeps(resolvent_service, operator_service, k2_coeffs):
    """κ = 2、p ∈ {0, 1}：每組掃描的正規化值變化小於三倍"""
    rop = operator_service.radial_reduce(k2_coeffs, 0)
    grid = Grid1D(h=0.05, r_max=40.0, order=4)
    frame = resolvent_service.pointwise_bound_check(rop, prof.gaussian(0.0, 1.0),
                                                    [0.2, 0.3, 0.4, 1.0, 1.25, 1.5], grid)
    assert len(frame) == 12
    assert frame["bounded"].all()
    for _, group in frame.groupby(["regime", "p"]):
        assert group["value"].max() <= 3.0 * group["value"].min()


def test_resolvent_identity_with_shift_coupling(resolvent_service, operator_service, shift_coeffs):
    """b1 ≠ 0 的算子：P_τR_τg = g 在容許值內"""
    grid = Grid1D(h=0.1, r_max=64.0, order=4)
    g = prof.gaussian(6.0, 1.0)
    for ell, tau in ((0, 0.5), (1, 1.5 - 0.2j), (2, 0.05)):
        rop = operator_service.radial_reduce(shift_coeffs, ell)
        sol = resolvent_service.solve_resolvent(rop, tau, g, grid, with_norm=False)
        assert sol.defect < 1e-8
        assert sol.within_tolerance

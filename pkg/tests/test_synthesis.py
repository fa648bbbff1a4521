"""
傅立葉合成服務測試 - 計畫驗證、Filon 權重與高低頻分解
"""
import numpy as np
import pytest

from services.evolution_service import CauchyData
from services.resolvent_service import ResolventService
from services.synthesis_service import SynthesisPlan, SynthesisService, filon_weights
from utils.common.errors import ValidationFailure
from utils.numerics.grid import Grid1D
from utils.radial import profiles as prof

T_LIST = np.arange(0.0, 20.0 + 1e-9, 0.25)


def _data(ell=0):
    return CauchyData(prof.gaussian(8.0, 1.0), prof.zero(), ell=ell, support=(0.0, 16.0))


def _exact_flat_l0(t, r):
    def F(s):
        return s * np.exp(-0.5 * (np.abs(s) - 8.0) ** 2)
    return 0.5 * (F(r + t) + F(r - t)) / r


@pytest.fixture(scope="module")
def synthesis_service(operator_service):
    return SynthesisService(ResolventService(operator_service))


@pytest.fixture(scope="module")
def flat_l0(operator_service, flat_coeffs):
    return operator_service.radial_reduce(flat_coeffs, 0)


@pytest.fixture(scope="module")
def radiation_grid():
    return Grid1D(h=0.1, r_max=40.0, order=4)


@pytest.fixture(scope="module")
def fine_plan():
    return SynthesisPlan(data=_data(), tau_max=8.0, n_tau=800, taper=2.0)


@pytest.fixture(scope="module")
def samples(synthesis_service, flat_l0, fine_plan, radiation_grid):
    return synthesis_service.sample_frequencies(flat_l0, _data(), 10.0, fine_plan, radiation_grid)


def test_plan_validation():
    with pytest.raises(ValidationFailure):
        SynthesisPlan(data=_data(), tau_max=0.0)
    with pytest.raises(ValidationFailure):
        SynthesisPlan(data=_data(), n_tau=4)
    with pytest.raises(ValidationFailure):
        SynthesisPlan(data=_data(), tau_max=4.0, taper=4.0)
    with pytest.raises(ValidationFailure):
        SynthesisPlan(data=_data(), damping=-0.1)
    with pytest.raises(ValidationFailure):
        SynthesisPlan(data=_data(), ell=1)


def test_plan_for_horizon():
    plan = SynthesisPlan.for_horizon(_data(), t_max=100.0, tau_max=8.0)
    assert 100.0 * plan.spacing <= np.pi / 4.0 + 1e-12
    assert plan.nodes[0] == 0.0 and plan.nodes[-1] == pytest.approx(8.0)
    assert plan.describe()["n_tau"] == plan.n_tau
    low, high = plan.split(np.array([0.0, 0.5, 3.0]))
    assert np.allclose(low + high, 1.0)
    assert plan.window(np.array([0.0, 8.0])).tolist() == [1.0, 0.0]


def test_filon_weights_integrate_linear_functions():
    """分段線性被積函數的振盪積分是精確的"""
    nodes = np.linspace(0.0, 2.0, 41)
    t = 3.0
    exact_const = (np.exp(1j * t * 2.0) - 1.0) / (1j * t)
    assert np.dot(filon_weights(t, nodes), np.ones_like(nodes)) == pytest.approx(exact_const, abs=1e-13)
    exact_linear = 2.0 * np.exp(2j * t) / (1j * t) + (np.exp(2j * t) - 1.0) / t ** 2
    assert np.dot(filon_weights(t, nodes), nodes) == pytest.approx(exact_linear, abs=1e-13)
    trapezoid = filon_weights(0.0, nodes)
    assert np.allclose(trapezoid.real[[0, -1]], 0.025) and np.allclose(trapezoid.real[1:-1], 0.05)


def test_under_resolved_plan_is_rejected(synthesis_service, flat_l0, radiation_grid):
    coarse = SynthesisPlan(data=_data(), tau_max=16.0, n_tau=8, taper=4.0)
    with pytest.raises(ValidationFailure):
        synthesis_service.synthesize(flat_l0, _data(), [0.0, 2.0], 10.0, coarse, radiation_grid)
    with pytest.raises(ValidationFailure):
        synthesis_service.synthesize(flat_l0, _data(), [-1.0, 0.0], 10.0, coarse, radiation_grid)
    damped = SynthesisPlan(data=_data(), tau_max=8.0, n_tau=800, taper=2.0, damping=0.05)
    with pytest.raises(ValidationFailure):
        synthesis_service.synthesize(flat_l0, _data(), [0.0, 10.0], 10.0, damped, radiation_grid)


def test_sample_frequencies_validation(synthesis_service, flat_l0, fine_plan, radiation_grid):
    with pytest.raises(ValidationFailure):
        synthesis_service.sample_frequencies(flat_l0, _data(ell=1), 10.0, fine_plan, radiation_grid)
    with pytest.raises(ValidationFailure):
        synthesis_service.sample_frequencies(flat_l0, _data(), 50.0, fine_plan, radiation_grid)


def test_model_matches_initial_data(samples):
    """模型在 t = 0 重現 u₀(r_obs)"""
    p0, p1, _ = samples.model_coeffs
    assert samples.r_obs == pytest.approx(10.0)
    assert p0 == pytest.approx(np.exp(-2.0), rel=1e-12)
    assert p1 == pytest.approx(p0)
    assert np.allclose(samples.total, samples.remainder + samples.model)


def test_synthesis_matches_dalembert(synthesis_service, flat_l0, fine_plan, radiation_grid, samples):
    series = synthesis_service.synthesize(flat_l0, _data(), T_LIST, 10.0, fine_plan, radiation_grid, samples)
    exact = _exact_flat_l0(T_LIST, 10.0)
    error = np.linalg.norm(series.u_values - exact) / np.linalg.norm(exact)
    assert error < 5e-2
    assert series.label == "synthesized"
    assert series.grid_meta["n_tau"] == 800


def test_low_high_split_sums_to_total(synthesis_service, flat_l0, fine_plan, radiation_grid, samples):
    parts = synthesis_service.split_contributions(flat_l0, _data(), T_LIST, 10.0, fine_plan, radiation_grid,
                                                  samples)
    total = synthesis_service.synthesize(flat_l0, _data(), T_LIST, 10.0, fine_plan, radiation_grid, samples)
    assert np.allclose(parts["u_low"].u_values + parts["u_high"].u_values, total.u_values, atol=1e-14)
    assert np.max(np.abs(parts["u_low"].u_values)) > 0
    frame = SynthesisService.frame(parts)
    assert list(frame.columns) == ["t", "u_low", "u_high"]


def test_plancherel_check_outside_support(synthesis_service, flat_l0, radiation_grid):
    plan = SynthesisPlan(data=_data(), tau_max=8.0, n_tau=128, taper=2.0)
    change = synthesis_service.plancherel_check(flat_l0, _data(), 20.0, plan, radiation_grid)
    assert 0.0 <= change < 1e-3


def test_comparison(synthesis_service, flat_l0, fine_plan, radiation_grid, samples):
    series = synthesis_service.synthesize(flat_l0, _data(), T_LIST, 10.0, fine_plan, radiation_grid, samples)
    assert SynthesisService.comparison(series, series, 0.0, 20.0) == 0.0
    with pytest.raises(ValidationFailure):
        SynthesisService.comparison(series, series, 30.0, 40.0)

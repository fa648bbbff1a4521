"""
Poisson 服務測試 - 徑向反演、多極展開與零頻自舉
"""
import numpy as np
import pytest

from services.poisson_service import PoissonService, radial_poisson_inverse
from services.resolvent_service import zlambda_source
from utils.common.errors import ValidationFailure
from utils.numerics.grid import Grid1D
from utils.radial import profiles as prof


@pytest.fixture(scope="module")
def poisson_service(operator_service):
    return PoissonService(operator_service)


def test_unit_ball_inverse():
    """−Δv = 1_{r<1}：內部 1/2 − r²/6，外部 1/(3r)"""
    v = radial_poisson_inverse(prof.step_ball(1.0, 1.0), 3)
    r_in = np.array([0.0, 0.25, 0.5, 0.9])
    r_out = np.array([1.5, 2.0, 10.0, 100.0])
    assert np.allclose(v.sample(r_in), 0.5 - r_in ** 2 / 6.0, atol=1e-13)
    assert np.allclose(v.sample(r_out), 1.0 / (3.0 * r_out), atol=1e-13)
    assert v.sample(np.array([0.5]), 1)[0] == pytest.approx(-1.0 / 6.0)


def test_inverse_satisfies_poisson():
    g = prof.gaussian(center=4.0, width=1.0)
    v = radial_poisson_inverse(g, 3)
    r = np.linspace(0.5, 20.0, 40)
    laplacian = v.sample(r, 2) + 2.0 / r * v.sample(r, 1)
    assert np.allclose(laplacian, -g.sample(r), atol=1e-12)


def test_inverse_validation():
    with pytest.raises(ValidationFailure):
        radial_poisson_inverse(prof.gaussian(2.0, 1.0), 1)
    with pytest.raises(ValidationFailure):
        radial_poisson_inverse(prof.bracket_power(-2.0), 4)


def test_multipole_captures_monopole(poisson_service):
    """緊支撐源在遠處只剩 c_0/r"""
    g = prof.bump(0.0, 3.0)
    expansion = poisson_service.multipole_expansion(g, 2)
    far = expansion.r >= 32.0
    assert expansion.c[0] > 0
    assert np.allclose(expansion.direct[far] * expansion.r[far], expansion.c[0], rtol=1e-6)
    scale = np.max(np.abs(expansion.direct))
    assert np.max(np.abs(expansion.q[far])) < 1e-6 * scale
    assert list(expansion.coefficient_frame().columns) == ["j", "c_j", "e_j_sup"]
    assert "reconstructed" in expansion.profile_frame().columns


def test_multipole_validation(poisson_service):
    with pytest.raises(ValidationFailure):
        poisson_service.multipole_expansion(prof.bump(0.0, 3.0), 0)
    with pytest.raises(ValidationFailure):
        poisson_service.multipole_expansion(prof.bracket_power(-3.0), 2)


def test_low_high_split(poisson_service):
    g = prof.bump(0.0, 3.0)
    r = np.linspace(0.0, 64.0, 257)
    low, high = poisson_service.split_low_high(g, 1, r)
    assert np.all(low[r >= 16.0] == 0.0)
    assert np.all(high[r <= 8.0] == 0.0)
    v = radial_poisson_inverse(poisson_service.annulus_piece(g, 1), 3).sample(r)
    assert np.allclose(low + high, v, atol=1e-15)


def test_taylor_remainder_table_layout(poisson_service):
    table = poisson_service.taylor_remainder_table(prof.bump(0.0, 3.0), lam=1, m_max=2)
    assert list(table.columns) == ["m", "l", "remainder", "bound", "within"]
    assert len(table) == 9
    assert table["l"].min() == 3


@pytest.mark.parametrize("lam", [1, 2, 3])
def test_bootstrap_matches_direct_solve(poisson_service, operator_service, k2_coeffs, lam):
    """自舉展開的固定點與 τ = 0 的直接帶狀解一致"""
    grid = Grid1D(h=0.1, r_max=64.0, order=4)
    g = prof.gaussian(center=3.0, width=1.0)
    expansion = poisson_service.zero_resolvent_expand(k2_coeffs, g, lam, grid)
    rop = operator_service.radial_reduce(k2_coeffs, 0)
    direct = poisson_service.direct_static_solve(rop, g, grid)
    scale = np.max(np.abs(direct))
    assert np.max(np.abs(expansion.direct - direct)) < 1e-8 * scale
    assert expansion.sweeps > 0
    assert expansion.cutoff_radius >= 4.0
    assert expansion.class_of_e0 == ("S(1)" if lam == 3 else "l1S(1)")
    assert expansion.reconstruction_error(2.0) < 1e-9
    inner = (expansion.r >= 2.0) & (expansion.r <= 32.0)
    assert np.max(np.abs(expansion.reconstruct()[inner] - direct[inner])) < 1e-6 * scale
    assert len(expansion.coefficient_history) == expansion.sweeps


def test_bootstrap_lambda_range(poisson_service, k2_coeffs):
    grid = Grid1D(h=0.1, r_max=64.0, order=4)
    with pytest.raises(ValidationFailure):
        poisson_service.zero_resolvent_expand(k2_coeffs, prof.gaussian(3.0, 1.0), 4, grid)


def test_free_expansion_of_slowly_decaying_source(poisson_service):
    """非緊支撐源：分塊反演之和重建直接解，主係數為總質量"""
    g = zlambda_source(2)
    expansion = poisson_service.multipole_expansion(g, 2)
    assert expansion.reconstruction_error(2.0) < 1e-7
    assert expansion.c[0] == pytest.approx(float(np.sum(expansion.annulus_moments)))
    far = expansion.r >= 64.0
    assert np.max(np.abs(expansion.taylor_remainder[far])) > 0.0
    scale = np.max(np.abs(expansion.direct))
    assert np.max(np.abs(expansion.q[far])) < 1e-2 * scale


def test_sampled_source_needs_inverse(poisson_service):
    r = np.linspace(0.1, 16.0, 160)
    with pytest.raises(ValidationFailure):
        poisson_service.multipole_expansion(np.exp(-r), 2)
    with pytest.raises(ValidationFailure):
        poisson_service.multipole_expansion(np.exp(-r[:-1]), 2, r=r, inverse=lambda d: d)


@pytest.mark.parametrize("lam, growing", [(3, True), (2, False)])
def test_e0_partial_sums_grow_only_at_endpoint_order(poisson_service, k2_coeffs, lam, growing):
    """λ = κ+1 時 e_0 的二進上確界不衰減，λ < κ+1 時幾何衰減"""
    grid = Grid1D(h=0.2, r_max=512.0, order=4)
    expansion = poisson_service.zero_resolvent_expand(k2_coeffs, prof.bump(1.0, 3.0), lam, grid)
    sums = expansion.e0_partial_sums(32.0, 256.0)
    assert len(sums) == 3
    increments = np.diff(np.concatenate([[0.0], sums]))
    assert increments[0] > 0.0
    if growing:
        assert increments[-1] >= 0.5 * increments[0]
    else:
        assert increments[-1] <= 0.45 * increments[0]


def test_endpoint_order_radial_term(poisson_service, k2_coeffs):
    grid = Grid1D(h=0.1, r_max=64.0, order=4)
    expansion = poisson_service.zero_resolvent_expand(k2_coeffs, prof.gaussian(3.0, 1.0), 3, grid)
    assert expansion.radial_remainder is not None
    assert np.isfinite(expansion.radial_monopole)
    tail = expansion.radial_remainder[expansion.r >= 2.0]
    assert np.all(np.isfinite(tail))
    assert np.max(np.abs(tail)) > 0.0
    assert "e_radial" in expansion.profile_frame().columns

    lower = poisson_service.zero_resolvent_expand(k2_coeffs, prof.gaussian(3.0, 1.0), 2, grid)
    assert lower.radial_remainder is None

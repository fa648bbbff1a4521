"""
算子服務測試 - 係數、徑向約化與離散組裝
"""
import numpy as np
import pytest
from scipy.sparse.linalg import norm as sparse_norm

from services.operator_service import COEFFICIENT_COLUMNS, outgoing_robin
from utils.common.errors import ValidationFailure
from utils.numerics.grid import Grid1D
from utils.radial import profiles as prof

CENTER = np.array([3.0, 3.0, 0.0])
POINTS = np.array([[3.0, 4.0, 0.5], [2.5, 2.0, -1.0], [4.0, 3.5, 1.0]])


def _bump3(y):
    return np.exp(-0.5 * np.sum((y - CENTER) ** 2, axis=-1))


def test_flat_coefficients_vanish(operator_service, flat_coeffs):
    """平直度規的 P¹、p₂ 與位勢皆為零"""
    r = np.linspace(0.5, 100.0, 200)
    for name, profile in flat_coeffs.coefficient_profiles().items():
        assert np.max(np.abs(profile.sample(r))) < 1e-12, name
    rop = operator_service.radial_reduce(flat_coeffs, 2)
    assert not rop.has_coupling


def test_unnormalized_metric_is_rejected(operator_service, k2_metric):
    with pytest.raises(ValidationFailure):
        operator_service.build_operator(k2_metric)


def test_flat_action_is_laplacian(flat_coeffs):
    values = flat_coeffs.conjugated_action(_bump3, POINTS)
    dist2 = np.sum((POINTS - CENTER) ** 2, axis=-1)
    exact = (dist2 - 3.0) * _bump3(POINTS)
    assert np.allclose(values, exact, atol=1e-3)


def test_conjugated_action_matches_divergence_form(k2_coeffs):
    """兩種 Cartesian 形式在遠離原點處一致"""
    left = k2_coeffs.conjugated_action(_bump3, POINTS)
    right = k2_coeffs.divergence_action(_bump3, POINTS)
    assert np.allclose(left, right, atol=5e-3)


def test_family_coefficients_decay(operator_service, k2_coeffs):
    r = np.array([50.0, 100.0, 200.0])
    w = np.abs(operator_service.radial_reduce(k2_coeffs, 0).w.sample(r))
    assert np.all(w * r ** 2 < 1.0)


def test_radial_apply_for_flat_l0(operator_service, flat_coeffs):
    rop = operator_service.radial_reduce(flat_coeffs, 0)
    g = prof.gaussian(center=6.0, width=1.0)
    r = np.linspace(1.0, 12.0, 45)
    expected = g.sample(r, 2) + 2.0 / r * g.sample(r, 1)
    assert np.allclose(rop.apply(g, r), expected, atol=1e-10)
    with pytest.raises(ValidationFailure):
        rop.apply(g, np.array([0.0, 1.0]))
    with pytest.raises(ValidationFailure):
        operator_service.radial_reduce(flat_coeffs, -1)


def test_dirichlet_stiffness_is_symmetric(operator_service, k2_coeffs):
    """Dirichlet 組裝的剛度矩陣為實對稱"""
    rop = operator_service.radial_reduce(k2_coeffs, 1)
    discrete = operator_service.assemble_discrete(rop, Grid1D(h=0.1, r_max=40.0, order=4))
    K = discrete.stiffness
    assert discrete.size == 399
    assert sparse_norm(K - K.T) < 1e-10 * sparse_norm(K)


def test_discrete_flat_operator_accuracy(operator_service, flat_coeffs):
    """(rφ)'' 的四階近似"""
    grid = Grid1D(h=0.05, r_max=32.0, order=4)
    rop = operator_service.radial_reduce(flat_coeffs, 0)
    discrete = operator_service.assemble_discrete(rop, grid)
    g = prof.gaussian(center=10.0, width=1.0)
    r = discrete.radii
    psi = r * g.sample(r)
    exact = r * (g.sample(r, 2) + 2.0 / r * g.sample(r, 1))
    assert np.allclose(discrete.apply(psi).real, exact, atol=1e-4)


def test_radiation_matrix_shape(operator_service, flat_coeffs):
    grid = Grid1D(h=0.1, r_max=20.0, order=4)
    rop = operator_service.radial_reduce(flat_coeffs, 0)
    discrete = operator_service.assemble_discrete(rop, grid, tau=1.0, boundary="radiation")
    assert discrete.size == grid.n_intervals
    assert discrete.interior_rows == grid.n_intervals - 1
    M = discrete.matrix()
    assert M.shape == (200, 200)
    assert M[199, 199] != 0


def test_assembly_validation(operator_service, flat_coeffs):
    rop = operator_service.radial_reduce(flat_coeffs, 0)
    grid = Grid1D(h=0.1, r_max=20.0, order=4)
    with pytest.raises(ValidationFailure):
        operator_service.assemble_discrete(rop, grid, tau=1.0 + 0.5j)
    with pytest.raises(ValidationFailure):
        operator_service.assemble_discrete(rop, grid, boundary="periodic")
    with pytest.raises(ValidationFailure):
        operator_service.assemble_discrete(rop, Grid1D(h=1.0, r_max=10.0, order=2))


def test_outgoing_robin():
    assert outgoing_robin(0, 2.0, 50.0) == 2j
    assert outgoing_robin(3, 0, 10.0) == pytest.approx(0.3)
    assert outgoing_robin(1, 1.0, 10.0) == pytest.approx(1j - 0.01j)


def test_dump_coefficients(operator_service, k2_coeffs):
    grid = Grid1D(h=0.5, r_max=40.0, order=4)
    rop = operator_service.radial_reduce(k2_coeffs, 0)
    frame = operator_service.dump_coefficients(rop, grid)
    assert tuple(frame.columns) == COEFFICIENT_COLUMNS
    assert len(frame) == grid.n_intervals
    assert frame["r"].iloc[0] == 0.5


def test_cartesian_perturbation_fields(k2_coeffs):
    """P¹ 沿徑向，P² 在徑向與切向分別取 p2_rad、p2_tan"""
    x = np.array([[3.0, 0.0, 0.0], [0.0, 4.0, 0.0]])
    vector = k2_coeffs.p1_vector(x)
    assert vector[0] == pytest.approx([k2_coeffs.p1_r.eval(3.0), 0.0, 0.0])
    matrix = k2_coeffs.p2_matrix(x)
    assert np.allclose(np.diag(matrix[1]), [k2_coeffs.p2_tan.eval(4.0), k2_coeffs.p2_rad.eval(4.0),
                                            k2_coeffs.p2_tan.eval(4.0)])
    assert np.allclose(matrix, np.swapaxes(matrix, -1, -2))
    with pytest.raises(ValidationFailure):
        k2_coeffs.p2_matrix(np.zeros((1, 3)))


def _harmonic(ell, x):
    """Zonal harmonic polynomial of degree ℓ divided by r^ℓ."""
    r = np.sqrt(np.sum(x * x, axis=-1))
    z = x[..., 2] / r
    return {0: np.ones_like(z), 1: z, 2: 3.0 * z * z - 1.0}[ell]


@pytest.mark.parametrize("ell", [0, 1, 2])
def test_radial_reduction_matches_cartesian_action_across_matching_bump(operator_service, k2_coeffs, ell):
    """一維約化與三維共軛作用在面積匹配凸塊邊緣一致"""
    assert k2_coeffs.metric.matching_shift != 0.0
    phi = prof.gaussian(center=5.0, width=1.5)
    rop = operator_service.radial_reduce(k2_coeffs, ell)
    direction = np.array([1.0, 2.0, 3.0]) / np.sqrt(14.0)
    r = np.linspace(3.5, 6.5, 13)
    x = r[:, None] * direction[None, :]

    def field(y):
        return phi.eval(np.sqrt(np.sum(y * y, axis=-1))) * _harmonic(ell, y)

    cartesian = k2_coeffs.conjugated_action(field, x) / _harmonic(ell, x)
    radial = rop.apply(phi, r)
    assert np.max(np.abs(radial - cartesian)) < 1e-6


def test_shift_metric_has_antisymmetric_coupling(operator_service, shift_coeffs):
    """f^{tr} ≠ 0：b1 非零，Dirichlet 組裝的 iτ 耦合矩陣反對稱、剛度仍對稱"""
    rop = operator_service.radial_reduce(shift_coeffs, 0)
    r = np.linspace(10.0, 40.0, 10)
    b1 = rop.b1.sample(r)
    assert np.all(np.abs(b1) > 0.0)
    assert np.allclose(b1, shift_coeffs.p1_r.sample(r))
    discrete = operator_service.assemble_discrete(rop, Grid1D(h=0.1, r_max=40.0, order=4))
    C, K = discrete.coupling, discrete.stiffness
    assert C.nnz > 0
    assert sparse_norm(C + C.T) < 1e-10 * sparse_norm(C)
    assert sparse_norm(K - K.T) < 1e-10 * sparse_norm(K)

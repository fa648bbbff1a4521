"""
度規服務測試 - 預設、假設檢驗與座標正規化
"""
import numpy as np
import pandas as pd
import pytest

from services.metric_service import MetricSpec, build_preset
from utils.common.errors import NumericalFailure, ValidationFailure
from utils.radial import profiles as prof


def test_presets():
    """測試預設的衰減率與名稱"""
    assert build_preset("flat").name == "flat"
    assert build_preset("price_k1").kappa == 1
    assert build_preset("family_k3").kappa == 3
    assert build_preset("family_k2", kappa=4).kappa == 4
    with pytest.raises(ValidationFailure):
        build_preset("schwarzschild")
    with pytest.raises(ValidationFailure):
        build_preset("custom")
    with pytest.raises(ValidationFailure):
        MetricSpec(kappa=0)
    with pytest.raises(ValidationFailure):
        MetricSpec(kappa=2, f_dual={"xx": prof.zero()})


def test_flat_metric_passes_checks(metric_service, flat_metric):
    report = metric_service.check_assumptions(flat_metric)
    assert report.passed
    assert report.signature == (1, 3)
    assert report.summary()["passed"] is True


def test_family_metric_passes_checks(metric_service, k2_metric):
    report = metric_service.check_assumptions(k2_metric)
    assert report.passed
    assert report.falloff["h_tt"]
    assert report.seminorms["h_tt"].table.shape == (metric_service.j_max + 1, metric_service.m_max + 1)


def test_slow_falloff_is_rejected(metric_service):
    """⟨r⟩^{-2} 的擾動不符合 κ = 3 的宣稱"""
    spec = MetricSpec(kappa=3, h_tt=prof.bracket_power(-2.0, amplitude=-0.05, cutoff_scale=4.0))
    report = metric_service.check_assumptions(spec)
    assert not report.falloff["h_tt"]
    assert not report.passed


def test_dual_matrix_singular_at_origin(metric_service, flat_metric):
    with pytest.raises(NumericalFailure):
        metric_service.dual_components(flat_metric, 0.0, 1.0)
    G = metric_service.dual_components(flat_metric, 3.0, 0.5 * np.pi)
    assert G[0, 0] == -1.0 and G[2, 2] == pytest.approx(1.0 / 9.0)


def test_cutoff_radius_avoids_small_denominator(metric_service):
    spec = MetricSpec(kappa=2, h_rr=prof.bump(0.0, 3.0, amplitude=-0.8))
    R = metric_service.select_cutoff_radius(spec)
    assert 2.0 < R < 3.0
    assert metric_service.select_cutoff_radius(build_preset("flat")) == 0.0


def test_normalization_residuals(metric_service, k2_normalized):
    """正規化後 h^{tr} ≡ 0 且 h^{rr} + h^{tt} ≡ 0"""
    r = np.linspace(0.0, 200.0, 801)
    residuals = metric_service.normalization_residuals(k2_normalized, r)
    assert residuals["h_tr"] < 1e-10
    assert residuals["h_rr_plus_h_tt"] < 1e-10


def test_radial_map_is_monotone_and_matched(k2_normalized):
    """ρ(r) 單調遞增，κ ≥ 2 時 ρ − r → 0"""
    r = np.linspace(0.5, 3000.0, 4000)
    rho = k2_normalized.rho_of_r.sample(r)
    assert np.all(np.diff(rho) > 0)
    assert abs(k2_normalized.rho_of_r(3000.0) - 3000.0) < 1e-4
    assert k2_normalized.matching_shift != 0.0


def test_inverse_radial_map(k2_normalized):
    r = np.linspace(1.0, 100.0, 200)
    back = k2_normalized.r_of_rho.sample(k2_normalized.rho_of_r.sample(r))
    assert np.allclose(back, r, atol=1e-8)


def test_flat_normalization_is_identity(metric_service, flat_metric):
    nm = metric_service.normalize(flat_metric)
    r = np.linspace(0.0, 50.0, 101)
    assert nm.cutoff_radius == 0.0
    assert nm.matching_shift == 0.0
    assert np.allclose(nm.rho_of_r.sample(r), r, atol=1e-12)
    assert nm.f_dual == {}


def test_custom_metric_from_csv(tmp_path):
    """custom 預設從目錄讀入剖面，缺少的分量為零"""
    r = np.linspace(0.0, 400.0, 4001)
    values = -0.05 * (1.0 + r ** 2) ** -1.0
    pd.DataFrame({"r": r, "value": values}).to_csv(tmp_path / "h_tt.csv", index=False)
    spec = build_preset("custom", kappa=2, profile_dir=str(tmp_path))
    probe = np.array([5.0, 50.0, 300.0])
    assert np.allclose(spec.h_tt.sample(probe), -0.05 / (1.0 + probe ** 2), rtol=1e-6)
    assert np.all(spec.h_rr.sample(probe) == 0.0)


def test_shift_component_is_removed_by_time_translation(metric_service):
    """h^{tr} = 0.05⟨r⟩^{-2}χ：Q' = −h^{tr}，h^{tr} 移入 f^{tt} = (h^{tr})²"""
    h_tr = prof.bracket_power(-2.0, amplitude=0.05, cutoff_scale=4.0, name="h_tr")
    spec = MetricSpec(kappa=2, h_tr=h_tr, name="shifted")
    nm = metric_service.normalize(spec)
    r = np.linspace(0.0, 200.0, 801)
    residuals = metric_service.normalization_residuals(nm, r)
    assert residuals["h_tr"] < 1e-10
    assert residuals["h_rr_plus_h_tt"] < 1e-10
    assert np.allclose(nm.Q.sample(r, 1), -h_tr.sample(r), atol=1e-12)
    assert "tr" not in nm.f_dual
    assert np.allclose(nm.f_dual["tt"].sample(r), h_tr.sample(r) ** 2, atol=1e-10)
    assert metric_service.check_assumptions(nm).signature == metric_service.check_assumptions(spec).signature


def test_normalization_is_idempotent(metric_service, k2_normalized):
    """已正規化的度規再正規化一次不變"""
    again = metric_service.normalize(k2_normalized)
    r = np.linspace(0.0, 200.0, 801)
    assert again.matching_shift == 0.0
    assert np.allclose(again.rho_of_r.sample(r), r, atol=1e-10)
    assert np.allclose(again.Q.sample(r), 0.0, atol=1e-14)
    for key in ("h_tt", "h_rr", "h_ww", "V_r"):
        assert np.allclose(getattr(again, key).sample(r), getattr(k2_normalized, key).sample(r), atol=1e-10)
    assert sorted(again.f_dual) == sorted(k2_normalized.f_dual)


def test_normalization_preserves_signature(metric_service, k2_metric, k2_normalized):
    before = metric_service.check_assumptions(k2_metric)
    after = metric_service.check_assumptions(k2_normalized)
    assert before.signature == after.signature == (1, 3)
    assert after.spacelike_slices

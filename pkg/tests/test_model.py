import numpy as np
import pytest

from app.core import detector
from app.core.model import (
    ChannelSet,
    Precoder,
    RisPhase,
    SystemConfig,
    ber_constraint_residual,
    branch_variances,
    check_feasibility,
    effective_channel,
    load_channels,
    primary_rate,
    rate_residuals,
    save_channels,
    stack_effective,
    transmit_power,
)


@pytest.fixture
def cfg(make_cfg):
    return make_cfg(n_tx=3, n_ris=6, n_pr=2)


@pytest.fixture
def ch(cfg, make_channels):
    return make_channels(cfg, seed=4)


def _random_w(n, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def test_from_targets_derives_lambda(make_cfg):
    cfg = make_cfg(ber_target=0.0786, t_symbols=50)
    assert detector.ratio_ber(cfg.lambda_s, 50) == pytest.approx(0.0786, abs=1e-9)
    assert make_cfg(ber_target=0.5).lambda_s == 1.0


def test_config_rejects_inconsistent_lambda():
    with pytest.raises(ValueError):
        SystemConfig(n_tx=2, n_ris=4, n_pr=1, t_symbols=10, noise_power=1.0, gamma_p=1.0, lambda_s=3.0, ber_target=0.3)


@pytest.mark.parametrize("field,value", [("n_tx", 0), ("noise_power", 0.0), ("gamma_p", -1.0), ("ber_target", 0.6)])
def test_config_validation(make_cfg, field, value):
    kwargs = {field: value}
    with pytest.raises(ValueError):
        make_cfg(**kwargs)


def test_rate_target(make_cfg):
    assert make_cfg(gamma_p=3.0).rate_target == pytest.approx(2.0)


def test_effective_channel_formula(ch):
    phi = RisPhase.random(ch.n_ris, np.random.default_rng(1))
    for k in range(ch.n_pr + 1):
        direct = ch.h_brx if k == 0 else ch.h_pr[k - 1]
        g_k = ch.g_brx if k == 0 else ch.g_pr[k - 1]
        reflected = ch.g_mat @ (g_k * phi.phases)
        assert np.allclose(effective_channel(ch, phi, k, 0), direct - reflected, atol=1e-13)
        assert np.allclose(effective_channel(ch, phi, k, 1), direct + reflected, atol=1e-13)


def test_stack_matches_columns(ch):
    phi = RisPhase.random(ch.n_ris, np.random.default_rng(2))
    eff = stack_effective(ch, phi)
    for k in range(ch.n_pr + 1):
        for i in (0, 1):
            assert np.allclose(eff.column(k, i), effective_channel(ch, phi, k, i), atol=1e-13)


def test_effective_channel_index_errors(ch):
    phi = RisPhase.ones(ch.n_ris)
    with pytest.raises(IndexError):
        effective_channel(ch, phi, ch.n_pr + 1, 0)
    with pytest.raises(IndexError):
        effective_channel(ch, phi, 0, 2)
    with pytest.raises(ValueError):
        effective_channel(ch, RisPhase.ones(ch.n_ris + 1), 0, 0)


def test_negating_phi_swaps_branches(ch):
    phi = RisPhase.random(ch.n_ris, np.random.default_rng(3))
    eff = stack_effective(ch, phi)
    flipped = stack_effective(ch, -phi)
    assert np.allclose(eff.branch[0], flipped.branch[1], atol=1e-13)
    assert np.allclose(eff.branch[1], flipped.branch[0], atol=1e-13)


def test_rates_and_variances(ch, cfg):
    phi = RisPhase.random(ch.n_ris, np.random.default_rng(5))
    w = _random_w(ch.n_tx)
    eff = stack_effective(ch, phi)
    g = np.abs([[np.vdot(eff.column(k, i), w) for k in range(ch.n_pr + 1)] for i in (0, 1)]) ** 2
    assert np.allclose(eff.gains(w), g)
    assert primary_rate(eff, w, cfg.noise_power, 1) == pytest.approx(0.5 * (np.log2(1 + g[0, 1]) + np.log2(1 + g[1, 1])))
    s0, s1 = branch_variances(eff, w, cfg.noise_power)
    assert (s0, s1) == pytest.approx((g[0, 0] + 1.0, g[1, 0] + 1.0))
    assert ber_constraint_residual(eff, w, cfg) == pytest.approx(s1 - cfg.lambda_s * s0)
    assert np.allclose(rate_residuals(eff, w, cfg), g[:, 1:].T - cfg.gamma_p)
    with pytest.raises(IndexError):
        primary_rate(eff, w, cfg.noise_power, 0)


def test_transmit_power_accepts_precoder_and_arrays():
    w = _random_w(4)
    assert transmit_power(w) == pytest.approx(float(np.sum(np.abs(w) ** 2)))
    assert Precoder(w).power == pytest.approx(transmit_power(w))
    assert transmit_power(np.zeros(3)) == 0.0


def test_ris_phase_normalizes_and_rejects_zero():
    phi = RisPhase(np.array([2.0, 1j * 0.5, -3.0 + 4.0j]))
    assert phi.max_modulus_error() <= 1e-15
    with pytest.raises(ValueError):
        RisPhase(np.array([1.0, 0.0]))


def test_channel_arrays_are_read_only(ch):
    with pytest.raises(ValueError):
        ch.h_pr[0, 0] = 1.0


def test_channel_shape_validation(cfg, make_channels):
    ch = make_channels(cfg)
    with pytest.raises(ValueError):
        ChannelSet(h_pr=ch.h_pr, h_brx=ch.h_brx[:-1], g_mat=ch.g_mat, g_pr=ch.g_pr, g_brx=ch.g_brx)
    with pytest.raises(ValueError):
        ChannelSet(h_pr=ch.h_pr, h_brx=ch.h_brx, g_mat=ch.g_mat, g_pr=ch.g_pr, g_brx=ch.g_brx, cascades=ch.cascades * 2)
    with pytest.raises(ValueError):
        ch.check_against(SystemConfig.from_targets(4, cfg.n_ris, cfg.n_pr, 50, 1.0, 2.0, 0.0786))


def test_cascades_follow_scaling(ch):
    scaled = ch.scaled(3.0)
    assert np.allclose(scaled.h_pr, 3.0 * ch.h_pr)
    assert np.allclose(scaled.cascades, 3.0 * ch.cascades)
    assert not np.any(ch.without_ris().cascades)


def test_feasibility_report_names_and_signs(ch, cfg):
    phi = RisPhase.random(ch.n_ris, np.random.default_rng(6))
    report = check_feasibility(ch, phi, np.zeros(ch.n_tx), cfg)
    names = [c.name for c in report.checks]
    assert names == ["rate[k=1,i=0]", "rate[k=1,i=1]", "rate[k=2,i=0]", "rate[k=2,i=1]", "ber", "unit_modulus"]
    assert not report.feasible
    assert report.by_name()["rate[k=1,i=0]"].normalized == pytest.approx(-cfg.gamma_p)
    assert "ber" in report.failed
    assert report.power == 0.0


def test_feasibility_passes_at_prescribed_inner_products(make_cfg, make_channels):
    cfg = make_cfg(n_tx=6, n_ris=5, n_pr=2)
    ch = make_channels(cfg, seed=9)
    phi = RisPhase.random(ch.n_ris, np.random.default_rng(8))
    stack = stack_effective(ch, phi).stacked()
    # E^H w = targets: BRx branches 0 and 200, every PR at 40
    targets = np.array([0.0, 40.0, 40.0, 200.0, 40.0, 40.0], dtype=complex)
    w = np.linalg.solve(stack.conj().T, targets)
    report = check_feasibility(ch, phi, w, cfg)
    assert report.feasible
    assert report.by_name()["ber"].normalized > 0.0
    assert report.ber < cfg.ber_target
    assert all(rate > cfg.rate_target for rate in report.expected_rates)


def test_sign_flip_keeps_residual_multiset(ch, cfg):
    phi = RisPhase.random(ch.n_ris, np.random.default_rng(7))
    w = _random_w(ch.n_tx, seed=3) * 5.0
    a = check_feasibility(ch, phi, w, cfg)
    b = check_feasibility(ch, -phi, w, cfg)
    assert a.residual_multiset(6) == b.residual_multiset(6)
    assert a.feasible == b.feasible
    assert a.power == pytest.approx(b.power)


def test_negative_tolerance_rejected(ch, cfg):
    with pytest.raises(ValueError):
        check_feasibility(ch, RisPhase.ones(ch.n_ris), np.zeros(ch.n_tx), cfg, tol=-1.0)


def test_channel_fixture_round_trip(ch, tmp_path):
    path = tmp_path / "fixtures" / "ch.yml"
    save_channels(ch, path)
    loaded = load_channels(path)
    assert np.array_equal(loaded.g_mat, ch.g_mat)
    assert np.array_equal(loaded.cascades, ch.cascades)


def test_rates_and_residuals_ignore_a_common_phase(ch, cfg):
    rng = np.random.default_rng(11)
    for _ in range(10):
        phi = RisPhase.random(ch.n_ris, rng)
        w = _random_w(ch.n_tx, seed=int(rng.integers(1 << 30))) * 3.0
        turned = w * np.exp(1j * rng.uniform(0.0, 2.0 * np.pi))
        eff = stack_effective(ch, phi)
        for k in range(1, ch.n_pr + 1):
            assert primary_rate(eff, turned, cfg.noise_power, k) == pytest.approx(
                primary_rate(eff, w, cfg.noise_power, k), rel=1e-12
            )
        assert ber_constraint_residual(eff, turned, cfg) == pytest.approx(
            ber_constraint_residual(eff, w, cfg), rel=1e-10, abs=1e-10
        )
        a = check_feasibility(ch, phi, w, cfg)
        b = check_feasibility(ch, phi, turned, cfg)
        assert a.feasible == b.feasible
        assert a.residual_multiset(6) == b.residual_multiset(6)


def test_ber_residual_sign_matches_closed_form(make_cfg, make_channels):
    cfg = make_cfg(n_tx=3, n_ris=6, n_pr=1)
    rng = np.random.default_rng(12)
    outcomes = set()
    for draw in range(200):
        ch = make_channels(cfg, seed=1000 + draw)
        phi = RisPhase.random(ch.n_ris, rng)
        w = _random_w(ch.n_tx, seed=draw) * 10.0 ** rng.uniform(-1.0, 1.0)
        eff = stack_effective(ch, phi)
        s0, s1 = branch_variances(eff, w, cfg.noise_power)
        if abs(s1 / s0 - cfg.lambda_s) < 1e-6 * cfg.lambda_s:
            continue
        holds = ber_constraint_residual(eff, w, cfg) >= 0.0
        meets_target = s1 >= s0 and detector.ber_closed_form(s0, s1, cfg.t_symbols) <= cfg.ber_target
        assert holds == meets_target, f"draw {draw}: ratio {s1 / s0:.6g}"
        outcomes.add(holds)
    assert outcomes == {True, False}


def test_constructors_leave_caller_arrays_writeable(cfg, make_channels):
    source = make_channels(cfg, seed=2)
    h_pr = np.array(source.h_pr)
    g_mat = np.array(source.g_mat)
    ch = ChannelSet(
        h_pr=h_pr, h_brx=np.array(source.h_brx), g_mat=g_mat, g_pr=np.array(source.g_pr), g_brx=np.array(source.g_brx),
    )
    assert h_pr.flags.writeable and g_mat.flags.writeable
    h_pr[0, 0] = 0.0
    assert ch.h_pr[0, 0] == source.h_pr[0, 0]
    assert not ch.h_pr.flags.writeable

    phases = np.exp(1j * np.linspace(0.0, 1.0, cfg.n_ris))
    phi = RisPhase(phases)
    assert phases.flags.writeable
    phases[0] = 1j
    assert phi.phases[0] != 1j

    w = _random_w(cfg.n_tx)
    precoder = Precoder(w)
    assert w.flags.writeable
    w[0] = 0.0
    assert precoder.w[0] != 0.0

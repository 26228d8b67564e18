import csv
import math

import numpy as np
import pytest

from app.core.model import EffectiveChannels, RisPhase, check_feasibility, effective_channel
from app.core.solver import (
    TRACE_COLUMNS,
    PenaltyState,
    SolverOptions,
    build_phi_workspace,
    equality_violation,
    feasible_candidate,
    idsr_layout,
    initial_point,
    initial_rho,
    normalized_frame,
    penalty_objective,
    phi_objective,
    project_ber_pair,
    project_rate,
    restoration_scale,
    rotate_w_real,
    solve,
    solve_w,
    sweep_phi,
    update_auxiliaries,
    update_phi_element,
    update_q_ber,
    update_q_rate,
    update_w,
    write_trace_csv,
)


@pytest.fixture
def cfg(make_cfg):
    return make_cfg(n_tx=4, n_ris=8, n_pr=2)


@pytest.fixture
def ch(cfg, make_channels):
    return make_channels(cfg, seed=21)


def _random_state(ch, cfg, seed=0, rho=2.0, random_q=False):
    rng = np.random.default_rng(seed)
    layout = idsr_layout(ch, cfg)
    w = rng.standard_normal(ch.n_tx) + 1j * rng.standard_normal(ch.n_tx)
    phi = RisPhase.random(ch.n_ris, rng)
    q = None
    if random_q:
        q = rng.standard_normal(layout.n_rows) + 1j * rng.standard_normal(layout.n_rows)
    return PenaltyState.create(layout, w, phi, q=q, rho=rho)


def _ber_objective(proj):
    return abs(proj.q00 - proj.t0) ** 2 + (proj.q01 - proj.t1) ** 2


def _ber_grid_optimum(t0, t1, lambda_s, noise, points=20001):
    """Best feasible objective along q00 = r t0/|t0|, q01 >= 0 (t1 >= 0 assumed)."""
    mag = abs(t0)
    r = np.linspace(0.0, mag, points)
    boundary = np.sqrt(lambda_s * r * r + (lambda_s - 1.0) * noise)
    q01 = np.maximum(t1, boundary)
    return float(np.min((mag - r) ** 2 + (q01 - t1) ** 2))


# ---------------------------------------------------------------------------
# Penalty objective
# ---------------------------------------------------------------------------
def test_objective_without_gap_is_power(ch, cfg):
    state = _random_state(ch, cfg)
    assert penalty_objective(state) == pytest.approx(float(np.sum(np.abs(state.w) ** 2)), rel=1e-12)
    assert equality_violation(state) == pytest.approx(0.0, abs=1e-12)


def test_objective_at_zero_w(ch, cfg):
    state = _random_state(ch, cfg, random_q=True, rho=3.5)
    state.w = np.zeros(ch.n_tx, dtype=complex)
    assert penalty_objective(state) == pytest.approx(3.5 * float(np.sum(np.abs(state.q) ** 2)), rel=1e-12)


def test_objective_matches_naive_loop(ch, cfg):
    state = _random_state(ch, cfg, random_q=True, rho=1.7)
    phi = RisPhase(state.phi)
    total = float(np.sum(np.abs(state.w) ** 2))
    for i in (0, 1):
        for k in range(ch.n_pr + 1):
            e = effective_channel(ch, phi, k, i)
            total += 1.7 * abs(state.q[state.layout.row_of(k, i)] - np.vdot(e, state.w)) ** 2
    assert penalty_objective(state) == pytest.approx(total, rel=1e-12)


# ---------------------------------------------------------------------------
# Rate auxiliaries
# ---------------------------------------------------------------------------
def test_project_rate_examples():
    assert project_rate(2.0, 1.0) == 2.0
    expected = np.exp(1j * math.pi / 4)
    assert abs(project_rate(0.5 * expected, 1.0) - expected) < 1e-15
    assert project_rate(0.0, 4.0) == 2.0 + 0.0j


def test_project_rate_matches_polar_grid():
    rng = np.random.default_rng(5)
    theta = np.linspace(0.0, 2.0 * math.pi, 720, endpoint=False)
    for _ in range(200):
        floor = rng.uniform(0.5, 3.0)
        t = rng.uniform(0.0, 2.0 * math.sqrt(floor)) * np.exp(1j * rng.uniform(0.0, 2.0 * math.pi))
        q = project_rate(t, floor)
        assert abs(q) ** 2 >= floor * (1.0 - 1e-12)
        radii = np.linspace(math.sqrt(floor), math.sqrt(floor) + abs(t) + 1.0, 400)
        grid = radii[:, None] * np.exp(1j * theta)[None, :]
        assert abs(q - t) ** 2 <= float(np.min(np.abs(grid - t) ** 2)) + 1e-6


def test_update_q_rate_uses_current_targets(ch, cfg):
    state = _random_state(ch, cfg, random_q=True)
    row = state.layout.row_of(2, 1)
    t = complex(np.vdot(state.stack[:, row], state.w))
    assert update_q_rate(state, 2, 1) == project_rate(t, cfg.noise_power * cfg.gamma_p)
    assert state.q[row] == project_rate(t, cfg.noise_power * cfg.gamma_p)
    with pytest.raises(IndexError):
        update_q_rate(state, 0, 0)


# ---------------------------------------------------------------------------
# BER auxiliaries
# ---------------------------------------------------------------------------
def test_ber_projection_inactive():
    proj = project_ber_pair(0.0, 1.0, 2.0, 0.1)
    assert proj.lambda_t == 0.0
    assert (proj.q00, proj.q01) == (0.0, 1.0)


def test_ber_projection_active_boundary():
    proj = project_ber_pair(1.0, 1.0, 2.0, 1.0)
    assert 0.0 < proj.lambda_t < 1.0
    assert proj.c0 == pytest.approx(1.0 / (1.0 + 2.0 * proj.lambda_t))
    assert proj.c1 == pytest.approx(1.0 / (1.0 - proj.lambda_t))
    assert proj.q01 ** 2 - 2.0 * abs(proj.q00) ** 2 - 1.0 == pytest.approx(0.0, abs=1e-10)
    assert _ber_objective(proj) <= _ber_grid_optimum(1.0, 1.0, 2.0, 1.0) + 1e-6


def test_ber_projection_fallback_branch():
    proj = project_ber_pair(1.0, 0.0, 2.0, 0.01)
    assert proj.fallback
    assert proj.q01 ** 2 >= 2.0 * abs(proj.q00) ** 2 + 0.01 - 1e-12
    assert _ber_objective(proj) <= _ber_grid_optimum(1.0, 0.0, 2.0, 0.01) + 1e-6


def test_ber_projection_matches_grid_oracle():
    rng = np.random.default_rng(17)
    for _ in range(200):
        t0 = rng.uniform(0.0, 3.0) * np.exp(1j * rng.uniform(0.0, 2.0 * math.pi))
        t1 = rng.uniform(0.0, 3.0)
        lambda_s = rng.uniform(1.05, 10.0)
        noise = rng.uniform(0.01, 2.0)
        proj = project_ber_pair(t0, t1, lambda_s, noise)
        scale = t1 * t1 + lambda_s * abs(t0) ** 2 + noise
        assert proj.q01 ** 2 >= lambda_s * abs(proj.q00) ** 2 + (lambda_s - 1.0) * noise - 1e-10 * scale
        assert _ber_objective(proj) <= _ber_grid_optimum(t0, t1, lambda_s, noise) + 1e-6


def test_update_q_ber_writes_the_pair(ch, cfg):
    state = _random_state(ch, cfg, random_q=True)
    rotated = rotate_w_real(state)
    state.w = np.array(rotated.w)
    q00, q01 = update_q_ber(state)
    pair = state.layout.ber
    assert state.q[pair.weak] == q00
    assert state.q[pair.strong] == q01
    assert q01 ** 2 >= cfg.lambda_s * abs(q00) ** 2 + (cfg.lambda_s - 1.0) * cfg.noise_power - 1e-9


def test_update_q_ber_needs_a_ber_pair(make_cfg, make_channels):
    cfg = make_cfg(ber_target=0.5)
    state = _random_state(make_channels(cfg), cfg)
    assert state.layout.ber is None
    with pytest.raises(ValueError):
        update_q_ber(state)


# ---------------------------------------------------------------------------
# Rotation
# ---------------------------------------------------------------------------
def test_rotation_makes_strong_inner_product_real(ch, cfg):
    state = _random_state(ch, cfg)
    strong = state.layout.ber.strong
    before = np.abs(state.stack.conj().T @ state.w)
    rotated = rotate_w_real(state)
    t = complex(np.vdot(state.stack[:, strong], rotated.w))
    assert abs(t.imag) <= 1e-12 * abs(t)
    assert t.real >= 0.0
    assert rotated.power == pytest.approx(float(np.sum(np.abs(state.w) ** 2)), rel=1e-12)
    assert np.allclose(np.abs(state.stack.conj().T @ rotated.w), before, rtol=1e-12)

    state.w = np.array(rotated.w)
    assert np.allclose(rotate_w_real(state).w, rotated.w, atol=1e-14)


# ---------------------------------------------------------------------------
# w block
# ---------------------------------------------------------------------------
def _w_objective(stack, q, rho, w):
    gap = q - stack.conj().T @ w
    return float(np.real(np.vdot(w, w)) + rho * np.real(np.vdot(gap, gap)))


def test_update_w_zero_channels():
    eff = EffectiveChannels(branch=(np.zeros((3, 2), dtype=complex), np.zeros((3, 2), dtype=complex)))
    w = update_w(eff, np.ones(2), np.ones(2), 4.0)
    assert np.array_equal(w.w, np.zeros(3, dtype=complex))


def test_update_w_scalar_closed_form():
    h0, h1, q0, q1, rho = 0.8 - 0.3j, -1.1 + 0.4j, 0.5 + 0.2j, 1.3 - 0.7j, 2.5
    eff = EffectiveChannels(branch=(np.array([[h0]]), np.array([[h1]])))
    w = update_w(eff, np.array([q0]), np.array([q1]), rho)
    expected = rho * (h0 * q0 + h1 * q1) / (1.0 + rho * (abs(h0) ** 2 + abs(h1) ** 2))
    assert w.w[0] == pytest.approx(expected, rel=1e-12)


def test_update_w_is_the_block_minimizer(ch, cfg):
    state = _random_state(ch, cfg, random_q=True, rho=5.0)
    w = update_w(state.eff, state.q0, state.q1, state.rho).w
    stack = state.stack
    gram = stack @ stack.conj().T + np.eye(ch.n_tx) / state.rho
    rhs = stack @ state.q
    assert np.linalg.norm(gram @ w - rhs) <= 1e-10 * np.linalg.norm(rhs)

    base = _w_objective(stack, state.q, state.rho, w)
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = rng.standard_normal(ch.n_tx) + 1j * rng.standard_normal(ch.n_tx)
        d *= 1e-3 / np.linalg.norm(d)
        assert _w_objective(stack, state.q, state.rho, w + d) > base


def test_solve_w_push_through_form_matches_dense():
    rng = np.random.default_rng(8)
    stack = rng.standard_normal((8, 4)) + 1j * rng.standard_normal((8, 4))
    q = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    dense = np.linalg.solve(stack @ stack.conj().T + np.eye(8) / 3.0, stack @ q)
    assert np.allclose(solve_w(stack, q, 3.0), dense, rtol=1e-10, atol=1e-12)
    with pytest.raises(ValueError):
        solve_w(stack, q, 0.0)


# ---------------------------------------------------------------------------
# phi block
# ---------------------------------------------------------------------------
def test_phi_element_beats_phase_grid(ch, cfg):
    state = _random_state(ch, cfg, random_q=True, rho=2.0)
    ws = build_phi_workspace(state)
    n = 3
    others = state.phi.copy()
    others[n] = 0.0
    base = ws.a_t.T @ others - ws.b
    theta = np.arange(0.0, 2.0 * math.pi, 1e-3)
    candidates = base[None, :] + np.exp(1j * theta)[:, None] * ws.a_t[n][None, :]
    grid_best = float(np.min(np.sum(np.abs(candidates) ** 2, axis=1)))

    value = update_phi_element(ch, state, n)
    assert abs(abs(value) - 1.0) <= 1e-12
    assert state.phi[n] == value
    achieved = phi_objective(state)
    assert achieved <= grid_best + 1e-9 * (1.0 + abs(grid_best))


def test_phi_element_keeps_phase_without_ris_path(cfg, make_channels):
    ch = make_channels(cfg, seed=2).without_ris()
    state = _random_state(ch, cfg)
    before = state.phi.copy()
    assert update_phi_element(ch, state, 0) == before[0]
    with pytest.raises(IndexError):
        update_phi_element(ch, state, ch.n_ris)


def test_element_updates_are_monotone(ch, cfg):
    state = _random_state(ch, cfg, random_q=True)
    values = [phi_objective(state)]
    for n in range(ch.n_ris):
        update_phi_element(ch, state, n)
        values.append(phi_objective(state))
    for a, b in zip(values, values[1:]):
        assert b <= a + 1e-9 * (1.0 + abs(a))


def test_sweep_keeps_incremental_residual_exact(ch, cfg):
    state = _random_state(ch, cfg, random_q=True)
    before = phi_objective(state)
    phase = sweep_phi(ch, state)
    assert phase.max_modulus_error() <= 1e-12
    rebuilt = build_phi_workspace(state).residual
    assert np.allclose(state.workspace.residual, rebuilt, rtol=0.0, atol=1e-10 * (1.0 + np.linalg.norm(rebuilt)))
    assert phi_objective(state) <= before + 1e-9 * (1.0 + before)


def test_single_element_sweep_equals_element_update(make_cfg, make_channels):
    cfg = make_cfg(n_ris=1)
    ch = make_channels(cfg, seed=4)
    a = _random_state(ch, cfg, random_q=True, seed=3)
    b = _random_state(ch, cfg, random_q=True, seed=3)
    sweep_phi(ch, a)
    update_phi_element(ch, b, 0)
    assert np.allclose(a.phi, b.phi, atol=1e-15)


# ---------------------------------------------------------------------------
# Full solve
# ---------------------------------------------------------------------------
@pytest.fixture
def small_problem(make_cfg, make_channels):
    cfg = make_cfg(n_tx=2, n_ris=4, n_pr=1)
    return make_channels(cfg, seed=1, direct_scale=3.0, ris_scale=3.0), cfg


def test_solve_small_instance(small_problem):
    ch, cfg = small_problem
    opts = SolverOptions()
    result = solve(ch, cfg, opts)
    assert result.converged
    assert result.feasible
    assert result.eq_violation < opts.eps_outer
    assert result.power > 0.0
    assert result.phi.max_modulus_error() <= 1e-12
    assert 0 < len(result.trace) <= opts.max_outer * opts.max_inner
    assert check_feasibility(ch, result.phi, result.w, cfg, tol=10 * opts.eps_outer).feasible


def test_solve_is_deterministic(small_problem):
    ch, cfg = small_problem
    first = solve(ch, cfg, SolverOptions(seed=4))
    second = solve(ch, cfg, SolverOptions(seed=4))
    assert np.array_equal(first.w.w, second.w.w)
    assert np.array_equal(first.phi.phases, second.phi.phases)


def test_sign_flipped_design_stays_feasible(small_problem):
    ch, cfg = small_problem
    phi_init = RisPhase.random(ch.n_ris, np.random.default_rng(9))
    result = solve(ch, cfg, SolverOptions(), phi_init=-phi_init)
    assert result.feasible
    flipped = check_feasibility(ch, -result.phi, result.w, cfg)
    assert flipped.feasible
    assert flipped.power == pytest.approx(result.power, rel=1e-6)


def test_other_branch_is_also_feasible(small_problem):
    ch, cfg = small_problem
    result = solve(ch, cfg, SolverOptions(), branch=0)
    assert result.feasible
    with pytest.raises(ValueError):
        solve(ch, cfg, SolverOptions(), branch=2)


def test_blocks_never_increase_the_penalty(make_cfg, make_channels):
    cfg = make_cfg(n_tx=4, n_ris=32, n_pr=2)
    opts = SolverOptions(max_outer=4, max_inner=15)
    floor = cfg.noise_power * cfg.gamma_p
    for seed in range(20):
        ch = make_channels(cfg, seed=100 + seed, ris_scale=0.5)
        events = []

        def observer(block, state):
            events.append((block, state.rho, penalty_objective(state)))
            if block in ("init", "q"):
                layout = state.layout
                rate_rows = [j for j in range(layout.n_rows) if layout.active[j] and layout.floor[j] > 0]
                assert np.all(np.abs(state.q[rate_rows]) ** 2 >= floor * (1.0 - 1e-10))
                pair = layout.ber
                q00, q01 = state.q[pair.weak], state.q[pair.strong]
                bound = pair.lambda_s * abs(q00) ** 2 + (pair.lambda_s - 1.0) * pair.noise_power
                assert q01.real ** 2 >= bound - 1e-10 * (1.0 + bound)
            if block == "phi":
                assert np.max(np.abs(np.abs(state.phi) - 1.0)) <= 1e-12

        solve(ch, cfg, opts, observer=observer)
        assert events[0][0] == "init"
        for (_, rho_a, a), (block, rho_b, b) in zip(events, events[1:]):
            if rho_a == rho_b:
                assert b <= a + 1e-9 * (1.0 + abs(a)), f"seed {seed}: {block} increased the penalty"


def test_restoration_scale_bounds(small_problem):
    ch, cfg = small_problem
    result = solve(ch, cfg, SolverOptions())
    layout = idsr_layout(ch, cfg)
    stack = layout.effective(result.phi.phases)
    assert restoration_scale(layout, stack, result.w.w) == 1.0
    assert math.isinf(restoration_scale(layout, stack, np.zeros(ch.n_tx, dtype=complex)))


def test_initial_rho_is_relative_to_the_starting_point(small_problem):
    ch, cfg = small_problem
    layout = idsr_layout(ch, cfg)
    w, phi = initial_point(layout, np.random.default_rng(0), None)
    state = PenaltyState.create(layout, w, phi)
    update_auxiliaries(state)
    q = state.q[layout.active]
    expected = 0.5 * np.vdot(w, w).real / np.vdot(q, q).real
    assert initial_rho(state, 0.5) == pytest.approx(expected, rel=1e-12)

    zero = PenaltyState.create(layout, np.zeros(ch.n_tx), phi)
    assert initial_rho(zero, 0.5) == 0.5


def test_penalty_starts_at_rho_start_and_grows_after_each_stage(small_problem):
    ch, cfg = small_problem
    opts = SolverOptions(max_outer=4, max_inner=3, eps_outer=1e-14, seed=2)
    result = solve(ch, cfg, opts)

    norm_ch, norm_cfg = normalized_frame(ch, cfg)
    layout = idsr_layout(norm_ch, norm_cfg)
    w, phi = initial_point(layout, np.random.default_rng(opts.seed), None)
    state = PenaltyState.create(layout, w, phi)
    update_auxiliaries(state)
    rho_start = initial_rho(state, opts.rho_init)

    stage_rho = {}
    for record in result.trace:
        stage_rho.setdefault(record.outer_iter, record.rho)
        assert record.rho == stage_rho[record.outer_iter]
    assert result.diagnostics["rho_start"] == pytest.approx(rho_start, rel=1e-12)
    assert stage_rho[1] == pytest.approx(rho_start, rel=1e-12)
    stages = sorted(stage_rho)
    assert len(stages) == result.outer_iterations
    for a, b in zip(stages, stages[1:]):
        assert stage_rho[b] == pytest.approx(stage_rho[a] * opts.rho_growth, rel=1e-12)


def test_returns_the_cheapest_restored_iterate(make_cfg, make_channels):
    cfg = make_cfg(n_tx=4, n_ris=16, n_pr=2)
    for seed in range(5):
        ch = make_channels(cfg, seed=40 + seed, ris_scale=0.5)
        powers = []

        def observer(block, state):
            if block in ("init", "w"):
                candidate = feasible_candidate(state.layout, state.stack, state.w, state.phi, 0)
                if candidate is not None:
                    powers.append(candidate.power)

        result = solve(ch, cfg, SolverOptions(seed=seed), observer=observer)
        assert powers
        assert result.feasible
        assert result.power == pytest.approx(min(powers), rel=1e-9)


def test_warm_start_from_own_design_never_ends_worse(small_problem):
    ch, cfg = small_problem
    opts = SolverOptions(seed=3)
    first = solve(ch, cfg, opts)
    assert first.feasible
    again = solve(ch, cfg, opts, phi_init=first.phi, w_init=first.w)
    assert again.feasible
    assert again.power <= first.power * (1.0 + 1e-9)


def test_warm_start_size_is_checked(small_problem):
    ch, cfg = small_problem
    with pytest.raises(ValueError, match="w_init"):
        solve(ch, cfg, SolverOptions(), w_init=np.ones(ch.n_tx + 1, dtype=complex))


def test_layout_rows(ch, cfg, make_cfg):
    layout = idsr_layout(ch, cfg)
    assert layout.n_rows == 2 * (ch.n_pr + 1)
    assert layout.row_of(0, 1) == ch.n_pr + 1
    assert layout.ber.strong == layout.row_of(0, 1)
    with pytest.raises(IndexError):
        layout.row_of(ch.n_pr + 1, 0)
    relaxed = idsr_layout(ch, make_cfg(ber_target=0.5))
    assert relaxed.ber is None
    assert not relaxed.active[relaxed.row_of(0, 0)] and not relaxed.active[relaxed.row_of(0, 1)]


@pytest.mark.parametrize(
    "kwargs",
    [{"rho_init": 0.0}, {"rho_growth": 1.0}, {"eps_inner": 0.0}, {"eps_outer": -1.0}, {"max_outer": 0}, {"stall_window": 0}],
)
def test_solver_options_validation(kwargs):
    with pytest.raises(ValueError):
        SolverOptions(**kwargs)


def test_trace_csv(small_problem, tmp_path):
    ch, cfg = small_problem
    result = solve(ch, cfg, SolverOptions(max_outer=2, max_inner=3))
    path = write_trace_csv(result.trace, tmp_path / "trace.csv")
    with path.open(newline="") as handle:
        rows = list(csv.reader(handle))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == len(result.trace) + 1
    assert [int(r[0]) for r in rows[1:]] == [rec.outer_iter for rec in result.trace]

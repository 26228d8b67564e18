"""Penalty-based block coordinate descent for joint beamformer / RIS design.

The engine works on a ``ProblemLayout``: M constraint rows, row ``j`` having
the effective channel

    e_j = d_j + s_j * G diag(g_{m_j}) phi,      s_j in {-1, 0, +1}

and an auxiliary ``q_j`` that the quadratic penalty ties to ``e_j^H w``.
Rows carry a magnitude floor ``|q_j|^2 >= floor_j``; at most one pair of rows
forms the BER constraint ``q_strong^2 >= lambda_s |q_weak|^2 + (lambda_s-1) noise``.
The proposed system and all baselines are layouts over the same loop:

    project auxiliaries; rho <- rho_init ||w||^2 / ||q||^2
    repeat                                  (outer)
        repeat                              (inner)
            rotate w (and q) so e_strong^H w is real >= 0
            project auxiliaries             (closed forms)
            sweep phi element by element    (unit-modulus coordinate minimizer)
            solve for w                     (positive-definite linear system)
        until relative change < eps_inner
        rho <- c_rho * rho
    until max |q - E^H w| < eps_outer

Every iterate is restored to feasibility by scaling w and the cheapest one
is returned.

``solve`` runs the proposed system in the noise-normalized frame (channels
divided by delta), so auxiliaries and eps_outer are in sqrt(SNR) units while
the transmit power is unaffected.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from app.core.model import (
    ChannelSet,
    EffectiveChannels,
    FeasibilityReport,
    Precoder,
    PrecoderLike,
    RisPhase,
    SystemConfig,
    as_vector,
    check_feasibility,
)
from app.core.specfun import ToleranceSpec, find_root_monotone

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("outer_iter", "inner_iter", "rho", "penalty_objective", "transmit_power", "eq_violation_inf")
LAMBDA_T_MAX = 1.0 - 1e-12
_RESTORE_MARGIN = 1.0 + 1e-12

Observer = Callable[[str, "PenaltyState"], None]
Checker = Callable[[RisPhase, Precoder], FeasibilityReport]


# ---------------------------------------------------------------------------
# Options and results
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SolverOptions:
    rho_init: float = 1.0
    rho_growth: float = 3.0
    eps_inner: float = 1e-4
    eps_outer: float = 1e-4
    max_outer: int = 30
    max_inner: int = 200
    seed: int = 0
    stall_window: int = 5
    feasibility_tol: float = 1e-6

    def __post_init__(self) -> None:
        if not self.rho_init > 0:
            raise ValueError(f"rho_init must be > 0, got {self.rho_init}")
        if not self.rho_growth > 1:
            raise ValueError(f"rho_growth must be > 1, got {self.rho_growth}")
        if not (self.eps_inner > 0 and self.eps_outer > 0):
            raise ValueError("eps_inner and eps_outer must be > 0")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("max_outer and max_inner must be >= 1")
        if self.stall_window < 1:
            raise ValueError("stall_window must be >= 1")


@dataclass(frozen=True)
class TraceRecord:
    outer_iter: int
    inner_iter: int
    rho: float
    penalty_objective: float
    transmit_power: float
    eq_violation_inf: float

    def as_row(self) -> Tuple[Any, ...]:
        return tuple(getattr(self, name) for name in TRACE_COLUMNS)


@dataclass
class SolveResult:
    system: str
    w: Precoder
    phi: RisPhase
    power: float
    report: FeasibilityReport
    trace: List[TraceRecord]
    status: str
    outer_iterations: int
    inner_iterations: int
    eq_violation: float
    restore_scale: float = 1.0
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def feasible(self) -> bool:
        return self.report.feasible


def write_trace_csv(trace: Sequence[TraceRecord], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for record in trace:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in record.as_row()])
    return path


# ---------------------------------------------------------------------------
# Layout
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class BerPair:
    strong: int
    weak: int
    lambda_s: float
    noise_power: float


@dataclass(frozen=True)
class ProblemLayout:
    name: str
    channels: ChannelSet
    direct: np.ndarray          # (N_t, M)
    cascade_index: np.ndarray   # (M,), receiver whose cascade the row uses
    sign: np.ndarray            # (M,), 0 for rows without a RIS path
    floor: np.ndarray           # (M,), |q_j|^2 >= floor_j
    active: np.ndarray          # (M,) bool, inactive rows never enter the penalty
    ber: Optional[BerPair]
    init_rows: Tuple[int, ...]
    init_direction: np.ndarray  # (N_t,)
    blocks: Tuple[slice, ...]
    labels: Tuple[str, ...]
    n_receivers: int = 0

    @property
    def n_rows(self) -> int:
        return int(self.direct.shape[1])

    @property
    def uses_ris(self) -> bool:
        return bool(np.any(self.sign[self.active] != 0))

    def effective(self, phi: np.ndarray) -> np.ndarray:
        """Effective channels as columns, (N_t, M)."""
        reflected = np.einsum("knm,m->kn", self.channels.cascades, phi)
        return self.direct + (reflected[self.cascade_index] * self.sign[:, None]).T

    def row_of(self, k: int, i: int) -> int:
        if self.n_receivers == 0:
            raise ValueError(f"layout '{self.name}' has no (receiver, branch) indexing")
        if i not in (0, 1) or not 0 <= k < self.n_receivers:
            raise IndexError(f"(k={k}, i={i}) outside layout '{self.name}'")
        return i * self.n_receivers + k


def idsr_layout(ch: ChannelSet, cfg: SystemConfig, branch: int = 1) -> ProblemLayout:
    """Rows j = i*(K+1) + k for branch i and receiver k (k = 0 is the BRx).

    ``branch`` selects which orientation of the BER test is imposed: 1 means
    sigma1^2 >= lambda_s sigma0^2.  With lambda_s = 1 either orientation always
    holds, so the BRx rows are dropped from the penalty.
    """
    if branch not in (0, 1):
        raise ValueError(f"branch must be 0 or 1, got {branch}")
    n_rx = ch.n_pr + 1
    direct = np.hstack([ch.direct, ch.direct])
    index = np.concatenate([np.arange(n_rx), np.arange(n_rx)])
    sign = np.concatenate([-np.ones(n_rx), np.ones(n_rx)])
    floor = np.full(2 * n_rx, cfg.noise_power * cfg.gamma_p)
    floor[[0, n_rx]] = 0.0
    active = np.ones(2 * n_rx, dtype=bool)

    ber: Optional[BerPair] = None
    if cfg.lambda_s > 1.0:
        strong, weak = (n_rx, 0) if branch == 1 else (0, n_rx)
        ber = BerPair(strong=strong, weak=weak, lambda_s=cfg.lambda_s, noise_power=cfg.noise_power)
    else:
        active[[0, n_rx]] = False

    # initial power: weakest PR of the branch that the BER test treats as weak
    init_branch = 1 - branch
    init_rows = tuple(init_branch * n_rx + k for k in range(1, n_rx))
    labels = tuple(f"k={k},i={i}" for i in (0, 1) for k in range(n_rx))
    return ProblemLayout(
        name="IDSR",
        channels=ch,
        direct=direct,
        cascade_index=index,
        sign=sign,
        floor=floor,
        active=active,
        ber=ber,
        init_rows=init_rows,
        init_direction=ch.h_pr.sum(axis=0),
        blocks=(slice(0, n_rx), slice(n_rx, 2 * n_rx)),
        labels=labels,
        n_receivers=n_rx,
    )


# ---------------------------------------------------------------------------
# Solver state
# ---------------------------------------------------------------------------
@dataclass
class PhiWorkspace:
    """A_phi stored transposed (N_r, M), squared column norms and e = A phi - b."""

    a_t: np.ndarray
    col_norm2: np.ndarray
    residual: np.ndarray
    b: np.ndarray


@dataclass
class PenaltyState:
    layout: ProblemLayout
    w: np.ndarray
    phi: np.ndarray
    q: np.ndarray
    rho: float
    stack: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    workspace: Optional[PhiWorkspace] = field(repr=False, default=None)

    @classmethod
    def create(
        cls,
        layout: ProblemLayout,
        w: Any,
        phi: Any,
        q: Optional[Any] = None,
        rho: float = 1.0,
    ) -> "PenaltyState":
        w_vec = np.array(w.w if isinstance(w, Precoder) else w, dtype=complex).reshape(-1)
        phi_vec = np.array(phi.phases if isinstance(phi, RisPhase) else phi, dtype=complex).reshape(-1)
        if w_vec.size != layout.channels.n_tx:
            raise ValueError(f"w has {w_vec.size} entries, expected N_t={layout.channels.n_tx}")
        if phi_vec.size != layout.channels.n_ris:
            raise ValueError(f"phi has {phi_vec.size} entries, expected N_r={layout.channels.n_ris}")
        if not rho > 0:
            raise ValueError(f"rho must be > 0, got {rho}")
        state = cls(layout=layout, w=w_vec, phi=phi_vec, q=np.zeros(layout.n_rows, dtype=complex), rho=float(rho))
        state.refresh_stack()
        if q is None:
            state.q = state.targets()
        else:
            state.q = np.array(q, dtype=complex).reshape(-1)
            if state.q.size != layout.n_rows:
                raise ValueError(f"q has {state.q.size} entries, expected {layout.n_rows}")
        return state

    def refresh_stack(self) -> None:
        self.stack = self.layout.effective(self.phi)
        self.workspace = None

    def targets(self) -> np.ndarray:
        """E^H w for every row."""
        return self.stack.conj().T @ self.w

    @property
    def q0(self) -> np.ndarray:
        return self.q[self.layout.blocks[0]]

    @property
    def q1(self) -> np.ndarray:
        return self.q[self.layout.blocks[1]]

    @property
    def eff(self) -> EffectiveChannels:
        n_rx = self.layout.n_receivers
        return EffectiveChannels(branch=(self.stack[:, :n_rx], self.stack[:, n_rx:2 * n_rx]))

    @property
    def precoder(self) -> Precoder:
        return Precoder(self.w)

    @property
    def ris_phase(self) -> RisPhase:
        return RisPhase(self.phi)


def penalty_objective(state: PenaltyState) -> float:
    gap = (state.q - state.targets())[state.layout.active]
    return float(np.real(np.vdot(state.w, state.w)) + state.rho * np.real(np.vdot(gap, gap)))


def equality_violation(state: PenaltyState) -> float:
    gap = (state.q - state.targets())[state.layout.active]
    return float(np.max(np.abs(gap))) if gap.size else 0.0


# ---------------------------------------------------------------------------
# Auxiliary blocks
# ---------------------------------------------------------------------------
def project_rate(t: complex, floor: float) -> complex:
    """Closest q to t with |q|^2 >= floor (projection onto a disk complement)."""
    radius = math.sqrt(floor)
    mag = abs(t)
    if mag == 0.0:
        return complex(radius, 0.0)
    return complex(t) * max(1.0, radius / mag)


def update_q_rate(state: PenaltyState, k: int, i: int) -> complex:
    if k < 1:
        raise IndexError(f"rate auxiliaries exist for PRs k >= 1, got k={k}")
    row = state.layout.row_of(k, i)
    t = complex(np.vdot(state.stack[:, row], state.w))
    state.q[row] = project_rate(t, float(state.layout.floor[row]))
    state.workspace = None
    return complex(state.q[row])


@dataclass(frozen=True)
class BerProjectionWorkspace:
    t0: complex
    t1: float
    c0: float
    c1: float
    lambda_t: float
    q00: complex
    q01: float
    fallback: bool = False


def project_ber_pair(t0: complex, t1: float, lambda_s: float, noise_power: float) -> BerProjectionWorkspace:
    """Closest (q00, q01 real) to (t0, t1) with q01^2 >= lambda_s |q00|^2 + (lambda_s-1) noise.

    Active constraints are solved through the scalings c0 = 1/(1 + lambda_t lambda_s),
    c1 = 1/(1 - lambda_t) with lambda_t the root of the constraint in [0, 1).
    """
    t0 = complex(t0)
    t1 = float(t1)
    a0_sq = abs(t0) ** 2
    offset = (lambda_s - 1.0) * noise_power

    def slack(lam: float) -> float:
        c0 = 1.0 / (1.0 + lam * lambda_s)
        c1 = 1.0 / (1.0 - lam)
        return c1 * c1 * t1 * t1 - lambda_s * c0 * c0 * a0_sq - offset

    if slack(0.0) >= 0.0:
        return BerProjectionWorkspace(t0=t0, t1=t1, c0=1.0, c1=1.0, lambda_t=0.0, q00=t0, q01=t1)

    if t1 == 0.0 or slack(LAMBDA_T_MAX) <= 0.0:
        # the scaling q01 = c1 t1 cannot reach the boundary; minimize along
        # q00 = r t0/|t0|, q01 = sqrt(lambda_s r^2 + offset) instead
        mag = math.sqrt(a0_sq)
        r = mag / (1.0 + lambda_s)
        direction = t0 / mag if mag > 0.0 else 1.0 + 0.0j
        q00 = r * direction
        q01 = math.sqrt(lambda_s * r * r + offset)
        return BerProjectionWorkspace(
            t0=t0, t1=t1, c0=r / mag if mag > 0.0 else 0.0, c1=math.inf,
            lambda_t=1.0, q00=q00, q01=math.copysign(q01, t1) if t1 else q01, fallback=True,
        )

    scale = t1 * t1 + lambda_s * a0_sq + abs(offset)
    tol = ToleranceSpec(abs_tol=1e-15 * scale, rel_tol=1e-15, max_iter=400)
    lam = find_root_monotone(slack, 0.0, LAMBDA_T_MAX, tol)
    c0 = 1.0 / (1.0 + lam * lambda_s)
    c1 = 1.0 / (1.0 - lam)
    q00 = c0 * t0
    boundary = math.sqrt(lambda_s * abs(q00) ** 2 + offset)
    q01 = math.copysign(max(c1 * abs(t1), boundary), t1)
    return BerProjectionWorkspace(t0=t0, t1=t1, c0=c0, c1=c1, lambda_t=lam, q00=q00, q01=q01)


def update_q_ber(state: PenaltyState) -> Tuple[complex, float]:
    pair = state.layout.ber
    if pair is None:
        raise ValueError(f"layout '{state.layout.name}' has no BER constraint")
    t0 = complex(np.vdot(state.stack[:, pair.weak], state.w))
    t1 = float(np.real(np.vdot(state.stack[:, pair.strong], state.w)))
    proj = project_ber_pair(t0, t1, pair.lambda_s, pair.noise_power)
    state.q[pair.weak] = proj.q00
    state.q[pair.strong] = proj.q01
    state.workspace = None
    return proj.q00, proj.q01


def update_auxiliaries(state: PenaltyState) -> None:
    layout = state.layout
    targets = state.targets()
    for j in range(layout.n_rows):
        if not layout.active[j]:
            state.q[j] = targets[j]
        elif layout.floor[j] > 0.0:
            state.q[j] = project_rate(targets[j], float(layout.floor[j]))
        else:
            state.q[j] = targets[j]
    if layout.ber is not None:
        update_q_ber(state)
    state.workspace = None


def _rotation_factor(state: PenaltyState) -> complex:
    pair = state.layout.ber
    if pair is None:
        return 1.0 + 0.0j
    t = complex(np.vdot(state.stack[:, pair.strong], state.w))
    if t == 0.0:
        return 1.0 + 0.0j
    return t.conjugate() / abs(t)


def rotate_w_real(state: PenaltyState) -> Precoder:
    """w e^{-j arg(h_E,0(1)^H w)}: makes the BER-strong inner product real >= 0."""
    return Precoder(state.w * _rotation_factor(state))


def _apply_rotation(state: PenaltyState) -> None:
    # rotating q along with w leaves every penalty term unchanged
    factor = _rotation_factor(state)
    if factor != 1.0:
        state.w = state.w * factor
        state.q = state.q * factor
        state.workspace = None


# ---------------------------------------------------------------------------
# w block
# ---------------------------------------------------------------------------
def _pd_solve(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        factor = linalg.cho_factor(gram, lower=False, check_finite=False)
        return linalg.cho_solve(factor, rhs, check_finite=False)
    except linalg.LinAlgError:
        log.debug("Cholesky failed on a near-singular Gram matrix; using least squares")
        return linalg.lstsq(gram, rhs, check_finite=False)[0]


def solve_w(stack: np.ndarray, q: np.ndarray, rho: float) -> np.ndarray:
    """Minimizer of ||w||^2 + rho ||q - E^H w||^2.

    Uses (E E^H + I/rho) w = E q, or its push-through form
    w = E (E^H E + I/rho)^{-1} q when E has fewer columns than rows.
    """
    if not rho > 0:
        raise ValueError(f"rho must be > 0, got {rho}")
    n_tx, n_rows = stack.shape
    if n_rows == 0:
        return np.zeros(n_tx, dtype=complex)
    ridge = 1.0 / rho
    if n_rows < n_tx:
        gram = stack.conj().T @ stack + ridge * np.eye(n_rows)
        return stack @ _pd_solve(gram, q)
    gram = stack @ stack.conj().T + ridge * np.eye(n_tx)
    return _pd_solve(gram, stack @ q)


def update_w(eff: EffectiveChannels, q0: np.ndarray, q1: np.ndarray, rho: float) -> Precoder:
    stack = eff.stacked()
    q = np.concatenate([np.asarray(q0, dtype=complex), np.asarray(q1, dtype=complex)])
    return Precoder(solve_w(stack, q, rho))


def _update_w_state(state: PenaltyState) -> None:
    active = state.layout.active
    state.w = solve_w(state.stack[:, active], state.q[active], state.rho)
    state.workspace = None


# ---------------------------------------------------------------------------
# phi block
# ---------------------------------------------------------------------------
def build_phi_workspace(state: PenaltyState) -> PhiWorkspace:
    """A[j, n] = s_j (w^H G)_n g_{m_j, n},  b_j = conj(q_j) - w^H d_j.

    With these, |q_j - e_j^H w| = |(A phi - b)_j| for every row.
    """
    layout = state.layout
    ch = layout.channels
    v = state.w.conj() @ ch.g_mat
    weights = (ch.reflect[layout.cascade_index] * (layout.sign * layout.active)[:, None]).T
    a_t = v[:, None] * weights
    b = (state.q.conj() - state.w.conj() @ layout.direct) * layout.active
    residual = a_t.T @ state.phi - b
    col_norm2 = np.real(np.einsum("nj,nj->n", a_t.conj(), a_t))
    return PhiWorkspace(a_t=a_t, col_norm2=col_norm2, residual=residual, b=b)


def _phi_step(ws: PhiWorkspace, phi: np.ndarray, n: int) -> complex:
    a = ws.a_t[n]
    old = phi[n]
    # a^H c with c = b - A phi_{-n} = -residual + a phi_n
    z = ws.col_norm2[n] * old - np.vdot(a, ws.residual)
    if z == 0:
        return complex(old)
    new = z / abs(z)
    if new != old:
        ws.residual += a * (new - old)
        phi[n] = new
    return complex(new)


def update_phi_element(ch: ChannelSet, state: PenaltyState, n: int) -> complex:
    """Unit-modulus minimizer over phi_n with all other entries fixed (0-based n)."""
    if ch.n_ris != state.layout.channels.n_ris:
        raise ValueError("channel set does not match the solver state")
    if not 0 <= n < state.phi.size:
        raise IndexError(f"RIS element index must be in 0..{state.phi.size - 1}, got {n}")
    ws = state.workspace or build_phi_workspace(state)
    value = _phi_step(ws, state.phi, n)
    state.stack = state.layout.effective(state.phi)
    state.workspace = ws
    return value


def sweep_phi(ch: ChannelSet, state: PenaltyState) -> RisPhase:
    """One sequential pass n = 0..N_r-1 with O(M) residual maintenance per element."""
    if ch.n_ris != state.layout.channels.n_ris:
        raise ValueError("channel set does not match the solver state")
    ws = build_phi_workspace(state)
    phi = state.phi
    for n in range(phi.size):
        _phi_step(ws, phi, n)
    state.phi = phi / np.abs(phi)
    state.stack = state.layout.effective(state.phi)
    state.workspace = ws
    return RisPhase(state.phi)


def phi_objective(state: PenaltyState) -> float:
    """||A phi - b||^2 recomputed from scratch."""
    ws = build_phi_workspace(state)
    return float(np.real(np.vdot(ws.residual, ws.residual)))


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------
def initial_point(
    layout: ProblemLayout,
    rng: np.random.Generator,
    phi_init: Optional[RisPhase],
    w_init: Optional[PrecoderLike] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Random phases and a matched-filter w scaled so the weakest init row sits on its floor.

    ``w_init`` replaces the matched filter (warm start from another design).
    """
    n_tx = layout.channels.n_tx
    if phi_init is not None:
        phi = np.array(phi_init.phases, dtype=complex)
    else:
        phi = RisPhase.random(layout.channels.n_ris, rng).phases.copy()
    if w_init is not None:
        w = np.array(as_vector(w_init), dtype=complex)
        if w.size != n_tx:
            raise ValueError(f"w_init has {w.size} entries, expected N_t={n_tx}")
        return w, phi

    direction = np.array(layout.init_direction, dtype=complex)
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        direction = np.zeros(n_tx, dtype=complex)
        direction[0] = 1.0
    else:
        direction = direction / norm

    rows = [j for j in layout.init_rows if layout.floor[j] > 0.0]
    if rows:
        stack = layout.effective(phi)[:, rows]
        gains = np.abs(stack.conj().T @ direction) ** 2
        ratios = gains / layout.floor[rows]
        weakest = float(np.min(ratios))
        if weakest > 0.0:
            direction = direction / math.sqrt(weakest)
    return direction, phi


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.linalg.norm(new - old) / (1.0 + np.linalg.norm(old)))


def restoration_scale(layout: ProblemLayout, stack: np.ndarray, w: np.ndarray) -> float:
    """Smallest s >= 1 making every floor and the BER pair hold for s*w (inf if none)."""
    gains = np.abs(stack.conj().T @ w) ** 2
    need = 1.0
    for j in range(layout.n_rows):
        if not layout.active[j] or layout.floor[j] <= 0.0:
            continue
        if gains[j] <= 0.0:
            return math.inf
        need = max(need, layout.floor[j] / gains[j])
    pair = layout.ber
    if pair is not None:
        margin = gains[pair.strong] - pair.lambda_s * gains[pair.weak]
        offset = (pair.lambda_s - 1.0) * pair.noise_power
        if offset > 0.0:
            if margin <= 0.0:
                return math.inf
            need = max(need, offset / margin)
        elif margin < 0.0:
            return math.inf
    return math.sqrt(need) * _RESTORE_MARGIN if need > 1.0 else 1.0


def initial_rho(state: PenaltyState, rho_init: float) -> float:
    """rho_init scaled so power and penalty start on the same footing.

    The auxiliaries sit at |q_j|^2 >= floor_j (SNR units in the normalized
    frame), so rho = rho_init ||w||^2 / ||q||^2 makes a unit relative gap cost
    as much as the initial power.
    """
    q = state.q[state.layout.active]
    q_norm2 = float(np.real(np.vdot(q, q)))
    power = float(np.real(np.vdot(state.w, state.w)))
    if q_norm2 <= 0.0 or power <= 0.0:
        return rho_init
    return rho_init * power / q_norm2


@dataclass(frozen=True)
class FeasibleCandidate:
    power: float
    w: np.ndarray
    phi: np.ndarray
    scale: float
    inner: int


def feasible_candidate(layout: ProblemLayout, stack: np.ndarray, w: np.ndarray, phi: np.ndarray, inner: int) -> Optional[FeasibleCandidate]:
    """Rotated and restored copy of (w, phi), or None if no scaling of w is feasible."""
    pair = layout.ber
    if pair is not None:
        t = complex(np.vdot(stack[:, pair.strong], w))
        if t != 0.0:
            w = w * (t.conjugate() / abs(t))
    scale = restoration_scale(layout, stack, w)
    if not math.isfinite(scale):
        return None
    w = w * scale
    return FeasibleCandidate(float(np.real(np.vdot(w, w))), w, phi.copy(), float(scale), inner)


def run_pbcd(
    layout: ProblemLayout,
    opts: SolverOptions,
    checker: Checker,
    phi_init: Optional[RisPhase] = None,
    observer: Optional[Observer] = None,
    w_init: Optional[PrecoderLike] = None,
) -> SolveResult:
    """Two-level penalty loop over ``layout``; ``checker`` builds the report on the caller's channels.

    The returned design is the lowest-power iterate that becomes feasible
    after restoration, the initial point included, so a warm start from a
    feasible design is never made worse.
    """
    started = time.perf_counter()
    rng = np.random.default_rng(opts.seed)
    w0, phi0 = initial_point(layout, rng, phi_init, w_init)
    state = PenaltyState.create(layout, w0, phi0, rho=opts.rho_init)
    uses_ris = layout.uses_ris
    ch = layout.channels

    def notify(block: str) -> None:
        if observer is not None:
            observer(block, state)

    # q starts on its feasible set so every block is a descent step
    update_auxiliaries(state)
    rho = initial_rho(state, opts.rho_init)
    state.rho = rho
    notify("init")

    trace: List[TraceRecord] = []
    violations: List[float] = []
    best: Tuple[float, np.ndarray, np.ndarray] = (math.inf, state.w.copy(), state.phi.copy())
    incumbent = feasible_candidate(layout, state.stack, state.w, state.phi, 0)
    status = "max_outer"
    total_inner = 0
    outer = 0

    for outer in range(1, opts.max_outer + 1):
        state.rho = rho
        for inner in range(1, opts.max_inner + 1):
            w_old, phi_old, q_old = state.w.copy(), state.phi.copy(), state.q.copy()

            _apply_rotation(state)
            notify("rotate")
            update_auxiliaries(state)
            notify("q")
            if uses_ris:
                sweep_phi(ch, state)
                notify("phi")
            _update_w_state(state)
            notify("w")

            total_inner += 1
            candidate = feasible_candidate(layout, state.stack, state.w, state.phi, total_inner)
            if candidate is not None and (incumbent is None or candidate.power < incumbent.power):
                incumbent = candidate
            violation = equality_violation(state)
            objective = penalty_objective(state)
            power = float(np.real(np.vdot(state.w, state.w)))
            trace.append(TraceRecord(outer, inner, rho, objective, power, violation))
            log.debug(
                "%s outer=%d inner=%d rho=%.3g obj=%.6g power=%.6g viol=%.3g",
                layout.name, outer, inner, rho, objective, power, violation,
            )

            changes = [_relative_change(state.w, w_old), _relative_change(state.phi, phi_old)]
            changes += [_relative_change(state.q[b], q_old[b]) for b in layout.blocks]
            if max(changes) < opts.eps_inner:
                break

        violation = equality_violation(state)
        violations.append(violation)
        if violation < best[0]:
            best = (violation, state.w.copy(), state.phi.copy())
        if violation < opts.eps_outer:
            status = "converged"
            break
        window = opts.stall_window
        if len(violations) > 2 * window and violations[-1] > 0.9 * violations[-1 - window]:
            status = "stalled"
            log.warning(
                "%s: equality violation stuck at %.3g after %d outer iterations (rho=%.3g); problem looks infeasible",
                layout.name, violation, outer, rho,
            )
            break
        rho *= opts.rho_growth

    if incumbent is not None:
        w_final, phi_final, scale = incumbent.w, incumbent.phi, incumbent.scale
        if scale > 1.0 + 1e-2:
            log.warning("%s: feasibility restoration scaled w by %.4f", layout.name, scale)
        if incumbent.inner != total_inner:
            log.debug("%s: returning the iterate of inner step %d (power %.6g)", layout.name, incumbent.inner, incumbent.power)
    else:
        w_final, phi_final = (state.w, state.phi) if status == "converged" else (best[1], best[2])
        scale = math.inf
        log.warning("%s: no scaling of w satisfies the constraints", layout.name)
        if status == "converged":
            status = "infeasible"

    precoder = Precoder(w_final)
    phase = RisPhase(phi_final)
    report = checker(phase, precoder)
    elapsed = time.perf_counter() - started
    log.info(
        "%s finished: status=%s outer=%d inner=%d power=%.6g feasible=%s (%.2fs)",
        layout.name, status, outer, total_inner, precoder.power, report.feasible, elapsed,
    )
    return SolveResult(
        system=layout.name,
        w=precoder,
        phi=phase,
        power=precoder.power,
        report=report,
        trace=trace,
        status=status,
        outer_iterations=outer,
        inner_iterations=total_inner,
        eq_violation=float(violations[-1]) if violations else 0.0,
        restore_scale=float(scale),
        diagnostics={
            "violations": violations,
            "wall_time": elapsed,
            "returned_inner": incumbent.inner if incumbent is not None else total_inner,
            "rho_start": trace[0].rho if trace else rho,
        },
    )


def infeasible_result(
    name: str,
    ch: ChannelSet,
    checker: Checker,
    reason: str,
    phi: Optional[RisPhase] = None,
) -> SolveResult:
    """Result for a problem rejected before iterating."""
    phase = phi if phi is not None else RisPhase.ones(ch.n_ris)
    precoder = Precoder(np.zeros(ch.n_tx, dtype=complex))
    log.warning("%s: %s", name, reason)
    return SolveResult(
        system=name,
        w=precoder,
        phi=phase,
        power=0.0,
        report=checker(phase, precoder),
        trace=[],
        status="infeasible",
        outer_iterations=0,
        inner_iterations=0,
        eq_violation=math.inf,
        restore_scale=math.inf,
        diagnostics={"reason": reason},
    )


def normalized_frame(ch: ChannelSet, cfg: SystemConfig) -> Tuple[ChannelSet, SystemConfig]:
    """Channels divided by delta and unit noise; ||w||^2 is unchanged."""
    ch.check_against(cfg)
    return ch.scaled(1.0 / math.sqrt(cfg.noise_power)), cfg.normalized()


def solve(
    ch: ChannelSet,
    cfg: SystemConfig,
    opts: SolverOptions = SolverOptions(),
    phi_init: Optional[RisPhase] = None,
    branch: int = 1,
    observer: Optional[Observer] = None,
    w_init: Optional[PrecoderLike] = None,
) -> SolveResult:
    """Minimum-power (w, phi) for the information-decoupled system."""
    norm_ch, norm_cfg = normalized_frame(ch, cfg)
    layout = idsr_layout(norm_ch, norm_cfg, branch=branch)

    def checker(phase: RisPhase, precoder: Precoder) -> FeasibilityReport:
        return check_feasibility(ch, phase, precoder, cfg, tol=opts.feasibility_tol)

    return run_pbcd(layout, opts, checker, phi_init=phi_init, observer=observer, w_init=w_init)

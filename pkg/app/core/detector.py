"""Energy detection at the backscatter receiver.

The BRx sums ``T`` samples of ``|y(t)|^2`` and compares the energy against the
likelihood-ratio threshold.  Under hypothesis ``i`` the samples are i.i.d.
CN(0, sigma_i^2), so the energy is Gamma(T, sigma_i^2) and the error
probability reduces to regularized incomplete gamma functions.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from app.core.specfun import (
    DomainError,
    ToleranceSpec,
    find_root_monotone,
    reg_lower_gamma,
    reg_upper_gamma,
)

log = logging.getLogger(__name__)

LAMBDA_TOLERANCE = ToleranceSpec(abs_tol=1e-13, rel_tol=1e-14, max_iter=300)
CONFIDENCE_Z99 = 2.5758293035489004
_CHUNK_TRIALS = 20_000


@dataclass(frozen=True)
class BerOperatingPoint:
    sigma0_sq: float
    sigma1_sq: float
    t_symbols: int
    delta: float
    sigma_min_sq: float
    sigma_max_sq: float

    @classmethod
    def from_variances(cls, sigma0_sq: float, sigma1_sq: float, t_symbols: int) -> "BerOperatingPoint":
        _check_variances(sigma0_sq, sigma1_sq, t_symbols)
        if sigma0_sq == sigma1_sq:
            delta = 1.0 / sigma0_sq
        else:
            # ln(s1/s0)/(s1-s0) written with log1p so near-equal variances stay accurate
            ratio_m1 = (sigma1_sq - sigma0_sq) / sigma0_sq
            delta = math.log1p(ratio_m1) / (sigma1_sq - sigma0_sq)
        return cls(
            sigma0_sq=float(sigma0_sq),
            sigma1_sq=float(sigma1_sq),
            t_symbols=int(t_symbols),
            delta=delta,
            sigma_min_sq=float(min(sigma0_sq, sigma1_sq)),
            sigma_max_sq=float(max(sigma0_sq, sigma1_sq)),
        )

    @property
    def degenerate(self) -> bool:
        return self.sigma0_sq == self.sigma1_sq


def _check_variances(sigma0_sq: float, sigma1_sq: float, t_symbols: int) -> None:
    if not (sigma0_sq > 0 and sigma1_sq > 0):
        raise DomainError(f"variances must be > 0, got ({sigma0_sq}, {sigma1_sq})")
    if int(t_symbols) < 1 or int(t_symbols) != t_symbols:
        raise DomainError(f"t_symbols must be a positive integer, got {t_symbols}")


# ---------------------------------------------------------------------------
# Closed form
# ---------------------------------------------------------------------------
def ber_closed_form(sigma0_sq: float, sigma1_sq: float, t_symbols: int) -> float:
    point = BerOperatingPoint.from_variances(sigma0_sq, sigma1_sq, t_symbols)
    if point.degenerate:
        return 0.5
    t = float(point.t_symbols)
    miss = reg_lower_gamma(t, t * point.sigma_min_sq * point.delta)
    false_alarm = reg_upper_gamma(t, t * point.sigma_max_sq * point.delta)
    return min(0.5, 0.5 * (miss + false_alarm))


def ratio_ber(ratio: float, t_symbols: int) -> float:
    if not ratio >= 1.0:
        raise DomainError(f"ratio_ber requires ratio >= 1, got {ratio}")
    return ber_closed_form(1.0, float(ratio), t_symbols)


def detection_threshold(sigma0_sq: float, sigma1_sq: float, t_symbols: int) -> float:
    """Energy threshold tau = T sigma0^2 sigma1^2 Delta of the likelihood-ratio test."""
    point = BerOperatingPoint.from_variances(sigma0_sq, sigma1_sq, t_symbols)
    if point.degenerate:
        raise ValueError("equal variances: the energy test is degenerate (no threshold separates them)")
    return point.t_symbols * point.sigma0_sq * point.sigma1_sq * point.delta


def solve_lambda_s(ber_target: float, t_symbols: int) -> float:
    """Variance ratio lambda_s >= 1 with ratio_ber(lambda_s, T) = ber_target."""
    if not 0.0 < ber_target < 0.5:
        raise DomainError(
            f"ber_target must lie in (0, 0.5); 0.5 is reached only at ratio 1, got {ber_target}"
        )

    def excess(ratio: float) -> float:
        return ratio_ber(ratio, t_symbols) - ber_target

    hi = 2.0
    while excess(hi) > 0.0:
        hi *= 2.0
        if hi > 1e12:
            raise DomainError(f"no ratio below 1e12 reaches BER {ber_target} at T={t_symbols}")
    lam = find_root_monotone(excess, 1.0, hi, LAMBDA_TOLERANCE)
    log.debug("lambda_s(%.6g, T=%d) = %.12g", ber_target, t_symbols, lam)
    return lam


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class MonteCarloBer:
    ber: float
    half_width: float
    binomial_sigma: float
    n_trials: int
    errors: int
    closed_form: float

    def agrees(self, n_sigma: float = 3.0) -> bool:
        return abs(self.ber - self.closed_form) <= n_sigma * self.binomial_sigma


def _simulate_chunk(
    seed_seq: np.random.SeedSequence,
    n: int,
    sigmas: Tuple[float, float],
    t_symbols: int,
    threshold: float,
) -> int:
    rng = np.random.default_rng(seed_seq)
    hypothesis = rng.integers(0, 2, size=n)
    scale = np.sqrt(np.where(hypothesis == 1, sigmas[1], sigmas[0]) / 2.0)
    re = rng.standard_normal((n, t_symbols))
    im = rng.standard_normal((n, t_symbols))
    energy = (re * re + im * im).sum(axis=1) * (scale * scale)
    # the larger-variance hypothesis is declared above the threshold
    high = 1 if sigmas[1] > sigmas[0] else 0
    decided = np.where(energy > threshold, high, 1 - high)
    return int(np.count_nonzero(decided != hypothesis))


def simulate_energy_detection(
    sigma0_sq: float,
    sigma1_sq: float,
    t_symbols: int,
    n_trials: int,
    seed: int,
    workers: Optional[int] = None,
    threshold: Optional[float] = None,
) -> MonteCarloBer:
    """Empirical BER of the energy detector.

    ``threshold`` overrides the likelihood-ratio threshold; it is the only way
    to simulate equal variances, where every rule errs half the time.
    """
    if int(n_trials) < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    if threshold is None:
        threshold = detection_threshold(sigma0_sq, sigma1_sq, t_symbols)
    else:
        _check_variances(sigma0_sq, sigma1_sq, t_symbols)
        threshold = float(threshold)
    expected = ber_closed_form(sigma0_sq, sigma1_sq, t_symbols)

    n_trials = int(n_trials)
    n_chunks = -(-n_trials // _CHUNK_TRIALS)
    sizes: List[int] = [_CHUNK_TRIALS] * (n_chunks - 1) + [n_trials - _CHUNK_TRIALS * (n_chunks - 1)]
    streams = np.random.SeedSequence(int(seed)).spawn(n_chunks)
    sigmas = (float(sigma0_sq), float(sigma1_sq))

    if workers and workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(
                pool.map(lambda job: _simulate_chunk(job[0], job[1], sigmas, t_symbols, threshold), zip(streams, sizes))
            )
    else:
        counts = [_simulate_chunk(s, n, sigmas, t_symbols, threshold) for s, n in zip(streams, sizes)]

    errors = int(sum(counts))
    ber = errors / n_trials
    half_width = CONFIDENCE_Z99 * math.sqrt(max(ber * (1.0 - ber), 0.0) / n_trials)
    sigma = math.sqrt(expected * (1.0 - expected) / n_trials)
    log.debug(
        "MC energy detection s0=%.4g s1=%.4g T=%d: %d/%d errors (closed form %.6f)",
        sigma0_sq, sigma1_sq, t_symbols, errors, n_trials, expected,
    )
    return MonteCarloBer(
        ber=ber,
        half_width=half_width,
        binomial_sigma=sigma,
        n_trials=n_trials,
        errors=errors,
        closed_form=expected,
    )

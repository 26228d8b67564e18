"""Special functions and scalar root finding used by the BER model.

The regularized incomplete gamma functions follow the usual split: the power
series for ``x < a + 1`` and a modified-Lentz continued fraction otherwise, so
the complement is always computed directly instead of by subtraction.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

from scipy import special

log = logging.getLogger(__name__)

_EPS = 2.220446049250313e-16
_FPMIN = 1e-300
_MAX_TERMS = 100_000

_SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------
class SpecfunError(ArithmeticError):
    """Base class for numeric kernel failures."""


class DomainError(SpecfunError, ValueError):
    """Argument outside the domain of the function."""


class BracketError(SpecfunError, ValueError):
    """The supplied interval does not bracket a sign change."""


class ConvergenceError(SpecfunError):
    """Iteration budget exhausted; ``best`` holds the best iterate found."""

    def __init__(self, message: str, best: float, residual: float) -> None:
        super().__init__(message)
        self.best = best
        self.residual = residual


@dataclass(frozen=True)
class ToleranceSpec:
    abs_tol: float = 1e-14
    rel_tol: float = 1e-14
    max_iter: int = 200

    def __post_init__(self) -> None:
        if not self.abs_tol > 0:
            raise ValueError(f"abs_tol must be > 0, got {self.abs_tol}")
        if not self.rel_tol > 0:
            raise ValueError(f"rel_tol must be > 0, got {self.rel_tol}")
        if int(self.max_iter) < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


DEFAULT_TOLERANCE = ToleranceSpec()


# ---------------------------------------------------------------------------
# Gamma family
# ---------------------------------------------------------------------------
def ln_gamma(a: float) -> float:
    if not a > 0:
        raise DomainError(f"ln_gamma requires a > 0, got {a}")
    return float(special.gammaln(a))


def _check_gamma_args(a: float, x: float) -> None:
    if not a > 0:
        raise DomainError(f"incomplete gamma requires a > 0, got a={a}")
    if not x >= 0:
        raise DomainError(f"incomplete gamma requires x >= 0, got x={x}")


def _log_prefactor(a: float, x: float) -> float:
    # log of x^a e^{-x} / Gamma(a)
    return a * math.log(x) - x - ln_gamma(a)


def _lower_series(a: float, x: float) -> float:
    """P(a, x) by the power series; converges for all x, fast for x < a + 1."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_TERMS):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return min(1.0, total * math.exp(_log_prefactor(a, x)))
    raise ConvergenceError(f"series for P({a}, {x}) did not converge", best=total, residual=term)


def _upper_continued_fraction(a: float, x: float) -> float:
    """Q(a, x) by the Legendre continued fraction (modified Lentz); x >= a + 1."""
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b if b != 0.0 else 1.0 / _FPMIN
    h = d
    for i in range(1, _MAX_TERMS):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return min(1.0, math.exp(_log_prefactor(a, x)) * h)
    raise ConvergenceError(f"continued fraction for Q({a}, {x}) did not converge", best=h, residual=delta - 1.0)


def reg_lower_gamma(a: float, x: float) -> float:
    _check_gamma_args(a, x)
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return _lower_series(a, x)
    return 1.0 - _upper_continued_fraction(a, x)


def reg_upper_gamma(a: float, x: float) -> float:
    _check_gamma_args(a, x)
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return 1.0 - _lower_series(a, x)
    return _upper_continued_fraction(a, x)


# ---------------------------------------------------------------------------
# Gaussian tail
# ---------------------------------------------------------------------------
def q_function(x: float) -> float:
    """Gaussian tail probability Q(x) = P(N(0,1) > x)."""
    return float(0.5 * special.erfc(x / _SQRT2))


def inv_q_function(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise DomainError(f"inv_q_function requires 0 < p < 1, got {p}")
    # Q(x) = p  <=>  Phi(-x) = p; ndtri keeps full precision in the small-p tail.
    return float(-special.ndtri(p))


# ---------------------------------------------------------------------------
# Root finding
# ---------------------------------------------------------------------------
def _sign(value: float) -> int:
    return (value > 0.0) - (value < 0.0)


def find_root_monotone(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: ToleranceSpec = DEFAULT_TOLERANCE,
) -> float:
    """Bracketing root finder: Illinois regula falsi with forced bisection.

    ``f`` must be continuous and monotone on ``[lo, hi]`` with a sign change.
    A bisection step is forced whenever two consecutive steps failed to halve
    the bracket, so the bracket width at least halves every other iteration.
    """
    if not lo <= hi:
        raise DomainError(f"empty bracket [{lo}, {hi}]")
    f_lo = float(f(lo))
    f_hi = float(f(hi))
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if _sign(f_lo) == _sign(f_hi):
        raise BracketError(f"no sign change on [{lo}, {hi}]: f(lo)={f_lo:.3e}, f(hi)={f_hi:.3e}")

    a, fa, b, fb = float(lo), f_lo, float(hi), f_hi
    fa_w, fb_w = fa, fb  # interpolation weights (Illinois halves these)
    best, f_best = (a, fa) if abs(fa) <= abs(fb) else (b, fb)
    widths = [b - a]
    side = 0
    x = best

    for _ in range(int(tol.max_iter)):
        force_bisect = len(widths) >= 3 and widths[-1] > 0.5 * widths[-3]
        x = a - fa_w * (b - a) / (fb_w - fa_w) if fb_w != fa_w else 0.5 * (a + b)
        if force_bisect or not (a < x < b) or not math.isfinite(x):
            x = 0.5 * (a + b)

        fx = float(f(x))
        if abs(fx) < abs(f_best):
            best, f_best = x, fx
        if fx == 0.0 or abs(fx) <= tol.abs_tol:
            return x

        if _sign(fx) == _sign(fa):
            a, fa, fa_w = x, fx, fx
            if side == -1:
                fb_w *= 0.5
            side = -1
        else:
            b, fb, fb_w = x, fx, fx
            if side == 1:
                fa_w *= 0.5
            side = 1

        widths.append(b - a)
        if b - a <= tol.rel_tol * abs(x) + tol.abs_tol:
            return x

    raise ConvergenceError(
        f"root finder exceeded {tol.max_iter} iterations on [{lo}, {hi}]",
        best=best,
        residual=f_best,
    )

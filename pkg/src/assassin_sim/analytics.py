"""Closed forms, the cumulant recursion, stability and fixed-point solvers.

Every closed form is built on the roots ``alpha <= beta`` of ``X^2 - X + lam``.
Moments of ``Y(t)`` are polynomials in ``x = exp(alpha t)`` and moments of
``N`` follow by integrating against ``exp(-t)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import lfilter

from .core import DomainError, Exponential, InfiniteMomentError, KillingDist, NonConvergenceError


@dataclass(frozen=True)
class SpectralPair:
    delta: float
    alpha: float
    beta: float


def _check_lambda(lam: float) -> None:
    if not (isinstance(lam, (int, float)) and math.isfinite(lam) and lam > 0):
        raise DomainError(f"lambda must be a positive finite number, got {lam!r}")


def moment_threshold(p: int) -> float:
    """Largest intensity (exclusive) with ``E N^p`` finite, ``p/(p+1)^2``."""
    return p / (p + 1) ** 2


def spectral(lam: float) -> SpectralPair:
    _check_lambda(lam)
    if lam > 0.25:
        raise DomainError(f"spectral pair is real only for lambda <= 1/4, got {lam}")
    delta = math.sqrt(1.0 - 4.0 * lam)
    return SpectralPair(delta, (1.0 - delta) / 2.0, (1.0 + delta) / 2.0)


def gamma_exponent(lam: float) -> float:
    """Power-tail exponent of N, ``beta/alpha``, for ``0 < lam < 1/4``."""
    _check_lambda(lam)
    if lam >= 0.25:
        raise DomainError("tail exponent is defined for lambda < 1/4 (it tends to 1 at 1/4)")
    s = spectral(lam)
    # beta/alpha with alpha = lam/beta avoids cancellation in 1 - delta for small lam
    return s.beta * s.beta / lam


def mean_N(lam: float) -> float:
    _check_lambda(lam)
    if lam > 0.25:
        raise InfiniteMomentError(f"E N is infinite for lambda > 1/4 (lambda={lam})", 1)
    return 2.0 / (1.0 + math.sqrt(1.0 - 4.0 * lam))


def second_moment_N(lam: float) -> float:
    _check_lambda(lam)
    if lam >= moment_threshold(2):
        raise InfiniteMomentError(f"E N^2 is infinite for lambda >= 2/9 (lambda={lam})", 2)
    return 2.0 / (3.0 * math.sqrt(1.0 - 4.0 * lam) - 1.0)


def third_moment_N(lam: float) -> float:
    """Hand-derived three-term expression for ``E N^3``."""
    _check_lambda(lam)
    for p in (2, 3):
        if lam >= moment_threshold(p):
            raise InfiniteMomentError(
                f"E N^3 is infinite for lambda >= 3/16 (lambda={lam})", p)
    a = spectral(lam).alpha
    return (
        6.0 * (3 * lam - a) * a / ((4 * lam - 3 * a) * (1 - a - 3 * lam))
        - 6.0 * lam * (2 * lam - a) * a / ((3 * lam - 2 * a) ** 2 * (1 - a - 2 * lam))
        + 1.0 / (1.0 - a)
    )


# Cumulant recursion ---------------------------------------------------------

@dataclass(frozen=True)
class MomentPoly:
    """Polynomial ``sum_k coeffs[k] x^k`` in ``x = exp(alpha t)``."""

    coeffs: np.ndarray

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(x, self.coeffs)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def laplace_at_one(self, alpha: float) -> float:
        """``int_0^inf P(exp(alpha t)) exp(-t) dt``, valid when ``degree * alpha < 1``."""
        k = np.arange(len(self.coeffs))
        return float(np.sum(self.coeffs / (1.0 - k * alpha)))


def moment_polys(lam: float, p: int) -> list[tuple[MomentPoly, MomentPoly]]:
    """``[(Q_k, R_k)]`` for ``k = 1..p``: ``E Y(t)^k = Q_k(x)`` and ``kappa_k(Y(t)) = R_k(x)``.

    Raises :class:`InfiniteMomentError` naming the smallest order ``k`` with
    ``lam >= k/(k+1)^2``.
    """
    _check_lambda(lam)
    if not (isinstance(p, (int, np.integer)) and p >= 1):
        raise DomainError(f"moment order must be an integer >= 1, got {p!r}")
    if lam > 0.25:
        raise InfiniteMomentError(f"all moments are infinite for lambda > 1/4 (lambda={lam})", 1)
    for k in range(2, p + 1):
        if lam >= moment_threshold(k):
            raise InfiniteMomentError(
                f"E N^{k} is infinite: lambda={lam} >= {k}/{(k + 1) ** 2}", k)
    sp = spectral(lam)
    alpha = sp.alpha

    Q = [None, np.array([0.0, 1.0])]
    R = [None, np.array([0.0, 1.0])]
    for k in range(2, p + 1):
        # moments from cumulants: m_k = kappa_k + sum_{j<k} C(k-1, j-1) kappa_j m_{k-j}
        forcing = np.zeros(k + 1)
        for j in range(1, k):
            prod = np.convolve(R[j], Q[k - j])
            forcing[: len(prod)] += comb(k - 1, j - 1) * prod
        # every product has two constant-free factors
        assert forcing[0] == 0.0 and forcing[1] == 0.0
        r = np.zeros(k + 1)
        i = np.arange(2, k + 1)
        # (i+1) lam - i alpha, rewritten without cancellation near lam = i/(i+1)^2
        gap = 2.0 * lam * (i - lam * (i + 1) ** 2) / (sp.beta * ((i + 1) * sp.delta + i - 1))
        r[2:] = lam * forcing[2:] / ((i - 1) * gap)
        # homogeneous exp(beta t) part vanishes; exp(alpha t) part fixes kappa_k(Y(0)) = 0
        r[1] = -r[2:].sum()
        R.append(r)
        Q.append(r + forcing)
    return [(MomentPoly(Q[k]), MomentPoly(R[k])) for k in range(1, p + 1)]


def moment_N(lam: float, p: int) -> float:
    """``E N^p`` from the recursion."""
    q, _ = moment_polys(lam, p)[-1]
    return q.laplace_at_one(spectral(lam).alpha)


# Stability ------------------------------------------------------------------

class Verdict(enum.Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class StabilityVerdict:
    verdict: Verdict
    criterion_value: float
    argmin: float
    boundary: bool = False


STABILITY_TOL = 1e-9


def _minimize_criterion(lam: float, killing: KillingDist) -> tuple[float, float]:
    """Minimize ``lam * phi(u) / u`` over ``0 < u < mgf_domain``; returns (value, argmin)."""
    upper = killing.mgf_domain

    def h(v):
        u = math.exp(v)
        if u >= upper:
            return math.inf
        return lam * killing.mgf(u) / u

    hi = math.log(upper) if math.isfinite(upper) else 8.0
    grid = np.linspace(hi - 40.0, hi, 801)
    if math.isfinite(upper):
        grid = grid[:-1]
    vals = np.array([h(v) for v in grid])
    if not np.isfinite(vals).any():
        raise DomainError("criterion is infinite everywhere; degenerate mgf domain")
    i = int(np.argmin(vals))
    if i == 0 or i == len(grid) - 1:
        raise DomainError("could not bracket the criterion minimum")
    res = minimize_scalar(h, bracket=(grid[i - 1], grid[i], grid[i + 1]),
                          method="golden", tol=1e-12)
    return float(res.fun), math.exp(res.x)


def classify_stability(lam: float, killing: KillingDist) -> StabilityVerdict:
    _check_lambda(lam)
    if not killing.mgf_domain > 0:
        raise DomainError("killing distribution needs a finite mgf near 0")
    if isinstance(killing, Exponential):
        # min over u of lam*mu/(u*(mu-u)) is attained at u = mu/2
        value = 4.0 * lam / killing.rate
        verdict = Verdict.STABLE if value <= 1.0 else Verdict.UNSTABLE
        return StabilityVerdict(verdict, value, killing.rate / 2.0, boundary=value == 1.0)
    value, argmin = _minimize_criterion(lam, killing)
    if value < 1.0 - STABILITY_TOL:
        verdict = Verdict.STABLE
    elif value > 1.0 + STABILITY_TOL:
        verdict = Verdict.UNSTABLE
    else:
        verdict = Verdict.INCONCLUSIVE
    return StabilityVerdict(verdict, value, argmin, boundary=verdict is Verdict.INCONCLUSIVE)


# Fixed-point solvers --------------------------------------------------------

@dataclass(frozen=True)
class GridFunction:
    grid: np.ndarray
    values: np.ndarray
    tail_value: float
    iterations: int = 0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.interp(t, self.grid, self.values)
        return np.where(t > self.grid[-1], self.tail_value, out)


def _grid(horizon: float, step: float) -> np.ndarray:
    if not (math.isfinite(horizon) and horizon > 0):
        raise DomainError(f"horizon must be positive, got {horizon!r}")
    if not (math.isfinite(step) and step > 0):
        raise DomainError(f"step must be positive, got {step!r}")
    n = int(round(horizon / step))
    if n < 1 or abs(n * step - horizon) > 1e-9 * horizon:
        raise DomainError("horizon must be a whole multiple of step")
    return np.arange(n + 1) * step


def _discounted_tail(f: np.ndarray, step: float, tail: float) -> np.ndarray:
    """``int_{t_i}^inf f(s) exp(-(s - t_i)) ds`` for piecewise-linear ``f``.

    ``tail`` is the value of the integral at the last grid point.  Weights
    integrate the exponential kernel exactly, so constants are reproduced exactly.
    """
    q = math.exp(-step)
    w0 = 1.0 - (1.0 - q) / step
    w1 = (1.0 - q) / step - q
    src = w0 * f[:-1] + w1 * f[1:]
    # backward recursion P_i = q P_{i+1} + src_i
    rev = lfilter([1.0], [1.0, -q], src[::-1], zi=[q * tail])[0]
    return np.concatenate([rev[::-1], [tail]])


def _cumtrapz(f: np.ndarray, step: float) -> np.ndarray:
    out = np.empty_like(f)
    out[0] = 0.0
    np.cumsum(0.5 * step * (f[1:] + f[:-1]), out=out[1:])
    return out


def extinction_profile(lam: float, horizon: float = 40.0, step: float = 0.01,
                       tol: float = 1e-10, max_iter: int = 200_000) -> GridFunction:
    """Least fixed point of the extinction operator, iterated from ``pi = 0``.

    ``pi(t)`` is the extinction probability when the ancestor cannot die
    before ``t``; ``pi(0)`` is the overall extinction probability.  Beyond the
    horizon, ``int_0^s pi`` is continued linearly with slope ``pi(T)``.
    """
    _check_lambda(lam)
    t = _grid(horizon, step)
    pi = np.zeros_like(t)
    change = math.inf
    for it in range(1, max_iter + 1):
        w = np.exp(lam * (_cumtrapz(pi, step) - t))
        tail = w[-1] / (1.0 + lam * (1.0 - pi[-1]))
        new = np.minimum(_discounted_tail(w, step, tail), 1.0)
        change = float(np.max(np.abs(new - pi)))
        pi = new
        if change < tol:
            return GridFunction(t, pi, float(pi[-1]), it)
    raise NonConvergenceError(
        f"extinction iteration did not converge in {max_iter} steps", change, max_iter)


def laplace_profile(lam: float, theta: float, horizon: float = 40.0, step: float = 0.01,
                    tol: float = 1e-10, max_iter: int = 200_000) -> GridFunction:
    """``L(t) = E exp(-theta Y(t))`` by fixed-point iteration from ``exp(-theta)``.

    ``L`` is held at ``L(T)`` beyond the horizon.
    """
    _check_lambda(lam)
    if lam > 0.25:
        raise DomainError("Laplace transform solver requires lambda <= 1/4")
    if not (math.isfinite(theta) and theta >= 0):
        raise DomainError(f"theta must be >= 0, got {theta!r}")
    t = _grid(horizon, step)
    L = np.full_like(t, math.exp(-theta))
    change = math.inf
    for it in range(1, max_iter + 1):
        inner = _discounted_tail(L - 1.0, step, L[-1] - 1.0)
        new = math.exp(-theta) * np.exp(lam * _cumtrapz(inner, step))
        change = float(np.max(np.abs(new - L)))
        L = new
        if change < tol:
            return GridFunction(t, L, float(L[-1]), it)
    raise NonConvergenceError(
        f"Laplace iteration did not converge in {max_iter} steps", change, max_iter)

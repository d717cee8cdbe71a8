"""Characteristic polynomials of delayed gradient updates and their spectra.

All polynomials are monic, real, and stored highest degree first (numpy
``polyval`` order). Stability of the linear recursion is decided by the
spectral radius of the companion matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

MAX_DEGREE = 200
# alpha = 0 puts a root exactly on the unit circle; treat that as stable
STABILITY_EPS = 1e-9


class StabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class StabilityProblem:
    """Parameters of one quadratic-model update rule.

    Feature flags select which terms participate: ``discrepancy`` enables
    ``delta``, ``recompute`` enables ``phi`` and ``tau_recomp``,
    ``correction`` adds the velocity accumulator with decay ``gamma`` and
    ``momentum`` enables ``beta``.
    """

    lam: float
    tau_fwd: int
    alpha: float = 0.0
    tau_bkwd: int = 0
    tau_recomp: Optional[int] = None
    delta: float = 0.0
    phi: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    momentum: bool = False
    discrepancy: bool = False
    correction: bool = False
    recompute: bool = False

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"curvature must be > 0, got {self.lam}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.tau_fwd < 0 or self.tau_bkwd < 0:
            raise ValueError("delays must be nonnegative")
        if self.tau_bkwd > self.tau_fwd:
            raise ValueError(f"tau_bkwd={self.tau_bkwd} exceeds tau_fwd={self.tau_fwd}")
        if self.recompute:
            if self.tau_recomp is None:
                raise ValueError("recompute requires tau_recomp")
            if not self.tau_bkwd <= self.tau_recomp <= self.tau_fwd:
                raise ValueError("tau_recomp must lie in [tau_bkwd, tau_fwd]")
        if self.momentum:
            if self.discrepancy or self.correction or self.recompute:
                raise ValueError("momentum is only defined for the plain delayed update")
            if not 0 <= self.beta < 1:
                raise ValueError(f"beta must be in [0, 1), got {self.beta}")
        if self.correction and not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")

    def with_alpha(self, alpha: float) -> "StabilityProblem":
        return replace(self, alpha=alpha)


def _shift(coeffs, k):
    """Multiply a polynomial by omega**k."""
    return np.concatenate([np.asarray(coeffs, dtype=float), np.zeros(k)])


def _padd(*polys):
    n = max(len(p) for p in polys)
    out = np.zeros(n)
    for p in polys:
        out[n - len(p):] += p
    return out


def build_char_poly(problem: StabilityProblem) -> np.ndarray:
    a, lam = problem.alpha, problem.lam
    tf, tb = problem.tau_fwd, problem.tau_bkwd
    if problem.momentum:
        beta = problem.beta
        if tf == 0:
            # (w - 1)(w - beta) + a lam w
            return np.array([1.0, -(1 + beta) + a * lam, beta])
        # (w - 1)(w - beta) w^(tau - 1) + a lam
        p = _shift(np.polymul([1.0, -1.0], [1.0, -beta]), tf - 1)
        p[-1] += a * lam
        return p

    delta = problem.delta if problem.discrepancy else 0.0
    phi = problem.phi if problem.recompute else 0.0
    kb = tf - tb
    kr = tf - problem.tau_recomp if problem.recompute else 0
    bkwd_gain = delta - phi

    if not problem.correction:
        # (w - 1) w^tf + a(lam + delta) - a(delta - phi) w^kb - a phi w^kr
        p = _shift([1.0, -1.0], tf)
        p[-1] += a * (lam + delta)
        p[-1 - kb] -= a * bkwd_gain
        p[-1 - kr] -= a * phi
        return p

    g = problem.gamma
    w_minus_g = np.array([1.0, -g])
    w_minus_1 = np.array([1.0, -1.0])
    terms = [
        _shift(np.polymul(w_minus_1, w_minus_g), tf),
        a * (lam + delta) * w_minus_g,
        -a * bkwd_gain * _shift(w_minus_g, kb),
        a * bkwd_gain * kb * (1 - g) * _shift(w_minus_1, kb),
        -a * phi * _shift(w_minus_g, kr),
        a * phi * kr * (1 - g) * _shift(w_minus_1, kr),
    ]
    return _padd(*terms)


def companion_matrix(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    n = len(c) - 1
    C = np.zeros((n, n))
    C[0, :] = -c[1:] / c[0]
    C[np.arange(1, n), np.arange(n - 1)] = 1.0
    return C


def spectral_radius(coeffs) -> float:
    """Largest root magnitude, via the eigenvalues of the companion matrix."""
    c = np.asarray(coeffs, dtype=float)
    degree = len(c) - 1
    if degree < 1:
        raise ValueError("polynomial must have degree >= 1")
    if degree > MAX_DEGREE:
        raise ValueError(f"degree {degree} exceeds supported maximum {MAX_DEGREE}")
    if c[0] == 0:
        raise ValueError("leading coefficient must be nonzero")
    if degree == 1:
        return abs(c[1] / c[0])
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(c)))))


def radius_at(problem: StabilityProblem, alpha: float) -> float:
    return spectral_radius(build_char_poly(problem.with_alpha(alpha)))


def is_stable(radius: float) -> bool:
    return radius <= 1.0 + STABILITY_EPS


@dataclass(frozen=True)
class ThresholdResult:
    alpha_star: float
    radius_at_star: float
    iterations: int
    bracket: tuple


def max_stable_alpha(problem: StabilityProblem, tol: float = 1e-10,
                     scan_points: int = 96) -> ThresholdResult:
    """Smallest step size at which the spectral radius leaves the unit disk.

    A geometric scan below the first known unstable step locates the lowest
    crossing, which is then bisected until the bracket width is below
    ``tol`` relative to its upper end.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    limit = 2.0 ** 10 / problem.lam
    hi = 4.0 / problem.lam
    while is_stable(radius_at(problem, hi)):
        hi *= 2
        if hi > limit:
            raise StabilityError(f"no instability found below alpha = {limit:g}")

    grid = hi * np.geomspace(1e-7, 1.0, scan_points)
    lo = None
    for a in grid:
        if is_stable(radius_at(problem, a)):
            lo = a
        else:
            hi = a
            break
    if lo is None:
        raise StabilityError("update rule is unstable for arbitrarily small alpha")

    iterations = 0
    while hi - lo > tol * hi and iterations < 200:
        mid = 0.5 * (lo + hi)
        if is_stable(radius_at(problem, mid)):
            lo = mid
        else:
            hi = mid
        iterations += 1
    return ThresholdResult(alpha_star=lo, radius_at_star=radius_at(problem, lo),
                           iterations=iterations, bracket=(lo, hi))


def lemma1_threshold(lam: float, tau: int) -> float:
    """Largest stable step size of delayed gradient descent on a quadratic."""
    if lam <= 0:
        raise ValueError("curvature must be > 0")
    return 2.0 / lam * math.sin(math.pi / (4 * tau + 2))


def lemma2_bound(lam: float, delta: float, tau_fwd: int, tau_bkwd: int) -> float:
    """Some step size at or below this value is unstable under discrepancy."""
    if tau_fwd <= tau_bkwd:
        raise ValueError("need tau_fwd > tau_bkwd")
    if delta <= 0:
        raise ValueError("need delta > 0")
    return min(2.0 / (delta * (tau_fwd - tau_bkwd)), lemma1_threshold(lam, tau_fwd))


def lemma3_bound(lam: float, tau: int) -> float:
    """Momentum cannot push the first unstable step size above this value."""
    if lam <= 0:
        raise ValueError("curvature must be > 0")
    return 4.0 / lam * math.sin(math.pi / (4 * tau + 2))


def gamma_for_decay(D: float, tau_fwd: int, tau_bkwd: int) -> float:
    if not 0 < D < 1:
        raise ValueError(f"D must be in (0, 1), got {D}")
    if tau_fwd <= tau_bkwd:
        raise ValueError("no discrepancy to correct when tau_fwd == tau_bkwd")
    return D ** (1.0 / (tau_fwd - tau_bkwd))


def gamma_second_order(tau_fwd: int, tau_bkwd: int) -> float:
    """Decay that removes delta from the second derivative of p at 1."""
    return 1.0 - 2.0 / (tau_fwd - tau_bkwd + 1)


def poly_probe(problem: StabilityProblem, order: int, at: complex):
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    p = build_char_poly(problem)
    if order:
        p = np.polyder(p, order)
    return np.polyval(p, at)


def largest_curvature(X, tol: float = 1e-8, max_iter: int = 100_000, seed: int = 0) -> float:
    """Top eigenvalue of (1/n) X^T X by power iteration."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("X must be an n x d matrix with n >= 1")
    n = X.shape[0]
    H = X.T @ X / n
    v = np.random.default_rng(seed).standard_normal(H.shape[0])
    v /= np.linalg.norm(v)
    rq = float(v @ H @ v)
    for _ in range(max_iter):
        Hv = H @ v
        norm = np.linalg.norm(Hv)
        if norm == 0:
            return 0.0
        v = Hv / norm
        new_rq = float(v @ H @ v)
        resid = np.linalg.norm(H @ v - new_rq * v)
        if resid <= tol * abs(new_rq) or abs(new_rq - rq) <= 1e-15 * abs(new_rq):
            return new_rq
        rq = new_rq
    raise StabilityError(f"power iteration did not converge in {max_iter} iterations")

"""Samplers and closed-form evaluations for the five distributions of the model.

Public samplers take a :class:`numpy.random.Generator`. The ``*_nb`` functions are
scalar numba kernels drawing from numba's per-thread generator; the generator
module reseeds that generator per node with :func:`stream_seed`, which keeps
output independent of thread count. Both routes use the same inverse-CDF maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np


@dataclass(frozen=True)
class GeometricParam:
    """Geometric law on ``{support_start, support_start+1, ...}``.

    With ``continuation=False`` (active periods, waiting periods, link durations)
    ``p`` is the per-step stopping probability: ``Pr(t) = p (1-p)^(t-start)``.
    With ``continuation=True`` (activation degree) ``p`` plays the role of
    ``lambda``: ``Pr(k) = (1-lambda) lambda^(k-start)``.
    """

    p: float
    support_start: int = 1
    continuation: bool = False

    def __post_init__(self):
        if self.support_start not in (0, 1):
            raise ValueError("support_start must be 0 or 1")
        if self.continuation:
            if not 0.0 <= self.p < 1.0:
                raise ValueError(f"continuation probability {self.p} outside [0, 1)")
        elif not 0.0 < self.p <= 1.0:
            raise ValueError(f"success probability {self.p} outside (0, 1]")

    @property
    def success(self) -> float:
        return 1.0 - self.p if self.continuation else self.p

    @property
    def mean(self) -> float:
        return self.support_start - 1 + 1.0 / self.success

    def pmf(self, t):
        t = np.asarray(t)
        k = t - self.support_start
        s = self.success
        with np.errstate(divide="ignore", invalid="ignore"):
            out = s * np.exp(k * np.log1p(-s)) if s < 1 else (k == 0).astype(float)
        return np.where(k >= 0, out, 0.0)


@dataclass(frozen=True)
class TruncatedGeometricParam:
    """``Pr(t) = p_c (1-p_c)^t / (1 - (1-p_c)^bound)`` on ``t = 0 .. bound-1``."""

    p_c: float
    bound: int

    def __post_init__(self):
        if not 0.0 < self.p_c < 1.0:
            raise ValueError(f"p_c={self.p_c} outside (0, 1)")
        if self.bound < 1:
            raise ValueError(f"bound={self.bound} must be at least 1")

    def pmf(self, t):
        return truncated_geometric_pmf(t, self.p_c, self.bound)


@dataclass(frozen=True)
class BoundedPowerLawParam:
    """Density ``beta x^-(beta+1) / (lower^-beta - upper^-beta)`` on ``[lower, upper]``."""

    beta: float
    lower: float
    upper: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"exponent beta={self.beta} must be positive")
        if not 0.0 < self.lower < self.upper <= 1.0:
            raise ValueError(f"need 0 < lower < upper <= 1, got lower={self.lower}, upper={self.upper}")

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.lower, self.upper)
        lo, hi = self.lower ** -self.beta, self.upper ** -self.beta
        return (lo - x ** -self.beta) / (lo - hi)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        norm = self.lower ** -self.beta - self.upper ** -self.beta
        inside = (x >= self.lower) & (x <= self.upper)
        return np.where(inside, self.beta * x ** -(self.beta + 1) / norm, 0.0)

    def ppf(self, u):
        lo, hi = self.lower ** -self.beta, self.upper ** -self.beta
        return (lo - np.asarray(u) * (lo - hi)) ** (-1.0 / self.beta)

    def mean(self) -> float:
        b, lo, hi = self.beta, self.lower, self.upper
        norm = lo ** -b - hi ** -b
        if abs(b - 1.0) < 1e-12:
            return b * np.log(hi / lo) / norm
        return b * (hi ** (1 - b) - lo ** (1 - b)) / ((1 - b) * norm)


# ---------------------------------------------------------------------------
# samplers (numpy Generator)


def sample_geometric(param: GeometricParam, rng: np.random.Generator, size=None):
    s = param.success
    if s >= 1.0:
        return np.full(size, param.support_start, dtype=np.int64) if size is not None else param.support_start
    u = 1.0 - rng.random(size)  # (0, 1]
    t = np.floor(np.log(u) / np.log1p(-s)).astype(np.int64) + param.support_start
    return t


def sample_truncated_geometric(param: TruncatedGeometricParam, rng: np.random.Generator, size=None):
    lq = np.log1p(-param.p_c)
    mass = -np.expm1(param.bound * lq)
    u = rng.random(size)
    t = np.floor(np.log1p(-u * mass) / lq).astype(np.int64)
    return np.minimum(t, param.bound - 1)


def sample_bounded_powerlaw(param: BoundedPowerLawParam, rng: np.random.Generator, size=None):
    return np.clip(param.ppf(rng.random(size)), param.lower, param.upper)


def sample_mixed_degree(param: BoundedPowerLawParam, rng: np.random.Generator, size=None):
    """Two-stage draw: ``lambda`` from the power law, then a degree from the continuation geometric."""
    lam = sample_bounded_powerlaw(param, rng, size)
    u = 1.0 - rng.random(size)
    with np.errstate(divide="ignore"):
        d = np.floor(np.log(u) / np.log(lam)) + 1
    return np.where(lam > 0, d, 1).astype(np.int64)


# ---------------------------------------------------------------------------
# numba kernels


@nb.njit(cache=True)
def splitmix64(x):
    x = (x + np.uint64(0x9E3779B97F4A7C15))
    z = x
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True)
def stream_seed(master, stream):
    """32-bit seed for sub-stream ``stream`` of ``master`` (e.g. one per node)."""
    h = splitmix64(np.uint64(master) ^ splitmix64(np.uint64(stream) + np.uint64(0x632BE59BD9B4E019)))
    return np.uint32(h >> np.uint64(32))


@nb.njit(cache=True)
def seed_stream(master, stream):
    np.random.seed(stream_seed(master, stream))


@nb.njit(cache=True)
def geometric_nb(p):
    """Draw from ``p (1-p)^(t-1)``, ``t >= 1``."""
    if p >= 1.0:
        return 1
    u = 1.0 - np.random.random()
    return 1 + np.int64(np.floor(np.log(u) / np.log1p(-p)))


@nb.njit(cache=True)
def degree_nb(lam):
    """Draw from ``(1-lam) lam^(k-1)``, ``k >= 1``."""
    if lam <= 0.0:
        return 1
    if lam >= 1.0:
        return np.int64(4e18)
    u = 1.0 - np.random.random()
    x = np.floor(np.log(u) / np.log(lam))
    if x > 4.0e18:
        return np.int64(4e18)
    return 1 + np.int64(x)


@nb.njit(cache=True)
def truncated_geometric_nb(p, bound):
    lq = np.log1p(-p)
    mass = -np.expm1(bound * lq)
    u = np.random.random()
    t = np.int64(np.floor(np.log1p(-u * mass) / lq))
    if t > bound - 1:
        t = bound - 1
    return t


@nb.njit(cache=True)
def powerlaw_nb(beta, lower, upper):
    lo = lower ** -beta
    hi = upper ** -beta
    x = (lo - np.random.random() * (lo - hi)) ** (-1.0 / beta)
    if x < lower:
        return lower
    if x > upper:
        return upper
    return x


# ---------------------------------------------------------------------------
# closed forms


def equilibrium_probs(rho: float, q: float) -> tuple[float, float]:
    """Stationary (inactive, active) probabilities of the two-state activation chain."""
    if not (0 <= rho <= 1 and 0 <= q <= 1):
        raise ValueError("rho and q must be probabilities")
    if rho + q == 0:
        raise ValueError("rho and q cannot both be zero")
    return rho / (q + rho), q / (q + rho)


def truncated_geometric_pmf(t, p_c, bound):
    t = np.asarray(t)
    bound = np.asarray(bound)
    lq = np.log1p(-p_c)
    mass = -np.expm1(bound * lq)
    out = p_c * np.exp(t * lq) / mass
    return np.where((t >= 0) & (t < bound), out, 0.0)


def truncated_geometric_cdf(t, p_c, bound):
    t = np.asarray(t)
    lq = np.log1p(-p_c)
    out = np.expm1((np.minimum(t, bound - 1) + 1) * lq) / np.expm1(bound * lq)
    return np.where(t < 0, 0.0, out)


_SERIES_CUTOFF = 1e-5


def _phi(y):
    """``(e^y - 1) / y`` with its removable singularity at 0 filled by a series."""
    y = np.asarray(y, dtype=float)
    small = np.abs(y) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, y)
    with np.errstate(over="ignore"):
        direct = np.expm1(safe) / safe
    series = 1 + y / 2 + y * y / 6 + y ** 3 / 24
    return np.where(small, series, direct)


def _dphi(y):
    """Derivative of :func:`_phi`: ``(y e^y - e^y + 1) / y^2``."""
    y = np.asarray(y, dtype=float)
    small = np.abs(y) < 1e-3
    safe = np.where(small, 1.0, y)
    with np.errstate(over="ignore", invalid="ignore"):
        direct = (safe * np.exp(safe) - np.expm1(safe)) / (safe * safe)
    series = 0.5 + y / 3 + y * y / 8 + y ** 3 / 30 + y ** 4 / 144
    return np.where(small, series, direct)


def _span(a, xi, psi):
    """``(psi^a - xi^a) / a``, finite at ``a = 0``."""
    a = np.asarray(a, dtype=float)
    L = np.log(psi / xi)
    x = a * L
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        mid = xi ** a * L * _phi(np.minimum(x, 30.0))
        far = (psi ** a - xi ** a) / np.where(a == 0, 1.0, a)
    return np.where(x < 30.0, mid, far)


def mixed_degree_terms(d, beta, xi):
    """``G(d) = (1-xi^(d-beta-1))/(d-beta-1) - (1-xi^(d-beta))/(d-beta)`` and its partials in beta, xi.

    Upper limit is fixed at 1. Returns ``(G, dG/dbeta, dG/dxi)``.
    """
    d = np.asarray(d, dtype=float)
    a = d - beta - 1.0
    L = -np.log(xi)
    # (1 - xi^a)/a = L * phi(-a L)
    g = L * (_phi(-a * L) - _phi(-(a + 1.0) * L))
    # d/da [L phi(-aL)] = -L^2 phi'(-aL); a = d - beta - 1 so d/dbeta flips the sign
    dg_dbeta = L * L * (_dphi(-a * L) - _dphi(-(a + 1.0) * L))
    with np.errstate(over="ignore"):
        dg_dxi = np.exp((a - 1.0) * np.log(xi)) * (xi - 1.0)
    return g, dg_dbeta, dg_dxi


def mixed_degree_pmf(d, param: BoundedPowerLawParam):
    """Marginal activation-degree pmf when ``lambda`` follows the bounded power law.

    Equals ``int (1-lam) lam^(d-1) f(lam) dlam`` over ``[lower, upper]``.
    """
    d = np.asarray(d)
    if np.any(d < 1):
        raise ValueError("degree must be >= 1")
    beta, xi, psi = param.beta, param.lower, param.upper
    a = d - beta - 1.0
    norm = xi ** -beta - psi ** -beta
    if psi == 1.0:
        g = mixed_degree_terms(d, beta, xi)[0]
    else:
        g = _span(a, xi, psi) - _span(a + 1.0, xi, psi)
    return beta / norm * g

"""Maximum-likelihood fitting of the model parameters from co-location samples."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .model import TimeGrid
from .stochastic import mixed_degree_terms

log = logging.getLogger(__name__)

DEFAULT_BRACKET = (1e-6, 1.0 - 1e-6)
BETA_BRACKET = (1e-3, 100.0)
BETA_INIT = 2.5


class FittingError(RuntimeError):
    """A fitter could not produce an interior estimate."""

    def __init__(self, parameter: str, message: str, **details):
        self.parameter = parameter
        self.details = details
        super().__init__(f"{parameter}: {message}")


class BoundaryError(FittingError):
    """Likelihood is maximised at an end of the search interval; ``estimate`` holds that end."""

    def __init__(self, parameter: str, message: str, estimate: float, **details):
        self.estimate = estimate
        super().__init__(parameter, message, estimate=estimate, **details)


class NonConvergenceError(FittingError):
    pass


def _as_samples(name, samples, minimum):
    a = np.asarray(samples)
    if a.size == 0:
        raise FittingError(name, "empty sample set")
    if not np.issubdtype(a.dtype, np.integer):
        if np.any(a != np.round(a)):
            raise FittingError(name, "samples must be integers")
        a = a.astype(np.int64)
    if a.min() < minimum:
        raise FittingError(name, f"samples must be >= {minimum}, found {a.min()}")
    return a.ravel()


def fit_geometric(samples) -> float:
    """MLE of the stopping probability of a geometric law on ``{1, 2, ...}``: ``m / sum``."""
    s = _as_samples("geometric", samples, 1)
    return s.size / float(s.sum(dtype=np.float64))


def fit_homogeneous_degree(degrees) -> float:
    """MLE of ``lambda`` in ``(1-lambda) lambda^(k-1)``: ``1 - m / sum(d)``."""
    return 1.0 - fit_geometric(degrees)


def fit_activation_rate(h_samples, rho: float, steps_per_day: int) -> float:
    """Solve ``q z rho / (q + rho) = mean(h)`` for the inactive-to-active probability ``q``."""
    h = _as_samples("q", h_samples, 0)
    hbar = float(h.mean())
    zr = steps_per_day * rho
    if hbar <= 0:
        raise BoundaryError("q", "no activations in the sample (mean h = 0)", estimate=0.0)
    if zr <= hbar:
        raise FittingError("q", f"infeasible: z*rho = {zr:g} must exceed mean h = {hbar:g}", z_rho=zr, h_mean=hbar)
    q = rho * hbar / (zr - hbar)
    if q >= 1.0:
        raise BoundaryError("q", f"estimate {q:g} is not a probability", estimate=q)
    return q


# ---------------------------------------------------------------------------
# link creation delay


class _DelayLikelihood:
    """Marginal likelihood of delays, averaging the truncated geometric over observed active periods.

    Delays and bounds are grouped by value, so each evaluation costs
    O(#distinct delays + #distinct bounds) regardless of sample size.
    """

    def __init__(self, t_c, t_a, delta):
        t_c = _as_samples("p_c", t_c, 0)
        t_a = _as_samples("p_c", t_a, 1)
        self.tvals, self.tcnt = np.unique(t_c, return_counts=True)
        self.bvals, self.bcnt = np.unique(t_a + int(delta), return_counts=True)
        self.n = int(t_c.size)
        self.m = int(t_a.size)
        # delays t only see bounds b > t
        self.first = np.searchsorted(self.bvals, self.tvals, side="right")
        if np.any(self.first >= len(self.bvals)):
            bad = self.tvals[self.first >= len(self.bvals)][0]
            raise FittingError("p_c", f"delay {bad} is not below any active period + delta bound")

    def _suffix(self, p):
        lq = math.log1p(-p)
        b = self.bvals.astype(float)
        mass = -np.expm1(b * lq)
        w = self.bcnt / mass
        dw = -self.bcnt * b * np.exp((b - 1) * lq) / mass ** 2
        s = np.cumsum(w[::-1])[::-1]
        ds = np.cumsum(dw[::-1])[::-1]
        return s[self.first], ds[self.first]

    def score(self, p):
        s, ds = self._suffix(p)
        per_value = 1.0 / p - self.tvals / (1.0 - p) + ds / s
        return float(np.sum(self.tcnt * per_value))

    def loglik(self, p):
        s, _ = self._suffix(p)
        lq = math.log1p(-p)
        return float(np.sum(self.tcnt * (math.log(p) + self.tvals * lq + np.log(s / self.m))))


def truncated_geometric_score(p_c, t_c, t_a, delta) -> float:
    """Derivative in ``p_c`` of the delay log-likelihood."""
    return _DelayLikelihood(t_c, t_a, delta).score(p_c)


def fit_truncated_geometric(t_c, t_a, delta: int, bracket=DEFAULT_BRACKET, xtol: float = 1e-10) -> float:
    """Estimate the link-creation probability ``p_c`` from delays and active periods.

    Raises :class:`BoundaryError` (carrying the bracket end) when the score does not
    change sign inside ``bracket``.
    """
    lik = _DelayLikelihood(t_c, t_a, delta)
    lo, hi = bracket
    s_lo, s_hi = lik.score(lo), lik.score(hi)
    if s_lo > 0 and s_hi > 0:
        raise BoundaryError("p_c", "likelihood increases up to the upper bracket", estimate=hi,
                            score_lo=s_lo, score_hi=s_hi)
    if s_lo < 0 and s_hi < 0:
        raise BoundaryError("p_c", "likelihood decreases from the lower bracket", estimate=lo,
                            score_lo=s_lo, score_hi=s_hi)
    return brentq(lik.score, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)


# ---------------------------------------------------------------------------
# heterogeneous activation degree


class _DegreeLikelihood:
    def __init__(self, d):
        d = _as_samples("degrees", d, 1)
        self.vals, self.cnt = np.unique(d, return_counts=True)
        self.n = int(d.size)

    def loglik(self, beta, xi):
        g = mixed_degree_terms(self.vals, beta, xi)[0]
        norm = xi ** -beta - 1.0
        return float(self.n * (math.log(beta) - math.log(norm)) + np.sum(self.cnt * np.log(g)))

    def score_beta(self, beta, xi):
        g, gb, _ = mixed_degree_terms(self.vals, beta, xi)
        lx = math.log(xi)
        return float(self.n / beta + self.n * lx / (1.0 - xi ** beta) + np.sum(self.cnt * gb / g))

    def score_xi(self, beta, xi):
        g, _, gx = mixed_degree_terms(self.vals, beta, xi)
        norm = xi ** -beta - 1.0
        return float(self.n * beta * xi ** (-beta - 1) / norm + np.sum(self.cnt * gx / g))


def mixed_degree_scores(d, beta: float, xi: float) -> tuple[float, float]:
    """Partial derivatives of the degree log-likelihood in ``beta`` and ``xi`` (upper limit 1)."""
    lik = _DegreeLikelihood(d)
    return lik.score_beta(beta, xi), lik.score_xi(beta, xi)


def mixed_degree_loglik(d, beta: float, xi: float) -> float:
    return _DegreeLikelihood(d).loglik(beta, xi)


def mixed_degree_psi_score(d, beta: float, xi: float, psi: float) -> float:
    """Derivative in the upper limit ``psi`` of the degree log-likelihood (not used by :func:`fit_all`)."""
    from .stochastic import _span
    d = _as_samples("degrees", d, 1).astype(float)
    a = d - beta - 1.0
    g = _span(a, xi, psi) - _span(a + 1.0, xi, psi)
    norm = xi ** -beta - psi ** -beta
    return float(-d.size * beta * psi ** (-beta - 1) / norm + np.sum((psi ** (a - 1) - psi ** a) / g))


@dataclass
class MixedDegreeFit:
    beta: float
    xi: float
    one_step_beta: float
    one_step_xi: float
    iterations: int
    loglik: float

    def __iter__(self):
        yield self.beta
        yield self.xi


def _solve(fn, lo, hi, name, xtol):
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise", under="ignore"):
            f_lo, f_hi = fn(lo), fn(hi)
            if not (math.isfinite(f_lo) and math.isfinite(f_hi)):
                raise FloatingPointError("non-finite score")
            if f_lo > 0 and f_hi > 0:
                raise BoundaryError(name, "score positive across the bracket; estimate diverges upward",
                                    estimate=hi, score_lo=f_lo, score_hi=f_hi)
            if f_lo < 0 and f_hi < 0:
                raise BoundaryError(name, "score negative across the bracket", estimate=lo,
                                    score_lo=f_lo, score_hi=f_hi)
            return brentq(fn, lo, hi, xtol=xtol, maxiter=500)
    except (OverflowError, FloatingPointError, ZeroDivisionError) as exc:
        raise NonConvergenceError(name, f"score evaluation failed numerically ({exc}); "
                                  "the sample is too small or degenerate", bracket=(lo, hi)) from None


def fit_mixed_degree(d, beta0: float = BETA_INIT, tol: float = 1e-4, max_iter: int = 100,
                     xi_bracket=DEFAULT_BRACKET, beta_bracket=BETA_BRACKET) -> MixedDegreeFit:
    """Alternate the ``xi`` and ``beta`` score equations until both move less than ``tol``."""
    lik = _DegreeLikelihood(d)
    if lik.n < 1000:
        log.warning("fit_mixed_degree: only %d degree samples; estimates will be noisy", lik.n)
    if np.all(lik.vals == 1):
        raise BoundaryError("beta", "all degrees equal 1; no tail information, beta diverges upward",
                            estimate=math.inf)
    beta, xi = beta0, None
    one_step = None
    for it in range(1, max_iter + 1):
        # keep xi^-beta finite at the lower end of the bracket
        xi_lo = max(xi_bracket[0], math.exp(-600.0 / beta))
        try:
            xi_new = _solve(lambda x: lik.score_xi(beta, x), xi_lo, xi_bracket[1], "xi", 1e-12)
            beta_new = _solve(lambda b: lik.score_beta(b, xi_new), *beta_bracket, "beta", 1e-12)
        except FittingError as exc:
            exc.details.update(beta=beta, xi=xi, iteration=it)
            raise
        if one_step is None:
            one_step = (beta_new, xi_new)
        done = xi is not None and abs(xi_new - xi) < tol and abs(beta_new - beta) < tol
        beta, xi = beta_new, xi_new
        if done:
            return MixedDegreeFit(beta, xi, one_step[0], one_step[1], it, lik.loglik(beta, xi))
    raise NonConvergenceError("beta", f"alternating solve did not converge in {max_iter} iterations",
                              beta=beta, xi=xi, score_beta=lik.score_beta(beta, xi),
                              score_xi=lik.score_xi(beta, xi))


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class CipSamples:
    active_periods: np.ndarray
    activation_frequencies: np.ndarray
    degrees: np.ndarray
    link_delays: np.ndarray
    link_durations: np.ndarray | None = None


@dataclass
class FittedParams:
    rho: float
    q: float
    lambda_homog: float
    beta: float
    xi: float
    p_c: float
    p_b: float
    delta_steps: int
    step_seconds: int
    diagnostics: dict = field(default_factory=dict)

    def as_kv(self) -> dict:
        return {"rho": self.rho, "q": self.q, "lambda": self.lambda_homog, "beta": self.beta, "xi": self.xi,
                "p_c": self.p_c, "p_b": self.p_b, "delta_steps": self.delta_steps,
                "step_seconds": self.step_seconds}


def fit_all(samples: CipSamples, grid: TimeGrid, delta: int) -> FittedParams:
    """Run every fitter; ``p_b`` is tied to ``rho``. Errors name the offending parameter/sample set."""
    named = {"active_periods": samples.active_periods, "activation_frequencies": samples.activation_frequencies,
             "degrees": samples.degrees, "link_delays": samples.link_delays}
    for name, s in named.items():
        if s is None or np.asarray(s).size == 0:
            raise FittingError(name, "empty sample set")
    diag: dict = {}
    rho = fit_geometric(samples.active_periods)
    diag["rho_loglik"] = float(np.sum(np.log(rho) + (np.asarray(samples.active_periods) - 1) * np.log1p(-rho)))
    q = fit_activation_rate(samples.activation_frequencies, rho, grid.steps_per_day)
    lam = fit_homogeneous_degree(samples.degrees)
    mixed = fit_mixed_degree(samples.degrees)
    diag.update(beta_xi_iterations=mixed.iterations, beta_xi_loglik=mixed.loglik,
                beta_one_step=mixed.one_step_beta, xi_one_step=mixed.one_step_xi)
    lik = _DelayLikelihood(samples.link_delays, samples.active_periods, delta)
    p_c = fit_truncated_geometric(samples.link_delays, samples.active_periods, delta)
    diag["p_c_loglik"] = lik.loglik(p_c)
    diag["p_c_score"] = lik.score(p_c)
    if samples.link_durations is not None and np.asarray(samples.link_durations).size:
        diag["p_b_from_durations"] = fit_geometric(samples.link_durations)
    return FittedParams(rho, q, lam, mixed.beta, mixed.xi, p_c, rho, int(delta), grid.step_seconds, diag)

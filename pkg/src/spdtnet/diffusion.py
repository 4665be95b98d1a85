"""Day-stepped SIR epidemics driven by airborne exposure over SPDT links.

While an infectious host is present, the pathogen concentration in the shared
space rises as ``g/(rV) (1 - e^{-r (t - t_s)})``; after the host leaves it decays
as ``e^{-r (t - t_l)}``. A susceptible present over ``[t_s', t_l']`` inhales
``p`` times the integral of the concentration, and is infected with probability
``1 - e^{-sigma E}``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numba as nb
import numpy as np

from .model import ContactNetwork, LinkClass
from .stochastic import stream_seed


@dataclass(frozen=True)
class DiseaseParams:
    g: float = 0.304            # PFU / s
    p: float = 7.5e-3 / 60.0    # m^3 / s  (7.5 L/min)
    V: float = 2512.0           # m^3
    r_t: float = 60.0           # median particle removal time, minutes
    removal_range: tuple[float, float] = (7.5, 300.0)
    sigma: float = 0.33
    tau_range: tuple[int, int] = (3, 5)
    incubation: int = 1
    seeds: int = 500

    def __post_init__(self):
        if min(self.g, self.p, self.V) <= 0:
            raise ValueError("g, p and V must be positive")
        lo, hi = self.removal_range
        if not 0 < lo <= self.r_t <= hi:
            raise ValueError(f"median removal time {self.r_t} outside removal range {self.removal_range}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not 1 <= self.tau_range[0] <= self.tau_range[1]:
            raise ValueError(f"invalid infectious period range {self.tau_range}")
        if self.incubation != 1:
            raise ValueError("only a one-day incubation is supported")
        if self.seeds < 0:
            raise ValueError("seeds must be non-negative")

    @classmethod
    def from_kv(cls, values: dict, **overrides) -> "DiseaseParams":
        kw = {}
        for key in ("g", "V", "r_t", "sigma"):
            if key in values:
                kw[key] = float(values[key])
        if "p" in values:
            kw["p"] = float(values["p"]) * 1e-3 / 60.0  # L/min -> m^3/s
        if "b_min" in values or "b_max" in values:
            kw["removal_range"] = (float(values.get("b_min", 7.5)), float(values.get("b_max", 300.0)))
        if "tau_min" in values or "tau_max" in values:
            kw["tau_range"] = (int(values.get("tau_min", 3)), int(values.get("tau_max", 5)))
        if "incubation_days" in values:
            kw["incubation"] = int(values["incubation_days"])
        if "seeds" in values:
            kw["seeds"] = int(values["seeds"])
        kw.update(overrides)
        return cls(**kw)

    def with_strict_tau(self) -> "DiseaseParams":
        """Infectious period fixed at 3 days."""
        return replace(self, tau_range=(3, 3))


# ---------------------------------------------------------------------------
# exposure


@nb.njit(cache=True)
def _x_plus_expm1(x):
    """``x + e^{-x} - 1`` without cancellation for small x."""
    if x < 1e-3:
        return x * x * (0.5 - x * (1.0 / 6.0 - x * (1.0 / 24.0 - x / 120.0)))
    return x + np.expm1(-x)


@nb.njit(cache=True)
def _exposure(ts, tl, js, jl, g, p, V, r):
    """Exposure of a neighbour present over ``[js, jl]`` to a host present over ``[ts, tl]`` (seconds)."""
    if jl <= js:
        return 0.0
    if js >= tl:
        ti = js
    elif jl > tl:
        ti = tl
    else:
        ti = jl
    a = r * (js - ts)
    if a < 0.0:
        a = 0.0
    total = 0.0
    if ti > js:
        x = r * (ti - js)
        total += _x_plus_expm1(x) - np.expm1(-a) * -np.expm1(-x)
    if jl > ti:
        total += -np.expm1(-r * (tl - ts)) * np.exp(-r * (ti - tl)) * -np.expm1(-r * (jl - ti))
    return g * p / (V * r * r) * total


def link_exposure(t_s, t_l, t_s2, t_l2, g, p, V, r) -> float:
    """Exposure (PFU) carried by one link; all times in seconds, ``r`` per second."""
    if not r > 0:
        raise ValueError(f"removal rate r={r} must be positive")
    if not (t_s < t_l and t_s <= t_s2 and t_s2 <= t_l2):
        raise ValueError("link times must satisfy t_s < t_l, t_s <= t_s' <= t_l'")
    return float(_exposure(float(t_s), float(t_l), float(t_s2), float(t_l2), g, p, V, r))


def link_exposure_table(t_s, t_l, t_s2, t_l2, g, p, V, r) -> np.ndarray:
    """Vectorised :func:`link_exposure` (no validation)."""
    t_s, t_l, t_s2, t_l2, r = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t_s, t_l, t_s2, t_l2, r)))
    return _exposure_many(t_s.ravel(), t_l.ravel(), t_s2.ravel(), t_l2.ravel(), g, p, V,
                          r.ravel()).reshape(t_s.shape)


@nb.njit(cache=True)
def _exposure_many(ts, tl, js, jl, g, p, V, r):
    out = np.empty(len(ts))
    for i in range(len(ts)):
        out[i] = _exposure(ts[i], tl[i], js[i], jl[i], g, p, V, r[i])
    return out


@nb.njit(cache=True)
def _draw_removal_minutes(lo, med, hi):
    """Two-piece log-uniform: half the mass on ``[lo, med]``, half on ``[med, hi]``."""
    u = np.random.random()
    if u < 0.5:
        return lo * (med / lo) ** (2.0 * u)
    return med * (hi / med) ** (2.0 * u - 1.0)


def sample_removal_minutes(params: DiseaseParams, rng: np.random.Generator, size=None):
    lo, hi = params.removal_range
    u = rng.random(size)
    med = params.r_t
    return np.where(u < 0.5, lo * (med / lo) ** (2 * u), med * (hi / med) ** (2 * u - 1))


@nb.njit(cache=True)
def _neumaier(values):
    s = 0.0
    c = 0.0
    for v in values:
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
    return s + c


def total_exposure(links, params: DiseaseParams, rng: np.random.Generator) -> float:
    """Summed exposure of one susceptible over one day's links ``(t_s, t_l, t_s', t_l')`` in seconds.

    A single removal time ``b`` is drawn and shared by all the links.
    """
    links = np.asarray(links, dtype=float).reshape(-1, 4)
    if len(links) == 0:
        return 0.0
    b = float(sample_removal_minutes(params, rng))
    r = 1.0 / (60.0 * b)
    e = _exposure_many(links[:, 0], links[:, 1], links[:, 2], links[:, 3], params.g, params.p, params.V,
                       np.full(len(links), r))
    return float(_neumaier(e))


def infection_probability(E, sigma: float):
    E = np.asarray(E, dtype=float)
    if np.any(E < 0):
        raise ValueError("exposure must be non-negative")
    out = -np.expm1(-sigma * E)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# simulation

EVENT_SEED, EVENT_INFECT, EVENT_RECOVER = 0, 1, 2
EVENT_NAMES = ("seed", "infect", "recover")


@dataclass
class LinkTable:
    """Links of a network arranged for day-stepped simulation, bucketed by the neighbour's arrival day."""

    n_nodes: int
    n_days: int
    day_offsets: np.ndarray
    host: np.ndarray
    nbr: np.ndarray
    host_day: np.ndarray
    ts: np.ndarray
    tl: np.ndarray
    js: np.ndarray
    jl: np.ndarray

    @classmethod
    def from_network(cls, network: ContactNetwork, days: int | None = None) -> "LinkTable":
        grid = network.grid
        n_days = grid.horizon_days if days is None else days
        if n_days > grid.horizon_days:
            raise ValueError(f"network covers {grid.horizon_days} days, {n_days} requested")
        spd = grid.steps_per_day
        day = network.link_join // spd
        keep = np.flatnonzero(day < n_days)
        order = keep[np.argsort(day[keep], kind="stable")]
        counts = np.bincount(day[order], minlength=n_days)
        offsets = np.zeros(n_days + 1, np.int64)
        np.cumsum(counts, out=offsets[1:])
        sec = float(grid.step_seconds)
        start = network.link_start[order]
        return cls(network.n_nodes, n_days, offsets,
                   network.link_host[order].astype(np.int32), network.link_nbr[order].astype(np.int32),
                   (start // spd).astype(np.int32),
                   start * sec, network.link_end[order] * sec,
                   network.link_join[order] * sec, network.link_leave[order] * sec)


@nb.njit(cache=True)
def _run_one(seed, n, n_days, seeds, day_off, host, nbr, host_day, ts, tl, js, jl,
             g, p, V, b_lo, b_med, b_hi, sigma, tau_lo, tau_hi, ip, ia, log, ev):
    np.random.seed(seed)
    never = np.int32(1 << 30)
    inf_day = np.full(n, never, np.int32)
    rec_day = np.full(n, never, np.int32)
    perm = np.arange(n).astype(np.int32)
    for k in range(seeds):
        j = k + np.random.randint(0, n - k)
        perm[k], perm[j] = perm[j], perm[k]
        v = perm[k]
        inf_day[v] = 0
        rec_day[v] = np.random.randint(tau_lo, tau_hi + 1)
    n_ev = 0
    if log:
        for k in range(seeds):
            ev[n_ev, 0] = 0
            ev[n_ev, 1] = perm[k]
            ev[n_ev, 2] = EVENT_SEED
            n_ev += 1
    acc = np.zeros(n)
    comp = np.zeros(n)
    r_of = np.zeros(n)
    seen = np.full(n, -1, np.int32)
    touched = np.empty(n, np.int32)
    prevalence = seeds
    cumulative = seeds
    for day in range(n_days):
        ip[day] = prevalence
        ia[day] = cumulative
        nt = 0
        for i in range(day_off[day], day_off[day + 1]):
            h = host[i]
            hd = host_day[i]
            if not (inf_day[h] <= hd and hd < rec_day[h]):
                continue
            u = nbr[i]
            if inf_day[u] <= day:
                continue
            if seen[u] != day:
                seen[u] = day
                acc[u] = 0.0
                comp[u] = 0.0
                r_of[u] = 1.0 / (60.0 * _draw_removal_minutes(b_lo, b_med, b_hi))
                touched[nt] = u
                nt += 1
            e = _exposure(ts[i], tl[i], js[i], jl[i], g, p, V, r_of[u])
            s = acc[u]
            t = s + e
            if abs(s) >= abs(e):
                comp[u] += (s - t) + e
            else:
                comp[u] += (e - t) + s
            acc[u] = t
        for k in range(nt):
            u = touched[k]
            prob = -np.expm1(-sigma * (acc[u] + comp[u]))
            if np.random.random() < prob:
                inf_day[u] = day + 1
                rec_day[u] = day + 1 + np.random.randint(tau_lo, tau_hi + 1)
                if log:
                    ev[n_ev, 0] = day + 1
                    ev[n_ev, 1] = u
                    ev[n_ev, 2] = EVENT_INFECT
                    n_ev += 1
        # state at the start of tomorrow
        nxt = day + 1
        prevalence = 0
        cumulative = 0
        for v in range(n):
            if inf_day[v] <= nxt:
                cumulative += 1
                if nxt < rec_day[v]:
                    prevalence += 1
                elif log and rec_day[v] == nxt and nxt < n_days:
                    ev[n_ev, 0] = nxt
                    ev[n_ev, 1] = v
                    ev[n_ev, 2] = EVENT_RECOVER
                    n_ev += 1
    return n_ev


@nb.njit(cache=True, parallel=True)
def _run_many(master, runs, n, n_days, seeds, day_off, host, nbr, host_day, ts, tl, js, jl,
              g, p, V, b_lo, b_med, b_hi, sigma, tau_lo, tau_hi, log):
    ip = np.zeros((runs, n_days), np.int64)
    ia = np.zeros((runs, n_days), np.int64)
    cap = 2 * n if log else 1
    ev = np.zeros((runs, cap, 3), np.int32)
    n_ev = np.zeros(runs, np.int64)
    for k in nb.prange(runs):
        n_ev[k] = _run_one(stream_seed(master, k), n, n_days, seeds, day_off, host, nbr, host_day,
                           ts, tl, js, jl, g, p, V, b_lo, b_med, b_hi, sigma, tau_lo, tau_hi,
                           ip[k], ia[k], log, ev[k])
    return ip, ia, ev, n_ev


@dataclass
class SirResult:
    prevalence: np.ndarray   # (runs, days) I_p at the start of each day
    cumulative: np.ndarray   # (runs, days) I_a at the start of each day
    events: np.ndarray | None = None  # rows (run, day, node, event code)

    @property
    def runs(self) -> int:
        return self.prevalence.shape[0]

    def summary(self) -> dict:
        return {"I_p_mean": self.prevalence.mean(0), "I_p_std": self.prevalence.std(0),
                "I_a_mean": self.cumulative.mean(0), "I_a_std": self.cumulative.std(0)}


def run_sir(network: ContactNetwork | LinkTable, params: DiseaseParams, runs: int = 1, seed: int = 0,
            days: int | None = None, log_events: bool = False) -> SirResult:
    """Monte-Carlo SIR over ``runs`` independent realisations; run ``k`` uses sub-stream ``k`` of ``seed``.

    Seeds are infectious from day 0 and count towards the cumulative series.
    A link is evaluated on the day the neighbour arrives, and contributes when
    the host was infectious on the day its visit started and the neighbour is
    still susceptible.
    """
    table = network if isinstance(network, LinkTable) else LinkTable.from_network(network, days)
    if params.seeds > table.n_nodes:
        raise ValueError(f"{params.seeds} seeds requested for {table.n_nodes} nodes")
    if runs < 1:
        raise ValueError("runs must be at least 1")
    lo, hi = params.removal_range
    ip, ia, ev, n_ev = _run_many(np.uint64(seed), runs, table.n_nodes, table.n_days, params.seeds,
                                 table.day_offsets, table.host, table.nbr, table.host_day,
                                 table.ts, table.tl, table.js, table.jl,
                                 params.g, params.p, params.V, lo, params.r_t, hi, params.sigma,
                                 params.tau_range[0], params.tau_range[1], log_events)
    events = None
    if log_events:
        parts = []
        for k in range(runs):
            block = ev[k, :n_ev[k]]
            parts.append(np.column_stack([np.full(len(block), k, np.int64), block.astype(np.int64)]))
        events = np.concatenate(parts) if parts else np.empty((0, 4), np.int64)
    return SirResult(ip, ia, events)


def apv(reference, observed) -> tuple[np.ndarray, float]:
    """Per-day absolute percentage variation of ``observed`` against ``reference`` and its mean."""
    ref = np.asarray(reference, dtype=float)
    obs = np.asarray(observed, dtype=float)
    if ref.shape != obs.shape:
        raise ValueError("series differ in length")
    if np.any(ref == 0):
        raise ValueError(f"reference series is zero on day {int(np.flatnonzero(ref == 0)[0])}")
    per_day = 100.0 * np.abs(ref - obs) / ref
    return per_day, float(per_day.mean())


def link_class_counts(network: ContactNetwork) -> dict:
    cls = network.link_classes()
    return {c.name.lower(): int(np.sum(cls == c)) for c in LinkClass}

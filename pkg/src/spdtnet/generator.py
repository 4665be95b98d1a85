"""Synthetic SPDT contact networks (GDH/GDT) and activity-driven baselines (BDH/BDT).

Generation runs in two phases. Phase 1 draws, independently per node, the
activation sequence, one degree per copy and the timing of every link; each
node reseeds numba's generator from ``stream_seed(master_seed, node)``, so the
result does not depend on how nodes are spread over threads. Phase 2 walks all
copies in ``(start, host)`` order on a single seeded stream and assigns
neighbour identities through the reinforcement process held in
:class:`SocialState`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Union

import numba as nb
import numpy as np

from .model import ContactNetwork, TimeGrid, write_network
from .stochastic import (BoundedPowerLawParam, degree_nb, equilibrium_probs, geometric_nb, powerlaw_nb,
                         seed_stream, stream_seed, truncated_geometric_nb)

# sub-stream ids outside the node-id range
_RESOLVE_STREAM = (1 << 62) + 1
_ADN_STREAM = (1 << 62) + 2

NON_EXACT_POOL_LIMIT = 512
DEFAULT_LINK_CAP = 400_000_000


@dataclass(frozen=True)
class HomogeneousDegree:
    lam: float = 0.32

    def __post_init__(self):
        if not 0.0 <= self.lam < 1.0:
            raise ValueError(f"lambda={self.lam} outside [0, 1)")


@dataclass(frozen=True)
class HeterogeneousDegree:
    beta: float = 2.963
    xi: float = 0.26
    psi: float = 1.0

    def __post_init__(self):
        BoundedPowerLawParam(self.beta, self.xi, self.psi)

    @property
    def law(self) -> BoundedPowerLawParam:
        return BoundedPowerLawParam(self.beta, self.xi, self.psi)


DegreeModel = Union[HomogeneousDegree, HeterogeneousDegree]


def _check_prob(name, value, allow_zero=False):
    lo_ok = value >= 0.0 if allow_zero else value > 0.0
    if not (lo_ok and value <= 1.0):
        raise ValueError(f"{name}={value} outside {'[0' if allow_zero else '(0'}, 1]")


@dataclass(frozen=True)
class ModelParams:
    rho: float = 0.085
    q: float = 0.0048
    degree_model: DegreeModel = field(default_factory=HeterogeneousDegree)
    p_c: float = 0.02
    p_b: float = 0.085
    delta: int = 36
    eta: float = 0.1
    mu: float = 0.4
    n_nodes: int = 1000
    grid: TimeGrid = field(default_factory=TimeGrid)
    master_seed: int = 0

    def __post_init__(self):
        for name in ("rho", "q", "p_b"):
            _check_prob(name, getattr(self, name))
        if not 0.0 < self.p_c < 1.0:
            raise ValueError(f"p_c={self.p_c} outside (0, 1)")
        if self.eta <= 0:
            raise ValueError(f"eta={self.eta} must be positive")
        _check_prob("mu", self.mu, allow_zero=True)
        if self.delta < 0:
            raise ValueError(f"delta={self.delta} must be non-negative")
        if self.n_nodes < 2:
            raise ValueError("need at least 2 nodes")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError("master_seed must fit in 64 unsigned bits")

    @property
    def heterogeneous(self) -> bool:
        return isinstance(self.degree_model, HeterogeneousDegree)

    @classmethod
    def from_kv(cls, values: dict, mode: str = "gdt", **overrides) -> "ModelParams":
        """Build from a key=value mapping (``rho, q, lambda, beta, xi, psi, p_c, p_b, ...``)."""
        step = int(values.get("step_seconds", 300))
        if "delta_steps" in values:
            delta = int(values["delta_steps"])
        else:
            delta_s = int(values.get("delta_seconds", 10800))
            if delta_s % step:
                raise ValueError(f"delta_seconds={delta_s} is not a multiple of step_seconds={step}")
            delta = delta_s // step
        if mode == "gdh":
            degree = HomogeneousDegree(float(values.get("lambda", 0.32)))
        elif mode == "gdt":
            degree = HeterogeneousDegree(float(values.get("beta", 2.963)), float(values.get("xi", 0.26)),
                                         float(values.get("psi", 1.0)))
        else:
            raise ValueError(f"unknown SPDT mode {mode!r}")
        rho = float(values.get("rho", 0.085))
        kw = dict(rho=rho, q=float(values.get("q", 0.0048)), degree_model=degree,
                  p_c=float(values.get("p_c", 0.02)), p_b=float(values.get("p_b", rho)), delta=delta,
                  eta=float(values.get("eta", 0.1)), mu=float(values.get("mu", 0.4)))
        kw.update(overrides)
        if "grid" not in kw:
            kw["grid"] = TimeGrid(step)
        return cls(**kw)


@dataclass(frozen=True)
class AdnParams:
    """Activity-driven baseline. ``m=None`` draws links per activation from ``degree_model`` (BDT)."""

    beta: float = 2.95
    lower: float = 0.02
    upper: float = 0.18
    m: int | None = 3
    degree_model: HeterogeneousDegree = field(default_factory=HeterogeneousDegree)
    slot_seconds: int = 3000

    def __post_init__(self):
        BoundedPowerLawParam(self.beta, self.lower, self.upper)
        if self.m is not None and self.m < 0:
            raise ValueError("m must be non-negative")
        if self.slot_seconds <= 0:
            raise ValueError("slot_seconds must be positive")

    @property
    def potential(self) -> BoundedPowerLawParam:
        return BoundedPowerLawParam(self.beta, self.lower, self.upper)

    @classmethod
    def from_kv(cls, values: dict, mode: str = "bdh") -> "AdnParams":
        if mode not in ("bdh", "bdt"):
            raise ValueError(f"unknown baseline mode {mode!r}")
        degree = HeterogeneousDegree(float(values.get("beta", 2.963)), float(values.get("xi", 0.26)),
                                     float(values.get("psi", 1.0)))
        return cls(beta=float(values.get("adn_beta", 2.95)), lower=float(values.get("adn_lower", 0.02)),
                   upper=float(values.get("adn_upper", 0.18)),
                   m=int(values.get("adn_m", 3)) if mode == "bdh" else None, degree_model=degree,
                   slot_seconds=int(round(float(values.get("adn_slot_minutes", 50)) * 60)))


class ActiveCopy(NamedTuple):
    host: int
    start: int
    end: int
    copy_index: int


class LinkTiming(NamedTuple):
    neighbour: int
    join: int
    leave: int


class LinkCapError(MemoryError):
    """The expected link count exceeds the configured cap."""


# ---------------------------------------------------------------------------
# phase 1: per-node draws


@nb.njit(cache=True)
def _node_draws(node, master, rho, q, pi1, horizon, hetero, lam0, beta, xi, psi, n_nodes,
                p_c, p_b, delta, fill, c_base, l_base, c_start, c_end, c_deg, l_join, l_leave, lam_out):
    """Draw everything phase 1 needs for one node; with ``fill`` write it at the given offsets.

    Draw order per node is fixed (lambda, initial state, periods, degrees, link
    timings), so a count-only pass sees the same copies and degrees as the fill pass.
    """
    seed_stream(master, node)
    lam = powerlaw_nb(beta, xi, psi) if hetero else lam0
    if fill:
        lam_out[node] = lam
    t = 0
    if np.random.random() >= pi1:
        t = geometric_nb(q)
    nc = 0
    while t < horizon:
        ta = geometric_nb(rho)
        if fill:
            c_start[c_base + nc] = t
            c_end[c_base + nc] = min(t + ta, horizon)
            # untruncated length kept in c_deg until degrees overwrite it below
            c_deg[c_base + nc] = ta
        nc += 1
        t = t + ta + geometric_nb(q)
    nl = 0
    for k in range(nc):
        d = min(degree_nb(lam), n_nodes - 1)
        if fill:
            ta = c_deg[c_base + k]
            c_deg[c_base + k] = d
            # timings are drawn after all degrees; stash the bound in l_join for now
            for j in range(d):
                l_join[l_base + nl + j] = ta + delta
        nl += d
    if fill:
        pos = l_base
        for k in range(nc):
            s = c_start[c_base + k]
            for j in range(c_deg[c_base + k]):
                join = s + truncated_geometric_nb(p_c, l_join[pos])
                l_join[pos] = join
                l_leave[pos] = join + geometric_nb(p_b)
                pos += 1
    return nc, nl


@nb.njit(cache=True, parallel=True)
def _count_pass(n, master, rho, q, pi1, horizon, hetero, lam0, beta, xi, psi, p_c, p_b, delta):
    n_copies = np.zeros(n, np.int64)
    n_links = np.zeros(n, np.int64)
    e32 = np.empty(0, np.int32)
    e64 = np.empty(0, np.int64)
    ef = np.empty(0, np.float64)
    for v in nb.prange(n):
        nc, nl = _node_draws(v, master, rho, q, pi1, horizon, hetero, lam0, beta, xi, psi, n, p_c, p_b,
                             delta, False, 0, 0, e32, e32, e64, e32, e32, ef)
        n_copies[v] = nc
        n_links[v] = nl
    return n_copies, n_links


@nb.njit(cache=True, parallel=True)
def _fill_pass(n, master, rho, q, pi1, horizon, hetero, lam0, beta, xi, psi, p_c, p_b, delta,
               c_off, l_off, c_start, c_end, c_deg, l_join, l_leave, lam):
    for v in nb.prange(n):
        _node_draws(v, master, rho, q, pi1, horizon, hetero, lam0, beta, xi, psi, n, p_c, p_b, delta,
                    True, c_off[v], l_off[v], c_start, c_end, c_deg, l_join, l_leave, lam)


@nb.njit(cache=True)
def _drop_late_links(c_deg, l_join, l_leave, horizon):
    """Compact away links joining at or after the horizon; returns kept links per copy."""
    kept = np.zeros(len(c_deg), np.int64)
    src = 0
    dst = 0
    for c in range(len(c_deg)):
        for _ in range(c_deg[c]):
            if l_join[src] < horizon:
                l_join[dst] = l_join[src]
                l_leave[dst] = l_leave[src]
                dst += 1
                kept[c] += 1
            src += 1
    return kept, dst


# ---------------------------------------------------------------------------
# phase 2: social wiring


@nb.njit(cache=True)
def _build_alias(w):
    n = len(w)
    prob = np.empty(n, np.float64)
    alias = np.arange(n).astype(np.int32)
    total = w.sum()
    scaled = w * (n / total)
    small = np.empty(n, np.int64)
    large = np.empty(n, np.int64)
    ns = 0
    nl = 0
    for i in range(n):
        if scaled[i] < 1.0:
            small[ns] = i
            ns += 1
        else:
            large[nl] = i
            nl += 1
    while ns > 0 and nl > 0:
        ns -= 1
        s = small[ns]
        g = large[nl - 1]
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        if scaled[g] < 1.0:
            nl -= 1
            small[ns] = g
            ns += 1
    for i in range(nl):
        prob[large[i]] = 1.0
    for i in range(ns):
        prob[small[i]] = 1.0
    return prob, alias


class SocialState:
    """Per-node contact sets plus the global sampler used by :func:`select_neighbours`.

    Contact sets live in one flat array; node ``v`` owns
    ``contacts[offset[v] : offset[v] + capacity[v]]`` of which the first
    ``count[v]`` entries are in use, in insertion order.
    """

    def __init__(self, capacity, lam=None, eta: float = 0.1, mu: float = 0.4,
                 pool_limit: int = NON_EXACT_POOL_LIMIT):
        capacity = np.asarray(capacity, dtype=np.int64)
        n = len(capacity)
        if n < 2:
            raise ValueError("need at least 2 nodes")
        self.n_nodes = n
        self.eta = float(eta)
        self.mu = float(mu)
        self.offset = np.zeros(n + 1, np.int64)
        np.cumsum(capacity, out=self.offset[1:])
        self.contacts = np.empty(self.offset[-1], np.int32)
        self.count = np.zeros(n, np.int64)
        self.mark = np.zeros(n, np.int64)
        self.chosen = np.zeros(n, np.int64)
        self.mark2 = np.zeros(n, np.int64)
        self.pool = np.empty(max(1, pool_limit), np.int32)
        self.stamps = np.zeros(2, np.int64)
        self.weighted = lam is not None
        if self.weighted:
            self.lam = np.asarray(lam, dtype=np.float64)
            if len(self.lam) != n:
                raise ValueError("lambda array length differs from node count")
            self.alias_prob, self.alias_idx = _build_alias(self.lam)
        else:
            self.lam = np.empty(0)
            self.alias_prob, self.alias_idx = np.empty(0), np.empty(0, np.int32)

    def contacts_of(self, v: int) -> np.ndarray:
        lo = self.offset[v]
        return self.contacts[lo: lo + self.count[v]].copy()

    def _kernel_args(self):
        return (self.contacts, self.offset, self.count, self.mark, self.chosen, self.mark2, self.pool,
                self.stamps, self.n_nodes, self.eta, self.mu, self.weighted, self.alias_prob, self.alias_idx)


@nb.njit(cache=True)
def _global_draw(stamp, mark, n, weighted, aprob, aidx):
    for _ in range(64):
        if weighted:
            i = np.random.randint(0, n)
            x = i if np.random.random() < aprob[i] else aidx[i]
        else:
            x = np.random.randint(0, n)
        if mark[x] != stamp:
            return x
    # almost every node already known: scan from a random offset
    s = np.random.randint(0, n)
    for k in range(n):
        x = (s + k) % n
        if mark[x] != stamp:
            return x
    return -1


@nb.njit(cache=True)
def _non_draw(host, stamp, contacts, offset, count, mark, mark2, pool, stamps):
    """Uniform draw from contacts-of-contacts not already known to ``host``; -1 if none.

    The deduplicated pool is built exactly while the scan stays cheap (at most
    ``4 * len(pool)`` contacts and entries examined, ``len(pool)`` candidates). Past that,
    a two-step walk (uniform contact, then a uniform contact of it) is used.
    """
    base = offset[host]
    nt = count[host]
    stamps[1] += 1
    s2 = stamps[1]
    size = 0
    cap = len(pool)
    budget = 4 * cap
    exact = True
    for k in range(nt):
        c = contacts[base + k]
        cb = offset[c]
        nc = count[c]
        if nc >= budget or size == cap:
            exact = False
            break
        budget -= nc + 1
        for j in range(nc):
            x = contacts[cb + j]
            if mark[x] != stamp and mark2[x] != s2:
                mark2[x] = s2
                pool[size] = x
                size += 1
                if size == cap:
                    break
    if exact and size < cap:
        if size == 0:
            return -1
        return pool[np.random.randint(0, size)]
    for _ in range(32):
        c = contacts[base + np.random.randint(0, nt)]
        nc = count[c]
        if nc > 0:
            x = contacts[offset[c] + np.random.randint(0, nc)]
            if mark[x] != stamp:
                return x
    return -1


@nb.njit(cache=True)
def _select(host, out, contacts, offset, count, mark, chosen, mark2, pool, stamps,
            n, eta, mu, weighted, aprob, aidx):
    d = len(out)
    stamps[0] += 1
    stamp = stamps[0]
    base = offset[host]
    mark[host] = stamp
    for k in range(count[host]):
        mark[contacts[base + k]] = stamp
    for slot in range(d):
        nt = count[host]
        pick = -1
        if nt > 0 and np.random.random() * (nt + eta) < nt and slot < nt:
            while True:
                x = contacts[base + np.random.randint(0, nt)]
                if chosen[x] != stamp:
                    pick = x
                    break
        if pick < 0:
            if mu > 0.0 and np.random.random() < mu:
                pick = _non_draw(host, stamp, contacts, offset, count, mark, mark2, pool, stamps)
            if pick < 0:
                pick = _global_draw(stamp, mark, n, weighted, aprob, aidx)
            if pick >= 0:
                if nt >= offset[host + 1] - base:
                    raise IndexError("contact capacity exhausted")
                contacts[base + nt] = pick
                count[host] = nt + 1
                mark[pick] = stamp
            else:
                # every other node is already a contact
                for k in range(nt):
                    x = contacts[base + k]
                    if chosen[x] != stamp:
                        pick = x
                        break
        chosen[pick] = stamp
        out[slot] = pick


@nb.njit(cache=True)
def _select_seeded(seed, host, out, contacts, offset, count, mark, chosen, mark2, pool, stamps,
                   n, eta, mu, weighted, aprob, aidx):
    np.random.seed(seed)
    _select(host, out, contacts, offset, count, mark, chosen, mark2, pool, stamps, n, eta, mu, weighted,
            aprob, aidx)


def select_neighbours(state: SocialState, host: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Choose ``d`` distinct neighbours for one activation of ``host`` and update its contact set."""
    if d < 1:
        raise ValueError("d must be at least 1")
    if d >= state.n_nodes:
        raise ValueError(f"d={d} must be smaller than the node count {state.n_nodes}")
    if not 0 <= host < state.n_nodes:
        raise KeyError(host)
    out = np.empty(d, np.int32)
    seed = int(rng.integers(0, 2 ** 32))
    _select_seeded(seed, host, out, *state._kernel_args())
    return out


@nb.njit(cache=True)
def _resolve(seed, order, copy_host, l_off, l_nbr, contacts, offset, count, mark, chosen, mark2, pool,
             stamps, n, eta, mu, weighted, aprob, aidx):
    np.random.seed(seed)
    for ci in order:
        lo = l_off[ci]
        hi = l_off[ci + 1]
        if hi > lo:
            _select(copy_host[ci], l_nbr[lo:hi], contacts, offset, count, mark, chosen, mark2, pool, stamps,
                    n, eta, mu, weighted, aprob, aidx)


@nb.njit(cache=True)
def _sort_within_copies(l_off, nbr, join, leave, n):
    """Order each copy's links by (join, neighbour); neighbours are distinct within a copy."""
    for c in range(len(l_off) - 1):
        lo = l_off[c]
        hi = l_off[c + 1]
        if hi - lo < 2:
            continue
        key = join[lo:hi].astype(np.int64) * n + nbr[lo:hi]
        order = np.argsort(key)
        nbr[lo:hi] = nbr[lo:hi][order]
        join[lo:hi] = join[lo:hi][order]
        leave[lo:hi] = leave[lo:hi][order]


# ---------------------------------------------------------------------------
# public entry points


def _chain_args(params: ModelParams):
    _, pi1 = equilibrium_probs(params.rho, params.q)
    dm = params.degree_model
    if params.heterogeneous:
        return pi1, True, 0.0, dm.beta, dm.xi, dm.psi
    return pi1, False, dm.lam, 1.0, 0.5, 1.0


def generate_activations(params: ModelParams, node: int, rng=None) -> list[ActiveCopy]:
    """Activation sequence of one node, identical to the one :func:`generate_network` produces.

    ``rng`` is accepted for interface symmetry; the node's stream is derived from
    ``params.master_seed`` and ``node``.
    """
    if not 0 <= node < params.n_nodes:
        raise KeyError(node)
    pi1, hetero, lam0, beta, xi, psi = _chain_args(params)
    args = (node, np.uint64(params.master_seed), params.rho, params.q, pi1, params.grid.horizon_steps,
            hetero, lam0, beta, xi, psi, params.n_nodes, params.p_c, params.p_b, params.delta)
    e32, e64 = np.empty(0, np.int32), np.empty(0, np.int64)
    nc, nl = _node_draws(*args, False, 0, 0, e32, e32, e64, e32, e32, np.empty(0))
    c_start, c_end = np.empty(nc, np.int32), np.empty(nc, np.int32)
    c_deg = np.empty(nc, np.int64)
    l_join, l_leave = np.empty(nl, np.int32), np.empty(nl, np.int32)
    _node_draws(*args, True, 0, 0, c_start, c_end, c_deg, l_join, l_leave, np.empty(node + 1))
    return [ActiveCopy(node, int(s), int(e), k) for k, (s, e) in enumerate(zip(c_start, c_end))]


def generate_links(copy: ActiveCopy, neighbours, params: ModelParams, rng: np.random.Generator,
                   active_length: int | None = None) -> list[LinkTiming]:
    """Draw join/leave steps for each neighbour of ``copy``.

    ``active_length`` is the untruncated active period; it defaults to the copy
    length. Links joining at or beyond the horizon are kept here; the network
    builder drops them.
    """
    neighbours = np.asarray(neighbours, dtype=np.int64)
    if len(np.unique(neighbours)) != len(neighbours):
        raise ValueError("neighbours must be distinct")
    if np.any(neighbours == copy.host):
        raise ValueError("neighbours must exclude the host")
    ta = copy.end - copy.start if active_length is None else active_length
    bound = ta + params.delta
    lq = np.log1p(-params.p_c)
    u = rng.random(len(neighbours))
    tc = np.minimum(np.floor(np.log1p(u * np.expm1(bound * lq)) / lq).astype(np.int64), bound - 1)
    td = np.floor(np.log(1.0 - rng.random(len(neighbours))) / np.log1p(-params.p_b)).astype(np.int64) + 1 \
        if params.p_b < 1 else np.ones(len(neighbours), np.int64)
    join = copy.start + tc
    return [LinkTiming(int(v), int(j), int(j + t)) for v, j, t in zip(neighbours, join, td)]


def expected_links(params: ModelParams) -> float:
    """Rough expected link count, used for the memory cap."""
    _, pi1 = equilibrium_probs(params.rho, params.q)
    copies = params.n_nodes * params.grid.horizon_steps * pi1 * params.rho + params.n_nodes
    dm = params.degree_model
    if params.heterogeneous:
        law = dm.law
        lam = law.ppf((np.arange(4096) + 0.5) / 4096)
        mean_d = float(np.mean(np.minimum(1.0 / np.maximum(1.0 - lam, 1e-300), params.n_nodes - 1)))
    else:
        mean_d = 1.0 / (1.0 - dm.lam)
    return copies * mean_d


@dataclass
class GeneratedNetwork:
    network: ContactNetwork
    lam: np.ndarray
    state: SocialState | None = None


def generate_network(params: ModelParams, link_cap: int = DEFAULT_LINK_CAP, keep_state: bool = False,
                     return_details: bool = False):
    """Generate a GDH or GDT network. Deterministic in ``params.master_seed`` at any thread count."""
    estimate = expected_links(params)
    if estimate > link_cap:
        raise LinkCapError(
            f"about {estimate:.3g} links expected, above the cap of {link_cap:.3g}; "
            "reduce nodes/days, raise the cap, or generate to disk in several node batches")
    n = params.n_nodes
    horizon = params.grid.horizon_steps
    master = np.uint64(params.master_seed)
    pi1, hetero, lam0, beta, xi, psi = _chain_args(params)
    common = (n, master, params.rho, params.q, pi1, horizon, hetero, lam0, beta, xi, psi,
              params.p_c, params.p_b, params.delta)

    n_copies, n_links = _count_pass(*common)
    c_off = np.zeros(n + 1, np.int64)
    np.cumsum(n_copies, out=c_off[1:])
    l_off_node = np.zeros(n + 1, np.int64)
    np.cumsum(n_links, out=l_off_node[1:])
    total_links = int(l_off_node[-1])
    if total_links > link_cap:
        raise LinkCapError(f"{total_links} links drawn, above the cap of {link_cap}")

    c_start = np.empty(c_off[-1], np.int32)
    c_end = np.empty(c_off[-1], np.int32)
    c_deg = np.empty(c_off[-1], np.int64)
    l_join = np.empty(total_links, np.int32)
    l_leave = np.empty(total_links, np.int32)
    lam = np.full(n, lam0, np.float64)
    _fill_pass(*common, c_off[:-1], l_off_node[:-1], c_start, c_end, c_deg, l_join, l_leave, lam)
    del n_links, l_off_node

    kept, n_kept = _drop_late_links(c_deg, l_join, l_leave, horizon)
    del c_deg
    l_join = l_join[:n_kept].copy()
    l_leave = l_leave[:n_kept].copy()
    l_off = np.zeros(len(kept) + 1, np.int64)
    np.cumsum(kept, out=l_off[1:])

    copy_host = np.repeat(np.arange(n, dtype=np.int32), n_copies)
    capacity = np.bincount(copy_host, weights=kept, minlength=n).astype(np.int64)
    state = SocialState(capacity, lam if hetero else None, params.eta, params.mu)
    del capacity
    order = np.argsort(c_start, kind="stable")
    l_nbr = np.empty(n_kept, np.int32)
    seed = int(stream_seed(master, np.uint64(_RESOLVE_STREAM)))
    _resolve(seed, order, copy_host, l_off, l_nbr, *state._kernel_args())
    del order
    _sort_within_copies(l_off, l_nbr, l_join, l_leave, n)

    link_copy = np.repeat(np.arange(len(kept), dtype=np.int32), kept)
    del kept
    net = ContactNetwork(params.grid, n, params.delta, copy_host, c_start, c_end,
                         link_copy, l_nbr, l_join, l_leave, canonical=True)
    if return_details:
        return GeneratedNetwork(net, lam, state if keep_state else None)
    return net


def generate_to_directory(params: ModelParams, path, link_cap: int = DEFAULT_LINK_CAP) -> Path:
    """Generate and write in fixed-size row blocks, releasing the network afterwards."""
    net = generate_network(params, link_cap=link_cap)
    out = write_network(net, path)
    del net
    return out


# ---------------------------------------------------------------------------
# activity-driven baselines


@nb.njit(cache=True)
def _adn_node(node, master, beta, lower, upper, fixed_m, m, dbeta, dxi, dpsi, n, slots, fill,
              c_base, c_slot, c_deg):
    seed_stream(master, node)
    theta = powerlaw_nb(beta, lower, upper)
    lam = 0.0 if fixed_m else powerlaw_nb(dbeta, dxi, dpsi)
    nc = 0
    nl = 0
    if theta <= 0.0:
        return nc, nl
    s = geometric_nb(theta) - 1
    while s < slots:
        if fill:
            c_slot[c_base + nc] = s
        nc += 1
        s += geometric_nb(theta)
    for k in range(nc):
        d = m if fixed_m else degree_nb(lam)
        d = min(d, n - 1)
        if fill:
            c_deg[c_base + k] = d
        nl += d
    return nc, nl


@nb.njit(cache=True, parallel=True)
def _adn_count(n, master, beta, lower, upper, fixed_m, m, dbeta, dxi, dpsi, slots):
    n_copies = np.zeros(n, np.int64)
    n_links = np.zeros(n, np.int64)
    e = np.empty(0, np.int64)
    for v in nb.prange(n):
        nc, nl = _adn_node(v, master, beta, lower, upper, fixed_m, m, dbeta, dxi, dpsi, n, slots, False, 0, e, e)
        n_copies[v] = nc
        n_links[v] = nl
    return n_copies, n_links


@nb.njit(cache=True, parallel=True)
def _adn_fill(n, master, beta, lower, upper, fixed_m, m, dbeta, dxi, dpsi, slots, c_off, c_slot, c_deg):
    for v in nb.prange(n):
        _adn_node(v, master, beta, lower, upper, fixed_m, m, dbeta, dxi, dpsi, n, slots, True, c_off[v],
                  c_slot, c_deg)


@nb.njit(cache=True)
def _adn_targets(seed, copy_host, l_off, nbr, n):
    """Uniform distinct targets per activation, excluding the host."""
    np.random.seed(seed)
    mark = np.full(n, -1, np.int64)
    for c in range(len(copy_host)):
        h = copy_host[c]
        mark[h] = c
        for i in range(l_off[c], l_off[c + 1]):
            while True:
                x = np.random.randint(0, n)
                if mark[x] != c:
                    break
            mark[x] = c
            nbr[i] = x
        # sort the block so the canonical order needs no global sort
        nbr[l_off[c]:l_off[c + 1]].sort()


def generate_adn(params: AdnParams, n_nodes: int, days: int, seed: int = 0,
                 grid: TimeGrid | None = None) -> ContactNetwork:
    """BDH (fixed ``m``) or BDT (heterogeneous ``m``) network on the base time grid.

    Each activation occupies one slot of ``slot_seconds``; its links join at the
    slot start and leave at the slot end, so every link is direct-only and the
    network has ``delta = 0``.
    """
    if n_nodes < 2:
        raise ValueError("need at least 2 nodes")
    grid = grid or TimeGrid(horizon_days=days)
    if grid.horizon_days != days:
        grid = TimeGrid(grid.step_seconds, days)
    if params.slot_seconds % grid.step_seconds:
        raise ValueError(f"slot of {params.slot_seconds} s is not a whole number of {grid.step_seconds} s steps")
    slot_steps = params.slot_seconds // grid.step_seconds
    slots = grid.horizon_steps // slot_steps
    master = np.uint64(seed)
    fixed = params.m is not None
    dm = params.degree_model
    args = (n_nodes, master, params.beta, params.lower, params.upper, fixed, params.m or 0,
            dm.beta, dm.xi, dm.psi, slots)
    n_copies, _ = _adn_count(*args)
    c_off = np.zeros(n_nodes + 1, np.int64)
    np.cumsum(n_copies, out=c_off[1:])
    c_slot = np.empty(c_off[-1], np.int64)
    c_deg = np.empty(c_off[-1], np.int64)
    _adn_fill(*args, c_off[:-1], c_slot, c_deg)

    copy_host = np.repeat(np.arange(n_nodes, dtype=np.int32), n_copies)
    l_off = np.zeros(len(c_deg) + 1, np.int64)
    np.cumsum(c_deg, out=l_off[1:])
    nbr = np.empty(l_off[-1], np.int32)
    _adn_targets(int(stream_seed(master, np.uint64(_ADN_STREAM))), copy_host, l_off, nbr, n_nodes)
    slot_start = (c_slot * slot_steps).astype(np.int32)
    join = np.repeat(slot_start, c_deg)
    # activations in back-to-back slots of one host form a single copy, since copies may not touch
    first = np.ones(len(c_slot), bool)
    first[1:] = (copy_host[1:] != copy_host[:-1]) | (c_slot[1:] != c_slot[:-1] + 1)
    merged = (np.cumsum(first) - 1).astype(np.int32)
    last = np.append(np.flatnonzero(first)[1:] - 1, len(c_slot) - 1).astype(np.int64)
    link_copy = np.repeat(merged, c_deg)
    return ContactNetwork(grid, n_nodes, 0, copy_host[first], slot_start[first], slot_start[last] + slot_steps,
                          link_copy, nbr, join, join + slot_steps, canonical=True)


def adn_expected_links_per_day(params: AdnParams, grid: TimeGrid | None = None) -> float:
    """Mean links per node per day for a fixed-``m`` baseline."""
    if params.m is None:
        raise ValueError("only defined for fixed m")
    grid = grid or TimeGrid()
    slot_steps = params.slot_seconds // grid.step_seconds
    return grid.steps_per_day / slot_steps * params.potential.mean() * params.m

"""Network metrics, interaction-parameter histograms and distribution comparison."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .model import ContactNetwork
from .stochastic import GeometricParam, BoundedPowerLawParam, mixed_degree_pmf, truncated_geometric_pmf

CIP_NAMES = ("t_a", "t_w", "h", "d", "t_c", "t_d")


@dataclass(frozen=True)
class Histogram:
    """Proportions over bins. ``bins`` holds integer values, or left edges of real-valued bins of ``width``."""

    bins: np.ndarray
    proportions: np.ndarray
    width: float = 1.0
    count: int = 0

    def __post_init__(self):
        if len(self.bins) != len(self.proportions):
            raise ValueError("bins and proportions differ in length")
        total = float(np.sum(self.proportions))
        if len(self.bins) and abs(total - 1.0) > 1e-9:
            raise ValueError(f"proportions sum to {total}, not 1")

    @classmethod
    def from_integers(cls, samples, start: int | None = None) -> "Histogram":
        samples = np.asarray(samples, dtype=np.int64)
        if samples.size == 0:
            return cls(np.empty(0, np.int64), np.empty(0))
        lo = int(samples.min()) if start is None else min(start, int(samples.min()))
        counts = np.bincount(samples - lo)
        return cls(np.arange(lo, lo + len(counts)), counts / counts.sum(), 1.0, int(samples.size))

    @classmethod
    def from_reals(cls, samples, width: float = 0.01, lower: float = 0.0) -> "Histogram":
        samples = np.asarray(samples, dtype=float)
        if samples.size == 0:
            return cls(np.empty(0), np.empty(0), width)
        idx = np.floor((samples - lower) / width + 1e-9).astype(np.int64)
        counts = np.bincount(idx - idx.min())
        return cls(lower + (idx.min() + np.arange(len(counts))) * width, counts / counts.sum(), width,
                   int(samples.size))

    @classmethod
    def from_pmf(cls, bins, pmf) -> "Histogram":
        """Reference histogram on given integer bins; tail mass beyond the bins is not renormalised."""
        bins = np.asarray(bins)
        p = np.asarray(pmf, dtype=float)
        return _Reference(bins, p)

    @property
    def empty(self) -> bool:
        return len(self.bins) == 0

    def mean(self) -> float:
        return float(np.dot(self.bins, self.proportions))


class _Reference(Histogram):
    def __post_init__(self):
        if len(self.bins) != len(self.proportions):
            raise ValueError("bins and proportions differ in length")


def rse(observed: Histogram, reference: Histogram) -> float:
    """Root of summed squared proportion differences over the observed bins, up to the last non-empty one."""
    if observed.width != reference.width:
        raise ValueError(f"bin widths differ: {observed.width} vs {reference.width}")
    if observed.empty:
        return 0.0
    last = int(np.flatnonzero(observed.proportions)[-1])
    ob = observed.bins[: last + 1]
    x = observed.proportions[: last + 1]
    pos = np.searchsorted(reference.bins, ob)
    inside = pos < len(reference.bins)
    match = np.zeros(len(ob), bool)
    match[inside] = np.isclose(reference.bins[pos[inside]], ob[inside])
    # observed bins the reference does not carry count as zero reference mass only if they lie
    # below or above its support; a reference with gaps inside its range is a binning mismatch
    if len(reference.bins) and np.any(~match & (ob >= reference.bins[0]) & (ob <= reference.bins[-1])):
        raise ValueError("observed and reference binnings do not match")
    y = np.zeros(len(ob))
    y[match] = reference.proportions[pos[match]]
    return float(np.sqrt(np.sum((x - y) ** 2)))


# ---------------------------------------------------------------------------
# interaction parameters


def complete_copies(network: ContactNetwork) -> np.ndarray:
    """Mask of copies whose whole link-creation window ``[start, end + delta)`` lies inside the horizon."""
    return network.copy_end + network.delta <= network.grid.horizon_steps


def cip_samples(network: ContactNetwork) -> dict[str, np.ndarray]:
    """Raw samples of the six interaction parameters.

    ``t_a`` skips copies cut by the horizon; ``d`` and ``t_c`` use only copies
    whose link window ends inside the horizon, so neither is censored. ``h``
    counts copy starts per node per day, zeros included.
    """
    horizon = network.grid.horizon_steps
    h_, s, e = network.copy_host, network.copy_start, network.copy_end
    length = (e - s).astype(np.int64)
    t_a = length[e < horizon]
    same = h_[1:] == h_[:-1]
    t_w = (s[1:] - e[:-1])[same].astype(np.int64)
    days = network.grid.horizon_days
    per_day = np.bincount(h_.astype(np.int64) * days + s // network.grid.steps_per_day,
                          minlength=network.n_nodes * days)
    complete = complete_copies(network)
    d = network.copy_degree[complete].astype(np.int64)
    d = d[d > 0]
    link_ok = complete[network.link_copy]
    t_c = (network.link_join - network.link_start)[link_ok].astype(np.int64)
    t_d = (network.link_leave - network.link_join).astype(np.int64)
    return {"t_a": t_a, "t_w": t_w, "h": per_day.astype(np.int64), "d": d, "t_c": t_c, "t_d": t_d}


def cip_histograms(network: ContactNetwork) -> dict[str, Histogram]:
    samples = cip_samples(network)
    return {k: Histogram.from_integers(v, start=0 if k in ("h", "t_c") else 1) for k, v in samples.items()}


def daily_activation_pmf(rho: float, q: float, steps_per_day: int, max_count: int | None = None) -> np.ndarray:
    """Exact pmf of inactive-to-active transitions within one day of the stationary two-state chain."""
    max_count = steps_per_day if max_count is None else max_count
    pi0 = rho / (rho + q)
    # probs[state, count]
    probs = np.zeros((2, max_count + 2))
    probs[0, 0], probs[1, 0] = pi0, 1 - pi0
    for _ in range(steps_per_day):
        nxt = np.zeros_like(probs)
        nxt[0] += probs[0] * (1 - q) + probs[1] * rho
        nxt[1] += probs[1] * (1 - rho)
        nxt[1, 1:] += probs[0, :-1] * q
        probs = nxt
    return probs.sum(0)[: max_count + 1]


def reference_histograms(network: ContactNetwork, rho, q, degree, p_c, p_b) -> dict[str, Histogram]:
    """Generating distributions matched to the bins of :func:`cip_histograms`.

    ``degree`` is a float ``lambda`` (homogeneous) or a :class:`BoundedPowerLawParam`.
    The ``t_c`` reference averages the truncated law over the observed links' bounds.
    """
    obs = cip_histograms(network)
    out = {}

    def bins_for(name, lo):
        hi = int(obs[name].bins[-1]) if not obs[name].empty else lo
        return np.arange(lo, hi + 1)

    b = bins_for("t_a", 1)
    out["t_a"] = Histogram.from_pmf(b, GeometricParam(rho).pmf(b))
    b = bins_for("t_w", 1)
    out["t_w"] = Histogram.from_pmf(b, GeometricParam(q).pmf(b))
    b = bins_for("t_d", 1)
    out["t_d"] = Histogram.from_pmf(b, GeometricParam(p_b).pmf(b))
    b = bins_for("h", 0)
    out["h"] = Histogram.from_pmf(b, daily_activation_pmf(rho, q, network.grid.steps_per_day, int(b[-1])))
    b = bins_for("d", 1)
    if isinstance(degree, BoundedPowerLawParam):
        out["d"] = Histogram.from_pmf(b, mixed_degree_pmf(b, degree))
    else:
        out["d"] = Histogram.from_pmf(b, GeometricParam(float(degree), continuation=True).pmf(b))
    b = bins_for("t_c", 0)
    complete = complete_copies(network)
    ok = complete[network.link_copy]
    bounds = (network.copy_end - network.copy_start)[network.link_copy[ok]].astype(np.int64) + network.delta
    uniq, counts = np.unique(bounds, return_counts=True)
    pm = np.zeros(len(b))
    for bound, c in zip(uniq, counts):
        pm += c * truncated_geometric_pmf(b, p_c, bound)
    out["t_c"] = Histogram.from_pmf(b, pm / max(1, counts.sum()))
    return out


# ---------------------------------------------------------------------------
# static metrics


def collapse(network: ContactNetwork, day: int | None = None) -> sp.csr_matrix:
    """Directed host-to-neighbour adjacency (0/1), over the whole window or one day (by join step)."""
    h, v = network.link_host, network.link_nbr
    if day is not None:
        sel = network.link_join // network.grid.steps_per_day == day
        h, v = h[sel], v[sel]
    n = network.n_nodes
    a = sp.csr_matrix((np.ones(len(h), np.int8), (h, v)), shape=(n, n))
    a.sum_duplicates()
    a.data[:] = 1
    return a


def _static(a: sp.csr_matrix):
    out_deg = np.diff(a.indptr)
    in_deg = np.bincount(a.indices, minlength=a.shape[0])
    u = ((a + a.T) > 0).astype(np.int64).tocsr()
    u.setdiag(0)
    u.eliminate_zeros()
    k = np.diff(u.indptr).astype(float)
    tri = np.asarray((u @ u).multiply(u).sum(axis=1)).ravel() / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        cc = np.where(k >= 2, tri / (k * (k - 1) / 2.0), 0.0)
    return out_deg, in_deg, cc


@dataclass
class StaticMetrics:
    out_degree: np.ndarray
    in_degree: np.ndarray
    clustering: np.ndarray
    daily_out_degree: np.ndarray   # (days, n)
    daily_in_degree: np.ndarray
    daily_clustering: np.ndarray

    def per_node_table(self) -> dict[str, np.ndarray]:
        return {"out_degree": self.out_degree, "in_degree": self.in_degree, "clustering": self.clustering,
                "daily_out_degree": self.daily_out_degree.mean(0), "daily_in_degree": self.daily_in_degree.mean(0),
                "daily_clustering": self.daily_clustering.mean(0)}


def static_metrics(network: ContactNetwork, daily: bool = True) -> StaticMetrics:
    od, idg, cc = _static(collapse(network))
    days = network.grid.horizon_days if daily else 0
    n = network.n_nodes
    dod, did, dcc = (np.zeros((days, n)) for _ in range(3))
    for day in range(days):
        dod[day], did[day], dcc[day] = _static(collapse(network, day))
    return StaticMetrics(od, idg, cc, dod, did, dcc)


def static_metrics_from_edges(n: int, edges) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Degrees and clustering of a plain directed edge list."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    a = sp.csr_matrix((np.ones(len(edges), np.int8), (edges[:, 0], edges[:, 1])), shape=(n, n))
    a.sum_duplicates()
    a.data[:] = 1
    return _static(a)


# ---------------------------------------------------------------------------
# temporal metrics


@dataclass(frozen=True)
class DayEdges:
    """Day-aggregated directed edges: unique ``(src, dst)`` pairs with a bitmask of the days they occur."""

    n_nodes: int
    n_days: int
    indptr: np.ndarray
    dst: np.ndarray
    days: np.ndarray  # uint64 bitmask per (src, dst)

    @classmethod
    def from_triples(cls, n_nodes: int, n_days: int, src, dst, day) -> "DayEdges":
        if n_days > 63:
            raise ValueError("at most 63 days are supported")
        src, dst, day = (np.asarray(a, dtype=np.int64) for a in (src, dst, day))
        keep = (src != dst) & (day >= 0) & (day < n_days)
        src, dst, day = src[keep], dst[keep], day[keep]
        key = src * n_nodes + dst
        uniq, inv = np.unique(key, return_inverse=True)
        masks = np.zeros(len(uniq), np.uint64)
        np.bitwise_or.at(masks, inv, np.left_shift(np.uint64(1), day.astype(np.uint64)))
        s = uniq // n_nodes
        indptr = np.zeros(n_nodes + 1, np.int64)
        np.cumsum(np.bincount(s, minlength=n_nodes), out=indptr[1:])
        return cls(n_nodes, n_days, indptr, (uniq % n_nodes).astype(np.int64), masks)

    @classmethod
    def from_network(cls, network: ContactNetwork) -> "DayEdges":
        return cls.from_triples(network.n_nodes, network.grid.horizon_days, network.link_host, network.link_nbr,
                                network.link_join // network.grid.steps_per_day)


def _window(mask: np.ndarray, min_gap: int, max_gap: int) -> np.ndarray:
    """Days reachable one hop after any day in ``mask``."""
    out = np.zeros_like(mask)
    for k in range(min_gap, max_gap + 1):
        out |= mask << np.uint64(k)
    return out


@dataclass
class TemporalMetrics:
    betweenness: np.ndarray
    closeness: np.ndarray
    distance: np.ndarray | None = None  # (n, n) hop distances, -1 when unreachable
    sources: np.ndarray | None = None
    approximate: bool = False


def _source_pass(s: int, g: DayEdges, min_gap: int, max_gap: int, bc: np.ndarray, dist_row: np.ndarray):
    n = g.n_nodes
    all_days = np.uint64((1 << g.n_days) - 1)
    # layer 1 straight from the source: any day is a valid first hop
    lo, hi = g.indptr[s], g.indptr[s + 1]
    layer_node = [np.array([s])]
    layer_mask = [np.array([all_days], np.uint64)]
    layer_sigma = [np.array([1.0])]
    parents, children = [], []
    dist_row[:] = -1
    dist_row[s] = 0
    for depth in range(1, g.n_days + 1):
        nodes, masks, sig = layer_node[-1], layer_mask[-1], layer_sigma[-1]
        if depth == 1:
            src_idx = np.zeros(hi - lo, np.int64)
            edge_idx = np.arange(lo, hi)
            reach = g.days[edge_idx]
        else:
            starts, stops = g.indptr[nodes], g.indptr[nodes + 1]
            cnt = stops - starts
            src_idx = np.repeat(np.arange(len(nodes)), cnt)
            edge_idx = np.repeat(starts - np.cumsum(cnt) + cnt, cnt) + np.arange(cnt.sum())
            reach = g.days[edge_idx] & _window(masks, min_gap, max_gap)[src_idx]
        ok = reach != 0
        src_idx, edge_idx, reach = src_idx[ok], edge_idx[ok], reach[ok]
        if len(src_idx) == 0:
            break
        nxt = g.dst[edge_idx]
        key = np.stack([nxt.astype(np.uint64), reach])
        uniq, child = np.unique(key, axis=1, return_inverse=True)
        child = child.ravel()
        new_nodes = uniq[0].astype(np.int64)
        new_sigma = np.bincount(child, weights=sig[src_idx], minlength=uniq.shape[1])
        fresh = dist_row[new_nodes] < 0
        dist_row[new_nodes[fresh]] = depth
        layer_node.append(new_nodes)
        layer_mask.append(uniq[1])
        layer_sigma.append(new_sigma)
        parents.append(src_idx)
        children.append(child)
    # backward accumulation: cont[X] = number of continuations of X ending at a terminal state
    cont = np.zeros(len(layer_node[-1]))
    for depth in range(len(layer_node) - 1, 0, -1):
        nodes = layer_node[depth]
        terminal = (dist_row[nodes] == depth).astype(float)
        val = terminal + cont
        parent_cont = np.bincount(parents[depth - 1], weights=val[children[depth - 1]],
                                  minlength=len(layer_node[depth - 1]))
        if depth - 1 >= 1:
            pn = layer_node[depth - 1]
            np.add.at(bc, pn, layer_sigma[depth - 1] * parent_cont)
        cont = parent_cont


def temporal_metrics(edges: DayEdges | ContactNetwork, max_gap_days: int = 5, incubation_days: int = 1,
                     sources=None, keep_distances: bool = False) -> TemporalMetrics:
    """Temporal betweenness and closeness over time-respecting paths.

    A path is a node sequence whose consecutive hops can be placed on days with
    gaps between ``incubation_days`` and ``max_gap_days``; revisiting nodes is
    allowed. Distance is the hop count of the shortest such sequence. Each
    distinct shortest sequence is counted once, whatever its start day, and adds
    one to the betweenness of every node at an interior position. Closeness of
    ``v`` sums ``1/dist(u, v)`` over all sources ``u`` that reach it.

    ``sources`` restricts the outer loop to a subset (results are then
    approximate and rescaled by ``n / len(sources)``).
    """
    g = edges if isinstance(edges, DayEdges) else DayEdges.from_network(edges)
    if g.n_days < 2:
        raise ValueError("temporal metrics need a horizon of at least 2 days")
    if not 1 <= incubation_days <= max_gap_days:
        raise ValueError("need 1 <= incubation_days <= max_gap_days")
    n = g.n_nodes
    approximate = sources is not None
    src = np.arange(n) if sources is None else np.asarray(sources, dtype=np.int64)
    bc = np.zeros(n)
    cc = np.zeros(n)
    dist = np.full((n, n), -1, np.int64) if keep_distances else None
    row = np.empty(n, np.int64)
    for s in src:
        _source_pass(int(s), g, incubation_days, max_gap_days, bc, row)
        reach = row > 0
        cc[reach] += 1.0 / row[reach]
        if keep_distances:
            dist[s] = row
    if approximate and len(src):
        scale = n / len(src)
        bc *= scale
        cc *= scale
    return TemporalMetrics(bc, cc, dist, src, approximate)

"""Co-location links from raw GPS updates, and day densification of sparse networks."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .model import SECONDS_PER_DAY, ContactNetwork, TimeGrid

EARTH_RADIUS_M = 6371008.8
DEFAULT_RADIUS_M = 20.0
DEFAULT_GAP_S = 30 * 60
DEFAULT_DELTA_S = 3 * 3600
CELL_M = 25.0


class GpsDataError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class GpsUpdate:
    user: int
    lat: float
    lon: float
    timestamp: float


@dataclass(frozen=True)
class StayVisit:
    user: int
    lat: float
    lon: float
    start: float
    end: float
    n_updates: int = 1


@dataclass(frozen=True)
class RawLink:
    """One co-location link in seconds, before snapping to a time grid."""

    host: int
    start: float
    end: float
    neighbour: int
    join: float
    leave: float


def haversine_m(lat1, lon1, lat2, lon2):
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(a, dtype=float)) for a in (lat1, lon1, lat2, lon2))
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def _check_coords(lat, lon, first_line=1):
    bad = ~(np.isfinite(lat) & np.isfinite(lon) & (np.abs(lat) <= 90) & (np.abs(lon) <= 180))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise GpsDataError(f"malformed coordinates ({lat[i]}, {lon[i]})", first_line + i)


def read_gps_csv(path) -> pd.DataFrame:
    """Read ``user_id,lat,lon,unix_timestamp`` rows (header optional) sorted by user then time."""
    path = Path(path)
    with open(path) as fh:
        first = fh.readline()
    fields = [f.strip() for f in first.split(",")]
    try:
        [float(f) for f in fields]
        header = None
    except ValueError:
        header = 0
    try:
        df = pd.read_csv(path, header=header, names=["user", "lat", "lon", "timestamp"],
                         dtype={"user": np.int64, "lat": float, "lon": float, "timestamp": float},
                         skipinitialspace=True)
    except (ValueError, pd.errors.ParserError) as exc:
        raise GpsDataError(f"{path}: {exc}") from None
    if df.isna().any().any():
        row = int(np.flatnonzero(df.isna().any(axis=1).to_numpy())[0])
        raise GpsDataError("missing field", row + 1 + (header is not None))
    _check_coords(df["lat"].to_numpy(), df["lon"].to_numpy(), 1 + (header is not None))
    return df.sort_values(["user", "timestamp"], kind="stable").reset_index(drop=True)


def updates_frame(updates) -> pd.DataFrame:
    """Normalise a sequence of :class:`GpsUpdate` (or a frame) into the sorted frame used below."""
    if isinstance(updates, pd.DataFrame):
        df = updates[["user", "lat", "lon", "timestamp"]].copy()
    else:
        df = pd.DataFrame([(u.user, u.lat, u.lon, u.timestamp) for u in updates],
                          columns=["user", "lat", "lon", "timestamp"])
    df = df.astype({"user": np.int64, "lat": float, "lon": float, "timestamp": float})
    _check_coords(df["lat"].to_numpy(), df["lon"].to_numpy())
    return df.sort_values(["user", "timestamp"], kind="stable").reset_index(drop=True)


def _medoid(lat, lon) -> int:
    if len(lat) == 1:
        return 0
    d = haversine_m(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    return int(np.argmin(d.sum(axis=1)))


def detect_stays(updates, radius_m: float = DEFAULT_RADIUS_M, gap_s: float = DEFAULT_GAP_S) -> list[StayVisit]:
    """Greedy stay segmentation of one or more users' updates.

    A segment grows while each update lies within ``radius_m`` of the segment's
    first update and at most ``gap_s`` after the previous one. The stay centre
    is the medoid of the segment.
    """
    df = updates_frame(updates)
    out = []
    for user, g in df.groupby("user", sort=True):
        lat, lon, ts = g["lat"].to_numpy(), g["lon"].to_numpy(), g["timestamp"].to_numpy()
        i = 0
        while i < len(ts):
            j = i + 1
            while (j < len(ts) and ts[j] - ts[j - 1] <= gap_s
                   and haversine_m(lat[i], lon[i], lat[j], lon[j]) <= radius_m):
                j += 1
            m = i + _medoid(lat[i:j], lon[i:j])
            out.append(StayVisit(int(user), float(lat[m]), float(lon[m]), float(ts[i]), float(ts[j - 1]), j - i))
            i = j
    return out


class _Grid:
    """Bucket updates into roughly ``CELL_M``-metre cells for neighbourhood queries."""

    def __init__(self, lat, lon, cell_m=CELL_M):
        self.cell_lat = cell_m / 111_320.0
        self.lat, self.lon = lat, lon
        cy = np.floor(lat / self.cell_lat).astype(np.int64)
        self.cells = defaultdict(list)
        for idx, (y, x) in enumerate(zip(cy, self._cx(lon, lat))):
            self.cells[(y, x)].append(idx)
        self.cells = {k: np.asarray(v) for k, v in self.cells.items()}

    def _cx(self, lon, lat):
        # longitude cells keyed on the latitude band so distances stay metric
        band = np.floor(np.asarray(lat) / self.cell_lat)
        width = self.cell_lat / np.maximum(np.cos(np.radians((band + 0.5) * self.cell_lat)), 1e-6)
        return np.floor(np.asarray(lon) / width).astype(np.int64)

    def near(self, lat, lon):
        y = int(math.floor(lat / self.cell_lat))
        out = []
        for dy in (-1, 0, 1):
            band_lat = (y + dy + 0.5) * self.cell_lat
            width = self.cell_lat / max(math.cos(math.radians(band_lat)), 1e-6)
            x = int(math.floor(lon / width))
            for dx in (-1, 0, 1):
                cell = self.cells.get((y + dy, x + dx))
                if cell is not None:
                    out.append(cell)
        return np.concatenate(out) if out else np.empty(0, np.int64)


def extract_links(stays, updates, delta_s: float = DEFAULT_DELTA_S, radius_m: float = DEFAULT_RADIUS_M,
                  gap_s: float = DEFAULT_GAP_S) -> list[RawLink]:
    """Pair every host stay with the other users seen near its centre.

    A neighbour's in-range updates (within ``radius_m`` of the stay centre, at
    or after the stay start) are split at gaps longer than ``gap_s``; each run
    of at least two updates whose first update is no later than
    ``end + delta_s`` gives one link from the first to the last update of the run.
    Zero-length stays carry no links.
    """
    df = updates_frame(updates)
    user = df["user"].to_numpy()
    lat, lon, ts = df["lat"].to_numpy(), df["lon"].to_numpy(), df["timestamp"].to_numpy()
    grid = _Grid(lat, lon)
    links = []
    for st in stays:
        if st.end <= st.start:
            continue
        cand = grid.near(st.lat, st.lon)
        if len(cand) == 0:
            continue
        cand = cand[(user[cand] != st.user) & (ts[cand] >= st.start)]
        cand = cand[haversine_m(st.lat, st.lon, lat[cand], lon[cand]) <= radius_m]
        if len(cand) == 0:
            continue
        cand = cand[np.lexsort((ts[cand], user[cand]))]
        cu, ct = user[cand], ts[cand]
        brk = np.flatnonzero((cu[1:] != cu[:-1]) | (ct[1:] - ct[:-1] > gap_s)) + 1
        for run in np.split(np.arange(len(cand)), brk):
            if len(run) >= 2 and ct[run[0]] <= st.end + delta_s:
                links.append(RawLink(st.user, st.start, st.end, int(cu[run[0]]), float(ct[run[0]]),
                                     float(ct[run[-1]])))
    return links


def assemble_network(links, step_seconds: int = 300, delta_s: float = DEFAULT_DELTA_S, n_nodes: int | None = None,
                     origin: float | None = None, horizon_days: int | None = None) -> ContactNetwork:
    """Snap second-resolution links onto a time grid and build a network.

    Times are floored to steps counted from ``origin`` (default: the midnight,
    UTC, before the earliest link). Copy ends and link leaves are raised to at
    least one step after their starts; copies of one host that touch after
    flooring are merged; links whose join falls at or after ``end + delta``
    once snapped are dropped.
    """
    if delta_s % step_seconds:
        raise ValueError(f"delta of {delta_s} s is not a whole number of {step_seconds} s steps")
    delta = int(delta_s // step_seconds)
    arr = np.array([(l.host, l.start, l.end, l.neighbour, l.join, l.leave) for l in links], dtype=float).reshape(-1, 6)
    if origin is None:
        origin = math.floor(arr[:, 1].min() / SECONDS_PER_DAY) * SECONDS_PER_DAY if len(arr) else 0.0
    host = arr[:, 0].astype(np.int64)
    nbr = arr[:, 3].astype(np.int64)
    if n_nodes is None:
        n_nodes = int(max(host.max(initial=-1), nbr.max(initial=-1)) + 1) if len(arr) else 1
    steps = np.floor((arr[:, [1, 2, 4, 5]] - origin) / step_seconds).astype(np.int64)
    if np.any(steps < 0):
        raise ValueError("link earlier than the time origin")
    start, end, join, leave = steps.T
    end = np.maximum(end, start + 1)
    leave = np.maximum(leave, join + 1)

    # merge copies of one host that touch or overlap once on the grid
    order = np.lexsort((end, start, host))
    host, start, end, nbr, join, leave = (a[order] for a in (host, start, end, nbr, join, leave))
    copy_id = np.zeros(len(host), np.int64)
    c_host, c_start, c_end = [], [], []
    for i in range(len(host)):
        if c_host and c_host[-1] == host[i] and start[i] <= c_end[-1]:
            c_end[-1] = max(c_end[-1], end[i])
        else:
            c_host.append(host[i])
            c_start.append(start[i])
            c_end.append(end[i])
        copy_id[i] = len(c_host) - 1
    c_host, c_start, c_end = np.array(c_host, np.int64), np.array(c_start, np.int64), np.array(c_end, np.int64)
    keep = join < c_end[copy_id] + delta
    spd = SECONDS_PER_DAY // step_seconds
    if horizon_days is None:
        last = max(int(c_end.max(initial=0)), int(join[keep].max(initial=0)) + 1)
        horizon_days = max(1, -(-last // spd))
    horizon = horizon_days * spd
    c_end = np.minimum(c_end, horizon)
    keep &= join < horizon
    # drop duplicates of the same (copy, neighbour, join, leave)
    rows = np.unique(np.column_stack([copy_id[keep], nbr[keep], join[keep], leave[keep]]), axis=0)
    used = np.unique(rows[:, 0]) if len(rows) else np.empty(0, np.int64)
    remap = np.full(len(c_host), -1, np.int64)
    remap[used] = np.arange(len(used))
    return ContactNetwork(TimeGrid(step_seconds, horizon_days), n_nodes, delta,
                          c_host[used], c_start[used], c_end[used],
                          remap[rows[:, 0]], rows[:, 1], rows[:, 2], rows[:, 3])


def extract_network(updates, step_seconds: int = 300, delta_s: float = DEFAULT_DELTA_S,
                    radius_m: float = DEFAULT_RADIUS_M, gap_s: float = DEFAULT_GAP_S):
    """Full pipeline from GPS updates to a network; returns ``(network, user_ids)``.

    User ids are mapped to dense node ids in ascending order; ``user_ids[v]`` is
    the original id of node ``v``.
    """
    df = updates_frame(updates)
    user_ids, dense = np.unique(df["user"].to_numpy(), return_inverse=True)
    df["user"] = dense
    stays = detect_stays(df, radius_m, gap_s)
    links = extract_links(stays, df, delta_s, radius_m, gap_s)
    origin = math.floor(df["timestamp"].min() / SECONDS_PER_DAY) * SECONDS_PER_DAY if len(df) else 0.0
    net = assemble_network(links, step_seconds, delta_s, n_nodes=max(1, len(user_ids)), origin=origin)
    return net, user_ids


# ---------------------------------------------------------------------------
# densification


def densify(network: ContactNetwork, rng: np.random.Generator, fill_all: bool = True) -> ContactNetwork:
    """Fill days on which a node hosts no links with day-shifted copies of one of its active days.

    Each missing day (or, with ``fill_all=False``, one random missing day per
    node) draws a source day uniformly from the node's active days. Shifted
    copies that would overlap an existing copy of the node are skipped, and
    shifted links that join at or past the horizon are dropped; copy ends are
    clipped at the horizon.
    """
    grid = network.grid
    spd, days, horizon = grid.steps_per_day, grid.horizon_days, grid.horizon_steps
    offsets = network.host_offsets
    cs, ce = network.copy_start, network.copy_end
    deg = network.copy_degree
    link_lo = np.zeros(network.n_copies + 1, np.int64)
    np.cumsum(deg, out=link_lo[1:])
    new_c = [[], [], []]
    new_l = [[], [], [], []]
    base_copies = network.n_copies
    for v in range(network.n_nodes):
        lo, hi = offsets[v], offsets[v + 1]
        if hi == lo:
            continue
        idx = np.arange(lo, hi)
        idx = idx[deg[idx] > 0]
        if len(idx) == 0:
            continue
        day_of = cs[idx] // spd
        active = np.unique(day_of)
        missing = np.setdiff1d(np.arange(days), active)
        if len(missing) == 0:
            continue
        if not fill_all:
            missing = missing[[int(rng.integers(len(missing)))]]
        intervals = [(int(cs[c]), int(ce[c])) for c in range(lo, hi)]
        for target in missing:
            source = active[int(rng.integers(len(active)))]
            shift = int(target - source) * spd
            for c in idx[day_of == source]:
                s, e = int(cs[c]) + shift, min(int(ce[c]) + shift, horizon)
                if s >= horizon or any(s <= b and a <= e for a, b in intervals):
                    continue
                ls = slice(link_lo[c], link_lo[c + 1])
                j = network.link_join[ls] + shift
                ok = j < horizon
                if not ok.any():
                    continue
                intervals.append((s, e))
                cid = base_copies + len(new_c[0])
                new_c[0].append(v)
                new_c[1].append(s)
                new_c[2].append(e)
                new_l[0].append(np.full(ok.sum(), cid, np.int64))
                new_l[1].append(network.link_nbr[ls][ok])
                new_l[2].append(j[ok])
                new_l[3].append(network.link_leave[ls][ok] + shift)
    if not new_c[0]:
        return network
    cat = lambda old, new: np.concatenate([old.astype(np.int64)] + [np.asarray(a, np.int64) for a in new])
    return ContactNetwork(grid, network.n_nodes, network.delta,
                          cat(network.copy_host, [new_c[0]]), cat(cs, [new_c[1]]), cat(ce, [new_c[2]]),
                          cat(network.link_copy, new_l[0]), cat(network.link_nbr, new_l[1]),
                          cat(network.link_join, new_l[2]), cat(network.link_leave, new_l[3]))

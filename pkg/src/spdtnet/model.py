"""Core data model: time grid, active copies, timed links and the link-event file format.

All times are integer step indices on a :class:`TimeGrid`. A network is stored
column-wise in numpy arrays; copies are sorted by ``(host, start)`` and links by
``(host, copy start, join, neighbour, leave)`` so that the on-disk form of a
network is unique.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np

SECONDS_PER_DAY = 86400

LINKS_FILENAME = "links.csv"
META_FILENAME = "network.kv"
META_KEYS = ("step_seconds", "horizon_steps", "delta_steps", "node_count")


class NetworkError(ValueError):
    """A network, link file or metadata file violates the data model."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class TimeGrid:
    """Discrete simulation clock."""

    step_seconds: int = 300
    horizon_days: int = 7

    def __post_init__(self):
        if self.step_seconds <= 0 or SECONDS_PER_DAY % self.step_seconds:
            raise ValueError(f"step_seconds={self.step_seconds} must be a positive divisor of 86400")
        if self.horizon_days <= 0:
            raise ValueError(f"horizon_days={self.horizon_days} must be positive")

    @property
    def steps_per_day(self) -> int:
        return SECONDS_PER_DAY // self.step_seconds

    @property
    def horizon_steps(self) -> int:
        return self.horizon_days * self.steps_per_day

    @classmethod
    def from_steps(cls, step_seconds: int, horizon_steps: int) -> "TimeGrid":
        per_day = SECONDS_PER_DAY // step_seconds
        if horizon_steps <= 0 or horizon_steps % per_day:
            raise ValueError(f"horizon_steps={horizon_steps} is not a whole number of days of {per_day} steps")
        return cls(step_seconds, horizon_steps // per_day)

    def day_of(self, step):
        return np.asarray(step) // self.steps_per_day


class LinkClass(enum.IntEnum):
    DIRECT = 0
    MIXED = 1
    INDIRECT = 2


def classify_link(start, end, join, leave) -> LinkClass:
    """Classify one link by its host interval ``[start, end)`` and neighbour interval ``[join, leave)``."""
    if join >= end:
        return LinkClass.INDIRECT
    if leave > end:
        return LinkClass.MIXED
    return LinkClass.DIRECT


def classify_links(start, end, join, leave) -> np.ndarray:
    """Vectorised :func:`classify_link`; returns an int8 array of :class:`LinkClass` codes."""
    start, end, join, leave = np.broadcast_arrays(start, end, join, leave)
    out = np.full(end.shape, LinkClass.DIRECT, dtype=np.int8)
    out[leave > end] = LinkClass.MIXED
    out[join >= end] = LinkClass.INDIRECT
    return out


def _readonly(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    if a.base is not None:
        a = a.copy()
    a.flags.writeable = False
    return a


class ContactNetwork:
    """Immutable SPDT contact network.

    Copies live in ``copy_host/copy_start/copy_end``; each link points at its copy by
    row index (``link_copy``) and carries the neighbour id and its join/leave steps.
    Pass ``canonical=True`` only when the arrays are already in canonical order.
    """

    def __init__(self, grid: TimeGrid, n_nodes: int, delta: int,
                 copy_host, copy_start, copy_end,
                 link_copy, link_nbr, link_join, link_leave,
                 canonical: bool = False):
        if n_nodes <= 0:
            raise ValueError("n_nodes must be positive")
        if delta < 0:
            raise ValueError("delta must be non-negative")
        self.grid = grid
        self.n_nodes = int(n_nodes)
        self.delta = int(delta)

        copy_host = np.asarray(copy_host, dtype=np.int32)
        copy_start = np.asarray(copy_start, dtype=np.int32)
        copy_end = np.asarray(copy_end, dtype=np.int32)
        link_copy = np.asarray(link_copy, dtype=np.int32)
        link_nbr = np.asarray(link_nbr, dtype=np.int32)
        link_join = np.asarray(link_join, dtype=np.int32)
        link_leave = np.asarray(link_leave, dtype=np.int32)
        if not (len(copy_host) == len(copy_start) == len(copy_end)):
            raise ValueError("copy arrays differ in length")
        if not (len(link_copy) == len(link_nbr) == len(link_join) == len(link_leave)):
            raise ValueError("link arrays differ in length")
        if len(link_copy) and (link_copy.min() < 0 or link_copy.max() >= len(copy_host)):
            raise NetworkError("link references a copy that does not exist")

        if not canonical:
            corder = np.lexsort((copy_end, copy_start, copy_host))
            remap = np.empty(len(corder), dtype=np.int32)
            remap[corder] = np.arange(len(corder), dtype=np.int32)
            copy_host, copy_start, copy_end = copy_host[corder], copy_start[corder], copy_end[corder]
            link_copy = remap[link_copy]
            lorder = np.lexsort((link_leave, link_nbr, link_join, link_copy))
            link_copy, link_nbr = link_copy[lorder], link_nbr[lorder]
            link_join, link_leave = link_join[lorder], link_leave[lorder]

        self.copy_host = _readonly(copy_host, np.int32)
        self.copy_start = _readonly(copy_start, np.int32)
        self.copy_end = _readonly(copy_end, np.int32)
        self.link_copy = _readonly(link_copy, np.int32)
        self.link_nbr = _readonly(link_nbr, np.int32)
        self.link_join = _readonly(link_join, np.int32)
        self.link_leave = _readonly(link_leave, np.int32)
        self._cache: dict = {}

    def __repr__(self):
        return (f"ContactNetwork(n_nodes={self.n_nodes}, copies={self.n_copies}, links={self.n_links}, "
                f"delta={self.delta}, grid={self.grid})")

    @property
    def n_copies(self) -> int:
        return len(self.copy_host)

    @property
    def n_links(self) -> int:
        return len(self.link_copy)

    def _cached(self, key, fn):
        if key not in self._cache:
            value = fn()
            if isinstance(value, np.ndarray):
                value.flags.writeable = False
            self._cache[key] = value
        return self._cache[key]

    @property
    def link_host(self) -> np.ndarray:
        return self._cached("link_host", lambda: self.copy_host[self.link_copy])

    @property
    def link_start(self) -> np.ndarray:
        return self._cached("link_start", lambda: self.copy_start[self.link_copy])

    @property
    def link_end(self) -> np.ndarray:
        return self._cached("link_end", lambda: self.copy_end[self.link_copy])

    @property
    def host_offsets(self) -> np.ndarray:
        """CSR offsets: copies of node ``v`` are rows ``host_offsets[v]:host_offsets[v+1]``."""
        return self._cached("host_offsets", lambda: np.concatenate(
            ([0], np.cumsum(np.bincount(self.copy_host, minlength=self.n_nodes)))).astype(np.int64))

    @property
    def copy_index(self) -> np.ndarray:
        """Ordinal of each copy within its host's sequence."""
        def build():
            offsets = self.host_offsets
            return (np.arange(self.n_copies) - np.repeat(offsets[:-1], np.diff(offsets))).astype(np.int32)
        return self._cached("copy_index", build)

    @property
    def copy_degree(self) -> np.ndarray:
        """Number of links owned by each copy."""
        return self._cached("copy_degree", lambda: np.bincount(self.link_copy, minlength=self.n_copies))

    def link_classes(self) -> np.ndarray:
        return classify_links(self.link_start, self.link_end, self.link_join, self.link_leave)

    def copies_of(self, node: int):
        """``(start, end)`` arrays of ``node``'s copies."""
        if not 0 <= node < self.n_nodes:
            raise KeyError(f"unknown node id {node}")
        lo, hi = self.host_offsets[node], self.host_offsets[node + 1]
        return self.copy_start[lo:hi], self.copy_end[lo:hi]

    def fingerprint(self) -> str:
        import hashlib
        h = hashlib.sha256()
        h.update(repr((self.grid.step_seconds, self.grid.horizon_steps, self.delta, self.n_nodes)).encode())
        for a in (self.copy_host, self.copy_start, self.copy_end, self.link_copy,
                  self.link_nbr, self.link_join, self.link_leave):
            h.update(a.tobytes())
        return h.hexdigest()


def concurrent_copies(network: ContactNetwork, node: int, step: int) -> int:
    """Number of ``node``'s copies alive at ``step``, i.e. with ``start <= step < end + delta``."""
    if step >= network.grid.horizon_steps + network.delta:
        raise ValueError(f"step {step} beyond horizon + delta")
    start, end = network.copies_of(node)
    return int(np.count_nonzero((start <= step) & (step < end + network.delta)))


def find_violations(network: ContactNetwork, limit: int | None = None) -> list[str]:
    """Return human-readable invariant violations (empty list for a valid network)."""
    out: list[str] = []
    horizon = network.grid.horizon_steps
    n = network.n_nodes

    def report(mask, template, rows):
        idx = np.flatnonzero(mask)
        for i in idx[: (None if limit is None else max(0, limit - len(out)))]:
            out.append(template.format(*[r[i] for r in rows], i=i))

    h, s, e = network.copy_host, network.copy_start, network.copy_end
    report((h < 0) | (h >= n), "copy {i}: host {0} outside [0, N)", (h,))
    report((s < 0) | (s >= e) | (e > horizon), "copy {i}: interval [{0}, {1}) outside horizon or empty", (s, e))
    if len(h) > 1:
        same = h[1:] == h[:-1]
        bad = same & (s[1:] <= e[:-1])
        report(np.concatenate(([False], bad)), "copy {i}: starts at {0} before previous copy of same host ends",
               (s,))
    lh, nb_, j, lv = network.link_host, network.link_nbr, network.link_join, network.link_leave
    ls, le = network.link_start, network.link_end
    report((nb_ < 0) | (nb_ >= n), "link {i}: neighbour {0} outside [0, N)", (nb_,))
    report(nb_ == lh, "link {i}: neighbour equals host {0}", (lh,))
    report((j < ls) | (j >= le + network.delta), "link {i}: join {0} outside copy lifetime [{1}, {2}+delta)",
           (j, ls, le))
    report(j >= lv, "link {i}: join {0} not before leave {1}", (j, lv))
    report(j >= horizon, "link {i}: join {0} at or beyond horizon", (j,))
    return out


def validate(network: ContactNetwork) -> ContactNetwork:
    """Raise :class:`NetworkError` naming the first violation; return the network otherwise."""
    problems = find_violations(network, limit=1)
    if problems:
        raise NetworkError(problems[0])
    return network


# ---------------------------------------------------------------------------
# file format


@nb.njit(cache=True)
def _write_int(buf, pos, v):
    if v < 0:
        buf[pos] = 45
        pos += 1
        v = -v
    if v == 0:
        buf[pos] = 48
        return pos + 1
    n = 0
    t = v
    while t > 0:
        n += 1
        t //= 10
    for k in range(n - 1, -1, -1):
        buf[pos + k] = 48 + v % 10
        v //= 10
    return pos + n


@nb.njit(cache=True)
def _format_rows(cols, lo, hi, buf):
    pos = 0
    ncol = cols.shape[0]
    for i in range(lo, hi):
        for c in range(ncol):
            pos = _write_int(buf, pos, cols[c, i])
            buf[pos] = 44 if c < ncol - 1 else 10
            pos += 1
    return pos


def write_rows(fh, cols: np.ndarray, chunk: int = 1 << 20) -> None:
    """Write an ``(ncol, nrow)`` int64 array as comma-separated lines to a binary file handle."""
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    nrow = cols.shape[1]
    buf = np.empty(chunk * cols.shape[0] * 21, dtype=np.uint8)
    for lo in range(0, nrow, chunk):
        hi = min(nrow, lo + chunk)
        used = _format_rows(cols, lo, hi, buf)
        fh.write(buf[:used].tobytes())


def link_columns(network: ContactNetwork, lo: int = 0, hi: int | None = None) -> np.ndarray:
    sl = slice(lo, hi)
    c = network.link_copy[sl]
    return np.stack([network.copy_host[c], network.copy_start[c], network.copy_end[c],
                     network.link_nbr[sl], network.link_join[sl], network.link_leave[sl]]).astype(np.int64)


def format_metadata(grid: TimeGrid, delta: int, n_nodes: int) -> str:
    vals = (grid.step_seconds, grid.horizon_steps, delta, n_nodes)
    return "".join(f"{k}={v}\n" for k, v in zip(META_KEYS, vals))


def parse_metadata(text: str) -> tuple[TimeGrid, int, int]:
    kv = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise NetworkError(f"metadata: expected key=value, got {line!r}", lineno)
        k, v = line.split("=", 1)
        kv[k.strip()] = v.strip()
    missing = [k for k in META_KEYS if k not in kv]
    if missing:
        raise NetworkError(f"metadata missing keys: {', '.join(missing)}")
    try:
        step, horizon, delta, n = (int(kv[k]) for k in META_KEYS)
    except ValueError as exc:
        raise NetworkError(f"metadata: non-integer value ({exc})") from None
    return TimeGrid.from_steps(step, horizon), delta, n


def _paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix == ".csv":
        return path, path.with_suffix(".kv")
    return path / LINKS_FILENAME, path / META_FILENAME


def write_network(network: ContactNetwork, path) -> Path:
    """Write ``links.csv`` + ``network.kv``. ``path`` is a directory, or a ``.csv`` file path."""
    links_path, meta_path = _paths(path)
    links_path.parent.mkdir(parents=True, exist_ok=True)
    with open(links_path, "wb") as fh:
        step = 1 << 22
        for lo in range(0, network.n_links, step):
            write_rows(fh, link_columns(network, lo, lo + step))
    meta_path.write_text(format_metadata(network.grid, network.delta, network.n_nodes))
    return links_path


def read_link_rows(path) -> np.ndarray:
    """Parse a link-event file into an ``(n, 6)`` int64 array, in file order."""
    path = Path(path)
    if os.path.getsize(path) == 0:
        return np.empty((0, 6), dtype=np.int64)
    import pandas as pd
    try:
        df = pd.read_csv(path, header=None, dtype=np.int64, engine="c")
    except ValueError as exc:
        raise NetworkError(f"{path}: malformed link record ({exc})") from None
    if df.shape[1] != 6:
        raise NetworkError(f"{path}: expected 6 fields per record, found {df.shape[1]}", 1)
    return df.to_numpy()


def network_from_rows(rows: np.ndarray, grid: TimeGrid, delta: int, n_nodes: int) -> ContactNetwork:
    rows = np.asarray(rows, dtype=np.int64).reshape(-1, 6)
    copies, link_copy = np.unique(rows[:, 0:3], axis=0, return_inverse=True)
    return ContactNetwork(grid, n_nodes, delta, copies[:, 0], copies[:, 1], copies[:, 2],
                          link_copy.ravel(), rows[:, 3], rows[:, 4], rows[:, 5])


def read_network(path, check: bool = True) -> ContactNetwork:
    """Load a network written by :func:`write_network`.

    Copies are reconstructed from the link records, so copies without links are not
    represented on disk.
    """
    links_path, meta_path = _paths(path)
    if not meta_path.exists():
        raise NetworkError(f"missing metadata file {meta_path}")
    grid, delta, n = parse_metadata(meta_path.read_text())
    rows = read_link_rows(links_path)
    if check:
        line = first_violation_line(rows, grid, delta, n)
        if line is not None:
            raise NetworkError(line[1], line[0])
    return network_from_rows(rows, grid, delta, n)


def first_violation_line(rows: np.ndarray, grid: TimeGrid, delta: int, n_nodes: int):
    """Check link records in file order; return ``(line_number, message)`` of the first bad one."""
    if len(rows) == 0:
        return None
    h, s, e, u, j, lv = (rows[:, k] for k in range(6))
    horizon = grid.horizon_steps
    checks = [
        ((h < 0) | (h >= n_nodes), "host id outside [0, node_count)"),
        ((u < 0) | (u >= n_nodes), "neighbour id outside [0, node_count)"),
        (u == h, "neighbour equals host"),
        ((s < 0) | (s >= e) | (e > horizon), "copy interval empty or outside horizon"),
        ((j < s) | (j >= e + delta), "join step outside copy lifetime [start, end + delta)"),
        (j >= lv, "join step not before leave step"),
        (j >= horizon, "join step at or beyond horizon"),
    ]
    # canonical order: (host, start, join, neighbour, leave) non-decreasing
    key_prev = rows[:-1][:, [0, 1, 4, 3, 5]]
    key_next = rows[1:][:, [0, 1, 4, 3, 5]]
    diff = key_next - key_prev
    nz = diff != 0
    first = np.argmax(nz, axis=1)
    sign = diff[np.arange(len(diff)), first]
    out_of_order = np.concatenate(([False], sign < 0))
    checks.append((out_of_order, "record out of canonical order"))
    # same host+start must have same end; copies of a host must not overlap
    same_copy = np.concatenate(([False], (h[1:] == h[:-1]) & (s[1:] == s[:-1]) & (e[1:] != e[:-1])))
    checks.append((same_copy, "copy end differs between records of the same copy"))
    overlap = np.concatenate(([False], (h[1:] == h[:-1]) & (s[1:] > s[:-1]) & (s[1:] <= e[:-1])))
    checks.append((overlap, "copy starts before the previous copy of the same host ends"))
    best = None
    for mask, msg in checks:
        idx = np.flatnonzero(mask)
        if len(idx) and (best is None or idx[0] < best[0]):
            best = (int(idx[0]), msg)
    if best is None:
        return None
    i, msg = best
    return i + 1, f"{msg}: {','.join(str(x) for x in rows[i])}"

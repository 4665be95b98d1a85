"""End-to-end acceptance checks, one test per criterion; a PASS/FAIL summary is printed at the end of the run."""

import os
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from oracles import temporal_bruteforce
from spdtnet.analysis import DayEdges, cip_histograms, reference_histograms, rse, static_metrics, temporal_metrics
from spdtnet.diffusion import DiseaseParams, link_exposure_table, run_sir, sample_removal_minutes
from spdtnet.extraction import GpsUpdate, densify, detect_stays, extract_links, extract_network
from spdtnet.fitting import fit_activation_rate, fit_geometric, fit_mixed_degree, fit_truncated_geometric
from spdtnet.generator import AdnParams, HomogeneousDegree, ModelParams, generate_activations, generate_adn, \
    generate_network
from spdtnet.model import ContactNetwork, LinkClass, TimeGrid, classify_links, find_violations
from spdtnet.stochastic import (BoundedPowerLawParam, GeometricParam, equilibrium_probs, mixed_degree_pmf,
                                sample_geometric, sample_mixed_degree)

G, P, V = 0.304, 7.5e-3 / 60, 2512.0
LAW = BoundedPowerLawParam(2.963, 0.26, 1.0)
pytestmark = pytest.mark.slow


# ---------------------------------------------------------------------------
# 1. exposure oracle


def ode_exposures(ts, tl, js, jl, r):
    """Integrate concentration and dose for many links at once, segment by segment in normalised time."""
    knots = np.sort(np.column_stack([ts, tl, js, jl]), axis=1)
    n = len(ts)
    y = np.zeros(2 * n)
    for k in range(3):
        a, b = knots[:, k], knots[:, k + 1]
        length = b - a
        mid = (a + b) / 2
        source = ((ts <= mid) & (mid < tl)) * (G / V)
        inhale = ((js <= mid) & (mid < jl)) * P

        def rhs(_, y):
            c = y[:n]
            return np.concatenate([length * (source - r * c), length * inhale * c])

        sol = solve_ivp(rhs, (0.0, 1.0), y, method="DOP853", rtol=1e-12, atol=1e-30)
        y = sol.y[:, -1]
    return y[n:]


def test_c01_exposure_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    n = 1000
    ts = rng.uniform(0, 86400, n)
    tl = ts + rng.uniform(300, 4 * 3600, n)
    kind = np.arange(n) % 3
    js = np.where(kind == 0, rng.uniform(ts, tl), np.where(kind == 1, rng.uniform(ts, tl), tl + rng.uniform(0, 10800, n)))
    stay = rng.uniform(300, 4 * 3600, n)
    jl = np.where(kind == 0, np.minimum(js + stay, tl), np.where(kind == 1, tl + stay, js + stay))
    js = np.where((kind == 0) & (jl - js < 1), ts, js)
    b = sample_removal_minutes(DiseaseParams(), rng, n)
    r = 1 / (60 * b)
    got = link_exposure_table(ts, tl, js, jl, G, P, V, r)
    want = ode_exposures(ts, tl, js, jl, r)
    rel = np.abs(got - want) / want
    indirect = jl > tl
    indirect &= js >= tl
    closed = G * P / (V * r * r) * -np.expm1(-r * (tl - ts)) * (np.exp(-r * (js - tl)) - np.exp(-r * (jl - tl)))
    rel_closed = np.max(np.abs(got[indirect] - closed[indirect]) / closed[indirect])
    elapsed = time.perf_counter() - t0
    classes = set(classify_links(ts, tl, js, jl).tolist())
    report(f"max rel err vs ODE {rel.max():.2e}, indirect closed form {rel_closed:.2e}, {elapsed:.1f}s")
    assert classes == {LinkClass.DIRECT, LinkClass.MIXED, LinkClass.INDIRECT}
    assert rel.max() < 1e-6
    assert rel_closed < 1e-12
    assert elapsed < 10


# ---------------------------------------------------------------------------
# 2. MLE round trips


def test_c02_mle_round_trips(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    t_a = sample_geometric(GeometricParam(0.085), rng, 10 ** 5)
    rho = fit_geometric(t_a)
    bound = t_a + 36
    lq = np.log1p(-0.02)
    t_c = np.minimum(np.floor(np.log1p(rng.random(t_a.size) * np.expm1(bound * lq)) / lq).astype(np.int64), bound - 1)
    p_c = fit_truncated_geometric(t_c, t_a, 36)

    n, days, z = 10_000, 7, 288
    state = rng.random(n) < 0.0048 / (0.0048 + 0.085)
    counts = np.zeros((n, days), np.int64)
    for t in range(days * z):
        u = rng.random(n)
        up = ~state & (u < 0.0048)
        counts[up, t // z] += 1
        state = np.where(state, u >= 0.085, up)
    q = fit_activation_rate(counts.ravel(), 0.085, z)

    fit = fit_mixed_degree(sample_mixed_degree(LAW, rng, 5 * 10 ** 5))
    elapsed = time.perf_counter() - t0
    err = {"rho": rho / 0.085 - 1, "p_c": p_c / 0.02 - 1, "q": q / 0.0048 - 1, "beta": fit.beta / 2.963 - 1,
           "xi": fit.xi / 0.26 - 1}
    report(", ".join(f"{k} {v:+.2%}" for k, v in err.items()) + f", {elapsed:.0f}s")
    assert abs(err["rho"]) < 0.05 and abs(err["p_c"]) < 0.05
    assert abs(err["q"]) < 0.10
    assert abs(err["beta"]) < 0.10 and abs(err["xi"]) < 0.10
    assert elapsed < 300


# ---------------------------------------------------------------------------
# 3. self-consistency RSE


def test_c03_self_consistency_rse(report):
    t0 = time.perf_counter()
    p = ModelParams(n_nodes=126_000, grid=TimeGrid(300, 7), master_seed=3)
    net = generate_network(p)
    obs = cip_histograms(net)
    refs = reference_histograms(net, p.rho, p.q, p.degree_model.law, p.p_c, p.p_b)
    values = {k: rse(obs[k], refs[k]) for k in obs}
    elapsed = time.perf_counter() - t0
    report(", ".join(f"{k} {v:.4f}" for k, v in values.items()) + f", {elapsed:.0f}s")
    for k in ("t_a", "t_c", "t_d"):
        assert values[k] < 0.02, k
    for k in ("d", "h", "t_w"):
        assert values[k] < 0.03, k
    assert elapsed < 600


# ---------------------------------------------------------------------------
# 4. equilibrium


def test_c04_equilibrium(report):
    p = ModelParams(n_nodes=10_000, grid=TimeGrid(300, 30), master_seed=4)
    active = sum(c.end - c.start for v in range(p.n_nodes) for c in generate_activations(p, v))
    frac = active / (p.n_nodes * p.grid.horizon_steps)
    pi1 = equilibrium_probs(p.rho, p.q)[1]
    report(f"active fraction {frac:.5f} vs pi1 {pi1:.5f}")
    assert abs(frac - pi1) < 0.005


# ---------------------------------------------------------------------------
# 5. degree mixture


def test_c05_degree_mixture(report):
    d = sample_mixed_degree(LAW, np.random.default_rng(5), 10 ** 7)
    kmax = 200
    emp = np.bincount(d, minlength=kmax + 1)[1:kmax + 1] / d.size
    err = np.max(np.abs(emp - mixed_degree_pmf(np.arange(1, kmax + 1), LAW)))
    total = mixed_degree_pmf(np.arange(1, 10 ** 6 + 1), LAW).sum()
    report(f"max per-bin error {err:.5f}, pmf sum {total:.9f}")
    assert err < 0.003
    assert abs(total - 1) < 1e-6


# ---------------------------------------------------------------------------
# 6 and 7. diffusion on size-matched networks

N_DIFF, DAYS_DIFF, SEEDS_DIFF, RUNS = 50_000, 32, 69, 50


@pytest.fixture(scope="module")
def diffusion_runs():
    grid = TimeGrid(300, DAYS_DIFF)
    nets = {"GDT": generate_network(ModelParams(n_nodes=N_DIFF, grid=grid, master_seed=11)),
            "GDH": generate_network(ModelParams(n_nodes=N_DIFF, grid=grid, master_seed=11,
                                                degree_model=HomogeneousDegree(0.32))),
            "BDT": generate_adn(AdnParams(m=None), N_DIFF, DAYS_DIFF, seed=11),
            "BDH": generate_adn(AdnParams(m=3), N_DIFF, DAYS_DIFF, seed=11)}
    out = {}
    for name, net in nets.items():
        out[name, 60] = run_sir(net, DiseaseParams(seeds=SEEDS_DIFF, r_t=60), runs=RUNS, seed=6)
    for r_t in (20, 40):
        out["GDT", r_t] = run_sir(nets["GDT"], DiseaseParams(seeds=SEEDS_DIFF, r_t=r_t), runs=RUNS, seed=6)
    return out


def test_c06_diffusion_ordering(report, diffusion_runs):
    final = {k: float(v.cumulative[:, -1].mean()) for k, v in diffusion_runs.items()}
    gdt, gdh, bdt, bdh = (final[k, 60] for k in ("GDT", "GDH", "BDT", "BDH"))
    report(f"GDT {gdt:.1f} GDH {gdh:.1f} BDT {bdt:.1f} BDH {bdh:.1f}, GDT/BDT {gdt / bdt:.3f}; "
           f"GDT r_t 20/40/60: {final['GDT', 20]:.1f}/{final['GDT', 40]:.1f}/{gdt:.1f}")
    assert gdt >= 1.25 * bdt
    assert gdt > gdh
    assert bdt > bdh
    assert final["GDT", 20] < final["GDT", 40] < gdt


def test_c07_homogeneous_collapse(report, diffusion_runs):
    gdh = diffusion_runs["GDH", 60].prevalence
    gdt = diffusion_runs["GDT", 60].prevalence
    hits = 0
    for k in range(RUNS):
        peak = int(np.argmax(gdh[k]))
        declines = peak < DAYS_DIFF - 1 and gdh[k, -1] < gdh[k, peak]
        sustains = gdt[k, peak + 1:].size > 0 and gdt[k, peak + 1:].max() > gdt[k, peak]
        hits += declines and sustains
    report(f"{hits}/{RUNS} paired runs with GDH peak-and-decline while GDT grows past the GDH peak day")
    assert hits >= 0.8 * RUNS


# ---------------------------------------------------------------------------
# 8. clustering lever


def test_c08_clustering_lever(report):
    cc = {}
    for mu in (0.4, 0.0):
        net = generate_network(ModelParams(n_nodes=20_000, grid=TimeGrid(300, 7), mu=mu, master_seed=8))
        cc[mu] = float(static_metrics(net, daily=False).clustering.mean())
    report(f"mean clustering mu=0.4 {cc[0.4]:.4f}, mu=0 {cc[0.0]:.4f}, ratio {cc[0.4] / cc[0.0]:.1f}, "
           f"largest copy degree {int(net.copy_degree.max())}")
    assert cc[0.4] >= 3 * cc[0.0]


# ---------------------------------------------------------------------------
# 9. temporal-metric oracle


def test_c09_temporal_oracle(report):
    rng = np.random.default_rng(9)
    mismatches = 0
    for _ in range(100):
        m = int(rng.integers(6, 20))
        triples = np.column_stack([rng.integers(0, 8, m), rng.integers(0, 8, m), rng.integers(0, 6, m)])
        bc, cc, dist = temporal_bruteforce(8, 6, triples.tolist())
        t = temporal_metrics(DayEdges.from_triples(8, 6, *triples.T), keep_distances=True)
        ok = np.array_equal(t.distance, dist) and np.array_equal(t.betweenness, bc) and np.allclose(t.closeness, cc,
                                                                                                     rtol=0, atol=1e-12)
        mismatches += not ok
    report(f"{mismatches} mismatches in 100 instances")
    assert mismatches == 0


# ---------------------------------------------------------------------------
# 10. extraction fixtures

LAT, LON = 40.7128, -74.0060
M = 1 / 111_195
T0 = 1_700_006_400  # a UTC midnight


def updates(user, times, north_m=0.0):
    return [GpsUpdate(user, LAT + north_m * M, LON, float(T0 + t)) for t in times]


def test_c10_extraction_fixtures(report):
    checks = {}
    one = detect_stays(updates(0, [100]))
    checks["single update"] = len(one) == 1 and one[0].start == one[0].end == T0 + 100
    pair = detect_stays(updates(0, [0]) + updates(0, [600], north_m=10))
    checks["10 m / 10 min"] = len(pair) == 1 and (pair[0].start, pair[0].end) == (T0, T0 + 600)
    six = detect_stays(updates(0, [0, 300, 600, 600 + 2100, 600 + 2400, 600 + 2700]))
    checks["35-min gap"] = [(s.start - T0, s.end - T0) for s in six] == [(0, 600), (2700, 3300)]

    host = updates(0, range(0, 3601, 300))
    lone = updates(1, [1200])
    links = extract_links(detect_stays(host + lone), host + lone)
    checks["one-update neighbour"] = [l for l in links if l.host == 0] == []
    two = updates(1, [1200, 1500])
    links = extract_links(detect_stays(host + two), host + two)
    checks["two-update neighbour"] = [(l.neighbour, l.join - T0, l.leave - T0) for l in links if l.host == 0] == \
        [(1, 1200, 1500)]
    for offset, expect in ((1, 0), (0, 1)):
        late = updates(1, [3600 + 10800 + offset, 3600 + 10800 + offset + 600])
        got = [l for l in extract_links(detect_stays(host + late), host + late) if l.host == 0]
        checks[f"delta window +{offset}s"] = len(got) == expect

    h = 9 * 3600
    fixture = (updates(0, range(h, h + 3601, 300)) + updates(1, range(h + 1800, h + 3001, 300), 5)
               + updates(2, range(h + 7200, h + 9601, 300), -5))
    links = sorted((l for l in extract_links(detect_stays(fixture), fixture) if l.host == 0), key=lambda l: l.neighbour)
    checks["three-user links"] = [(l.neighbour, l.start - T0, l.end - T0, l.join - T0, l.leave - T0) for l in links] \
        == [(1, h, h + 3600, h + 1800, h + 3000), (2, h, h + 3600, h + 7200, h + 9600)]
    net, _ = extract_network(fixture)
    hosted = net.link_host == 0
    checks["three-user classes"] = sorted(net.link_classes()[hosted].tolist()) == [LinkClass.DIRECT, LinkClass.INDIRECT]
    checks["valid network"] = find_violations(net) == []

    spd = 288
    # user 0 hosts daily, user 1 on day 3 only (two links), user 2 never hosts
    hosts = [0] * 7 + [1]
    starts = [d * spd + 100 for d in range(7)] + [3 * spd + 40]
    ends = [d * spd + 110 for d in range(7)] + [3 * spd + 60]
    sdt = ContactNetwork(TimeGrid(300, 7), 3, 36, hosts, starts, ends, list(range(7)) + [7, 7], [1] * 7 + [0, 2],
                         [d * spd + 101 for d in range(7)] + [3 * spd + 41, 3 * spd + 42],
                         [d * spd + 105 for d in range(7)] + [3 * spd + 50, 3 * spd + 55])
    ddt = densify(sdt, np.random.default_rng(0))
    checks["densify daily user unchanged"] = np.array_equal(ddt.copies_of(0)[0], sdt.copies_of(0)[0])
    checks["densify 1-of-7 user filled"] = sorted((ddt.copies_of(1)[0] // spd).tolist()) == list(range(7))
    checks["densify link conservation"] = (np.sum(ddt.link_host == 1) == 7 * 2 and np.sum(ddt.link_host == 0) == 7
                                           and np.sum(ddt.link_host == 2) == 0)
    failed = [k for k, ok in checks.items() if not ok]
    report(f"{len(checks) - len(failed)}/{len(checks)} fixtures" + (f", failed: {failed}" if failed else ""))
    assert not failed


# ---------------------------------------------------------------------------
# 11. scale


PEAK = ("import atexit, sys\n"
        "def peak():\n"
        "    for line in open('/proc/self/status'):\n"
        "        if line.startswith('VmHWM'):\n"
        "            sys.stderr.write(f'PEAK_KB {line.split()[1]}\\n')\n"
        "atexit.register(peak)\n")


def run_measured(code, *args):
    """Run ``code`` in a fresh interpreter; the peak RSS is read inside the child so the parent's does not leak in."""
    t0 = time.perf_counter()
    res = subprocess.run([sys.executable, "-c", PEAK + code, *map(str, args)], capture_output=True, text=True)
    wall = time.perf_counter() - t0
    kb = [int(line.split()[1]) for line in res.stderr.splitlines() if line.startswith("PEAK_KB")]
    return res.returncode, wall, (kb[-1] / 1e6 if kb else float("nan")), res.stderr


def test_c11_scale(report, tmp_path):
    code, wall, rss, err = run_measured(
        "import sys; from spdtnet.cli import main; sys.exit("
        "main(['generate', '--nodes', '364000', '--days', '32', '--seed', '1', '-o', sys.argv[1]]))", tmp_path / "364k")
    assert code == 0, err[-500:]
    size = (tmp_path / "364k" / "links.csv").stat().st_size
    code_1m, wall_1m, rss_1m, err_1m = run_measured(
        "import sys; from spdtnet.generator import ModelParams, generate_to_directory; "
        "from spdtnet.model import TimeGrid; "
        "generate_to_directory(ModelParams(n_nodes=1_000_000, grid=TimeGrid(300, 32), master_seed=1), sys.argv[1])",
        tmp_path / "1m")
    size_1m = (tmp_path / "1m" / "links.csv").stat().st_size if code_1m == 0 else 0
    for sub in ("364k", "1m"):
        links = tmp_path / sub / "links.csv"
        if links.exists():
            links.unlink()
    report(f"364K x 32d: {wall:.0f}s, {rss:.2f} GB peak, {size / 1e9:.2f} GB links; "
           f"1M x 32d: {wall_1m:.0f}s, {rss_1m:.2f} GB peak, {size_1m / 1e9:.2f} GB links; {os.cpu_count()} cores")
    assert wall < 600 and rss < 8
    assert code_1m == 0, err_1m[-500:]
    assert rss_1m < 8


# ---------------------------------------------------------------------------
# 12. determinism


def test_c12_determinism(report, tmp_path):
    def cli(threads, *args):
        env = dict(os.environ, NUMBA_NUM_THREADS="4")
        res = subprocess.run([sys.executable, "-m", "spdtnet.cli", "--threads", str(threads), *map(str, args)],
                             env=env, capture_output=True, text=True)
        assert res.returncode == 0, res.stderr[-500:]

    for threads in (1, 4):
        net = tmp_path / f"net{threads}"
        cli(threads, "generate", "--nodes", 20_000, "--days", 7, "--seed", 12, "-o", net)
        cli(threads, "simulate", "-n", net, "--runs", 8, "--seeds", 200, "--sigma", 3, "--seed", 12, "--events",
            "-o", tmp_path / f"sim{threads}")
    cli(4, "generate", "--nodes", 20_000, "--days", 7, "--seed", 12, "-o", tmp_path / "again")
    links = [(tmp_path / d / "links.csv").read_bytes() for d in ("net1", "net4", "again")]
    events = [(tmp_path / d / "events.csv").read_bytes() for d in ("sim1", "sim4")]
    report(f"{len(links[0]) / 1e6:.1f} MB links and {len(events[0]) / 1e3:.0f} kB events compared at 1 and 4 threads")
    assert links[0] == links[1] == links[2]
    assert events[0] == events[1]
    assert len(events[0].splitlines()) > 200

import math

import numba
import numpy as np
import pytest
from scipy.integrate import solve_ivp

from spdtnet.diffusion import (DiseaseParams, LinkTable, apv, infection_probability, link_class_counts,
                               link_exposure, link_exposure_table, run_sir, sample_removal_minutes, total_exposure)
from spdtnet.generator import ModelParams, generate_network
from spdtnet.model import ContactNetwork, TimeGrid

G, P, V = 0.304, 7.5e-3 / 60, 2512.0


def ode_exposure(ts, tl, js, jl, r):
    """Integrate the room concentration and the inhaled dose numerically."""

    def rhs(t, y):
        source = G / V if ts <= t < tl else 0.0
        inhale = P * y[0] if js <= t < jl else 0.0
        return [source - r * y[0], inhale]

    knots = sorted({ts, tl, js, jl})
    y = [0.0, 0.0]
    for a, b in zip(knots[:-1], knots[1:]):
        if b > a:
            sol = solve_ivp(rhs, (a, b), y, method="DOP853", rtol=1e-12, atol=1e-20)
            y = sol.y[:, -1]
    return y[1]


@pytest.mark.parametrize("times", [
    (0, 3600, 600, 1800),      # direct
    (0, 3600, 1800, 7200),     # mixed
    (0, 3600, 5400, 9000),     # indirect
    (0, 300, 0, 300),          # exact overlap
    (0, 3600, 3600, 3900),     # joins at departure
])
def test_exposure_matches_ode(times):
    r = 1 / 3600
    got = link_exposure(*times, G, P, V, r)
    assert got == pytest.approx(ode_exposure(*times, r), rel=1e-8)


def test_indirect_closed_form():
    rng = np.random.default_rng(0)
    for _ in range(200):
        ts = rng.uniform(0, 1e4)
        tl = ts + rng.uniform(60, 2e4)
        js = tl + rng.uniform(0, 1.08e4)
        jl = js + rng.uniform(1, 2e4)
        r = 1 / (60 * rng.uniform(7.5, 300))
        closed = G * P / (V * r * r) * (1 - math.exp(-r * (tl - ts))) * math.exp(r * tl) * (
            math.exp(-r * js) - math.exp(-r * jl))
        assert link_exposure(ts, tl, js, jl, G, P, V, r) == pytest.approx(closed, rel=1e-12)


def test_exposure_edge_cases():
    assert link_exposure(0, 3600, 1200, 1200, G, P, V, 1 / 3600) == 0.0
    base = link_exposure(0, 3600, 600, 4000, G, P, V, 1 / 1800)
    shifted = link_exposure(86400, 90000, 87000, 90400, G, P, V, 1 / 1800)
    assert shifted == pytest.approx(base, rel=1e-12)
    assert link_exposure(0, 3600, 600, 4000, G, P, V, 1 / 900) > 0
    with pytest.raises(ValueError):
        link_exposure(0, 3600, 600, 500, G, P, V, 1 / 3600)
    with pytest.raises(ValueError):
        link_exposure(0, 3600, 600, 900, G, P, V, 0.0)
    table = link_exposure_table([0, 0], [3600, 3600], [600, 5400], [1800, 9000], G, P, V, 1 / 3600)
    assert table[0] == pytest.approx(link_exposure(0, 3600, 600, 1800, G, P, V, 1 / 3600))


def test_exposure_small_rate_limit():
    # slow removal: concentration grows linearly, dose ~ g p t^2 / (2 V)
    r = 1e-12
    got = link_exposure(0, 100, 0, 100, G, P, V, r)
    assert got == pytest.approx(G * P * 100 ** 2 / (2 * V), rel=1e-6)


def test_total_exposure():
    params = DiseaseParams()
    assert total_exposure(np.empty((0, 4)), params, np.random.default_rng(0)) == 0.0
    one = [(0, 3600, 600, 1800)]
    e1 = total_exposure(one, params, np.random.default_rng(5))
    e2 = total_exposure(one * 2, params, np.random.default_rng(5))
    assert e2 == pytest.approx(2 * e1, rel=1e-15)
    rng = np.random.default_rng(1)
    links = np.column_stack([np.zeros(50), np.full(50, 3600.0), rng.uniform(0, 3000, 50), np.full(50, 9000.0)])
    a = total_exposure(links, params, np.random.default_rng(7))
    b = total_exposure(links[rng.permutation(50)], params, np.random.default_rng(7))
    assert a == pytest.approx(b, rel=1e-12)


def test_infection_probability():
    assert infection_probability(0.0, 0.33) == 0.0
    assert infection_probability(math.log(2) / 0.33, 0.33) == pytest.approx(0.5)
    assert infection_probability(1e6, 0.33) == 1.0
    assert 0.33 * 2.1 == pytest.approx(math.log(2), abs=0.001)
    with pytest.raises(ValueError):
        infection_probability(-1.0, 0.33)


def test_removal_time_law():
    params = DiseaseParams(r_t=40)
    b = sample_removal_minutes(params, np.random.default_rng(0), 200_000)
    assert b.min() >= 7.5 and b.max() <= 300
    assert np.median(b) == pytest.approx(40, rel=0.02)


def test_disease_params_from_kv():
    p = DiseaseParams.from_kv({"g": 0.304, "p": 7.5, "V": 2512, "sigma": 0.33, "seeds": 10, "tau_min": 3,
                               "tau_max": 3}, r_t=20)
    assert p.p == pytest.approx(1.25e-4)
    assert p.tau_range == (3, 3) and p.seeds == 10 and p.r_t == 20
    assert DiseaseParams().with_strict_tau().tau_range == (3, 3)
    with pytest.raises(ValueError):
        DiseaseParams(r_t=500)


def fixture_network(links, n=3, days=8, delta=36):
    """links: (host, start, end, nbr, join, leave) rows, one copy per row."""
    rows = np.asarray(links, dtype=np.int64).reshape(-1, 6)
    k = np.arange(len(rows))
    return ContactNetwork(TimeGrid(300, days), n, delta, rows[:, 0], rows[:, 1], rows[:, 2], k,
                          rows[:, 3], rows[:, 4], rows[:, 5])


def day_link(host, nbr, day, steps=36):
    s = day * 288 + 100
    return (host, s, s + steps, nbr, s + 1, s + steps)


def test_sir_forced_transmission_and_timing():
    # node 0 and 1 infect each other on day 0; node 2 is reached only by node 1 on day 1
    net = fixture_network([day_link(0, 1, 0), day_link(1, 0, 0), day_link(1, 2, 1)], days=6)
    params = DiseaseParams(seeds=1, sigma=1e9, tau_range=(3, 3))
    res = run_sir(net, params, runs=30, seed=1, log_events=True)
    seed_node = res.events[res.events[:, 3] == 0][:, 2]
    assert set(seed_node.tolist()) == {0, 1, 2}
    # node 2 never hosts, so seeding it spreads nothing
    assert np.array_equal(res.cumulative[:, -1], np.where(seed_node == 2, 1, 3))
    assert np.all(res.cumulative[:, 0] == 1)
    seeded_one = np.flatnonzero(seed_node == 1)
    for run in seeded_one:
        ev = res.events[res.events[:, 0] == run]
        infect = ev[ev[:, 3] == 1]
        assert {(d, v) for d, v in infect[:, 1:3]} == {(1, 0), (2, 2)}


def test_sir_recovered_host_does_not_transmit():
    net = fixture_network([day_link(0, 1, 3)], n=2, days=6)
    params = DiseaseParams(seeds=2, sigma=1e9, tau_range=(3, 3))
    res = run_sir(net, params, runs=3)
    assert np.all(res.prevalence[:, 3:] == 0)
    net = fixture_network([day_link(0, 1, 3), day_link(1, 0, 3)], n=3, days=6)
    res = run_sir(net, DiseaseParams(seeds=1, sigma=1e9, tau_range=(3, 3)), runs=30, seed=2)
    assert np.all(res.cumulative[:, -1] == 1)


def test_sir_degenerate_cases():
    net = generate_network(ModelParams(n_nodes=2000, grid=TimeGrid(300, 8), master_seed=1))
    res = run_sir(net, DiseaseParams(seeds=50, sigma=0.0), runs=5)
    assert np.all(res.cumulative == 50)
    assert np.all(res.prevalence[:, 5:] == 0)
    empty = ContactNetwork(TimeGrid(300, 5), 100, 0, [], [], [], [], [], [], [])
    res = run_sir(empty, DiseaseParams(seeds=7), runs=3)
    assert np.all(res.cumulative == 7)
    with pytest.raises(ValueError):
        run_sir(empty, DiseaseParams(seeds=101))


def test_sir_conservation_determinism_and_threads():
    net = generate_network(ModelParams(n_nodes=3000, grid=TimeGrid(300, 10), master_seed=2))
    params = DiseaseParams(seeds=30, sigma=3.0)
    a = run_sir(net, params, runs=8, seed=4, log_events=True)
    b = run_sir(net, params, runs=8, seed=4, log_events=True)
    assert np.array_equal(a.events, b.events)
    old = numba.get_num_threads()
    try:
        numba.set_num_threads(1)
        c = run_sir(net, params, runs=8, seed=4, log_events=True)
    finally:
        numba.set_num_threads(old)
    assert np.array_equal(a.events, c.events)
    assert np.all(np.diff(a.cumulative, axis=1) >= 0)
    assert np.all(a.prevalence <= a.cumulative)
    for k in range(8):
        ev = a.events[a.events[:, 0] == k]
        assert len(np.unique(ev[ev[:, 3] <= 1, 2])) == np.sum(ev[:, 3] <= 1)
        # infections made on the last day take effect after the horizon
        infected = ev[(ev[:, 3] <= 1) & (ev[:, 1] < 10)]
        assert a.cumulative[k, -1] == len(infected)
        recovered = ev[ev[:, 3] == 2]
        # S + I + R = N with R counted from the event log
        for day in range(10):
            rec = np.sum(recovered[:, 1] <= day)
            assert a.prevalence[k, day] + rec == a.cumulative[k, day]


def test_sir_monotone_in_sigma():
    net = generate_network(ModelParams(n_nodes=3000, grid=TimeGrid(300, 10), master_seed=3))
    totals = [run_sir(net, DiseaseParams(seeds=30, sigma=s), runs=50, seed=1).cumulative[:, -1].mean()
              for s in (0.33, 3.3, 33.0)]
    assert totals[0] < totals[1] < totals[2]


def test_link_table_days():
    net = fixture_network([day_link(0, 1, 0), day_link(1, 2, 4)], days=6)
    t = LinkTable.from_network(net, days=3)
    assert t.n_days == 3 and t.day_offsets[-1] == 1
    with pytest.raises(ValueError):
        LinkTable.from_network(net, days=7)


def test_apv():
    per_day, mean = apv([200, 100], [150, 100])
    assert per_day[0] == pytest.approx(25.0)
    assert mean == pytest.approx(12.5)
    assert apv([5, 6], [5, 6])[1] == 0.0
    assert apv([100], [150])[0][0] == pytest.approx(50.0)
    with pytest.raises(ValueError):
        apv([0, 1], [1, 1])


def test_link_class_counts():
    net = fixture_network([(0, 0, 10, 1, 2, 8), (0, 20, 30, 1, 25, 40), (1, 0, 10, 2, 12, 14)])
    assert link_class_counts(net) == {"direct": 1, "mixed": 1, "indirect": 1}

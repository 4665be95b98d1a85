import numpy as np
import pytest

from spdtnet.model import (ContactNetwork, LinkClass, NetworkError, TimeGrid, classify_link, classify_links,
                           concurrent_copies, find_violations, read_network, validate, write_network)


def small_network(delta=36):
    # node 0: copies [0,10) and [20,40); node 1: copy [5,15)
    return ContactNetwork(TimeGrid(300, 1), 3, delta,
                          copy_host=[0, 0, 1], copy_start=[0, 20, 5], copy_end=[10, 40, 15],
                          link_copy=[0, 0, 1, 2], link_nbr=[1, 2, 1, 0],
                          link_join=[2, 12, 25, 6], link_leave=[8, 20, 50, 9])


def test_time_grid():
    g = TimeGrid(300, 7)
    assert g.steps_per_day == 288
    assert g.horizon_steps == 7 * 288
    assert TimeGrid.from_steps(300, 576).horizon_days == 2
    with pytest.raises(ValueError):
        TimeGrid(7)
    with pytest.raises(ValueError):
        TimeGrid.from_steps(300, 100)


@pytest.mark.parametrize("times, expected", [
    ((0, 10, 12, 20), LinkClass.INDIRECT),
    ((0, 10, 2, 8), LinkClass.DIRECT),
    ((0, 10, 5, 15), LinkClass.MIXED),
    ((0, 10, 10, 11), LinkClass.INDIRECT),
    ((0, 10, 3, 10), LinkClass.DIRECT),
])
def test_classify_link(times, expected):
    assert classify_link(*times) == expected
    assert classify_links(*[np.array([t]) for t in times])[0] == expected


@pytest.mark.parametrize("step, expected", [(25, 2), (5, 1), (80, 0)])
def test_concurrent_copies(step, expected):
    net = ContactNetwork(TimeGrid(300, 1), 2, 36, [0, 0], [0, 20], [10, 40], [], [], [], [])
    assert concurrent_copies(net, 0, step) == expected


def test_canonical_order_and_accessors():
    net = small_network()
    assert net.n_copies == 3 and net.n_links == 4
    assert list(net.link_host) == [0, 0, 0, 1]
    assert list(net.link_join) == [2, 12, 25, 6]
    assert list(net.copy_degree) == [2, 1, 1]
    s, e = net.copies_of(0)
    assert list(s) == [0, 20] and list(e) == [10, 40]
    assert not net.link_nbr.flags.writeable


def test_canonical_order_is_content_determined():
    a = small_network()
    rng = np.random.default_rng(0)
    perm = rng.permutation(4)
    cperm = np.array([2, 0, 1])
    inv = np.argsort(cperm)
    b = ContactNetwork(a.grid, 3, 36, a.copy_host[cperm], a.copy_start[cperm], a.copy_end[cperm],
                       inv[a.link_copy][perm], a.link_nbr[perm], a.link_join[perm], a.link_leave[perm])
    assert a.fingerprint() == b.fingerprint()


def test_validate_flags_violations():
    assert find_violations(small_network()) == []
    bad = ContactNetwork(TimeGrid(300, 1), 2, 0, [0, 0], [0, 10], [10, 20], [0, 1], [0, 1], [3, 12], [4, 13])
    msgs = find_violations(bad)
    assert any("previous copy" in m for m in msgs)
    assert any("neighbour equals host" in m for m in msgs)
    with pytest.raises(NetworkError):
        validate(bad)
    late = ContactNetwork(TimeGrid(300, 1), 2, 2, [0], [0], [10], [0], [1], [12], [14])
    assert any("join" in m for m in find_violations(late))


def test_round_trip(tmp_path):
    net = small_network()
    write_network(net, tmp_path / "net")
    text = (tmp_path / "net" / "links.csv").read_text()
    assert text.splitlines()[0] == "0,0,10,1,2,8"
    meta = (tmp_path / "net" / "network.kv").read_text()
    assert "delta_steps=36" in meta and "node_count=3" in meta
    back = read_network(tmp_path / "net")
    assert back.fingerprint() == net.fingerprint()
    write_network(back, tmp_path / "again")
    assert (tmp_path / "again" / "links.csv").read_bytes() == text.encode()


def test_read_reports_line_number(tmp_path):
    write_network(small_network(), tmp_path)
    with open(tmp_path / "links.csv", "a") as fh:
        fh.write("1,5,15,1,6,9\n")
    with pytest.raises(NetworkError) as exc:
        read_network(tmp_path)
    assert exc.value.line == 5
    assert "neighbour equals host" in str(exc.value)


def test_read_rejects_malformed(tmp_path):
    write_network(small_network(), tmp_path)
    (tmp_path / "links.csv").write_text("0,0,10,1,2\n")
    with pytest.raises(NetworkError):
        read_network(tmp_path)
    (tmp_path / "network.kv").write_text("step_seconds=300\n")
    with pytest.raises(NetworkError, match="missing keys"):
        read_network(tmp_path)

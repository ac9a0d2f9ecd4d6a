"""Smoke test for the pyklsm extension. Run with pytest or as a script."""

import threading

import pyklsm


def test_exact_queue_sorts():
    q = pyklsm.KLsm(0, 1)
    h = q.register_handle()
    for i, key in enumerate([5, 1, 4, 1, 3]):
        h.insert(key, i)
    assert len(q) == 5
    keys = []
    while (item := h.try_delete_min()) is not None:
        keys.append(item[0])
    assert keys == [1, 1, 3, 4, 5]
    assert q.approx_size() == 0


def test_registry_is_bounded():
    q = pyklsm.KLsm(4, 1)
    q.register_handle()
    try:
        q.register_handle()
    except RuntimeError:
        pass
    else:
        raise AssertionError("expected a full registry")


def test_hook_and_threads():
    q = pyklsm.KLsm(8, 5, seed=3)
    q.set_needs_deletion_hook(lambda key, payload: False)
    out = []
    lock = threading.Lock()

    def work(t):
        h = q.register_handle()
        got = []
        for i in range(2000):
            h.insert(i, t * 2000 + i)
            if i % 2:
                item = h.try_delete_min()
                if item is not None:
                    got.append(item[1])
        with lock:
            out.extend(got)

    threads = [threading.Thread(target=work, args=(t,)) for t in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    q.set_needs_deletion_hook(None)
    h = q.register_handle()
    while q.approx_size() > 0:
        item = h.try_delete_min()
        if item is not None:
            out.append(item[1])
    assert sorted(out) == list(range(8000))


def test_check_trace():
    stack = "0 I 0 4\n1 I 0 3\n2 I 0 2\n3 I 0 1\n4 D 0 2\n5 D 0 4\n"
    assert pyklsm.check_trace(stack, 2) is None
    v = pyklsm.check_trace(stack, 2, "temporal")
    assert v["line"] == 6 and v["text"] == "5 D 0 4"
    try:
        pyklsm.check_trace("0 D 0 9\n", 1)
    except ValueError:
        pass
    else:
        raise AssertionError("expected a malformed-trace error")


def test_sssp_matches_dijkstra():
    g = pyklsm.Graph.gnp(300, 0.05, seed=11)
    expected = pyklsm.dijkstra(g, 0)
    for threads, k in [(1, 0), (2, 16), (4, 256)]:
        r = pyklsm.sssp(g, 0, threads=threads, k=k)
        assert r["dist"] == expected
        assert r["extra_iterations"] >= 0
    small = pyklsm.Graph(3, [(0, 1, 5), (1, 2, 1), (0, 2, 9)])
    assert pyklsm.dijkstra(small) == [0, 5, 6]


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print(f"{name}: ok")

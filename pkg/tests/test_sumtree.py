import numpy as np
import pytest

from pafit.sumtree import SumTree, capacity_for


def naive_find(weights, u):
    return int(np.searchsorted(np.cumsum(weights), u, side="right"))


def test_find_matches_cumulative_search():
    rng = np.random.default_rng(0)
    w = rng.random(37)
    t = SumTree.from_weights(w)
    total = w.sum()
    for u in rng.random(2000) * total:
        assert t.find(u) == naive_find(w, u)


def test_zero_weight_leaves_are_never_returned():
    w = np.array([0.0, 1.0, 0.0, 0.0, 2.0, 0.0])
    t = SumTree.from_weights(w)
    hits = {t.find(u) for u in np.linspace(0, 3, 301, endpoint=False)}
    assert hits == {1, 4}
    # a point at the very top still lands on a positive leaf
    assert t.find(3.0) == 4


def test_ties_resolve_to_lower_index():
    t = SumTree.from_weights([1.0, 1.0])
    assert t.find(0.0) == 0
    assert t.find(1.0) == 1


def test_append_grows_and_updates():
    t = SumTree(2)
    for i in range(100):
        t.append(float(i))
    assert t.cap == capacity_for(100) == 128
    assert t.total == pytest.approx(sum(range(100)))
    t.add(5, 10.0)
    t.set(7, 0.0)
    assert t.get(5) == 15.0
    assert t.total == pytest.approx(sum(range(100)) + 10 - 7)
    assert t.audit() < 1e-12


def test_sampling_frequencies():
    w = np.array([1.0, 2.0, 3.0, 4.0])
    t = SumTree.from_weights(w)
    rng = np.random.default_rng(1)
    counts = np.bincount([t.sample(rng) for _ in range(40_000)], minlength=4)
    assert np.allclose(counts / counts.sum(), w / w.sum(), atol=0.01)


def test_negative_weight_rejected():
    t = SumTree(4)
    t.append(1.0)
    with pytest.raises(ValueError):
        t.set(0, -1.0)

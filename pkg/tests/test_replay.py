import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from dinorl.errors import InsufficientDataError
from dinorl.prng import SplitMix64
from dinorl.replay import ReplayBuffer, Transition


def marker(i):
    return Transition(i, 0, 0.0, i + 1, False)


def test_ring_eviction_small():
    buf = ReplayBuffer(2)
    for i in range(3):
        buf.push(marker(i))
    assert len(buf) == 2
    assert [t.obs for t in buf.contents()] == [1, 2]


@pytest.mark.parametrize("n", [0, 1, 5, 10])
def test_size_below_capacity(n):
    buf = ReplayBuffer(10)
    for i in range(n):
        buf.push(marker(i))
    assert len(buf) == n


def test_size_saturates_with_fifo_eviction():
    buf = ReplayBuffer(50)
    for i in range(50 + 37):
        buf.push(marker(i))
    assert len(buf) == 50
    assert [t.obs for t in buf.contents()] == list(range(37, 87))


@given(st.integers(1, 20), st.lists(st.one_of(st.just("push"), st.integers(1, 5)), max_size=200))
def test_interleaved_push_and_sample(capacity, ops):
    buf = ReplayBuffer(capacity)
    prng = SplitMix64(capacity)
    pushed = 0
    for op in ops:
        if op == "push":
            buf.push(marker(pushed))
            pushed += 1
        elif op <= len(buf):
            live = {t.obs for t in buf.contents()}
            drawn = buf.sample(op, prng)
            assert len(drawn) == op
            assert {t.obs for t in drawn} <= live
        else:
            with pytest.raises(InsufficientDataError):
                buf.sample(op, prng)
        assert len(buf) == min(pushed, capacity)
    assert [t.obs for t in buf.contents()] == list(range(max(0, pushed - capacity), pushed))


def test_sample_requires_enough_data():
    buf = ReplayBuffer(10)
    buf.push(marker(0))
    with pytest.raises(InsufficientDataError):
        buf.sample(3, SplitMix64(0))


def test_sampling_is_deterministic_and_uses_prng_mod_size():
    buf = ReplayBuffer(100)
    for i in range(100):
        buf.push(marker(i))
    a = [t.obs for t in buf.sample(16, SplitMix64(5))]
    b = [t.obs for t in buf.sample(16, SplitMix64(5))]
    assert a == b
    ref = SplitMix64(5)
    assert a == [ref.next() % 100 for _ in range(16)]


def test_uniformity_chi_square():
    buf = ReplayBuffer(1000)
    for i in range(1000):
        buf.push(marker(i))
    prng = SplitMix64(2024)
    counts = [0] * 1000
    for _ in range(100_000):
        counts[buf.sample(1, prng)[0].obs] += 1
    assert chisquare(counts).pvalue > 0.001

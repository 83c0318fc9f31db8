import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evgaze.blink import BlinkDetectorState, detect, observe


def reference(seq, n, lam, k, floor=0.0):
    buf, flags, cool = [], [], 0
    for r in seq:
        if cool:
            cool -= 1
            flags.append(True)
            continue
        if len(buf) == n:
            thr = statistics.fmean(buf) + lam * max(statistics.stdev(buf), floor)
            if not math.isfinite(r) or r > thr:
                cool = k
                flags.append(True)
                continue
        if math.isfinite(r):
            buf = (buf + [r])[-n:]
        flags.append(False)
    return flags


@given(st.lists(st.floats(1.0, 3.0), min_size=0, max_size=120), st.integers(2, 12),
       st.floats(0.5, 4.0), st.integers(0, 5))
@settings(max_examples=200, deadline=None)
def test_matches_reference(seq, n, lam, k):
    assert list(detect(seq, n, lam, k)) == reference(seq, n, lam, k)


@given(st.integers(0, 2**31 - 1), st.integers(0, 6), st.integers(1, 5))
@settings(max_examples=100, deadline=None)
def test_isolated_spikes_give_one_plus_k_flags(seed, k, n_spikes):
    rng = np.random.default_rng(seed)
    n = 30
    seq = list(1.05 + rng.uniform(-0.01, 0.01, n))
    spikes = []
    for _ in range(n_spikes):
        seq += list(1.05 + rng.uniform(-0.01, 0.01, k + 5))
        spikes.append(len(seq))
        seq.append(3.0)
    seq += list(1.05 + rng.uniform(-0.01, 0.01, k + 5))
    # baseline stays within mean +- 0.02 < lam * floor, so only spikes can flag
    flags = detect(seq, n=n, lam=3.0, k=k, sigma_floor=0.01)
    assert flags.sum() == n_spikes * (1 + k)
    for s in spikes:
        assert flags[s:s + 1 + k].all()


def test_not_armed_before_window_full():
    seq = [1.0] * 29 + [50.0]
    assert not detect(seq, n=30).any()
    assert detect(seq + [50.0], n=30)[-1]


def test_flagged_values_do_not_enter_baseline():
    s = BlinkDetectorState(n=3, lam=1.0, k=0)
    for r in (1.0, 1.1, 1.2):
        observe(s, r)
    s, flag = observe(s, 9.0)
    assert flag and list(s.buffer) == [1.0, 1.1, 1.2]


def test_non_finite_value_flags_once_warm():
    s = BlinkDetectorState(n=3, lam=3.0, k=1)
    s, flag = observe(s, math.nan)
    assert not flag and len(s.buffer) == 0
    for r in (1.0, 1.1, 1.2):
        observe(s, r)
    assert observe(s, math.inf)[1] and observe(s, 1.1)[1]
    assert not observe(s, 1.1)[1]


def test_sigma_floor_suppresses_small_fluctuations():
    seq = [1.0] * 30 + [1.01]
    assert detect(seq, sigma_floor=0.0)[-1]
    assert not detect(seq, sigma_floor=0.05)[-1]


def test_threshold_uses_sample_std():
    s = BlinkDetectorState(n=4, lam=2.0)
    for r in (1.0, 2.0, 3.0, 4.0):
        observe(s, r)
    assert s.threshold() == pytest.approx(2.5 + 2.0 * np.std([1, 2, 3, 4], ddof=1))


def test_validation():
    for kw in ({"n": 1}, {"lam": 0.0}, {"k": -1}, {"sigma_floor": -1.0}):
        with pytest.raises(ValueError):
            BlinkDetectorState(**kw)


def test_constant_stream_never_flags():
    assert not detect([1.2] * 200, lam=0.1).any()


def test_fixed_seed_spike_flags_k_frames():
    rng = np.random.default_rng(0)
    base = list(1.3 + 0.01 * rng.standard_normal(20))
    mu, sd = statistics.fmean(base), statistics.stdev(base)
    assert 3.0 > mu + 3 * sd
    flags = detect(base + [3.0, 1.3, 1.3, 1.3, 1.3], n=20, lam=3.0, k=3)
    assert flags.tolist() == [False] * 20 + [True] * 4 + [False]

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evgaze.metrics import (
    SMOOTHNESS_CAP,
    GazeSample,
    InsufficientSamplesError,
    PupilMask,
    accuracy,
    center_error,
    frame_only_ablation,
    histogram,
    inverse_step_norm,
    iou,
    precision,
    smoothness,
    trim_mask,
)
from evgaze.model import ellipse_from_geometry


# --- pure-Python oracles ---------------------------------------------------------

def bf_trim(values, frac=0.025):
    n = len(values)
    cut = int(math.floor(frac * n))
    order = sorted(range(n), key=lambda i: (values[i], i))
    drop = set(order[:cut]) | set(order[n - cut:]) if cut else set()
    return [i for i in range(n) if i not in drop]


def bf_accuracy(est, tru):
    err = [math.hypot(e[0] - t[0], e[1] - t[1]) for e, t in zip(est, tru)]
    keep = bf_trim(err)
    return math.fsum(err[i] for i in keep) / len(keep)


def bf_precision(est):
    n = len(est)
    mx, my = math.fsum(e[0] for e in est) / n, math.fsum(e[1] for e in est) / n
    dev = [math.hypot(e[0] - mx, e[1] - my) for e in est]
    kept = [est[i] for i in bf_trim(dev)]
    m = len(kept)
    mx, my = math.fsum(e[0] for e in kept) / m, math.fsum(e[1] for e in kept) / m
    return math.sqrt(math.fsum((e[0] - mx) ** 2 + (e[1] - my) ** 2 for e in kept) / (m - 1))


def bf_smoothness(track):
    inv = []
    for p, q in zip(track, track[1:]):
        d = math.hypot(q[0] - p[0], q[1] - p[1])
        inv.append(min(1.0 / d, SMOOTHNESS_CAP) if d > 0 else SMOOTHNESS_CAP)
    return math.fsum(inv) / len(inv)


def bf_iou(a, b):
    inter = union = 0
    for r in range(len(a)):
        for c in range(len(a[0])):
            inter += a[r][c] and b[r][c]
            union += a[r][c] or b[r][c]
    return 1.0 if union == 0 else inter / union


def samples(est, tru, blink=None):
    blink = blink if blink is not None else [False] * len(est)
    return [GazeSample(float(i), tuple(e), tuple(t), b) for i, (e, t, b) in enumerate(zip(est, tru, blink))]


# --- oracle agreement ---------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_accuracy_precision_match_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 1000))
    tru = rng.uniform(-20, 20, (n, 2))
    est = tru + rng.normal(0, 1.0, (n, 2))
    s = samples(est.tolist(), tru.tolist())
    assert accuracy(s) == pytest.approx(bf_accuracy(est.tolist(), tru.tolist()), rel=1e-12, abs=1e-12)
    assert precision(s) == pytest.approx(bf_precision(est.tolist()), rel=1e-12, abs=1e-12)


@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=2, max_size=200))
@settings(max_examples=100, deadline=None)
def test_smoothness_matches_oracle(track):
    assert smoothness(track) == pytest.approx(bf_smoothness(track), rel=1e-9)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_iou_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((12, 15)) < 0.4, rng.random((12, 15)) < 0.4
    assert iou(a, b) == pytest.approx(bf_iou(a.tolist(), b.tolist()), abs=1e-15)


# --- worked examples ---------------------------------------------------------------

def test_accuracy_examples():
    tru = [(1.0, 2.0), (-3.0, 4.0), (0.5, 0.5)]
    assert accuracy(samples(tru, tru)) == 0.0
    assert accuracy(samples([(t[0] + 1.0, t[1]) for t in tru], tru)) == pytest.approx(1.0)


def test_precision_examples():
    assert precision(samples([(2.0, 3.0)] * 5, [(0.0, 0.0)] * 5)) == 0.0
    # (0,0) and (2,0): squared deviations 1 + 1 over n - 1 = 1
    assert precision(samples([(0.0, 0.0), (2.0, 0.0)], [(0.0, 0.0)] * 2)) == pytest.approx(math.sqrt(2.0))


def test_blink_samples_excluded():
    est, tru = [(0.0, 0.0), (10.0, 0.0)], [(0.0, 0.0), (0.0, 0.0)]
    assert accuracy(samples(est, tru, [False, True])) == 0.0
    with pytest.raises(InsufficientSamplesError):
        accuracy(samples(est, tru, [True, True]))
    with pytest.raises(InsufficientSamplesError):
        precision(samples(est, tru, [False, True]))


def test_trimming_drops_both_tails():
    keep = trim_mask(np.arange(80.0))
    assert keep.sum() == 76 and not keep[[0, 1, 78, 79]].any()
    assert trim_mask(np.arange(39.0)).all()
    est = [(0.0, 0.0)] * 79 + [(1000.0, 0.0)]
    tru = [(0.0, 0.0)] * 80
    assert accuracy(samples(est, tru)) == 0.0


def test_smoothness_examples():
    steps = [(2.0 * i, 0.0) for i in range(10)]
    assert smoothness(steps) == pytest.approx(0.5)
    rng = np.random.default_rng(7)
    track = rng.normal(size=(30, 2)).cumsum(axis=0)
    assert smoothness(2 * track) == pytest.approx(smoothness(track) / 2, rel=1e-12)
    assert inverse_step_norm(2 * track) == pytest.approx(inverse_step_norm(track) / 2, rel=1e-12)
    assert smoothness([(1.0, 1.0)] * 3) == SMOOTHNESS_CAP
    with pytest.raises(InsufficientSamplesError):
        smoothness([(0.0, 0.0)])


def test_inverse_step_norm_by_hand():
    # differences (3, 4) and (0, 0): norm 5
    assert inverse_step_norm([(0, 0), (3, 4), (3, 4)]) == pytest.approx(0.2)


def test_iou_examples():
    a = np.zeros((40, 40), bool)
    a[5:15, 5:15] = True
    b = np.zeros_like(a)
    b[20:30, 20:30] = True
    assert iou(a, a) == 1.0
    assert iou(a, b) == 0.0
    assert iou(np.zeros((3, 3), bool), np.zeros((3, 3), bool)) == 1.0
    with pytest.raises(ValueError):
        iou(np.zeros((3, 3), bool), np.zeros((3, 4), bool))


def test_iou_two_unit_spaced_disks():
    ys, xs = np.mgrid[0:40, 0:40]
    a = (xs - 20) ** 2 + (ys - 20) ** 2 <= 100
    b = (xs - 21) ** 2 + (ys - 20) ** 2 <= 100
    inter = union = 0
    for y in range(40):
        for x in range(40):
            ia = (x - 20) ** 2 + (y - 20) ** 2 <= 100
            ib = (x - 21) ** 2 + (y - 20) ** 2 <= 100
            inter += ia and ib
            union += ia or ib
    assert iou(PupilMask.from_array(a), PupilMask.from_array(b)) == pytest.approx(inter / union, abs=1e-15)


def test_pupil_mask_shape_check():
    with pytest.raises(ValueError):
        PupilMask(4, 3, np.zeros((4, 3), bool))


def test_center_error_examples():
    e = ellipse_from_geometry(10.0, 10.0, 5.0, 3.0)
    assert center_error(e, e) == 0.0
    assert center_error(ellipse_from_geometry(1e-3, 1e-3, 1.0, 1.0),
                        ellipse_from_geometry(3.001, 4.001, 1.0, 1.0)) == pytest.approx(5.0)


def test_ablation_differences():
    truth = np.array([[0.0, 0.0], [10.0, 0.0]])
    prev = np.array([[0.0, 0.0], [0.0, 0.0]])
    pre = np.array([[0.0, 0.0], [9.0, 0.0]])
    np.testing.assert_allclose(frame_only_ablation(pre, prev, truth), [0.0, 9.0])


def test_histogram_ignores_non_finite():
    counts, edges = histogram([0.1, 0.2, np.nan, np.inf, 0.9], bins=2, range_=(0, 1))
    assert counts.tolist() == [2, 1] and len(edges) == 3


def test_sample_must_be_finite():
    with pytest.raises(ValueError):
        GazeSample(0.0, (math.nan, 0.0), (0.0, 0.0))

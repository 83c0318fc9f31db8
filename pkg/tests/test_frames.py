import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from evgaze.fitter import fit_ellipse
from evgaze.frames import (
    FramePipelineConfig,
    disk,
    eyelid_candidates,
    glint_candidates,
    harris_corners,
    mask_boundary,
    open_mask,
    pupil_candidates,
)
from evgaze.model import Frame, ellipse_center, ellipse_radii


def brute_boundary(mask):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < h and 0 <= cc < w) or not mask[rr, cc]:
                    out[r, c] = True
    return out


def brute_opening(mask, se):
    r = se.shape[0] // 2
    h, w = mask.shape
    offs = [(i - r, j - r) for i in range(se.shape[0]) for j in range(se.shape[1]) if se[i, j]]

    def get(m, y, x, pad):
        return m[y, x] if 0 <= y < h and 0 <= x < w else pad

    ero = np.array([[all(get(mask, y + dy, x + dx, False) for dy, dx in offs) for x in range(w)]
                    for y in range(h)])
    return np.array([[any(get(ero, y - dy, x - dx, False) for dy, dx in offs) for x in range(w)]
                     for y in range(h)])


def disk_image(cx, cy, r, shape=(120, 160), inside=20, outside=150):
    ys, xs = np.mgrid[0:shape[0], 0:shape[1]]
    img = np.full(shape, outside, np.uint8)
    img[(xs - cx) ** 2 + (ys - cy) ** 2 <= r * r] = inside
    return img


def test_disk_structuring_element():
    d = disk(2)
    assert d.shape == (5, 5) and d.sum() == 13
    assert d[2, 0] and not d[0, 0]


@given(arrays(bool, (9, 11)))
@settings(max_examples=100, deadline=None)
def test_boundary_matches_brute_force(mask):
    np.testing.assert_array_equal(mask_boundary(mask), brute_boundary(mask))


@given(arrays(bool, (10, 10)), st.integers(1, 2))
@settings(max_examples=40, deadline=None)
def test_opening_matches_brute_force_and_is_idempotent(mask, sigma):
    opened = open_mask(mask, sigma)
    np.testing.assert_array_equal(opened, brute_opening(mask, disk(sigma)))
    np.testing.assert_array_equal(open_mask(opened, sigma), opened)
    assert not np.any(opened & ~mask)


def test_pupil_candidates_on_dark_disk():
    img = disk_image(80, 60, 20)
    pts = pupil_candidates(Frame(0, img))
    assert len(pts) > 50
    d = np.hypot(pts[:, 0] - 80, pts[:, 1] - 60)
    assert d.max() <= 20.0 + 1e-9 and d.min() >= 18.0
    e = fit_ellipse(pts, scale=160)
    assert ellipse_center(e) == pytest.approx((80, 60), abs=0.1)
    assert ellipse_radii(e)[0] == pytest.approx(19.5, abs=0.6)


def test_opening_removes_specks_and_thin_lines():
    img = disk_image(80, 60, 20)
    img[5, 5] = 0
    img[100, 10:150] = 0  # one-pixel dark line (lashes)
    pts = pupil_candidates(img)
    assert np.all(np.hypot(pts[:, 0] - 80, pts[:, 1] - 60) < 21)


def test_no_dark_pixels_no_candidates():
    assert pupil_candidates(np.full((20, 20), 200, np.uint8)).shape == (0, 2)


def test_harris_finds_square_corners():
    img = np.zeros((60, 60))
    img[20:40, 20:40] = 100.0
    c = harris_corners(img)
    assert 4 <= len(c) <= 8
    for corner in ((20, 20), (39, 20), (20, 39), (39, 39)):
        assert np.min(np.hypot(c[:, 0] - corner[0], c[:, 1] - corner[1])) <= 2.0
    assert harris_corners(np.zeros((10, 10))).shape == (0, 2)


def test_eyelid_candidates_are_upper_half_and_near_pupil():
    img = np.full((120, 160), 100, np.uint8)
    img[30:50, 70:90] = 40       # corner structure in the upper half
    img[90:110, 70:90] = 40      # same structure in the lower half
    cfg = FramePipelineConfig(rho_prime=50.0)
    pts = eyelid_candidates(img, (80, 60), cfg)
    assert len(pts) > 0
    assert np.all(pts[:, 1] < 60)
    assert np.all(np.hypot(pts[:, 0] - 80, pts[:, 1] - 60) < 50)
    assert eyelid_candidates(img, None).shape == (0, 2)


def test_glint_candidates_threshold_and_radius():
    img = np.full((120, 160), 100, np.uint8)
    img[58:61, 98:101] = 250
    img[5:8, 5:8] = 250
    pts = glint_candidates(img, (80, 60), FramePipelineConfig(rho_double_prime=40.0))
    assert len(pts) == 9
    assert np.all(pts[:, 0] >= 98)
    assert glint_candidates(img, None).shape == (0, 2)


def test_config_validation():
    with pytest.raises(ValueError):
        FramePipelineConfig(theta=300)
    with pytest.raises(ValueError):
        FramePipelineConfig(t1=130, t2=120)
    with pytest.raises(ValueError):
        FramePipelineConfig(sigma=0)


def test_candidate_examples():
    white = np.full((120, 160), 255, np.uint8)
    assert pupil_candidates(white).shape == (0, 2)
    assert harris_corners(np.full((30, 30), 90.0)).shape == (0, 2)
    assert eyelid_candidates(white, (80, 60)).shape == (0, 2)
    assert glint_candidates(np.zeros((120, 160), np.uint8), (80, 60)).shape == (0, 2)


def test_dark_disk_circle_fit_and_speckle_invariance():
    from evgaze.fitter import CIRCLE, fit_points

    img = disk_image(100, 80, 20, shape=(160, 200))
    clean = pupil_candidates(img)
    c = fit_points(clean, CIRCLE, 200.0)
    assert (c.cx, c.cy) == pytest.approx((100, 80), abs=0.5)
    assert c.r == pytest.approx(20, abs=1.0)
    rng = np.random.default_rng(3)
    noisy = img.copy()
    ys, xs = rng.integers(0, 160, 60), rng.integers(0, 200, 60)
    far = np.hypot(xs - 100, ys - 80) > 26
    noisy[ys[far], xs[far]] = 0
    np.testing.assert_array_equal(pupil_candidates(noisy), clean)


def test_eyelid_texture_in_lower_half_only_gives_nothing():
    img = np.full((120, 160), 100, np.uint8)
    for x in range(40, 120, 6):
        img[80:95, x:x + 2] = 45
    assert eyelid_candidates(img, (80, 70), FramePipelineConfig(rho_prime=80)).shape == (0, 2)
    top = np.flipud(img)
    assert len(eyelid_candidates(top, (80, 50), FramePipelineConfig(rho_prime=80))) >= 3


def test_glint_spot_far_away_is_dropped():
    img = np.full((200, 200), 100, np.uint8)
    img[99:102, 179:182] = 250
    assert glint_candidates(img, (100, 100), FramePipelineConfig(rho_double_prime=40)).shape == (0, 2)

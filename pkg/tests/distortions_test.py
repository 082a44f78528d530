import json

import numpy as np
import pytest

from panoscan import distortions
from panoscan.distortions import adjust_color
from panoscan.distortions import augment
from panoscan.distortions import DEFAULT_TABLE
from panoscan.distortions import defocus_blur
from panoscan.distortions import DistortionSpec
from panoscan.distortions import draw_jitter
from panoscan.distortions import jpeg_proxy
from panoscan.distortions import JitterFactors
from panoscan.distortions import motion_blur
from panoscan.distortions import poisson_noise
from panoscan.distortions import sample_spec
from panoscan.distortions import Severity
from panoscan.errors import ArgumentError


def _img(h=16, w=24, seed=0):
    return np.random.default_rng(seed).uniform(size=(h, w, 3))


def _impulse(size=9):
    img = np.zeros((size, size, 3))
    img[size // 2, size // 2] = 1.0
    return img


def test_jpeg_q100_is_near_lossless():
    img = _img()
    assert np.max(np.abs(jpeg_proxy(img, 100) - img)) <= 2 / 255


@pytest.mark.parametrize('q', (1, 20, 50, 75, 100))
def test_jpeg_constant_image_survives(q):
    img = np.full((13, 21, 3), 0.42)
    np.testing.assert_allclose(jpeg_proxy(img, q), img, atol=1e-9)


@pytest.mark.parametrize('q', (0, 101))
def test_jpeg_rejects_quality(q):
    with pytest.raises(ArgumentError):
        jpeg_proxy(_img(), q)


def test_jpeg_lower_quality_loses_more():
    img = _img()
    err_hi = np.mean((jpeg_proxy(img, 90) - img) ** 2)
    err_lo = np.mean((jpeg_proxy(img, 20) - img) ** 2)
    assert err_lo > err_hi


@pytest.mark.parametrize(
    ('q', 'first'),
    ((50, 16.0), (100, 1.0), (10, 80.0)),
)
def test_jpeg_quant_table_scaling(q, first):
    assert distortions.jpeg_quant_table(q)[0, 0] == first


def test_motion_blur_k1_is_identity():
    img = _img()
    np.testing.assert_array_equal(motion_blur(img, 1, 0.7), img)


def test_motion_blur_constant_image():
    img = np.full((12, 12, 3), 0.3)
    np.testing.assert_allclose(motion_blur(img, 7, 1.1), img, atol=1e-12)


def test_motion_blur_horizontal_impulse_response():
    out = motion_blur(_impulse(), 3, 0.0)
    np.testing.assert_allclose(out[4, 3:6, 0], [1 / 3, 1 / 3, 1 / 3], atol=1e-12)
    assert out[3, 4, 0] == 0.0
    assert out[5, 4, 0] == 0.0


def test_motion_blur_even_kernel():
    with pytest.raises(ArgumentError):
        motion_blur(_img(), 4, 0.0)


@pytest.mark.parametrize(('k', 'angle'), ((3, 0.0), (7, 0.5), (19, 2.9)))
def test_motion_kernel_unit_mass(k, angle):
    assert abs(distortions.motion_kernel(k, angle).sum() - 1.0) < 1e-12


def test_defocus_zero_radius_is_identity():
    img = _img()
    np.testing.assert_array_equal(defocus_blur(img, 0.0), img)


def test_defocus_constant_image():
    img = np.full((12, 12, 3), 0.8)
    np.testing.assert_allclose(defocus_blur(img, 2.5), img, atol=1e-12)


def test_defocus_impulse_matches_kernel():
    kernel = distortions.disk_kernel(1.0)
    assert abs(kernel.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(kernel, kernel.T, atol=1e-15)
    np.testing.assert_allclose(kernel, kernel[::-1], atol=1e-15)
    out = defocus_blur(_impulse(), 1.0)
    np.testing.assert_allclose(out[3:6, 3:6, 0], kernel, atol=1e-12)


def test_defocus_negative_radius():
    with pytest.raises(ArgumentError):
        defocus_blur(_img(), -1.0)


def test_color_identity_factors():
    img = _img()
    np.testing.assert_allclose(adjust_color(img, JitterFactors()), img, atol=1e-12)


def test_color_brightness_on_gray():
    img = np.full((4, 4, 3), 0.5)
    out = adjust_color(img, JitterFactors(brightness=1.1))
    np.testing.assert_allclose(out, 0.55, atol=1e-12)


def test_hue_rotation_keeps_gray():
    img = np.repeat(np.linspace(0, 1, 16).reshape(4, 4, 1), 3, axis=2)
    out = adjust_color(img, JitterFactors(hue=20.0))
    np.testing.assert_array_equal(out, img)


def test_hue_rotation_preserves_luma():
    img = np.random.default_rng(1).uniform(0.3, 0.7, size=(4, 4, 3))
    out = adjust_color(img, JitterFactors(hue=15.0))
    np.testing.assert_allclose(
        out @ distortions._RGB_TO_YIQ[0], img @ distortions._RGB_TO_YIQ[0], atol=1e-12,
    )


def test_poisson_zero_stays_zero():
    img = np.zeros((8, 8, 3))
    np.testing.assert_array_equal(poisson_noise(img, 10.0, 3), img)


def test_poisson_mean_preserved():
    img = np.full((100, 334, 3), 0.3)
    lam = 12.0
    out = poisson_noise(img, lam, 0)
    sigma = np.sqrt(0.3 / lam / img.size)
    assert abs(out.mean() - 0.3) < 3 * sigma


def test_poisson_larger_lambda_lower_variance():
    img = np.full((64, 64, 3), 0.5)
    assert poisson_noise(img, 30.0, 1).var() < poisson_noise(img, 6.0, 1).var()


@pytest.mark.parametrize('lam', (0.0, -2.0))
def test_poisson_rejects_lambda(lam):
    with pytest.raises(ArgumentError):
        poisson_noise(_img(), lam, 0)


def test_augment_is_deterministic():
    img = _img()
    a, spec_a = augment(img, Severity.MILD, 11)
    b, spec_b = augment(img, Severity.MILD, 11)
    assert spec_a == spec_b
    assert a.tobytes() == b.tobytes()


def test_weak_never_poisson():
    kinds = {sample_spec(Severity.WEAK, seed).kind for seed in range(10000)}
    assert 'poisson' not in kinds
    assert kinds == set(distortions.WEAK_KINDS)


@pytest.mark.parametrize('severity', tuple(Severity))
def test_sampled_parameters_inside_ranges(severity):
    for seed in range(10000):
        spec = sample_spec(severity, seed)
        lo, hi = DEFAULT_TABLE.range(spec.kind, severity)
        if spec.kind == 'color_jitter':
            b, c, s, hue = spec.factors
            assert all(lo <= x <= hi for x in (b, c, s))
            assert abs(hue) <= DEFAULT_TABLE.jitter_hue[severity]
            assert spec.param == spec.factors.deviation
        else:
            assert spec.factors is None
            assert lo <= spec.param <= hi
        if spec.kind == 'motion_blur':
            assert int(spec.param) % 2 == 1


def test_jitter_factors_drawn_independently():
    rng = np.random.default_rng(0)
    draws = np.array([draw_jitter(rng, (0.6, 1.4), 20.0) for _ in range(4000)])
    assert (draws[:, :3] >= 0.6).all() and (draws[:, :3] <= 1.4).all()
    assert (np.abs(draws[:, 3]) <= 20.0).all()
    np.testing.assert_allclose(draws[:, :3].mean(axis=0), 1.0, atol=0.02)
    corr = np.corrcoef(draws.T)
    off_diagonal = corr[~np.eye(4, dtype=bool)]
    assert np.abs(off_diagonal).max() < 0.1


def test_jitter_spec_is_seeded():
    a = distortions.jitter_spec(Severity.STRONG, 3)
    assert a == distortions.jitter_spec(Severity.STRONG, 3)
    assert a != distortions.jitter_spec(Severity.STRONG, 4)
    img = _img()
    np.testing.assert_array_equal(
        distortions.color_jitter(img, Severity.STRONG, 3), adjust_color(img, a.factors),
    )


@pytest.mark.parametrize('severity', tuple(Severity))
def test_augment_stays_in_range(severity):
    img = _img()
    for seed in range(25):
        out, _ = augment(img, severity, seed)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert out.shape == img.shape


def test_spec_json():
    spec = DistortionSpec('jpeg', 60.0, 5)
    assert spec.to_json() == {'kind': 'jpeg', 'param': 60, 'seed': 5}
    assert DistortionSpec.from_json(spec.to_json()) == spec
    with pytest.raises(ArgumentError):
        DistortionSpec.from_json({'kind': 'sharpen', 'param': 1, 'seed': 0})


@pytest.mark.parametrize(
    ('spec', 'expected'),
    (
        (DistortionSpec('jpeg', 95.0, 0), 0.0),
        (DistortionSpec('jpeg', 20.0, 0), 1.0),
        (DistortionSpec('motion_blur', 19.0, 0), 1.0),
        (DistortionSpec('defocus_blur', 3.0, 0), 0.5),
        (DistortionSpec('poisson', 6.0, 0), 1.0),
    ),
)
def test_normalized_severity(spec, expected):
    assert distortions.normalized_severity(spec) == pytest.approx(expected)


def test_jitter_normalized_severity():
    strong_hue = DistortionSpec('color_jitter', 0.0, 0, JitterFactors(hue=-20.0))
    assert distortions.normalized_severity(strong_hue) == pytest.approx(1.0)
    half = DistortionSpec('color_jitter', 0.2, 0, JitterFactors(0.8, 1.0, 1.0, 2.0))
    assert distortions.normalized_severity(half) == pytest.approx(0.5)


def test_jitter_spec_json_keeps_factors():
    spec = distortions.jitter_spec(Severity.MILD, 7)
    obj = spec.to_json()
    assert obj['factors'] == list(spec.factors)
    assert DistortionSpec.from_json(json.loads(json.dumps(obj))) == spec


def test_jitter_spec_json_without_factors():
    with pytest.raises(ArgumentError):
        DistortionSpec.from_json({'kind': 'color_jitter', 'param': 0.1, 'seed': 0})


def test_apply_jitter_without_factors():
    with pytest.raises(ArgumentError):
        distortions.apply_spec(_img(), DistortionSpec('color_jitter', 0.1, 0))

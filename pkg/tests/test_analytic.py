import numpy as np
import pytest

from deerct.analytic import (fbp, filter_rows, filter_sinogram, make_filter, padded_length, prepare_inputs)
from deerct.geometry import PhantomSpec, Sinogram, equispaced_angles, make_phantom, radon
from deerct.interp import fov_mask


def _sl_spatial(k):
    return -2.0 / (np.pi ** 2 * (4.0 * np.asarray(k, float) ** 2 - 1.0))


def _loop_fbp(filtered, angles, n):
    """Per-pixel, per-view linear interpolation of the filtered profiles."""
    nv, nd = filtered.shape
    c, cd = (n - 1) / 2, (nd - 1) / 2
    img = np.zeros((n, n))
    for row in range(n):
        for col in range(n):
            x, y = col - c, row - c
            if x * x + y * y > (n / 2) ** 2:
                continue
            acc = 0.0
            for v, th in enumerate(angles):
                u = x * np.cos(th) + y * np.sin(th) + cd
                i0 = int(np.floor(u))
                f = u - i0
                for i, wgt in ((i0, 1 - f), (i0 + 1, f)):
                    if 0 <= i < nd:
                        acc += wgt * filtered[v, i]
            img[row, col] = acc * np.pi / nv
    return img


@pytest.fixture(scope="module")
def shepp128():
    return make_phantom(PhantomSpec("shepp-logan"), 128)


def _rmse_fov(a, b):
    m = fov_mask(a.shape[0]) > 0
    return float(np.sqrt(np.mean((a[m] - b[m]) ** 2)))


def test_padded_length_is_power_of_two_at_least_twice():
    assert padded_length(64) == 128
    assert padded_length(65) == 256


@pytest.mark.parametrize("kind", ["shepp-logan", "ramp"])
def test_filter_response_real_even_and_small_at_dc(kind):
    k = make_filter(kind, 64)
    assert k.response.dtype.kind == "f"
    np.testing.assert_allclose(k.response[1:], k.response[1:][::-1], atol=1e-12)
    assert 0 < k.response[0] < 1e-2 * k.response.max()


def test_constant_row_is_annihilated_circularly():
    # a row filling the whole padded length sees only the DC bin
    k = make_filter("shepp-logan", 128, length=256)
    out = filter_rows(np.ones((1, 256)), k)
    assert np.abs(out).max() < 1e-3


def test_impulse_response_is_the_spatial_kernel():
    nd = 65
    row = np.zeros((1, nd))
    row[0, 32] = 1.0
    out = filter_rows(row, make_filter("shepp-logan", nd))[0]
    np.testing.assert_allclose(out[32:], out[32::-1], atol=1e-6)
    np.testing.assert_allclose(out, _sl_spatial(np.arange(nd) - 32), atol=1e-12)


def test_zero_sinogram_filters_and_reconstructs_to_zero():
    s = Sinogram(equispaced_angles(8), np.zeros((8, 32)))
    assert not filter_sinogram(s, make_filter("shepp-logan", 32)).data.any()
    assert not fbp(s).data.any()


def test_short_kernel_rejected():
    s = Sinogram(equispaced_angles(2), np.zeros((2, 32)))
    with pytest.raises(ValueError, match="shorter"):
        filter_sinogram(s, make_filter("none", 16, length=16))


def test_filtering_is_per_row_independent():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(9, 40))
    perm = rng.permutation(9)
    k = make_filter("shepp-logan", 40)
    np.testing.assert_array_equal(filter_rows(data[perm], k), filter_rows(data, k)[perm])


def test_fbp_matches_independent_loop_oracle():
    img = make_phantom(PhantomSpec("random-ellipses", 5), 32)
    ang = equispaced_angles(24)
    sino = radon(img, ang, 32)
    filt = filter_rows(sino.data, make_filter("shepp-logan", 32))
    np.testing.assert_allclose(fbp(sino).data, _loop_fbp(filt, ang, 32), atol=1e-5)


def test_full_view_fbp_round_trip(shepp128):
    rec = fbp(radon(shepp128, equispaced_angles(180), 128))
    assert _rmse_fov(rec.data, shepp128.data) < 0.05


def test_few_view_fbp_is_worse(shepp128):
    full = _rmse_fov(fbp(radon(shepp128, equispaced_angles(180), 128)).data, shepp128.data)
    few = _rmse_fov(fbp(radon(shepp128, equispaced_angles(15), 128)).data, shepp128.data)
    assert few > full


def test_fbp_is_linear_and_masked():
    rng = np.random.default_rng(3)
    ang = equispaced_angles(10)
    a, b = rng.normal(size=(2, 10, 32))
    lhs = fbp(Sinogram(ang, 2 * a - 3 * b)).data
    rhs = 2 * fbp(Sinogram(ang, a)).data - 3 * fbp(Sinogram(ang, b)).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)
    assert not lhs[fov_mask(32) == 0].any()


def test_prepare_inputs_doubles_views_and_is_deterministic():
    img = make_phantom(PhantomSpec("random-ellipses", 1), 32)
    few = radon(img, equispaced_angles(15), 32)
    p1, p2 = prepare_inputs(few), prepare_inputs(few)
    assert p1.dense_sino.n_views == 30 and p1.filtered_dense_sino.data.shape == (30, 32)
    assert np.array_equal(p1.fbp_image.data, p2.fbp_image.data)
    assert np.array_equal(p1.filtered_dense_sino.data, p2.filtered_dense_sino.data)
    assert prepare_inputs(few, nv_dense=45).dense_sino.n_views == 45


def test_prepare_inputs_of_zero_is_zero():
    p = prepare_inputs(Sinogram(equispaced_angles(15), np.zeros((15, 32))))
    assert not (p.fbp_image.data.any() or p.dense_sino.data.any() or p.filtered_dense_sino.data.any())

import numpy as np
import pytest

from fdgdiff import image_core as ic
from fdgdiff import jpeg_codec as jc


def _dct_bruteforce(block):
    # direct quadruple loop with alpha(0)=sqrt(1/N), alpha(s)=sqrt(2/N)
    n = block.shape[0]
    alpha = lambda s: np.sqrt((1 if s == 0 else 2) / n)
    out = np.zeros((n, n))
    for u in range(n):
        for v in range(n):
            acc = 0.0
            for m in range(n):
                for k in range(n):
                    acc += block[m, k] * np.cos((2 * m + 1) * u * np.pi / (2 * n)) * np.cos((2 * k + 1) * v * np.pi / (2 * n))
            out[u, v] = alpha(u) * alpha(v) * acc
    return out


def test_constant_block_dc_only():
    f = jc.dct2d(np.full((8, 8), 3.0))
    assert f[0, 0] == pytest.approx(24.0)
    f[0, 0] = 0
    assert np.abs(f).max() < 1e-12
    np.testing.assert_allclose(jc.idct2d(np.pad([[24.0]], ((0, 7), (0, 7)))), 3.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_dct_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    for block in (np.eye(8)[:1].repeat(8, 0) * 0 + np.pad([[1.0]], ((0, 7), (0, 7))), rng.random((8, 8)) * 255):
        np.testing.assert_allclose(jc.dct2d(block), _dct_bruteforce(block), atol=1e-10)


def test_dct_round_trip_and_parseval(rng):
    x = rng.random((200, 8, 8)) * 255 - 128
    f = jc.dct2d(x)
    assert np.abs(jc.idct2d(f) - x).max() < 1e-6
    rel = np.abs((f ** 2).sum(axis=(1, 2)) - (x ** 2).sum(axis=(1, 2))) / (x ** 2).sum(axis=(1, 2))
    assert rel.max() < 1e-5


def _zigzag_oracle():
    # walk the 8x8 grid like a JPEG encoder: start right, bounce between edges
    order, u, v, up = [], 0, 0, True
    while len(order) < 64:
        order.append((u, v))
        if up:
            if v == 7:
                u, up = u + 1, False
            elif u == 0:
                v, up = v + 1, False
            else:
                u, v = u - 1, v + 1
        else:
            if u == 7:
                v, up = v + 1, True
            elif v == 0:
                u, up = u + 1, True
            else:
                u, v = u + 1, v - 1
    return order


def test_zigzag_matches_walk():
    assert [jc.zigzag_to_uv(nu) for nu in range(64)] == _zigzag_oracle()
    assert jc.zigzag_to_uv(0) == (0, 0)
    assert jc.zigzag_to_uv(63) == (7, 7)
    assert jc.zigzag_to_uv(1) == (0, 1)
    assert jc.zigzag_to_uv(2) == (1, 0)
    assert jc.zigzag_to_uv(3) == (2, 0)
    assert jc.zigzag_to_uv(5) == (0, 2)


def test_zigzag_bijective():
    assert all(jc.uv_to_zigzag(*jc.zigzag_to_uv(nu)) == nu for nu in range(64))
    x = np.arange(64).reshape(8, 8)
    np.testing.assert_array_equal(jc.from_zigzag(jc.to_zigzag(x)), x)
    with pytest.raises(IndexError):
        jc.zigzag_to_uv(64)
    with pytest.raises(IndexError):
        jc.uv_to_zigzag(8, 0)


def test_zigzag_matches_libjpeg_order():
    # natural-order positions of the zigzag sequence as listed in T.81 Figure A.6
    expected = [0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48]
    assert jc.ZIGZAG_NATURAL[:len(expected)].tolist() == expected


def test_quant_tables():
    q50 = jc.quant_table_for_qf(50)
    np.testing.assert_array_equal(jc.from_zigzag(q50), jc.LUMA_BASE)
    assert q50[0] == 16
    assert (jc.quant_table_for_qf(100) == 1).all()
    assert (jc.quant_table_for_qf(100, "chroma") == 1).all()
    assert jc.quant_table_for_qf(80)[0] == (16 * 40 + 50) // 100 == 6
    assert jc.quant_table_for_qf(1).max() == 255
    for bad in (0, 101, 50.5):
        with pytest.raises(ValueError):
            jc.quant_table_for_qf(bad)


def test_quant_tables_match_libjpeg():
    import io

    from PIL import Image

    img = Image.fromarray(np.zeros((8, 8, 3), np.uint8))
    for qf in (10, 50, 80, 95):
        buf = io.BytesIO()
        img.save(buf, "JPEG", quality=qf)
        q = Image.open(buf).quantization
        # Pillow reports tables in natural (row-major) order
        assert list(q[0]) == jc.from_zigzag(jc.quant_table_for_qf(qf, "luma")).ravel().tolist()
        assert list(q[1]) == jc.from_zigzag(jc.quant_table_for_qf(qf, "chroma")).ravel().tolist()


def test_quantize_literal_floor():
    q = np.full(64, 4)
    f = np.zeros((8, 8))
    for val, want in [(10, 3), (1.9, 0), (-10, -2), (-1.9, 0), (-2.0, 0), (2.0, 1)]:
        f[0, 0] = val
        assert jc.quantize(f, q)[0, 0] == want
    f[0, 0] = -10
    assert jc.quantize(f, q, rounding="symmetric")[0, 0] == -3


def test_annihilation_interval(rng):
    q = jc.quant_table_for_qf(80)
    f = rng.uniform(-40, 40, (500, 8, 8))
    ratio = f / jc.quant_matrix(q)
    zero = jc.quantize(f, q) == 0
    np.testing.assert_array_equal(zero, (ratio >= -0.5) & (ratio < 0.5))


def test_dequantize_error_bound(rng):
    q = jc.quant_table_for_qf(50)
    f = rng.uniform(-300, 300, (100, 8, 8))
    err = np.abs(jc.dequantize(jc.quantize(f, q), q) - f)
    assert (err <= jc.quant_matrix(q) / 2 + 1e-9).all()
    assert not jc.dequantize(np.zeros((8, 8), int), q).any()


def test_roundtrip_error_histogram_matches_simulation(rng):
    # error of quantize->dequantize equals per-coefficient brute-force rounding
    q = jc.quant_table_for_qf(80)
    f = rng.uniform(-100, 100, (50, 8, 8))
    qm = jc.quant_matrix(q)
    brute = np.empty_like(f)
    for idx in np.ndindex(f.shape):
        brute[idx] = np.floor(f[idx] / qm[idx[1:]] + 0.5) * qm[idx[1:]]
    np.testing.assert_array_equal(jc.dequantize(jc.quantize(f, q), q), brute)


def test_simulate_smooth_gradient_qf100():
    y, x = np.mgrid[0:48, 0:40]
    img = np.stack([x * 5, y * 4, (x + y) * 2], -1).astype(np.uint8)
    sim = jc.simulate_jpeg(img, 100)
    assert ic.psnr(ic.to_float(img), ic.to_float(sim.compressed)) > 40


def test_simulate_constant_image():
    img = np.full((16, 24, 3), [120, 60, 200], np.uint8)
    ycc = ic.rgb_to_ycbcr(img[:1, :1] / 255.0)[0, 0] * 255.0 - 128.0
    for qf in (5, 50, 80):
        sim = jc.simulate_jpeg(img, qf)
        # output is still one flat colour
        assert (sim.compressed == sim.compressed[0, 0]).all()
        for c, (grid, tid) in enumerate(zip(sim.coeffs, sim.table_ids)):
            zz = grid.reshape(-1, 64)
            assert not jc.to_zigzag(grid).reshape(-1, 64)[:, 1:].any()
            q0 = sim.tables[tid][0]
            assert np.abs(zz[:, 0] * q0 - 8 * ycc[c]).max() <= q0 / 2


def test_simulate_gray_constant_exact():
    img = np.full((16, 16), 77, np.uint8)
    np.testing.assert_array_equal(jc.simulate_jpeg(img, 80).compressed, img)


def test_simulate_qf_monotone(natural_images):
    for img in natural_images[:4]:
        crop = img[:96, :96]
        p90 = ic.psnr(ic.to_float(crop), ic.to_float(jc.simulate_jpeg(crop, 90).compressed))
        p10 = ic.psnr(ic.to_float(crop), ic.to_float(jc.simulate_jpeg(crop, 10).compressed))
        assert p90 >= p10


def test_simulate_padding_and_grid():
    img = np.arange(13 * 10, dtype=np.uint8).reshape(13, 10)
    sim = jc.simulate_jpeg(img, 80)
    assert sim.compressed.shape == img.shape
    assert sim.coeffs[0].shape == (2, 2, 8, 8)
    with pytest.raises(ValueError):
        jc.simulate_jpeg(np.zeros((0, 4), np.uint8), 80)


def test_loss_map():
    a = np.zeros((4, 4, 3), np.uint8)
    assert not jc.loss_map(a, a).any()
    b = a.copy()
    b[1, 2, 0] = 51
    m = jc.loss_map(a, b)
    assert m[1, 2, 0] == pytest.approx(0.2)
    assert np.count_nonzero(m) == 1
    with pytest.raises(ValueError):
        jc.loss_map(a, a[:3])

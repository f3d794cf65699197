import math
from pathlib import Path

import numpy as np
import pytest

from fdgdiff import decomposition as dc
from fdgdiff import freq_guidance as fg
from fdgdiff.image_core import load_tensor

GOLDEN = Path(__file__).parent / "data" / "hfcm_golden.fdgt"


def _golden_case():
    rng = np.random.default_rng(2024)
    x = rng.standard_normal((8, 16, 16))
    img = 0.2 + 0.6 * rng.random((16, 16, 3))
    spectrum = dc.to_log_dct(img)
    return x, spectrum, fg.AttentionWeights.random(8, 2, seed=7)


def test_haar_constant_and_unit_block():
    sb = fg.haar_dwt2(np.full((6, 6), 3.0))
    for band in (sb.lh, sb.hl, sb.hh):
        np.testing.assert_array_equal(band, 0.0)
    sb = fg.haar_dwt2(np.ones((2, 2)))
    assert sb.ll[0, 0] == 2.0 and sb.lh[0, 0] == sb.hl[0, 0] == sb.hh[0, 0] == 0.0


@pytest.mark.parametrize("shape", [(10, 12), (9, 7), (3, 11, 13)])
def test_haar_round_trip(rng, shape):
    x = rng.standard_normal(shape)
    np.testing.assert_allclose(fg.haar_idwt2(fg.haar_dwt2(x)), x, atol=1e-6)


def test_haar_parseval(rng):
    x = rng.standard_normal((16, 20))
    sb = fg.haar_dwt2(x)
    energy = sum(float((b ** 2).sum()) for b in sb[:4])
    assert energy == pytest.approx(float((x ** 2).sum()), rel=1e-5)


def test_haar_inverse_brute_force(rng):
    ll, lh, hl, hh = rng.standard_normal((4, 3, 5))
    out = fg.haar_idwt2(fg.WaveletSubbands(ll, lh, hl, hh, (6, 10)))
    for i in range(3):
        for j in range(5):
            a = (ll[i, j] + lh[i, j] + hl[i, j] + hh[i, j]) / 2
            b = (ll[i, j] + lh[i, j] - hl[i, j] - hh[i, j]) / 2
            c = (ll[i, j] - lh[i, j] + hl[i, j] - hh[i, j]) / 2
            d = (ll[i, j] - lh[i, j] - hl[i, j] + hh[i, j]) / 2
            np.testing.assert_allclose(out[2 * i:2 * i + 2, 2 * j:2 * j + 2], [[a, b], [c, d]], atol=1e-12)


def test_haar_ll_only_is_blockwise_constant(rng):
    ll = rng.random((4, 4))
    z = np.zeros((4, 4))
    out = fg.haar_idwt2(fg.WaveletSubbands(ll, z, z, z, (8, 8)))
    np.testing.assert_allclose(out, np.kron(ll / 2, np.ones((2, 2))))


def test_haar_empty_rejected():
    with pytest.raises(ValueError):
        fg.haar_dwt2(np.zeros((0, 4)))


def test_extract_high_freq():
    x = np.full((2, 8, 10), 1.5)
    hf = fg.extract_high_freq(x)
    assert hf.shape == (6, 4, 5)
    np.testing.assert_array_equal(hf, 0.0)


def test_checkerboard_energy_in_hh():
    i, j = np.indices((16, 16))
    x = np.where((i + j) % 2, 1.0, -1.0)[None]
    hf = fg.extract_high_freq(x)
    energy = (hf ** 2).reshape(3, -1).sum(axis=1)
    assert energy[2] / energy.sum() > 0.99


def _brute_attention(x, xh, xd, w):
    h, c, d = w.wq.shape
    t, s = len(x), len(xh)
    out = np.zeros((t, c))
    for head in range(h):
        q = [[sum(x[i, m] * w.wq[head, m, k] for m in range(c)) for k in range(d)] for i in range(t)]
        kk = [[sum(xh[i, m] * w.wk[head, m, k] for m in range(c)) for k in range(d)] for i in range(s)]
        v = [[sum(xd[i, m] * w.wv[head, m, k] for m in range(c)) for k in range(d)] for i in range(s)]
        for i in range(t):
            logits = [sum(q[i][k] * kk[j][k] for k in range(d)) / math.sqrt(d) for j in range(s)]
            top = max(logits)
            ex = [math.exp(l - top) for l in logits]
            a = [e / sum(ex) for e in ex]
            for k in range(d):
                out[i, head * d + k] = sum(a[j] * v[j][k] for j in range(s))
    return out


def test_cross_attention_brute_force(rng):
    x, xh, xd = rng.standard_normal((3, 4, 4))
    w = fg.AttentionWeights.random(4, 2, seed=3)
    np.testing.assert_allclose(fg.cross_attention(x, xh, xd, w), _brute_attention(x, xh, xd, w), atol=1e-6)


def test_identical_keys_give_mean(rng):
    x = rng.standard_normal((5, 4))
    xh = np.tile(rng.standard_normal(4), (6, 1))
    xd = rng.standard_normal((6, 4))
    w = fg.AttentionWeights.random(4, 2, seed=1)
    a = fg.attention_maps(x, xh, w)
    np.testing.assert_allclose(a, 1 / 6, atol=1e-12)
    v = np.einsum("tc,hcd->htd", xd, w.wv).mean(axis=1).reshape(-1)
    np.testing.assert_allclose(fg.cross_attention(x, xh, xd, w), np.tile(v, (5, 1)), atol=1e-12)


def test_single_token(rng):
    x, xh, xd = rng.standard_normal((3, 1, 6))
    w = fg.AttentionWeights.random(6, 3, seed=2)
    v = np.concatenate([xd[0] @ w.wv[k] for k in range(3)])
    np.testing.assert_allclose(fg.cross_attention(x, xh, xd, w)[0], v, atol=1e-12)


def test_rows_stochastic_and_convex_hull(rng):
    for case in range(100):
        t, s = rng.integers(1, 9, 2)
        x, xh, xd = rng.standard_normal((t, 4)), rng.standard_normal((s, 4)), rng.standard_normal((s, 4))
        w = fg.AttentionWeights.random(4, 2, seed=case, scale=2.0)
        a = fg.attention_maps(x, xh, w)
        assert np.all(a >= 0)
        np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-6)
        out = fg.cross_attention(x, xh, xd, w)
        for head in range(2):
            v = xd @ w.wv[head]
            o = out[:, head * 2:(head + 1) * 2]
            assert np.all(o >= v.min(axis=0) - 1e-12) and np.all(o <= v.max(axis=0) + 1e-12)


def test_softmax_shift_invariance(rng):
    logits = rng.standard_normal((5, 7))
    np.testing.assert_allclose(fg.softmax(logits + rng.standard_normal((5, 1)) * 10), fg.softmax(logits), atol=1e-7)


def test_weight_validation():
    with pytest.raises(ValueError, match="divide"):
        fg.AttentionWeights.random(6, 4)
    with pytest.raises(ValueError):
        fg.AttentionWeights(np.zeros((2, 4, 2)), np.zeros((2, 4, 2)), np.zeros((2, 4, 3)))
    with pytest.raises(ValueError, match="finite"):
        fg.AttentionWeights(np.full((1, 2, 2), np.nan), np.zeros((1, 2, 2)), np.zeros((1, 2, 2)))
    w = fg.AttentionWeights.random(4, 2)
    with pytest.raises(ValueError):
        fg.cross_attention(np.zeros((3, 4)), np.zeros((2, 4)), np.zeros((3, 4)), w)


def test_hfcm_residual_identities():
    x, spectrum, w = _golden_case()
    zero_v = fg.AttentionWeights(w.wq, w.wk, np.zeros_like(w.wv))
    np.testing.assert_array_equal(fg.hfcm_forward(x, spectrum, zero_v), x)
    np.testing.assert_array_equal(fg.hfcm_forward(x, spectrum.zeros_like(offset=0.0), w), x)
    assert fg.hfcm_forward(x, spectrum, w, residual=False).shape == x.shape


def test_hfcm_golden():
    x, spectrum, w = _golden_case()
    out = fg.hfcm_forward(x, spectrum, w)
    golden = load_tensor(GOLDEN)
    np.testing.assert_allclose(out, golden, rtol=1e-6, atol=1e-6)


def test_weights_round_trip(tmp_path):
    w = fg.AttentionWeights.random(8, 4, seed=5)
    fg.save_weights(w, tmp_path / "w")
    back = fg.load_weights(tmp_path / "w")
    assert (back.dim, back.heads) == (8, 4) and back.proj_high is None
    np.testing.assert_allclose(back.wq, w.wq, rtol=1e-6)

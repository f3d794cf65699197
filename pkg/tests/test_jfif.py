import io

import numpy as np
import pytest
from PIL import Image

from fdgdiff import jfif
from fdgdiff import jpeg_codec as jc


def _pil_jpeg(img, **kw):
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, "JPEG", **kw)
    return buf.getvalue()


def test_minimal_stream():
    segs = jfif.parse_markers(b"\xff\xd8\xff\xd9")
    assert [s.name for s in segs] == ["SOI", "EOI"]


@pytest.mark.parametrize("data,msg", [
    (b"\x00\xd8\xff\xd9", "SOI"),
    (b"\xff\xd8", "EOI"),
    (b"\xff\xd8\xff\xdb\x00\x43\x00", "truncated"),
    (b"", "empty"),
])
def test_marker_errors(data, msg):
    with pytest.raises(jfif.JpegError, match=msg):
        jfif.parse_markers(data)


def test_written_segment_sequence(rng):
    img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    data = jfif.write_jfif(jfif.from_simulation(jc.simulate_jpeg(img, 80)))
    names = [s.name for s in jfif.parse_markers(data)]
    assert names == ["SOI", "DQT", "DQT", "SOF0", "DHT", "DHT", "DHT", "DHT", "SOS", "EOI"]
    assert data[:2] == b"\xff\xd8" and data[-2:] == b"\xff\xd9"


def test_dqt_qf80_entry():
    seg = jfif.MarkerSegment(jfif.DQT, bytes([0]) + bytes(jc.quant_table_for_qf(80).astype(np.uint8)), 0)
    (tid, table), = jfif.parse_dqt(seg)
    assert tid == 0 and table[0] == 6


def test_dqt_two_tables_and_errors():
    t0 = bytes([0]) + bytes(range(1, 65))
    t1 = bytes([1]) + bytes([7] * 64)
    tables = jfif.parse_dqt(jfif.MarkerSegment(jfif.DQT, t0 + t1, 0))
    assert [t for t, _ in tables] == [0, 1]
    assert tables[1][1].tolist() == [7] * 64
    with pytest.raises(jfif.JpegError, match="precision"):
        jfif.parse_dqt(jfif.MarkerSegment(jfif.DQT, bytes([0x10]) + bytes(range(1, 65)), 0))
    with pytest.raises(jfif.JpegError, match="short"):
        jfif.parse_dqt(jfif.MarkerSegment(jfif.DQT, t0[:40], 0))


def test_canonical_codes_by_hand():
    # one code of length 1 and two of length 2: "0", "10", "11"
    code = jfif.build_huffman(jfif.HuffmanTable(0, 0, (1, 2) + (0,) * 14, (5, 6, 7)))
    assert code.encode(5) == (0b0, 1)
    assert code.encode(6) == (0b10, 2)
    assert code.encode(7) == (0b11, 2)


def test_kraft_violation():
    with pytest.raises(jfif.JpegError, match="over-subscribe"):
        jfif.build_huffman(jfif.HuffmanTable(0, 0, (3,) + (0,) * 15, (1, 2, 3)))


@pytest.mark.parametrize("table", [jfif.STD_DC_LUMA, jfif.STD_AC_LUMA, jfif.STD_DC_CHROMA, jfif.STD_AC_CHROMA])
def test_huffman_encode_decode_identity(table, rng):
    code = jfif.build_huffman(table)
    symbols = rng.choice(table.symbols, 500).tolist()
    w = jfif.BitWriter()
    for s in symbols:
        w.write(*code.encode(s))
    reader = jfif.BitReader(jfif.unstuff(w.flush()))
    assert [code.decode(reader) for _ in symbols] == symbols


def test_standard_codes_prefix_free():
    for table in (jfif.STD_AC_LUMA, jfif.STD_AC_CHROMA):
        codes = [format(c, f"0{n}b") for c, n in jfif.build_huffman(table).encode_map.values()]
        for a in codes:
            assert not any(b != a and b.startswith(a) for b in codes)


def test_gray_block_only_dc():
    img = np.full((8, 8), 90, np.uint8)
    parsed = jfif.read_jfif(jfif.write_jfif(jfif.from_simulation(jc.simulate_jpeg(img, 80))))
    (grid,) = parsed.coeff_blocks
    assert grid.shape == (1, 1, 8, 8)
    assert grid[0, 0, 0, 0] != 0 and np.count_nonzero(grid) == 1


@pytest.mark.parametrize("qf", [10, 80, 100])
def test_round_trip_coefficients(natural_images, qf):
    for img in natural_images[:4]:
        crop = img[:70, :90]
        sim = jc.simulate_jpeg(crop, qf)
        parsed = jfif.read_jfif(jfif.write_jfif(jfif.from_simulation(sim)))
        assert parsed.width == 90 and parsed.height == 70
        for a, b in zip(sim.coeffs, parsed.coeff_blocks):
            np.testing.assert_array_equal(a, b)
        for tid, t in enumerate(sim.tables):
            np.testing.assert_array_equal(parsed.quant_tables[tid], t)
        np.testing.assert_array_equal(jfif.decode_image(parsed).shape, crop.shape)


def test_no_unstuffed_ff_in_scan(rng):
    img = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
    data = jfif.write_jfif(jfif.from_simulation(jc.simulate_jpeg(img, 100)))
    scan = [s for s in jfif.parse_markers(data) if s.marker == jfif.SOS][0].scan_data
    ffs = [i for i in range(len(scan) - 1) if scan[i] == 0xFF]
    assert ffs, "test image should produce 0xFF bytes"
    assert all(scan[i + 1] == 0x00 for i in ffs)


def test_reference_coefficient_dump(natural_images):
    jpeglib = pytest.importorskip("jpeglib")
    for k, img in enumerate(natural_images[:5]):
        crop = np.ascontiguousarray(img[:72, :88])
        data = _pil_jpeg(crop, quality=80, subsampling=0) if crop.ndim == 3 else _pil_jpeg(crop, quality=80)
        path = f"/tmp/_fdg_ref_{k}.jpg"
        with open(path, "wb") as fh:
            fh.write(data)
        ref = jpeglib.read_dct(path)
        parsed = jfif.read_jfif(data)
        np.testing.assert_array_equal(parsed.coeff_blocks[0], ref.Y)
        if crop.ndim == 3:
            np.testing.assert_array_equal(parsed.coeff_blocks[1], ref.Cb)
            np.testing.assert_array_equal(parsed.coeff_blocks[2], ref.Cr)
        np.testing.assert_array_equal(jc.from_zigzag(parsed.quant_tables[0]), ref.qt[0])


def test_reference_decoder_pixels(natural_images):
    for img in natural_images[:6]:
        crop = np.ascontiguousarray(img[:64, :80])
        parsed = jfif.read_jfif(jfif.write_jfif(jfif.from_simulation(jc.simulate_jpeg(crop, 80))))
        data = jfif.write_jfif(parsed)
        pil = Image.open(io.BytesIO(data))
        if crop.ndim == 3:
            pil.draft("YCbCr", pil.size)
        ref = np.asarray(pil).astype(int).reshape(crop.shape[:2] + (-1,))
        ours = jfif.decode_components(parsed).astype(int)
        assert np.abs(ours - ref).max() <= 1


def test_restart_markers_reset_prediction(natural_images):
    crop = np.ascontiguousarray(natural_images[0][:64, :64])
    plain = jfif.read_jfif(_pil_jpeg(crop, quality=75, subsampling=0))
    rst = _pil_jpeg(crop, quality=75, subsampling=0, restart_marker_blocks=3)
    names = [s.name for s in jfif.parse_markers(rst)]
    assert "DRI" in names
    parsed = jfif.read_jfif(rst)
    assert parsed.restart_interval > 0
    for a, b in zip(plain.coeff_blocks, parsed.coeff_blocks):
        np.testing.assert_array_equal(a, b)


def test_rejects_progressive_and_subsampled(natural_images):
    crop = np.ascontiguousarray(natural_images[0][:32, :32])
    with pytest.raises(jfif.JpegError, match="baseline"):
        jfif.read_jfif(_pil_jpeg(crop, progressive=True))
    with pytest.raises(jfif.JpegError, match="4:4:4"):
        jfif.read_jfif(_pil_jpeg(crop, subsampling=2))


def test_marker_inside_scan_is_rejected(rng):
    img = rng.integers(0, 256, (16, 16), dtype=np.uint8)
    data = bytearray(jfif.write_jfif(jfif.from_simulation(jc.simulate_jpeg(img, 90))))
    sos = [s for s in jfif.parse_markers(bytes(data)) if s.marker == jfif.SOS][0]
    start = data.index(sos.scan_data)
    with pytest.raises(jfif.JpegError):
        jfif.decode_scan(16, 16, [(0, jfif.HuffmanCode(jfif.STD_DC_LUMA), jfif.HuffmanCode(jfif.STD_AC_LUMA))],
                         bytes(data[start:start + 4]) + b"\xff\xc4" + bytes(data[start + 4:-2]))


def test_truncated_scan_errors(rng):
    img = rng.integers(0, 256, (32, 32), dtype=np.uint8)
    sim = jc.simulate_jpeg(img, 90)
    data = jfif.write_jfif(jfif.from_simulation(sim))
    sos = [s for s in jfif.parse_markers(data) if s.marker == jfif.SOS][0]
    codes = [(0, jfif.HuffmanCode(jfif.STD_DC_LUMA), jfif.HuffmanCode(jfif.STD_AC_LUMA))]
    with pytest.raises(jfif.JpegError, match="prematurely|ended"):
        jfif.decode_scan(32, 32, codes, sos.scan_data[: len(sos.scan_data) // 2])


def test_write_rejects_huge_dimensions():
    parsed = jfif.ParsedJpeg(70000, 8, [jfif.Component(1, 1, 1, 0)], {0: np.ones(64, int)},
                             [np.zeros((1, 8750, 8, 8), int)])
    with pytest.raises(jfif.JpegError, match="65535"):
        jfif.write_jfif(parsed)


def test_validate_missing_table():
    parsed = jfif.ParsedJpeg(8, 8, [jfif.Component(1, 1, 1, 3)], {0: np.ones(64, int)},
                             [np.zeros((1, 1, 8, 8), int)])
    with pytest.raises(jfif.JpegError, match="missing quant table"):
        parsed.validate()

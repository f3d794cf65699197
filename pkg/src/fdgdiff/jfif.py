"""Baseline (SOF0) JFIF reader and writer.

Only what the rest of the package needs: 8-bit precision, Huffman coding,
4:4:4 sampling (or a single gray component). Quantized coefficients come
out as ``(Hb, Wb, 8, 8)`` integer grids in natural order, the same layout
:func:`fdgdiff.jpeg_codec.simulate_jpeg` produces, so a simulated
compression can be written to disk and read back coefficient-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import jpeg_codec as jc

SOI, EOI, SOS, DQT, DHT, DRI = 0xD8, 0xD9, 0xDA, 0xDB, 0xC4, 0xDD
SOF0 = 0xC0
RST0, RST7 = 0xD0, 0xD7
# SOFn markers other than SOF0 (C4, C8 and CC are DHT, JPG and DAC)
_UNSUPPORTED_SOF = {0xC1, 0xC2, 0xC3, 0xC5, 0xC6, 0xC7, 0xC9, 0xCA, 0xCB, 0xCD, 0xCE, 0xCF}
_STANDALONE = {SOI, EOI, 0x01} | set(range(RST0, RST7 + 1))


class JpegError(ValueError):
    """Malformed or unsupported JPEG stream."""


@dataclass(frozen=True)
class MarkerSegment:
    marker: int
    payload: bytes
    offset: int
    scan_data: bytes | None = None

    @property
    def name(self) -> str:
        return MARKER_NAMES.get(self.marker, f"FF{self.marker:02X}")


MARKER_NAMES = {SOI: "SOI", EOI: "EOI", SOS: "SOS", DQT: "DQT", DHT: "DHT", DRI: "DRI", SOF0: "SOF0"}
MARKER_NAMES.update({m: f"APP{m - 0xE0}" for m in range(0xE0, 0xF0)})
MARKER_NAMES.update({m: f"RST{m - RST0}" for m in range(RST0, RST7 + 1)})
MARKER_NAMES[0xFE] = "COM"


def parse_markers(data: bytes) -> list[MarkerSegment]:
    """Split a JPEG byte stream into marker segments from SOI to EOI.

    Entropy-coded data following an SOS header is attached to that segment
    verbatim (byte stuffing and RSTn markers kept).
    """
    if not data:
        raise JpegError("empty stream")
    if data[:2] != b"\xff\xd8":
        raise JpegError("missing SOI marker")
    segments = [MarkerSegment(SOI, b"", 0)]
    pos, n = 2, len(data)
    while True:
        if pos >= n:
            raise JpegError("missing EOI marker")
        if data[pos] != 0xFF:
            raise JpegError(f"expected marker at offset {pos}, found 0x{data[pos]:02X}")
        while pos < n and data[pos] == 0xFF:  # fill bytes
            pos += 1
        if pos >= n:
            raise JpegError("missing EOI marker")
        marker, offset = data[pos], pos - 1
        pos += 1
        if marker == EOI:
            segments.append(MarkerSegment(EOI, b"", offset))
            return segments
        if marker in _STANDALONE:
            segments.append(MarkerSegment(marker, b"", offset))
            continue
        if pos + 2 > n:
            raise JpegError(f"truncated length field at offset {pos}")
        (length,) = struct.unpack_from(">H", data, pos)
        if length < 2 or pos + length > n:
            raise JpegError(f"truncated segment FF{marker:02X} at offset {offset}")
        payload = data[pos + 2:pos + length]
        pos += length
        if marker != SOS:
            segments.append(MarkerSegment(marker, payload, offset))
            continue
        start = pos
        while True:
            if pos + 1 >= n:
                raise JpegError("missing EOI marker (scan data runs to end of stream)")
            if data[pos] == 0xFF and data[pos + 1] != 0x00 and not RST0 <= data[pos + 1] <= RST7:
                break
            pos += 2 if data[pos] == 0xFF else 1
        segments.append(MarkerSegment(SOS, payload, offset, data[start:pos]))


def parse_dqt(seg: MarkerSegment) -> list[tuple[int, np.ndarray]]:
    """Quantization tables of a DQT segment, each 64 entries in zigzag order."""
    if seg.marker != DQT:
        raise JpegError(f"not a DQT segment: {seg.name}")
    out, p, body = [], 0, seg.payload
    if not body:
        raise JpegError("empty DQT payload")
    while p < len(body):
        pq, tq = body[p] >> 4, body[p] & 0x0F
        if pq != 0:
            raise JpegError(f"DQT table {tq}: only 8-bit precision is supported")
        if p + 65 > len(body):
            raise JpegError("short DQT payload")
        table = np.frombuffer(body, dtype=np.uint8, count=64, offset=p + 1).astype(np.int64)
        if np.any(table == 0):
            raise JpegError(f"DQT table {tq} has a zero entry")
        out.append((tq, table))
        p += 65
    return out


# ------------------------------------------------------------------ Huffman

@dataclass(frozen=True)
class HuffmanTable:
    table_class: int  # 0 = DC, 1 = AC
    table_id: int
    counts: tuple[int, ...]  # codes per length 1..16
    symbols: tuple[int, ...]

    def __post_init__(self):
        if len(self.counts) != 16:
            raise JpegError("Huffman table needs 16 length counts")
        if sum(self.counts) != len(self.symbols) or len(self.symbols) > 256:
            raise JpegError("Huffman counts do not match symbol list")


class HuffmanCode:
    """Canonical code built from a :class:`HuffmanTable` (T.81 Annex C)."""

    def __init__(self, table: HuffmanTable):
        self.table = table
        self.encode_map: dict[int, tuple[int, int]] = {}
        # maxcode[l] = largest code of length l (or -1); valptr/mincode as in F.2.2.3
        self.maxcode = [-1] * 17
        self.mincode = [0] * 17
        self.valptr = [0] * 17
        code, k = 0, 0
        for length in range(1, 17):
            cnt = table.counts[length - 1]
            if cnt:
                self.valptr[length] = k
                self.mincode[length] = code
                for _ in range(cnt):
                    self.encode_map.setdefault(table.symbols[k], (code, length))
                    code += 1
                    k += 1
                self.maxcode[length] = code - 1
            if code > (1 << length):
                raise JpegError("Huffman code lengths over-subscribe the code space")
            code <<= 1

    def encode(self, symbol: int) -> tuple[int, int]:
        try:
            return self.encode_map[symbol]
        except KeyError:
            raise JpegError(f"symbol 0x{symbol:02X} not in Huffman table") from None

    def decode(self, reader: "BitReader") -> int:
        code = 0
        for length in range(1, 17):
            code = (code << 1) | reader.bit()
            if code <= self.maxcode[length]:
                return self.table.symbols[self.valptr[length] + code - self.mincode[length]]
        raise JpegError("invalid Huffman code in scan")


def build_huffman(table: HuffmanTable) -> HuffmanCode:
    return HuffmanCode(table)


def parse_dht(seg: MarkerSegment) -> list[HuffmanTable]:
    if seg.marker != DHT:
        raise JpegError(f"not a DHT segment: {seg.name}")
    out, p, body = [], 0, seg.payload
    while p < len(body):
        if p + 17 > len(body):
            raise JpegError("short DHT payload")
        tc, th = body[p] >> 4, body[p] & 0x0F
        if tc > 1 or th > 3:
            raise JpegError(f"bad DHT class/id byte 0x{body[p]:02X}")
        counts = tuple(body[p + 1:p + 17])
        total = sum(counts)
        if p + 17 + total > len(body):
            raise JpegError("short DHT payload")
        out.append(HuffmanTable(tc, th, counts, tuple(body[p + 17:p + 17 + total])))
        p += 17 + total
    return out


# T.81 Annex K.3 standard tables.
STD_DC_LUMA = HuffmanTable(0, 0, (0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0), tuple(range(12)))
STD_DC_CHROMA = HuffmanTable(0, 1, (0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0), tuple(range(12)))
STD_AC_LUMA = HuffmanTable(1, 0, (0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7D), tuple(bytes.fromhex(
    "01020300041105122131410613516107227114328191a1082342b1c11552d1f02433627282"
    "090a161718191a25262728292a3435363738393a434445464748494a535455565758595a"
    "636465666768696a737475767778797a838485868788898a92939495969798999aa2a3a4"
    "a5a6a7a8a9aab2b3b4b5b6b7b8b9bac2c3c4c5c6c7c8c9cad2d3d4d5d6d7d8d9dae1e2e3"
    "e4e5e6e7e8e9eaf1f2f3f4f5f6f7f8f9fa")))
STD_AC_CHROMA = HuffmanTable(1, 1, (0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77), tuple(bytes.fromhex(
    "000102031104052131061241510761711322328108144291a1b1c109233352f0156272d1"
    "0a162434e125f11718191a262728292a35363738393a434445464748494a535455565758"
    "595a636465666768696a737475767778797a82838485868788898a92939495969798999a"
    "a2a3a4a5a6a7a8a9aab2b3b4b5b6b7b8b9bac2c3c4c5c6c7c8c9cad2d3d4d5d6d7d8d9da"
    "e2e3e4e5e6e7e8e9eaf2f3f4f5f6f7f8f9fa")))


# ------------------------------------------------------------------ bit I/O

def unstuff(data: bytes) -> bytes:
    return data.replace(b"\xff\x00", b"\xff")


class BitReader:
    """MSB-first reader over one restart interval of unstuffed scan data."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.nbits = len(data) * 8

    def bit(self) -> int:
        if self.pos >= self.nbits:
            raise JpegError("scan data ended prematurely")
        byte = self.data[self.pos >> 3]
        b = (byte >> (7 - (self.pos & 7))) & 1
        self.pos += 1
        return b

    def bits(self, n: int) -> int:
        v = 0
        for _ in range(n):
            v = (v << 1) | self.bit()
        return v


class BitWriter:
    def __init__(self):
        self.out = bytearray()
        self.acc = 0
        self.nacc = 0

    def write(self, value: int, nbits: int) -> None:
        self.acc = (self.acc << nbits) | (value & ((1 << nbits) - 1))
        self.nacc += nbits
        while self.nacc >= 8:
            self.nacc -= 8
            byte = (self.acc >> self.nacc) & 0xFF
            self.out.append(byte)
            if byte == 0xFF:
                self.out.append(0x00)
        self.acc &= (1 << self.nacc) - 1

    def flush(self) -> bytes:
        if self.nacc:
            self.write((1 << (8 - self.nacc)) - 1, 8 - self.nacc)  # pad with ones
        return bytes(self.out)


def _category(v: int) -> int:
    return int(abs(v)).bit_length()


def _extend(v: int, s: int) -> int:
    # T.81 F.2.2.1 EXTEND
    return v - (1 << s) + 1 if s and v < (1 << (s - 1)) else v


# ------------------------------------------------------------------ frame model

@dataclass(frozen=True)
class Component:
    cid: int
    h: int
    v: int
    tq: int


@dataclass
class ParsedJpeg:
    """Frame header, quantization tables and quantized coefficient grids."""

    width: int
    height: int
    components: list[Component]
    quant_tables: dict[int, np.ndarray]
    coeff_blocks: list[np.ndarray]
    huffman_tables: dict[tuple[int, int], HuffmanTable] = field(default_factory=dict)
    restart_interval: int = 0

    @property
    def block_grid(self) -> tuple[int, int]:
        return -(-self.height // 8), -(-self.width // 8)

    def validate(self) -> None:
        for comp in self.components:
            if comp.tq not in self.quant_tables:
                raise JpegError(f"component {comp.cid} references missing quant table {comp.tq}")
        hb, wb = self.block_grid
        for grid in self.coeff_blocks:
            if grid.shape != (hb, wb, 8, 8):
                raise JpegError(f"coefficient grid {grid.shape} does not match frame ({hb}, {wb})")


def _parse_sof0(seg: MarkerSegment) -> tuple[int, int, list[Component]]:
    body = seg.payload
    if len(body) < 6:
        raise JpegError("short SOF0 payload")
    precision, height, width, nc = struct.unpack_from(">BHHB", body, 0)
    if precision != 8:
        raise JpegError(f"unsupported sample precision {precision}")
    if height == 0 or width == 0:
        raise JpegError("frame dimensions must be non-zero")
    if len(body) < 6 + 3 * nc:
        raise JpegError("short SOF0 component list")
    comps = []
    for i in range(nc):
        cid, hv, tq = body[6 + 3 * i:9 + 3 * i]
        comps.append(Component(cid, hv >> 4, hv & 0x0F, tq))
    if nc > 1 and any((c.h, c.v) != (comps[0].h, comps[0].v) for c in comps):
        raise JpegError("chroma subsampling is not supported (4:4:4 only)")
    return width, height, comps


def _parse_sos(seg: MarkerSegment) -> tuple[list[tuple[int, int, int]], tuple[int, int, int, int]]:
    body = seg.payload
    if not body:
        raise JpegError("short SOS payload")
    ns = body[0]
    if len(body) < 1 + 2 * ns + 3:
        raise JpegError("short SOS payload")
    sel = [(body[1 + 2 * i], body[2 + 2 * i] >> 4, body[2 + 2 * i] & 0x0F) for i in range(ns)]
    ss, se, a = body[1 + 2 * ns:4 + 2 * ns]
    return sel, (ss, se, a >> 4, a & 0x0F)


def _split_restarts(scan: bytes) -> list[bytes]:
    parts, start, i = [], 0, 0
    while i < len(scan) - 1:
        if scan[i] == 0xFF and RST0 <= scan[i + 1] <= RST7:
            parts.append(scan[start:i])
            start = i + 2
            i += 2
        else:
            i += 1
    parts.append(scan[start:])
    return parts


def decode_scan(
    width: int,
    height: int,
    scan_components: list[tuple[int, HuffmanCode, HuffmanCode]],
    scan_data: bytes,
    restart_interval: int = 0,
) -> list[np.ndarray]:
    """Entropy-decode one baseline scan.

    ``scan_components`` lists ``(component_index, dc_code, ac_code)`` in scan
    order. Returns one ``(Hb, Wb, 8, 8)`` int64 grid per scan component.
    """
    for i in range(len(scan_data) - 1):
        if scan_data[i] == 0xFF and scan_data[i + 1] != 0 and not RST0 <= scan_data[i + 1] <= RST7:
            raise JpegError(f"unexpected marker FF{scan_data[i + 1]:02X} inside scan data")
    hb, wb = -(-height // 8), -(-width // 8)
    n_mcu = hb * wb
    grids = [np.zeros((hb * wb, 64), dtype=np.int64) for _ in scan_components]
    intervals = _split_restarts(scan_data)
    per_interval = restart_interval or n_mcu
    if len(intervals) < -(-n_mcu // per_interval):
        raise JpegError("scan has fewer restart intervals than MCUs require")

    mcu = 0
    for chunk in intervals:
        if mcu >= n_mcu:
            break
        reader = BitReader(unstuff(chunk))
        pred = [0] * len(scan_components)
        for _ in range(min(per_interval, n_mcu - mcu)):
            for ci, (_, dc, ac) in enumerate(scan_components):
                zz = grids[ci][mcu]
                s = dc.decode(reader)
                if s > 11:
                    raise JpegError(f"DC category {s} out of range")
                pred[ci] += _extend(reader.bits(s), s)
                zz[0] = pred[ci]
                k = 1
                while k < 64:
                    rs = ac.decode(reader)
                    r, s = rs >> 4, rs & 0x0F
                    if s == 0:
                        if r == 15:
                            k += 16
                            if k > 64:
                                raise JpegError("ZRL run past end of block")
                            continue
                        if r != 0:
                            raise JpegError(f"invalid AC symbol 0x{rs:02X}")
                        break  # EOB
                    k += r
                    if k > 63:
                        raise JpegError("AC coefficient index overflow")
                    zz[k] = _extend(reader.bits(s), s)
                    k += 1
            mcu += 1
    if mcu < n_mcu:
        raise JpegError("scan data ended before all MCUs were decoded")
    return [jc.from_zigzag(g).reshape(hb, wb, 8, 8) for g in grids]


def read_jfif(data: bytes) -> ParsedJpeg:
    segments = parse_markers(data)
    qt: dict[int, np.ndarray] = {}
    huff: dict[tuple[int, int], HuffmanTable] = {}
    frame = None
    restart = 0
    grids: dict[int, np.ndarray] = {}
    for seg in segments:
        m = seg.marker
        if m == DQT:
            qt.update(parse_dqt(seg))
        elif m == DHT:
            for t in parse_dht(seg):
                huff[(t.table_class, t.table_id)] = t
        elif m == DRI:
            if len(seg.payload) != 2:
                raise JpegError("bad DRI payload")
            (restart,) = struct.unpack(">H", seg.payload)
        elif m == SOF0:
            frame = _parse_sof0(seg)
        elif m in _UNSUPPORTED_SOF:
            raise JpegError(f"unsupported frame type {seg.name} (baseline SOF0 only)")
        elif m == SOS:
            if frame is None:
                raise JpegError("SOS before SOF0")
            width, height, comps = frame
            sel, (ss, se, ah, al) = _parse_sos(seg)
            if (ss, se, ah, al) != (0, 63, 0, 0):
                raise JpegError("non-baseline spectral selection in SOS")
            index = {c.cid: i for i, c in enumerate(comps)}
            scomps = []
            for cid, td, ta in sel:
                if cid not in index:
                    raise JpegError(f"SOS references unknown component {cid}")
                if (0, td) not in huff or (1, ta) not in huff:
                    raise JpegError(f"missing Huffman table for component {cid}")
                scomps.append((index[cid], HuffmanCode(huff[(0, td)]), HuffmanCode(huff[(1, ta)])))
            decoded = decode_scan(width, height, scomps, seg.scan_data or b"", restart)
            for (ci, _, _), g in zip(scomps, decoded):
                grids[ci] = g
    if frame is None:
        raise JpegError("no SOF0 frame header")
    width, height, comps = frame
    missing = [c.cid for i, c in enumerate(comps) if i not in grids]
    if missing:
        raise JpegError(f"no scan data for components {missing}")
    parsed = ParsedJpeg(width, height, comps, qt, [grids[i] for i in range(len(comps))], huff, restart)
    parsed.validate()
    return parsed


# ------------------------------------------------------------------ writer

def _segment(marker: int, payload: bytes) -> bytes:
    return bytes([0xFF, marker]) + struct.pack(">H", len(payload) + 2) + payload


def _dht_payload(t: HuffmanTable) -> bytes:
    return bytes([(t.table_class << 4) | t.table_id, *t.counts, *t.symbols])


def encode_scan(grids: list[np.ndarray], codes: list[tuple[HuffmanCode, HuffmanCode]]) -> bytes:
    """Interleaved baseline entropy coding of same-shape coefficient grids."""
    zz = [jc.to_zigzag(g).reshape(-1, 64).tolist() for g in grids]
    writer = BitWriter()
    pred = [0] * len(grids)
    for b in range(len(zz[0])):
        for ci, (dc, ac) in enumerate(codes):
            block = zz[ci][b]
            diff = block[0] - pred[ci]
            pred[ci] = block[0]
            s = _category(diff)
            if s > 11:
                raise JpegError(f"DC difference {diff} exceeds baseline range")
            writer.write(*dc.encode(s))
            if s:
                writer.write(diff if diff > 0 else diff + (1 << s) - 1, s)
            run = 0
            for k in range(1, 64):
                v = block[k]
                if v == 0:
                    run += 1
                    continue
                while run > 15:
                    writer.write(*ac.encode(0xF0))
                    run -= 16
                s = _category(v)
                if s > 10:
                    raise JpegError(f"AC coefficient {v} exceeds baseline range")
                writer.write(*ac.encode((run << 4) | s))
                writer.write(v if v > 0 else v + (1 << s) - 1, s)
                run = 0
            if run:
                writer.write(*ac.encode(0x00))
    return writer.flush()


def write_jfif(parsed: ParsedJpeg) -> bytes:
    """Serialize with the standard Annex K Huffman tables.

    Component 0 uses the luminance tables, every other component the
    chrominance ones. Segment order: SOI, DQT per table, SOF0, DHT x (2 or 4),
    SOS, EOI.
    """
    parsed.validate()
    if parsed.width > 0xFFFF or parsed.height > 0xFFFF:
        raise JpegError("dimensions exceed 65535")
    if not 1 <= len(parsed.components) <= 4:
        raise JpegError("baseline frames carry 1 to 4 components")

    out = bytearray(b"\xff\xd8")
    for tid in sorted(parsed.quant_tables):
        table = np.asarray(parsed.quant_tables[tid])
        if table.shape != (64,) or table.min() < 1 or table.max() > 255:
            raise JpegError(f"quant table {tid} not representable at 8-bit precision")
        out += _segment(DQT, bytes([tid]) + bytes(table.astype(np.uint8)))

    sof = struct.pack(">BHHB", 8, parsed.height, parsed.width, len(parsed.components))
    for c in parsed.components:
        sof += bytes([c.cid, 0x11, c.tq])
    out += _segment(SOF0, sof)

    chroma = len(parsed.components) > 1
    tables = [STD_DC_LUMA, STD_AC_LUMA] + ([STD_DC_CHROMA, STD_AC_CHROMA] if chroma else [])
    for t in tables:
        out += _segment(DHT, _dht_payload(t))

    luma_codes = (HuffmanCode(STD_DC_LUMA), HuffmanCode(STD_AC_LUMA))
    chroma_codes = (HuffmanCode(STD_DC_CHROMA), HuffmanCode(STD_AC_CHROMA)) if chroma else None
    sos = bytes([len(parsed.components)])
    codes = []
    for i, c in enumerate(parsed.components):
        sos += bytes([c.cid, 0x00 if i == 0 else 0x11])
        codes.append(luma_codes if i == 0 else chroma_codes)
    sos += bytes([0, 63, 0])
    out += _segment(SOS, sos)
    out += encode_scan(parsed.coeff_blocks, codes)
    out += b"\xff\xd9"
    return bytes(out)


def from_simulation(sim: jc.JpegSimulation) -> ParsedJpeg:
    """Wrap :func:`simulate_jpeg` output for :func:`write_jfif`."""
    comps = [Component(i + 1, 1, 1, tid) for i, tid in enumerate(sim.table_ids)]
    tables = {i: np.asarray(t) for i, t in enumerate(sim.tables)}
    return ParsedJpeg(sim.width, sim.height, comps, tables, [np.asarray(g) for g in sim.coeffs])


def decode_components(parsed: ParsedJpeg) -> np.ndarray:
    """Decoded component samples (Y/Cb/Cr or gray) as ``(H, W, C)`` uint8.

    Planes are range-limited and rounded per component, as a conventional
    decoder does before colour conversion.
    """
    ids = [c.tq for c in parsed.components]
    planes = jc.decode_planes(parsed.coeff_blocks, parsed.quant_tables, ids, parsed.width, parsed.height)
    return np.stack([np.floor(np.clip(p, 0.0, 255.0) + 0.5) for p in planes], axis=-1).astype(np.uint8)


def decode_image(parsed: ParsedJpeg) -> np.ndarray:
    """Pixels from quantized coefficients through the float IDCT path."""
    comps = decode_components(parsed)
    if comps.shape[2] not in (1, 3):
        raise JpegError("only 1- or 3-component images can be converted to pixels")
    return jc.planes_to_image([comps[..., k].astype(np.float64) for k in range(comps.shape[2])])

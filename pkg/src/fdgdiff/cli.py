"""``fdgdiff`` command-line interface.

Every command writes its artifacts plus ``report.json`` into ``--out``.
Exit codes: 0 success, 1 runtime or I/O failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import hashlib
import importlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import decomposition as dcm
from . import diffusion as dfn
from . import haze
from . import jfif
from . import jpeg_codec as jc
from . import spectral
from .image_core import (ImageFormatError, load_ppm, load_tensor, metrics, save_ppm, save_tensor,
                         to_float, to_u8)

log = logging.getLogger("fdgdiff")


class UsageError(Exception):
    """Bad flags or config; exit code 2."""


# ------------------------------------------------------------------ helpers

def read_image(path: str | Path) -> np.ndarray:
    """uint8 image from PPM/PGM, baseline JPEG, or an FDGT float tensor."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".jpg", ".jpeg"):
        return jfif.decode_image(jfif.read_jfif(path.read_bytes()))
    if suffix == ".fdgt":
        return to_u8(load_tensor(path))
    return load_ppm(path)


def write_image(img_u8: np.ndarray, out: Path, stem: str) -> str:
    name = f"{stem}.{'ppm' if img_u8.ndim == 3 else 'pgm'}"
    save_ppm(img_u8, out / name)
    return name


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_config(path: str | None, allowed: set[str]) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    unknown = set(doc) - allowed
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return doc


def merge(config: dict, args: argparse.Namespace, keys) -> dict:
    """Config values overridden by explicitly given flags."""
    out = dict(config)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def write_report(out: Path, command: str, inputs: list, params: dict, outputs: list,
                 metrics_: dict | None, started: float, extra: dict | None = None) -> dict:
    report = {
        "command": command,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "parameters": params,
        "outputs": outputs,
        "metrics": metrics_ or {},
        "wall_time_s": round(time.time() - started, 6),
    }
    if extra:
        report.update(extra)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True, default=_jsonable))
    return report


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and not np.isfinite(o):
        return str(o)
    raise TypeError(type(o))


def _finite(d: dict) -> dict:
    return {k: (v if np.isfinite(v) else "inf") for k, v in d.items()}


# ------------------------------------------------------------------ degrade

DEGRADE_KEYS = {"qf", "beta", "airlight", "depth", "transmission", "seed"}


def default_depth(h: int, w: int) -> np.ndarray:
    """Depth ramp from 1 at the top row to 0 at the bottom row."""
    return np.repeat(np.linspace(1.0, 0.0, h)[:, None], w, axis=1)


def cmd_degrade(args) -> int:
    started = time.time()
    params = merge(load_config(args.config, DEGRADE_KEYS), args, DEGRADE_KEYS)
    params.setdefault("qf", 80)
    params.setdefault("beta", 1.0)
    params.setdefault("airlight", 0.8)
    qf = _check_qf(params["qf"])
    clear = read_image(args.input)
    h, w = clear.shape[:2]
    if params.get("transmission") is not None:
        t = np.full((h, w), float(params["transmission"]))
        if not 0 < t[0, 0] <= 1:
            raise UsageError("--transmission must lie in (0, 1]")
    else:
        depth = load_tensor(params["depth"]).astype(np.float64) if params.get("depth") else default_depth(h, w)
        if depth.shape != (h, w):
            raise UsageError(f"depth map {depth.shape} does not match image {(h, w)}")
        try:
            t = haze.transmission_from_depth(depth, float(params["beta"]))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    hazy = to_u8(haze.apply_asm(to_float(clear), t, params["airlight"]))
    sim = jc.simulate_jpeg(hazy, qf)
    out = _outdir(args.out)
    names = [write_image(hazy, out, "hazy"), write_image(sim.compressed, out, "compressed_hazy")]
    (out / "compressed_hazy.jpg").write_bytes(jfif.write_jfif(jfif.from_simulation(sim)))
    save_tensor(t, out / "transmission.fdgt")
    save_tensor(jc.loss_map(hazy, sim.compressed), out / "loss_map.fdgt")
    names += ["compressed_hazy.jpg", "transmission.fdgt", "loss_map.fdgt"]
    m = _finite(metrics(to_float(clear), to_float(sim.compressed)))
    write_report(out, "degrade", [args.input], params, names, {"clear_vs_compressed": m}, started)
    return 0


# ------------------------------------------------------------------ analyze

def cmd_analyze(args) -> int:
    started = time.time()
    qf = _check_qf(args.qf if args.qf is not None else 80)
    ts = sorted({float(x) for x in args.t}, reverse=True)
    if any(not 0 < t <= 1 for t in ts):
        raise UsageError("transmission values must lie in (0, 1]")
    corpus_dir = Path(args.corpus)
    if not corpus_dir.is_dir():
        raise UsageError(f"corpus directory {corpus_dir} does not exist")
    images, used, skipped = [], [], []
    for p in sorted(corpus_dir.iterdir()):
        if p.suffix.lower() not in (".ppm", ".pgm", ".jpg", ".jpeg", ".fdgt"):
            continue
        try:
            images.append(read_image(p))
            used.append(p)
        except (ImageFormatError, jfif.JpegError, ValueError) as exc:
            log.warning("skipping %s: %s", p, exc)
            skipped.append(str(p))
    if not images:
        raise RuntimeError(f"no readable images in {corpus_dir}")
    corpus = spectral.extract_blocks(images)
    if len(corpus) == 0:
        raise RuntimeError("images are too small to yield any 8x8 block")
    reports = {t: spectral.annihilation_stats(corpus, t, qf) for t in ts}
    out = _outdir(args.out)
    verdicts = []
    ref = reports.get(1.0) or spectral.annihilation_stats(corpus, 1.0, qf)
    for t, r in reports.items():
        v = spectral.verify_inequality(r, ref)
        verdicts.append({"t": t, "t_clear": 1.0, **v.to_dict()})
    freq = np.stack([reports[t].bands.frequency for t in ts])
    save_tensor(freq, out / "band_frequency.fdgt")
    (out / "analysis.json").write_text(json.dumps(
        {"reports": [reports[t].to_dict() for t in ts], "verdicts": verdicts}, indent=2))
    write_report(out, "analyze", used, {"qf": qf, "t": ts}, ["analysis.json", "band_frequency.fdgt"],
                 {"aggregate": {str(t): reports[t].aggregate for t in ts}}, started,
                 {"all_passed": all(v["passed"] for v in verdicts), "skipped": skipped})
    return 0


# ------------------------------------------------------------------ decompose

def _decomposer(mode: str, reference, qf: int, spectrum=None, corrected=None):
    if mode == "passthrough":
        return dcm.PassthroughDecomposer()
    if mode == "oracle":
        if reference is None:
            raise UsageError("oracle decomposer requires --reference")
        return dcm.OracleDecomposer(to_float(read_image(reference)), qf)
    if mode == "external":
        if not spectrum or not corrected:
            raise UsageError("external decomposer requires --spectrum and --corrected tensors")
        return dcm.TensorFileDecomposer(spectrum, corrected)
    raise UsageError(f"unknown decomposer {mode!r}")


def cmd_decompose(args) -> int:
    started = time.time()
    qf = _check_qf(args.qf if args.qf is not None else 80)
    impl = _decomposer(args.mode, args.reference, qf, args.spectrum, args.corrected)
    img = to_float(read_image(args.input))
    result = dcm.decompose(img, impl)
    out = _outdir(args.out)
    dcm.save_spectrum(result.spectrum, out / "spectrum.fdgt", qf=qf, mode=args.mode)
    dcm.save_spectrum(result.corrected_spectrum, out / "corrected_spectrum.fdgt", qf=qf, mode=args.mode)
    name = write_image(to_u8(result.corrected), out, "corrected")
    d1 = dcm.to_log_dct(img)
    resid = dcm.additive_residual(d1, result.spectrum, result.corrected_spectrum)
    inputs = [args.input] + ([args.reference] if args.reference else [])
    write_report(out, "decompose", inputs, {"mode": args.mode, "qf": qf},
                 ["spectrum.fdgt", "corrected_spectrum.fdgt", name], {"additive_residual_off_dc": resid}, started)
    return 0


# ------------------------------------------------------------------ restore

RESTORE_KEYS = {f for f in dfn.SamplerConfig.__dataclass_fields__} | {
    "qf", "reference", "omega", "window", "t_min", "external_denoiser"}


def _load_external_denoiser(target: str | None):
    if not target or ":" not in target:
        raise UsageError("external denoiser needs external_denoiser = 'module:factory' in the config")
    mod, attr = target.split(":", 1)
    try:
        factory = getattr(importlib.import_module(mod), attr)
    except (ImportError, AttributeError) as exc:
        raise UsageError(f"cannot load external denoiser {target}: {exc}") from exc
    return factory()


def cmd_restore(args) -> int:
    started = time.time()
    doc = load_config(args.config, RESTORE_KEYS)
    flag_map = {"seed": args.seed, "patch": args.patch, "stride": args.stride, "denoiser": args.denoiser,
                "decomposer": args.decomposer, "predictor": args.predictor, "qf": args.qf,
                "reference": args.reference, "T": args.steps}
    doc.update({k: v for k, v in flag_map.items() if v is not None})
    params = dict(doc)
    qf = _check_qf(doc.pop("qf", 80))
    reference = doc.pop("reference", None)
    haze_params = haze.HazeParams(omega=doc.pop("omega", 0.95), window=doc.pop("window", 15),
                                  t_min=doc.pop("t_min", 0.05))
    external = doc.pop("external_denoiser", None)
    try:
        cfg = dfn.SamplerConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc

    img_u8 = read_image(args.input)
    img = to_float(img_u8)
    if min(img.shape[:2]) < cfg.patch:
        raise UsageError(f"image {img.shape[1]}x{img.shape[0]} is smaller than patch size {cfg.patch}")
    decomposer = _decomposer(cfg.decomposer, reference if cfg.decomposer == "oracle" else None, qf,
                             args.spectrum, args.corrected)
    if cfg.denoiser == "analytic":
        denoiser = dfn.AnalyticGaussianDenoiser(cfg.analytic_mu, cfg.analytic_sigma)
    elif cfg.denoiser == "external":
        denoiser = _load_external_denoiser(external)
    else:
        raise UsageError(f"unknown denoiser {cfg.denoiser!r}")
    if cfg.predictor == "zero":
        predictor = dfn.ZeroOffsetPredictor()
    elif cfg.predictor == "heuristic":
        predictor = dfn.HeuristicPredictor(cfg.kappa, cfg.max_offset)
    else:
        raise UsageError(f"unknown predictor {cfg.predictor!r}")

    out = _outdir(args.out)
    snaps = []

    def snapshot(step, j):
        name = f"trajectory_{step:05d}.fdgt"
        save_tensor(j, out / name)
        snaps.append(name)

    result = dfn.restore(img, decomposer, denoiser, predictor, cfg, haze_params, snapshot=snapshot)
    restored = to_u8(result.image)
    names = [write_image(restored, out, "restored")] + snaps
    save_tensor(result.image, out / "restored.fdgt")
    save_tensor(result.transmission, out / "transmission.fdgt")
    names += ["restored.fdgt", "transmission.fdgt"]
    m = {}
    inputs = [args.input]
    if reference:
        ref = read_image(reference)
        if ref.shape == restored.shape:
            m["restored_vs_reference"] = _finite(metrics(to_float(ref), to_float(restored)))
        inputs.append(reference)
    stats = {"mean": float(result.image.mean()), "std": float(result.image.std())}
    write_report(out, "restore", inputs, params, names, m, started,
                 {"seed": cfg.seed, "sampler_config": cfg.to_dict(), "output_stats": stats})
    return 0


# ------------------------------------------------------------------ metrics / parse-jpeg

def cmd_metrics(args) -> int:
    started = time.time()
    a, b = to_float(read_image(args.a)), to_float(read_image(args.b))
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.shape} vs {b.shape}")
    m = _finite(metrics(a, b))
    print(json.dumps(m))
    if args.out:
        write_report(_outdir(args.out), "metrics", [args.a, args.b], {}, [], m, started)
    return 0


def cmd_parse_jpeg(args) -> int:
    started = time.time()
    data = Path(args.input).read_bytes()
    parsed = jfif.read_jfif(data)
    out = _outdir(args.out)
    names = []
    for tid, table in sorted(parsed.quant_tables.items()):
        name = f"quant_table_{tid}.fdgt"
        save_tensor(table, out / name)
        names.append(name)
    for i, grid in enumerate(parsed.coeff_blocks):
        name = f"coeffs_{i}.fdgt"
        save_tensor(grid, out / name)
        names.append(name)
    summary = {
        "width": parsed.width,
        "height": parsed.height,
        "components": [vars(c) for c in parsed.components],
        "quant_tables": {str(k): [int(x) for x in v] for k, v in parsed.quant_tables.items()},
        "segments": [{"marker": s.name, "offset": s.offset, "length": len(s.payload)}
                     for s in jfif.parse_markers(data)],
        "block_grid": list(parsed.block_grid),
        "restart_interval": parsed.restart_interval,
    }
    (out / "jpeg.json").write_text(json.dumps(summary, indent=2))
    names.append("jpeg.json")
    write_report(out, "parse-jpeg", [args.input], {}, names, {}, started)
    return 0


# ------------------------------------------------------------------ plumbing

def _check_qf(qf) -> int:
    try:
        qf = int(qf)
    except (TypeError, ValueError):
        raise UsageError(f"invalid quality factor {qf!r}") from None
    if not 1 <= qf <= 100:
        raise UsageError(f"quality factor must be in 1..100, got {qf}")
    return qf


def _outdir(path) -> Path:
    out = Path(path or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fdgdiff", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("degrade", help="synthesize haze and JPEG compression")
    d.add_argument("input")
    d.add_argument("--config")
    d.add_argument("--qf", type=int)
    d.add_argument("--beta", type=float)
    d.add_argument("--airlight", type=float)
    d.add_argument("--depth", help="FDGT depth map; defaults to a vertical ramp")
    d.add_argument("--transmission", type=float, help="constant transmission instead of depth")
    d.add_argument("--seed", type=_u64)
    d.add_argument("--out", default=".")
    d.set_defaults(func=cmd_degrade)

    a = sub.add_parser("analyze", help="haze vs. quantization annihilation statistics")
    a.add_argument("corpus")
    a.add_argument("--qf", type=int)
    a.add_argument("--t", type=float, nargs="+", default=[1.0, 0.5])
    a.add_argument("--out", default=".")
    a.set_defaults(func=cmd_analyze)

    dc = sub.add_parser("decompose", help="log-DCT spectrum decomposition")
    dc.add_argument("input")
    dc.add_argument("--mode", "--decomposer", dest="mode", choices=["oracle", "passthrough", "external"],
                    default="passthrough")
    dc.add_argument("--reference")
    dc.add_argument("--spectrum")
    dc.add_argument("--corrected")
    dc.add_argument("--qf", type=int)
    dc.add_argument("--out", default=".")
    dc.set_defaults(func=cmd_decompose)

    r = sub.add_parser("restore", help="patch-based diffusion restoration")
    r.add_argument("input")
    r.add_argument("--config")
    r.add_argument("--qf", type=int)
    r.add_argument("--seed", type=_u64)
    r.add_argument("--patch", type=int)
    r.add_argument("--stride", type=int)
    r.add_argument("--steps", type=int, help="number of diffusion steps T")
    r.add_argument("--denoiser", choices=["analytic", "external"])
    r.add_argument("--decomposer", choices=["oracle", "passthrough", "external"])
    r.add_argument("--predictor", choices=["zero", "heuristic"])
    r.add_argument("--reference")
    r.add_argument("--spectrum")
    r.add_argument("--corrected")
    r.add_argument("--out", default=".")
    r.set_defaults(func=cmd_restore)

    m = sub.add_parser("metrics", help="PSNR and SSIM of two images")
    m.add_argument("a")
    m.add_argument("b")
    m.add_argument("--out")
    m.set_defaults(func=cmd_metrics)

    j = sub.add_parser("parse-jpeg", help="dump quantization tables and coefficients")
    j.add_argument("input")
    j.add_argument("--out", default=".")
    j.set_defaults(func=cmd_parse_jpeg)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            log.setLevel(logging.INFO)
        return args.func(args)
    except UsageError as exc:
        print(f"fdgdiff: usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ImageFormatError, jfif.JpegError, RuntimeError, ValueError) as exc:
        print(f"fdgdiff: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line harness: synthetic experiments, reconstruction and benchmarks.

Commands
--------
synth
    Load an image, draw a measurement operator from ``--seed``, measure,
    reconstruct with the requested models and write the artifacts.
reconstruct
    Reconstruct from a measurement directory written by ``synth``.
benchmark
    Run ``synth`` over every image of a directory and append per-model
    summary rows.

Settings are resolved as defaults < ``--config`` file < ``TURBOAMP_*``
environment variables < command-line flags.  The config file is flat
``key = value`` text using the field names of ``TurboConfig`` and
``HyperParams``; array values are comma separated and pairs are read in
(shape, rate) or (c, d) order.

Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
"""

import argparse
import concurrent.futures
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .learning import HyperParams
from .measurement import gen_operator, load_operator, measure, orthonormal_operator
from .turbo import MODELS, TurboConfig, bg_amp, nmse_db, reconstruct
from .wavelet import build_tree_index

logger = logging.getLogger("turboamp")

ENV_PREFIX = "TURBOAMP_"
DEFAULT_M = 5000
DEFAULT_J = 4
PIXEL_SCALE = 255.0
IMAGE_SUFFIXES = (".pgm", ".png")

METRICS_COLUMNS = ["image", "m", "model", "nmse_db", "turbo_iters", "total_amp_iters", "seed"]
TIMING_COLUMNS = ["image", "model", "wall_time_s"]

CONFIG_KEYS_TURBO = {"max_turbo": int, "turbo_tol": float, "max_amp": int, "amp_tol": float,
                     "c_init_factor": float, "llr_clamp": float, "learn": "bool"}
CONFIG_KEYS_HYPER = ("gamma_noise", "gamma_level", "gamma_level_small", "beta_root",
                     "beta_approx", "beta_trans11", "beta_trans00")
CONFIG_KEYS_RUN = {"m": int, "sigma2": float, "seed": int, "model": str, "j_levels": int}

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """Invalid user input; maps to exit code 1."""


# ----------------------------------------------------------------------------
# images


def _read_token(buf, pos):
    # skip whitespace and '#' comments, then read one header token
    while True:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(buf) and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise UsageError("truncated PGM header")
    return buf[start:pos], pos


def _decode_pgm(raw):
    magic, pos = _read_token(raw, 0)
    if magic != b"P5":
        raise UsageError(f"unsupported image format {magic[:2]!r}; expected binary PGM (P5)")
    width, pos = _read_token(raw, pos)
    height, pos = _read_token(raw, pos)
    maxval, pos = _read_token(raw, pos)
    w, h, maxval = int(width), int(height), int(maxval)
    if not 0 < maxval < 256:
        raise UsageError(f"only 8-bit PGM is supported, got maxval {maxval}")
    pos += 1  # single whitespace byte before the raster
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).astype(float)


def _decode_png(path):
    try:
        from PIL import Image
    except ImportError as err:  # pragma: no cover - depends on the environment
        raise UsageError("PNG input needs Pillow; install it or convert to PGM") from err
    with Image.open(path) as im:
        if im.mode not in ("L", "P", "1"):
            raise UsageError(f"{path}: only grayscale images are supported (mode {im.mode})")
        return np.asarray(im.convert("L"), dtype=float)


def _largest_pow2(n):
    return 1 << (int(n).bit_length() - 1)


def center_crop(img):
    """Central crop to the largest power-of-two square that fits."""
    h, w = img.shape
    d = _largest_pow2(min(h, w))
    r0, c0 = (h - d) // 2, (w - d) // 2
    return img[r0:r0 + d, c0:c0 + d]


def load_image(path, crop=False):
    """Read an 8-bit grayscale PGM (or PNG via Pillow) as float pixels in [0, 255]."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".png":
            img = _decode_png(path)
        else:
            img = _decode_pgm(path.read_bytes())
    except (OSError, ValueError) as err:
        raise UsageError(f"cannot read image {path}: {err}") from err
    h, w = img.shape
    square_pow2 = h == w and h == _largest_pow2(h)
    if not square_pow2:
        if not crop:
            raise UsageError(f"{path}: {h}x{w} is not a power-of-two square; pass --crop "
                             "to take the central crop")
        img = center_crop(img)
    return img


def save_image(img, path):
    """Write pixels as binary PGM after clamping to [0, 255] and rounding."""
    px = np.clip(np.rint(np.asarray(img, dtype=float)), 0, 255).astype(np.uint8)
    h, w = px.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(px.tobytes())


# ----------------------------------------------------------------------------
# configuration


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _parse_array(text):
    parts = str(text).replace(";", ",").replace(" ", ",").split(",")
    try:
        return np.array([float(p) for p in parts if p], dtype=float)
    except ValueError as err:
        raise UsageError(f"bad numeric list {text!r}") from err


def _convert(key, value):
    if key in CONFIG_KEYS_HYPER:
        return _parse_array(value)
    kind = CONFIG_KEYS_TURBO.get(key) or CONFIG_KEYS_RUN.get(key)
    if kind is None:
        raise UsageError(f"unknown setting {key!r}")
    if kind == "bool":
        return _parse_bool(value)
    try:
        return kind(value)
    except ValueError as err:
        raise UsageError(f"bad value for {key}: {value!r}") from err


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    settings = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as err:
        raise UsageError(f"cannot read config {path}: {err}") from err
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        settings[key.lower()] = _convert(key.lower(), value)
    return settings


def env_settings(environ=None):
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower()
            out[key] = _convert(key, value)
    return out


def resolve_settings(args, environ=None):
    """Merge config file, environment and flags into one settings dict."""
    settings = {"m": DEFAULT_M, "sigma2": 0.0, "seed": 0, "model": "both", "j_levels": DEFAULT_J}
    if getattr(args, "config", None):
        settings.update(read_config(args.config))
    settings.update(env_settings(environ))
    flags = {"m": args.m, "sigma2": args.sigma2, "seed": args.seed, "model": args.model,
             "max_turbo": args.max_turbo, "max_amp": args.max_amp}
    settings.update({k: v for k, v in flags.items() if v is not None})
    if settings["model"] not in MODELS + ("both",):
        raise UsageError(f"model must be bg, gm or both, got {settings['model']!r}")
    if settings["sigma2"] < 0:
        raise UsageError("sigma2 must be non-negative")
    return settings


def _models(settings):
    return list(MODELS) if settings["model"] == "both" else [settings["model"]]


def build_config(settings, model, tree):
    """TurboConfig for ``model`` with hyperparameter overrides applied."""
    hyper = HyperParams.default(tree, model)
    overrides = {k: settings[k] for k in CONFIG_KEYS_HYPER if k in settings}
    if model == "bg":
        overrides.pop("gamma_level_small", None)
    try:
        for key, value in overrides.items():
            setattr(hyper, key, value)
        hyper.__post_init__()
        turbo_kw = {k: settings[k] for k in CONFIG_KEYS_TURBO if k in settings}
        return TurboConfig(model=model, hyper=hyper, seed=settings["seed"], **turbo_kw)
    except ValueError as err:
        raise UsageError(f"invalid configuration: {err}") from err


# ----------------------------------------------------------------------------
# running


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _finite(record):
    return {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
            for k, v in record.items()}


def write_trace(report, path):
    with open(path, "w") as fh:
        for record in report.trace:
            fh.write(json.dumps(_finite(record), default=_json_default, sort_keys=True) + "\n")


def make_operator(kind, m, n, seed, J):
    if kind == "orthonormal":
        if m != n:
            raise UsageError("the orthonormal operator needs m equal to the pixel count")
        return orthonormal_operator(n, seed, J=J)
    return gen_operator(m, n, seed, J=J)


def run_models(obs, op, settings, models, truth=None, baseline=False):
    """Reconstruct with each model; returns ``[(model, report, seconds)]``."""
    tree = build_tree_index(op.side, op.J)
    out = []
    for model in models:
        cfg = build_config(settings, model, tree)
        t0 = time.perf_counter()
        report = bg_amp(obs, op, cfg, truth=truth) if baseline else reconstruct(obs, op, tree, cfg, truth=truth)
        out.append((model, report, time.perf_counter() - t0))
    return out


def metrics_row(image_id, m, model, report, seed):
    nmse = "" if report.nmse_db is None else f"{report.nmse_db:.2f}"
    return {"image": image_id, "m": m, "model": model, "nmse_db": nmse,
            "turbo_iters": report.turbo_iters, "total_amp_iters": report.total_amp_iters,
            "seed": seed}


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def synth_one(image_path, settings, out_dir, crop=False, operator="gaussian", trace=False,
              baseline=False):
    """Full synthetic experiment on one image; returns (metrics rows, timing rows)."""
    image_path = Path(image_path)
    img = load_image(image_path, crop=crop)
    n = img.size
    m = settings["m"]
    if not 1 <= m <= n:
        raise UsageError(f"m={m} must lie in [1, {n}] for {image_path.name}")
    J = settings["j_levels"]
    if not 1 <= J or (1 << J) > img.shape[0]:
        raise UsageError(f"j_levels={J} does not fit a {img.shape[0]}x{img.shape[0]} image")

    x = img / PIXEL_SCALE
    op = make_operator(operator, m, n, settings["seed"], J)
    obs = measure(op, x, settings["sigma2"] / PIXEL_SCALE**2, seed=[settings["seed"], 1])

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = image_path.stem
    op.save_header(out_dir / f"{stem}_operator.json")
    np.save(out_dir / f"{stem}_y.npy", obs.y * PIXEL_SCALE)

    rows, timing = [], []
    label = "bgamp" if baseline else None
    for model, report, seconds in run_models(obs, op, settings, _models(settings), truth=x,
                                             baseline=baseline):
        name = label or model
        save_image(report.image_hat * PIXEL_SCALE, out_dir / f"{stem}_{name}.pgm")
        if trace:
            write_trace(report, out_dir / f"{stem}_{name}_trace.jsonl")
        if report.diverged:
            logger.warning("%s/%s: %s", stem, name, report.message)
        rows.append(metrics_row(image_path.name, m, name, report, settings["seed"]))
        timing.append({"image": image_path.name, "model": name, "wall_time_s": f"{seconds:.3f}"})
    return rows, timing


# ----------------------------------------------------------------------------
# commands


def cmd_synth(args, settings):
    rows, timing = synth_one(args.input, settings, args.out, crop=args.crop,
                             operator=args.operator, trace=args.trace, baseline=args.baseline)
    write_csv(Path(args.out) / "metrics.csv", METRICS_COLUMNS, rows)
    write_csv(Path(args.out) / "timing.csv", TIMING_COLUMNS, timing)
    for row in rows:
        print(f"{row['image']} {row['model']}: NMSE {row['nmse_db']} dB, "
              f"{row['turbo_iters']} turbo rounds")
    return EXIT_OK


def _find_one(directory, pattern):
    hits = sorted(Path(directory).glob(pattern))
    if len(hits) != 1:
        raise UsageError(f"expected exactly one {pattern} in {directory}, found {len(hits)}")
    return hits[0]


def cmd_reconstruct(args, settings):
    src = Path(args.input)
    if not src.is_dir():
        raise UsageError(f"{src} is not a measurement directory written by synth")
    header = _find_one(src, "*_operator.json")
    stem = header.name[: -len("_operator.json")]
    op = load_operator(header)
    y = np.load(src / f"{stem}_y.npy") / PIXEL_SCALE
    if y.shape != (op.m,):
        raise UsageError(f"{stem}_y.npy has shape {y.shape}, operator expects ({op.m},)")
    truth = None
    if args.truth:
        truth = load_image(args.truth, crop=args.crop) / PIXEL_SCALE
        if truth.size != op.n:
            raise UsageError("truth image does not match the operator size")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, timing = [], []
    for model, report, seconds in run_models(y, op, settings, _models(settings), truth=truth,
                                             baseline=args.baseline):
        name = "bgamp" if args.baseline else model
        save_image(report.image_hat * PIXEL_SCALE, out / f"{stem}_{name}.pgm")
        if args.trace:
            write_trace(report, out / f"{stem}_{name}_trace.jsonl")
        rows.append(metrics_row(stem, op.m, name, report, op.seed))
        timing.append({"image": stem, "model": name, "wall_time_s": f"{seconds:.3f}"})
    write_csv(out / "metrics.csv", METRICS_COLUMNS, rows)
    write_csv(out / "timing.csv", TIMING_COLUMNS, timing)
    return EXIT_OK


def _bench_job(job):
    path, settings, out_dir, crop, operator, trace, baseline = job
    try:
        return synth_one(path, settings, out_dir, crop, operator, trace, baseline), None
    except (UsageError, ValueError, OSError) as err:
        return None, f"{Path(path).name}: {err}"


def summary_rows(rows, timing):
    """One ``mean`` row per model for metrics and timing."""
    metric_out, timing_out = [], []
    for model in sorted({r["model"] for r in rows}):
        mine = [r for r in rows if r["model"] == model]
        nmse = [float(r["nmse_db"]) for r in mine if r["nmse_db"] != ""]
        metric_out.append({"image": "mean", "m": mine[0]["m"], "model": model,
                           "nmse_db": f"{np.mean(nmse):.2f}" if nmse else "",
                           "turbo_iters": f"{np.mean([r['turbo_iters'] for r in mine]):.2f}",
                           "total_amp_iters": f"{np.mean([r['total_amp_iters'] for r in mine]):.2f}",
                           "seed": mine[0]["seed"]})
        secs = [float(t["wall_time_s"]) for t in timing if t["model"] == model]
        timing_out.append({"image": "mean", "model": model, "wall_time_s": f"{np.mean(secs):.3f}"})
    return metric_out, timing_out


def cmd_benchmark(args, settings):
    src = Path(args.input)
    if not src.is_dir():
        raise UsageError(f"{src} is not a directory")
    images = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not images:
        raise UsageError(f"no .pgm or .png images in {src}")
    out = Path(args.out)
    jobs = [(p, settings, out, args.crop, args.operator, args.trace, args.baseline)
            for p in images]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_bench_job, jobs))
    else:
        results = [_bench_job(j) for j in jobs]

    rows, timing = [], []
    for (res, err) in results:
        if err is not None:
            logger.warning("skipping %s", err)
            continue
        rows.extend(res[0])
        timing.extend(res[1])
    if not rows:
        logger.error("every image failed")
        return EXIT_RUNTIME
    mean_rows, mean_timing = summary_rows(rows, timing)
    write_csv(out / "metrics.csv", METRICS_COLUMNS, rows + mean_rows)
    write_csv(out / "timing.csv", TIMING_COLUMNS, timing + mean_timing)
    for row in mean_rows:
        print(f"mean {row['model']}: NMSE {row['nmse_db']} dB over {len(images)} images")
    return EXIT_OK


# ----------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", required=True, help="image, measurement directory or image directory")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--m", type=int, help=f"number of measurements (default {DEFAULT_M})")
    common.add_argument("--sigma2", type=float, help="noise variance on the 0-255 pixel scale")
    common.add_argument("--model", choices=list(MODELS) + ["both"], help="signal model (default both)")
    common.add_argument("--seed", type=int, help="seed for the operator and the noise")
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--crop", action="store_true", help="center-crop to a power-of-two square")
    common.add_argument("--max-turbo", dest="max_turbo", type=int, help="turbo round cap")
    common.add_argument("--max-amp", dest="max_amp", type=int, help="AMP iteration cap per round")
    common.add_argument("--trace", action="store_true", help="write per-round JSON-lines traces")
    common.add_argument("--baseline", action="store_true",
                        help="run plain BG-AMP without tree structure instead")
    common.add_argument("--operator", choices=["gaussian", "orthonormal"], default="gaussian",
                        help="measurement matrix family (orthonormal needs m = N)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="turboamp", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="measure and reconstruct one image")
    rec = sub.add_parser("reconstruct", parents=[common], help="reconstruct saved measurements")
    rec.add_argument("--truth", help="ground-truth image for the NMSE column")
    bench = sub.add_parser("benchmark", parents=[common], help="run synth over a directory")
    bench.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    return parser


COMMANDS = {"synth": cmd_synth, "reconstruct": cmd_reconstruct, "benchmark": cmd_benchmark}


def main(argv=None, environ=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(args, environ)
        return COMMANDS[args.command](args, settings)
    except UsageError as err:
        print(f"turboamp: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as err:  # noqa: BLE001 - report any runtime failure as exit 2
        logger.debug("runtime failure", exc_info=True)
        print(f"turboamp: runtime failure: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: ``melfb {design,features,verify,arch}``.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O or
input-format error.
"""

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass
from math import gcd
from pathlib import Path

import numpy as np

from . import cnn, io
from .filterbank import (MAX_AVERAGING_WIDTH, Approximation, FixedWidthHann,
                         NaiveBoxcar, VariableWidthHann, design_audio_bank,
                         design_filters, effective_support, frame_count,
                         gaussian_bank, stft_features, variant_features)
from .mel import build_triangles, default_filters, log_compress, mel_scale_centers
from .spreading import empirical_error_per_bin, stride_sweep, theorem1_bounds
from .tfcore import Lattice, hann

log = logging.getLogger("melfb")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
VARIANTS = ("approx", "naive", "fixed", "varwidth", "stft")
PADDINGS = ("none", "reflect")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Config:
    sample_rate: int = 22050
    frame_len: int = 1024
    hop: int = 315
    stride: int = 21
    K: int = 80
    f_min: float = 27.5
    f_max: float = 8000.0
    clip_floor: float = 1e-7
    variant: str = "approx"
    eps: float = 1e-6
    seed: int = 0
    padding: str = "none"
    fixed_width: int = 504
    max_kernel: int = 1024
    verify_n: int = 512
    sigma: float = 2.0

    def __post_init__(self):
        for name in ("sample_rate", "frame_len", "hop", "stride", "K",
                     "f_min", "f_max", "clip_floor", "eps", "fixed_width",
                     "max_kernel", "verify_n", "sigma"):
            if getattr(self, name) <= 0:
                raise UsageError(f"{name} must be positive")
        if self.seed < 0:
            raise UsageError("seed must be non-negative")
        if self.hop % self.stride:
            raise UsageError(
                f"hop {self.hop} is not divisible by stride {self.stride}")
        if not self.f_min < self.f_max:
            raise UsageError(
                f"f_min ({self.f_min}) must be below f_max ({self.f_max})")
        if self.f_max > self.sample_rate / 2:
            raise UsageError("f_max exceeds the Nyquist frequency")
        if self.variant not in VARIANTS:
            raise UsageError(f"variant must be one of {', '.join(VARIANTS)}")
        if self.padding not in PADDINGS:
            raise UsageError(f"padding must be one of {', '.join(PADDINGS)}")
        if self.fixed_width > MAX_AVERAGING_WIDTH:
            raise UsageError(
                f"fixed_width is limited to {MAX_AVERAGING_WIDTH} samples")

    @classmethod
    def from_file(cls, path, **overrides):
        """Read ``key = value`` lines (``#`` starts a comment)."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        with open(path) as fh:
            for no, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{no}: expected key = value")
                key, val = (s.strip() for s in line.split("=", 1))
                if key not in types:
                    raise UsageError(f"{path}:{no}: unknown key {key!r}")
                values[key] = _convert(types[key], val, f"{path}:{no}")
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def _convert(typ, text, where):
    conv = {"int": int, "float": float, "str": str}[
        typ if isinstance(typ, str) else typ.__name__]
    try:
        return conv(text)
    except ValueError:
        raise UsageError(f"{where}: cannot read {text!r} as {conv.__name__}")


def _config(args):
    over = {"seed": getattr(args, "seed", None),
            "stride": getattr(args, "stride", None),
            "variant": getattr(args, "variant", None)}
    if args.config:
        return Config.from_file(args.config, **over)
    return Config(**{k: v for k, v in over.items() if v is not None})


def _read_numbers(path):
    try:
        return np.loadtxt(path, ndmin=1, dtype=float)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}")


def _sidecar(path):
    return Path(path).with_suffix(".csv")


# -- design ----------------------------------------------------------------

def _design(cfg, centers=None):
    if centers is None:
        centers = mel_scale_centers(cfg.K, cfg.f_min, cfg.f_max,
                                    cfg.sample_rate)
    try:
        return design_audio_bank(cfg.sample_rate, cfg.frame_len, cfg.K,
                                 cfg.f_min, cfg.f_max, cfg.eps, cfg.max_kernel,
                                 centers=centers)
    except ValueError as exc:
        raise UsageError(str(exc))


def cmd_design(args, out=None):
    out = out or sys.stdout
    cfg = _config(args)
    bank, _ = _design(cfg)
    io.save_bank(bank, args.out)
    io.write_bank_csv(_sidecar(args.out), bank)
    print(f"{'channel':>7} {'center_hz':>10} {'support':>8}", file=out)
    for ch in bank:
        print(f"{ch.index:>7} {ch.center_frequency:>10.1f} {ch.support():>8}",
              file=out)
    return EXIT_OK


# -- features --------------------------------------------------------------

def _standardize(x):
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    return (x - mu) / np.where(sd > 0, sd, 1.0)


def compute_features(x, cfg, bank=None, centers=None, widths=None):
    """Log-compressed ``(K, frames)`` map for the configured variant."""
    x = np.asarray(x, dtype=float)
    if cfg.padding == "reflect":
        pad = (cfg.frame_len - 1) // 2
        if x.size <= pad:
            raise UsageError("signal too short for reflect padding")
        x = np.pad(x, pad, mode="reflect")
    if frame_count(x.size, cfg.frame_len, cfg.hop) == 0:
        raise UsageError(
            f"signal of {x.size} samples is shorter than one frame "
            f"({cfg.frame_len})")
    if centers is None:
        centers = (bank.center_frequencies if bank is not None else
                   mel_scale_centers(cfg.K, cfg.f_min, cfg.f_max,
                                     cfg.sample_rate))
    try:
        filters = build_triangles(centers, cfg.frame_len, cfg.sample_rate, 2,
                                  cfg.f_min, cfg.f_max)
    except ValueError as exc:
        raise UsageError(str(exc))
    if cfg.variant == "stft":
        power = stft_features(x, filters, cfg.frame_len, cfg.hop)
    else:
        if bank is None and cfg.variant in ("approx", "varwidth"):
            bank, _ = _design(cfg, centers)
        if cfg.variant == "approx":
            variant = Approximation()
        elif cfg.variant == "naive":
            variant = NaiveBoxcar()
        elif cfg.variant == "fixed":
            variant = FixedWidthHann(cfg.fixed_width)
        else:
            if widths is None:
                widths = [int(np.clip(effective_support(ch.averaging),
                                      cfg.stride, MAX_AVERAGING_WIDTH))
                          for ch in bank]
            try:
                variant = VariableWidthHann(tuple(int(w) for w in widths))
            except ValueError as exc:
                raise UsageError(str(exc))
        try:
            power = variant_features(x, variant, filters, bank, cfg.stride,
                                     cfg.hop, cfg.frame_len, cfg.max_kernel)
        except ValueError as exc:
            raise UsageError(str(exc))
    # roundoff can leave tiny negatives after signed averaging windows
    return log_compress(np.maximum(power, 0.0), cfg.clip_floor), filters


def cmd_features(args, out=None):
    out = out or sys.stdout
    cfg = _config(args)
    audio = io.read_wav(args.audio, cfg.sample_rate)
    bank = None
    if args.bank:
        bank = io.load_bank(args.bank, cfg.sample_rate)
        if len(bank) != cfg.K and args.centers is None:
            cfg = dataclasses.replace(cfg, K=len(bank))
    centers = _read_numbers(args.centers) if args.centers else None
    widths = _read_numbers(args.widths) if args.widths else None
    feats, filters = compute_features(audio.samples, cfg, bank, centers,
                                      widths)
    if args.standardize:
        feats = _standardize(feats)
    io.write_features_csv(args.out or out, feats, filters.center_frequencies)
    log.info("%d channels x %d frames", *feats.shape)
    return EXIT_OK


# -- verify ----------------------------------------------------------------

def _gaussian_setup(cfg, n):
    centers = mel_scale_centers(cfg.K, cfg.f_min, cfg.f_max, cfg.sample_rate)
    bins = np.unique(np.rint(centers * n / cfg.sample_rate).astype(int))
    rhos = cfg.sigma * np.linspace(0.9, 0.3, bins.size)
    return gaussian_bank(n, cfg.sigma, bins, rhos, cfg.sample_rate)


def _hann_setup(cfg, n):
    g = hann(n // 2, n)
    filters = default_filters(n, cfg.sample_rate, cfg.K, cfg.f_min, cfg.f_max)
    try:
        bank = design_filters(g, filters, cfg.eps)
    except ValueError as exc:
        raise UsageError(str(exc))
    return g, bank, filters


def cmd_verify(args, out=None):
    out = out or sys.stdout
    cfg = _config(args)
    setup = _gaussian_setup if args.mode == "gaussian" else _hann_setup
    if args.stride_sweep:
        strides = tuple(sorted({cfg.stride, 3, 1}, reverse=True))
        step = 1
        for s in strides:
            step = step * s // gcd(step, s)
        n = cfg.verify_n - cfg.verify_n % step
        if n == 0:
            raise UsageError(f"verify_n must be at least {step}")
        g, bank, filters = setup(cfg, n)
        errors = stride_sweep(bank, g, filters, strides, args.n_signals,
                              cfg.seed)
        if args.out:
            io.write_sweep_csv(args.out, filters.center_frequencies, strides,
                               errors)
        totals = errors.mean(axis=1)
        for s, t in zip(strides, totals):
            print(f"stride {s:>3}: mean error {float(t)!r}", file=out)
        mono = bool(np.all(np.diff(totals) <= 0))
        print(f"non-increasing with smaller stride: {'yes' if mono else 'no'}",
              file=out)
        return EXIT_OK

    g, bank, filters = setup(cfg, cfg.verify_n)
    bounds = theorem1_bounds(bank, g, filters, Lattice(1, 1))
    emp = empirical_error_per_bin(bank, g, filters, Lattice(1, 1),
                                  args.n_signals, cfg.seed)
    if args.out:
        io.write_report_csv(args.out, filters.center_frequencies, bounds,
                            emp["mean"], emp["max"])
    bad = np.flatnonzero(emp["max_normalized"] > bounds + 1e-12)
    print(f"channels: {len(bank)}, signals: {args.n_signals}, "
          f"max error / bound: {np.max(emp['max_normalized'] / bounds):.3g}",
          file=out)
    if bad.size:
        print(f"bound violated in channels {bad.tolist()}", file=sys.stderr)
        return EXIT_VERIFY
    print("bound holds for every channel", file=out)
    return EXIT_OK


# -- arch ------------------------------------------------------------------

def cmd_arch(args, out=None):
    out = out or sys.stdout
    net = cnn.build_architecture(args.variant)
    print(net.summary(), file=out)
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--stride", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(
        prog="melfb",
        description="Adaptive filter banks approximating mel spectrograms.")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", parents=[common],
                       help="design a filter bank (MKFB plus CSV sidecar)")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_design)

    f = sub.add_parser("features", parents=[common],
                       help="log-compressed features of a WAV file as CSV")
    f.add_argument("audio")
    f.add_argument("--variant", choices=VARIANTS)
    f.add_argument("--bank", help="MKFB file from 'design'")
    f.add_argument("--centers", help="text file of centre frequencies (Hz)")
    f.add_argument("--widths", help="text file of averaging widths (samples)")
    f.add_argument("--standardize", action="store_true",
                   help="zero mean, unit variance per channel")
    f.add_argument("--out", help="CSV path (default: standard output)")
    f.set_defaults(func=cmd_features)

    v = sub.add_parser("verify", parents=[common],
                       help="error bound versus empirical error report")
    v.add_argument("--mode", choices=("hann", "gaussian"), default="hann")
    v.add_argument("--n-signals", type=int, default=200)
    v.add_argument("--stride-sweep", action="store_true")
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    a = sub.add_parser("arch", help="print a network architecture table")
    a.add_argument("variant", choices=sorted(cnn.ARCHITECTURES))
    a.add_argument("--config", help=argparse.SUPPRESS)
    a.set_defaults(func=cmd_arch)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s: %(message)s")
    try:
        if getattr(args, "n_signals", 1) < 1:
            raise UsageError("--n-signals must be at least 1")
        return args.func(args)
    except UsageError as exc:
        print(f"melfb: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, io.FormatError) as exc:
        print(f"melfb: {exc}", file=sys.stderr)
        return EXIT_IO

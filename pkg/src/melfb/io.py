"""File formats: WAV input, binary filter-bank and network containers, CSV.

Binary containers are little-endian.  A filter bank (``MKFB``) is stored as

    magic b"MKFB", version u32, K u32, N u32, then per channel:
    centre frequency f64, kernel length u32, kernel as (re, im) f64 pairs,
    averaging length u32, averaging f64s.

Kernels and averaging windows are in centred order (index ``i`` is time
``i - len // 2``).  Network parameters (``MKNN``) use

    magic b"MKNN", version u32, architecture JSON length u32, JSON (UTF-8),
    array count u32, then per array: name length u32, name (UTF-8),
    ndim u32, shape u32 * ndim, f64 values in C order.
"""

import csv
import json
import struct
import wave

import numpy as np

from .cnn import ConvLayer, DenseStage, Network
from .filterbank import FilterBank, FilterChannel

__all__ = [
    "AudioFile",
    "FormatError",
    "WavFormatError",
    "read_wav",
    "write_wav",
    "save_bank",
    "load_bank",
    "save_network",
    "load_network",
    "write_features_csv",
    "write_bank_csv",
    "write_report_csv",
    "write_sweep_csv",
]

VERSION = 1

_FORMAT_NAMES = {
    0x0001: "PCM",
    0x0002: "Microsoft ADPCM",
    0x0003: "IEEE float",
    0x0006: "A-law",
    0x0007: "mu-law",
    0x0011: "IMA ADPCM",
    0x0055: "MPEG layer 3",
    0xFFFE: "WAVE_FORMAT_EXTENSIBLE",
}


class FormatError(ValueError):
    """A file does not follow the expected layout."""


class WavFormatError(FormatError):
    """The file is not a 16-bit PCM RIFF/WAVE file."""


class AudioFile:
    """Mono samples scaled to ``[-1, 1)`` with their rate and source layout."""

    def __init__(self, samples, sample_rate, channels):
        self.samples = np.asarray(samples, dtype=float)
        self.sample_rate = int(sample_rate)
        self.channels = int(channels)

    def __len__(self):
        return self.samples.size


def _fmt_chunk(raw):
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE file")
    pos = 12
    while pos + 8 <= len(raw):
        cid, size = struct.unpack_from("<4sI", raw, pos)
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError("truncated fmt chunk")
            tag, ch, rate, _, _, bits = struct.unpack_from("<HHIIHH", raw, pos + 8)
            return tag, ch, rate, bits
        pos += 8 + size + (size & 1)
    raise WavFormatError("no fmt chunk")


def read_wav(path, sample_rate=None):
    """Read a 16-bit PCM WAV file and down-mix it to mono.

    Parameters
    ----------
    path : str or path-like
    sample_rate : int, optional
        Required rate; a different rate is rejected (no resampling).

    Raises
    ------
    WavFormatError
        For anything other than 16-bit integer PCM; the message names the
        encoding found.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    tag, ch, rate, bits = _fmt_chunk(raw)
    if tag != 1 or bits != 16:
        name = _FORMAT_NAMES.get(tag, f"format tag 0x{tag:04x}")
        raise WavFormatError(
            f"unsupported WAV encoding: {name}, {bits}-bit "
            f"(only 16-bit PCM is read)")
    with wave.open(str(path), "rb") as w:
        frames = w.readframes(w.getnframes())
        ch = w.getnchannels()
        rate = w.getframerate()
    data = np.frombuffer(frames, dtype="<i2").astype(float) / 32768.0
    data = data.reshape(-1, ch).mean(axis=1)
    if sample_rate is not None and rate != sample_rate:
        raise WavFormatError(
            f"sample rate {rate} Hz does not match the configured "
            f"{sample_rate} Hz (resampling is not supported)")
    return AudioFile(data, rate, ch)


def write_wav(path, samples, sample_rate):
    """Write samples in ``[-1, 1]`` as 16-bit PCM; 2-D input is ``(n, channels)``."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    pcm = np.clip(np.round(x * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(x.shape[1])
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(pcm.tobytes())


def _read(fh, fmt):
    size = struct.calcsize(fmt)
    buf = fh.read(size)
    if len(buf) != size:
        raise FormatError("unexpected end of file")
    return struct.unpack(fmt, buf)


def _read_array(fh, count, dtype="<f8"):
    n = np.dtype(dtype).itemsize * count
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError("unexpected end of file")
    return np.frombuffer(buf, dtype=dtype).astype(float)


def save_bank(bank, path):
    with open(path, "wb") as fh:
        fh.write(b"MKFB")
        fh.write(struct.pack("<III", VERSION, len(bank), bank.n))
        for ch in bank:
            k = ch.kernel
            pairs = np.empty(2 * k.size, dtype="<f8")
            pairs[0::2], pairs[1::2] = k.real, k.imag
            fh.write(struct.pack("<dI", ch.center_frequency, k.size))
            fh.write(pairs.tobytes())
            fh.write(struct.pack("<I", ch.averaging.size))
            fh.write(ch.averaging.astype("<f8").tobytes())


def load_bank(path, sample_rate=None):
    """Inverse of :func:`save_bank`; design diagnostics are not stored."""
    with open(path, "rb") as fh:
        if fh.read(4) != b"MKFB":
            raise FormatError(f"{path}: not an MKFB file")
        version, k, n = _read(fh, "<III")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported MKFB version {version}")
        channels = []
        for v in range(k):
            fc, m = _read(fh, "<dI")
            pairs = _read_array(fh, 2 * m)
            (ma,) = _read(fh, "<I")
            avg = _read_array(fh, ma)
            channels.append(FilterChannel(pairs[0::2] + 1j * pairs[1::2], avg,
                                          fc, v))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes")
    return FilterBank(channels, n, sample_rate)


def save_network(net, path):
    arch = json.dumps(net.architecture(), sort_keys=True).encode()
    params = net.parameters()
    with open(path, "wb") as fh:
        fh.write(b"MKNN")
        fh.write(struct.pack("<II", VERSION, len(arch)))
        fh.write(arch)
        fh.write(struct.pack("<I", len(params)))
        for name, arr in params:
            b = name.encode()
            fh.write(struct.pack("<I", len(b)))
            fh.write(b)
            fh.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_network(path):
    with open(path, "rb") as fh:
        if fh.read(4) != b"MKNN":
            raise FormatError(f"{path}: not an MKNN file")
        version, size = _read(fh, "<II")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported MKNN version {version}")
        arch = json.loads(fh.read(size).decode())
        (count,) = _read(fh, "<I")
        arrays = {}
        for _ in range(count):
            (ln,) = _read(fh, "<I")
            name = fh.read(ln).decode()
            (ndim,) = _read(fh, "<I")
            shape = _read(fh, f"<{ndim}I") if ndim else ()
            arrays[name] = _read_array(fh, int(np.prod(shape))).reshape(shape)
    convs = [ConvLayer(arrays[f"conv{i}.weights"], arrays[f"conv{i}.bias"],
                       tuple(c["pool"]), c["slope"],
                       np.inf if c["p"] is None else c["p"])
             for i, c in enumerate(arch["convs"])]
    n_dense = len(arch["dense"]) + 1
    dense = DenseStage([arrays[f"dense{j}.weights"] for j in range(n_dense)],
                       [arrays[f"dense{j}.bias"] for j in range(n_dense)],
                       arch["dense_slope"])
    return Network(tuple(arch["input_shape"]), arrays["norm.scale"],
                   arrays["norm.shift"], convs, dense, name=arch["name"])


def _fmt(v):
    return repr(float(v))


def write_features_csv(target, features, center_frequencies):
    """Row per frame: frame index, then one value per channel.

    The header holds the channel centre frequencies in Hz.  ``target`` is a
    path or an open text stream.
    """
    features = np.asarray(features)
    if hasattr(target, "write"):
        _features_rows(target, features, center_frequencies)
        return
    with open(target, "w", newline="") as fh:
        _features_rows(fh, features, center_frequencies)


def _features_rows(fh, features, center_frequencies):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["frame"] + [_fmt(c) for c in center_frequencies])
    for j in range(features.shape[1]):
        w.writerow([j] + [_fmt(v) for v in features[:, j]])


def write_bank_csv(path, bank):
    """Per-channel summary: centre, support, lengths and design diagnostics."""
    keys = ["negative_mass", "imag_residue", "truncation_error",
            "averaging_negative"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "center_hz", "support", "kernel_len",
                    "averaging_len", "averaging_sum"] + keys)
        for ch in bank:
            extra = [ch.info.get(k, "") for k in keys]
            w.writerow([ch.index, _fmt(ch.center_frequency), ch.support(),
                        ch.kernel.size, ch.averaging.size,
                        _fmt(ch.averaging.sum())] + extra)


def write_report_csv(path, centers, bounds, mean_error, max_error):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["nu", "center_hz", "bound", "empirical_mean_error",
                    "empirical_max_error"])
        for v, row in enumerate(zip(centers, bounds, mean_error, max_error)):
            w.writerow([v] + [_fmt(x) for x in row])


def write_sweep_csv(path, centers, strides, errors):
    """``errors`` has shape ``(len(strides), K)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["nu", "center_hz"] + [f"stride{s}" for s in strides])
        for v, c in enumerate(centers):
            w.writerow([v, _fmt(c)] + [_fmt(e) for e in errors[:, v]])

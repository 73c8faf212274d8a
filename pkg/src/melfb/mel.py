"""Triangular mel filters and STFT-based mel spectrograms."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .tfcore import Lattice, spectrogram

__all__ = [
    "MelFilterSet",
    "hz_to_mel",
    "mel_to_hz",
    "mel_scale_centers",
    "build_triangles",
    "default_filters",
    "mel_spectrogram",
    "log_compress",
    "write_filters_csv",
    "CLIP_FLOOR",
]

CLIP_FLOOR = 1e-7


def hz_to_mel(f):
    """HTK mel scale, ``2595 log10(1 + f / 700)``."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterSet:
    """K frequency-averaging filters sampled on the lattice bins.

    ``weights`` has shape ``(K, n_bins)``; column ``j`` is lattice bin ``j``,
    i.e. DFT index ``beta * j`` on a grid of ``N = n_bins * beta`` samples.
    Bins above ``n_bins // 2`` are negative frequencies and carry no weight.
    """

    weights: np.ndarray
    center_frequencies: np.ndarray
    f_min: float
    f_max: float
    sample_rate: float
    beta: int = 1
    name: str = field(default="mel")

    @property
    def n_filters(self):
        return self.weights.shape[0]

    @property
    def n_bins(self):
        return self.weights.shape[1]

    @property
    def n(self):
        """Length of the underlying cyclic signal model."""
        return self.n_bins * self.beta

    def full_grid(self):
        """Weights placed on all ``N`` DFT bins, zero off the lattice."""
        out = np.zeros((self.n_filters, self.n))
        out[:, ::self.beta] = self.weights
        return out

    def subset(self, channels):
        channels = np.atleast_1d(channels)
        return MelFilterSet(self.weights[channels],
                            self.center_frequencies[channels], self.f_min,
                            self.f_max, self.sample_rate, self.beta,
                            self.name)


def mel_scale_centers(n_filters, f_min, f_max, sample_rate):
    """Centre frequencies equally spaced on the mel scale.

    ``n_filters + 2`` points are spaced linearly in mel between ``f_min`` and
    ``f_max``; the interior ``n_filters`` are returned, the outer two being
    the lower edge of the first and the upper edge of the last triangle.
    """
    if n_filters < 1:
        raise ValueError("need at least one filter")
    if not 0 < f_min < f_max <= sample_rate / 2:
        raise ValueError(
            f"need 0 < f_min < f_max <= sample_rate/2, got f_min={f_min}, "
            f"f_max={f_max}, sample_rate={sample_rate}")
    mels = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_filters + 2)
    return mel_to_hz(mels[1:-1])


def build_triangles(centers, n_bins, sample_rate, beta=1, f_min=None,
                    f_max=None):
    """Unit-peak triangles, filter ``v`` spanning ``centers[v-1..v+1]``.

    The outer edges default to a mel-scale mirror of the first and last
    spacing.  Centres must be strictly increasing (this is also the only
    constraint placed on user-supplied, adapted centre frequencies).
    """
    centers = np.asarray(centers, dtype=float)
    if centers.ndim != 1 or centers.size < 1:
        raise ValueError("centers must be a non-empty 1-D sequence")
    if np.any(np.diff(centers) <= 0):
        bad = int(np.argmin(np.diff(centers)))
        raise ValueError(
            f"center frequencies must be strictly increasing "
            f"(centers[{bad}]={centers[bad]} >= centers[{bad + 1}]="
            f"{centers[bad + 1]})")
    m = hz_to_mel(centers)
    if f_min is None:
        step = m[1] - m[0] if m.size > 1 else m[0] / 2
        f_min = float(mel_to_hz(max(m[0] - step, 0.0)))
    if f_max is None:
        step = m[-1] - m[-2] if m.size > 1 else m[0] / 2
        f_max = float(mel_to_hz(m[-1] + step))
    if not f_min < centers[0] or not centers[-1] < f_max:
        raise ValueError("centers must lie strictly inside (f_min, f_max)")

    edges = np.concatenate([[f_min], centers, [f_max]])
    j = np.arange(n_bins)
    freqs = j * sample_rate / n_bins
    freqs[j > n_bins // 2] = -1.0  # negative frequencies: never inside a band
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    weights = np.clip(np.minimum(rising, falling), 0.0, None)
    return MelFilterSet(weights, centers, float(f_min), float(f_max),
                        float(sample_rate), int(beta))


def default_filters(n_bins, sample_rate=22050, n_filters=80, f_min=27.5,
                    f_max=8000.0, beta=1):
    """The 80-band, 27.5 Hz to 8 kHz filter set used for the experiments."""
    centers = mel_scale_centers(n_filters, f_min, f_max, sample_rate)
    return build_triangles(centers, n_bins, sample_rate, beta, f_min, f_max)


def mel_spectrogram(f, g, filters, lattice=None):
    """``MS(b, v) = sum_k |V_g f(b, beta k)|^2 Lambda_v(beta k)``.

    Returns an array of shape ``(K, N // alpha)``.
    """
    if lattice is None:
        lattice = Lattice(1, filters.beta)
    f = np.asarray(f)
    n_freq, _ = lattice.check(f.size)
    if lattice.beta != filters.beta or n_freq != filters.n_bins:
        raise ValueError(
            f"filter set has {filters.n_bins} bins at beta={filters.beta}, "
            f"lattice gives {n_freq} bins at beta={lattice.beta}")
    return filters.weights @ spectrogram(f, g, lattice)


def log_compress(power, clip_floor=CLIP_FLOOR):
    """Natural log after clipping values below ``clip_floor``."""
    power = np.asarray(power, dtype=float)
    if np.any(power < 0):
        raise ValueError("log_compress expects a non-negative power map")
    return np.log(np.maximum(power, clip_floor))


def write_filters_csv(filters, path):
    """One row per filter: centre frequency in Hz, then the bin weights."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["center_hz"] + [f"bin{j}" for j in range(filters.n_bins)])
        for c, row in zip(filters.center_frequencies, filters.weights):
            w.writerow([repr(float(c))] + [repr(float(v)) for v in row])

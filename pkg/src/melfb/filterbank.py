"""Adaptive filter banks whose time-averaged squared outputs mimic mel
spectrograms.

Two evaluation modes are provided.  The cyclic mode (:func:`fb_features`)
works on ``Z_N`` and is what the error analysis in :mod:`melfb.spreading`
is stated for.  The audio mode (:func:`filterbank_features`,
:func:`variant_features`) uses zero-padded linear convolution on arbitrary
length recordings and a frame grid shared with :func:`stft_features`.

Sampling the squared filter output with stride ``alpha`` keeps one sample in
``alpha``; each kept sample is weighted by ``alpha`` so that designs made for
unit stride stay on the same scale at any stride.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .mel import MelFilterSet, build_triangles, mel_scale_centers
from .tfcore import centered_window, cyclic_convolve, hann

log = logging.getLogger(__name__)

__all__ = [
    "FilterChannel",
    "FilterBank",
    "design_filters",
    "GaussianDesign",
    "dilated_gaussian",
    "gaussian_design",
    "gaussian_bank",
    "fb_features",
    "Approximation",
    "NaiveBoxcar",
    "FixedWidthHann",
    "VariableWidthHann",
    "naive_kernels",
    "hann_taps",
    "frame_count",
    "frame_centers",
    "stft_features",
    "filterbank_features",
    "variant_features",
    "design_audio_bank",
    "MAX_KERNEL",
    "MAX_AVERAGING_WIDTH",
]

MAX_KERNEL = 1024
MAX_AVERAGING_WIDTH = 2520
NEGATIVE_MASS_WARNING = 0.01


def _centred(cyclic):
    # cyclic order -> centred order (time t at index t + len // 2)
    return np.fft.fftshift(cyclic)


def effective_support(kernel, fraction=0.99):
    """Length of the shortest contiguous run holding ``fraction`` of the energy."""
    a = np.abs(np.asarray(kernel))
    if not np.any(a):
        return 0
    e = (a / a.max()) ** 2  # rescaled so tiny kernels do not underflow
    total = e.sum()
    c = np.concatenate([[0.0], np.cumsum(e)])
    need = fraction * total * (1 - 1e-12)
    # for each start, first end with enough energy
    ends = np.searchsorted(c, c[:-1] + need, side="left")
    valid = ends <= e.size
    starts = np.arange(e.size)[valid]
    return int(np.min(ends[valid] - starts))


@dataclass
class FilterChannel:
    """One filter ``h`` and its averaging window, both in centred order.

    Index ``i`` of ``kernel`` is time ``i - len(kernel) // 2`` (likewise for
    ``averaging``).
    """

    kernel: np.ndarray
    averaging: np.ndarray
    center_frequency: float
    index: int
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=complex)
        self.averaging = np.asarray(self.averaging, dtype=float)
        if not np.any(self.kernel):
            raise ValueError(f"channel {self.index}: zero filter")

    def kernel_cyclic(self, n):
        return centered_window(self.kernel, n)

    def averaging_cyclic(self, n):
        return centered_window(self.averaging, n)

    def support(self, fraction=0.99):
        return effective_support(self.kernel, fraction)


@dataclass
class FilterBank:
    """Channels ordered by centre frequency plus design metadata."""

    channels: list
    n: int
    sample_rate: float
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.channels)

    def __iter__(self):
        return iter(self.channels)

    def __getitem__(self, i):
        return self.channels[i]

    @property
    def center_frequencies(self):
        return np.array([c.center_frequency for c in self.channels])

    def supports(self, fraction=0.99):
        return np.array([c.support(fraction) for c in self.channels])


def design_filters(g, filters, eps=1e-6, max_kernel=None):
    """Design ``h_v`` and ``w_v`` for every filter of ``filters``.

    The filter is the zero-phase solution of
    ``|F h|^2 = F((g * g_check) . F^-1 Lambda)`` and the averaging window
    solves the x = 0 slice of the ambiguity matching condition,
    ``F w(xi) = V_g g(0, xi) q(0) / V_h h(0, xi)``, where ``q`` is the
    symplectic transform of the sampled filter, restricted to frequencies
    where ``|V_h h(0, xi)| > eps * max |V_h h(0, .)|``.

    Parameters
    ----------
    g : ndarray, shape (N,)
        Analysis window in cyclic order, ``N = filters.n``.
    filters : MelFilterSet
    eps : float
        Relative threshold for the quotient.
    max_kernel : int or None
        Truncate kernels to this many samples around time zero (audio mode).
    """
    g = np.asarray(g)
    n = g.size
    if n != filters.n:
        raise ValueError(f"window length {n} != filter grid {filters.n}")
    if not np.any(g):
        raise ValueError("analysis window must not vanish")
    if eps <= 0:
        raise ValueError("eps must be positive")

    G = np.fft.fft(g)
    autocorr = np.fft.ifft(np.abs(G) ** 2)          # (g * g_check)(x)
    vgg0 = np.fft.fft(np.abs(g) ** 2)                # V_g g(0, xi)
    full = filters.full_grid()

    channels = []
    for v, (lam, lam_lat) in enumerate(zip(full, filters.weights)):
        if not np.any(lam_lat > 0):
            raise ValueError(
                f"filter {v} ({filters.center_frequencies[v]:.1f} Hz) has no "
                f"weight on the lattice bins")
        spec = np.fft.fft(autocorr * np.fft.ifft(lam)).real
        negative = -spec[spec < 0].sum()
        neg_mass = negative / np.abs(spec).sum()
        h = np.fft.ifft(np.sqrt(np.clip(spec, 0.0, None)))

        vhh0 = np.fft.fft(np.abs(h) ** 2)
        keep = np.abs(vhh0) > eps * np.abs(vhh0).max()
        q0 = lam_lat.sum()
        fw = np.zeros(n, dtype=complex)
        fw[keep] = vgg0[keep] * q0 / vhh0[keep]
        w = np.fft.ifft(fw)
        imag = np.linalg.norm(w.imag) / max(np.linalg.norm(w), 1e-300)
        w = w.real

        kernel = _centred(h)
        trunc = 0.0
        if max_kernel is not None and max_kernel < n:
            start = n // 2 - max_kernel // 2
            kept = kernel[start:start + max_kernel]
            trunc = 1.0 - np.sum(np.abs(kept) ** 2) / np.sum(np.abs(kernel) ** 2)
            kernel = kept

        info = {
            "negative_mass": float(neg_mass),
            "imag_residue": float(imag),
            "averaging_negative": bool(w.min() < -1e-12 * np.abs(w).max()),
            "truncation_error": float(trunc),
            "quotient_bins": int(keep.sum()),
        }
        if neg_mass > NEGATIVE_MASS_WARNING:
            info["warning"] = "negative spectral mass above 1%"
            warnings.warn(f"filter {v}: negative spectral mass {neg_mass:.3g}")
        channels.append(FilterChannel(kernel, _centred(w),
                                      float(filters.center_frequencies[v]), v,
                                      info))

    meta = {
        "window": g.copy(),
        "filters": filters.name,
        "eps": eps,
        "beta": filters.beta,
        "max_kernel": max_kernel,
    }
    return FilterBank(channels, n, filters.sample_rate, meta)


# -- Gaussian construction -------------------------------------------------

def _signed(n):
    k = np.arange(n)
    return np.where(k < (n + 1) // 2, k, k - n)


def dilated_gaussian(sigma, n):
    """``phi_sigma(t) = (2/sigma)^(1/4) exp(-pi t^2 / sigma)`` at ``t = s/sqrt(N)``.

    ``s`` runs over the signed cyclic sample indices.
    """
    t = _signed(n) / np.sqrt(n)
    return (2.0 / sigma) ** 0.25 * np.exp(-np.pi * t ** 2 / sigma)


@dataclass(frozen=True)
class GaussianDesign:
    """Closed-form window, filter, averaging window and frequency filter."""

    window: np.ndarray
    kernel: np.ndarray
    averaging: np.ndarray
    frequency_filter: np.ndarray
    sigma: float
    rho: float
    nu: int


def gaussian_design(sigma, rho, nu, n):
    """Gaussian window ``phi_sigma`` with filter ``M_nu phi_rho``.

    The frequency filter is chosen with inverse transform
    ``exp(2 pi i nu x / N) exp(-pi/2 x^2 (1/rho - 1/sigma))`` and the averaging
    window with transform ``exp(-pi/2 xi^2 (sigma - rho))`` (continuous units
    ``x/sqrt(N)``, ``xi/sqrt(N)``), which makes the filter-bank output equal
    to the frequency-averaged spectrogram.
    """
    if not 0 < rho < sigma:
        raise ValueError(
            f"need 0 < rho < sigma for a valid averaging window, got "
            f"rho={rho}, sigma={sigma}")
    s = _signed(n) / np.sqrt(n)
    g = dilated_gaussian(sigma, n)
    h = np.exp(2j * np.pi * nu * np.arange(n) / n) * dilated_gaussian(rho, n)
    fw = np.exp(-np.pi / 2 * s ** 2 * (sigma - rho))
    w = np.fft.ifft(fw).real
    q = (np.exp(2j * np.pi * nu * np.arange(n) / n)
         * np.exp(-np.pi / 2 * s ** 2 * (1 / rho - 1 / sigma)))
    lam = np.fft.fft(q).real / n
    return GaussianDesign(g, h, w, lam, sigma, rho, nu)


def gaussian_bank(n, sigma, center_bins, rhos, sample_rate=None):
    """A bank of Gaussian channels sharing the window ``phi_sigma``.

    Returns ``(g, bank, filters)`` where ``filters`` holds the matching
    Gaussian frequency filters at ``beta = 1``.
    """
    center_bins = np.asarray(center_bins, dtype=int)
    rhos = np.asarray(rhos, dtype=float)
    if center_bins.shape != rhos.shape:
        raise ValueError("one rho per centre bin required")
    sr = float(sample_rate if sample_rate is not None else n)
    designs = [gaussian_design(sigma, r, int(c), n)
               for c, r in zip(center_bins, rhos)]
    centers = center_bins * sr / n
    weights = np.array([d.frequency_filter for d in designs])
    filters = MelFilterSet(weights, centers, float(centers[0]) / 2,
                           float(centers[-1]) * 1.5, sr, 1, "gaussian")
    channels = [FilterChannel(_centred(d.kernel), _centred(d.averaging),
                              float(c), v)
                for v, (d, c) in enumerate(zip(designs, centers))]
    bank = FilterBank(channels, n, sr, {"window": designs[0].window,
                                        "filters": "gaussian",
                                        "sigma": sigma})
    return designs[0].window, bank, filters


# -- cyclic features -------------------------------------------------------

def fb_features(f, bank, stride=1, hop=None):
    """``FB(b, v) = stride * sum_l |(f * h_v)(stride l)|^2 w_v(stride l - b)``.

    Evaluated cyclically for ``b`` on the grid ``hop * Z``; returns an array
    of shape ``(K, N // hop)``.
    """
    f = np.asarray(f)
    n = f.size
    hop = stride if hop is None else hop
    if n != bank.n:
        raise ValueError(f"signal length {n} != bank grid {bank.n}")
    if stride < 1 or hop % stride or n % hop:
        raise ValueError(
            f"stride {stride} must divide hop {hop}, and hop must divide N={n}")
    sel = np.arange(n // hop) * (hop // stride)
    out = np.empty((len(bank), n // hop))
    for v, ch in enumerate(bank):
        y = cyclic_convolve(f.astype(complex), ch.kernel_cyclic(n), stride)
        p = stride * (y.real ** 2 + y.imag ** 2)
        w = ch.averaging_cyclic(n)[::stride]
        # sum_l p(l) w(l - j) as a cyclic cross-correlation on Z_m
        corr = np.fft.ifft(np.fft.fft(p) * np.conj(np.fft.fft(w))).real
        out[v] = corr[sel]
    return out


# -- audio mode ------------------------------------------------------------

@dataclass(frozen=True)
class Approximation:
    """Designed filters with their designed averaging windows."""


@dataclass(frozen=True)
class NaiveBoxcar:
    """Hann-envelope filters, non-overlapping mean over ``hop/stride`` outputs."""


@dataclass(frozen=True)
class FixedWidthHann:
    """Hann-envelope filters, Hann averaging of ``width`` samples."""

    width: int = 504

    def __post_init__(self):
        if not 1 <= self.width <= MAX_AVERAGING_WIDTH:
            raise ValueError(
                f"averaging width must be in [1, {MAX_AVERAGING_WIDTH}]")


@dataclass(frozen=True)
class VariableWidthHann:
    """Hann averaging with one width (samples) per channel."""

    widths: tuple

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if any(not 1 <= w <= MAX_AVERAGING_WIDTH for w in widths):
            raise ValueError(
                f"averaging widths must be in [1, {MAX_AVERAGING_WIDTH}]")
        object.__setattr__(self, "widths", widths)


def frame_count(n_samples, frame_len=1024, hop=315):
    """Frames fitting entirely inside the recording."""
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


def frame_centers(n_frames, frame_len=1024, hop=315):
    return frame_len // 2 + hop * np.arange(n_frames)


def stft_features(x, filters, frame_len=1024, hop=315, window=None):
    """Frame-wise mel power spectrogram, shape ``(K, n_frames)``.

    ``filters`` must live on ``frame_len`` bins.  Frame ``j`` covers samples
    ``[hop j, hop j + frame_len)``.
    """
    x = np.asarray(x, dtype=float)
    if filters.n_bins != frame_len:
        raise ValueError(
            f"filters have {filters.n_bins} bins, frame length is {frame_len}")
    if window is None:
        window = hann(frame_len)  # centred order: peak at frame_len // 2
    t = frame_count(x.size, frame_len, hop)
    if t == 0:
        return np.zeros((filters.n_filters, 0))
    idx = hop * np.arange(t)[:, None] + np.arange(frame_len)[None, :]
    spec = np.fft.fft(x[idx] * window[None, :], axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    return filters.weights @ power.T


def hann_taps(width, stride):
    """Hann averaging window of ``width`` samples sampled on the stride grid.

    Returns ``(offsets, weights)`` with offsets in stride units and weights
    summing to one.
    """
    if width < 1:
        raise ValueError("width must be positive")
    half = (width - 1) / 2.0
    u = np.arange(-int(half // stride), int(half // stride) + 1)
    t = u * stride
    w = 0.5 + 0.5 * np.cos(2 * np.pi * t / width)
    keep = np.abs(t) < width / 2
    u, w = u[keep], w[keep]
    return u, w / w.sum()


def _box_taps(length):
    u = np.arange(length) - length // 2
    return u, np.full(length, 1.0 / length)


def _designed_taps(averaging, stride):
    # w(u) = stride * averaging(stride u), averaging in centred order
    m = averaging.size
    t = np.arange(m) - m // 2
    on = t % stride == 0
    return t[on] // stride, stride * averaging[on]


def filterbank_features(x, kernels, taps, stride=21, hop=315, frame_len=1024,
                        n_frames=None):
    """Zero-padded filter bank with strided squared outputs and averaging.

    Parameters
    ----------
    x : ndarray
        Mono signal.
    kernels : sequence of complex ndarrays
        Filters in centred order.
    taps : sequence of (offsets, weights)
        Averaging window per channel on the stride grid.
    stride, hop, frame_len : int
        Output ``j`` is centred on sample ``frame_len // 2 + hop * j``.

    Returns
    -------
    ndarray, shape (K, n_frames)
    """
    x = np.asarray(x, dtype=float)
    if stride < 1 or hop % stride:
        raise ValueError(f"stride {stride} must divide hop {hop}")
    if n_frames is None:
        n_frames = frame_count(x.size, frame_len, hop)
    c0 = frame_len // 2
    out = np.zeros((len(kernels), n_frames))
    if n_frames == 0:
        return out
    centres = np.arange(n_frames) * (hop // stride)
    for v, (h, (u, w)) in enumerate(zip(kernels, taps)):
        h = np.asarray(h)
        z = fftconvolve(x, h)  # y(t) = z[t + len(h) // 2]
        # grid t = c0 + stride * l, index into z
        i0 = c0 + h.size // 2
        l_lo = -(i0 // stride)
        l_hi = (z.size - 1 - i0) // stride
        l = np.arange(l_lo, l_hi + 1)
        y = z[i0 + stride * l]
        p = y.real ** 2 + y.imag ** 2
        # pad so that every centre +/- tap offset lands inside
        pad = int(np.max(np.abs(u))) + 1
        pp = np.concatenate([np.zeros(pad), p, np.zeros(pad)])
        idx = centres[:, None] + np.asarray(u)[None, :] - l_lo + pad
        inside = (idx >= 0) & (idx < pp.size)
        vals = np.where(inside, pp[np.clip(idx, 0, pp.size - 1)], 0.0)
        out[v] = vals @ np.asarray(w)
    return out


def naive_kernels(filters, max_kernel=MAX_KERNEL, gain=None):
    """Complex Hann-envelope filters at the mel centre frequencies.

    The lowest band gets ``max_kernel`` samples; lengths shrink in inverse
    proportion to the triangles' bandwidth in Hz.  Each kernel has passband
    gain ``gain`` (default: half of ``max_kernel``, the DC gain of a Hann
    window of that length).
    """
    edges = np.concatenate([[filters.f_min], filters.center_frequencies,
                            [filters.f_max]])
    bw = edges[2:] - edges[:-2]
    lengths = np.maximum(np.rint(max_kernel * bw[0] / bw).astype(int), 1)
    gain = max_kernel / 2 if gain is None else gain
    out = []
    for fc, length in zip(filters.center_frequencies, lengths):
        env = hann(int(length))
        t = np.arange(length) - length // 2
        out.append(gain * env / env.sum()
                   * np.exp(2j * np.pi * fc * t / filters.sample_rate))
    return out


def design_audio_bank(sample_rate=22050, frame_len=1024, n_filters=80,
                      f_min=27.5, f_max=8000.0, eps=1e-6, max_kernel=MAX_KERNEL,
                      centers=None):
    """Design the approximation bank for frame-wise mel spectrograms.

    The design grid holds two frames, so the window autocorrelation does
    not wrap; the mel filters sit on the ``frame_len`` DFT bins (``beta=2``).
    """
    if centers is None:
        centers = mel_scale_centers(n_filters, f_min, f_max, sample_rate)
    filters = build_triangles(centers, frame_len, sample_rate, 2, f_min, f_max)
    g = hann(frame_len, 2 * frame_len)
    return design_filters(g, filters, eps, max_kernel), filters


def variant_features(x, variant, filters, bank=None, stride=21, hop=315,
                     frame_len=1024, max_kernel=MAX_KERNEL):
    """Filter-bank features for one of the pipeline variants.

    ``filters`` is the mel set (on ``frame_len`` bins) defining the centre
    frequencies; ``bank`` is required for :class:`Approximation`.
    """
    if isinstance(variant, Approximation):
        if bank is None:
            raise ValueError("the approximation variant needs a designed bank")
        kernels = [ch.kernel for ch in bank]
        taps = [_designed_taps(ch.averaging, stride) for ch in bank]
    else:
        kernels = naive_kernels(filters, max_kernel)
        k = len(kernels)
        if isinstance(variant, NaiveBoxcar):
            taps = [_box_taps(hop // stride)] * k
        elif isinstance(variant, FixedWidthHann):
            taps = [hann_taps(variant.width, stride)] * k
        elif isinstance(variant, VariableWidthHann):
            if len(variant.widths) != k:
                raise ValueError(f"need {k} widths, got {len(variant.widths)}")
            taps = [hann_taps(w, stride) for w in variant.widths]
        else:
            raise TypeError(f"unknown variant {variant!r}")
    return filterbank_features(x, kernels, taps, stride, hop, frame_len)


"""Discrete time-frequency primitives on the cyclic group Z_N.

Conventions used throughout the package:

* ``dft`` is unnormalised, ``idft`` carries the ``1/N`` factor.
* Translation ``T_a f(n) = f(n - a mod N)``, modulation
  ``M_k f(n) = exp(2 pi i k n / N) f(n)``.
* Windows are stored as length-``N`` arrays in cyclic order, i.e. time zero
  sits at index 0 and negative times wrap to the end of the array.
* Time-frequency maps are arrays indexed ``[frequency, time]``; on a lattice
  ``(alpha, beta)`` their shape is ``(N // beta, N // alpha)``.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Lattice",
    "Signal",
    "dft",
    "idft",
    "translate",
    "modulate",
    "centered_window",
    "hann",
    "stft",
    "spectrogram",
    "ambiguity",
    "ambiguity_xi",
    "cyclic_convolve",
    "involution",
]


@dataclass(frozen=True)
class Lattice:
    """Time step ``alpha`` (samples) and frequency step ``beta`` (bins)."""

    alpha: int = 1
    beta: int = 1

    def __post_init__(self):
        if int(self.alpha) != self.alpha or self.alpha < 1:
            raise ValueError(f"alpha must be a positive integer, got {self.alpha}")
        if int(self.beta) != self.beta or self.beta < 1:
            raise ValueError(f"beta must be a positive integer, got {self.beta}")

    def check(self, n):
        if n % self.alpha or n % self.beta:
            raise ValueError(
                f"lattice ({self.alpha}, {self.beta}) does not divide N={n}")
        return n // self.beta, n // self.alpha

    def shape(self, n):
        """Map shape ``(n_freq, n_time)`` for signal length ``n``."""
        return self.check(n)


@dataclass(frozen=True)
class Signal:
    """A finite real time series with its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 1 or x.size < 1:
            raise ValueError("signal must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(x)):
            raise ValueError("signal contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    def __array__(self, dtype=None, copy=None):
        return self.samples if dtype is None else self.samples.astype(dtype)


def _as_1d(x, name="x"):
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if x.size == 0:
        raise ValueError(f"{name} must not be empty")
    return x


def dft(x):
    """Unnormalised DFT, ``X(k) = sum_n x(n) exp(-2 pi i k n / N)``."""
    return np.fft.fft(_as_1d(x))


def idft(x):
    """Inverse of :func:`dft` (carries the ``1/N``)."""
    return np.fft.ifft(_as_1d(x))


def translate(f, a):
    """``T_a f(n) = f(n - a)`` cyclically."""
    return np.roll(np.asarray(f), a)


def modulate(f, k):
    """``M_k f(n) = exp(2 pi i k n / N) f(n)``."""
    f = np.asarray(f)
    n = np.arange(f.size)
    return np.exp(2j * np.pi * k * n / f.size) * f


def involution(h):
    """``h_check(t) = conj(h(-t))`` cyclically."""
    h = np.asarray(h)
    return np.conj(np.roll(h[::-1], 1))


def centered_window(values, n):
    """Embed a short window into cyclic order on ``Z_n``.

    Sample ``i`` of ``values`` is placed at time ``i - len(values) // 2``, so
    an odd-length symmetric window becomes even about zero.
    """
    values = _as_1d(values, "values")
    m = values.size
    if m > n:
        raise ValueError(f"window of length {m} does not fit into N={n}")
    out = np.zeros(n, dtype=values.dtype)
    t = np.arange(m) - m // 2
    out[t % n] = values
    return out


def hann(length, n=None):
    """Periodic Hann window of ``length`` samples, centred at time zero.

    With ``n`` given, the window is embedded in cyclic order on ``Z_n``;
    otherwise the short array is returned in centred order (peak at index
    ``length // 2``).
    """
    if length < 1:
        raise ValueError("window length must be positive")
    t = np.arange(length) - length // 2
    w = 0.5 + 0.5 * np.cos(2 * np.pi * t / length)
    return w if n is None else centered_window(w, n)


def _check_pair(f, g):
    f = _as_1d(f, "f")
    g = _as_1d(g, "g")
    if f.size != g.size:
        raise ValueError(f"length mismatch: len(f)={f.size}, len(g)={g.size}")
    return f, g


def stft(f, g, lattice=Lattice()):
    """Sampled STFT ``V_g f(alpha l, beta k) = <f, M_{beta k} T_{alpha l} g>``.

    Returns a complex array of shape ``(N // beta, N // alpha)``.
    """
    f, g = _check_pair(f, g)
    n = f.size
    n_freq, n_time = lattice.check(n)
    shifts = np.arange(n_time) * lattice.alpha
    idx = (np.arange(n)[None, :] - shifts[:, None]) % n
    frames = f[None, :] * np.conj(g)[idx]
    coeffs = np.fft.fft(frames, axis=1)[:, ::lattice.beta]
    return coeffs.T


def spectrogram(f, g, lattice=Lattice()):
    """Squared modulus of :func:`stft`."""
    v = stft(f, g, lattice)
    return v.real ** 2 + v.imag ** 2


def _ambiguity_x_xi(g):
    # A[x, xi] = sum_t g(t) conj(g(t - x)) exp(-2 pi i xi t / N)
    g = _as_1d(g, "g")
    n = g.size
    idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
    return np.fft.fft(g[None, :] * np.conj(g)[idx], axis=1)


def ambiguity_xi(g):
    """Ambiguity function indexed ``[x, xi]`` (lag first)."""
    g = _as_1d(g, "g")
    if not np.any(g):
        raise ValueError("ambiguity of the zero window is undefined")
    return _ambiguity_x_xi(g)


def ambiguity(g):
    """Ambiguity function ``V_g g`` on the full lattice, indexed ``[xi, x]``."""
    return ambiguity_xi(g).T


def cyclic_convolve(f, h, stride=1):
    """Strided cyclic convolution ``out(l) = sum_n f(n) h(stride*l - n)``."""
    f, h = _check_pair(f, h)
    n = f.size
    if stride < 1 or n % stride:
        raise ValueError(f"stride {stride} does not divide N={n}")
    full = np.fft.ifft(np.fft.fft(f) * np.fft.fft(h))
    if np.isrealobj(f) and np.isrealobj(h):
        full = full.real
    return full[::stride]

"""Gabor multipliers, spreading functions and the mel / filter-bank error bound.

On ``Z_N`` an operator ``H`` is written through its spreading function as

    H f(t) = 1/N sum_x sum_xi eta(x, xi) f(t - x) exp(2 pi i t xi / N),

so that the spreading function of a Gabor multiplier is exactly the product
of the symplectic Fourier transform of its mask with the window's ambiguity
function (no extra constants).  Arrays over the spreading domain are indexed
``[x, xi]``.

For any two such operators ``|<(H1 - H2) f, f>| <= ||eta1 - eta2|| ||f||^2
/ sqrt(N)`` (Cauchy-Schwarz plus ``||V_f f|| = sqrt(N) ||f||^2``), with the
plain counting-measure norm; :func:`theorem1_bound` returns the factor in
front of ``||f||^2``.
"""

from dataclasses import dataclass
from math import gcd

import numpy as np

from .filterbank import fb_features
from .mel import mel_spectrogram
from .tfcore import Lattice, ambiguity_xi, involution, stft

__all__ = [
    "GaborMultiplier",
    "AliasFactors",
    "symplectic_ft",
    "spreading_function",
    "operator_from_spreading",
    "spreading_of_multiplier",
    "mel_multiplier",
    "fb_multiplier",
    "bilinear_form",
    "bilinear_form_ms",
    "alias_factors",
    "theorem1_bound",
    "theorem1_bounds",
    "empirical_error_per_bin",
    "stride_sweep",
]


@dataclass(frozen=True)
class GaborMultiplier:
    """``G f = sum_k sum_l m(k, l) <f, M_{bk} T_{al} g> M_{bk} T_{al} g``.

    ``mask`` has shape ``(N // beta, N // alpha)``, indexed ``[k, l]``.
    """

    window: np.ndarray
    mask: np.ndarray
    lattice: Lattice = Lattice()

    def __post_init__(self):
        g = np.asarray(self.window)
        m = np.asarray(self.mask)
        if m.shape != self.lattice.shape(g.size):
            raise ValueError(
                f"mask shape {m.shape} does not match lattice "
                f"{self.lattice.shape(g.size)}")
        object.__setattr__(self, "window", g)
        object.__setattr__(self, "mask", m)

    @property
    def n(self):
        return self.window.size

    def apply(self, f):
        f = np.asarray(f)
        if f.size != self.n:
            raise ValueError(f"signal length {f.size} != {self.n}")
        a, b = self.lattice.alpha, self.lattice.beta
        n = self.n
        c = self.mask * stft(f, self.window, self.lattice)
        # sum_k c(k, l) exp(2 pi i b k t / N), N/b-periodic in t
        inner = np.fft.ifft(c, axis=0) * (n // b)
        inner = np.tile(inner, (b, 1))
        shifts = (np.arange(n)[:, None] - a * np.arange(n // a)[None, :]) % n
        return np.sum(inner * self.window[shifts], axis=1)

    def matrix(self):
        """Dense matrix built atom by atom from the definition."""
        a, b = self.lattice.alpha, self.lattice.beta
        n = self.n
        t = np.arange(n)
        out = np.zeros((n, n), dtype=complex)
        for k in range(n // b):
            mod = np.exp(2j * np.pi * b * k * t / n)
            for l in range(n // a):
                if self.mask[k, l] == 0:
                    continue
                atom = mod * np.roll(self.window, a * l)
                out += self.mask[k, l] * np.outer(atom, np.conj(atom))
        return out

    def spreading(self):
        return spreading_of_multiplier(self)


def symplectic_ft(mask, lattice, n):
    """``F_s m(x, xi) = sum_k sum_l m(k, l) exp(-2 pi i (a l xi - b k x) / N)``."""
    mask = np.asarray(mask)
    if mask.shape != lattice.shape(n):
        raise ValueError("mask shape does not match lattice")
    full = np.zeros((n, n), dtype=complex)
    full[::lattice.beta, ::lattice.alpha] = mask
    # rows: frequency index -> x via exp(+), columns: time index -> xi via exp(-)
    return np.fft.fft(np.fft.ifft(full, axis=0) * n, axis=1)


def spreading_function(op):
    """Spreading function ``eta(x, xi) = sum_t H[t, t - x] exp(-2 pi i t xi / N)``."""
    op = np.asarray(op)
    n = op.shape[0]
    t = np.arange(n)
    diag = op[t[None, :], (t[None, :] - t[:, None]) % n]  # [x, t]
    return np.fft.fft(diag, axis=1)


def operator_from_spreading(eta):
    """Dense matrix of ``f -> 1/N sum eta(x, xi) f(t - x) exp(2 pi i t xi / N)``."""
    eta = np.asarray(eta)
    n = eta.shape[0]
    kern = np.fft.ifft(eta, axis=1)  # [x, t]
    t = np.arange(n)
    return kern[(t[:, None] - t[None, :]) % n, t[:, None]]


def spreading_of_multiplier(mult):
    """Symplectic transform of the mask times the ambiguity function."""
    return (symplectic_ft(mult.mask, mult.lattice, mult.n)
            * ambiguity_xi(mult.window))


def mel_multiplier(g, weights, lattice, b):
    """Multiplier with mask ``delta(alpha l - b) Lambda(beta k)``.

    ``weights`` are the filter values on the ``N // beta`` lattice bins.
    """
    g = np.asarray(g)
    n_freq, n_time = lattice.shape(g.size)
    if b % lattice.alpha:
        raise ValueError(f"b={b} is not on the time lattice")
    mask = np.zeros((n_freq, n_time))
    mask[:, (b // lattice.alpha) % n_time] = weights
    return GaborMultiplier(g, mask, lattice)


def fb_multiplier(h, w, lattice, b):
    """Multiplier with window ``h_check`` and mask ``alpha w(alpha l - b) delta(k)``.

    ``h`` and ``w`` are in cyclic order.
    """
    h = np.asarray(h)
    n = h.size
    n_freq, n_time = lattice.shape(n)
    mask = np.zeros((n_freq, n_time))
    l = np.arange(n_time)
    mask[0] = lattice.alpha * np.asarray(w)[(lattice.alpha * l - b) % n]
    return GaborMultiplier(involution(h), mask, lattice)


def bilinear_form(mult, f):
    """``<G f, f>``."""
    f = np.asarray(f)
    return np.vdot(f, mult.apply(f))


def bilinear_form_ms(f, g, weights, lattice, b):
    """Mel coefficient at ``b`` written as ``<G f, f>`` (real part)."""
    return bilinear_form(mel_multiplier(g, weights, lattice, b), f).real


@dataclass(frozen=True)
class AliasFactors:
    """Periodised inverse filter transform and averaging-window spectrum."""

    mel: np.ndarray    # over x
    time: np.ndarray   # over xi


def alias_factors(lam, w, lattice):
    """``M(x) = sum_l F^-1 Lambda(x - l N/beta)``, ``M_F(xi) = sum_k F w(xi - k N/alpha)``.

    ``lam`` is the filter on all ``N`` DFT bins, ``w`` the averaging window
    in cyclic order.
    """
    lam = np.asarray(lam)
    w = np.asarray(w)
    n = lam.size
    lattice.check(n)
    inv = np.fft.ifft(lam)
    fw = np.fft.fft(w)
    mel = sum(np.roll(inv, l * n // lattice.beta) for l in range(lattice.beta))
    tim = sum(np.roll(fw, k * n // lattice.alpha) for k in range(lattice.alpha))
    return AliasFactors(mel, tim)


def _difference_norm(amb_g, h, lam, w, lattice):
    n = lam.size
    af = alias_factors(lam, w, lattice)
    eta_ms = (n / lattice.beta) * af.mel[:, None] * amb_g
    eta_fb = af.time[None, :] * ambiguity_xi(involution(h))
    return np.linalg.norm(eta_ms - eta_fb) / np.sqrt(n)


def theorem1_bound(g, h, lam, w, lattice=Lattice()):
    """Factor ``C`` with ``|MS(b, v) - FB(b, v)| <= C ||f||^2`` for b on the lattice.

    Parameters are in cyclic order; ``lam`` covers all ``N`` bins and is
    sampled at every ``beta``-th bin by the mel spectrogram.
    """
    return _difference_norm(ambiguity_xi(g), np.asarray(h), np.asarray(lam),
                            np.asarray(w), lattice)


def theorem1_bounds(bank, g, filters, lattice=None):
    """:func:`theorem1_bound` for every channel of ``bank``."""
    if lattice is None:
        lattice = Lattice(1, filters.beta)
    amb = ambiguity_xi(g)
    full = filters.full_grid()
    n = bank.n
    return np.array([
        _difference_norm(amb, ch.kernel_cyclic(n), lam, ch.averaging_cyclic(n),
                         lattice)
        for ch, lam in zip(bank, full)])


def _errors(bank, g, filters, stride, hop, signals):
    lat = Lattice(hop, filters.beta)
    out = []
    for f in signals:
        ms = mel_spectrogram(f, g, filters, lat)
        fb = fb_features(f, bank, stride, hop)
        out.append(np.abs(ms - fb))
    return np.array(out)  # (signals, K, frames)


def _signals(n, n_signals, seed):
    if n_signals < 1:
        raise ValueError("need at least one signal")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n_signals, n))


def empirical_error_per_bin(bank, g, filters, lattice=None, n_signals=200,
                            seed=0, hop=None):
    """Mean and max ``|MS - FB|`` per channel over Gaussian random signals.

    The mel spectrogram is taken at time step ``hop`` (default: the lattice
    time step) and the filter bank at stride ``lattice.alpha``.

    Returns
    -------
    dict with ``mean``, ``max`` and ``max_normalized`` (largest
    ``|MS - FB| / ||f||^2``) per channel, and ``mean_energy`` (average
    ``||f||^2``).
    """
    if lattice is None:
        lattice = Lattice(1, filters.beta)
    hop = lattice.alpha if hop is None else hop
    sig = _signals(bank.n, n_signals, seed)
    err = _errors(bank, g, filters, lattice.alpha, hop, sig)
    energy = np.sum(sig ** 2, axis=1)
    return {
        "mean": err.mean(axis=(0, 2)),
        "max": err.max(axis=(0, 2)),
        "max_normalized": (err / energy[:, None, None]).max(axis=(0, 2)),
        "mean_energy": float(energy.mean()),
    }


def stride_sweep(bank, g, filters, strides=(21, 3, 1), n_signals=50, seed=0,
                 hop=None):
    """Mean ``|MS - FB|`` per channel for each stride, on a shared time grid.

    The grid step defaults to the least common multiple of the strides.
    Returns an array of shape ``(len(strides), K)``.
    """
    if hop is None:
        hop = 1
        for s in strides:
            hop = hop * s // gcd(hop, s)
    sig = _signals(bank.n, n_signals, seed)
    return np.array([_errors(bank, g, filters, s, hop, sig).mean(axis=(0, 2))
                     for s in strides])

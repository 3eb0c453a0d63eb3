"""Harmonic-domain signal and operator machinery.

Periodic signals are represented by two-sided Fourier coefficient vectors
over the orders h in {-h_max, ..., h_max}.  Real signals have conjugate
symmetric coefficients, X[-h] = conj(X[h]).  Multiplication by a periodic
matrix becomes a block-Toeplitz operator on the stacked coefficients, and
differentiation becomes a block-diagonal operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class HarmonicIndexSet:
    """Symmetric set of harmonic orders with fundamental frequency f1."""

    f1: float = 50.0
    h_max: int = 25

    def __post_init__(self):
        if self.h_max < 1:
            raise ValueError("h_max must be at least 1")
        if self.f1 <= 0:
            raise ValueError("f1 must be positive")

    @property
    def n(self) -> int:
        return 2 * self.h_max + 1

    @property
    def orders(self) -> np.ndarray:
        return np.arange(-self.h_max, self.h_max + 1)

    @property
    def freqs(self) -> np.ndarray:
        return self.f1 * self.orders

    def idx(self, h: int) -> int:
        if abs(h) > self.h_max:
            raise IndexError(f"order {h} outside band +-{self.h_max}")
        return h + self.h_max


@dataclass
class HarmonicSignal:
    """Fourier coefficients of a multichannel periodic signal.

    coeffs has shape (channels, n) with columns ordered -h_max .. h_max.
    The stacked vector form is harmonic-major: block h holds all channels.
    """

    index_set: HarmonicIndexSet
    coeffs: np.ndarray = field(default=None)

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=complex))
        if self.coeffs.shape[1] != self.index_set.n:
            raise ValueError("coefficient array does not match index set")

    @property
    def channels(self) -> int:
        return self.coeffs.shape[0]

    @classmethod
    def zeros(cls, index_set: HarmonicIndexSet, channels: int) -> "HarmonicSignal":
        return cls(index_set, np.zeros((channels, index_set.n), dtype=complex))

    @classmethod
    def constant(cls, index_set, values) -> "HarmonicSignal":
        """DC signal: coefficients only at h = 0."""
        values = np.atleast_1d(np.asarray(values, dtype=complex))
        sig = cls.zeros(index_set, values.size)
        sig.coeffs[:, index_set.idx(0)] = values
        return sig

    @classmethod
    def cosine(cls, index_set, amplitudes, phases, order=1) -> "HarmonicSignal":
        """Real cosines a*cos(order*w1*t + phi) per channel."""
        amplitudes = np.atleast_1d(np.asarray(amplitudes, dtype=float))
        phases = np.atleast_1d(np.asarray(phases, dtype=float))
        sig = cls.zeros(index_set, amplitudes.size)
        c = 0.5 * amplitudes * np.exp(1j * phases)
        sig.coeffs[:, index_set.idx(order)] = c
        sig.coeffs[:, index_set.idx(-order)] = np.conj(c)
        return sig

    def vector(self) -> np.ndarray:
        return self.coeffs.T.reshape(-1)

    @classmethod
    def from_vector(cls, index_set, vec, channels) -> "HarmonicSignal":
        vec = np.asarray(vec, dtype=complex)
        return cls(index_set, vec.reshape(index_set.n, channels).T)

    def get(self, h: int) -> np.ndarray:
        return self.coeffs[:, self.index_set.idx(h)]

    def conjugate_symmetry_error(self) -> float:
        return float(np.max(np.abs(self.coeffs - np.conj(self.coeffs[:, ::-1]))))

    def project_conjugate_symmetric(self) -> "HarmonicSignal":
        sym = 0.5 * (self.coeffs + np.conj(self.coeffs[:, ::-1]))
        return HarmonicSignal(self.index_set, sym)

    def sample(self, t) -> np.ndarray:
        """Evaluate the (real part of the) Fourier series at times t."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        phase = np.exp(
            1j * TWO_PI * self.index_set.f1 * np.outer(self.index_set.orders, t)
        )
        return np.real(self.coeffs @ phase)


def toeplitz_blocks(index_set: HarmonicIndexSet, coeffs: dict) -> np.ndarray:
    """Lift a periodic matrix to its block-Toeplitz harmonic operator.

    coeffs maps harmonic order to the (p, q) Fourier coefficient block of
    the time-periodic matrix.  Block (m, k) of the result is the coefficient
    at order m - k; orders outside the supplied set are zero (truncation).
    """
    blocks = {h: np.atleast_2d(np.asarray(b, dtype=complex)) for h, b in coeffs.items()}
    shapes = {b.shape for b in blocks.values()}
    if len(shapes) != 1:
        raise ValueError("all coefficient blocks must share one shape")
    p, q = shapes.pop()
    n = index_set.n
    out = np.zeros((n * p, n * q), dtype=complex)
    orders = index_set.orders
    for h, b in blocks.items():
        for m in range(n):
            k = m - h
            # column block index k satisfies orders[m] - orders[k] == h
            if 0 <= k < n:
                out[m * p : (m + 1) * p, k * q : (k + 1) * q] = b
    return out


def block_diag_per_order(index_set: HarmonicIndexSet, block_fn) -> np.ndarray:
    """Operator that acts independently per harmonic: block_fn(h) -> (p, q)."""
    blocks = [np.atleast_2d(np.asarray(block_fn(h), dtype=complex)) for h in index_set.orders]
    p, q = blocks[0].shape
    n = index_set.n
    out = np.zeros((n * p, n * q), dtype=complex)
    for m, b in enumerate(blocks):
        out[m * p : (m + 1) * p, m * q : (m + 1) * q] = b
    return out


def derivative_operator(index_set: HarmonicIndexSet, channels: int) -> np.ndarray:
    """Frequency-domain d/dt: block-diagonal j*2*pi*f1*h per order."""
    return block_diag_per_order(
        index_set, lambda h: 1j * TWO_PI * index_set.f1 * h * np.eye(channels)
    )


# power-invariant Park transform, A-axis aligned, theta = 2*pi*f1*t,
# DQ components only (the zero-sequence row is dropped)
_PHASE_SHIFTS = np.array([0.0, TWO_PI / 3.0, -TWO_PI / 3.0])


def park_time(t, f1: float, inverse: bool = False) -> np.ndarray:
    """Park matrix sampled at time t: (2, 3) abc->dq, or its (3, 2) transpose."""
    theta = TWO_PI * f1 * t
    ang = theta - _PHASE_SHIFTS
    m = np.sqrt(2.0 / 3.0) * np.vstack([np.cos(ang), -np.sin(ang)])
    return m.T if inverse else m


def park_coeffs(inverse: bool = False) -> dict:
    """Fourier coefficients (orders +-1) of the Park matrix."""
    scale = np.sqrt(2.0 / 3.0)
    e = np.exp(-1j * _PHASE_SHIFTS)
    plus = 0.5 * scale * np.vstack([e, 1j * e])
    if inverse:
        return {1: plus.T, -1: np.conj(plus).T}
    return {1: plus, -1: np.conj(plus)}


def park_operator(index_set: HarmonicIndexSet, inverse: bool = False) -> np.ndarray:
    """Harmonic-domain Park transform (abc -> dq, or dq -> abc if inverse)."""
    return toeplitz_blocks(index_set, park_coeffs(inverse))


def restrict_band(coeffs: np.ndarray, from_set: HarmonicIndexSet,
                  to_set: HarmonicIndexSet) -> np.ndarray:
    """Truncate (channels, n) coefficients from a wider band to a narrower one.

    Solves are typically run on a guard-extended band so that intermodulation
    near the band edge is captured; results are reported on the study band.
    """
    if to_set.h_max > from_set.h_max:
        raise ValueError("target band is wider than the source band")
    cols = [from_set.idx(h) for h in to_set.orders]
    return np.atleast_2d(coeffs)[:, cols]


def fourier_coeffs_from_samples(samples: np.ndarray, index_set: HarmonicIndexSet) -> np.ndarray:
    """DFT of one exact fundamental period, per channel.

    samples has shape (channels, n_samples) covering t in [0, 1/f1).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    spec = np.fft.fft(samples, axis=1) / samples.shape[1]
    n_s = samples.shape[1]
    out = np.zeros((samples.shape[0], index_set.n), dtype=complex)
    for h in index_set.orders:
        out[:, index_set.idx(h)] = spec[:, h % n_s]
    return out

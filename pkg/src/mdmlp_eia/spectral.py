"""Real FFT pair and the complex-valued frequency MLP.

Spectra are carried as separate real and imaginary tensors so that the
autodiff core never sees complex numbers. The transforms themselves are
numpy's pocketfft (mixed radix, any length); their backward rules are the
adjoint transforms written out below.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, Tensor, leaky_relu, matmul, record, softshrink

__all__ = ["ComplexSpectrum", "FreMlpParams", "rfft", "irfft", "value_embed", "fre_mlp"]


@dataclass(frozen=True)
class ComplexSpectrum:
    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise DimensionError(f"re/im shapes differ: {self.re.shape} vs {self.im.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape

    def to_complex(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data


@dataclass(frozen=True)
class FreMlpParams:
    w_re: Tensor
    w_im: Tensor
    b_re: Tensor
    b_im: Tensor


def _hermitian_weights(n_bins: int, length: int) -> np.ndarray:
    # bins that appear twice in the full spectrum (all but DC and, for even L, Nyquist)
    w = np.full(n_bins, 2.0)
    w[0] = 1.0
    if length % 2 == 0:
        w[-1] = 1.0
    return w


def rfft(x: Tensor, axis: int = -1) -> ComplexSpectrum:
    """Unnormalised DFT of real input along ``axis``, non-negative bins only."""
    axis = axis % x.ndim
    length = x.shape[axis]
    if length < 2:
        raise DimensionError(f"rfft needs length >= 2 along axis {axis}, got {length}")
    spec = np.fft.rfft(x.data, axis=axis)
    n_bins = spec.shape[axis]

    # The real and imaginary outputs are two linear maps of x; their adjoints
    # combine into one complex inverse transform of the zero-padded gradient.
    def adjoint(g_re: np.ndarray, g_im: np.ndarray) -> np.ndarray:
        full_shape = list(g_re.shape)
        full_shape[axis] = length
        z = np.zeros(full_shape, dtype=np.complex128)
        idx = [slice(None)] * len(full_shape)
        idx[axis] = slice(0, n_bins)
        z[tuple(idx)] = g_re - 1j * g_im
        # sum_k g_re cos(2πkl/L) - g_im sin(2πkl/L) = Re(sum_k conj-paired terms)
        return np.real(np.fft.fft(z, axis=axis))

    re = record(spec.real.copy(), (x,), lambda g: (adjoint(g, np.zeros_like(g)),), "rfft_re")
    im = record(spec.imag.copy(), (x,), lambda g: (adjoint(np.zeros_like(g), g),), "rfft_im")
    return ComplexSpectrum(re, im)


def irfft(s: ComplexSpectrum, length: int, axis: int = -1) -> Tensor:
    """Inverse of :func:`rfft` (includes the 1/L factor).

    As with numpy, the imaginary parts of the DC bin (and the Nyquist bin for
    even ``length``) are ignored.
    """
    axis = axis % len(s.shape)
    n_bins = s.shape[axis]
    if n_bins != length // 2 + 1:
        raise DimensionError(f"irfft expects {length // 2 + 1} bins for length {length}, got {n_bins}")
    out = np.fft.irfft(s.to_complex(), n=length, axis=axis)
    shape = [1] * len(s.shape)
    shape[axis] = n_bins
    weights = (_hermitian_weights(n_bins, length) / length).reshape(shape)

    def grad_fn(g):
        spec = np.fft.rfft(g, axis=axis)
        g_re = weights * spec.real
        g_im = weights * spec.imag
        # ignored imaginary parts get exactly zero gradient
        idx = [slice(None)] * g.ndim
        idx[axis] = 0
        g_im[tuple(idx)] = 0.0
        if length % 2 == 0:
            idx[axis] = n_bins - 1
            g_im[tuple(idx)] = 0.0
        return g_re, g_im

    # one node with two inputs keeps the adjoint computation shared
    return record(out, (s.re, s.im), grad_fn, "irfft")


def value_embed(x2: Tensor, w: Tensor) -> Tensor:
    """Scalar-to-vector embedding: out[..., l, e] = x2[..., l] * w[e]."""
    if w.ndim != 1 or w.shape[0] < 1:
        raise DimensionError(f"embedding vector must be 1-d and non-empty, got {w.shape}")
    return x2.reshape(*x2.shape, 1) * w


def fre_mlp(
    s: ComplexSpectrum,
    p: FreMlpParams,
    lam: float = 0.01,
    slope: float = 0.01,
) -> ComplexSpectrum:
    """Complex affine map over the embedding axis, then LeakyReLU and softshrink.

    Weights are shared over every channel and frequency bin.
    """
    e = p.w_re.shape[0]
    if s.shape[-1] != e or p.w_re.shape != (e, e) or p.w_im.shape != (e, e):
        raise DimensionError(f"spectrum last dim {s.shape[-1]} does not match weights {p.w_re.shape}")
    re = matmul(s.re, p.w_re) - matmul(s.im, p.w_im) + p.b_re
    im = matmul(s.re, p.w_im) + matmul(s.im, p.w_re) + p.b_im
    re = softshrink(leaky_relu(re, slope), lam)
    im = softshrink(leaky_relu(im, slope), lam)
    return ComplexSpectrum(re, im)


import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdmlp_eia.spectral import ComplexSpectrum, FreMlpParams, fre_mlp, irfft, rfft, value_embed
from mdmlp_eia.tensor import DimensionError, Tape, backward, finite_diff_check, tensor


def naive_dft(x: np.ndarray) -> np.ndarray:
    """O(L^2) real-input DFT along the last axis, non-negative bins only."""
    n = x.shape[-1]
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    angle = -2.0 * np.pi * k * t / n
    return x @ np.cos(angle).T + 1j * (x @ np.sin(angle).T)


class TestRfft:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 64), st.integers(0, 2**31 - 1))
    def test_matches_naive_dft(self, n, seed):
        x = np.random.default_rng(seed).normal(size=(3, n))
        s = rfft(tensor(x))
        assert np.max(np.abs(s.to_complex() - naive_dft(x))) < 1e-9

    @pytest.mark.parametrize("n", [4, 8, 96, 97, 192])
    def test_roundtrip(self, n, rng):
        x = rng.normal(size=(2, 5, n))
        back = irfft(rfft(tensor(x)), n)
        assert np.max(np.abs(back.data - x)) < 1e-9

    def test_other_axis(self, rng):
        x = rng.normal(size=(10, 3))
        s = rfft(tensor(x), axis=0)
        assert s.shape == (6, 3)
        assert np.allclose(s.to_complex(), naive_dft(x.T).T)

    def test_length_one_rejected(self):
        with pytest.raises(DimensionError):
            rfft(tensor(np.ones((3, 1))))

    def test_bin_count_checked(self, rng):
        s = rfft(tensor(rng.normal(size=8)))
        with pytest.raises(DimensionError):
            irfft(s, 12)

    def test_constant_signal_has_only_dc(self):
        s = rfft(tensor(np.full(16, 2.0))).to_complex()
        assert s[0] == pytest.approx(32.0)
        assert np.max(np.abs(s[1:])) < 1e-12

    @pytest.mark.parametrize("n", [6, 7])
    def test_rfft_adjoint(self, n, rng):
        w_re, w_im = rng.normal(size=n // 2 + 1), rng.normal(size=n // 2 + 1)

        def f(t):
            s = rfft(t)
            return (s.re * w_re + s.im * w_im).sum()

        assert finite_diff_check(f, rng.normal(size=(2, n))) < 1e-8

    @pytest.mark.parametrize("n", [6, 7])
    def test_irfft_adjoint(self, n, rng):
        w = rng.normal(size=n)
        im = tensor(rng.normal(size=n // 2 + 1))
        re = tensor(rng.normal(size=n // 2 + 1))
        assert finite_diff_check(lambda t: (irfft(ComplexSpectrum(t, im), n) * w).sum(), re.data) < 1e-8
        assert finite_diff_check(lambda t: (irfft(ComplexSpectrum(re, t), n) * w).sum(), im.data) < 1e-8

    def test_ignored_imaginary_bins_get_zero_gradient(self, rng):
        n = 8
        re = tensor(rng.normal(size=5), requires_grad=True)
        im = tensor(rng.normal(size=5), requires_grad=True)
        with Tape() as tape:
            out = (irfft(ComplexSpectrum(re, im), n) * rng.normal(size=n)).sum()
        g = backward(tape, out, {"im": im})["im"]
        assert g[0] == 0.0 and g[-1] == 0.0


class TestFreMlp:
    def params(self, rng, e=4):
        return FreMlpParams(*(tensor(rng.normal(size=s)) for s in [(e, e), (e, e), (e,), (e,)]))

    def test_value_embed(self):
        out = value_embed(tensor([[1.0, 2.0]]), tensor([1.0, -1.0, 0.5]))
        assert out.shape == (1, 2, 3)
        assert out.data[0, 1].tolist() == [2.0, -2.0, 1.0]

    def test_value_embed_rejects_matrix(self):
        with pytest.raises(DimensionError):
            value_embed(tensor([1.0]), tensor(np.ones((2, 2))))

    def test_complex_affine_map(self, rng):
        p = self.params(rng)
        re, im = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        out = fre_mlp(ComplexSpectrum(tensor(re), tensor(im)), p, lam=0.0, slope=1.0)
        w = p.w_re.data + 1j * p.w_im.data
        expected = (re + 1j * im) @ w + (p.b_re.data + 1j * p.b_im.data)
        assert np.allclose(out.to_complex(), expected)

    def test_shrink_zeroes_small_coefficients(self, rng):
        p = FreMlpParams(tensor(np.eye(2)), tensor(np.zeros((2, 2))), tensor(np.zeros(2)), tensor(np.zeros(2)))
        s = ComplexSpectrum(tensor([[0.005, 0.5]]), tensor([[-0.005, 0.0]]))
        out = fre_mlp(s, p, lam=0.01, slope=0.01)
        assert out.re.data[0, 0] == 0.0 and out.im.data[0, 0] == 0.0
        assert out.re.data[0, 1] == pytest.approx(0.49)

    def test_weight_shape_checked(self, rng):
        s = ComplexSpectrum(tensor(np.ones((2, 3))), tensor(np.ones((2, 3))))
        with pytest.raises(DimensionError):
            fre_mlp(s, self.params(rng, 4))

    def test_gradient_through_spectrum(self, rng):
        p = self.params(rng, 3)
        w = rng.normal(size=(3, 10))

        def f(t):
            s = rfft(value_embed(t, tensor([0.7, -1.2, 2.0])).transpose(1, 0), axis=-1)
            y = fre_mlp(ComplexSpectrum(s.re.transpose(1, 0), s.im.transpose(1, 0)), p, lam=0.0)
            back = irfft(ComplexSpectrum(y.re.transpose(1, 0), y.im.transpose(1, 0)), 10)
            return (back * w).sum()

        assert finite_diff_check(f, rng.normal(size=10)) < 1e-7

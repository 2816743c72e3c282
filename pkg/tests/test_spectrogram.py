import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import naive_stft
from sparsetrait.audio import AudioClip
from sparsetrait.spectrogram import (
    ClipTooShortError, Spectrogram, SpectrogramParams, hamming, load_spectrogram,
    normalize, save_spectrogram, spectrogram, stft_magnitude,
)


def clip(x, fs=8000):
    return AudioClip(np.asarray(x, dtype=float), fs, "c")


def test_zero_clip_shape():
    S = stft_magnitude(clip(np.zeros(1024)))
    assert S.values.shape == (65, 29)
    assert not S.values.any()


def test_frame_count():
    p = SpectrogramParams()
    assert p.n_frames(1024) == 29 and p.n_bins == 65
    assert stft_magnitude(clip(np.zeros(1024 + 31))).shape == (65, 29)
    assert stft_magnitude(clip(np.zeros(1024 + 32))).shape == (65, 30)
    assert stft_magnitude(clip(np.zeros(128))).shape == (65, 1)


def test_bin16_sine_against_naive_dft():
    fs = 8000
    x = 0.5 * np.sin(2 * np.pi * (16 * fs / 128) * np.arange(1024) / fs)
    S = stft_magnitude(clip(x, fs)).values
    assert np.all(S.argmax(axis=0) == 16)
    assert np.max(np.abs(S - naive_stft(x))) < 1e-9


def test_hamming_symmetric_definition():
    w = hamming(128)
    assert w[0] == pytest.approx(0.08) and w[-1] == pytest.approx(0.08)
    np.testing.assert_allclose(w, w[::-1], atol=1e-15)


def test_parseval_white_noise():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, 1024)
    S = stft_magnitude(clip(x)).values
    L = 128
    w = hamming(L)
    for t in range(S.shape[1]):
        seg = w * x[t * 32:t * 32 + L]
        full = np.abs(np.fft.fft(seg)) ** 2
        # one-sided bins 1..L/2-1 stand for two bins each
        one_sided = S[0, t] ** 2 + S[-1, t] ** 2 + 2 * np.sum(S[1:-1, t] ** 2)
        assert abs(one_sided - full.sum()) < 1e-9
        assert abs(one_sided / L - np.sum(seg ** 2)) < 1e-9


def test_shift_covariance():
    rng = np.random.default_rng(4)
    x = rng.uniform(-1, 1, 1024 + 32)
    A = stft_magnitude(clip(x[32:])).values
    B = stft_magnitude(clip(x)).values
    np.testing.assert_allclose(B[:, 1:], A, rtol=0, atol=1e-9)


def test_too_short():
    with pytest.raises(ClipTooShortError):
        stft_magnitude(clip(np.zeros(127)))


@pytest.mark.parametrize("bad", [dict(window_len=1), dict(hop=0), dict(hop=129), dict(window="hann")])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        SpectrogramParams(**bad)


def test_normalize_examples():
    S = Spectrogram(np.array([[2.0, 0.0], [4.0, 0.0], [8.0, 0.0]]))
    N = normalize(S).values
    np.testing.assert_array_equal(N[:, 0], [0.25, 0.5, 1.0])
    np.testing.assert_array_equal(N[:, 1], [0.0, 0.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(128, 700),
              elements=st.floats(-1, 1, allow_nan=False, allow_subnormal=False)))
def test_normalize_range_and_idempotence(x):
    N = spectrogram(clip(x)).values
    assert np.all(np.isfinite(N))
    assert N.min() >= 0 and N.max() <= 1
    nonzero = N.max(axis=0) > 0
    assert np.all(N[:, nonzero].max(axis=0) == 1.0)
    again = normalize(Spectrogram(N)).values
    np.testing.assert_array_equal(again, N)


def test_spgm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    S = spectrogram(clip(rng.uniform(-1, 1, 1024)))
    save_spectrogram(tmp_path / "s.spgm", S, {"seed": 3})
    raw = (tmp_path / "s.spgm").read_bytes()
    assert raw[:4] == b"SPGM"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 65
    assert int.from_bytes(raw[12:16], "little") == 29
    body = np.frombuffer(raw[16:16 + 8 * 65 * 29], dtype="<f8").reshape(65, 29)
    np.testing.assert_array_equal(body, S.values)
    back = load_spectrogram(tmp_path / "s.spgm")
    np.testing.assert_array_equal(back.values, S.values)
    assert back.clip_id == "c" and back.normalized

import numpy as np
import pytest

from meetsep import (
    DirectionalObservations,
    TimeSignal,
    istft,
    normalize_observations,
    stft,
)
from meetsep.spectral import hann_window


def _signal(samples, fs=16000):
    return TimeSignal(samples=samples, sample_rate=fs)


class TestStft:
    def test_zero_signal_gives_zero_spectrogram(self):
        spec = stft(_signal(np.zeros((5000, 2))), 1024, 256)
        assert spec.data.shape[1] == 513
        assert spec.data.shape[2] == 2
        np.testing.assert_array_equal(spec.data, 0)

    def test_cosine_peaks_at_expected_bin_against_dft_oracle(self):
        # Single frame, rectangular content windowed by Hann: compare the
        # windowed frame against a direct DFT and check the peak bin.
        k0 = 100
        n = np.arange(1024)
        x = np.cos(2 * np.pi * k0 * n / 1024)
        spec = stft(_signal(x), 1024, 256)
        pad = 1024 - 256
        # Frame index whose window exactly covers the first 1024 samples.
        t = pad // 256
        frame = spec.data[t, :, 0]
        assert np.argmax(np.abs(frame)) == k0

        window = hann_window(1024)
        oracle = np.array(
            [np.sum(window * x * np.exp(-2j * np.pi * f * n / 1024)) for f in (k0 - 1, k0, k0 + 1)]
        )
        np.testing.assert_allclose(
            frame[[k0 - 1, k0, k0 + 1]], oracle, rtol=1e-9, atol=1e-9
        )

    def test_defaults_match_pipeline_settings(self):
        spec = stft(_signal(np.zeros(4096)))
        assert spec.frame_size == 1024
        assert spec.frame_shift == 256

    def test_rejects_short_signal(self):
        with pytest.raises(ValueError, match="shorter than one frame"):
            stft(_signal(np.zeros(512)), 1024, 256)

    def test_rejects_bad_sizes(self):
        with pytest.raises(ValueError, match="power of two"):
            stft(_signal(np.zeros(5000)), 1000, 250)
        with pytest.raises(ValueError, match="divide"):
            stft(_signal(np.zeros(5000)), 1024, 300)

    def test_linearity(self, rng):
        x = rng.standard_normal((3000, 2))
        y = rng.standard_normal((3000, 2))
        a, b = 0.7, -1.3
        left = stft(_signal(a * x + b * y), 512, 128).data
        right = a * stft(_signal(x), 512, 128).data + b * stft(_signal(y), 512, 128).data
        np.testing.assert_allclose(left, right, atol=1e-9)


class TestIstft:
    def test_zero_spectrogram_gives_zero_signal(self):
        spec = stft(_signal(np.zeros(4096)), 1024, 256)
        out = istft(spec)
        np.testing.assert_array_equal(out.samples, 0)

    @pytest.mark.parametrize("channels", [1, 3])
    @pytest.mark.parametrize("size,shift", [(1024, 256), (512, 128), (256, 64)])
    def test_round_trip_white_noise(self, rng, channels, size, shift):
        x = rng.standard_normal((9000, channels))
        out = istft(stft(_signal(x), size, shift))
        assert out.samples.shape == x.shape
        err = np.max(np.abs(out.samples - x))
        assert err < 1e-6 * np.max(np.abs(x))

    def test_long_multichannel_round_trip_preserves_convention(self, rng):
        # 50 s, 7 channels: length and channel count survive the round trip.
        fs = 16000
        x = rng.standard_normal((50 * fs, 7)) * 0.1
        spec = stft(_signal(x, fs), 1024, 256)
        out = istft(spec)
        assert out.num_samples == 50 * fs
        assert out.num_channels == 7
        assert out.sample_rate == fs
        np.testing.assert_allclose(out.samples, x, atol=1e-6 * np.max(np.abs(x)))

    def test_rejects_inconsistent_metadata(self, rng):
        spec = stft(_signal(rng.standard_normal(4096)), 1024, 256)
        import dataclasses

        with pytest.raises(ValueError):
            istft(dataclasses.replace(spec, frame_shift=300))


class TestNormalize:
    def test_simple_vector(self):
        y = np.array([[[3.0, 4.0j]]])
        obs = normalize_observations(y)
        np.testing.assert_allclose(obs.data[0, 0], [0.6, 0.8j])
        assert not obs.zero_norm_mask.any()

    def test_zero_vector_flagged_and_uniform(self):
        y = np.zeros((1, 2, 2), dtype=complex)
        y[0, 1] = [1.0, 1.0]
        obs = normalize_observations(y)
        assert obs.zero_norm_mask[0, 0]
        assert not obs.zero_norm_mask[0, 1]
        np.testing.assert_allclose(obs.data[0, 0], np.ones(2) / np.sqrt(2))

    def test_unit_norm_everywhere(self, rng):
        y = rng.standard_normal((10, 20, 4)) + 1j * rng.standard_normal((10, 20, 4))
        obs = normalize_observations(y)
        np.testing.assert_allclose(
            np.linalg.norm(obs.data, axis=-1), 1.0, atol=1e-9
        )

    def test_idempotent(self, rng):
        y = rng.standard_normal((6, 8, 3)) + 1j * rng.standard_normal((6, 8, 3))
        once = normalize_observations(y)
        twice = normalize_observations(once.data)
        np.testing.assert_allclose(twice.data, once.data, atol=1e-12)

    def test_preserves_mask_type(self, rng):
        y = rng.standard_normal((4, 4, 2)) + 0j
        obs = normalize_observations(y)
        assert isinstance(obs, DirectionalObservations)
        assert obs.zero_norm_mask.dtype == bool

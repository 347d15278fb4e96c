import numpy as np
import pytest
import torch

from djcm import AudioClip, ModelConfig, PitchTrack, SongRecord, StftConfig

torch.set_num_threads(1)


# Small-everything configuration used by model/training/CLI tests: 128-point
# FFT keeps 64 network bins, so a 4-level encoder still halves cleanly.
TOY_STFT = StftConfig(sample_rate=16000, hop=32, window_size=128, n_fft=128)


@pytest.fixture
def toy_stft():
    return TOY_STFT


@pytest.fixture
def toy_model_cfg():
    def make(**overrides):
        kw = dict(encoder_channels=(2, 3, 4, 5), freq_bins_in=64,
                  gru_hidden=8, stft=TOY_STFT)
        kw.update(overrides)
        return ModelConfig(**kw)
    return make


def make_toy_record(seed: int, n_samples: int = 1024, hz: float = 440.0) -> SongRecord:
    """A record whose label grid matches the toy hop (32 samples)."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples) / 16000.0
    vocals = 0.3 * np.sin(2 * np.pi * hz * t)
    accompaniment = 0.1 * rng.standard_normal(n_samples)
    labels = np.full(n_samples // TOY_STFT.hop + 1, hz)
    return SongRecord(
        song_id=f"toy_{seed}",
        mixture=AudioClip(vocals + accompaniment, 16000),
        vocals=AudioClip(vocals, 16000),
        accompaniment=AudioClip(accompaniment, 16000),
        pitch_labels=PitchTrack(labels, hop_seconds=TOY_STFT.hop / 16000.0),
    )


@pytest.fixture
def toy_records():
    return [make_toy_record(1), make_toy_record(2, hz=330.0)]

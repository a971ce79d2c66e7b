import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lvdsk.features import (LOG_FLOOR, AudioFormatError, AudioSignal, FeatureMatrix, MfccConfig,
                            compute_features, deltas, filterbank_energies, frame_count, load_wav,
                            mel_filterbank, read_features, write_features, write_wav)


def _write_raw_wav(path, pcm, channels=1, width=2, rate=16000):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(width)
        wf.setframerate(rate)
        wf.writeframes(np.asarray(pcm).tobytes())


def test_load_wav_scaling(tmp_path):
    p = tmp_path / "a.wav"
    _write_raw_wav(p, np.array([16384, -32768, 0], dtype="<i2"))
    audio = load_wav(p)
    assert audio.samples.tolist() == [0.5, -1.0, 0.0]
    assert audio.sample_rate == 16000


def test_load_wav_one_second(tmp_path):
    p = tmp_path / "a.wav"
    _write_raw_wav(p, np.zeros(16000, dtype="<i2"))
    assert len(load_wav(p)) == 16000


def test_load_wav_rejects_stereo(tmp_path):
    p = tmp_path / "s.wav"
    _write_raw_wav(p, np.zeros(20, dtype="<i2"), channels=2)
    with pytest.raises(AudioFormatError, match="channel count 2 unsupported"):
        load_wav(p)


def test_load_wav_rejects_8bit_and_garbage(tmp_path):
    p = tmp_path / "b.wav"
    _write_raw_wav(p, np.zeros(20, dtype=np.uint8), width=1)
    with pytest.raises(AudioFormatError, match="16-bit"):
        load_wav(p)
    g = tmp_path / "g.wav"
    g.write_bytes(b"RIFF\x00\x00junkjunkjunk")
    with pytest.raises(AudioFormatError):
        load_wav(g)
    with pytest.raises(FileNotFoundError):
        load_wav(tmp_path / "missing.wav")


def test_wav_roundtrip(tmp_path, rng):
    x = np.round(rng.uniform(-0.9, 0.9, 500) * 32768) / 32768
    write_wav(tmp_path / "r.wav", AudioSignal(x, 8000))
    back = load_wav(tmp_path / "r.wav")
    assert back.sample_rate == 8000
    np.testing.assert_array_equal(back.samples, x)


def test_frame_count_examples():
    cfg = MfccConfig()
    assert frame_count(16000, cfg, 16000) == 99
    assert frame_count(320, cfg, 16000) == 1
    with pytest.raises(ValueError):
        frame_count(319, cfg, 16000)


def test_config_invariants():
    with pytest.raises(ValueError):
        MfccConfig(frame_shift=0.03)
    with pytest.raises(ValueError):
        MfccConfig(n_cepstra=30)
    with pytest.raises(ValueError):
        compute_features(AudioSignal(np.ones(400), 16000), MfccConfig(fft_size=256))


def test_default_dimension_is_38(rng):
    f = compute_features(AudioSignal(rng.normal(0, 0.1, 16000), 16000))
    assert (f.dim, f.frames) == (38, 99)
    assert MfccConfig(drop_static_c0=False).output_dim == 39
    assert compute_features(AudioSignal(rng.normal(0, 0.1, 800), 16000), MfccConfig(drop_static_c0=False)).dim == 39


def test_zero_signal():
    audio = AudioSignal(np.zeros(1600), 16000)
    e = filterbank_energies(audio)
    with np.errstate(divide="ignore"):
        assert np.all(np.maximum(np.log(e), LOG_FLOOR) == LOG_FLOOR)
    f = compute_features(audio).data
    assert np.all(f[12:] == 0.0)


def test_sine_peaks_in_filter_nearest_1khz():
    rate = 16000
    t = np.arange(rate // 2) / rate
    energies = filterbank_energies(AudioSignal(0.5 * np.sin(2 * np.pi * 1000 * t), rate))
    # independent centre computation on the HTK mel scale
    mel_hi = 2595 * np.log10(1 + 8000 / 700)
    centres = 700 * (10 ** (np.linspace(0, mel_hi, 28)[1:-1] / 2595) - 1)
    expected = int(np.argmin(np.abs(centres - 1000)))
    assert np.all(np.argmax(energies, axis=1) == expected)
    _, c = mel_filterbank(MfccConfig(), rate)
    np.testing.assert_allclose(c, centres, rtol=1e-12)


def test_filterbank_shape_and_peaks():
    w, centres = mel_filterbank(MfccConfig(), 16000)
    assert w.shape == (26, 257)
    assert np.all(w >= 0) and np.all(w <= 1)
    freqs = np.arange(257) * 16000 / 512
    for i in range(26):
        assert abs(freqs[np.argmax(w[i])] - centres[i]) <= 16000 / 512


def test_deltas_against_direct_regression(rng):
    c = rng.normal(size=(9, 3))
    got = deltas(c, 2)
    T = c.shape[0]
    for t in range(T):
        acc = sum(n * (c[min(t + n, T - 1)] - c[max(t - n, 0)]) for n in (1, 2))
        np.testing.assert_allclose(got[t], acc / 10.0, rtol=1e-14, atol=1e-15)


def test_delta_of_constant_is_zero():
    c = np.tile([1.5, -2.0, 3.25], (12, 1))
    assert np.all(deltas(c, 2) == 0.0)
    assert np.all(deltas(deltas(c, 3), 3) == 0.0)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(320, 3000), seed=st.integers(0, 2**31))
def test_prepending_one_hop_adds_one_frame(n, seed):
    r = np.random.default_rng(seed)
    cfg = MfccConfig()
    x = r.uniform(-0.5, 0.5, n)
    longer = np.concatenate([r.uniform(-0.5, 0.5, 160), x])
    assert frame_count(longer.size, cfg, 16000) == frame_count(x.size, cfg, 16000) + 1


def test_determinism_and_lvf_roundtrip(tmp_path, rng):
    audio = AudioSignal(rng.normal(0, 0.1, 5000), 16000)
    f1, f2 = compute_features(audio), compute_features(audio)
    assert np.array_equal(f1.data, f2.data)
    write_features(tmp_path / "a.lvf", f1)
    write_features(tmp_path / "b.lvf", f2)
    assert (tmp_path / "a.lvf").read_bytes() == (tmp_path / "b.lvf").read_bytes()
    assert np.array_equal(read_features(tmp_path / "a.lvf").data, f1.data)


def test_lvf_layout(tmp_path):
    data = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    write_features(tmp_path / "x.lvf", FeatureMatrix(data))
    blob = (tmp_path / "x.lvf").read_bytes()
    assert blob[:4] == b"LVF1"
    assert struct.unpack("<II", blob[4:12]) == (2, 3)
    assert struct.unpack("<6d", blob[12:]) == (1.0, 4.0, 2.0, 5.0, 3.0, 6.0)


def test_lvf_rejects_bad_files(tmp_path):
    (tmp_path / "bad.lvf").write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(ValueError):
        read_features(tmp_path / "bad.lvf")
    (tmp_path / "short.lvf").write_bytes(b"LVF1" + struct.pack("<II", 2, 2) + bytes(8))
    with pytest.raises(ValueError, match="expected 2x2"):
        read_features(tmp_path / "short.lvf")


def test_domain_type_invariants():
    with pytest.raises(ValueError):
        AudioSignal([], 16000)
    with pytest.raises(ValueError):
        AudioSignal([0.1, np.nan], 16000)
    with pytest.raises(ValueError):
        AudioSignal([0.1], 0)
    with pytest.raises(ValueError):
        FeatureMatrix(np.array([[np.inf]]))

import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xception1d import audio as A


def wav_bytes(pcm, channels=1, bits=16, code=1, rate=16000):
    data = np.asarray(pcm, dtype="<i2").tobytes()
    block = channels * bits // 8
    return struct.pack(
        "<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(data), b"WAVE",
        b"fmt ", 16, code, channels, rate, rate * block, block, bits, b"data", len(data),
    ) + data


def test_minimal_fixture():
    blob = wav_bytes([0, 16384, -32768])
    assert len(blob) == 44 + 6
    samples, rate = A.read_wav(blob)
    assert rate == 16000
    np.testing.assert_array_equal(samples, [0.0, 0.5, -1.0])


def test_empty_stream_is_malformed():
    with pytest.raises(A.MalformedHeaderError):
        A.read_wav(b"")


@pytest.mark.parametrize("kw", [dict(channels=2), dict(bits=8), dict(code=3)])
def test_unsupported_formats(kw):
    with pytest.raises(A.UnsupportedFormatError):
        A.read_wav(wav_bytes([0, 1, 2, 3], **kw))


def test_truncated_data():
    with pytest.raises(A.TruncatedDataError):
        A.read_wav(wav_bytes([1, 2, 3, 4])[:-3])


def test_error_types_are_distinct():
    kinds = {A.MalformedHeaderError, A.UnsupportedFormatError, A.TruncatedDataError}
    assert len(kinds) == 3 and all(issubclass(k, A.WavError) for k in kinds)


def test_skips_unknown_chunks():
    blob = wav_bytes([5, -5])
    extra = b"LIST" + struct.pack("<I", 3) + b"abc\x00"
    blob = blob[:36] + extra + blob[36:]
    np.testing.assert_array_equal(A.read_wav(blob)[0] * 32768, [5, -5])


def test_normalize_length_examples():
    x = np.arange(16000, dtype=np.float32)
    np.testing.assert_array_equal(A.normalize_length(x), x)
    short = np.ones(15000)
    out = A.normalize_length(short)
    np.testing.assert_array_equal(out[:15000], short)
    np.testing.assert_array_equal(out[15000:], np.zeros(1000))
    long = np.arange(18000)
    np.testing.assert_array_equal(A.normalize_length(long), long[1000:17000])
    with pytest.raises(ValueError):
        A.normalize_length(np.array([]))


@given(st.integers(1, 40000))
@settings(max_examples=50, deadline=None)
def test_normalize_length_is_always_target(n):
    assert A.normalize_length(np.zeros(n)).shape == (16000,)


def test_round_trip_exact_values(tmp_path):
    A.write_wav([0.0, 0.5, -1.0], tmp_path / "a.wav")
    samples, _ = A.read_wav((tmp_path / "a.wav").read_bytes())
    np.testing.assert_array_equal(samples, [0.0, 0.5, -1.0])


def test_round_trip_quantization_bound():
    x = np.random.default_rng(0).uniform(-1, A.MAX_SAMPLE, size=50000)
    y, _ = A.read_wav(A.encode_wav(x))
    assert np.max(np.abs(y - x)) <= 1 / 32768


@given(st.lists(st.integers(-32768, 32767), min_size=1, max_size=200))
@settings(max_examples=100, deadline=None)
def test_representable_samples_round_trip_exactly(pcm):
    x = np.array(pcm) / 32768.0
    np.testing.assert_array_equal(A.read_wav(A.encode_wav(x))[0], x)


def test_writes_are_byte_identical(tmp_path):
    x = np.random.default_rng(1).uniform(-1, 1, 100)
    A.write_wav(x, tmp_path / "a.wav")
    A.write_wav(x, tmp_path / "b.wav")
    assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()


@given(st.binary(max_size=120))
@settings(max_examples=300, deadline=None)
def test_arbitrary_bytes_only_raise_wav_errors(blob):
    try:
        samples, _ = A.read_wav(blob)
    except A.WavError:
        return
    assert samples.dtype == np.float32


def test_load_clip_rejects_other_rates(tmp_path):
    (tmp_path / "a.wav").write_bytes(wav_bytes([0] * 10, rate=8000))
    with pytest.raises(A.UnsupportedFormatError, match="8000"):
        A.load_clip(tmp_path / "a.wav")


def test_load_clip_normalizes(tmp_path):
    A.write_wav(np.full(100, 0.25), tmp_path / "a.wav")
    clip = A.load_clip(tmp_path / "a.wav", "yes", "abc")
    assert clip.samples.shape == (16000,) and clip.samples.dtype == np.float32
    assert clip.samples[0] == 0.25 and clip.samples[-1] == 0.0
    assert clip.word == "yes" and clip.augmented is None

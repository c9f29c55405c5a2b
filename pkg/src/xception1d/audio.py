"""16-bit mono PCM WAV reading/writing and fixed-length clip normalization."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
CLIP_LENGTH = 16000
# largest value representable as a 16-bit sample, as a float
MAX_SAMPLE = 1.0 - 2.0 ** -15


class WavError(ValueError):
    pass


class MalformedHeaderError(WavError):
    pass


class UnsupportedFormatError(WavError):
    pass


class TruncatedDataError(WavError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    word: str = ""
    speaker_id: str = ""
    source_path: str = ""
    sample_rate: int = SAMPLE_RATE
    # (seed, copy_index) for distorted copies, None for originals
    augmented: tuple | None = field(default=None)

    def with_samples(self, samples: np.ndarray, **changes) -> "AudioClip":
        return replace(self, samples=samples, **changes)


def read_wav(data: bytes) -> tuple[np.ndarray, int]:
    """Parse a RIFF/WAVE byte string into float samples s/32768 and the sample rate."""
    if len(data) < 12:
        raise MalformedHeaderError("file too short for a RIFF header")
    riff, _, wave = struct.unpack_from("<4sI4s", data, 0)
    if riff != b"RIFF" or wave != b"WAVE":
        raise MalformedHeaderError("missing RIFF/WAVE signature")

    fmt = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id, size = struct.unpack_from("<4sI", data, pos)
        body = pos + 8
        if chunk_id == b"fmt ":
            if size < 16:
                raise MalformedHeaderError(f"fmt chunk too small ({size} bytes)")
            if body + 16 > len(data):
                raise TruncatedDataError("fmt chunk extends past end of file")
            fmt = struct.unpack_from("<HHIIHH", data, body)
        elif chunk_id == b"data":
            if fmt is None:
                raise MalformedHeaderError("data chunk before fmt chunk")
            _check_format(fmt)
            if body + size > len(data):
                raise TruncatedDataError(f"data chunk declares {size} bytes, {len(data) - body} present")
            if size % 2:
                raise TruncatedDataError("data chunk holds a partial sample")
            pcm = np.frombuffer(data, dtype="<i2", count=size // 2, offset=body)
            return pcm.astype(np.float32) / 32768.0, fmt[2]
        # chunks are word aligned
        pos = body + size + (size & 1)
    if fmt is None:
        raise MalformedHeaderError("no fmt chunk")
    raise TruncatedDataError("no data chunk")


def _check_format(fmt: tuple) -> None:
    code, channels, _, _, _, bits = fmt
    if code != 1:
        raise UnsupportedFormatError(f"format code {code} is not PCM")
    if channels != 1:
        raise UnsupportedFormatError(f"{channels} channels, only mono is supported")
    if bits != 16:
        raise UnsupportedFormatError(f"{bits}-bit samples, only 16-bit is supported")


def encode_wav(samples, sample_rate: int = SAMPLE_RATE) -> bytes:
    """Serialize float samples as a canonical 44-byte-header 16-bit mono WAV."""
    x = np.asarray(samples, dtype=np.float64)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(pcm), b"WAVE",
        b"fmt ", 16, 1, 1, sample_rate, sample_rate * 2, 2, 16,
        b"data", len(pcm),
    )
    return header + pcm


def write_wav(samples, path, sample_rate: int = SAMPLE_RATE) -> None:
    Path(path).write_bytes(encode_wav(samples, sample_rate))


def normalize_length(samples, target: int = CLIP_LENGTH) -> np.ndarray:
    """Right-pad short clips with zeros, center-crop long ones."""
    x = np.asarray(samples)
    if x.size == 0:
        raise ValueError("cannot normalize an empty clip")
    n = x.shape[0]
    if n == target:
        return x.copy()
    if n < target:
        return np.concatenate([x, np.zeros(target - n, dtype=x.dtype)])
    start = (n - target) // 2
    return x[start:start + target].copy()


def load_clip(path, word: str = "", speaker_id: str = "", source_path: str | None = None) -> AudioClip:
    """Read a WAV file into a normalized 16000-sample clip; other sample rates are rejected."""
    samples, rate = read_wav(Path(path).read_bytes())
    if rate != SAMPLE_RATE:
        raise UnsupportedFormatError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE}")
    return AudioClip(
        samples=normalize_length(samples).astype(np.float32),
        word=word,
        speaker_id=speaker_id,
        source_path=str(path) if source_path is None else source_path,
    )

"""Randomized audio distortions: resampling, pitch shift, time offset, saturation, white noise.

Every distorted copy draws its intensities from a generator seeded only by
(seed, source path, copy index), so the expansion of a training set is the
same whatever order or thread the clips are processed in.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .audio import CLIP_LENGTH, MAX_SAMPLE, SAMPLE_RATE, AudioClip, normalize_length


@dataclass(frozen=True)
class AugmentConfig:
    resample_factor_range: tuple = (0.85, 1.15)
    gain_range: tuple = (0.7, 1.3)
    offset_range_samples: tuple = (-1600, 1600)
    noise_sigma_range: tuple = (0.0, 0.01)
    pitch_semitone_range: tuple = (-2.0, 2.0)
    copies: int = 5

    def __post_init__(self):
        for name in ("resample_factor_range", "gain_range", "offset_range_samples",
                     "noise_sigma_range", "pitch_semitone_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            object.__setattr__(self, name, (lo, hi))
        if self.resample_factor_range[0] <= 0 or self.gain_range[0] <= 0:
            raise ValueError("resample factors and gains must be positive")
        if self.noise_sigma_range[0] < 0:
            raise ValueError("noise sigma must be non-negative")
        lo, hi = self.pitch_semitone_range
        if lo < -12 or hi > 12:
            raise ValueError("pitch shift is limited to +-12 semitones")
        if self.copies < 0:
            raise ValueError(f"copies must be >= 0, got {self.copies}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def resample(samples, factor: float) -> np.ndarray:
    """Linear interpolation at stride ``factor``; output length round(L / factor)."""
    if factor <= 0:
        raise ValueError(f"resample factor must be positive, got {factor}")
    x = np.asarray(samples, dtype=np.float64)
    n_out = max(1, int(math.floor(x.size / factor + 0.5)))
    positions = np.arange(n_out) * factor
    return np.interp(positions, np.arange(x.size), x)


def saturate(samples, gain: float) -> np.ndarray:
    if gain <= 0:
        raise ValueError(f"gain must be positive, got {gain}")
    return np.clip(np.asarray(samples, dtype=np.float64) * gain, -1.0, MAX_SAMPLE)


def time_offset(samples, k: int) -> np.ndarray:
    """Shift right by ``k`` samples (left if negative), zero-filling the gap."""
    x = np.asarray(samples)
    if abs(k) >= max(x.size, 1) and x.size:
        raise ValueError(f"offset {k} is not shorter than the clip ({x.size})")
    out = np.zeros_like(x)
    if k >= 0:
        out[k:] = x[:x.size - k]
    else:
        out[:k] = x[-k:]
    return out


def add_white_noise(samples, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    x = np.asarray(samples, dtype=np.float64)
    noise = rng.normal(0.0, sigma, size=x.shape) if sigma > 0 else 0.0
    return np.clip(x + noise, -1.0, MAX_SAMPLE)


def _triangle(n: int) -> np.ndarray:
    # strictly positive; overlapping copies at hop n/2 sum to exactly 1
    half = n / 2
    return 1.0 - np.abs(np.arange(n) + 0.5 - half) / half


def time_stretch(samples, out_length: int, frame: int = 400) -> np.ndarray:
    """Waveform-similarity overlap-add stretch to ``out_length`` samples.

    Frames of ``frame`` samples with 50% overlap and a triangular window are
    read at the analysis hop and written at the synthesis hop ``frame // 2``.
    Each read position may move by up to half a hop to line up with the
    continuation of the previous frame, which avoids phase cancellation on
    tonal input. With equal lengths the output reproduces the input.
    """
    x = np.asarray(samples, dtype=np.float64)
    if out_length < 1:
        raise ValueError("out_length must be positive")
    synth_hop = frame // 2
    ana_hop = synth_hop * x.size / out_length
    tol = 0 if x.size == out_length else synth_hop // 2
    window = _triangle(frame)
    n_frames = -(-out_length // synth_hop) + 1

    right = int(math.ceil(n_frames * ana_hop)) + frame + 2 * tol + synth_hop
    xp = np.concatenate([np.zeros(tol), x, np.zeros(right)])
    out = np.zeros((n_frames - 1) * synth_hop + frame)
    wsum = np.zeros_like(out)

    prev = None
    for k in range(n_frames):
        pos = tol + int(round(k * ana_hop))
        if prev is not None and tol:
            template = xp[prev + synth_hop: prev + synth_hop + frame]
            candidates = xp[pos - tol: pos + tol + frame]
            corr = np.correlate(candidates, template, mode="valid")
            pos += int(np.argmax(corr)) - tol
        seg = xp[pos: pos + frame]
        at = k * synth_hop
        out[at: at + frame] += window * seg
        wsum[at: at + frame] += window
        prev = pos
    return (out / wsum)[:out_length]


def pitch_shift(samples, semitones: float, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Resample by 2**(semitones/12), then time-stretch back to the original length."""
    if not -12 <= semitones <= 12:
        raise ValueError(f"semitones must lie in [-12, 12], got {semitones}")
    x = np.asarray(samples, dtype=np.float64)
    shifted = resample(x, 2.0 ** (semitones / 12.0))
    return time_stretch(shifted, x.size, frame=int(round(0.025 * sample_rate)))


def clip_rng(seed: int, source_path: str, copy_index: int) -> np.random.Generator:
    path_key = int.from_bytes(hashlib.sha256(source_path.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), path_key, int(copy_index)]))


def draw_params(config: AugmentConfig, rng: np.random.Generator) -> dict:
    lo, hi = config.offset_range_samples
    return {
        "factor": rng.uniform(*config.resample_factor_range),
        "semitones": rng.uniform(*config.pitch_semitone_range),
        "offset": int(rng.integers(int(lo), int(hi), endpoint=True)),
        "gain": rng.uniform(*config.gain_range),
        "sigma": rng.uniform(*config.noise_sigma_range),
    }


def augment_clip(clip: AudioClip, config: AugmentConfig, seed: int, copy_index: int) -> AudioClip:
    """One distorted copy: resample, pitch shift, time offset, saturate, add noise."""
    rng = clip_rng(seed, clip.source_path, copy_index)
    p = draw_params(config, rng)
    y = resample(clip.samples, p["factor"])
    y = pitch_shift(y, p["semitones"], clip.sample_rate)
    offset = int(np.clip(p["offset"], -(y.size - 1), y.size - 1))
    y = time_offset(y, offset)
    y = saturate(y, p["gain"])
    y = add_white_noise(y, p["sigma"], rng)
    y = normalize_length(y, CLIP_LENGTH).astype(np.float32)
    return clip.with_samples(y, augmented=(int(seed), int(copy_index)))


def expand_training_set(
    clips: Sequence[AudioClip], config: AugmentConfig, seed: int, workers: int = 1
) -> list[AudioClip]:
    """Originals followed by ``config.copies`` distorted copies of each clip."""
    clips = list(clips)
    if not clips:
        raise ValueError("cannot expand an empty clip list")
    if any(c.augmented is not None for c in clips):
        raise ValueError("input already contains augmented clips")
    jobs = [(clip, i) for clip in clips for i in range(config.copies)]

    def run(job):
        return augment_clip(job[0], config, seed, job[1])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            copies = list(pool.map(run, jobs))
    else:
        copies = [run(j) for j in jobs]
    return clips + copies

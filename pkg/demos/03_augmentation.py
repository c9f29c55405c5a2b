"""
Five distortions per training clip
==================================

Each copy is resampled, pitch shifted, offset in time, saturated and given
white noise, with intensities drawn from a generator keyed on the seed, the
clip's path and the copy index. The same inputs always give the same copies,
whichever thread produces them.
"""

import numpy as np

from xception1d import augment as G
from xception1d.audio import AudioClip

sr = 16000
t = np.arange(sr) / sr

# pitch shifting a pure tone moves its spectral peak by 2**(semitones/12)
tone = 0.5 * np.sin(2 * np.pi * 440 * t)
for semitones in (-12, -2, 0, 2, 12):
    shifted = G.pitch_shift(tone, semitones)
    peak = np.argmax(np.abs(np.fft.rfft(shifted)))
    print(f"{semitones:+3d} semitones: peak at {peak} Hz (expected {440 * 2 ** (semitones / 12):.1f})")

clips = [
    AudioClip((0.3 * np.sin(2 * np.pi * f * t)).astype(np.float32), "yes", f"spk{i}", f"yes/spk{i}_nohash_0.wav")
    for i, f in enumerate((300, 500, 700))
]
config = G.AugmentConfig()
print("intensity ranges:", config.to_dict())

expanded = G.expand_training_set(clips, config, seed=0, workers=2)
print(f"{len(clips)} clips -> {len(expanded)} after expansion")
for c in expanded[len(clips):len(clips) + 3]:
    print(f"  {c.source_path} copy {c.augmented[1]}: rms {np.sqrt(np.mean(c.samples ** 2)):.3f}")

again = G.expand_training_set(clips, config, seed=0, workers=1)
print("identical across worker counts:", all(a.samples.tobytes() == b.samples.tobytes()
                                            for a, b in zip(expanded, again)))

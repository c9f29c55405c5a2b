import numpy as np
import pytest

from xception1d.audio import write_wav

SR = 16000


def tone(freq, amp=0.5, phase=0.0, n=SR):
    t = np.arange(n) / SR
    return amp * np.sin(2 * np.pi * freq * t + phase)


def two_tone_dataset(n_clips=32, seed=0, noise=0.01):
    """Alternating 440 Hz / 880 Hz clips with random amplitude, phase and mild noise."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for i in range(n_clips):
        freq = 440 if i % 2 == 0 else 880
        x = tone(freq, rng.uniform(0.3, 0.6), rng.uniform(0, 2 * np.pi)) + noise * rng.normal(size=SR)
        xs.append(np.clip(x, -1, 1 - 2 ** -15))
        ys.append(i % 2)
    return np.array(xs, dtype=np.float32), np.array(ys)


def make_corpus(root, words=("left", "right", "marvin"), speakers=("aa11", "bb22", "cc33", "dd44"),
                test_speakers=("dd44",), dev_speakers=("cc33",), seed=0):
    """Write a tiny Speech Commands-style tree: word folders plus the two list files."""
    rng = np.random.default_rng(seed)
    freqs = {w: 300 + 150 * i for i, w in enumerate(words)}
    testing, validation = [], []
    for w in words:
        (root / w).mkdir(parents=True, exist_ok=True)
        for s in speakers:
            for k in range(2):
                name = f"{s}_nohash_{k}.wav"
                x = tone(freqs[w], rng.uniform(0.2, 0.5), rng.uniform(0, 6.28), n=SR - 500 * k)
                write_wav(x + 0.01 * rng.normal(size=x.size), root / w / name)
                rel = f"{w}/{name}"
                if s in test_speakers:
                    testing.append(rel)
                elif s in dev_speakers:
                    validation.append(rel)
    (root / "testing_list.txt").write_text("\n".join(testing) + "\n")
    (root / "validation_list.txt").write_text("\n".join(validation) + "\n")
    return root


@pytest.fixture
def corpus(tmp_path):
    return make_corpus(tmp_path / "corpus")


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

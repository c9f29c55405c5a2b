"""Speech Commands corpus scanning, split assignment and the four task label schemes."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .audio import AudioClip, load_clip
from .tensor import Tensor

# Corpus vocabulary in listing order: ten robot commands, ten digits, then the
# remaining words. The last five exist only in V2.
WORDS = (
    "left", "right", "yes", "no", "down", "up", "go", "stop", "on", "off",
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
    "dog", "cat", "wow", "house", "bird", "happy", "sheila", "marvin", "bed", "tree",
    "visual", "follow", "learn", "forward", "backward",
)
VOCABULARY = {"V1": WORDS[:30], "V2": WORDS}
TASK_NAMES = ("words-all", "commands-20", "commands-10", "left-right")
SPLITS = ("train", "dev", "test")
UNKNOWN = "unknown"


class DataError(Exception):
    pass


class MissingListFileError(DataError):
    pass


class UnknownWordFolderError(DataError):
    pass


class UnreadableFileError(DataError):
    pass


class UnknownWordError(KeyError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    name: str
    version: str
    target_words: tuple
    has_unknown: bool

    @property
    def n_classes(self) -> int:
        return len(self.target_words) + int(self.has_unknown)

    @property
    def class_names(self) -> tuple:
        return self.target_words + ((UNKNOWN,) if self.has_unknown else ())

    @property
    def vocabulary(self) -> tuple:
        return VOCABULARY[self.version]


def _check_version(version: str) -> str:
    if version not in VOCABULARY:
        raise ValueError(f"unknown dataset version {version!r}; expected V1 or V2")
    return version


def make_task(name: str, version: str = "V2") -> TaskSpec:
    _check_version(version)
    if name == "words-all":
        return TaskSpec(name, version, VOCABULARY[version], False)
    if name == "commands-20":
        return TaskSpec(name, version, WORDS[:20], True)
    if name == "commands-10":
        return TaskSpec(name, version, WORDS[:10], True)
    if name == "left-right":
        return TaskSpec(name, version, ("left", "right"), True)
    raise ValueError(f"unknown task {name!r}; choose from {', '.join(TASK_NAMES)}")


def label_of(word: str, task: TaskSpec) -> int:
    if word not in task.vocabulary:
        raise UnknownWordError(f"{word!r} is not in the {task.version} vocabulary")
    try:
        return task.target_words.index(word)
    except ValueError:
        return len(task.target_words)


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # relative to the corpus root, '/'-separated
    word: str
    speaker_id: str
    split: str


@dataclass
class DatasetManifest:
    version: str
    root: str
    entries: list = field(default_factory=list)

    def split(self, name: str) -> list[ManifestEntry]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [e for e in self.entries if e.split == name]

    def counts(self) -> dict[str, int]:
        return {s: sum(e.split == s for e in self.entries) for s in SPLITS}

    def word_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            out[e.word] = out.get(e.word, 0) + 1
        return out

    def speakers(self, split: str) -> set[str]:
        return {e.speaker_id for e in self.split(split)}

    def abspath(self, entry: ManifestEntry) -> Path:
        return Path(self.root) / entry.path

    def to_text(self) -> str:
        lines = ["# xception1d manifest 1", f"# version={self.version}", f"# root={self.root}"]
        lines += [f"{e.path}\t{e.word}\t{e.speaker_id}\t{e.split}" for e in self.entries]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        meta = {}
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if sep:
                    meta[key] = value
                continue
            parts = line.split("\t")
            if len(parts) != 4 or parts[3] not in SPLITS:
                raise DataError(f"manifest line {lineno}: expected path, word, speaker, split")
            entries.append(ManifestEntry(*parts))
        if "version" not in meta or "root" not in meta:
            raise DataError("manifest header lacks version/root")
        return cls(_check_version(meta["version"]), meta["root"], entries)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def speaker_of(filename: str) -> str:
    stem = Path(filename).name
    if "_nohash_" in stem:
        return stem.split("_nohash_")[0]
    return stem.split("_")[0]


def _read_list(root: Path, name: str) -> set[str]:
    path = root / name
    if not path.is_file():
        raise MissingListFileError(f"missing split list {path}")
    return {line.strip() for line in path.read_text().splitlines() if line.strip()}


def scan_corpus(root_dir, version: str = "V2", check_readable: bool = True) -> DatasetManifest:
    """Index word folders of WAVs; testing_list.txt and validation_list.txt define test/dev."""
    _check_version(version)
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"corpus directory {root} does not exist")
    testing = _read_list(root, "testing_list.txt")
    validation = _read_list(root, "validation_list.txt")
    vocab = set(VOCABULARY[version])

    entries = []
    for folder in sorted(p for p in root.iterdir() if p.is_dir()):
        if folder.name.startswith("_") or folder.name.startswith("."):
            continue
        if folder.name not in vocab:
            raise UnknownWordFolderError(f"folder {folder.name!r} is not a {version} word")
        for wav in sorted(folder.glob("*.wav")):
            rel = f"{folder.name}/{wav.name}"
            if check_readable and not os.access(wav, os.R_OK):
                raise UnreadableFileError(f"cannot read {wav}")
            split = "test" if rel in testing else "dev" if rel in validation else "train"
            entries.append(ManifestEntry(rel, folder.name, speaker_of(wav.name), split))
    return DatasetManifest(version, str(root.resolve()), entries)


def load_split(manifest: DatasetManifest, split: str) -> list[AudioClip]:
    return [
        load_clip(manifest.abspath(e), word=e.word, speaker_id=e.speaker_id, source_path=e.path)
        for e in manifest.split(split)
    ]


def batch_indices(n: int, batch_size: int, rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """Index batches; shuffled when ``rng`` is given, the last batch may be partial."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def stack_clips(clips: Sequence[AudioClip], dtype=np.float32) -> np.ndarray:
    return np.stack([c.samples for c in clips]).astype(dtype, copy=False)[:, None, :]


def batches(
    manifest: DatasetManifest,
    split: str,
    task: TaskSpec,
    batch_size: int = 32,
    rng: np.random.Generator | None = None,
) -> Iterator[tuple[Tensor, np.ndarray]]:
    """Yield (waveforms [B, 1, 16000], labels). Only the train split is shuffled."""
    entries = manifest.split(split)
    shuffle = rng if split == "train" else None
    for idx in batch_indices(len(entries), batch_size, shuffle):
        chosen = [entries[i] for i in idx]
        clips = [load_clip(manifest.abspath(e), e.word, e.speaker_id, e.path) for e in chosen]
        labels = np.array([label_of(e.word, task) for e in chosen], dtype=np.int64)
        yield Tensor(stack_clips(clips)), labels

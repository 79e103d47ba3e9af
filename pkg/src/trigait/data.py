"""Dataset persistence and batch sampling.

On disk a dataset is a directory with `manifest.tsv` (subject, condition,
view, seq_index, stem) plus one `.tgsl` (bit-packed silhouette frames) and one
`.tgkt` (float64 keypoints) file per sequence. Round trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .synth import SilhouetteSequence, SkeletonSequence

SIL_MAGIC = b"TGSL"
KPT_MAGIC = b"TGKT"
FORMAT_VERSION = 1


def write_silhouette(path, seq: SilhouetteSequence) -> None:
    t, h, w = seq.frames.shape
    with open(path, "wb") as fh:
        fh.write(SIL_MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, t, h, w))
        fh.write(np.packbits(seq.frames.reshape(-1)).tobytes())


def read_silhouette_frames(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != SIL_MAGIC:
        raise ValueError(f"{path}: bad silhouette magic {raw[:4]!r}")
    version, t, h, w = struct.unpack_from("<IIII", raw, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported silhouette version {version}")
    total = t * h * w
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8, offset=20), count=total)
    return bits.reshape(t, h, w)


def write_keypoints(path, seq: SkeletonSequence) -> None:
    t, k, _ = seq.joints.shape
    with open(path, "wb") as fh:
        fh.write(KPT_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, t, k))
        fh.write(np.asarray(seq.joints, dtype="<f8").tobytes())


def read_keypoints(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != KPT_MAGIC:
        raise ValueError(f"{path}: bad keypoint magic {raw[:4]!r}")
    version, t, k = struct.unpack_from("<III", raw, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported keypoint version {version}")
    arr = np.frombuffer(raw, dtype="<f8", offset=16, count=t * k * 2)
    return arr.reshape(t, k, 2).astype(np.float64)


@dataclass(frozen=True)
class SequenceRecord:
    subject: int
    condition: str
    view: int
    seq_index: int
    stem: str


@dataclass
class BatchSpec:
    subjects: int = 8          # P
    sequences_per_subject: int = 16   # K
    frames: int = 30           # T


@dataclass
class Batch:
    silhouettes: np.ndarray    # (N, T, H, W) uint8
    skeletons: np.ndarray      # (N, T, 17, 2) float64
    labels: np.ndarray         # (N,) subject ids


class SequenceSource(Protocol):
    """What the trainer needs from any dataset backend."""

    def subjects(self) -> list[int]: ...

    def records(self) -> list[SequenceRecord]: ...

    def load_pair(self, rec: SequenceRecord) -> tuple[np.ndarray, np.ndarray]: ...


class GaitDataset:
    """Read-only handle over a dataset directory; safe to share once loaded."""

    def __init__(self, root, records: list[SequenceRecord]):
        self.root = Path(root)
        self._records = records
        self._by_subject: dict[int, list[SequenceRecord]] = {}
        for r in records:
            self._by_subject.setdefault(r.subject, []).append(r)

    def subjects(self) -> list[int]:
        return sorted(self._by_subject)

    def records(self) -> list[SequenceRecord]:
        return list(self._records)

    def records_for(self, subject: int) -> list[SequenceRecord]:
        return list(self._by_subject[subject])

    def load_pair(self, rec: SequenceRecord) -> tuple[np.ndarray, np.ndarray]:
        frames = read_silhouette_frames(self.root / f"{rec.stem}.tgsl")
        joints = read_keypoints(self.root / f"{rec.stem}.tgkt")
        return frames, joints

    def __len__(self) -> int:
        return len(self._records)


def write_dataset(root, pairs: Iterable[tuple[SkeletonSequence, SilhouetteSequence]]) -> GaitDataset:
    """Persist sequences and the manifest under `root`."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for ske, sil in pairs:
        stem = f"s{ske.subject_id:04d}_{ske.condition}_v{ske.view:03d}_q{ske.seq_index:02d}"
        write_silhouette(root / f"{stem}.tgsl", sil)
        write_keypoints(root / f"{stem}.tgkt", ske)
        records.append(
            SequenceRecord(ske.subject_id, ske.condition, ske.view, ske.seq_index, stem)
        )
    with open(root / "manifest.tsv", "w") as fh:
        fh.write("subject\tcondition\tview\tseq_index\tstem\n")
        for r in records:
            fh.write(f"{r.subject}\t{r.condition}\t{r.view}\t{r.seq_index}\t{r.stem}\n")
    return GaitDataset(root, records)


def read_dataset(root) -> GaitDataset:
    root = Path(root)
    manifest = root / "manifest.tsv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.tsv under {root}")
    records = []
    with open(manifest) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["subject", "condition", "view", "seq_index", "stem"]:
            raise ValueError(f"{manifest}: unexpected manifest header {header}")
        for line in fh:
            subject, condition, view, seq_index, stem = line.rstrip("\n").split("\t")
            records.append(
                SequenceRecord(int(subject), condition, int(view), int(seq_index), stem)
            )
    for r in records:
        for ext in (".tgsl", ".tgkt"):
            if not (root / (r.stem + ext)).exists():
                raise FileNotFoundError(f"manifest lists {r.stem}{ext} but file is missing")
    return GaitDataset(root, records)


def _crop_frames(n_frames: int, want: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of `want` contiguous frames (tiled if the sequence is shorter)."""
    if n_frames >= want:
        start = int(rng.integers(0, n_frames - want + 1))
        return np.arange(start, start + want)
    reps = int(np.ceil(want / n_frames))
    return np.tile(np.arange(n_frames), reps)[:want]


def sample_batch(dataset: SequenceSource, spec: BatchSpec, rng: np.random.Generator) -> Batch:
    """P distinct subjects x K sequences, each cropped to the same T-frame
    window in both modalities."""
    subjects = dataset.subjects()
    if len(subjects) < spec.subjects:
        raise ValueError(
            f"sample_batch: need {spec.subjects} subjects, dataset has {len(subjects)}"
        )
    chosen = rng.choice(subjects, size=spec.subjects, replace=False)
    sils, skes, labels = [], [], []
    for subj in chosen:
        recs = dataset.records_for(int(subj))
        replace = len(recs) < spec.sequences_per_subject
        idx = rng.choice(len(recs), size=spec.sequences_per_subject, replace=replace)
        for i in idx:
            frames, joints = dataset.load_pair(recs[int(i)])
            window = _crop_frames(frames.shape[0], spec.frames, rng)
            sils.append(frames[window])
            skes.append(joints[window])
            labels.append(int(subj))
    return Batch(
        silhouettes=np.stack(sils),
        skeletons=np.stack(skes),
        labels=np.array(labels, dtype=np.int64),
    )

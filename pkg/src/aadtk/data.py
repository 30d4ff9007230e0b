"""Feature-tensor file format, dataset manifests, and sample construction.

The on-disk unit is a single 2-D float32 array with a small JSON header
(magic ``FTF1``). A dataset is a directory of such files plus a JSON
manifest listing, per listening session, the EEG file, the two speech
stream files, and which stream was attended. Samples for the attention
task and for the match-mismatch control task are cut from those files
here, along with the subject-wise cross-validation folds.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

MAGIC = b"FTF1"

EEG_RATE_HZ = 64.0

# 32-electrode 10-20 montage, row order of every EEG tensor unless the
# manifest overrides it.
CHANNEL_NAMES_32 = (
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8",
    "FC5", "FC1", "FC2", "FC6",
    "T7", "C3", "Cz", "C4", "T8",
    "TP9", "CP5", "CP1", "CP2", "CP6", "TP10",
    "P7", "P3", "Pz", "P4", "P8",
    "PO9", "O1", "Oz", "O2", "PO10",
)


class FeatureFileError(Exception):
    """Base class for feature-file parsing problems."""


class BadMagicError(FeatureFileError):
    """File does not start with the FTF1 magic."""


class HeaderError(FeatureFileError):
    """Header is not valid JSON or is missing/abusing required fields."""


class TruncatedPayloadError(FeatureFileError):
    """Payload byte count disagrees with the header shape."""


@dataclass
class FeatureTensor:
    """A 2-D float array with its sampling rate and provenance strings."""

    data: np.ndarray
    sample_rate_hz: float
    unit: str = ""
    source: str = ""

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"feature tensor must be 2-D, got shape {arr.shape}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.sample_rate_hz = float(self.sample_rate_hz)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def duration_s(self) -> float:
        return self.data.shape[1] / self.sample_rate_hz

    def with_data(self, data, sample_rate_hz: Optional[float] = None,
                  unit: Optional[str] = None) -> "FeatureTensor":
        """Copy of this tensor with new values, keeping untouched metadata."""
        return FeatureTensor(
            data,
            self.sample_rate_hz if sample_rate_hz is None else sample_rate_hz,
            self.unit if unit is None else unit,
            self.source,
        )


def write_feature_file(path, tensor: FeatureTensor) -> None:
    """Serialize ``tensor`` as magic, length-prefixed JSON header, then
    row-major little-endian float32 payload."""
    data = np.ascontiguousarray(tensor.data, dtype="<f4")
    header = {
        "dtype": "f32",
        "shape": [int(data.shape[0]), int(data.shape[1])],
        "sample_rate_hz": tensor.sample_rate_hz,
        "unit": tensor.unit,
        "source": tensor.source,
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(data.tobytes())


def read_feature_file(path) -> FeatureTensor:
    """Inverse of :func:`write_feature_file`; bit-exact round trip."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise BadMagicError(f"{path}: expected magic {MAGIC!r}, got {magic!r}")
        raw_len = f.read(4)
        if len(raw_len) != 4:
            raise HeaderError(f"{path}: header length field missing")
        (header_len,) = struct.unpack("<I", raw_len)
        blob = f.read(header_len)
        if len(blob) != header_len:
            raise HeaderError(f"{path}: header truncated")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise HeaderError(f"{path}: header is not valid JSON: {e}") from e
        shape = header.get("shape")
        if (
            header.get("dtype") != "f32"
            or not isinstance(shape, list)
            or len(shape) != 2
            or not all(isinstance(d, int) and d > 0 for d in shape)
        ):
            raise HeaderError(f"{path}: bad header fields {header!r}")
        expected = 4 * shape[0] * shape[1]
        payload = f.read(expected + 1)
        if len(payload) != expected:
            raise TruncatedPayloadError(
                f"{path}: payload is {len(payload)} bytes, header requires {expected}"
            )
    data = np.frombuffer(payload, dtype="<f4").reshape(shape[0], shape[1])
    return FeatureTensor(
        data.copy(),
        float(header.get("sample_rate_hz", 0.0)),
        str(header.get("unit", "")),
        str(header.get("source", "")),
    )


# ---------------------------------------------------------------------------
# manifest


@dataclass
class ManifestEntry:
    subject_id: str
    session_id: str
    eeg_path: str
    stream_paths: tuple
    attended_index: int
    duration_s: float

    def __post_init__(self):
        self.stream_paths = tuple(self.stream_paths)
        if len(self.stream_paths) != 2:
            raise ValueError(f"entry needs exactly 2 stream paths, got {self.stream_paths}")
        if self.attended_index not in (1, 2):
            raise ValueError(f"attended_index must be 1 or 2, got {self.attended_index}")


@dataclass
class RecordingManifest:
    """All listening sessions of a dataset; paths are relative to ``root``."""

    entries: list
    root: Path = field(default_factory=Path)

    def subjects(self) -> list:
        seen = dict.fromkeys(e.subject_id for e in self.entries)
        return list(seen)

    def for_subjects(self, subjects: Iterable[str]) -> list:
        wanted = set(subjects)
        return [e for e in self.entries if e.subject_id in wanted]

    def resolve(self, rel_path: str) -> Path:
        return Path(self.root) / rel_path


def save_manifest(path, manifest: RecordingManifest) -> None:
    doc = {
        "entries": [
            {
                "subject_id": e.subject_id,
                "session_id": e.session_id,
                "eeg_path": e.eeg_path,
                "stream_paths": list(e.stream_paths),
                "attended_index": e.attended_index,
                "duration_s": e.duration_s,
            }
            for e in manifest.entries
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_manifest(path) -> RecordingManifest:
    path = Path(path)
    doc = json.loads(path.read_text())
    entries = [
        ManifestEntry(
            subject_id=str(e["subject_id"]),
            session_id=str(e["session_id"]),
            eeg_path=str(e["eeg_path"]),
            stream_paths=tuple(e["stream_paths"]),
            attended_index=int(e["attended_index"]),
            duration_s=float(e["duration_s"]),
        )
        for e in doc["entries"]
    ]
    return RecordingManifest(entries=entries, root=path.parent)


# ---------------------------------------------------------------------------
# samples


@dataclass
class SampleMeta:
    subject: str
    session: str
    t_start_s: float
    task: str  # "AAD" or "MMM"


@dataclass
class Sample:
    """One training/evaluation item: an EEG window, two candidate speech
    windows, and the 1-based index of the correct candidate."""

    eeg: FeatureTensor
    s1: FeatureTensor
    s2: FeatureTensor
    y: int
    meta: SampleMeta


@dataclass
class Recording:
    entry: ManifestEntry
    eeg: FeatureTensor
    s1: FeatureTensor
    s2: FeatureTensor


def load_recording(manifest: RecordingManifest, entry: ManifestEntry) -> Recording:
    eeg = read_feature_file(manifest.resolve(entry.eeg_path))
    s1 = read_feature_file(manifest.resolve(entry.stream_paths[0]))
    s2 = read_feature_file(manifest.resolve(entry.stream_paths[1]))
    t = eeg.shape[1]
    if s1.shape[1] != t or s2.shape[1] != t:
        raise ValueError(
            f"{entry.subject_id}/{entry.session_id}: time axes differ "
            f"(eeg {t}, streams {s1.shape[1]}/{s2.shape[1]})"
        )
    rates = {eeg.sample_rate_hz, s1.sample_rate_hz, s2.sample_rate_hz}
    if len(rates) != 1:
        raise ValueError(f"{entry.subject_id}/{entry.session_id}: mixed rates {rates}")
    return Recording(entry, eeg, s1, s2)


def segment(recording: Recording, window_s: float, fs: float = EEG_RATE_HZ) -> list:
    """Cut non-overlapping aligned windows from t=0; the tail that does not
    fill a whole window is dropped.

    Returns a list of (eeg, s1, s2, t_start_s) tuples of array views.
    """
    t_total = recording.eeg.shape[1]
    t_win = int(round(window_s * fs))
    if t_win <= 0:
        raise ValueError(f"window of {window_s} s is empty at {fs} Hz")
    if t_win > t_total:
        raise ValueError(
            f"window of {window_s} s exceeds recording of {t_total / fs} s"
        )
    count = t_total // t_win
    out = []
    for i in range(count):
        a, b = i * t_win, (i + 1) * t_win
        out.append(
            (
                recording.eeg.data[:, a:b],
                recording.s1.data[:, a:b],
                recording.s2.data[:, a:b],
                a / fs,
            )
        )
    return out


def _check_files_exist(manifest: RecordingManifest, entries: Sequence[ManifestEntry]) -> None:
    missing = []
    for e in entries:
        for rel in (e.eeg_path, *e.stream_paths):
            if not manifest.resolve(rel).is_file():
                missing.append(f"{e.subject_id}/{e.session_id}: {rel}")
    if missing:
        raise FileNotFoundError(
            "missing feature files:\n  " + "\n  ".join(missing)
        )


def make_aad_samples(
    manifest: RecordingManifest,
    subjects: Iterable[str],
    window_s: float,
    seed: int = 0,
    fs: float = EEG_RATE_HZ,
) -> list:
    """Attention-decoding samples: both streams of a window in randomized
    order, labeled with the attended one's position."""
    entries = manifest.for_subjects(subjects)
    _check_files_exist(manifest, entries)
    samples = []
    for ei, entry in enumerate(entries):
        rec = load_recording(manifest, entry)
        rng = np.random.default_rng([seed, 0x0AAD, ei])
        for eeg_w, s1_w, s2_w, t0 in segment(rec, window_s, fs):
            swap = bool(rng.integers(2))
            if swap:
                s1_w, s2_w = s2_w, s1_w
                y = 3 - entry.attended_index
            else:
                y = entry.attended_index
            meta = SampleMeta(entry.subject_id, entry.session_id, t0, "AAD")
            samples.append(
                Sample(
                    eeg=rec.eeg.with_data(eeg_w),
                    s1=rec.s1.with_data(s1_w),
                    s2=rec.s2.with_data(s2_w),
                    y=y,
                    meta=meta,
                )
            )
    return samples


def make_mmm_samples(
    manifest: RecordingManifest,
    subjects: Iterable[str],
    window_s: float,
    stream_type: str,
    seed: int = 0,
    fs: float = EEG_RATE_HZ,
) -> list:
    """Match-mismatch samples from a single stream: the candidate aligned
    with the EEG window versus one from a different time in the session.

    The mismatch start t' is drawn uniformly from every sample-aligned
    position with |t' - t| >= window_s, so the two windows never overlap.
    """
    if stream_type not in ("attended", "unattended"):
        raise ValueError(f"stream_type must be 'attended' or 'unattended', got {stream_type!r}")
    entries = manifest.for_subjects(subjects)
    _check_files_exist(manifest, entries)
    samples = []
    for ei, entry in enumerate(entries):
        rec = load_recording(manifest, entry)
        if stream_type == "attended":
            stream = rec.s1 if entry.attended_index == 1 else rec.s2
        else:
            stream = rec.s2 if entry.attended_index == 1 else rec.s1
        rng = np.random.default_rng([seed, 0x0303, ei])
        t_total = rec.eeg.shape[1]
        t_win = int(round(window_s * fs))
        for eeg_w, _, _, t0 in segment(rec, window_s, fs):
            a = int(round(t0 * fs))
            # candidate starts: [0, a - t_win] and [a + t_win, t_total - t_win]
            left = np.arange(0, max(a - t_win + 1, 0))
            right_start = a + t_win
            right_stop = t_total - t_win
            right = (
                np.arange(right_start, right_stop + 1)
                if right_stop >= right_start
                else np.empty(0, np.int64)
            )
            starts = np.concatenate([left, right])
            if starts.size == 0:
                warnings.warn(
                    f"{entry.subject_id}/{entry.session_id}: no disjoint mismatch "
                    f"window for t={t0} s, sample skipped"
                )
                continue
            b = int(rng.choice(starts))
            match_w = stream.data[:, a : a + t_win]
            mismatch_w = stream.data[:, b : b + t_win]
            if bool(rng.integers(2)):
                s1_w, s2_w, y = mismatch_w, match_w, 2
            else:
                s1_w, s2_w, y = match_w, mismatch_w, 1
            meta = SampleMeta(entry.subject_id, entry.session_id, t0, "MMM")
            samples.append(
                Sample(
                    eeg=rec.eeg.with_data(eeg_w),
                    s1=stream.with_data(s1_w),
                    s2=stream.with_data(s2_w),
                    y=y,
                    meta=meta,
                )
            )
    return samples


# ---------------------------------------------------------------------------
# cross-validation folds


@dataclass
class FoldSplit:
    fold_index: int
    train_subjects: tuple
    val_subjects: tuple
    test_subjects: tuple


def make_fold_splits(subject_ids: Sequence[str], seed: int) -> list:
    """Partition 28 subjects into 7 rotating folds of train 20 / val 4 / test 4.

    Subjects are shuffled once with ``seed`` and cut into 7 groups of 4;
    fold k tests on group k and validates on group k+1 (mod 7).
    """
    subjects = list(subject_ids)
    if len(subjects) != 28:
        raise ValueError(f"need exactly 28 subjects, got {len(subjects)}")
    if len(set(subjects)) != 28:
        raise ValueError("subject ids must be unique")
    rng = np.random.default_rng(seed)
    order = [subjects[i] for i in rng.permutation(28)]
    groups = [order[4 * g : 4 * (g + 1)] for g in range(7)]
    folds = []
    for k in range(7):
        test = groups[k]
        val = groups[(k + 1) % 7]
        train = [s for g in range(7) if g not in (k, (k + 1) % 7) for s in groups[g]]
        folds.append(
            FoldSplit(
                fold_index=k,
                train_subjects=tuple(sorted(train)),
                val_subjects=tuple(sorted(val)),
                test_subjects=tuple(sorted(test)),
            )
        )
    return folds

"""Feature files, dataset manifests, batching, and synthetic data.

Feature files are little-endian binary: magic ``BCAF``, version u32,
modality u8 (0 = audio, 1 = text), row count u32, feature dim u32, then
count*dim float32 values row-major. The header is 17 bytes.

Manifests are JSON lines, one conversation per line::

    {"id": ..., "split": "train", "audio": path, "text": path, "labels": [..]}

Paths are resolved relative to the manifest's directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from bcaf.errors import FormatError, ShapeError, ValidationError
from bcaf.rng import RngState

MAGIC = b"BCAF"
VERSION = 1
HEADER = struct.Struct("<4sIBII")
MODALITY_TAGS = {"audio": 0, "text": 1}
_TAG_NAMES = {v: k for k, v in MODALITY_TAGS.items()}
SPLITS = ("train", "validation", "test")

# labels at padded slots; excluded from every loss by the mask
PAD_LABEL = -1


@dataclass
class Utterance:
    audio: np.ndarray
    text: np.ndarray
    label: int
    utterance_id: str


@dataclass
class Conversation:
    conversation_id: str
    utterances: List[Utterance]
    split: str

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def dim(self) -> int:
        return self.utterances[0].audio.shape[0]


@dataclass
class Batch:
    """Padded stack of conversations with a validity mask."""

    audio: np.ndarray  # [B, T, d] float32
    text: np.ndarray  # [B, T, d] float32
    mask: np.ndarray  # [B, T] bool
    labels: np.ndarray  # [B, T] int64, PAD_LABEL where masked
    conversation_ids: List[str] = field(default_factory=list)

    @property
    def num_utterances(self) -> int:
        return int(self.mask.sum())

    def flat_index(self) -> np.ndarray:
        """Row indices of mask-true slots in the flattened [B*T] view."""
        return np.flatnonzero(self.mask.reshape(-1))


# -- feature files ------------------------------------------------------------


def write_feature_file(path, modality: str, matrix: np.ndarray) -> None:
    """Write an [N, d] float32 matrix; round-trips bit-exactly."""
    mat = np.asarray(matrix, dtype="<f4")
    if mat.ndim != 2 or mat.shape[0] == 0 or mat.shape[1] == 0:
        raise ValidationError(
            f"feature matrix must be non-empty 2-d, got shape {mat.shape}"
        )
    if modality not in MODALITY_TAGS:
        raise ValidationError(f"unknown modality {modality!r}")
    n, d = mat.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, MODALITY_TAGS[modality], n, d))
        fh.write(np.ascontiguousarray(mat).tobytes())


def read_feature_file(path) -> Tuple[str, np.ndarray]:
    """Return (modality, matrix), validating magic, version, and sizes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, tag, count, dim = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if tag not in _TAG_NAMES:
        raise FormatError(f"{path}: unknown modality tag {tag}")
    if count == 0 or dim == 0:
        raise FormatError(f"{path}: empty matrix ({count}x{dim})")
    expected = count * dim * 4
    if expected > 2**62:
        raise FormatError(f"{path}: count*dim overflows ({count}x{dim})")
    payload = blob[HEADER.size :]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    mat = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
    return _TAG_NAMES[tag], mat


# -- manifests ------------------------------------------------------------------


def load_manifest(path) -> Tuple[List[Conversation], List[int]]:
    """Load conversations in file order; returns (conversations, label values).

    Validates that each referenced feature file exists, carries the
    expected modality tag, and has exactly as many rows as labels.
    """
    path = Path(path)
    base = path.parent
    conversations: List[Conversation] = []
    labels_seen: set[int] = set()
    cache: Dict[str, Tuple[str, np.ndarray]] = {}

    def read_cached(rel: str) -> Tuple[str, np.ndarray]:
        if rel not in cache:
            p = Path(rel)
            cache[rel] = read_feature_file(p if p.is_absolute() else base / p)
        return cache[rel]

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            try:
                conv_id = rec["id"]
                split = rec["split"]
                audio_rel = rec["audio"]
                text_rel = rec["text"]
                labels = rec["labels"]
            except KeyError as exc:
                raise ValidationError(f"{path}:{lineno}: missing key {exc}") from exc
            if split not in SPLITS:
                raise ValidationError(
                    f"conversation {conv_id!r}: unknown split {split!r}"
                )
            if not labels:
                raise ValidationError(f"conversation {conv_id!r}: empty label list")
            tag_a, mat_a = read_cached(audio_rel)
            tag_l, mat_l = read_cached(text_rel)
            if tag_a != "audio" or tag_l != "text":
                raise ValidationError(
                    f"conversation {conv_id!r}: modality tags are "
                    f"({tag_a}, {tag_l}), expected (audio, text)"
                )
            if mat_a.shape[0] != len(labels) or mat_l.shape[0] != len(labels):
                raise ValidationError(
                    f"conversation {conv_id!r}: {len(labels)} labels but feature "
                    f"rows are audio={mat_a.shape[0]}, text={mat_l.shape[0]}"
                )
            if mat_a.shape[1] != mat_l.shape[1]:
                raise ValidationError(
                    f"conversation {conv_id!r}: audio dim {mat_a.shape[1]} != "
                    f"text dim {mat_l.shape[1]}"
                )
            utts = []
            for i, lab in enumerate(labels):
                lab = int(lab)
                if lab < 0:
                    raise ValidationError(
                        f"conversation {conv_id!r}: negative label {lab}"
                    )
                labels_seen.add(lab)
                utts.append(
                    Utterance(
                        audio=mat_a[i],
                        text=mat_l[i],
                        label=lab,
                        utterance_id=f"{conv_id}:{i}",
                    )
                )
            conversations.append(Conversation(conv_id, utts, split))
    if not conversations:
        raise ValidationError(f"{path}: manifest holds no conversations")
    return conversations, sorted(labels_seen)


def split_conversations(convs: Sequence[Conversation]) -> Dict[str, List[Conversation]]:
    out: Dict[str, List[Conversation]] = {s: [] for s in SPLITS}
    for c in convs:
        out[c.split].append(c)
    return out


# -- batching ---------------------------------------------------------------------


def batch_conversations(
    convs: Sequence[Conversation], batch_size: int, pad_to_longest: bool = True
) -> List[Batch]:
    """Group conversations in order into padded batches of ``batch_size``.

    Padding is zeros plus mask exclusion; padded label slots hold
    PAD_LABEL, which no loss ever reads.
    """
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    if not convs:
        return []
    d = convs[0].dim
    for c in convs:
        if c.dim != d:
            raise ShapeError(
                f"conversation {c.conversation_id!r} has dim {c.dim}, expected {d}"
            )
    global_t = max(len(c) for c in convs)
    batches = []
    for start in range(0, len(convs), batch_size):
        chunk = convs[start : start + batch_size]
        b = len(chunk)
        # pad_to_longest pads per batch; otherwise T is uniform across batches
        t = max(len(c) for c in chunk) if pad_to_longest else global_t
        audio = np.zeros((b, t, d), dtype=np.float32)
        text = np.zeros((b, t, d), dtype=np.float32)
        mask = np.zeros((b, t), dtype=bool)
        labels = np.full((b, t), PAD_LABEL, dtype=np.int64)
        for i, c in enumerate(chunk):
            n = len(c)
            audio[i, :n] = [u.audio for u in c.utterances]
            text[i, :n] = [u.text for u in c.utterances]
            mask[i, :n] = True
            labels[i, :n] = [u.label for u in c.utterances]
        batches.append(
            Batch(audio, text, mask, labels, [c.conversation_id for c in chunk])
        )
    return batches


# -- synthetic data -----------------------------------------------------------------


def make_synthetic_dataset(
    rng: RngState,
    num_classes: int,
    conversations: int,
    mean_len: float,
    d_model: int,
    separation: float,
    conflict_fraction: float = 0.0,
    split_fractions: Tuple[float, float] = (0.7, 0.15),
) -> List[Conversation]:
    """Gaussian class clusters per modality, standing in for real encoders.

    ``separation`` scales the distance between class centers relative to
    unit per-dimension noise, so 0 means no class signal at all.
    ``conflict_fraction`` reroutes the audio centers of that fraction of
    classes to a different class's center, producing utterances whose
    modalities disagree. Split tags are assigned per conversation using
    ``split_fractions`` (train, validation); the remainder is test.
    """
    if separation < 0:
        raise ValidationError(f"separation must be >= 0, got {separation}")
    if not 0.0 <= conflict_fraction <= 1.0:
        raise ValidationError("conflict_fraction must be in [0, 1]")
    centers_audio = rng.normal((num_classes, d_model)) * np.float32(
        separation / np.sqrt(d_model)
    )
    centers_text = rng.normal((num_classes, d_model)) * np.float32(
        separation / np.sqrt(d_model)
    )
    n_conflict = int(round(conflict_fraction * num_classes))
    if n_conflict > 0 and num_classes > 1:
        mixed = rng.permutation(num_classes)[:n_conflict]
        centers_audio[mixed] = centers_audio[(mixed + 1) % num_classes]

    n_train = int(round(split_fractions[0] * conversations))
    n_val = int(round(split_fractions[1] * conversations))
    convs: List[Conversation] = []
    for ci in range(conversations):
        length = max(1, int(rng.poisson(mean_len)))
        labels = rng.integers(0, num_classes, size=length)
        noise_a = rng.normal((length, d_model))
        noise_l = rng.normal((length, d_model))
        conv_id = f"synth-{ci:04d}"
        utts = [
            Utterance(
                audio=centers_audio[lab] + noise_a[i],
                text=centers_text[lab] + noise_l[i],
                label=int(lab),
                utterance_id=f"{conv_id}:{i}",
            )
            for i, lab in enumerate(labels)
        ]
        if ci < n_train:
            split = "train"
        elif ci < n_train + n_val:
            split = "validation"
        else:
            split = "test"
        convs.append(Conversation(conv_id, utts, split))
    return convs


def write_dataset(convs: Sequence[Conversation], out_dir) -> Path:
    """Write per-conversation feature files plus a manifest; returns its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for c in convs:
            audio = np.stack([u.audio for u in c.utterances])
            text = np.stack([u.text for u in c.utterances])
            a_name = f"{c.conversation_id}.audio.bcaf"
            l_name = f"{c.conversation_id}.text.bcaf"
            write_feature_file(out / a_name, "audio", audio)
            write_feature_file(out / l_name, "text", text)
            fh.write(
                json.dumps(
                    {
                        "id": c.conversation_id,
                        "split": c.split,
                        "audio": a_name,
                        "text": l_name,
                        "labels": [u.label for u in c.utterances],
                    }
                )
                + "\n"
            )
    return manifest

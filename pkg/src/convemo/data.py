"""Conversation datasets: file ingestion, synthetic generation, splitting.

The on-disk format is line-delimited text. The header carries
``C K d_t d_a d_v``; every following line is one utterance:
``conv_id speaker_id label v_t... v_a... v_v...`` with space-separated
decimal features, dimension-checked against the header. Conversations are
contiguous line blocks; utterance order is dialogue turn order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Utterance",
    "Conversation",
    "Dataset",
    "DatasetFormatError",
    "load_dataset",
    "write_dataset",
    "synth_generate",
    "split_dataset",
]

NOISE_SCALE = 0.1
SPEAKER_OFFSET_SCALE = 0.3


class DatasetFormatError(ValueError):
    """Malformed dataset file; carries the offending line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass
class Utterance:
    speaker_id: int
    label: int
    phi_t: np.ndarray
    phi_a: np.ndarray
    phi_v: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Utterance):
            return NotImplemented
        return (
            self.speaker_id == other.speaker_id
            and self.label == other.label
            and np.array_equal(self.phi_t, other.phi_t)
            and np.array_equal(self.phi_a, other.phi_a)
            and np.array_equal(self.phi_v, other.phi_v)
        )


@dataclass
class Conversation:
    id: str
    utterances: list[Utterance] = field(default_factory=list)

    def __len__(self):
        return len(self.utterances)

    @property
    def speakers(self):
        return [u.speaker_id for u in self.utterances]

    @property
    def labels(self):
        return [u.label for u in self.utterances]

    def feature_matrix(self, modality):
        """Stack one modality's feature vectors into an (N, d_m) matrix."""
        key = {"t": "phi_t", "a": "phi_a", "v": "phi_v"}[modality]
        return np.stack([getattr(u, key) for u in self.utterances])

    def __eq__(self, other):
        if not isinstance(other, Conversation):
            return NotImplemented
        return self.id == other.id and self.utterances == other.utterances


@dataclass
class Dataset:
    conversations: list[Conversation]
    num_classes: int
    num_speakers: int
    dims: tuple[int, int, int]

    def __len__(self):
        return len(self.conversations)

    @property
    def total_utterances(self):
        return sum(len(c) for c in self.conversations)

    def all_labels(self):
        return np.array([u.label for c in self.conversations for u in c.utterances], dtype=int)

    def validate(self):
        """Check cross-conversation consistency; raises DatasetFormatError."""
        if not self.conversations:
            raise DatasetFormatError("no conversations")
        d_t, d_a, d_v = self.dims
        for conv in self.conversations:
            if len(conv) < 1:
                raise DatasetFormatError(f"conversation {conv.id!r} is empty")
            for u in conv.utterances:
                if u.phi_t.shape != (d_t,) or u.phi_a.shape != (d_a,) or u.phi_v.shape != (d_v,):
                    raise DatasetFormatError(
                        f"conversation {conv.id!r}: feature dims "
                        f"({u.phi_t.shape[0]}, {u.phi_a.shape[0]}, {u.phi_v.shape[0]}) != {self.dims}"
                    )
                if not (0 <= u.label < self.num_classes):
                    raise DatasetFormatError(f"conversation {conv.id!r}: label {u.label} out of range")
                if not (0 <= u.speaker_id < self.num_speakers):
                    raise DatasetFormatError(f"conversation {conv.id!r}: speaker {u.speaker_id} out of range")
                for v in (u.phi_t, u.phi_a, u.phi_v):
                    if not np.isfinite(v).all():
                        raise DatasetFormatError(f"conversation {conv.id!r}: non-finite feature values")
        return self

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.num_speakers == other.num_speakers
            and tuple(self.dims) == tuple(other.dims)
            and self.conversations == other.conversations
        )


def load_dataset(path):
    """Parse and fully validate a dataset file; errors carry line numbers."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    content = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    if not content:
        raise DatasetFormatError("no conversations: file is empty")

    header_no, header = content[0]
    parts = header.split()
    if len(parts) != 5:
        raise DatasetFormatError(f"header must be 'C K d_t d_a d_v', got {len(parts)} fields", line=header_no)
    try:
        C, K, d_t, d_a, d_v = (int(p) for p in parts)
    except ValueError:
        raise DatasetFormatError(f"non-integer header field in {header!r}", line=header_no) from None
    if min(C, K, d_t, d_a, d_v) < 1:
        raise DatasetFormatError("header values must be >= 1", line=header_no)

    expected = 3 + d_t + d_a + d_v
    conversations: list[Conversation] = []
    by_id: dict[str, Conversation] = {}
    current_id = None
    for line_no, line in content[1:]:
        tokens = line.split()
        if len(tokens) != expected:
            raise DatasetFormatError(
                f"expected {expected} fields (3 + {d_t}+{d_a}+{d_v}), got {len(tokens)}", line=line_no
            )
        conv_id = tokens[0]
        try:
            speaker = int(tokens[1])
            label = int(tokens[2])
            values = np.array([float(t) for t in tokens[3:]], dtype=np.float64)
        except ValueError:
            raise DatasetFormatError(f"non-numeric field in record {conv_id!r}", line=line_no) from None
        if not np.isfinite(values).all():
            raise DatasetFormatError("non-finite feature value", line=line_no)
        if not (0 <= label < C):
            raise DatasetFormatError(f"label {label} out of range [0, {C})", line=line_no)
        if not (0 <= speaker < K):
            raise DatasetFormatError(f"speaker {speaker} out of range [0, {K})", line=line_no)

        if conv_id != current_id:
            if conv_id in by_id:
                raise DatasetFormatError(f"conversation {conv_id!r} reappears non-contiguously", line=line_no)
            conv = Conversation(id=conv_id)
            by_id[conv_id] = conv
            conversations.append(conv)
            current_id = conv_id
        by_id[conv_id].utterances.append(
            Utterance(
                speaker_id=speaker,
                label=label,
                phi_t=values[:d_t],
                phi_a=values[d_t : d_t + d_a],
                phi_v=values[d_t + d_a :],
            )
        )

    if not conversations:
        raise DatasetFormatError("no conversations: header only")
    return Dataset(conversations, num_classes=C, num_speakers=K, dims=(d_t, d_a, d_v)).validate()


def write_dataset(dataset, path):
    """Serialize in the line-delimited record format; round-trips exactly."""
    d_t, d_a, d_v = dataset.dims
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{dataset.num_classes} {dataset.num_speakers} {d_t} {d_a} {d_v}\n")
        for conv in dataset.conversations:
            for u in conv.utterances:
                values = np.concatenate([u.phi_t, u.phi_a, u.phi_v])
                feats = " ".join(repr(float(v)) for v in values)
                fh.write(f"{conv.id} {u.speaker_id} {u.label} {feats}\n")


def synth_generate(n_conversations, max_len, num_classes, num_speakers, dims, seed):
    """Deterministic synthetic conversations standing in for real extractors.

    Each (class, modality) pair gets a Gaussian prototype; utterance
    features are prototype + noise at 0.1 of the prototype norm + a fixed
    per-(speaker, modality) offset at 0.3 of the mean prototype norm, so
    classes are separable and speakers add structure.
    """
    if min(n_conversations, max_len, num_classes, num_speakers, *dims) < 1:
        raise ValueError("all synthetic-generation counts must be >= 1")
    rng = np.random.default_rng(seed)

    prototypes = {}
    offsets = {}
    for mi, d_m in enumerate(dims):
        protos = rng.normal(size=(num_classes, d_m))
        prototypes[mi] = protos
        mean_norm = float(np.mean(np.linalg.norm(protos, axis=1)))
        raw = rng.normal(size=(num_speakers, d_m))
        raw /= np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), 1e-12)
        offsets[mi] = SPEAKER_OFFSET_SCALE * mean_norm * raw

    conversations = []
    for ci in range(n_conversations):
        length = int(rng.integers(1, max_len + 1))
        speakers = rng.integers(0, num_speakers, size=length)
        labels = rng.integers(0, num_classes, size=length)
        utterances = []
        for spk, lab in zip(speakers, labels):
            feats = []
            for mi, d_m in enumerate(dims):
                proto = prototypes[mi][lab]
                noise = rng.normal(size=d_m) * (NOISE_SCALE * np.linalg.norm(proto) / np.sqrt(d_m))
                feats.append(proto + noise + offsets[mi][spk])
            utterances.append(
                Utterance(speaker_id=int(spk), label=int(lab), phi_t=feats[0], phi_a=feats[1], phi_v=feats[2])
            )
        conversations.append(Conversation(id=f"synth-{ci:03d}", utterances=utterances))

    return Dataset(conversations, num_classes=num_classes, num_speakers=num_speakers, dims=tuple(dims)).validate()


def split_dataset(dataset, train_frac, seed):
    """Split at conversation granularity; deterministic per seed."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must be in (0, 1), got {train_frac}")
    n = len(dataset.conversations)
    n_train = int(round(n * train_frac))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} conversations at {train_frac} leaves one side empty")
    order = np.random.default_rng(seed).permutation(n)
    pick = lambda idx: Dataset(
        [dataset.conversations[i] for i in sorted(idx)],
        num_classes=dataset.num_classes,
        num_speakers=dataset.num_speakers,
        dims=dataset.dims,
    )
    return pick(order[:n_train]), pick(order[n_train:])

"""Datasets and participant partitioning.

Provides the synthetic correlated-multimodal generator (both views are
noisy linear projections of one latent per sample, so aligning the views
carries class information), a CSV ingestion path for precomputed
features, the stratified 8:1:1 split, and the three partitioners used by
the experiment regimes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataFormatError


@dataclass(frozen=True)
class MultimodalDataset:
    """Aligned per-sample views: row i of images and audios is one sample."""

    images: np.ndarray
    audios: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        audios = np.asarray(self.audios, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 2 or audios.ndim != 2 or labels.ndim != 1:
            raise ConfigurationError("expected images [N,Di], audios [N,Da], labels [N]")
        if not len(images) == len(audios) == len(labels):
            raise ConfigurationError(
                f"misaligned modalities: {len(images)} images, {len(audios)} audios, "
                f"{len(labels)} labels"
            )
        if len(labels) == 0:
            raise ConfigurationError("dataset is empty")
        if labels.min() < 0:
            raise ConfigurationError("labels must be nonnegative class ids")
        present = np.unique(labels)
        expected = np.arange(labels.max() + 1)
        if not np.array_equal(present, expected):
            missing = sorted(set(expected.tolist()) - set(present.tolist()))
            raise ConfigurationError(f"classes {missing} have no samples")
        for arr in (images, audios, labels):
            arr.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "audios", audios)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def class_count(self) -> int:
        return int(self.labels.max()) + 1

    def subset(self, indices) -> "MultimodalDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return MultimodalDataset(self.images[idx], self.audios[idx], self.labels[idx])


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fractions = (self.train, self.val, self.test)
        if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
            raise ConfigurationError(f"split fractions must be >= 0 and sum to 1, got {fractions}")


@dataclass(frozen=True)
class Partition:
    """Per-participant index lists into one group's training set."""

    group: str
    indices: tuple[tuple[int, ...], ...] = field(default=())

    @property
    def counts(self) -> list[int]:
        return [len(part) for part in self.indices]


def generate_synthetic(
    classes: int,
    per_class: int,
    image_dim: int = 64,
    audio_dim: int = 40,
    latent_dim: int = 16,
    noise_sigma: float = 0.5,
    seed: int = 0,
    within_class_jitter: float = 0.5,
) -> MultimodalDataset:
    """Correlated image/audio views of class-structured latent vectors.

    Per class a latent prototype is drawn from N(0, I); each sample's
    latent is its prototype plus N(0, jitter^2 I). Both views are fixed
    random projections of the same latent plus N(0, noise_sigma^2) view
    noise, so the modalities are correlated through the latent and
    contrastive alignment carries class information.
    """
    if classes < 1 or per_class < 1:
        raise ConfigurationError("classes and per_class must be positive")
    if latent_dim < 1:
        raise ConfigurationError(f"latent_dim must be >= 1, got {latent_dim}")
    if noise_sigma < 0 or within_class_jitter < 0:
        raise ConfigurationError("noise levels must be nonnegative")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    proj_img = rng.normal(size=(latent_dim, image_dim)) / np.sqrt(latent_dim)
    proj_aud = rng.normal(size=(latent_dim, audio_dim)) / np.sqrt(latent_dim)
    prototypes = rng.normal(size=(classes, latent_dim))

    n = classes * per_class
    labels = np.repeat(np.arange(classes), per_class)
    latents = prototypes[labels] + within_class_jitter * rng.normal(size=(n, latent_dim))
    images = latents @ proj_img + noise_sigma * rng.normal(size=(n, image_dim))
    audios = latents @ proj_aud + noise_sigma * rng.normal(size=(n, audio_dim))
    return MultimodalDataset(images, audios, labels)


def split_indices(labels, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stratified train/val/test index split, deterministic under spec.seed.

    Within every class the largest-remainder rule allocates counts, so
    each split's per-class size is within one sample of the exact fraction.
    """
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    fractions = np.array([spec.train, spec.val, spec.test])
    parts: list[list[np.ndarray]] = [[], [], []]
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(len(members))]
        exact = fractions * len(members)
        counts = np.floor(exact).astype(int)
        remainder = exact - counts
        for slot in np.argsort(-remainder)[: len(members) - counts.sum()]:
            counts[slot] += 1
        stops = np.cumsum(counts)
        parts[0].append(members[: stops[0]])
        parts[1].append(members[stops[0] : stops[1]])
        parts[2].append(members[stops[1] :])
    return tuple(np.sort(np.concatenate(p)) for p in parts)


def split(dataset: MultimodalDataset, spec: SplitSpec):
    """Stratified split into (train, val, test) datasets."""
    train_idx, val_idx, test_idx = split_indices(dataset.labels, spec)
    return dataset.subset(train_idx), dataset.subset(val_idx), dataset.subset(test_idx)


def partition_balanced(train_size: int, participants: int, seed: int, group: str = "") -> Partition:
    """Disjoint equal shares of the training indices, drawn without replacement.

    Every participant receives floor(N/n) samples; the N mod n remainder
    goes one-each to the first participants.
    """
    if participants < 1 or train_size < participants:
        raise ConfigurationError(
            f"cannot give {participants} participants at least one of {train_size} samples"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    order = rng.permutation(train_size)
    base, extra = divmod(train_size, participants)
    counts = [base + 1 if k < extra else base for k in range(participants)]
    stops = np.cumsum(counts)
    pieces = np.split(order, stops[:-1])
    return Partition(group, tuple(tuple(int(i) for i in piece) for piece in pieces))


def _random_counts(rng, train_size: int, participants: int, min_count: int) -> np.ndarray:
    if min_count < 1:
        raise ConfigurationError(f"min_count must be >= 1, got {min_count}")
    spare = train_size - participants * min_count
    if spare < 0:
        raise ConfigurationError(
            f"{participants} participants x min_count {min_count} exceeds {train_size} samples"
        )
    return min_count + rng.multinomial(spare, np.full(participants, 1.0 / participants))


def _partition_with_counts(rng, train_size: int, counts, group: str) -> Partition:
    order = rng.permutation(train_size)
    stops = np.cumsum(counts)
    pieces = np.split(order, stops[:-1])
    return Partition(group, tuple(tuple(int(i) for i in piece) for piece in pieces))


GROUPS = ("image", "audio", "multimodal")


def partition_unbalanced_paired(
    train_size: int, participants: int, seed: int, min_count: int = 50
) -> tuple[Partition, Partition, Partition]:
    """One random count vector shared by all three groups.

    Participants with the same index hold the same number of samples in
    every group; each group's indices are drawn independently and sum to
    the full training size.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    counts = _random_counts(rng, train_size, participants, min_count)
    return tuple(_partition_with_counts(rng, train_size, counts, g) for g in GROUPS)


def partition_unbalanced_random(
    train_size: int, participants: int, seed: int, min_count: int = 50
) -> tuple[Partition, Partition, Partition]:
    """Independent random count vectors per group, all summing to train_size."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    partitions = []
    for g in GROUPS:
        counts = _random_counts(rng, train_size, participants, min_count)
        partitions.append(_partition_with_counts(rng, train_size, counts, g))
    return tuple(partitions)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _read_numeric_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: file is empty") from None
        width = len(header)
        rows = []
        for number, row in enumerate(reader, start=2):
            if len(row) != width:
                raise DataFormatError(f"{path}: row {number} has {len(row)} cells, expected {width}")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                bad = next(cell for cell in row if not _is_number(cell))
                raise DataFormatError(f"{path}: row {number}: non-numeric cell {bad!r}") from None
    if not rows:
        raise DataFormatError(f"{path}: no data rows (empty dataset)")
    return np.asarray(rows, dtype=np.float64)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def _read_label_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: file is empty") from None
        labels = []
        for number, row in enumerate(reader, start=2):
            token = row[0].strip() if row else ""
            try:
                labels.append(int(token))
            except ValueError:
                raise DataFormatError(f"{path}: row {number}: unknown label {token!r}") from None
            if labels[-1] < 0:
                raise DataFormatError(f"{path}: row {number}: unknown label {token!r}")
    if not labels:
        raise DataFormatError(f"{path}: no data rows (empty dataset)")
    return np.asarray(labels, dtype=np.int64)


def load_csv_features(
    image_path=None, audio_path=None, label_path=None, combined_path=None
) -> MultimodalDataset:
    """Load aligned features from CSV files.

    Either pass three files (image features, audio features, integer
    labels; row i across files is one sample) or one combined file whose
    header tags columns with ``img_`` / ``aud_`` prefixes plus a
    ``label`` column. Headers declare the dims; values are decimal-point
    numbers in UTF-8.
    """
    if combined_path is not None:
        if any(p is not None for p in (image_path, audio_path, label_path)):
            raise ConfigurationError("pass either combined_path or the three separate paths")
        return _load_combined(combined_path)
    if any(p is None for p in (image_path, audio_path, label_path)):
        raise ConfigurationError("image, audio and label paths are all required")
    images = _read_numeric_csv(image_path)
    audios = _read_numeric_csv(audio_path)
    labels = _read_label_csv(label_path)
    if not len(images) == len(audios) == len(labels):
        raise DataFormatError(
            f"row counts differ across files: {len(images)} images, "
            f"{len(audios)} audios, {len(labels)} labels"
        )
    return MultimodalDataset(images, audios, labels)


def _load_combined(path) -> MultimodalDataset:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: file is empty") from None
        img_cols = [i for i, name in enumerate(header) if name.startswith("img_")]
        aud_cols = [i for i, name in enumerate(header) if name.startswith("aud_")]
        label_cols = [i for i, name in enumerate(header) if name.strip() == "label"]
        if not img_cols or not aud_cols or len(label_cols) != 1:
            raise DataFormatError(
                f"{path}: header must declare img_* columns, aud_* columns and one label column"
            )
        images, audios, labels = [], [], []
        for number, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: row {number} has {len(row)} cells, expected {len(header)}"
                )
            try:
                images.append([float(row[i]) for i in img_cols])
                audios.append([float(row[i]) for i in aud_cols])
            except ValueError:
                raise DataFormatError(f"{path}: row {number}: non-numeric cell") from None
            token = row[label_cols[0]].strip()
            try:
                label = int(token)
            except ValueError:
                raise DataFormatError(f"{path}: row {number}: unknown label {token!r}") from None
            if label < 0:
                raise DataFormatError(f"{path}: row {number}: unknown label {token!r}")
            labels.append(label)
    if not labels:
        raise DataFormatError(f"{path}: no data rows (empty dataset)")
    return MultimodalDataset(np.asarray(images), np.asarray(audios), np.asarray(labels, dtype=np.int64))

"""
data.py

Dataset ingestion and binarization. Every loader returns an EncodedDataset
whose features are strictly {0,1} uint8 matrices.

Sources:
- MNIST IDX files (optionally gzipped), threshold or thermometer binarization
- MONK's-2 (one-hot over the six categorical attributes, 17 features)
- Generic pre-binarized CSV (train.csv / test.csv with a label column)
- Synthetic parity(n) and single-gate truth tables
"""

import gzip
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from codebook import CORNERS, gate_id, gate_name, truth_table

logger = logging.getLogger(__name__)

DATA_ROOT_ENV = "DLGN_DATA_ROOT"

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

MONKS_ARITIES = (3, 3, 2, 3, 4, 2)

# IDX type codes used by MNIST
_IDX_DTYPES = {0x08: np.dtype('>u1'), 0x09: np.dtype('>i1'), 0x0B: np.dtype('>i2'),
               0x0C: np.dtype('>i4'), 0x0D: np.dtype('>f4'), 0x0E: np.dtype('>f8')}


class DatasetError(ValueError):
    """Missing, corrupt or malformed dataset input."""


@dataclass
class EncodedDataset:
    """Binary train/test features with integer labels."""
    name: str
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    classes: int

    @property
    def input_dim(self) -> int:
        return int(self.train_x.shape[1])

    def split(self, which: str) -> Tuple[np.ndarray, np.ndarray]:
        if which == "train":
            return self.train_x, self.train_y
        if which == "test":
            return self.test_x, self.test_y
        raise ValueError(f"Unknown split '{which}' (expected 'train' or 'test')")

    def summary(self) -> str:
        return (f"{self.name}: {len(self.train_y)} train / {len(self.test_y)} test, "
                f"{self.input_dim} features, {self.classes} classes")


def validate_dataset(dataset: EncodedDataset) -> List[str]:
    """
    Check that features are binary and labels are in range.

    Returns:
        List of error messages (empty if valid)
    """
    errors = []
    for split in ("train", "test"):
        x, y = dataset.split(split)
        if x.ndim != 2:
            errors.append(f"{split} features must be 2-D, got shape {x.shape}")
            continue
        if len(x) != len(y):
            errors.append(f"{split}: {len(x)} feature rows but {len(y)} labels")
        if x.size and not np.isin(x, (0, 1)).all():
            errors.append(f"{split} features are not strictly binary")
        if y.size and (y.min() < 0 or y.max() >= dataset.classes):
            errors.append(f"{split} labels outside [0, {dataset.classes})")
    if dataset.train_x.ndim == 2 and dataset.test_x.ndim == 2 \
            and dataset.train_x.shape[1] != dataset.test_x.shape[1]:
        errors.append(
            f"train has {dataset.train_x.shape[1]} features, test has {dataset.test_x.shape[1]}")
    return errors


def resolve_data_path(path: Optional[str]) -> Path:
    """Resolve a relative dataset path against $DLGN_DATA_ROOT when set."""
    if path is None:
        root = os.environ.get(DATA_ROOT_ENV)
        if root is None:
            raise DatasetError(f"No dataset path given and ${DATA_ROOT_ENV} is not set")
        return Path(root)
    candidate = Path(path).expanduser()
    root = os.environ.get(DATA_ROOT_ENV)
    if not candidate.is_absolute() and root and not candidate.exists():
        return Path(root) / candidate
    return candidate


# --- binarizers -----------------------------------------------------------

def threshold_encode(values: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """1 where value > threshold (strict), else 0."""
    return (np.asarray(values) > threshold).astype(np.uint8)


def thermometer_encode(values: np.ndarray, levels: int) -> np.ndarray:
    """
    Thermometer-code values in [0, 1].

    Feature i of a value is 1 iff value > i / (levels + 1), i = 1..levels, so
    every code is a prefix of ones. Each input column expands to `levels`
    consecutive output columns.

    Args:
        values: (N,) or (N, D) reals in [0, 1]
        levels: Number of thresholds (>= 1)

    Returns:
        (N, D * levels) uint8 array
    """
    if levels < 1:
        raise ValueError(f"thermometer levels must be >= 1, got {levels}")

    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]

    outside = (values < 0) | (values > 1)
    if outside.any():
        logger.warning(f"thermometer_encode: clamping {int(outside.sum())} value(s) outside [0, 1]")
        values = np.clip(values, 0.0, 1.0)

    thresholds = np.arange(1, levels + 1) / (levels + 1)
    codes = values[:, :, None] > thresholds
    return codes.reshape(values.shape[0], -1).astype(np.uint8)


# --- MNIST ----------------------------------------------------------------

def read_idx(path: Path) -> np.ndarray:
    """
    Parse an IDX file (plain or .gz).

    Raises:
        DatasetError: missing file, bad magic, truncated payload
    """
    path = Path(path)
    if not path.exists():
        gz = path.with_name(path.name + ".gz")
        if gz.exists():
            path = gz
        else:
            raise DatasetError(f"IDX file not found: {path}")

    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DatasetError(f"Cannot read {path}: {e}")

    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] not in _IDX_DTYPES:
        raise DatasetError(f"{path}: bad IDX magic number {raw[:4].hex() if raw else '(empty)'}")

    dtype = _IDX_DTYPES[raw[2]]
    ndim = raw[3]
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise DatasetError(f"{path}: truncated IDX header")
    dims = tuple(int(d) for d in np.frombuffer(raw[4:header_end], dtype='>u4'))

    count = int(np.prod(dims)) if dims else 0
    payload = raw[header_end:]
    if len(payload) != count * dtype.itemsize:
        raise DatasetError(
            f"{path}: payload has {len(payload)} bytes, header dims {dims} need {count * dtype.itemsize}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims)


def load_mnist(path, thermometer_levels: int = 0) -> EncodedDataset:
    """
    Load MNIST from a directory of IDX files.

    Pixels are scaled to [0, 1] and binarized with value > 0.5, or thermometer
    coded when thermometer_levels > 0.

    Args:
        path: Directory containing the four standard IDX files
        thermometer_levels: 0 for threshold binarization

    Returns:
        EncodedDataset with 784 (or 784 * levels) features and 10 classes
    """
    root = Path(path)
    arrays = {}
    for key, filename in MNIST_FILES.items():
        arrays[key] = read_idx(root / filename)

    splits = {}
    for split in ("train", "test"):
        images = arrays[f"{split}_images"]
        labels = arrays[f"{split}_labels"]
        if images.ndim != 3 or labels.ndim != 1:
            raise DatasetError(f"MNIST {split}: expected 3-D images and 1-D labels, "
                               f"got {images.shape} and {labels.shape}")
        if len(images) != len(labels):
            raise DatasetError(f"MNIST {split}: {len(images)} images but {len(labels)} labels")
        pixels = images.reshape(len(images), -1).astype(np.float64) / 255.0
        if thermometer_levels > 0:
            features = thermometer_encode(pixels, thermometer_levels)
        else:
            features = threshold_encode(pixels, 0.5)
        splits[split] = (features, labels.astype(np.int64))

    dataset = EncodedDataset("mnist", *splits["train"], *splits["test"], classes=10)
    logger.info(f"Loaded {dataset.summary()}")
    return dataset


# --- MONK's-2 -------------------------------------------------------------

def encode_monks_row(attributes) -> np.ndarray:
    """One-hot encode six 1-based MONK's attribute values into 17 bits."""
    bits = []
    for value, arity in zip(attributes, MONKS_ARITIES):
        one_hot = np.zeros(arity, dtype=np.uint8)
        one_hot[int(value) - 1] = 1
        bits.append(one_hot)
    return np.concatenate(bits)


def _read_monks_file(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    if not path.exists():
        raise DatasetError(f"MONK's file not found: {path}")

    features, labels = [], []
    with open(path, "r") as f:
        for line_number, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                continue
            try:
                label = int(tokens[0])
                attributes = [int(t) for t in tokens[1:7]]
            except ValueError:
                raise DatasetError(f"{path}:{line_number}: non-integer field in '{line.strip()}'")
            if len(attributes) != 6 or label not in (0, 1):
                raise DatasetError(f"{path}:{line_number}: expected 'class a1..a6 id', got '{line.strip()}'")
            for position, (value, arity) in enumerate(zip(attributes, MONKS_ARITIES), start=1):
                if not 1 <= value <= arity:
                    raise DatasetError(
                        f"{path}:{line_number}: attribute a{position}={value} outside 1..{arity}")
            features.append(encode_monks_row(attributes))
            labels.append(label)

    if not features:
        raise DatasetError(f"{path}: no rows")
    return np.stack(features), np.array(labels, dtype=np.int64)


def load_monks2(path) -> EncodedDataset:
    """Load MONK's-2 from a directory holding monks-2.train and monks-2.test."""
    root = Path(path)
    train_x, train_y = _read_monks_file(root / "monks-2.train")
    test_x, test_y = _read_monks_file(root / "monks-2.test")
    dataset = EncodedDataset("monks2", train_x, train_y, test_x, test_y, classes=2)
    logger.info(f"Loaded {dataset.summary()}")
    return dataset


# --- generic binary CSV ---------------------------------------------------

def _read_binary_csv(path: Path, label_column: str) -> Tuple[np.ndarray, np.ndarray]:
    if not path.exists():
        raise DatasetError(f"CSV file not found: {path}")
    try:
        df = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DatasetError(f"{path}: cannot parse CSV ({e})")

    if label_column not in df.columns:
        raise DatasetError(f"{path}: label column '{label_column}' not in header")

    labels = df[label_column]
    features = df.drop(columns=[label_column])
    if features.isna().any().any() or labels.isna().any():
        raise DatasetError(f"{path}: missing values")
    if not features.isin([0, 1]).all().all():
        bad = [c for c in features.columns if not features[c].isin([0, 1]).all()]
        raise DatasetError(f"{path}: non-binary feature column(s) {bad[:5]}")
    return features.to_numpy(dtype=np.uint8), labels.to_numpy(dtype=np.int64)


def load_csv_binary(path, label_column: str = "label") -> EncodedDataset:
    """
    Load pre-binarized features from train.csv and test.csv in a directory.

    Each file has a header row; every column except label_column is a 0/1
    feature.
    """
    root = Path(path)
    train_x, train_y = _read_binary_csv(root / "train.csv", label_column)
    test_x, test_y = _read_binary_csv(root / "test.csv", label_column)
    if train_x.shape[1] != test_x.shape[1]:
        raise DatasetError(
            f"train.csv has {train_x.shape[1]} features but test.csv has {test_x.shape[1]}")
    classes = int(max(train_y.max(), test_y.max())) + 1
    dataset = EncodedDataset(root.name or "csv", train_x, train_y, test_x, test_y, classes=classes)
    logger.info(f"Loaded {dataset.summary()}")
    return dataset


# --- synthetic tasks ------------------------------------------------------

def synthetic_parity(n_bits: int) -> EncodedDataset:
    """All 2^n inputs labeled by the XOR of their bits; train = test."""
    if not 1 <= n_bits <= 20:
        raise DatasetError(f"parity n_bits must be in [1, 20], got {n_bits}")
    index = np.arange(2 ** n_bits)
    features = ((index[:, None] >> np.arange(n_bits)) & 1).astype(np.uint8)
    labels = (features.sum(axis=1) % 2).astype(np.int64)
    return EncodedDataset(f"parity{n_bits}", features, labels, features.copy(), labels.copy(), classes=2)


def synthetic_single_gate(gate) -> EncodedDataset:
    """The 4-row truth table of one gate as a 2-feature, 2-class task."""
    g = gate_id(gate)
    features = np.array(CORNERS, dtype=np.uint8)
    labels = truth_table(g)
    return EncodedDataset(f"gate_{gate_name(g).lower()}", features, labels,
                          features.copy(), labels.copy(), classes=2)


def load_dataset(name: str, path: Optional[str] = None, parity_bits: int = 6,
                 target_gate: str = "XOR", thermometer_levels: int = 0,
                 label_column: str = "label") -> EncodedDataset:
    """
    Load a dataset by name and check it.

    Args:
        name: mnist, monks2, csv, parity or single_gate
        path: Directory for file-backed datasets (relative paths resolve under $DLGN_DATA_ROOT)

    Raises:
        DatasetError: unknown name, unreadable files or invalid content
    """
    if name == "parity":
        dataset = synthetic_parity(parity_bits)
    elif name == "single_gate":
        try:
            dataset = synthetic_single_gate(target_gate)
        except ValueError as e:
            raise DatasetError(str(e))
    elif name == "mnist":
        dataset = load_mnist(resolve_data_path(path or "mnist"), thermometer_levels)
    elif name == "monks2":
        dataset = load_monks2(resolve_data_path(path or "monks2"))
    elif name == "csv":
        dataset = load_csv_binary(resolve_data_path(path), label_column)
    else:
        raise DatasetError(
            f"Unknown dataset '{name}' (expected mnist, monks2, csv, parity or single_gate)")

    errors = validate_dataset(dataset)
    if errors:
        raise DatasetError(f"Dataset {name} failed validation:\n  " + "\n  ".join(errors))
    return dataset

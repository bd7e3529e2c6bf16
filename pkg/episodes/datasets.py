"""
Dataset file IO and the synthetic Gaussian-cluster generator.

File format: a UTF-8 CSV with header `class_id,split,f0,...,f{D-1}`, one
row per sample, plus a `<name>.meta` sidecar of `key=value` lines
(`name`, `dim`, `n_train_classes`) that the loader cross-checks.
"""
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from config.exceptions import ConfigError, DatasetParseError, SplitViolationError
from .models import Dataset, DatasetClass, Split
from .serializers import DatasetMetaSerializer

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def meta_path_for(path):
    return Path(path).with_suffix(".meta")


def feature_columns(dim):
    return [f"f{j}" for j in range(dim)]


def read_meta(path):
    path = Path(path)
    if not path.exists():
        raise DatasetParseError(f"missing dataset manifest {path}")
    values = {}
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DatasetParseError(f"{path.name}: expected key=value", line=number)
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()

    serializer = DatasetMetaSerializer(data=values)
    if not serializer.is_valid():
        raise DatasetParseError(f"{path.name}: {serializer.errors}")
    return serializer.validated_data


def _first_bad_feature_row(frame, columns):
    for index, row in frame[columns].iterrows():
        for column in columns:
            cell = row[column]
            try:
                float(cell)
            except (TypeError, ValueError):
                return index, column, cell
    return None


def load_dataset(path):
    """Read and validate a dataset CSV and its manifest."""
    path = Path(path)
    meta = read_meta(meta_path_for(path))
    dim = meta["dim"]

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8")
    except pd.errors.ParserError as exc:
        raise DatasetParseError(f"{path.name}: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DatasetParseError(f"{path.name}: file is empty", line=1) from exc

    expected = ["class_id", "split"] + feature_columns(dim)
    if list(frame.columns) != expected:
        raise DatasetParseError(
            f"header has {len(frame.columns) - 2} feature columns, manifest says dim={dim}", line=1
        )

    # Short rows come back padded with NaN/empty cells
    features = frame[feature_columns(dim)]
    missing = features.isna() | (features == "")
    if missing.to_numpy().any():
        index = int(np.flatnonzero(missing.to_numpy().any(axis=1))[0])
        found = int((~missing.iloc[index]).sum())
        raise DatasetParseError(f"expected {dim} feature values, found {found}", line=index + 2)

    try:
        values = features.to_numpy(dtype=np.float64)
    except ValueError:
        index, column, cell = _first_bad_feature_row(frame, feature_columns(dim))
        raise DatasetParseError(f"column {column}: '{cell}' is not a number", line=index + 2)

    bad_rows = np.flatnonzero(~np.isfinite(values).all(axis=1))
    if bad_rows.size:
        raise DatasetParseError("non-finite feature value", line=int(bad_rows[0]) + 2)

    bad_split = ~frame["split"].isin(Split.values)
    if bad_split.any():
        index = int(np.flatnonzero(bad_split.to_numpy())[0])
        raise DatasetParseError(f"unknown split '{frame['split'].iloc[index]}'", line=index + 2)

    class_ids = pd.to_numeric(frame["class_id"], errors="coerce")
    bad_id = class_ids.isna() | (class_ids != class_ids.round())
    if bad_id.any():
        index = int(np.flatnonzero(bad_id.to_numpy())[0])
        raise DatasetParseError(f"class_id '{frame['class_id'].iloc[index]}' is not an integer", line=index + 2)
    class_ids = class_ids.astype(np.int64).to_numpy()

    classes = []
    for class_id in sorted(set(class_ids.tolist())):
        mask = class_ids == class_id
        splits = sorted(set(frame["split"][mask]))
        if len(splits) > 1:
            raise SplitViolationError(f"class {class_id} appears in splits {splits}")
        classes.append(DatasetClass(class_id=int(class_id), split=splits[0], features=values[mask]))

    dataset = Dataset(name=meta["name"], dim=dim, classes=classes)
    if dataset.n_train_classes != meta["n_train_classes"]:
        raise DatasetParseError(
            f"manifest says n_train_classes={meta['n_train_classes']}, "
            f"CSV has {dataset.n_train_classes} train classes"
        )

    logger.info(f"Loaded dataset '{dataset.name}' from {path}: {summarize(dataset)['splits']}")
    return dataset


def save_dataset(dataset, path):
    """Write the CSV and its manifest; the output bytes depend only on the dataset."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    columns = feature_columns(dataset.dim)
    blocks = []
    for cls in sorted(dataset.classes, key=lambda c: c.class_id):
        block = pd.DataFrame(cls.features, columns=columns)
        block.insert(0, "split", cls.split)
        block.insert(0, "class_id", cls.class_id)
        blocks.append(block)
    frame = pd.concat(blocks, ignore_index=True) if blocks else pd.DataFrame(columns=["class_id", "split"] + columns)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")

    meta_path_for(path).write_text(
        f"name={dataset.name}\ndim={dataset.dim}\nn_train_classes={dataset.n_train_classes}\n",
        encoding="utf-8",
    )
    return path


def summarize(dataset):
    splits = {}
    for split in Split.values:
        classes = dataset.split_classes(split)
        splits[split] = {"classes": len(classes), "samples": int(sum(c.n_rows for c in classes))}
    return {
        "name": dataset.name,
        "dim": dataset.dim,
        "n_train_classes": dataset.n_train_classes,
        "splits": splits,
    }


def split_counts(n_classes, split_fractions):
    """Classes per split: val and test get round(f * n) but at least one; train gets the rest."""
    fractions = tuple(float(f) for f in split_fractions)
    if len(fractions) != 3:
        raise ConfigError(f"split fractions must be a (train, val, test) triple, got {fractions}")
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be positive and sum to 1, got {fractions}")
    if n_classes < 3:
        raise ConfigError(f"need at least 3 classes to fill train/val/test, got {n_classes}")

    n_val = max(1, int(round(fractions[1] * n_classes)))
    n_test = max(1, int(round(fractions[2] * n_classes)))
    n_train = n_classes - n_val - n_test
    if n_train < 1:
        raise ConfigError(f"split fractions {fractions} leave no train class out of {n_classes}")
    return n_train, n_val, n_test


def gen_synthetic(n_classes, per_class, dim, spread, separation, rng, split_fractions=(0.6, 0.2, 0.2),
                  name="synthetic"):
    """
    Isotropic Gaussian clusters: class means uniform in [-separation,
    separation]^dim, samples mean + spread * N(0, I). Draw order is fixed:
    split permutation, then means, then samples class by class.
    """
    n_train, n_val, _ = split_counts(n_classes, split_fractions)
    if per_class < 1 or dim < 1:
        raise ConfigError("per_class and dim must be >= 1")
    if spread < 0:
        raise ConfigError(f"spread must be >= 0, got {spread}")

    order = rng.permutation(n_classes)
    means = rng.uniform(-separation, separation, size=(n_classes, dim))

    position = np.empty(n_classes, dtype=int)
    position[order] = np.arange(n_classes)

    classes = []
    for class_id in range(n_classes):
        samples = means[class_id] + spread * rng.standard_normal((per_class, dim))
        if position[class_id] < n_train:
            split = Split.TRAIN
        elif position[class_id] < n_train + n_val:
            split = Split.VAL
        else:
            split = Split.TEST
        classes.append(DatasetClass(class_id=class_id, split=str(split), features=samples))

    dataset = Dataset(name=name, dim=dim, classes=classes)
    logger.info(f"Generated synthetic dataset '{name}': {summarize(dataset)['splits']}")
    return dataset

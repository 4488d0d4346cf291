"""Tabular schema, dataset loading and the encoded (model-input) representation.

An encoded vector concatenates, in schema order, one column per numeric
attribute (standardized with training-split statistics), one column per
ordinal attribute (kept in its original integer units) and a one-hot block
per categorical attribute.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

NUMERIC = "numeric"
ORDINAL = "ordinal"
CATEGORICAL = "categorical"
KINDS = (NUMERIC, ORDINAL, CATEGORICAL)

RESOURCES = Path(__file__).parent / "resources"
GERMAN_SCHEMA = RESOURCES / "german.yaml"
GERMAN_DATA = RESOURCES / "german.data"


class SchemaError(ValueError):
    """The schema file is malformed or violates a schema invariant."""


class DataError(ValueError):
    """A data row, record or encoded sample does not conform to the schema."""


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str
    categories: tuple[str, ...] = ()
    labels: tuple[str, ...] = ()
    direction: int = 0

    @property
    def width(self) -> int:
        return len(self.categories) if self.kind == CATEGORICAL else 1

    def label_of(self, code: str) -> str:
        return self.labels[self.categories.index(code)]


@dataclass(frozen=True)
class Schema:
    """Ordered semantic attributes plus the layout of the raw data file."""

    attributes: tuple[Attribute, ...]
    label_name: str = "label"
    class_codes: tuple[str, ...] = ("0", "1")
    class_names: tuple[str, ...] = ("Approved", "Rejected")
    label_position: int = -1
    delimiter: str | None = None
    header: bool = False
    name: str = ""
    _offsets: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        seen = set()
        for attr in self.attributes:
            if attr.name in seen:
                raise SchemaError(f"duplicate attribute name {attr.name!r}")
            seen.add(attr.name)
            if attr.kind not in KINDS:
                raise SchemaError(f"{attr.name}: unknown kind {attr.kind!r}")
            if attr.direction not in (-1, 0, 1):
                raise SchemaError(f"{attr.name}: direction must be -1, 0 or +1")
            if attr.kind == CATEGORICAL:
                if len(attr.categories) < 2:
                    raise SchemaError(f"{attr.name}: categorical needs at least 2 categories")
                if len(set(attr.categories)) != len(attr.categories):
                    raise SchemaError(f"{attr.name}: duplicate category labels")
                if len(attr.labels) != len(attr.categories):
                    raise SchemaError(f"{attr.name}: one display label per category required")
                if attr.direction != 0:
                    raise SchemaError(f"{attr.name}: categorical attributes cannot carry a direction")
        if self.label_name in seen:
            raise SchemaError(f"label {self.label_name!r} collides with an attribute name")
        if len(self.class_codes) != 2 or len(set(self.class_codes)) != 2:
            raise SchemaError("exactly two distinct class codes are required")
        offsets, pos = [], 0
        for attr in self.attributes:
            offsets.append(pos)
            pos += attr.width
        object.__setattr__(self, "_offsets", tuple(offsets))

    @property
    def width(self) -> int:
        return sum(a.width for a in self.attributes)

    def index(self, name: str) -> int:
        for i, attr in enumerate(self.attributes):
            if attr.name == name:
                return i
        raise KeyError(name)

    def attribute(self, name: str) -> Attribute:
        return self.attributes[self.index(name)]

    def columns_of(self, name: str) -> slice:
        i = self.index(name)
        start = self._offsets[i]
        return slice(start, start + self.attributes[i].width)

    @property
    def categorical_blocks(self) -> list[slice]:
        return [self.columns_of(a.name) for a in self.attributes if a.kind == CATEGORICAL]

    def _columns(self, kind: str) -> np.ndarray:
        return np.array(
            [off for off, a in zip(self._offsets, self.attributes) if a.kind == kind], dtype=int
        )

    @property
    def numeric_columns(self) -> np.ndarray:
        return self._columns(NUMERIC)

    @property
    def ordinal_columns(self) -> np.ndarray:
        return self._columns(ORDINAL)

    @property
    def categorical_mask(self) -> np.ndarray:
        mask = np.zeros(self.width, dtype=bool)
        for block in self.categorical_blocks:
            mask[block] = True
        return mask

    @property
    def column_names(self) -> list[str]:
        names = []
        for attr in self.attributes:
            if attr.kind == CATEGORICAL:
                names.extend(f"{attr.name}={c}" for c in attr.categories)
            else:
                names.append(attr.name)
        return names

    def column_owner(self, column: int) -> Attribute:
        for off, attr in zip(self._offsets, self.attributes):
            if off <= column < off + attr.width:
                return attr
        raise IndexError(column)


def load_schema(path: str | Path) -> Schema:
    """Read a YAML schema file (see ``resources/german.yaml`` for the layout)."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise SchemaError(f"cannot read schema {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise SchemaError(f"cannot parse schema {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: expected a mapping at top level")
    return schema_from_dict(doc)


def schema_from_dict(doc: Mapping[str, Any]) -> Schema:
    try:
        label = doc["label"]
        fields = doc["fields"]
    except KeyError as exc:
        raise SchemaError(f"schema is missing required key {exc}") from None
    classes = label.get("classes") or []
    attributes, label_position = [], None
    for pos, entry in enumerate(fields):
        name, kind = str(entry["name"]), entry.get("kind", NUMERIC)
        if kind == "label":
            label_position = pos
            continue
        categories: tuple[str, ...] = ()
        labels: tuple[str, ...] = ()
        if kind == CATEGORICAL:
            cats = entry.get("categories") or {}
            if isinstance(cats, Mapping):
                categories = tuple(str(k) for k in cats)
                labels = tuple(str(v) for v in cats.values())
            else:
                categories = labels = tuple(str(c) for c in cats)
        try:
            direction = int(entry.get("direction", 0))
        except (TypeError, ValueError):
            raise SchemaError(f"{name}: direction must be an integer") from None
        attributes.append(Attribute(name, kind, categories, labels, direction))
    if label_position is None:
        raise SchemaError("no field of kind 'label' in schema")
    if fields[label_position]["name"] != label.get("name", fields[label_position]["name"]):
        raise SchemaError("label.name does not match the label field")
    delimiter = doc.get("delimiter", "whitespace")
    return Schema(
        attributes=tuple(attributes),
        label_name=str(fields[label_position]["name"]),
        class_codes=tuple(str(c["code"]) for c in classes),
        class_names=tuple(str(c.get("name", c["code"])) for c in classes),
        label_position=label_position,
        delimiter=None if delimiter == "whitespace" else str(delimiter),
        header=bool(doc.get("header", False)),
        name=str(doc.get("name", "")),
    )


@dataclass(frozen=True)
class Dataset:
    """Encoded samples with labels and the per-column affine standardization.

    ``mean`` and ``scale`` span every encoded column; they are 0 and 1 outside
    the numeric columns, so ``(raw - mean) / scale`` is the full encoding.
    """

    schema: Schema
    X: np.ndarray
    y: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    rows: np.ndarray
    standardized: bool = False

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=int)
        return Dataset(self.schema, self.X[index], self.y[index], self.mean, self.scale,
                       self.rows[index], self.standardized)

    def raw(self) -> np.ndarray:
        return self.X * self.scale + self.mean


def _identity_transform(schema: Schema) -> tuple[np.ndarray, np.ndarray]:
    return np.zeros(schema.width), np.ones(schema.width)


def parse_fields(values: list[str], schema: Schema, where: str = "record") -> dict[str, Any]:
    """Map raw string fields (label removed) to typed semantic values."""
    if len(values) != len(schema.attributes):
        raise DataError(f"{where}: expected {len(schema.attributes)} attribute fields, got {len(values)}")
    record: dict[str, Any] = {}
    for attr, text in zip(schema.attributes, values):
        text = text.strip()
        if attr.kind == CATEGORICAL:
            if text not in attr.categories:
                raise DataError(f"{where}: unknown category {text!r} for {attr.name}")
            record[attr.name] = text
            continue
        try:
            value = float(text)
        except ValueError:
            raise DataError(f"{where}: {attr.name} is not a number: {text!r}") from None
        if not math.isfinite(value):
            raise DataError(f"{where}: {attr.name} is not finite")
        if attr.kind == ORDINAL:
            if value != int(value):
                raise DataError(f"{where}: ordinal {attr.name} must be an integer, got {text!r}")
            value = int(value)
        record[attr.name] = value
    return record


def _read_rows(path: Path, schema: Schema) -> list[list[str]]:
    text = path.read_text()
    if schema.delimiter is None:
        rows = [line.split() for line in text.splitlines()]
    else:
        rows = list(csv.reader(text.splitlines(), delimiter=schema.delimiter))
    if schema.header and rows:
        rows = rows[1:]
    return [r for r in rows if r and any(f.strip() for f in r)]


def load_dataset(path: str | Path, schema: Schema) -> Dataset:
    """Load a raw data file. Numeric columns are left unstandardized."""
    path = Path(path)
    try:
        rows = _read_rows(path, schema)
    except OSError as exc:
        raise DataError(f"cannot read data file {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    n_fields = len(schema.attributes) + 1
    label_pos = schema.label_position % n_fields
    X = np.empty((len(rows), schema.width))
    y = np.empty(len(rows), dtype=int)
    for i, row in enumerate(rows):
        where = f"{path.name}:{i + 1}"
        if len(row) != n_fields:
            raise DataError(f"{where}: expected {n_fields} fields, got {len(row)}")
        code = row[label_pos].strip()
        if code not in schema.class_codes:
            raise DataError(f"{where}: unknown class code {code!r}")
        y[i] = schema.class_codes.index(code)
        values = row[:label_pos] + row[label_pos + 1:]
        X[i] = encode_raw(parse_fields(values, schema, where), schema)
    mean, scale = _identity_transform(schema)
    return Dataset(schema, X, y, mean, scale, np.arange(len(rows)), standardized=False)


def fit_standardization(raw: np.ndarray, schema: Schema) -> tuple[np.ndarray, np.ndarray]:
    mean, scale = _identity_transform(schema)
    cols = schema.numeric_columns
    if len(cols) and len(raw):
        mu = raw[:, cols].mean(axis=0)
        sd = raw[:, cols].std(axis=0)
        for name, s in zip((schema.column_names[c] for c in cols), sd):
            if not s > 0:
                warnings.warn(f"numeric column {name!r} has zero variance; using scale 1.0")
        mean[cols] = mu
        scale[cols] = np.where(sd > 0, sd, 1.0)
    return mean, scale


def split(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Shuffle-split into train/validation and standardize both with train statistics."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    n_train = int(round(fraction * len(dataset)))
    train_idx, val_idx = order[:n_train], order[n_train:]
    raw = dataset.raw()
    mean, scale = fit_standardization(raw[train_idx], dataset.schema)

    def part(idx):
        return Dataset(dataset.schema, (raw[idx] - mean) / scale, dataset.y[idx], mean, scale,
                       dataset.rows[idx], standardized=True)

    return part(train_idx), part(val_idx)


def restandardize(dataset: Dataset, mean: np.ndarray, scale: np.ndarray) -> Dataset:
    raw = dataset.raw()
    return Dataset(dataset.schema, (raw - mean) / scale, dataset.y, mean, scale,
                   dataset.rows, standardized=True)


def encode_raw(record: Mapping[str, Any], schema: Schema) -> np.ndarray:
    out = np.zeros(schema.width)
    for attr in schema.attributes:
        if attr.name not in record:
            raise DataError(f"missing attribute {attr.name!r}")
        value = record[attr.name]
        cols = schema.columns_of(attr.name)
        if attr.kind == CATEGORICAL:
            if value not in attr.categories:
                raise DataError(f"unknown category {value!r} for {attr.name}")
            out[cols.start + attr.categories.index(value)] = 1.0
        else:
            out[cols.start] = float(value)
    return out


def encode(record: Mapping[str, Any], dataset: Dataset) -> np.ndarray:
    return (encode_raw(record, dataset.schema) - dataset.mean) / dataset.scale


def check_valid(sample: np.ndarray, schema: Schema) -> None:
    """Raise DataError unless every one-hot block is exact and ordinals are integral."""
    sample = np.asarray(sample, dtype=float)
    if sample.shape != (schema.width,):
        raise DataError(f"expected width {schema.width}, got shape {sample.shape}")
    for attr in schema.attributes:
        block = sample[schema.columns_of(attr.name)]
        if attr.kind == CATEGORICAL:
            if not (np.all((block == 0.0) | (block == 1.0)) and block.sum() == 1.0):
                raise DataError(f"invalid one-hot block for {attr.name}: {block.tolist()}")
        elif attr.kind == ORDINAL and block[0] != round(block[0]):
            raise DataError(f"fractional ordinal {attr.name}: {block[0]}")


def is_valid(sample: np.ndarray, schema: Schema) -> bool:
    try:
        check_valid(sample, schema)
    except DataError:
        return False
    return True


def decode(sample: np.ndarray, dataset: Dataset) -> dict[str, Any]:
    schema = dataset.schema
    check_valid(sample, schema)
    raw = np.asarray(sample, dtype=float) * dataset.scale + dataset.mean
    record: dict[str, Any] = {}
    for attr in schema.attributes:
        cols = schema.columns_of(attr.name)
        if attr.kind == CATEGORICAL:
            record[attr.name] = attr.categories[int(np.argmax(raw[cols]))]
        elif attr.kind == ORDINAL:
            record[attr.name] = int(raw[cols.start])
        else:
            record[attr.name] = float(raw[cols.start])
    return record


def expand_direction(schema: Schema) -> np.ndarray:
    """Per-column direction codes: the attribute's code on numeric/ordinal columns, 0 on one-hots."""
    out = np.zeros(schema.width)
    for attr in schema.attributes:
        if attr.kind != CATEGORICAL:
            out[schema.columns_of(attr.name).start] = attr.direction
    return out


def format_value(attr: Attribute, value: Any) -> str:
    if attr.kind == CATEGORICAL:
        return attr.label_of(value)
    if attr.kind == ORDINAL or abs(value - round(value)) < 1e-6:
        return str(int(round(value)))
    return f"{value:.2f}"


def display(record: Mapping[str, Any], schema: Schema) -> dict[str, str]:
    return {a.name: format_value(a, record[a.name]) for a in schema.attributes}


def load_german() -> Dataset:
    return load_dataset(GERMAN_DATA, load_schema(GERMAN_SCHEMA))

"""RS item-sequence datasets: generation, scaling, type splits and JSONL files.

A dataset file starts with one header object followed by one object per
sequence::

    {"format": "packbench-rs", "version": 1, "seed": 42, "bin": [10, 10, 10], ...}
    {"bin": [10, 10, 10], "items": [[3, 2, 5], [1, 4, 4], ...]}

Every line is validated with jsonschema when read back.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from packbench.bin import BinDims, ItemDims
from packbench.env import item_types, sample_item
from packbench.errors import DatasetError, DomainError
from packbench.helpers import atomic_write_text


logger = logging.getLogger(__name__)

FORMAT_NAME = "packbench-rs"
FORMAT_VERSION = 1
GENERATOR = "uniform-types"
DEFAULT_SEQUENCE_LENGTH = 100

_TRIPLE = {
    "type": "array",
    "items": {"type": "integer", "minimum": 1},
    "minItems": 3,
    "maxItems": 3,
}

HEADER_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["format", "version", "seed", "bin", "generator"],
    "properties": {
        "format": {"const": FORMAT_NAME},
        "version": {"const": FORMAT_VERSION},
        "seed": {"type": ["integer", "null"]},
        "bin": _TRIPLE,
        "generator": {"type": "string"},
        "types": {"oneOf": [{"const": "all"}, {"type": "array", "items": _TRIPLE, "minItems": 1}]},
        "count": {"type": "integer", "minimum": 0},
    },
}

SEQUENCE_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["bin", "items"],
    "properties": {
        "bin": _TRIPLE,
        "items": {"type": "array", "items": _TRIPLE, "minItems": 1},
    },
    "additionalProperties": False,
}


@dataclass(frozen=True, slots=True)
class RsDataset:
    """Frozen item sequences plus the metadata needed to regenerate them."""

    dims: BinDims
    sequences: tuple[tuple[ItemDims, ...], ...]
    seed: int | None = None
    types: tuple[ItemDims, ...] | None = None

    def __len__(self) -> int:
        return len(self.sequences)

    def scaled(self, factor: int) -> RsDataset:
        """Return the dataset with bin and items scaled by an integer factor.

        Args:
            factor: Positive integer scale.

        Returns:
            Scaled dataset.
        """
        return RsDataset(
            dims=self.dims.scaled(factor),
            sequences=tuple(tuple(item.scaled(factor) for item in seq) for seq in self.sequences),
            seed=self.seed,
            types=None if self.types is None else tuple(item.scaled(factor) for item in self.types),
        )


def scale_dataset(dataset: RsDataset, factor: int) -> RsDataset:
    """Scale a dataset to a ``factor`` times larger bin.

    Args:
        dataset: Source dataset, typically Bin-10.
        factor: Positive integer scale.

    Returns:
        Scaled dataset.

    Raises:
        DomainError: If ``factor`` is not positive.
    """
    if factor < 1:
        raise DomainError(f"scale factor must be a positive integer, got {factor}")
    return dataset.scaled(factor)


def rescale_dataset(dataset: RsDataset, dims: BinDims) -> RsDataset:
    """Scale a dataset onto a larger bin.

    Args:
        dataset: Source dataset.
        dims: Target bin; an integer multiple of the source bin.

    Returns:
        Scaled dataset, or ``dataset`` itself if it already uses ``dims``.

    Raises:
        DomainError: If ``dims`` is not an integer multiple of the source bin.
    """
    factor = dims.length // dataset.dims.length
    if factor < 1 or dataset.dims.scaled(factor) != dims:
        raise DomainError(f"bin {dims} is not an integer multiple of the source bin {dataset.dims}")
    return dataset if factor == 1 else dataset.scaled(factor)


def generate_dataset(
    dims: BinDims,
    count: int,
    seed: int,
    length: int = DEFAULT_SEQUENCE_LENGTH,
    types: Sequence[ItemDims] | None = None,
) -> RsDataset:
    """Generate ``count`` item sequences by sampling RS types.

    Args:
        dims: Bin dimensions.
        count: Number of sequences.
        seed: Generator seed; equal seeds give equal datasets.
        length: Items per sequence; long enough to exhaust the bin.
        types: Restrict sampling to these types (e.g. an RS_sub split).

    Returns:
        Generated dataset.

    Raises:
        DomainError: If ``count`` or ``length`` is not positive.
    """
    if count < 1 or length < 1:
        raise DomainError(f"dataset needs positive count and length, got {count} and {length}")
    pool = tuple(types) if types is not None else tuple(item_types(dims))
    rng = np.random.default_rng(seed)
    sequences = tuple(tuple(sample_item(rng, dims, pool) for _ in range(length)) for _ in range(count))
    logger.info("Generated %d sequences of %d items for a %s bin (seed %d)", count, length, dims, seed)
    return RsDataset(dims, sequences, seed, None if types is None else pool)


def split_types(dims: BinDims, exclude: int, seed: int) -> tuple[tuple[ItemDims, ...], tuple[ItemDims, ...]]:
    """Randomly partition the RS types into a training subset and excluded types.

    Args:
        dims: Bin dimensions.
        exclude: Number of types to hold out.
        seed: Split seed.

    Returns:
        Tuple of (RS_sub, RS_exc), each in catalogue order.

    Raises:
        DomainError: If ``exclude`` is not in ``[1, 125)``.
    """
    catalogue = item_types(dims)
    if not 1 <= exclude < len(catalogue):
        raise DomainError(f"exclude count must be in [1, {len(catalogue)}), got {exclude}")
    held_out = set(np.random.default_rng(seed).permutation(len(catalogue))[:exclude].tolist())
    subset = tuple(item for i, item in enumerate(catalogue) if i not in held_out)
    excluded = tuple(item for i, item in enumerate(catalogue) if i in held_out)
    return subset, excluded


def _header(dataset: RsDataset) -> dict[str, Any]:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "seed": dataset.seed,
        "bin": list(dataset.dims.as_tuple()),
        "generator": GENERATOR,
        "types": "all" if dataset.types is None else [list(t.as_tuple()) for t in dataset.types],
        "count": len(dataset),
    }


def dumps_dataset(dataset: RsDataset) -> str:
    """Serialize a dataset to JSONL text.

    Args:
        dataset: Dataset to serialize.

    Returns:
        Header line followed by one line per sequence.
    """
    bin_dims = list(dataset.dims.as_tuple())
    lines = [json.dumps(_header(dataset), separators=(",", ":"))]
    for seq in dataset.sequences:
        record = {"bin": bin_dims, "items": [list(item.as_tuple()) for item in seq]}
        lines.append(json.dumps(record, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def write_dataset(dataset: RsDataset, path: Path) -> None:
    """Write a dataset file atomically.

    Args:
        dataset: Dataset to write.
        path: Destination path.
    """
    atomic_write_text(path, dumps_dataset(dataset))
    logger.info("Wrote %d sequences to %s", len(dataset), path)


def _validate(instance: Any, schema: dict[str, Any], path: Path, line_number: int) -> None:
    try:
        jsonschema.validate(instance=instance, schema=schema)
    except jsonschema.ValidationError as e:
        location = ".".join(str(part) for part in e.absolute_path) or "<root>"
        raise DatasetError(f"{path}:{line_number}: {location}: {e.message}") from e


def _triple(values: list[int]) -> tuple[int, int, int]:
    return (values[0], values[1], values[2])


def load_dataset(path: Path) -> RsDataset:
    """Read and validate a dataset file.

    Args:
        path: Dataset path.

    Returns:
        Loaded dataset.

    Raises:
        DatasetError: If a line is not JSON, fails its schema, or disagrees with the header's bin.
    """
    lines = [line for line in path.read_text().splitlines() if line.strip()]
    if not lines:
        raise DatasetError(f"{path}: dataset file is empty")

    records = []
    for number, line in enumerate(lines, start=1):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise DatasetError(f"{path}:{number}: invalid JSON: {e.msg}") from e

    header = records[0]
    _validate(header, HEADER_SCHEMA, path, 1)
    dims = BinDims(*_triple(header["bin"]))
    types = None if header.get("types", "all") == "all" else tuple(ItemDims(*_triple(t)) for t in header["types"])

    sequences = []
    for number, record in enumerate(records[1:], start=2):
        _validate(record, SEQUENCE_SCHEMA, path, number)
        if _triple(record["bin"]) != dims.as_tuple():
            raise DatasetError(f"{path}:{number}: bin {record['bin']} differs from header bin {list(dims.as_tuple())}")
        sequences.append(tuple(ItemDims(*_triple(item)) for item in record["items"]))

    return RsDataset(dims, tuple(sequences), header["seed"], types)


def dumps_types(types: Sequence[ItemDims]) -> str:
    """Serialize an item-type list as a JSON array of ``[l, w, h]``.

    Args:
        types: Item types.

    Returns:
        JSON text.
    """
    return json.dumps([list(t.as_tuple()) for t in types]) + "\n"


def load_types(path: Path) -> tuple[ItemDims, ...]:
    """Read an item-type list written by :func:`dumps_types`.

    Args:
        path: Type-list file.

    Returns:
        Item types.

    Raises:
        DatasetError: If the file is not a list of positive integer triples.
    """
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: invalid JSON: {e.msg}") from e
    _validate(data, {"type": "array", "items": _TRIPLE, "minItems": 1}, path, 1)
    return tuple(ItemDims(*_triple(t)) for t in data)

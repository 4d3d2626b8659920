"""CSV ingestion and export of datasets."""

import datetime as dt
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from logcontrast.compute.compositions import FloatArray
from logcontrast.compute.compositions import validate_composition
from logcontrast.compute.design import Dataset
from logcontrast.compute.design import IntArray
from logcontrast.exceptions import MissingColumnError
from logcontrast.exceptions import NonPositivePartError
from logcontrast.exceptions import ParseError
from logcontrast.io.schemas import ColumnMapping

logger = logging.getLogger(__name__)

RESPONSE_COLUMN = "response"
MODERATOR_COLUMN = "moderator"
OFFSET_COLUMN = "offset"
GROUP_COLUMN = "group"
TIME_COLUMN = "time"


def _numbers(frame: pd.DataFrame, column: str) -> FloatArray:
    """Parse a column of decimal strings; rows are numbered from 1."""
    raw = frame[column].str.strip()
    values = pd.to_numeric(raw, errors="coerce").astype(np.float64)
    bad = ~np.isfinite(values.to_numpy())
    if bad.any():
        position = int(np.argmax(bad))
        row = int(frame.index[position]) + 1
        raise ParseError(row, column, str(raw.iloc[position]))
    return values.to_numpy()


def _time_key(value: str) -> int:
    try:
        return int(value)
    except ValueError:
        return dt.date.fromisoformat(value).toordinal()


def _time_keys(frame: pd.DataFrame, column: str) -> IntArray:
    keys = np.empty(len(frame), dtype=np.int64)
    for position, (index, value) in enumerate(frame[column].str.strip().items()):
        try:
            keys[position] = _time_key(value)
        except ValueError:
            raise ParseError(int(index) + 1, column, value) from None
    return keys


def load_csv(path: Path, mapping: ColumnMapping) -> Dataset:
    """Load a dataset from a UTF-8 CSV file with a header row.

    Columns are matched by name, so their order in the file does not
    matter. Rows with an empty field in any mapped column are dropped and
    counted in `Dataset.dropped_rows`. Time keys may be integers or ISO
    dates, which become day ordinals. Row numbers in errors count data
    rows from 1.

    Raises:
        MissingColumnError: If a mapped column is absent.
        ParseError: If a mapped numeric field is not a finite decimal.
        NonPositivePartError: If a part is zero or negative; the error
            names the row and column.
    """
    frame = pd.read_csv(
        path,
        dtype=str,
        keep_default_na=False,
        encoding="utf-8",
        skipinitialspace=True,
    )
    for column in mapping.columns():
        if column not in frame.columns:
            raise MissingColumnError(column)
    frame = frame[list(mapping.columns())]
    empty = (frame.apply(lambda column: column.str.strip()) == "").any(axis=1)
    dropped = int(empty.sum())
    frame = frame.loc[~empty]
    if dropped:
        logger.warning(
            "Dropped rows with missing values.",
            extra={"path": str(path), "dropped_rows": dropped, "rows": len(frame)},
        )

    parts = np.column_stack([_numbers(frame, name) for name in mapping.parts])
    for position, row in enumerate(parts):
        try:
            validate_composition(row)
        except NonPositivePartError as error:
            raise NonPositivePartError(
                error.index,
                error.value,
                row=int(frame.index[position]) + 1,
                column=mapping.parts[error.index],
            ) from error

    dataset = Dataset(
        parts=parts.reshape(len(frame), len(mapping.parts)),
        response=_numbers(frame, mapping.response),
        part_names=mapping.parts,
        moderator=(
            None if mapping.moderator is None else _numbers(frame, mapping.moderator)
        ),
        offset=None if mapping.offset is None else _numbers(frame, mapping.offset),
        group=None
        if mapping.group is None
        else tuple(frame[mapping.group].str.strip().tolist()),
        time=None if mapping.time is None else _time_keys(frame, mapping.time),
        dropped_rows=dropped,
    )
    logger.info(
        "Loaded dataset.",
        extra={"path": str(path), "rows": dataset.n, "parts": dataset.D},
    )
    return dataset


def default_mapping(data: Dataset) -> ColumnMapping:
    """Mapping of the columns `write_csv` produces for `data`."""
    return ColumnMapping(
        parts=data.part_names,
        response=RESPONSE_COLUMN,
        moderator=None if data.moderator is None else MODERATOR_COLUMN,
        offset=None if data.offset is None else OFFSET_COLUMN,
        group=None if data.group is None else GROUP_COLUMN,
        time=None if data.time is None else TIME_COLUMN,
    )


def write_csv(data: Dataset, path: Path) -> None:
    """Write a dataset as CSV with 17 significant digits."""
    columns: dict[str, object] = {
        name: data.parts[:, j] for j, name in enumerate(data.part_names)
    }
    columns[RESPONSE_COLUMN] = data.response
    if data.moderator is not None:
        columns[MODERATOR_COLUMN] = data.moderator
    if data.offset is not None:
        columns[OFFSET_COLUMN] = data.offset
    if data.group is not None:
        columns[GROUP_COLUMN] = list(data.group)
    if data.time is not None:
        columns[TIME_COLUMN] = data.time
    pd.DataFrame(columns).to_csv(
        path, index=False, float_format="%.17g", lineterminator="\n"
    )

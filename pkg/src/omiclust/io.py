"""CSV ingestion and artifact export.

Platform files carry a header row of probe names with patient ids in the
first column; clinical files carry patient_id, time, event columns in any
order.  Every numeric artifact is written with 17 significant digits so
values round-trip exactly through text.
"""

from __future__ import annotations

import csv

import numpy as np

from .data import (
    ClinicalOutcomes,
    PlatformMatrix,
    TransformDomainError,
    TransformedDataset,
)

__all__ = [
    "ParseError",
    "read_platform_csv",
    "load_platform",
    "load_dataset",
    "load_clinical",
    "write_platform",
    "write_clinical",
    "write_allocation",
    "read_allocation",
    "write_matrix",
    "read_matrix",
]


class ParseError(ValueError):
    """A malformed input file, with the offending location in the message."""


def _fmt(x) -> str:
    return format(float(x), ".17g")


def read_platform_csv(path) -> tuple[list[str], list[str], np.ndarray]:
    """Parse a platform CSV into (patient_ids, probe_names, raw matrix)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: file is empty") from None
        if len(header) < 2:
            raise ParseError(f"{path}: header needs an id column plus at "
                             "least one probe column")
        names = [s.strip() for s in header[1:]]
        ids: list[str] = []
        rows: list[list[float]] = []
        seen: dict[str, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}: row {lineno} has {len(row)} "
                                 f"fields, expected {len(header)}")
            pid = row[0].strip()
            if pid in seen:
                raise ParseError(f"{path}: duplicate patient id {pid!r} at "
                                 f"row {lineno} (first seen at row {seen[pid]})")
            seen[pid] = lineno
            parsed = []
            for j, cell in enumerate(row[1:]):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: row {lineno}, column {names[j]!r}: "
                        f"could not parse {cell.strip()!r}"
                    ) from None
            ids.append(pid)
            rows.append(parsed)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return ids, names, np.array(rows, dtype=np.float64)


def load_platform(path, transform: str = "identity",
                  clip_eps: float | None = None
                  ) -> tuple[PlatformMatrix, list[str]]:
    """Read and transform one platform; returns the matrix and the
    patient order it was recorded in."""
    ids, names, raw = read_platform_csv(path)
    try:
        matrix = PlatformMatrix.from_raw(raw, transform=transform,
                                         probe_names=names, clip_eps=clip_eps)
    except TransformDomainError as err:
        raise TransformDomainError(f"{path}: {err}", err.row, err.col) from None
    return matrix, ids


def load_dataset(paths, transforms, clip_eps: float | None = None,
                 clinical_path=None) -> TransformedDataset:
    """Load every platform, verify one shared patient order, and attach
    clinical outcomes when a file is given."""
    if len(paths) != len(transforms):
        raise ValueError("one transform per platform path required")
    platforms = []
    ids: list[str] | None = None
    for t, (path, transform) in enumerate(zip(paths, transforms)):
        matrix, these = load_platform(path, transform, clip_eps)
        if ids is None:
            ids = these
        elif these != ids:
            diff = next(i for i, (a, b) in enumerate(zip(ids, these))
                        if a != b) if len(these) == len(ids) else None
            where = (f"first difference at position {diff + 1}"
                     if diff is not None
                     else f"{len(these)} patients, expected {len(ids)}")
            raise ParseError(f"{path}: patient ids disagree with platform 1 "
                             f"({where})")
        platforms.append(matrix)
    outcomes = load_clinical(clinical_path, ids) if clinical_path else None
    return TransformedDataset(platforms=platforms, patient_ids=ids,
                              outcomes=outcomes)


_CLINICAL_FIELDS = ("patient_id", "time", "event")


def load_clinical(path, patient_ids) -> ClinicalOutcomes:
    """Read survival outcomes and align them to the platform patient
    order; the file may list patients in any order but must cover
    exactly the platform ids."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [s.strip() for s in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: file is empty") from None
        if sorted(header) != sorted(_CLINICAL_FIELDS):
            raise ParseError(f"{path}: header must consist of "
                             f"{', '.join(_CLINICAL_FIELDS)}")
        col = {name: header.index(name) for name in _CLINICAL_FIELDS}
        records: dict[str, tuple[float, int]] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ParseError(f"{path}: row {lineno} has {len(row)} "
                                 "fields, expected 3")
            pid = row[col["patient_id"]].strip()
            if pid in records:
                raise ParseError(f"{path}: duplicate patient id {pid!r} at "
                                 f"row {lineno}")
            try:
                time = float(row[col["time"]])
            except ValueError:
                raise ParseError(f"{path}: row {lineno}: could not parse "
                                 f"time {row[col['time']].strip()!r}") from None
            if not time > 0 or not np.isfinite(time):
                raise ParseError(f"{path}: row {lineno}: time must be "
                                 f"positive and finite, got {time!r}")
            event_raw = row[col["event"]].strip()
            if event_raw not in ("0", "1"):
                raise ParseError(f"{path}: row {lineno}: event must be 0 "
                                 f"or 1, got {event_raw!r}")
            records[pid] = (time, int(event_raw))
    unknown = set(records) - set(patient_ids)
    if unknown:
        raise ParseError(f"{path}: unknown patient id "
                         f"{sorted(unknown)[0]!r}")
    missing = [pid for pid in patient_ids if pid not in records]
    if missing:
        raise ParseError(f"{path}: no clinical row for patient "
                         f"{missing[0]!r}")
    times = np.array([records[pid][0] for pid in patient_ids])
    events = np.array([records[pid][1] for pid in patient_ids])
    return ClinicalOutcomes(observed_time=times, censor_indicator=events)


def write_platform(path, values, patient_ids, probe_names,
                   id_field: str = "patient_id") -> None:
    values = np.asarray(values)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([id_field, *probe_names])
        for pid, row in zip(patient_ids, values):
            writer.writerow([pid, *(_fmt(v) for v in row)])


def write_clinical(path, patient_ids, outcomes: ClinicalOutcomes) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CLINICAL_FIELDS)
        for pid, time, event in zip(patient_ids, outcomes.observed_time,
                                    outcomes.censor_indicator):
            writer.writerow([pid, _fmt(time), int(event)])


def write_allocation(path, items, alloc, item_field: str) -> None:
    """Write an allocation as (item, cluster) rows with 1-based labels."""
    alloc = np.asarray(alloc)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([item_field, "cluster"])
        for item, label in zip(items, alloc):
            writer.writerow([item, int(label) + 1])


def read_allocation(path) -> tuple[list[str], np.ndarray]:
    """Read an allocation CSV back to items and 0-based labels."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != 2 or header[1] != "cluster":
            raise ParseError(f"{path}: expected an (item, cluster) header")
        items = []
        labels = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ParseError(f"{path}: row {lineno} has {len(row)} "
                                 "fields, expected 2")
            items.append(row[0])
            try:
                labels.append(int(row[1]) - 1)
            except ValueError:
                raise ParseError(f"{path}: row {lineno}: could not parse "
                                 f"cluster {row[1]!r}") from None
    return items, np.array(labels, dtype=np.intp)


def write_matrix(path, values, row_labels, col_labels, corner: str = "") -> None:
    values = np.asarray(values)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([corner, *col_labels])
        for label, row in zip(row_labels, values):
            writer.writerow([label, *(_fmt(v) for v in row)])


def read_matrix(path) -> tuple[list[str], list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        col_labels = header[1:]
        row_labels = []
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}: row {lineno} has {len(row)} "
                                 f"fields, expected {len(header)}")
            row_labels.append(row[0])
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise ParseError(f"{path}: row {lineno}: non-numeric "
                                 "cell") from None
    return row_labels, col_labels, np.array(rows, dtype=np.float64)

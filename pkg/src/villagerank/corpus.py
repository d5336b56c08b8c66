"""Cohort data model and CSV ingestion for village manifests and county surveys."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

logger = logging.getLogger(__name__)

MANIFEST_FIELDS = ("id", "name", "province", "county", "image_ref")
SURVEY_FIELDS = ("county_id", "tem", "ter", "fin", "cinc", "vinc")


class CorpusError(ValueError):
    """Raised for malformed or inconsistent manifest/survey files."""


@dataclass(frozen=True)
class Item:
    """One village: the unit being ranked.

    ``latent_score`` is a simulation-only ground truth driving noisy judges;
    it is either present for every item in a cohort or for none.
    """

    id: str
    name: str
    province: str
    county: str
    image_ref: str
    latent_score: float | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("item id must be non-empty")


@dataclass(frozen=True)
class Cohort:
    """An ordered collection of items, as loaded from one manifest."""

    items: tuple[Item, ...]
    source: str = "<memory>"

    def __post_init__(self) -> None:
        seen: dict[str, int] = {}
        for i, item in enumerate(self.items):
            if item.id in seen:
                raise CorpusError(
                    f"duplicate item id {item.id!r} (items {seen[item.id]} and {i})"
                )
            seen[item.id] = i
        with_latent = [it for it in self.items if it.latent_score is not None]
        if with_latent and len(with_latent) != len(self.items):
            missing = next(it.id for it in self.items if it.latent_score is None)
            raise CorpusError(
                f"latent_score must be present for all items or none "
                f"(missing for {missing!r})"
            )

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[Item]:
        return iter(self.items)

    def ids(self) -> tuple[str, ...]:
        return tuple(item.id for item in self.items)

    def by_id(self) -> dict[str, Item]:
        return {item.id: item for item in self.items}

    @property
    def has_latent_scores(self) -> bool:
        return bool(self.items) and self.items[0].latent_score is not None


@dataclass(frozen=True)
class SurveyRow:
    """One county's covariates; blank optional cells load as ``None``.

    Units: ``fin``, ``cinc`` and ``vinc`` are in 10^4 yuan so that fitted
    coefficients are directly comparable across sites; ``tem`` is mean annual
    temperature in degrees Celsius and ``ter`` a unitless terrain index.
    """

    county_id: str
    tem: float
    ter: float | None = None
    fin: float | None = None
    cinc: float | None = None
    vinc: float | None = None
    livability: float | None = None

    def __post_init__(self) -> None:
        if not self.county_id:
            raise CorpusError("county_id must be non-empty")
        for name in ("tem", "ter", "fin", "cinc", "vinc", "livability"):
            value = getattr(self, name)
            if value is not None and not math.isfinite(value):
                raise CorpusError(f"{name} must be finite, got {value!r}")


def _content_lines(path: Path) -> Iterator[tuple[int, str]]:
    """Yield (1-based line number, line) skipping blanks and # comments."""
    with path.open("r", encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line


def _parse_csv_line(line: str) -> list[str]:
    return next(csv.reader([line]))


def _parse_float(cell: str, what: str, lineno: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise CorpusError(f"line {lineno}: non-numeric {what} {cell!r}") from None
    if not math.isfinite(value):
        raise CorpusError(f"line {lineno}: {what} must be finite, got {cell!r}")
    return value


def load_manifest(path: str | Path) -> Cohort:
    """Load a village manifest CSV into a :class:`Cohort`, order preserved.

    Expected header: ``id,name,province,county,image_ref[,latent_score]``.
    Comment lines starting with ``#`` and blank lines are ignored.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"manifest not found: {path}")

    lines = _content_lines(path)
    try:
        header_lineno, header_line = next(lines)
    except StopIteration:
        raise CorpusError(f"{path}: empty manifest") from None
    header = [h.strip() for h in _parse_csv_line(header_line)]
    has_latent = header == list(MANIFEST_FIELDS) + ["latent_score"]
    if not has_latent and header != list(MANIFEST_FIELDS):
        raise CorpusError(
            f"{path}: line {header_lineno}: unexpected header {header!r}"
        )
    ncols = len(MANIFEST_FIELDS) + (1 if has_latent else 0)

    items: list[Item] = []
    first_line: dict[str, int] = {}
    for lineno, line in lines:
        cells = _parse_csv_line(line)
        if len(cells) != ncols:
            raise CorpusError(
                f"{path}: line {lineno}: expected {ncols} columns, got {len(cells)}"
            )
        item_id = cells[0].strip()
        if not item_id:
            raise CorpusError(f"{path}: line {lineno}: empty item id")
        if item_id in first_line:
            raise CorpusError(
                f"{path}: duplicate id {item_id!r} "
                f"(lines {first_line[item_id]} and {lineno})"
            )
        first_line[item_id] = lineno
        latent: float | None = None
        if has_latent:
            cell = cells[5].strip()
            if cell:
                latent = _parse_float(cell, "latent_score", lineno)
        items.append(
            Item(
                id=item_id,
                name=cells[1].strip(),
                province=cells[2].strip(),
                county=cells[3].strip(),
                image_ref=cells[4].strip(),
                latent_score=latent,
            )
        )

    cohort = Cohort(items=tuple(items), source=str(path))
    logger.info("loaded %d items from %s", len(cohort), path)
    return cohort


def save_manifest(cohort: Cohort, path: str | Path) -> None:
    """Write a cohort back to manifest CSV; round-trips with load_manifest."""
    path = Path(path)
    with_latent = cohort.has_latent_scores
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        header = list(MANIFEST_FIELDS) + (["latent_score"] if with_latent else [])
        writer.writerow(header)
        for item in cohort:
            row = [item.id, item.name, item.province, item.county, item.image_ref]
            if with_latent:
                row.append(repr(item.latent_score))
            writer.writerow(row)


def load_survey(path: str | Path) -> list[SurveyRow]:
    """Load a county survey CSV.

    Expected header: ``county_id,tem,ter,fin,cinc,vinc[,livability]``.
    Blank cells in optional columns become ``None``; ``tem`` is required.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"survey not found: {path}")

    lines = _content_lines(path)
    try:
        header_lineno, header_line = next(lines)
    except StopIteration:
        raise CorpusError(f"{path}: empty survey file") from None
    header = [h.strip() for h in _parse_csv_line(header_line)]
    has_liv = header == list(SURVEY_FIELDS) + ["livability"]
    if not has_liv and header != list(SURVEY_FIELDS):
        raise CorpusError(f"{path}: line {header_lineno}: unexpected header {header!r}")
    ncols = len(SURVEY_FIELDS) + (1 if has_liv else 0)

    rows: list[SurveyRow] = []
    for lineno, line in lines:
        cells = _parse_csv_line(line)
        if len(cells) != ncols:
            raise CorpusError(
                f"{path}: line {lineno}: expected {ncols} columns, got {len(cells)}"
            )
        county_id = cells[0].strip()
        if not county_id:
            raise CorpusError(f"{path}: line {lineno}: empty county_id")
        tem_cell = cells[1].strip()
        if not tem_cell:
            raise CorpusError(f"{path}: line {lineno}: tem is required")
        tem = _parse_float(tem_cell, "tem", lineno)

        def optional(idx: int, name: str) -> float | None:
            cell = cells[idx].strip()
            return _parse_float(cell, name, lineno) if cell else None

        rows.append(
            SurveyRow(
                county_id=county_id,
                tem=tem,
                ter=optional(2, "ter"),
                fin=optional(3, "fin"),
                cinc=optional(4, "cinc"),
                vinc=optional(5, "vinc"),
                livability=optional(6, "livability") if has_liv else None,
            )
        )

    if not rows:
        raise CorpusError(f"{path}: survey has a header but no data rows")
    logger.info("loaded %d survey rows from %s", len(rows), path)
    return rows

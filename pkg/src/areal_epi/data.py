"""Count panels and region covariates: ingestion, validation, derived series."""
from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass
from os import PathLike
from typing import TextIO

import numpy as np

from .errors import (DataValidationError, MissingCell, NegativeCount,
                     NonConsecutiveDates, UnknownRegion)
from .graph import RegionSet, _frozen

log = logging.getLogger(__name__)

COUNT_HEADER = ["date", "region_id", "count"]
COVARIATE_HEADER = ["region_id", "pop_share", "over65"]


@dataclass(frozen=True)
class CountPanel:
    """Region x day matrix of daily new infections."""

    counts: np.ndarray
    days: tuple[dt.date, ...]
    regions: RegionSet

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != len(self.regions) or c.shape[1] != len(self.days):
            raise DataValidationError(
                f"counts shape {c.shape} does not match {len(self.regions)} regions x {len(self.days)} days")
        if c.shape[1] < 2:
            raise DataValidationError("a panel needs at least two days")
        if not np.all(np.equal(np.mod(c, 1), 0)):
            raise DataValidationError("counts must be integers")
        if (c < 0).any():
            r, t = np.argwhere(c < 0)[0]
            raise NegativeCount(f"negative count {c[r, t]} at region {self.regions.ids[r]}, "
                                f"date {self.days[t].isoformat()}")
        days = tuple(self.days)
        for a, b in zip(days, days[1:]):
            if (b - a).days != 1:
                raise NonConsecutiveDates(f"dates {a.isoformat()} -> {b.isoformat()} are not consecutive")
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "counts", _frozen(c.astype(np.int64)))

    @property
    def n_regions(self) -> int:
        return self.counts.shape[0]

    @property
    def n_days(self) -> int:
        return self.counts.shape[1]

    def head(self, n_days: int) -> "CountPanel":
        """The first ``n_days`` days (training window for a hold-out forecast)."""
        return CountPanel(self.counts[:, :n_days], self.days[:n_days], self.regions)

    def subset(self, ids) -> "CountPanel":
        idx = [self.regions.position(i) for i in ids]
        sub = RegionSet(tuple(self.regions.regions[i] for i in idx))
        return CountPanel(self.counts[idx], self.days, sub)


@dataclass(frozen=True)
class RegionCovariates:
    """Population share ``pop_share`` (offset) and over-65 proportion per region."""

    regions: RegionSet
    pop_share: np.ndarray
    over65: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.pop_share, dtype=float)
        a = np.asarray(self.over65, dtype=float)
        n = len(self.regions)
        if e.shape != (n,) or a.shape != (n,):
            raise DataValidationError("covariate vectors must have one entry per region")
        if not (e > 0).all():
            raise DataValidationError("pop_share must be strictly positive")
        if abs(e.sum() - 1.0) > 1e-9:
            raise DataValidationError(f"pop_share sums to {e.sum():.12g}, expected 1")
        if not ((a > 0) & (a < 1)).all():
            raise DataValidationError("over65 must lie strictly inside (0, 1)")
        object.__setattr__(self, "pop_share", _frozen(e))
        object.__setattr__(self, "over65", _frozen(a))


def _open(source, fn, **kw):
    if isinstance(source, (str, PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return fn(fh, **kw)
    return fn(source, **kw)


def _check_header(reader: csv.DictReader, expected: list[str], what: str) -> None:
    got = [f.strip() for f in (reader.fieldnames or [])]
    if got[: len(expected)] != expected:
        raise DataValidationError(f"{what} header must start with {','.join(expected)}; got {got}")


def ingest_counts(source: str | PathLike | TextIO, regions: RegionSet,
                  clip_negatives: bool = False) -> CountPanel:
    """Read a long-format ``date,region_id,count`` CSV into a dense panel.

    Every (region, day) cell between the first and last date must be present
    exactly once.  With ``clip_negatives`` negative counts (reporting
    revisions) are set to zero and each change is logged; otherwise they are
    rejected.
    """
    return _open(source, _ingest_counts, regions=regions, clip_negatives=clip_negatives)


def _ingest_counts(fh: TextIO, regions: RegionSet, clip_negatives: bool) -> CountPanel:
    reader = csv.DictReader(fh)
    _check_header(reader, COUNT_HEADER, "counts")
    cells: dict[tuple[int, dt.date], int] = {}
    for lineno, row in enumerate(reader, start=2):
        rid = row["region_id"].strip()
        try:
            day = dt.date.fromisoformat(row["date"].strip())
        except ValueError:
            raise DataValidationError(f"line {lineno}: bad date {row['date']!r}") from None
        try:
            value = int(row["count"].strip())
        except ValueError:
            raise DataValidationError(f"line {lineno}: non-integer count {row['count']!r}") from None
        if rid not in regions.index:
            raise UnknownRegion(f"line {lineno}: unknown region {rid!r} on {day.isoformat()}")
        if value < 0:
            if not clip_negatives:
                raise NegativeCount(f"line {lineno}: negative count {value} for region {rid} "
                                    f"on {day.isoformat()}")
            log.warning("clipped negative count %d to 0 for region %s on %s", value, rid, day)
            value = 0
        key = (regions.index[rid], day)
        if key in cells:
            raise DataValidationError(f"line {lineno}: duplicate cell region {rid}, date {day.isoformat()}")
        cells[key] = value
    if not cells:
        raise DataValidationError("counts file has no data rows")
    observed = sorted({d for _, d in cells})
    for a, b in zip(observed, observed[1:]):
        if (b - a).days != 1:
            raise NonConsecutiveDates(f"no data between {a.isoformat()} and {b.isoformat()}")
    counts = np.zeros((len(regions), len(observed)), dtype=np.int64)
    for t, day in enumerate(observed):
        for r, rid in enumerate(regions.ids):
            try:
                counts[r, t] = cells[(r, day)]
            except KeyError:
                raise MissingCell(f"missing count for region {rid} on {day.isoformat()}") from None
    return CountPanel(counts, tuple(observed), regions)


def write_counts(panel: CountPanel, dest: str | PathLike | TextIO) -> None:
    """Write a panel in the ingestion format (day-major, region order within day)."""
    if isinstance(dest, (str, PathLike)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            return write_counts(panel, fh)
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(COUNT_HEADER)
    ids = panel.regions.ids
    for t, day in enumerate(panel.days):
        iso = day.isoformat()
        for r, rid in enumerate(ids):
            w.writerow([iso, rid, int(panel.counts[r, t])])


def read_covariates(source: str | PathLike | TextIO,
                    regions: RegionSet | None = None) -> RegionCovariates:
    """Read ``region_id,pop_share,over65[,name]``.

    Without ``regions`` the file order defines the region set (and an optional
    ``name`` column supplies display names).
    """
    return _open(source, _read_covariates, regions=regions)


def _read_covariates(fh: TextIO, regions: RegionSet | None) -> RegionCovariates:
    reader = csv.DictReader(fh)
    _check_header(reader, COVARIATE_HEADER, "covariates")
    rows = {}
    order = []
    names = []
    for lineno, row in enumerate(reader, start=2):
        rid = row["region_id"].strip()
        if rid in rows:
            raise DataValidationError(f"line {lineno}: duplicate region {rid}")
        try:
            rows[rid] = (float(row["pop_share"]), float(row["over65"]))
        except ValueError:
            raise DataValidationError(f"line {lineno}: non-numeric covariate for region {rid}") from None
        order.append(rid)
        names.append((row.get("name") or rid).strip())
    if regions is None:
        regions = RegionSet.from_ids(order, names)
    missing = [i for i in regions.ids if i not in rows]
    if missing:
        raise DataValidationError(f"covariates missing for regions {missing}")
    extra = [i for i in rows if i not in regions.index]
    if extra:
        raise UnknownRegion(f"covariates for unknown regions {extra}")
    e = np.array([rows[i][0] for i in regions.ids])
    a = np.array([rows[i][1] for i in regions.ids])
    return RegionCovariates(regions, e, a)


def write_covariates(cov: RegionCovariates, dest: str | PathLike | TextIO) -> None:
    if isinstance(dest, (str, PathLike)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            return write_covariates(cov, fh)
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(COVARIATE_HEADER + ["name"])
    for (rid, name), e, a in zip(cov.regions.regions, cov.pop_share, cov.over65):
        w.writerow([rid, repr(float(e)), repr(float(a)), name])


def incidence(panel: CountPanel, cov: RegionCovariates) -> np.ndarray:
    """Per-capita daily incidence ``counts / pop_share`` (R x T)."""
    if panel.regions.ids != cov.regions.ids:
        raise DataValidationError("panel and covariates use different region sets")
    return panel.counts / cov.pop_share[:, None]


def aggregate_national(panel: CountPanel | np.ndarray) -> np.ndarray:
    """Daily national totals; accepts a panel or a bare R x T count matrix."""
    counts = panel.counts if isinstance(panel, CountPanel) else np.asarray(panel)
    if counts.ndim == 1:
        counts = counts[:, None]
    return counts.sum(axis=0)


@dataclass(frozen=True)
class PredictionFixture:
    """Published per-province observed and predicted counts for one day."""

    regions: RegionSet
    observed: np.ndarray
    predicted: np.ndarray
    day: dt.date


FIXTURE_DAY = dt.date(2020, 3, 18)


def load_prediction_fixture(source: str | PathLike | TextIO | None = None) -> PredictionFixture:
    """Read ``province,acronym,observed,predicted``; defaults to the bundled table."""
    if source is None:
        from importlib import resources
        source = str(resources.files("areal_epi") / "data" / "tables23.csv")
    return _open(source, _read_fixture)


def _read_fixture(fh: TextIO) -> PredictionFixture:
    reader = csv.DictReader(fh)
    _check_header(reader, ["province", "acronym", "observed", "predicted"], "fixture")
    ids, names, obs, pred = [], [], [], []
    for row in reader:
        ids.append(row["acronym"].strip())
        names.append(row["province"].strip())
        obs.append(int(row["observed"]))
        pred.append(float(row["predicted"]))
    return PredictionFixture(RegionSet.from_ids(ids, names), np.array(obs, dtype=np.int64),
                             np.array(pred), FIXTURE_DAY)

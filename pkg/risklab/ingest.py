"""
Load, validate, impute and standardize the combined county table.

Deutsch:
    Einlesen, Prüfen, Imputieren und Standardisieren der Landkreistabelle.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import DataError
from .models import (
    CLIMATE_ZONES,
    CSV_HEADER,
    IMPUTABLE_PERCENT_FIELDS,
    PERCENT_FIELDS,
    PREDICTOR_FIELDS,
    CountyRecord,
    FeatureTable,
    TargetRates,
)

log = logging.getLogger(__name__)

MISSING_TOKENS = {"", "NA"}
DEFAULT_CORRELATION_THRESHOLD = 0.7
UNIT_CORRELATION_SNAP = 1e-12
_MALFORMED = "\x00malformed:"


class IngestError(DataError):
    """Raised when the county table cannot be used. / Landkreistabelle unbrauchbar."""


@dataclass(frozen=True)
class Issue:
    line: int
    cause: str
    fips: str = ""
    severity: str = "rejected"

    def to_dict(self) -> Dict[str, Any]:
        return {"line": self.line, "cause": self.cause, "fips": self.fips, "severity": self.severity}

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "Issue":
        return cls(
            line=int(payload["line"]),
            cause=str(payload["cause"]),
            fips=str(payload.get("fips", "")),
            severity=str(payload.get("severity", "rejected")),
        )


@dataclass(frozen=True)
class ImputationEntry:
    fips: str
    field: str
    value: Any
    method: str
    source: str

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fips": self.fips,
            "field": self.field,
            "value": self.value,
            "method": self.method,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ImputationEntry":
        return cls(**{key: payload[key] for key in ("fips", "field", "value", "method", "source")})


@dataclass(frozen=True, eq=False)
class CorrelationScreenResult:
    """
    Greedy collinearity screen over a correlation matrix.

    ``dropped`` holds ``(column, reason_column, r)`` in drop order.
    """

    corr: np.ndarray
    column_names: Tuple[str, ...]
    kept: Tuple[str, ...]
    dropped: Tuple[Tuple[str, str, float], ...]
    threshold: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "corr": np.asarray(self.corr, dtype=np.float64).tolist(),
            "column_names": list(self.column_names),
            "kept": list(self.kept),
            "dropped": [[column, reason, float(r)] for column, reason, r in self.dropped],
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "CorrelationScreenResult":
        return cls(
            corr=np.asarray(payload["corr"], dtype=np.float64),
            column_names=tuple(payload["column_names"]),
            kept=tuple(payload["kept"]),
            dropped=tuple((str(a), str(b), float(r)) for a, b, r in payload["dropped"]),
            threshold=float(payload["threshold"]),
        )


@dataclass
class DatasetSummary:
    """
    Row counts, imputation counts and warnings of one ingest run.

    Deutsch:
        Zusammenfassung eines Ingest-Laufs.
    """

    n_rows: int
    n_accepted: int
    n_rejected: int
    imputation_counts: Dict[str, Dict[str, int]] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_rows": self.n_rows,
            "n_accepted": self.n_accepted,
            "n_rejected": self.n_rejected,
            "imputation_counts": {key: dict(value) for key, value in sorted(self.imputation_counts.items())},
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "DatasetSummary":
        return cls(
            n_rows=int(payload["n_rows"]),
            n_accepted=int(payload["n_accepted"]),
            n_rejected=int(payload["n_rejected"]),
            imputation_counts={key: dict(value) for key, value in payload.get("imputation_counts", {}).items()},
            warnings=list(payload.get("warnings", [])),
        )


def load_county_table(path: Path) -> Tuple[List[CountyRecord], List[Issue]]:
    """
    Parse the combined county CSV.

    Malformed rows and rows breaking a hard invariant are rejected into the issue log;
    a missing file, a wrong header or an empty data section raise :class:`IngestError`.

    Deutsch:
        Liest die kombinierte Landkreis-CSV und protokolliert verworfene Zeilen.
    """

    path = Path(path)
    if not path.is_file():
        raise IngestError(f"input file {path} not found")

    width = len(CSV_HEADER)

    def _flag_bad_line(fields: List[str]) -> List[str]:
        return [f"{_MALFORMED}{len(fields)}"] + [""] * (width - 1)

    try:
        frame = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            na_filter=False,
            skip_blank_lines=False,
            engine="python",
            encoding="utf-8",
            on_bad_lines=_flag_bad_line,
        )
    except pd.errors.EmptyDataError as exc:
        raise IngestError(f"{path}: empty file, expected header {','.join(CSV_HEADER)}") from exc
    except (UnicodeDecodeError, pd.errors.ParserError) as exc:
        raise IngestError(f"{path}: unreadable CSV ({exc})") from exc

    header = [str(name).strip() for name in frame.columns]
    if header != list(CSV_HEADER):
        for position, expected in enumerate(CSV_HEADER):
            found = header[position] if position < len(header) else "<none>"
            if found != expected:
                raise IngestError(
                    f"{path}: wrong header at column {position + 1}: expected {expected!r}, found {found!r}"
                )
        raise IngestError(f"{path}: wrong header: {len(header)} columns, expected {width}")
    if frame.empty:
        raise IngestError(f"{path}: no data rows")

    records: List[CountyRecord] = []
    issues: List[Issue] = []
    seen: Dict[str, int] = {}
    for offset, row in enumerate(frame.itertuples(index=False, name=None)):
        line = offset + 2
        cells = [
            "" if value is None or (isinstance(value, float) and math.isnan(value)) else str(value) for value in row
        ]
        if all(cell.strip() == "" for cell in cells):
            issues.append(Issue(line=line, cause="blank line", severity="skipped"))
            continue
        if cells[0].startswith(_MALFORMED):
            found = cells[0][len(_MALFORMED):]
            issues.append(Issue(line=line, cause=f"expected {width} fields, found {found}"))
            continue
        try:
            record, warnings = _parse_row(dict(zip(CSV_HEADER, cells)))
        except ValueError as exc:
            issues.append(Issue(line=line, cause=str(exc), fips=cells[0].strip()))
            continue
        if record.fips in seen:
            cause = f"duplicate fips (first on line {seen[record.fips]})"
            issues.append(Issue(line=line, cause=cause, fips=record.fips))
            continue
        seen[record.fips] = line
        for message in warnings:
            log.warning("line %d (%s): %s", line, record.fips, message)
            issues.append(Issue(line=line, cause=message, fips=record.fips, severity="warning"))
        records.append(record)

    rejected = [issue for issue in issues if issue.severity == "rejected"]
    if not records:
        first = rejected[0] if rejected else None
        detail = f"; first defect on line {first.line}: {first.cause}" if first else ""
        raise IngestError(f"{path}: no valid data rows{detail}")
    log.info("loaded %d county records from %s (%d rejected)", len(records), path, len(rejected))
    return records, issues


def _parse_row(row: Mapping[str, str]) -> Tuple[CountyRecord, List[str]]:
    warnings: List[str] = []
    fips = row["fips"].strip()
    if not fips.isdigit() or len(fips) > 5:
        raise ValueError(f"invalid fips {fips!r}")
    fips = fips.zfill(5)
    county_name = row["county"].strip()
    if not county_name:
        raise ValueError("missing county name")
    state = row["state"].strip().upper()
    if len(state) != 2 or not state.isalpha():
        raise ValueError(f"invalid state code {row['state']!r}")

    population = _required_int(row, "population")
    positive_cases = _required_int(row, "positive_cases")
    deaths = _required_int(row, "deaths")
    if population <= 0:
        raise ValueError("invariant population > 0 violated")
    if positive_cases < 0 or deaths < 0:
        raise ValueError("invariant counts >= 0 violated")
    if deaths > positive_cases:
        raise ValueError("invariant deaths ≤ cases violated")
    if positive_cases > population:
        raise ValueError("invariant cases ≤ population violated")

    longitude = _required_float(row, "longitude")
    latitude = _required_float(row, "latitude")
    if not -180.0 <= longitude <= 180.0:
        raise ValueError(f"longitude {longitude} out of range")
    if not -90.0 <= latitude <= 90.0:
        raise ValueError(f"latitude {latitude} out of range")
    icu_beds = _required_float(row, "icu_beds_per_10k")
    pop_density = _required_float(row, "pop_density")
    if icu_beds < 0:
        raise ValueError("icu_beds_per_10k must be >= 0")
    if pop_density < 0:
        raise ValueError("pop_density must be >= 0")

    percents: Dict[str, Optional[float]] = {"pct_rural": _required_float(row, "pct_rural")}
    for name in IMPUTABLE_PERCENT_FIELDS:
        percents[name] = _optional_float(row, name)
    for name in PERCENT_FIELDS:
        value = percents[name]
        if value is None:
            continue
        if not 0.0 <= value <= 100.0:
            raise ValueError(f"{name}={value} outside [0,100]")
        if 0.0 < value < 1.0:
            warnings.append(f"{name}={value} looks like a fraction; percent values are expected")

    zone_raw = row["climate_zone"].strip()
    climate_zone: Optional[str] = None
    if zone_raw not in MISSING_TOKENS:
        if zone_raw not in CLIMATE_ZONES:
            raise ValueError(f"unknown climate_zone {zone_raw!r}")
        climate_zone = zone_raw

    record = CountyRecord(
        fips=fips,
        county_name=county_name,
        state=state,
        population=population,
        positive_cases=positive_cases,
        deaths=deaths,
        longitude=longitude,
        latitude=latitude,
        pct_rural=float(percents["pct_rural"]),  # type: ignore[arg-type]
        climate_zone=climate_zone,
        icu_beds_per_10k=icu_beds,
        pct_smokers=percents["pct_smokers"],
        pct_obesity=percents["pct_obesity"],
        pct_uninsured=percents["pct_uninsured"],
        pct_diabetes=percents["pct_diabetes"],
        pct_elderly=percents["pct_elderly"],
        pct_nonwhite=percents["pct_nonwhite"],
        pct_poverty=percents["pct_poverty"],
        pop_density=pop_density,
    )
    return record, warnings


def _required_float(row: Mapping[str, str], name: str) -> float:
    value = _optional_float(row, name)
    if value is None:
        raise ValueError(f"missing value for {name}")
    return value


def _optional_float(row: Mapping[str, str], name: str) -> Optional[float]:
    raw = row[name].strip()
    if raw in MISSING_TOKENS:
        return None
    try:
        value = float(raw)
    except ValueError:
        raise ValueError(f"{name}: not a number ({raw!r})") from None
    if not math.isfinite(value):
        raise ValueError(f"{name}: non-finite value")
    return value


def _required_int(row: Mapping[str, str], name: str) -> int:
    value = _required_float(row, name)
    if not value.is_integer():
        raise ValueError(f"{name}: expected an integer count, found {row[name].strip()!r}")
    return int(value)


def impute_missing(records: Sequence[CountyRecord]) -> Tuple[List[CountyRecord], List[ImputationEntry]]:
    """
    Fill MISSING percent fields with the state mean and MISSING climate zones with the
    zone of the nearest same-state county.

    Fallbacks (dataset mean, dataset modal zone) are logged at WARNING. Only originally
    present values feed the statistics, so a second pass changes nothing.

    Deutsch:
        Ersetzt fehlende Werte durch Landesmittel bzw. die Klimazone des nächsten Nachbarn.
    """

    if not records:
        raise IngestError("no records to impute")
    for name in IMPUTABLE_PERCENT_FIELDS + ("climate_zone",):
        if all(getattr(record, name) is None for record in records):
            raise IngestError(f"field {name} is missing in every record; cannot impute")

    updates: Dict[int, Dict[str, Any]] = defaultdict(dict)
    entries: List[ImputationEntry] = []

    for name in IMPUTABLE_PERCENT_FIELDS:
        by_state: Dict[str, List[float]] = defaultdict(list)
        for record in records:
            value = getattr(record, name)
            if value is not None:
                by_state[record.state].append(value)
        present = [value for values in by_state.values() for value in values]
        dataset_mean = math.fsum(present) / len(present)
        for index, record in enumerate(records):
            if getattr(record, name) is not None:
                continue
            values = by_state.get(record.state)
            if values:
                value = math.fsum(values) / len(values)
                entries.append(ImputationEntry(record.fips, name, value, "state-mean", record.state))
            else:
                value = dataset_mean
                log.warning("%s: no %s value in state %s, using dataset mean %.6g", record.fips, name, record.state,
                            value)
                entries.append(ImputationEntry(record.fips, name, value, "dataset-fallback", "dataset"))
            updates[index][name] = value

    zoned = [record for record in records if record.climate_zone is not None]
    zone_counts = Counter(record.climate_zone for record in zoned)
    dataset_mode = min(zone_counts, key=lambda zone: (-zone_counts[zone], CLIMATE_ZONES.index(zone)))
    zoned_by_state: Dict[str, List[CountyRecord]] = defaultdict(list)
    for record in zoned:
        zoned_by_state[record.state].append(record)
    for index, record in enumerate(records):
        if record.climate_zone is not None:
            continue
        candidates = zoned_by_state.get(record.state)
        if candidates:
            nearest = min(
                candidates,
                key=lambda other: (
                    (other.latitude - record.latitude) ** 2 + (other.longitude - record.longitude) ** 2,
                    other.fips,
                ),
            )
            zone = nearest.climate_zone
            entries.append(ImputationEntry(record.fips, "climate_zone", zone, "nearest-neighbor", nearest.fips))
        else:
            zone = dataset_mode
            log.warning("%s: no climate zone known in state %s, using dataset mode %s", record.fips, record.state, zone)
            entries.append(ImputationEntry(record.fips, "climate_zone", zone, "dataset-fallback", "dataset"))
        updates[index]["climate_zone"] = zone

    imputed = [
        replace(record, **updates[index]) if index in updates else record for index, record in enumerate(records)
    ]
    log.info("imputed %d values across %d records", len(entries), len(updates))
    return imputed, entries


def compute_rates(record: CountyRecord) -> TargetRates:
    if record.population <= 0:
        raise IngestError(f"{record.fips}: population must be > 0")
    return TargetRates(
        positive_rate=record.positive_cases / record.population,
        death_rate=record.deaths / record.population,
    )


def rate_matrix(records: Sequence[CountyRecord]) -> np.ndarray:
    """n × 2 array of (positive_rate, death_rate)."""

    rates = [compute_rates(record) for record in records]
    return np.array([[item.positive_rate, item.death_rate] for item in rates], dtype=np.float64).reshape(-1, 2)


def build_predictor_table(
    records: Sequence[CountyRecord], climate_one_hot: bool = False
) -> Tuple[Tuple[str, ...], np.ndarray, Tuple[str, ...]]:
    """
    Assemble the raw predictor matrix in canonical column order.

    Climate zones become an ordinal 1..8 column, or eight indicator columns with
    ``climate_one_hot``.
    """

    names: List[str] = []
    for name in PREDICTOR_FIELDS:
        if name == "climate_zone" and climate_one_hot:
            names.extend(f"climate_{zone}" for zone in CLIMATE_ZONES)
        else:
            names.append(name)

    rows: List[List[float]] = []
    for record in records:
        missing = record.missing_fields()
        if missing:
            raise IngestError(f"{record.fips}: missing {', '.join(missing)}; impute before building predictors")
        row: List[float] = []
        for name in PREDICTOR_FIELDS:
            if name != "climate_zone":
                row.append(float(getattr(record, name)))
            elif climate_one_hot:
                row.extend(1.0 if record.climate_zone == zone else 0.0 for zone in CLIMATE_ZONES)
            else:
                row.append(float(CLIMATE_ZONES.index(str(record.climate_zone)) + 1))
        rows.append(row)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return tuple(names), values, tuple(record.fips for record in records)


def standardize_features(
    values: np.ndarray,
    column_names: Sequence[str],
    row_keys: Optional[Sequence[str]] = None,
) -> FeatureTable:
    """
    z-score every column with the sample standard deviation; constant columns are dropped.

    Deutsch:
        z-Standardisierung mit Stichproben-Standardabweichung; konstante Spalten entfallen.
    """

    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != len(column_names):
        raise IngestError("predictor matrix shape does not match the column names")
    n = values.shape[0]
    if n < 2:
        raise IngestError(f"need at least 2 rows to standardize, got {n}")
    if not np.isfinite(values).all():
        raise IngestError("predictor matrix contains missing or non-finite values")
    keys = tuple(row_keys) if row_keys is not None else tuple(str(index) for index in range(n))

    constant = np.ptp(values, axis=0) == 0
    dropped = tuple(name for name, flag in zip(column_names, constant) if flag)
    for name in dropped:
        log.warning("dropping zero-variance column %s", name)
    keep = ~constant
    if not keep.any():
        raise IngestError("every predictor column is constant")
    kept = values[:, keep]
    means = kept.mean(axis=0)
    sds = kept.std(axis=0, ddof=1)
    return FeatureTable(
        column_names=tuple(name for name, flag in zip(column_names, keep) if flag),
        values=(kept - means) / sds,
        col_means=means,
        col_sds=sds,
        row_keys=keys,
        dropped_constant=dropped,
    )


def correlation_matrix(table: FeatureTable) -> np.ndarray:
    """
    Pearson correlation matrix; symmetric with an exact unit diagonal.

    Entries within ``UNIT_CORRELATION_SNAP`` of ±1 are set to exactly ±1, so affine pairs
    report a perfect correlation.
    """

    if table.p == 1:
        return np.ones((1, 1))
    corr = np.corrcoef(table.values, rowvar=False)
    corr = np.clip((corr + corr.T) / 2.0, -1.0, 1.0)
    unit = np.abs(np.abs(corr) - 1.0) <= UNIT_CORRELATION_SNAP
    corr[unit] = np.sign(corr[unit])
    np.fill_diagonal(corr, 1.0)
    return corr


def screen_collinear(
    corr: np.ndarray,
    column_names: Sequence[str],
    threshold: float = DEFAULT_CORRELATION_THRESHOLD,
) -> CorrelationScreenResult:
    """
    Greedily drop one member of the most correlated pair until no kept pair exceeds
    ``threshold`` in absolute value.

    The member with the larger mean absolute correlation to the other remaining columns
    goes; ties drop the alphabetically later name.
    """

    corr = np.asarray(corr, dtype=np.float64)
    names = tuple(column_names)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1] or corr.shape[0] != len(names):
        raise IngestError("correlation matrix must be square and match the column names")
    remaining = list(range(len(names)))
    dropped: List[Tuple[str, str, float]] = []
    while len(remaining) > 1:
        sub = np.abs(corr[np.ix_(remaining, remaining)])
        np.fill_diagonal(sub, 0.0)
        flat = int(np.argmax(sub))
        i, j = divmod(flat, len(remaining))
        if sub[i, j] <= threshold:
            break
        size = len(remaining) - 1
        mean_i = sub[i].sum() / size
        mean_j = sub[j].sum() / size
        a, b = remaining[i], remaining[j]
        if mean_i > mean_j or (mean_i == mean_j and names[a] > names[b]):
            victim, reason = a, b
        else:
            victim, reason = b, a
        r = float(corr[victim, reason])
        log.info("dropping %s: |r|=%.3f with %s exceeds %.2f", names[victim], abs(r), names[reason], threshold)
        dropped.append((names[victim], names[reason], r))
        remaining.remove(victim)
    return CorrelationScreenResult(
        corr=corr,
        column_names=names,
        kept=tuple(names[index] for index in remaining),
        dropped=tuple(dropped),
        threshold=float(threshold),
    )


def summarize(
    n_rows: int,
    records: Sequence[CountyRecord],
    issues: Iterable[Issue],
    imputations: Iterable[ImputationEntry],
    dropped_constant: Sequence[str] = (),
) -> DatasetSummary:
    counts: Dict[str, Dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for entry in imputations:
        counts[entry.field][entry.method] += 1
    issue_list = list(issues)
    warnings = [
        f"line {issue.line} ({issue.fips}): {issue.cause}" for issue in issue_list if issue.severity == "warning"
    ]
    warnings.extend(f"dropped zero-variance column {name}" for name in dropped_constant)
    return DatasetSummary(
        n_rows=n_rows,
        n_accepted=len(records),
        n_rejected=sum(1 for issue in issue_list if issue.severity == "rejected"),
        imputation_counts={key: dict(value) for key, value in counts.items()},
        warnings=warnings,
    )

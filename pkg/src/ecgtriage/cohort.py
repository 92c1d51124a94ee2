"""Patient cohort: records, feature-set assembly, and descriptive statistics.

The cohort table is a comma-separated file with one header row. Columns, in
order: id, sex, age_years, bmi, prev_cs, prev_mi, prev_pci, prev_stroke, htn,
dm, outcome, the six standard interval measures, then the nine heterogeneity
measures. Booleans are 0/1, sex is F/M, outcome is positive/negative, feature
cells may be empty when extraction failed for that patient.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import stdtr

from .ecg_ingest import StandardEcgMeasures
from .errors import (
    DegenerateTable,
    DuplicateId,
    EmptyGroup,
    MissingFeature,
    SchemaError,
)
from .geh import GehMeasures

log = logging.getLogger(__name__)

STANDARD_COLUMNS = ("p_dur_ms", "pr_ms", "qrs_ms", "qt_ms", "qtc_ms", "rr_ms")
GEH_COLUMNS = GehMeasures.FIELD_ORDER
RISK_COLUMNS = ("sex_f", "age_years", "bmi", "prev_cs", "prev_mi", "prev_pci", "prev_stroke", "htn", "dm")
BOOL_COLUMNS = ("prev_cs", "prev_mi", "prev_pci", "prev_stroke", "htn", "dm")
COHORT_COLUMNS = (
    ("id", "sex", "age_years", "bmi") + BOOL_COLUMNS + ("outcome",)
    + STANDARD_COLUMNS + GEH_COLUMNS
)

# exact enumeration below this pooled size, normal approximation above
EXACT_RANK_TEST_MAX_N = 16


@dataclass(frozen=True)
class PatientRecord:
    id: str
    sex: str
    age_years: float
    bmi: float
    prev_cs: bool
    prev_mi: bool
    prev_pci: bool
    prev_stroke: bool
    htn: bool
    dm: bool
    outcome: str
    standard: StandardEcgMeasures | None = None
    geh: GehMeasures | None = None

    def __post_init__(self):
        if self.sex not in ("F", "M"):
            raise SchemaError(f"sex must be F or M, got {self.sex!r}")
        if self.outcome not in ("positive", "negative"):
            raise SchemaError(f"outcome must be positive or negative, got {self.outcome!r}")
        if not self.age_years > 0:
            raise SchemaError(f"age_years must be positive, got {self.age_years}")
        if not self.bmi > 0:
            raise SchemaError(f"bmi must be positive, got {self.bmi}")

    @property
    def label(self) -> int:
        return 1 if self.outcome == "positive" else 0

    def feature_value(self, column: str) -> float | None:
        if column == "sex_f":
            return 1.0 if self.sex == "F" else 0.0
        if column in ("age_years", "bmi"):
            return float(getattr(self, column))
        if column in BOOL_COLUMNS:
            return 1.0 if getattr(self, column) else 0.0
        if column in STANDARD_COLUMNS:
            if self.standard is None:
                return None
            value = getattr(self.standard, column)
            return None if value is None else float(value)
        if column in GEH_COLUMNS:
            if self.geh is None:
                return None
            return float(getattr(self.geh, column))
        raise KeyError(column)


@dataclass(frozen=True)
class ModelSpec:
    """One of the four feature sets: S, R, G or their union SRG."""

    label: str

    def __post_init__(self):
        if self.label not in ("S", "R", "G", "SRG"):
            raise SchemaError(f"unknown model label {self.label!r}")

    @property
    def features(self) -> tuple[str, ...]:
        if self.label == "S":
            return STANDARD_COLUMNS
        if self.label == "R":
            return RISK_COLUMNS
        if self.label == "G":
            return GEH_COLUMNS
        return STANDARD_COLUMNS + RISK_COLUMNS + GEH_COLUMNS


@dataclass(frozen=True)
class FeatureMatrix:
    X: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...]
    ids: tuple[str, ...]
    dropped_ids: tuple[str, ...] = ()

    def rows_for(self, ids) -> "FeatureMatrix":
        """Submatrix for the given patient ids (ids absent from the matrix are skipped)."""
        index = {pid: i for i, pid in enumerate(self.ids)}
        keep = [index[pid] for pid in ids if pid in index]
        return FeatureMatrix(
            X=self.X[keep],
            y=self.y[keep],
            columns=self.columns,
            ids=tuple(self.ids[i] for i in keep),
            dropped_ids=self.dropped_ids,
        )


def _parse_float_cell(cell: str, row: int, column: str) -> float | None:
    if cell == "":
        return None
    try:
        value = float(cell)
    except ValueError:
        raise SchemaError("non-numeric cell", row=row, column=column) from None
    if not math.isfinite(value):
        raise SchemaError("non-finite cell", row=row, column=column)
    return value


def _parse_bool_cell(cell: str, row: int, column: str) -> bool:
    if cell not in ("0", "1"):
        raise SchemaError("boolean cell must be 0 or 1", row=row, column=column)
    return cell == "1"


def load_cohort(path) -> list[PatientRecord]:
    """Read and validate a cohort table."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: empty cohort table")
    if tuple(rows[0]) != COHORT_COLUMNS:
        raise SchemaError(f"{path}: header does not match the cohort schema")

    records: list[PatientRecord] = []
    seen: set[str] = set()
    for i, cells in enumerate(rows[1:], start=1):
        if len(cells) != len(COHORT_COLUMNS):
            raise SchemaError("wrong column count", row=i)
        cell = dict(zip(COHORT_COLUMNS, cells))
        if cell["id"] == "":
            raise SchemaError("empty id", row=i, column="id")
        if cell["id"] in seen:
            raise DuplicateId(f"duplicate patient id {cell['id']!r} (row {i})")
        seen.add(cell["id"])

        def req(column):
            value = _parse_float_cell(cell[column], i, column)
            if value is None:
                raise SchemaError("required cell is empty", row=i, column=column)
            return value

        standard = None
        core = [_parse_float_cell(cell[c], i, c) for c in ("qrs_ms", "qt_ms", "qtc_ms", "rr_ms")]
        if all(v is not None for v in core):
            standard = StandardEcgMeasures(
                p_dur_ms=_parse_float_cell(cell["p_dur_ms"], i, "p_dur_ms"),
                pr_ms=_parse_float_cell(cell["pr_ms"], i, "pr_ms"),
                qrs_ms=core[0], qt_ms=core[1], qtc_ms=core[2], rr_ms=core[3],
            )
        geh = None
        geh_cells = [_parse_float_cell(cell[c], i, c) for c in GEH_COLUMNS]
        if all(v is not None for v in geh_cells):
            geh = GehMeasures(**dict(zip(GEH_COLUMNS, geh_cells)))

        try:
            record = PatientRecord(
                id=cell["id"],
                sex=cell["sex"],
                age_years=req("age_years"),
                bmi=req("bmi"),
                prev_cs=_parse_bool_cell(cell["prev_cs"], i, "prev_cs"),
                prev_mi=_parse_bool_cell(cell["prev_mi"], i, "prev_mi"),
                prev_pci=_parse_bool_cell(cell["prev_pci"], i, "prev_pci"),
                prev_stroke=_parse_bool_cell(cell["prev_stroke"], i, "prev_stroke"),
                htn=_parse_bool_cell(cell["htn"], i, "htn"),
                dm=_parse_bool_cell(cell["dm"], i, "dm"),
                outcome=cell["outcome"],
                standard=standard,
                geh=geh,
            )
        except SchemaError as exc:
            raise SchemaError(f"{exc} (row {i})") from None
        records.append(record)

    n_pos = sum(r.label for r in records)
    log.info("loaded %d patients (%d negative / %d positive) from %s",
             len(records), len(records) - n_pos, n_pos, path)
    return records


def _cell_str(value: float | None) -> str:
    if value is None:
        return ""
    return repr(float(value))


def save_cohort(records, path):
    """Write a cohort table in the canonical schema."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COHORT_COLUMNS)
        for r in records:
            row = [r.id, r.sex, _cell_str(r.age_years), _cell_str(r.bmi)]
            row += ["1" if getattr(r, c) else "0" for c in BOOL_COLUMNS]
            row.append(r.outcome)
            row += [_cell_str(r.feature_value(c)) for c in STANDARD_COLUMNS]
            row += [_cell_str(r.feature_value(c)) for c in GEH_COLUMNS]
            writer.writerow(row)


def assemble_features(cohort, spec: ModelSpec) -> FeatureMatrix:
    """Feature matrix for one model spec; patients missing any feature are dropped."""
    columns = spec.features
    kept_rows, kept_y, kept_ids, dropped = [], [], [], []
    for record in cohort:
        values = [record.feature_value(c) for c in columns]
        if any(v is None for v in values):
            dropped.append(record.id)
            continue
        kept_rows.append(values)
        kept_y.append(record.label)
        kept_ids.append(record.id)
    if dropped:
        log.info("model %s: dropped %d of %d patients with incomplete features",
                 spec.label, len(dropped), len(cohort))
    if not kept_rows:
        raise MissingFeature(f"no patient has complete features for model {spec.label}")
    return FeatureMatrix(
        X=np.asarray(kept_rows, dtype=float),
        y=np.asarray(kept_y, dtype=int),
        columns=columns,
        ids=tuple(kept_ids),
        dropped_ids=tuple(dropped),
    )


# --- hypothesis tests -------------------------------------------------------

class MannWhitneyResult(NamedTuple):
    u: float
    p: float


def _doubled_midranks(pooled: np.ndarray) -> np.ndarray:
    """2x the midrank of each pooled value; integer-valued so ties stay exact."""
    order = np.argsort(pooled, kind="stable")
    doubled = np.empty(len(pooled), dtype=np.int64)
    i = 0
    while i < len(pooled):
        j = i
        while j + 1 < len(pooled) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        # ranks i+1 .. j+1 share the midrank; doubled = (i+1) + (j+1)
        doubled[order[i:j + 1]] = (i + 1) + (j + 1)
        i = j + 1
    return doubled


def mann_whitney(group_a, group_b) -> MannWhitneyResult:
    """Rank-sum test. U counts pairs where a beats b, ties worth one half.

    Two-sided p: exact enumeration of group assignments when the pooled size
    is at most 16, otherwise the normal approximation with tie correction
    (no continuity correction).
    """
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise EmptyGroup("both groups must be non-empty")
    pooled = np.concatenate([a, b])
    doubled = _doubled_midranks(pooled)
    # 2*U_A = 2*sum(ranks of A) - n1*(n1+1)
    two_u = int(doubled[:n1].sum()) - n1 * (n1 + 1)
    u = two_u / 2.0

    n = n1 + n2
    if n <= EXACT_RANK_TEST_MAX_N:
        observed_dev = abs(two_u - n1 * n2)
        extreme = total = 0
        for combo in itertools.combinations(range(n), n1):
            two_u_perm = sum(int(doubled[k]) for k in combo) - n1 * (n1 + 1)
            total += 1
            if abs(two_u_perm - n1 * n2) >= observed_dev:
                extreme += 1
        return MannWhitneyResult(u, extreme / total)

    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(counts.astype(float) ** 3 - counts))
    variance = (n1 * n2 / 12.0) * ((n + 1) - tie_term / (n * (n - 1)))
    if variance <= 0:
        return MannWhitneyResult(u, 1.0)
    z = (u - n1 * n2 / 2.0) / math.sqrt(variance)
    return MannWhitneyResult(u, math.erfc(abs(z) / math.sqrt(2.0)))


def chi_square_2x2(table) -> tuple[float, float]:
    """Yates-corrected chi-square for a 2x2 count table, 1 degree of freedom."""
    t = np.asarray(table, dtype=float)
    if t.shape != (2, 2) or np.any(t < 0):
        raise DegenerateTable(f"need a 2x2 table of non-negative counts, got {table}")
    n = t.sum()
    rows, cols = t.sum(axis=1), t.sum(axis=0)
    if np.any(rows == 0) or np.any(cols == 0):
        raise DegenerateTable("a row or column of the 2x2 table is empty")
    expected = np.outer(rows, cols) / n
    adjusted = np.maximum(np.abs(t - expected) - 0.5, 0.0)
    stat = float(np.sum(adjusted ** 2 / expected))
    return stat, math.erfc(math.sqrt(stat / 2.0))


def fisher_exact_2x2(table) -> float:
    """Two-sided Fisher exact p for a 2x2 count table.

    Sums the probabilities of all tables (with the observed margins) that are
    no more probable than the observed one; exact integer arithmetic.
    """
    t = np.asarray(table, dtype=int)
    if t.shape != (2, 2) or np.any(t < 0):
        raise DegenerateTable(f"need a 2x2 table of non-negative counts, got {table}")
    r1, r2 = int(t[0].sum()), int(t[1].sum())
    c1 = int(t[:, 0].sum())
    n = r1 + r2
    if r1 == 0 or r2 == 0 or c1 == 0 or c1 == n:
        raise DegenerateTable("a row or column of the 2x2 table is empty")
    observed = math.comb(r1, int(t[0, 0])) * math.comb(r2, int(t[1, 0]))
    numerator = 0
    for a in range(max(0, c1 - r2), min(r1, c1) + 1):
        weight = math.comb(r1, a) * math.comb(r2, c1 - a)
        if weight <= observed:
            numerator += weight
    return numerator / math.comb(n, c1)


def welch_t(group_a, group_b) -> tuple[float, float]:
    """Welch's unequal-variance t-test, two-sided."""
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise EmptyGroup("welch_t needs at least two values per group")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    if va + vb == 0:
        return 0.0, 1.0
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    return float(t), float(2.0 * stdtr(df, -abs(t)))


# --- table one --------------------------------------------------------------

def _format_p(p: float | None) -> str:
    if p is None:
        return "NA"
    if p < 0.001:
        return "<0.001"
    return f"{p:.3f}"


def _median_iqr(values) -> str:
    q1, med, q3 = np.percentile(values, [25, 50, 75])
    return f"{med:.1f} [{q1:.1f}, {q3:.1f}]"


def _mean_sd(values) -> str:
    v = np.asarray(values, dtype=float)
    return f"{v.mean():.1f} ({v.std(ddof=1):.1f})" if len(v) > 1 else f"{v.mean():.1f} (0.0)"


class _Variable(NamedTuple):
    name: str
    section: str
    column: str
    kind: str  # categorical | median_iqr | mean_sd


TABLE_ONE_VARIABLES = (
    _Variable("Sex = F", "Demographics", "sex_f", "categorical"),
    _Variable("Age, y", "Demographics", "age_years", "median_iqr"),
    _Variable("BMI, kg/m2", "Demographics", "bmi", "median_iqr"),
    _Variable("Previous cardiac surgery", "Risk factors", "prev_cs", "categorical"),
    _Variable("Previous MI", "Risk factors", "prev_mi", "categorical"),
    _Variable("Previous PCI", "Risk factors", "prev_pci", "categorical"),
    _Variable("Previous stroke", "Risk factors", "prev_stroke", "categorical"),
    _Variable("Hypertension", "Risk factors", "htn", "categorical"),
    _Variable("Diabetes", "Risk factors", "dm", "categorical"),
    _Variable("P-wave interval, ms", "Standard ECG parameters", "p_dur_ms", "median_iqr"),
    _Variable("PR segment interval, ms", "Standard ECG parameters", "pr_ms", "median_iqr"),
    _Variable("QRS interval, ms", "Standard ECG parameters", "qrs_ms", "median_iqr"),
    _Variable("QT interval, ms", "Standard ECG parameters", "qt_ms", "median_iqr"),
    _Variable("Corrected QTi, ms", "Standard ECG parameters", "qtc_ms", "mean_sd"),
    _Variable("RR interval, ms", "Standard ECG parameters", "rr_ms", "median_iqr"),
    _Variable("Peak QRST angle, deg", "GEH parameters", "peak_qrst_angle_deg", "median_iqr"),
    _Variable("Area QRST angle, deg", "GEH parameters", "area_qrst_angle_deg", "median_iqr"),
    _Variable("Peak SVG azimuth, deg", "GEH parameters", "peak_svg_azimuth_deg", "median_iqr"),
    _Variable("Area SVG azimuth, deg", "GEH parameters", "area_svg_azimuth_deg", "median_iqr"),
    _Variable("Peak SVG elevation, deg", "GEH parameters", "peak_svg_elevation_deg", "median_iqr"),
    _Variable("Area SVG elevation, deg", "GEH parameters", "area_svg_elevation_deg", "median_iqr"),
    _Variable("Peak SVG, mV", "GEH parameters", "peak_svg_mv", "median_iqr"),
    _Variable("VmQTI, mV*ms", "GEH parameters", "vm_qti_mvms", "median_iqr"),
    _Variable("SVG, mV*ms", "GEH parameters", "svg_mvms", "median_iqr"),
)


def _categorical_p(neg, pos) -> float | None:
    if not neg or not pos:
        return None
    table = np.array([
        [sum(1 for v in neg if v == 1.0), sum(1 for v in neg if v == 0.0)],
        [sum(1 for v in pos if v == 1.0), sum(1 for v in pos if v == 0.0)],
    ])
    n = table.sum()
    expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / n
    try:
        if np.any(expected < 5):
            return fisher_exact_2x2(table)
        return chi_square_2x2(table)[1]
    except DegenerateTable:
        return None


def summarize_table_one(cohort) -> dict:
    """Descriptive statistics by outcome with a test per variable.

    Categorical variables use Yates chi-square (Fisher exact when any expected
    cell is below 5), the normally-shaped corrected QT uses Welch's t-test and
    every other continuous variable uses the rank-sum test. Patients missing a
    variable are excluded from that row only.
    """
    neg = [r for r in cohort if r.label == 0]
    pos = [r for r in cohort if r.label == 1]

    rows = [{
        "variable": "N", "section": "",
        "total": str(len(cohort)), "negative": str(len(neg)), "positive": str(len(pos)),
        "p_value": "",
    }]

    for var in TABLE_ONE_VARIABLES:
        groups = {}
        for key, subset in (("total", cohort), ("negative", neg), ("positive", pos)):
            groups[key] = [v for v in (r.feature_value(var.column) for r in subset) if v is not None]
        cells = {}
        for key, values in groups.items():
            if not values:
                cells[key] = "NA"
            elif var.kind == "categorical":
                k = sum(1 for v in values if v == 1.0)
                cells[key] = f"{k} ({100.0 * k / len(values):.1f})"
            elif var.kind == "mean_sd":
                cells[key] = _mean_sd(values)
            else:
                cells[key] = _median_iqr(values)

        p: float | None = None
        if groups["negative"] and groups["positive"]:
            if var.kind == "categorical":
                p = _categorical_p(groups["negative"], groups["positive"])
            elif var.kind == "mean_sd":
                try:
                    p = welch_t(groups["negative"], groups["positive"])[1]
                except EmptyGroup:
                    p = None
            else:
                p = mann_whitney(groups["negative"], groups["positive"]).p

        rows.append({
            "variable": var.name, "section": var.section,
            "total": cells["total"], "negative": cells["negative"], "positive": cells["positive"],
            "p_value": _format_p(p),
        })

    return {
        "format": "table-one/1",
        "groups": {"total": len(cohort), "negative": len(neg), "positive": len(pos)},
        "rows": rows,
    }

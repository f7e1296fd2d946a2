"""Acceptance dashboard over stored result tables."""

import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import singer

from conelab import config as run_config
from conelab.computation import Output, Row
from conelab.geometry_core import ConeParams
from conelab.link_smoothing import LinkSolveError, fit_h_exponent
from conelab.results import ResultTable

logger = singer.get_logger()

SERIES_A1 = 7 / 8
RK4_ORDER = (3.8, 4.2)
B_AGREEMENT = 0.02
B_WINDOW_DRIFT = 0.01
SPECTRUM_ANCHOR = [-2.0, 0.0, 1.0]
H_EXPONENT = 4 / 3
H_EXPONENT_TOL = 0.07
H_DELTA_RANGE = (1e-3, 3e-2)
H_MIN_POINTS = 6
CONVEXITY_TOL = 1e-10
DEGREE_ONE_TOL = 1e-8
PHI_JACOBI_TOL = 1e-8
MOMENT_ANCHOR = 1e-4
MOMENT_TOL = 0.2
CANCELLATION_ORDER = 1.8
MONOTONICITY_RANGE = (1e-3, 1e-2)
MONOTONICITY_SPREAD = 4.0

Criterion = Callable[[List[Tuple[ResultTable, Row]]], List[Row]]


def source_of(table: ResultTable) -> str:
    return "{}:{}".format(table.command, table.config_hash[:12])


def criterion_row(
    name: str,
    passed: bool,
    value: Optional[float],
    sources: Sequence[str],
    ci: Tuple[Optional[float], Optional[float]] = (None, None),
) -> Row:
    return {
        "criterion": name,
        "passed": bool(passed),
        "value": value,
        "ci_lo": ci[0],
        "ci_hi": ci[1],
        "source": " ".join(sorted(set(sources))),
    }


def on_simons_cone(table: ResultTable) -> bool:
    return run_config.parse_pq(table.parameters.get("pq", "3,3")) == ConeParams()


def _quantity(
    entries: List[Tuple[ResultTable, Row]], quantity: str, method: Optional[str] = None
) -> List[Tuple[ResultTable, Row]]:
    return [
        (table, row)
        for table, row in entries
        if row["quantity"] == quantity and (method is None or row["method"] == method)
    ]


def hardt_simon_criteria(entries: List[Tuple[ResultTable, Row]]) -> List[Row]:
    entries = [(table, row) for table, row in entries if on_simons_cone(table)]
    out: List[Row] = []

    for table, row in _quantity(entries, "a1"):
        value = row["value"]
        passed = value == SERIES_A1
        out.append(criterion_row("series_anchor", passed, value, [source_of(table)]))

    for table, row in _quantity(entries, "richardson_order"):
        value = row["value"]
        passed = RK4_ORDER[0] <= value <= RK4_ORDER[1]
        out.append(criterion_row("rk4_order", passed, value, [source_of(table)]))

    for table, row in _quantity(entries, "line_gap_min"):
        increasing = _quantity([(table, r) for r in table.rows], "line_gap_increasing")
        passed = row["value"] > 0 and all(r["value"] >= 0 for _, r in increasing)
        out.append(
            criterion_row("subsolution_law", passed, row["value"], [source_of(table)])
        )

    by_table: Dict[str, Dict[str, float]] = {}
    for table, row in _quantity(entries, "b"):
        by_table.setdefault(table.config_hash, {})[row["method"]] = row["value"]
    for table, _ in entries:
        fits = by_table.pop(table.config_hash, None)
        if not fits or len(fits) < 2:
            continue
        direct, graph = fits["w-asymptotics"], fits["graph-fit"]
        gap = abs(direct - graph) / abs(direct)
        passed = direct < 0 and graph < 0 and gap <= B_AGREEMENT
        out.append(criterion_row("b_agreement", passed, gap, [source_of(table)]))

    for table, row in _quantity(entries, "b_window_drift"):
        value = row["value"]
        out.append(
            criterion_row(
                "b_window_stability", value <= B_WINDOW_DRIFT, value, [source_of(table)]
            )
        )

    return out


def spectrum_criteria(entries: List[Tuple[ResultTable, Row]]) -> List[Row]:
    out: List[Row] = []
    tables = {
        table.config_hash: table for table, _ in entries if on_simons_cone(table)
    }
    for table in tables.values():
        lowest = sorted(table.rows, key=lambda row: row["lambda"])[:3]
        mu_plus = [row["mu_plus"] for row in lowest]
        out.append(
            criterion_row(
                "spectrum_anchor",
                mu_plus == SPECTRUM_ANCHOR,
                mu_plus[0] if mu_plus else None,
                [source_of(table)],
            )
        )
        for check in table.series.get("phi_jacobi", []):
            value = check["max_scaled_residual"]
            out.append(
                criterion_row(
                    "phi_jacobi_residual",
                    value <= PHI_JACOBI_TOL,
                    value,
                    [source_of(table)],
                )
            )
    return out


def h_scaling_points(entries: List[Tuple[ResultTable, Row]]) -> List[Row]:
    points: Dict[float, Row] = {}
    for _, row in entries:
        if row["h"] != 0 and row["delta"] != 0:
            points[row["delta"]] = row
    return [points[delta] for delta in sorted(points)]


def moment_points(entries: List[Tuple[ResultTable, Row]]) -> Dict[float, float]:
    """|delta| to the recovered moment constant over its expected value."""
    points: Dict[float, float] = {}
    for table, row in entries:
        if row.get("moment_ratio") is not None:
            points[abs(row["delta"])] = row["moment_ratio"]
        for check in table.series.get("moment_check", []):
            points[abs(check["delta"])] = check["constant"] / check["expected"]
    return points


def moment_criterion(entries: List[Tuple[ResultTable, Row]]) -> List[Row]:
    points = moment_points(entries)
    if not points:
        return []

    sources = [source_of(table) for table, _ in entries]
    anchor = min(points, key=lambda delta: abs(math.log(delta / MOMENT_ANCHOR)))
    # the gap to the expected constant closes as delta decreases
    gaps = [abs(points[delta] - 1) for delta in sorted(points, reverse=True)]
    drifting = all(later < earlier for earlier, later in zip(gaps, gaps[1:]))
    passed = abs(points[anchor] - 1) <= MOMENT_TOL and drifting
    ratios = list(points.values())
    return [
        criterion_row(
            "moment_constant",
            passed,
            points[anchor],
            sources,
            (min(ratios), max(ratios)),
        )
    ]


def smooth_link_criteria(entries: List[Tuple[ResultTable, Row]]) -> List[Row]:
    return [h_scaling_criterion(entries)] + moment_criterion(entries)


def h_scaling_criterion(entries: List[Tuple[ResultTable, Row]]) -> Row:
    lo, hi = H_DELTA_RANGE
    # the fit runs over the whole sweep below hi; the range only counts points
    points = [row for row in h_scaling_points(entries) if 0 < row["delta"] <= hi]
    in_range = [row for row in points if row["delta"] >= lo]
    sources = [source_of(table) for table, _ in entries]
    if len(points) < 4:
        logger.warning("h fit skipped: [%s] points below [%s]", len(points), hi)
        return criterion_row("h_scaling", False, None, sources)

    try:
        fit = fit_h_exponent(
            [row["delta"] for row in points], [row["h"] for row in points]
        )
    except LinkSolveError as error:
        logger.warning("h fit failed: %s", error)
        return criterion_row("h_scaling", False, None, sources)

    passed = (
        len(in_range) >= H_MIN_POINTS
        and abs(fit.exponent - H_EXPONENT) <= H_EXPONENT_TOL
        and all(row["h"] < 0 for row in points)
    )
    return criterion_row("h_scaling", passed, fit.exponent, sources, fit.confidence)


def log_cone_criteria(entries: List[Tuple[ResultTable, Row]]) -> List[Row]:
    out: List[Row] = []
    for table, row in entries:
        matches = row.get("c_log_matches")
        source = source_of(table)
        if matches:
            source = "{} matches {}".format(source, matches)
        out.append(
            criterion_row("log_constant", bool(matches), row["c_log_cone"], [source])
        )

    sources = [source_of(table) for table, _ in entries]
    lo, hi = MONOTONICITY_RANGE
    ratios = [
        row["monotonicity_ratio"]
        for _, row in entries
        if row["h"] != 0 and lo <= abs(row["delta"]) <= hi
    ]
    if ratios:
        # the integral stays within a fixed bracket [c, C] across delta
        bracketed = (
            len(ratios) >= 2
            and min(ratios) > 0
            and max(ratios) <= MONOTONICITY_SPREAD * min(ratios)
        )
        out.append(
            criterion_row(
                "monotonicity_bracket",
                bracketed,
                min(ratios),
                sources,
                (min(ratios), max(ratios)),
            )
        )

    orders = [
        row["cancellation_order"]
        for _, row in entries
        if row.get("cancellation_order") is not None
    ]
    if orders:
        out.append(
            criterion_row(
                "log_cancellation",
                min(orders) >= CANCELLATION_ORDER,
                min(orders),
                sources,
                (min(orders), max(orders)),
            )
        )
    return out


def barrier_criteria(entries: List[Tuple[ResultTable, Row]]) -> List[Row]:
    out: List[Row] = []
    for which in ("X", "G"):
        chosen = [(table, row) for table, row in entries if row["which"] == which]
        if not chosen:
            continue
        out.append(
            criterion_row(
                "barrier_{}_negative".format(which),
                all(row["valid"] for _, row in chosen),
                max(row["min_margin"] for _, row in chosen),
                [source_of(table) for table, _ in chosen],
            )
        )

    laws: Dict[str, List[Tuple[str, Row]]] = {}
    tables = {table.config_hash: table for table, _ in entries}
    for table in tables.values():
        for law in table.series.get("foliation_laws", []):
            laws.setdefault(law["law"], []).append((source_of(table), law))
    if laws:
        failed = [
            name
            for name, checks in laws.items()
            if not all(law["passed"] for _, law in checks)
        ]
        if failed:
            logger.warning("foliation laws failed: [%s]", ", ".join(sorted(failed)))
        out.append(
            criterion_row(
                "foliation_laws",
                not failed,
                float(len(laws) - len(failed)),
                [source for checks in laws.values() for source, _ in checks],
            )
        )
    return out


def three_annulus_criteria(entries: List[Tuple[ResultTable, Row]]) -> List[Row]:
    out: List[Row] = []
    for table, row in entries:
        sources = [source_of(table)]
        out.append(
            criterion_row(
                "three_annulus", row["violations"] == 0, row["violations"], sources
            )
        )
        out.append(
            criterion_row(
                "log_mass_convexity",
                row["min_second_difference"] >= -CONVEXITY_TOL,
                row["min_second_difference"],
                sources,
            )
        )
        out.append(
            criterion_row(
                "degree_one_constancy",
                row["degree_one_spread"] < DEGREE_ONE_TOL,
                row["degree_one_spread"],
                sources,
            )
        )
    return out


CRITERIA: Dict[str, Criterion] = {
    "hardt-simon": hardt_simon_criteria,
    "spectrum": spectrum_criteria,
    "smooth-link": smooth_link_criteria,
    "log-cone": log_cone_criteria,
    "barriers": barrier_criteria,
    "three-annulus": three_annulus_criteria,
}


def build_report(tables: Sequence[ResultTable]) -> Output:
    if not tables:
        raise run_config.ConfigError("report needs at least one result table")

    entries: Dict[str, List[Tuple[ResultTable, Row]]] = {}
    for table in tables:
        for row in table.rows:
            entries.setdefault(table.command, []).append((table, row))

    rows: List[Row] = []
    for command, criterion in CRITERIA.items():
        if command in entries:
            rows.extend(criterion(entries[command]))

    versions = sorted({table.provenance.code_version for table in tables})
    flags = {"mixed_code_versions": len(versions) > 1}
    if flags["mixed_code_versions"]:
        logger.warning("report mixes code versions [%s]", ", ".join(versions))

    series: Dict[str, List[Row]] = {}
    points = h_scaling_points(entries.get("smooth-link", []))
    if points:
        series["h_scaling"] = [
            {
                "delta": row["delta"],
                "h": row["h"],
                "log_delta": math.log(abs(row["delta"])),
                "log_abs_h": math.log(abs(row["h"])),
            }
            for row in points
        ]

    passed = sum(1 for row in rows if row["passed"])
    logger.info("report: [%s] of [%s] criteria passed", passed, len(rows))

    return Output(rows=rows, flags=flags, series=series)

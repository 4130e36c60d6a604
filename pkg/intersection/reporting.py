"""
CSV reporting for the intersection simulator
Every file opens with a ``# schema: <name>/v1`` comment line
"""

import csv
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from intersection.coordinator import EventLog, thinning_stats
from intersection.model import LANES

logger = logging.getLogger(__name__)

VEHICLE_COLUMNS = [
    "id", "lane", "t_arrival_s", "diverted", "schedule_time_s",
    "crossing_time_s", "exit_time_s", "delay_s", "wait_s",
]

SUMMARY_COLUMNS = [
    "lane", "arrivals", "served", "diverted",
    "mean_delay_s", "median_delay_s",
    "arrival_intensity_per_s", "served_intensity_per_s", "theta_intensity_per_s", "theta_fraction",
    "collision_checks", "collision_failures",
    "truncation_violations", "membership_violations", "regularity_violations",
    "delay_bound_violations", "red_entries",
    "s_s", "r_s", "l_star_m", "seed", "config_hash",
]

TRAJECTORY_COLUMNS = ["id", "lane", "t_s", "x_m", "v_mps"]

SWEEP_COLUMNS = [
    "axis", "value", "seed", "mean_delay_s", "theta_fraction", "theta_intensity_per_s",
    "served_intensity_per_s", "polling_mean_wait_s", "baseline_mean_delay_s", "delay_ratio",
    "collisions", "conjecture_delay_le_polling_wait",
]


def format_value(value: Any) -> str:
    """Stable text for a CSV cell; NaN and None become empty cells"""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return ""
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(float(value), ".10g")
    return str(value)


def write_csv(path: Path, schema: str, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        handle.write(f"# schema: {schema}/v1\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(column)) for column in columns])
    logger.debug(f"wrote {path}")
    return path


def vehicle_rows(log: EventLog) -> List[Dict[str, Any]]:
    return [
        {
            "id": r.id,
            "lane": int(r.lane),
            "t_arrival_s": r.t_arrival,
            "diverted": r.diverted,
            "schedule_time_s": r.schedule_time,
            "crossing_time_s": r.crossing_time,
            "exit_time_s": r.exit_time,
            "delay_s": r.delay,
            "wait_s": r.wait,
        }
        for r in log.records
    ]


def summary_rows(log: EventLog, config_hash: str) -> List[Dict[str, Any]]:
    stats = thinning_stats(log)
    p = log.params
    shared = {
        "collision_checks": log.collision_checks,
        "collision_failures": log.collision_failures,
        "truncation_violations": log.truncation_violations,
        "membership_violations": log.membership_violations,
        "regularity_violations": log.regularity_violations,
        "delay_bound_violations": log.delay_bound_violations,
        "red_entries": log.red_entries,
        "s_s": p.service_time,
        "r_s": p.switchover_time,
        "l_star_m": p.l_star,
        "seed": log.seed,
        "config_hash": config_hash,
    }

    def row(label: str, lane=None) -> Dict[str, Any]:
        delays = log.delays(lane)
        arrivals = len(log.lane_records(lane))
        diverted = len(log.diverted(lane))
        if lane is None:
            arrival_rate, served_rate, theta_rate = stats.total_arrivals, stats.total_served, stats.total_theta
        else:
            arrival_rate, served_rate, theta_rate = stats.arrivals[lane], stats.served[lane], stats.theta[lane]
        return {
            "lane": label,
            "arrivals": arrivals,
            "served": arrivals - diverted,
            "diverted": diverted,
            "mean_delay_s": float(delays.mean()) if delays.size else 0.0,
            "median_delay_s": float(np.median(delays)) if delays.size else 0.0,
            "arrival_intensity_per_s": arrival_rate,
            "served_intensity_per_s": served_rate,
            "theta_intensity_per_s": theta_rate,
            "theta_fraction": diverted / arrivals if arrivals else 0.0,
            **shared,
        }

    return [row(str(int(lane)), lane) for lane in LANES] + [row("total")]


def trajectory_rows(log: EventLog, sample_dt: float) -> List[Dict[str, Any]]:
    rows = []
    for record in log.accepted():
        if not record.segments:
            continue
        count = int(math.floor((record.exit_time - record.t_arrival) / sample_dt + 1e-9)) + 1
        times = record.t_arrival + sample_dt * np.arange(count)
        positions, velocities = record.realized(times)
        for t, x, v in zip(times, positions, velocities):
            rows.append({"id": record.id, "lane": int(record.lane), "t_s": t, "x_m": x, "v_mps": v})
    return rows


def write_run(out_dir: Path, log: EventLog, config_hash: str,
              trajectories: bool = False, sample_dt: float = 0.1) -> List[Path]:
    """vehicles.csv and summary.csv, plus trajectories.csv when requested"""
    out_dir = Path(out_dir)
    paths = [
        write_csv(out_dir / "vehicles.csv", "vehicles", VEHICLE_COLUMNS, vehicle_rows(log)),
        write_csv(out_dir / "summary.csv", "summary", SUMMARY_COLUMNS, summary_rows(log, config_hash)),
    ]
    if trajectories:
        paths.append(write_csv(out_dir / "trajectories.csv", "trajectories", TRAJECTORY_COLUMNS,
                               trajectory_rows(log, sample_dt)))
    return paths


def write_sweep(out_dir: Path, rows: Sequence[Dict[str, Any]], name: str = "sweep.csv") -> Path:
    return write_csv(Path(out_dir) / name, "sweep", SWEEP_COLUMNS, rows)


def read_rows(path: Path) -> List[Dict[str, str]]:
    """Rows of a CSV written by this module, schema line skipped"""
    with Path(path).open(newline="", encoding="utf-8") as handle:
        lines = [line for line in handle if not line.startswith("#")]
    return list(csv.DictReader(lines))


def schema_of(path: Path) -> Optional[str]:
    with Path(path).open(encoding="utf-8") as handle:
        first = handle.readline().strip()
    prefix = "# schema: "
    return first[len(prefix):] if first.startswith(prefix) else None

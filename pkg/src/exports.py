# src/exports.py
#
# File outputs. Nothing time-dependent is written, so repeated runs of the
# same configuration produce byte-identical files.

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .models import ObservationSet


logger = logging.getLogger(__name__)


def fmt(x: Any) -> str:
    """Round-trippable text for numbers; empty cell for None."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _prepare(path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_csv(
    path: Path,
    columns: Sequence[str],
    rows: Iterable[Sequence[Any]],
    header: Optional[Dict[str, Any]] = None,
) -> Path:
    """CSV preceded by '# key=value' comment lines (sorted keys)."""
    path = _prepare(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for key in sorted(header or {}):
            value = header[key]
            if isinstance(value, (list, tuple)):
                value = ",".join(fmt(v) for v in value)
            f.write(f"# {key}={fmt(value)}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    logger.info("[CLI] wrote %s", path)
    return path


def read_csv_header(path: Path) -> Dict[str, str]:
    """The '# key=value' lines of a file written by write_csv."""
    out: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].rstrip("\n").partition("=")
            out[key] = value
    return out


# -------------------------------------------------------
# FRAGMENT DUMPS
# -------------------------------------------------------

def write_observation_jsonl(obs: ObservationSet, path: Path) -> Path:
    """Header line with eps, sigma, gamma0, seed, mass_defect; then one record per frozen fragment."""
    path = _prepare(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"header": obs.header()}, ensure_ascii=False, sort_keys=True) + "\n")
        for rec in obs.records():
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
    logger.info("[SIM] wrote %d fragments to %s", len(obs), path)
    return path


def read_observation_jsonl(path: Path) -> List[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


# -------------------------------------------------------
# STUDY / REPORT TABLES
# -------------------------------------------------------

RESULT_COLUMNS = (
    "kind", "epsilon", "replicate", "seed", "value",
    "mean", "std_error", "reference", "mse", "lp_error",
)


def result_rows(results) -> List[List[Any]]:
    """Replicate rows (replicate, value) followed by one summary row per epsilon."""
    rows: List[List[Any]] = []
    for res in results:
        for i, (seed, value) in enumerate(zip(res.seeds, res.replicate_values)):
            rows.append(["replicate", res.epsilon, i, seed, value, None, None, None, None, None])
        rows.append([
            "summary", res.epsilon, None, None, None,
            res.mean, res.std_error, res.reference, res.mse, res.lp_error,
        ])
    return rows


def write_results_csv(path: Path, results, header: Dict[str, Any], fit=None) -> Path:
    header = dict(header)
    if fit is not None:
        header.update({
            "fit_slope": fit.slope,
            "fit_slope_se": fit.slope_se,
            "fit_intercept": fit.intercept,
            "fit_exact": fit.exact,
        })
    return write_csv(path, RESULT_COLUMNS, result_rows(results), header)


def write_study_csv(path: Path, study) -> Path:
    cfg = study.config
    header = {f"cfg.{k}": v for k, v in cfg.as_dict().items()}
    header.update({f"est.{k}": v for k, v in study.estimator_config.items()})
    header["config_hash"] = cfg.config_hash()
    header["root_seed"] = cfg.seed
    return write_results_csv(path, study.results, header, study.fit)


def write_report_csv(path: Path, report: Dict[str, Any], header: Optional[Dict[str, Any]] = None) -> Path:
    """One key,value row per field of an oracle or two-point report."""
    return write_csv(path, ("key", "value"), sorted(report.items()), header)


def write_kernel_csv(path: Path, grid: np.ndarray, header: Optional[Dict[str, Any]] = None) -> Path:
    return write_csv(path, ("a", "phi", "dphi"), grid.tolist(), header)

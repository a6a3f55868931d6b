"""
Blueprint: Evaluation - Report Writers

Components:
1. JSON report per run (validated by EvalReport on read)
2. Flat CSV across variants: variant,map,rank1,rank5,rank10,fallbacks
3. Published JSON schema of EvalReport
"""

import json
from pathlib import Path
from typing import List, Sequence, Union

import pandas as pd

from ..data_handlers.feature_io import atomic_write_bytes
from .variants import EvalReport
from ..utils.logger import setup_logger

logger = setup_logger(__name__)

CSV_COLUMNS = ["variant", "map", "rank1", "rank5", "rank10", "fallbacks"]


def write_report_json(report: EvalReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    atomic_write_bytes(path, report.model_dump_json(indent=2).encode("utf-8"))
    return path


def read_report_json(path: Union[str, Path]) -> EvalReport:
    return EvalReport.model_validate_json(Path(path).read_text())


def reports_frame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    rows = [
        {
            "variant": r.variant,
            "map": r.mAP,
            "rank1": r.cmc.get("1", 0.0),
            "rank5": r.cmc.get("5", 0.0),
            "rank10": r.cmc.get("10", 0.0),
            "fallbacks": int(r.fallback_count),
        }
        for r in reports
    ]
    return pd.DataFrame(rows, columns=CSV_COLUMNS).astype({"map": float, "rank1": float, "rank5": float,
                                                           "rank10": float, "fallbacks": int})


def write_reports_csv(reports: Sequence[EvalReport], path: Union[str, Path]) -> Path:
    """One row per variant, in the given order"""
    path = Path(path)
    csv_text = reports_frame(reports).to_csv(index=False, float_format="%.6f", lineterminator="\n")
    atomic_write_bytes(path, csv_text.encode("utf-8"))
    logger.debug(f"Wrote {len(reports)} report rows to {path}")
    return path


def read_reports_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path)


def report_schema() -> dict:
    return EvalReport.model_json_schema()


def write_schema(path: Union[str, Path]) -> Path:
    path = Path(path)
    atomic_write_bytes(path, json.dumps(report_schema(), indent=2, sort_keys=True).encode("utf-8"))
    return path


def write_reports(reports: Sequence[EvalReport], out_dir: Union[str, Path]) -> List[Path]:
    """report_<variant>.json per run, report.csv, report.schema.json"""
    out_dir = Path(out_dir)
    written = [write_report_json(r, out_dir / f"report_{r.variant.replace('+', '_')}.json") for r in reports]
    written.append(write_reports_csv(reports, out_dir / "report.csv"))
    written.append(write_schema(out_dir / "report.schema.json"))
    return written

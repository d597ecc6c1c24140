"""Accuracy protocol: per-sample success indicator and aggregate success ratio,
stratified into normal and confusing (near-the-line) samples."""

import csv
import json
import logging
import math
import os
from typing import Dict, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field

from elc.errors import EmptyInput, MissingGroundTruth

logger = logging.getLogger(__name__)

TAGS = ("normal", "confusing")
CSV_FIELDS = ["id", "tag", "L_v", "call", "gt_call", "margin", "bounce_err"]


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epsilon: float = Field(5.0, gt=0)
    mode: Literal["CallMatch", "Distance"] = "CallMatch"


class SampleAnnotation(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    source: str
    court: str
    gt_call: Literal["IN", "OUT"]
    gt_bounce: Optional[Tuple[float, float]] = None
    tag: Literal["normal", "confusing"] = "normal"


class SampleRecord(BaseModel):
    id: str
    tag: str
    L_v: int
    call: Optional[str] = None
    gt_call: str
    margin: Optional[float] = None
    bounce_err: Optional[float] = None
    L_v_call: Optional[int] = None
    L_v_distance: Optional[int] = None
    confident: Optional[bool] = None
    error: Optional[str] = None


class RateRow(BaseModel):
    number: int
    success: int
    r_suc: float

    @property
    def percent(self) -> str:
        return format_rate(self.r_suc)


class EvalReport(BaseModel):
    records: List[SampleRecord]
    by_tag: Dict[str, RateRow]
    total: RateRow
    confusing_proportion: float

    def table(self) -> str:
        lines = [f"{'':<10}{'Number':>8}{'Success':>9}{'R_suc':>8}"]
        for name in TAGS:
            if name in self.by_tag:
                row = self.by_tag[name]
                lines.append(f"{name.capitalize():<10}{row.number:>8}{row.success:>9}{row.percent:>8}")
        lines.append(f"{'Total':<10}{self.total.number:>8}{self.total.success:>9}{self.total.percent:>8}")
        return "\n".join(lines)


def format_rate(rate: float) -> str:
    # half-up at one decimal, independent of binary representation quirks
    return f"{math.floor(rate * 1000 + 0.5) / 10:.1f}%"


def load_manifest(path: str) -> List[SampleAnnotation]:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if isinstance(data, dict):
        data = data.get("samples", [])
    samples = [SampleAnnotation.model_validate(item) for item in data]
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValueError("Manifest sample ids must be unique")
    return samples


def resolve_path(manifest_path: str, relative: str) -> str:
    if os.path.isabs(relative):
        return relative
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), relative)


def bounce_error(bounce, ann: SampleAnnotation) -> Optional[float]:
    if ann.gt_bounce is None or bounce is None:
        return None
    return math.hypot(bounce.x - ann.gt_bounce[0], bounce.y - ann.gt_bounce[1])


def judge_sample(bounce, verdict, ann: SampleAnnotation, cfg: EvalConfig) -> int:
    """L_v for one sample: call agreement, or bounce distance strictly below epsilon."""
    if cfg.mode == "Distance":
        if ann.gt_bounce is None:
            raise MissingGroundTruth(f"Sample {ann.id} has no gt_bounce for Distance mode")
        return int(bounce_error(bounce, ann) < cfg.epsilon)
    return int(verdict.call == ann.gt_call)


def record_for(ann: SampleAnnotation, bounce, verdict, cfg: EvalConfig) -> SampleRecord:
    err = bounce_error(bounce, ann)
    l_call = int(verdict.call == ann.gt_call)
    l_dist = int(err < cfg.epsilon) if err is not None else None
    return SampleRecord(
        id=ann.id,
        tag=ann.tag,
        L_v=judge_sample(bounce, verdict, ann, cfg),
        call=verdict.call,
        gt_call=ann.gt_call,
        margin=verdict.margin,
        bounce_err=err,
        L_v_call=l_call,
        L_v_distance=l_dist,
        confident=verdict.confident,
    )


def failed_record(ann: SampleAnnotation, reason: str) -> SampleRecord:
    return SampleRecord(id=ann.id, tag=ann.tag, L_v=0, gt_call=ann.gt_call, error=reason)


def _rate(values: Sequence[int]) -> RateRow:
    return RateRow(number=len(values), success=sum(values), r_suc=sum(values) / len(values))


def aggregate(records: Sequence[SampleRecord]) -> EvalReport:
    if not records:
        raise EmptyInput("Nothing to aggregate")
    ordered = sorted(records, key=lambda r: r.id)
    by_tag = {}
    for tag in sorted({r.tag for r in ordered}):
        by_tag[tag] = _rate([r.L_v for r in ordered if r.tag == tag])
    total = _rate([r.L_v for r in ordered])
    confusing = by_tag["confusing"].number if "confusing" in by_tag else 0
    report = EvalReport(
        records=ordered,
        by_tag=by_tag,
        total=total,
        confusing_proportion=confusing / total.number,
    )
    logger.info(f"R_suc total {report.total.percent} over {total.number} samples")
    return report


def aggregate_counts(counts: Dict[str, Tuple[int, int]]) -> Tuple[Dict[str, RateRow], RateRow]:
    """Rates from (number, success) pairs per tag, e.g. published table counts."""
    rows = {tag: RateRow(number=n, success=s, r_suc=s / n) for tag, (n, s) in counts.items()}
    n_total = sum(r.number for r in rows.values())
    s_total = sum(r.success for r in rows.values())
    return rows, RateRow(number=n_total, success=s_total, r_suc=s_total / n_total)


def write_report(report: EvalReport, json_path: str, csv_path: Optional[str] = None) -> None:
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(report.model_dump(mode="json"), f, indent=2, sort_keys=True)
        f.write("\n")
    if csv_path:
        with open(csv_path, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=CSV_FIELDS, extrasaction="ignore")
            writer.writeheader()
            for record in report.records:
                writer.writerow(record.model_dump())

"""명령 결과 보고서 스키마와 표/구조화 출력"""

import json
from typing import Dict, List, Optional, Sequence, Type, TypeVar

from pydantic import BaseModel, Field

from .metrics import AddReport, OcclusionBucket, PoseErrorReport

T = TypeVar("T", bound=BaseModel)


class EvaluationOptions(BaseModel):
    root_relative: bool = False
    auc_min_mm: float
    auc_max_mm: float
    auc_steps: int
    f_thresholds_mm: List[float]
    occlusion_mode: str = "complement"


class SplitReport(BaseModel):
    name: str
    frames: int
    hand: Optional[PoseErrorReport] = None
    add: Optional[AddReport] = None


class EvaluationReport(BaseModel):
    frames: int
    options: EvaluationOptions
    splits: List[SplitReport]
    buckets: List[OcclusionBucket] = Field(default_factory=list)
    grasp_accuracy: Optional[float] = None


class PnpFrame(BaseModel):
    frame_id: str
    ok: bool
    reason: Optional[str] = None
    rotation: Optional[List[float]] = None
    translation: Optional[List[float]] = None
    add_mm: Optional[float] = None


class PnpReport(BaseModel):
    frames: List[PnpFrame]
    failures: int
    add: Optional[AddReport] = None


class StrengthRow(BaseModel):
    sample_id: str
    strength: Optional[float] = None
    index: Optional[int] = None
    score: Optional[float] = None
    error: Optional[str] = None


class StrengthReport(BaseModel):
    candidates: List[float]
    rows: List[StrengthRow]


class SelftestCheck(BaseModel):
    name: str
    passed: bool
    detail: str


class SelftestReport(BaseModel):
    passed: bool
    checks: List[SelftestCheck]


def to_structured(report: BaseModel) -> str:
    """키 정렬 JSON. 실수는 repr 표기라 다시 읽으면 같은 값이 됩니다."""
    return json.dumps(report.model_dump(mode="json"), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def from_structured(text: str, model: Type[T]) -> T:
    return model.model_validate_json(text)


def _cell(value: Optional[float], width: int = 10) -> str:
    return f"{'-':>{width}}" if value is None else f"{value:>{width}.2f}"


HAND_COLUMNS = (
    ("J-PE", "j_pe"),
    ("PA-J-PE", "pa_j_pe"),
    ("V-PE", "v_pe"),
    ("PA-V-PE", "pa_v_pe"),
    ("J-AUC", "j_auc"),
    ("V-AUC", "v_auc"),
    ("F@5", "f_at_5"),
    ("F@15", "f_at_15"),
)


def _row(label: str, cells: Sequence[str]) -> str:
    return f"{label:<14}" + "".join(cells)


def render_evaluation_table(report: EvaluationReport) -> str:
    header = _row("Scene", [f"{name:>10}" for name, _ in HAND_COLUMNS] + [f"{'ADD-0.5D':>10}", f"{'Frames':>8}"])
    lines = [header, "-" * len(header)]
    for split in report.splits:
        hand = split.hand
        cells = [_cell(getattr(hand, key) if hand else None) for _, key in HAND_COLUMNS]
        cells.append(_cell(split.add.average if split.add else None))
        cells.append(f"{split.frames:>8d}")
        lines.append(_row(split.name, cells))

    if report.buckets:
        lines += ["", _row("Occlusion", [f"{n:>10}" for n in ("J-PE", "PA-J-PE", "V-PE", "PA-V-PE")] + [f"{'Frames':>8}"])]
        for bucket in report.buckets:
            label = f"[{bucket.lo:.2f},{bucket.hi:.2f}{']' if bucket.closed else ')'}"
            cells = [_cell(bucket.means.get(k)) for k in ("j_pe", "pa_j_pe", "v_pe", "pa_v_pe")]
            lines.append(_row(label, cells + [f"{bucket.count:>8d}"]))

    add_split = next((s for s in report.splits if s.add and s.add.per_instance), None)
    if add_split is not None:
        lines += ["", _row("Object", [f"{'ADD-0.5D':>10}", f"{'Frames':>8}"])]
        for name, value in add_split.add.per_instance.items():
            lines.append(_row(name, [_cell(value), f"{add_split.add.counts[name]:>8d}"]))

    if report.grasp_accuracy is not None:
        lines += ["", f"grasp_accuracy={report.grasp_accuracy:.2f}"]
    return "\n".join(lines) + "\n"


def render_pnp_table(report: PnpReport) -> str:
    lines = [_row("Frame", [f"{'ADD(mm)':>12}", "  status"])]
    for frame in report.frames:
        add = f"{'-':>12}" if frame.add_mm is None else f"{frame.add_mm:>12.6f}"
        status = "ok" if frame.ok else f"failed: {frame.reason}"
        lines.append(_row(frame.frame_id, [add, f"  {status}"]))
    lines.append("")
    if report.add is None:
        lines.append(f"ADD-0.5D average=- failures={report.failures}")
    else:
        for name, value in report.add.per_instance.items():
            lines.append(f"ADD-0.5D {name}={value:.2f}")
        lines.append(f"ADD-0.5D average={report.add.average:.2f} failures={report.failures}")
    return "\n".join(lines) + "\n"


def render_strength_table(report: StrengthReport) -> str:
    lines = [_row("Sample", [f"{'Strength':>10}", f"{'J-PE':>10}"])]
    for row in report.rows:
        if row.error is not None:
            lines.append(_row(row.sample_id, [f"  failed: {row.error}"]))
        else:
            lines.append(_row(row.sample_id, [_cell(row.strength), _cell(row.score)]))
    return "\n".join(lines) + "\n"


def render_selftest_table(report: SelftestReport) -> str:
    lines = [f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}" for c in report.checks]
    failed = [c.name for c in report.checks if not c.passed]
    lines.append("selftest: 통과" if not failed else f"selftest: 실패 ({', '.join(failed)})")
    return "\n".join(lines) + "\n"


def render_counts(counts: Dict[str, int]) -> str:
    return f"hand_only={counts['hand_only']} hand_object={counts['hand_object']}\n"

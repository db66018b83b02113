"""CLI 명령 구현

각 cmd_* 함수는 CommandResult를 반환하며 출력 위치(stdout/파일)는 main이 정합니다.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from .bridge import ExternalEstimator, LineBridge
from .config import (
    DEFAULT_AUC_MAX_MM,
    DEFAULT_AUC_MIN_MM,
    DEFAULT_AUC_STEPS,
    DEFAULT_F_THRESHOLDS_MM,
    DEFAULT_OCCLUSION_EDGES,
    DEFAULT_RRE_THRESHOLD_DEG,
    DEFAULT_RTE_THRESHOLD_MM,
    DEFAULT_STRENGTH_CANDIDATES,
    RunConfig,
    TrainingSchedule,
    auc_thresholds,
    deg_to_rad,
)
from .dataprep import (
    FrameRecord,
    Joints3D,
    annotate_occlusion,
    assume_hand_only,
    format_float,
    label_sequences,
    load_manifest,
    save_manifest,
    scene_counts,
    split_scenes,
)
from .deoccluder import StrengthCandidates, score_candidates, select_control_strength
from .errors import (
    ActionableError,
    AllCandidatesFailed,
    EstimatorFailure,
    FrameMismatch,
    InputError,
    ParseError,
    SchemaError,
)
from .geometry import solve_pnp_epnp
from .logger import trace, warn
from .metrics import (
    AddSample,
    add_half_diameter,
    add_metric,
    bucket_by_occlusion,
    grasp_accuracy,
    hand_frame_errors,
    object_diameter,
    summarize_hand_errors,
)
from .reports import (
    EvaluationOptions,
    EvaluationReport,
    PnpFrame,
    PnpReport,
    SelftestReport,
    SplitReport,
    StrengthReport,
    StrengthRow,
    render_counts,
    render_evaluation_table,
    render_pnp_table,
    render_selftest_table,
    render_strength_table,
    to_structured,
)
from .selftest import run_selftest

PathLike = Union[str, Path]


@dataclass(frozen=True)
class CommandResult:
    text: str
    exit_code: int = 0


def _render(report: BaseModel, config: RunConfig, table) -> str:
    return to_structured(report) if config.format == "structured" else table(report)


# ---------------------------------------------------------------------------
# prepare-labels / split
# ---------------------------------------------------------------------------


def cmd_prepare_labels(
    manifest: PathLike,
    output: PathLike,
    rre_deg: float = DEFAULT_RRE_THRESHOLD_DEG,
    rte_mm: float = DEFAULT_RTE_THRESHOLD_MM,
    reference: str = "first_annotated",
    occlusion_mode: str = "complement",
    hand_only_dataset: bool = False,
) -> CommandResult:
    """파지 라벨과 가림 비율을 붙인 매니페스트를 쓰고 장면별 개수를 출력합니다."""
    if rre_deg < 0 or rte_mm < 0:
        raise InputError(f"임계값은 음수일 수 없습니다: rre={rre_deg}, rte={rte_mm}")
    records = load_manifest(manifest)
    if hand_only_dataset:
        labeled = assume_hand_only(records)
    else:
        labeled = label_sequences(records, deg_to_rad(rre_deg), rte_mm, reference)  # type: ignore[arg-type]
    labeled = annotate_occlusion(labeled, occlusion_mode)  # type: ignore[arg-type]
    save_manifest(labeled, output)
    counts = scene_counts(labeled)
    trace(f"라벨 생성 완료: 손-단독 {counts['hand_only']}개, 손-객체 {counts['hand_object']}개")
    return CommandResult(render_counts(counts))


def cmd_split(manifest: PathLike, hand_only_out: PathLike, hand_object_out: PathLike) -> CommandResult:
    records = load_manifest(manifest, strict=False)
    hand_only, hand_object = split_scenes(records)
    save_manifest(hand_only, hand_only_out)
    save_manifest(hand_object, hand_object_out)
    return CommandResult(render_counts({"hand_only": len(hand_only), "hand_object": len(hand_object)}))


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _index_by_frame(records: Sequence[FrameRecord], label: str) -> Dict[str, FrameRecord]:
    index: Dict[str, FrameRecord] = {}
    for record in records:
        if record.frame_id in index:
            raise InputError(f"{label} 매니페스트에 중복 frame_id가 있습니다: {record.frame_id}")
        index[record.frame_id] = record
    return index


def _match_frames(pred: Sequence[FrameRecord], gt: Sequence[FrameRecord]) -> List[Tuple[FrameRecord, FrameRecord]]:
    """frame_id로 짝을 맞추고 frame_id 순으로 정렬합니다."""
    pred_index = _index_by_frame(pred, "예측")
    gt_index = _index_by_frame(gt, "정답")
    unmatched = set(pred_index) ^ set(gt_index)
    if unmatched:
        raise FrameMismatch(unmatched)
    return [(pred_index[k], gt_index[k]) for k in sorted(gt_index)]


def _add_sample(pred: FrameRecord, gt: FrameRecord) -> Optional[AddSample]:
    """정답이 파지 프레임이고 객체 주석이 모두 있을 때만 ADD 샘플을 만듭니다."""
    if not gt.grasping_label or gt.object_pose is None or gt.object_keypoints is None:
        return None
    diameter = gt.object_diameter or object_diameter(gt.object_keypoints)
    # 스위처가 객체 분기를 끈 프레임은 추정 실패로 셉니다
    pose = None if pred.grasping_label is False else pred.object_pose
    return AddSample(gt.object_id or "object", gt.object_keypoints.points, diameter, pose, gt.object_pose)


def _write_curves(curve_dir: PathLike, split: str, curves) -> None:
    directory = Path(curve_dir)
    directory.mkdir(parents=True, exist_ok=True)
    for name, curve in curves.items():
        lines = "".join(f"{format_float(t)} {format_float(v)}\n" for t, v in zip(curve.thresholds, curve.pck))
        (directory / f"{split}_{name}.txt").write_text(lines, encoding="utf-8")


def cmd_evaluate(
    pred_manifest: PathLike,
    gt_manifest: PathLike,
    config: RunConfig = RunConfig(),
    auc_min_mm: float = DEFAULT_AUC_MIN_MM,
    auc_max_mm: float = DEFAULT_AUC_MAX_MM,
    auc_steps: int = DEFAULT_AUC_STEPS,
    occlusion_edges: Sequence[float] = DEFAULT_OCCLUSION_EDGES,
    f_thresholds: Tuple[float, float] = DEFAULT_F_THRESHOLDS_MM,
    root_relative: bool = False,
    curve_dir: Optional[PathLike] = None,
    occlusion_mode: str = "complement",
) -> CommandResult:
    """예측 매니페스트를 정답과 비교해 장면별 지표를 계산합니다."""
    if auc_steps < 1 or not auc_max_mm > auc_min_mm:
        raise InputError(f"AUC 범위가 잘못되었습니다: [{auc_min_mm}, {auc_max_mm}] / {auc_steps}")
    pairs = _match_frames(load_manifest(pred_manifest, strict=False), load_manifest(gt_manifest, strict=False))
    if not pairs:
        raise InputError("평가할 프레임이 없습니다")
    thresholds = auc_thresholds(auc_min_mm, auc_max_mm, auc_steps)
    use_vertices = all(p.hand.vertices_3d is not None and g.hand.vertices_3d is not None for p, g in pairs)
    if not use_vertices:
        trace("정점이 없는 프레임이 있어 정점 지표를 생략합니다")

    def frame_errors(pair: Tuple[FrameRecord, FrameRecord]):
        p, g = pair
        return hand_frame_errors(
            p.hand.joints_3d,
            g.hand.joints_3d,
            p.hand.vertices_3d if use_vertices else None,
            g.hand.vertices_3d if use_vertices else None,
            f_thresholds=tuple(f_thresholds),
            root_relative_mode=root_relative,
        )

    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        frames = list(pool.map(frame_errors, pairs))

    gt_labels = [g.grasping_label for _, g in pairs]
    selections: List[Tuple[str, List[int]]] = [("all", list(range(len(pairs))))]
    if all(label is not None for label in gt_labels):
        selections.append(("hand_only", [i for i, label in enumerate(gt_labels) if not label]))
        selections.append(("hand_object", [i for i, label in enumerate(gt_labels) if label]))
    else:
        warn("파지 라벨이 없는 정답 프레임이 있어 장면 분할을 생략합니다")

    splits = []
    for name, indices in selections:
        hand = None
        if indices:
            hand, curves = summarize_hand_errors([frames[i] for i in indices], thresholds)
            if curve_dir is not None:
                _write_curves(curve_dir, name, curves)
        samples = [s for s in (_add_sample(*pairs[i]) for i in indices) if s is not None]
        add = add_half_diameter(samples) if samples else None
        splits.append(SplitReport(name=name, frames=len(indices), hand=hand, add=add))

    occluded = [(g.occlusion_proportion, f.summary()) for (_, g), f in zip(pairs, frames) if g.occlusion_proportion is not None]
    buckets = bucket_by_occlusion(occluded, occlusion_edges) if occluded else []

    accuracy = None
    pred_labels = [p.grasping_label for p, _ in pairs]
    if all(label is not None for label in pred_labels + gt_labels):
        accuracy = grasp_accuracy(pred_labels, gt_labels)  # type: ignore[arg-type]

    report = EvaluationReport(
        frames=len(pairs),
        options=EvaluationOptions(
            root_relative=root_relative,
            auc_min_mm=auc_min_mm,
            auc_max_mm=auc_max_mm,
            auc_steps=auc_steps,
            f_thresholds_mm=list(f_thresholds),
            occlusion_mode=occlusion_mode,
        ),
        splits=splits,
        buckets=buckets,
        grasp_accuracy=accuracy,
    )
    return CommandResult(_render(report, config, render_evaluation_table))


# ---------------------------------------------------------------------------
# pnp
# ---------------------------------------------------------------------------


def _pnp_frame(record: FrameRecord, refine: bool) -> Tuple[PnpFrame, Optional[AddSample]]:
    missing = [
        name
        for name, value in (
            ("intrinsics", record.intrinsics),
            ("object.keypoints", record.object_keypoints),
            ("object.keypoints_2d", record.object_keypoints_2d),
        )
        if value is None
    ]
    pose = None
    reason = None
    if missing:
        reason = f"{', '.join(missing)} 없음"
    else:
        try:
            pose = solve_pnp_epnp(record.object_keypoints, record.object_keypoints_2d, record.intrinsics, refine=refine)
        except ActionableError as e:
            reason = f"{type(e).__name__}: {e}"
    if reason is not None:
        warn(f"PnP 실패 ({record.frame_id}): {reason}")

    sample = None
    add_mm = None
    if record.object_pose is not None and record.object_keypoints is not None:
        diameter = record.object_diameter or object_diameter(record.object_keypoints)
        sample = AddSample(record.object_id or "object", record.object_keypoints.points, diameter, pose, record.object_pose)
        if pose is not None:
            add_mm = add_metric(record.object_keypoints, pose, record.object_pose)

    frame = PnpFrame(
        frame_id=record.frame_id,
        ok=pose is not None,
        reason=reason,
        rotation=None if pose is None else [float(v) for v in pose.rotation.m.reshape(-1)],
        translation=None if pose is None else [float(v) for v in pose.translation],
        add_mm=add_mm,
    )
    return frame, sample


def cmd_pnp(manifest: PathLike, config: RunConfig = RunConfig(), refine: bool = True) -> CommandResult:
    """예측 2D 키포인트와 3D 모델 키포인트로 객체 자세를 복원하고 ADD를 보고합니다."""
    records = sorted(load_manifest(manifest, strict=False), key=lambda r: r.frame_id)
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        results = list(pool.map(lambda r: _pnp_frame(r, refine), records))
    frames = [frame for frame, _ in results]
    samples = [sample for _, sample in results if sample is not None]
    report = PnpReport(
        frames=frames,
        failures=sum(1 for f in frames if not f.ok),
        add=add_half_diameter(samples) if samples else None,
    )
    return CommandResult(_render(report, config, render_pnp_table))


# ---------------------------------------------------------------------------
# select-strength
# ---------------------------------------------------------------------------


class StrengthInput(BaseModel):
    """select-strength 입력 한 줄. scores 또는 (joints_3d, candidates) 중 하나가 필요합니다."""

    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    sample_id: str
    scores: Optional[List[Optional[float]]] = None
    joints_3d: Optional[Joints3D] = None
    candidates: Optional[List[str]] = None


def _read_strength_inputs(path: PathLike) -> List[Tuple[int, StrengthInput]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"점수 파일을 찾을 수 없습니다: {path}")
    rows = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"JSON 구문 오류: {e.msg}", number)
        try:
            row = StrengthInput.model_validate(data)
        except ValidationError as e:
            loc = [str(p) for p in e.errors()[0].get("loc", ()) if not isinstance(p, int)]
            raise SchemaError(".".join(loc) or "record", number, e.errors()[0].get("msg", ""))
        if row.scores is None and (row.joints_3d is None or row.candidates is None):
            raise SchemaError("scores", number, "scores 또는 joints_3d와 candidates가 필요합니다")
        rows.append((number, row))
    return rows


def cmd_select_strength(
    scores_path: PathLike,
    candidates: Sequence[float] = DEFAULT_STRENGTH_CANDIDATES,
    config: RunConfig = RunConfig(),
    estimator_command: Optional[str] = None,
) -> CommandResult:
    """샘플별로 J-PE가 가장 낮은 control strength를 고릅니다.

    점수가 null이면 추정 실패(+∞)로 봅니다. 모든 후보가 실패한 샘플이 있으면 종료 코드 1.
    """
    strengths = StrengthCandidates(tuple(candidates))
    inputs = _read_strength_inputs(scores_path)
    estimator: Optional[ExternalEstimator] = None
    bridge: Optional[LineBridge] = None
    if any(row.scores is None for _, row in inputs):
        if estimator_command is None:
            raise InputError("scores가 없는 샘플이 있어 --estimator 명령이 필요합니다")
        bridge = LineBridge(estimator_command, failure=EstimatorFailure)
        estimator = ExternalEstimator(bridge)

    rows: List[StrengthRow] = []
    try:
        for number, item in inputs:
            if item.scores is not None:
                scores = [math.inf if s is None else float(s) for s in item.scores]
            else:
                if len(item.candidates) != len(strengths):
                    raise SchemaError("candidates", number, f"후보 개수는 {len(strengths)}개여야 합니다")
                gt = np.asarray(item.joints_3d, dtype=float).reshape(-1, 3)
                scores = [float(s) for s in score_candidates(gt, estimator, item.candidates)]
            if len(scores) != len(strengths):
                raise SchemaError("scores", number, f"점수 개수는 {len(strengths)}개여야 합니다")
            try:
                strength, index = select_control_strength(strengths, scores)
            except AllCandidatesFailed as e:
                warn(f"{item.sample_id}: {e}")
                rows.append(StrengthRow(sample_id=item.sample_id, error=str(e)))
                continue
            rows.append(StrengthRow(sample_id=item.sample_id, strength=strength, index=index, score=scores[index]))
    finally:
        if estimator is not None:
            estimator.close()
        if bridge is not None:
            bridge.close()

    report = StrengthReport(candidates=list(strengths.values), rows=rows)
    failed = any(row.error is not None for row in rows)
    return CommandResult(_render(report, config, render_strength_table), exit_code=1 if failed else 0)


# ---------------------------------------------------------------------------
# selftest / schedule
# ---------------------------------------------------------------------------


def cmd_selftest(config: RunConfig = RunConfig(), fault: Optional[str] = None) -> CommandResult:
    report: SelftestReport = run_selftest(config.seed, config.threads, fault)
    for check in report.checks:
        if not check.passed:
            warn(f"셀프테스트 실패: {check.name}: {check.detail}")
    return CommandResult(_render(report, config, render_selftest_table), exit_code=0 if report.passed else 1)


def _render_schedule(schedule: TrainingSchedule) -> str:
    lines = [f"{stage.name}: epochs={stage.epochs} enhancement={'on' if stage.enhancement else 'off'}" for stage in schedule.stages]
    lines.append(
        f"optimizer={schedule.optimizer} lr={schedule.learning_rate:g} "
        f"decay=x{schedule.lr_decay:g}/{schedule.lr_decay_every} epochs"
    )
    lines.append(f"batch_size={schedule.batch_size} input={schedule.input_size}x{schedule.input_size}")
    lines.append("augmentation " + " ".join(f"{k}={v:g}" for k, v in sorted(schedule.augmentation.items())))
    return "\n".join(lines) + "\n"


def cmd_schedule(config: RunConfig = RunConfig()) -> CommandResult:
    return CommandResult(_render(TrainingSchedule(), config, _render_schedule))

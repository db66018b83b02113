"""손/객체 자세 평가 지표

점 배열은 밀리미터 단위 N×3 numpy 배열(또는 PointSet3)입니다. 집계 함수는 입력
순서대로 누적하므로 병렬로 계산한 프레임별 값을 순서대로 넘기면 결과가 스레드
수와 무관하게 동일합니다.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from .errors import DegenerateInput, EmptyInput, ShapeMismatch
from .geometry import PointSet3, RigidPose, procrustes_align

Points = Union[PointSet3, np.ndarray]


def _pair(pred: Points, gt: Points) -> Tuple[np.ndarray, np.ndarray]:
    a = pred.points if isinstance(pred, PointSet3) else np.asarray(pred, dtype=float)
    b = gt.points if isinstance(gt, PointSet3) else np.asarray(gt, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise ShapeMismatch(f"예측/정답 형상이 다릅니다: {a.shape} vs {b.shape}")
    if a.shape[0] == 0:
        raise EmptyInput("점 집합이 비어 있습니다")
    return a, b


def per_point_errors(pred: Points, gt: Points) -> np.ndarray:
    a, b = _pair(pred, gt)
    return np.linalg.norm(a - b, axis=1)


def mean_position_error(pred: Points, gt: Points) -> float:
    """평균 점 위치 오차 (J-PE / V-PE, mm)"""
    return float(np.mean(per_point_errors(pred, gt)))


def root_relative(points: np.ndarray, root: np.ndarray) -> np.ndarray:
    return np.asarray(points, dtype=float) - np.asarray(root, dtype=float).reshape(1, 3)


def root_relative_position_error(pred: Points, gt: Points, root: int = 0) -> float:
    """루트 관절을 원점으로 옮긴 뒤의 평균 위치 오차"""
    a, b = _pair(pred, gt)
    return mean_position_error(root_relative(a, a[root]), root_relative(b, b[root]))


def pa_aligned(pred: Points, gt: Points) -> np.ndarray:
    """예측을 정답에 상사 정렬한 결과"""
    a, b = _pair(pred, gt)
    return procrustes_align(a, b).apply(a)


def pa_position_error(pred: Points, gt: Points) -> float:
    """Procrustes 정렬 후 평균 위치 오차 (PA-J-PE / PA-V-PE)"""
    a, b = _pair(pred, gt)
    return mean_position_error(pa_aligned(a, b), b)


def st_aligned(pred: Points, gt: Points) -> np.ndarray:
    """회전 없이 스케일과 이동만 최소제곱으로 맞춘 결과"""
    a, b = _pair(pred, gt)
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    denom = float(np.sum(ac * ac))
    if denom == 0.0:
        raise DegenerateInput("예측 점들이 모두 한 점에 있습니다")
    scale = float(np.sum(ac * bc)) / denom
    return scale * ac + b.mean(axis=0)


def st_position_error(pred: Points, gt: Points) -> float:
    a, b = _pair(pred, gt)
    return mean_position_error(st_aligned(a, b), b)


@dataclass(frozen=True)
class PckCurve:
    thresholds: Tuple[float, ...]
    pck: Tuple[float, ...]


def _validate_thresholds(thresholds: Sequence[float]) -> np.ndarray:
    thr = np.asarray(list(thresholds), dtype=float)
    if thr.ndim != 1 or thr.size == 0:
        raise EmptyInput("임계값 목록이 비어 있습니다")
    if np.any(np.diff(thr) < 0):
        raise DegenerateInput("임계값은 오름차순이어야 합니다")
    return thr


def pck_curve(errors: Sequence[float], thresholds: Sequence[float]) -> PckCurve:
    """임계값별로 오차가 임계값 이하인 비율 [0, 1]"""
    err = np.asarray(list(errors), dtype=float).reshape(-1)
    if err.size == 0:
        raise EmptyInput("오차 목록이 비어 있습니다")
    thr = _validate_thresholds(thresholds)
    pck = tuple(float(np.count_nonzero(err <= t)) / err.size for t in thr)
    return PckCurve(tuple(float(t) for t in thr), pck)


def auc(curve: PckCurve) -> float:
    """사다리꼴 적분 후 임계값 구간으로 정규화한 PCK 곡선 아래 면적 (%)"""
    thr = np.asarray(curve.thresholds, dtype=float)
    pck = np.asarray(curve.pck, dtype=float)
    if thr.size < 2:
        raise EmptyInput("AUC에는 최소 2개의 임계값이 필요합니다")
    span = thr[-1] - thr[0]
    if span <= 0:
        raise DegenerateInput("임계값 구간의 길이가 0입니다")
    area = float(np.sum((pck[1:] + pck[:-1]) * 0.5 * np.diff(thr)))
    return min(100.0, 100.0 * area / span)


def _nearest_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """src 각 점에서 dst까지의 최근접 거리 (전수 탐색)"""
    out = np.empty(src.shape[0])
    chunk = 256
    for start in range(0, src.shape[0], chunk):
        block = src[start:start + chunk]
        d2 = np.sum((block[:, None, :] - dst[None, :, :]) ** 2, axis=2)
        out[start:start + chunk] = np.sqrt(d2.min(axis=1))
    return out


def f_score(pred: Points, gt: Points, threshold: float) -> float:
    """정밀도/재현율의 조화 평균 (%). 거리는 임계값 이하이면 일치로 봅니다."""
    a = pred.points if isinstance(pred, PointSet3) else np.asarray(pred, dtype=float)
    b = gt.points if isinstance(gt, PointSet3) else np.asarray(gt, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != 3 or b.shape[1] != 3:
        raise ShapeMismatch(f"F-score 입력은 N×3이어야 합니다: {a.shape}, {b.shape}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptyInput("점 집합이 비어 있습니다")
    precision = float(np.mean(_nearest_distances(a, b) <= threshold))
    recall = float(np.mean(_nearest_distances(b, a) <= threshold))
    if precision + recall == 0.0:
        return 0.0
    return min(100.0, 100.0 * 2.0 * precision * recall / (precision + recall))


def add_metric(model_points: Points, pred: RigidPose, gt: RigidPose) -> float:
    """모델 점을 예측/정답 자세로 옮겼을 때의 평균 거리 (ADD, mm)"""
    pts = model_points.points if isinstance(model_points, PointSet3) else PointSet3(model_points).points
    return mean_position_error(pred.apply(pts), gt.apply(pts))


def object_diameter(model_points: Points) -> float:
    """모델 점 사이 최대 거리"""
    pts = model_points.points if isinstance(model_points, PointSet3) else np.asarray(model_points, dtype=float)
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    return float(math.sqrt(d2.max()))


@dataclass(frozen=True, eq=False)
class AddSample:
    """ADD-0.5D 집계용 샘플. pred가 None이면 추정 실패(예: 스위처 비활성)로 셉니다."""

    object_id: str
    model_points: np.ndarray
    diameter: float
    pred: Optional[RigidPose]
    gt: RigidPose


class AddReport(BaseModel):
    per_instance: Dict[str, float] = Field(default_factory=dict)
    counts: Dict[str, int] = Field(default_factory=dict)
    average: float = 0.0


def add_half_diameter(samples: Sequence[AddSample]) -> AddReport:
    """ADD < 0.5·지름을 성공으로 보는 객체별 성공률과 그 비가중 평균 (%)"""
    successes: Dict[str, int] = {}
    counts: Dict[str, int] = {}
    for sample in samples:
        if not sample.diameter > 0:
            raise DegenerateInput(f"객체 지름은 양수여야 합니다: {sample.object_id}")
        counts[sample.object_id] = counts.get(sample.object_id, 0) + 1
        ok = sample.pred is not None and add_metric(sample.model_points, sample.pred, sample.gt) < 0.5 * sample.diameter
        successes[sample.object_id] = successes.get(sample.object_id, 0) + int(ok)

    per_instance = {key: 100.0 * successes[key] / counts[key] for key in sorted(counts)}
    average = sum(per_instance.values()) / len(per_instance) if per_instance else 0.0
    return AddReport(per_instance=per_instance, counts={k: counts[k] for k in sorted(counts)}, average=average)


class OcclusionBucket(BaseModel):
    lo: float
    hi: float
    count: int
    means: Dict[str, float]
    closed: bool = False


def _validate_edges(edges: Sequence[float]) -> List[float]:
    values = [float(e) for e in edges]
    if len(values) < 2:
        raise EmptyInput(f"구간 경계는 최소 2개가 필요합니다: {values}")
    if any(not 0.0 <= e <= 1.0 for e in values):
        raise DegenerateInput(f"구간 경계는 [0, 1] 범위여야 합니다: {values}")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise DegenerateInput(f"구간 경계는 순증가해야 합니다: {values}")
    return values


def bucket_by_occlusion(
    samples: Sequence[Tuple[float, Mapping[str, float]]],
    edges: Sequence[float],
) -> List[OcclusionBucket]:
    """가림 비율 구간별 평균. 구간은 [edgeᵢ, edgeᵢ₊₁)이며 마지막 구간만 닫혀 있습니다.

    기본 경계 (0.25, 0.5, 0.75, 1.0)는 25–50%, 50–75%, 75–100% 세 구간이 됩니다.
    첫 경계보다 작은 샘플은 어느 구간에도 들어가지 않고, 빈 구간은 결과에서 빠집니다.
    """
    bounds = _validate_edges(edges)
    pairs = list(zip(bounds[:-1], bounds[1:]))
    sums: List[Dict[str, float]] = [dict() for _ in pairs]
    counts = [0] * len(pairs)
    for occlusion, values in samples:
        if not 0.0 <= occlusion <= 1.0:
            raise DegenerateInput(f"가림 비율은 [0, 1] 범위여야 합니다: {occlusion}")
        for i, (lo, hi) in enumerate(pairs):
            last = i == len(pairs) - 1
            if lo <= occlusion < hi or (last and occlusion == hi):
                counts[i] += 1
                for key, value in values.items():
                    sums[i][key] = sums[i].get(key, 0.0) + float(value)
                break

    buckets = []
    for i, count in enumerate(counts):
        if count == 0:
            continue
        lo, hi = pairs[i]
        means = {key: total / count for key, total in sorted(sums[i].items())}
        buckets.append(OcclusionBucket(lo=lo, hi=hi, count=count, means=means, closed=i == len(pairs) - 1))
    return buckets


def grasp_accuracy(pred_labels: Sequence[bool], gt_labels: Sequence[bool]) -> float:
    """예측 스위처 결정과 파지 라벨의 일치율 (%)"""
    if len(pred_labels) != len(gt_labels):
        raise ShapeMismatch("라벨 개수가 다릅니다")
    if not gt_labels:
        raise EmptyInput("라벨이 비어 있습니다")
    hits = sum(1 for p, g in zip(pred_labels, gt_labels) if bool(p) == bool(g))
    return 100.0 * hits / len(gt_labels)


class PoseErrorReport(BaseModel):
    """손 자세 지표 묶음. 정점이 없는 데이터셋이면 정점 지표는 None입니다."""

    count: int = Field(ge=0)
    j_pe: float = Field(ge=0)
    pa_j_pe: float = Field(ge=0)
    st_j_pe: float = Field(ge=0)
    j_auc: float = Field(ge=0, le=100)
    pa_j_auc: float = Field(ge=0, le=100)
    v_pe: Optional[float] = Field(default=None, ge=0)
    pa_v_pe: Optional[float] = Field(default=None, ge=0)
    st_v_pe: Optional[float] = Field(default=None, ge=0)
    v_auc: Optional[float] = Field(default=None, ge=0, le=100)
    pa_v_auc: Optional[float] = Field(default=None, ge=0, le=100)
    f_at_5: Optional[float] = Field(default=None, ge=0, le=100)
    f_at_15: Optional[float] = Field(default=None, ge=0, le=100)
    pa_f_at_5: Optional[float] = Field(default=None, ge=0, le=100)
    pa_f_at_15: Optional[float] = Field(default=None, ge=0, le=100)


@dataclass(frozen=True, eq=False)
class HandFrameErrors:
    """프레임 하나의 손 오차. 집계 전 단계의 값입니다."""

    joint_errors: np.ndarray
    pa_joint_errors: np.ndarray
    st_joint_error: float
    vertex_errors: Optional[np.ndarray] = None
    pa_vertex_errors: Optional[np.ndarray] = None
    st_vertex_error: Optional[float] = None
    f_scores: Optional[Tuple[float, float]] = None
    pa_f_scores: Optional[Tuple[float, float]] = None

    def summary(self) -> Dict[str, float]:
        values = {
            "j_pe": float(np.mean(self.joint_errors)),
            "pa_j_pe": float(np.mean(self.pa_joint_errors)),
        }
        if self.vertex_errors is not None:
            values["v_pe"] = float(np.mean(self.vertex_errors))
            values["pa_v_pe"] = float(np.mean(self.pa_vertex_errors))
        return values


def hand_frame_errors(
    pred_joints: np.ndarray,
    gt_joints: np.ndarray,
    pred_vertices: Optional[np.ndarray] = None,
    gt_vertices: Optional[np.ndarray] = None,
    f_thresholds: Tuple[float, float] = (5.0, 15.0),
    root_relative_mode: bool = False,
    root: int = 0,
) -> HandFrameErrors:
    """프레임별 관절/정점 오차를 계산합니다.

    root_relative_mode이면 각 점 집합에서 자기 루트 관절을 뺀 뒤 비교합니다.
    PA 지표는 모드와 무관하게 같습니다.
    """
    pj, gj = _pair(pred_joints, gt_joints)
    if root_relative_mode:
        pred_root, gt_root = pj[root].copy(), gj[root].copy()
        pj, gj = root_relative(pj, pred_root), root_relative(gj, gt_root)

    joint_errors = per_point_errors(pj, gj)
    pa_joint_errors = per_point_errors(pa_aligned(pj, gj), gj)
    st_joint = st_position_error(pj, gj)

    if pred_vertices is None or gt_vertices is None:
        return HandFrameErrors(joint_errors, pa_joint_errors, st_joint)

    pv, gv = _pair(pred_vertices, gt_vertices)
    if root_relative_mode:
        pv, gv = root_relative(pv, pred_root), root_relative(gv, gt_root)
    pa_v = pa_aligned(pv, gv)
    return HandFrameErrors(
        joint_errors,
        pa_joint_errors,
        st_joint,
        vertex_errors=per_point_errors(pv, gv),
        pa_vertex_errors=per_point_errors(pa_v, gv),
        st_vertex_error=st_position_error(pv, gv),
        f_scores=(f_score(pv, gv, f_thresholds[0]), f_score(pv, gv, f_thresholds[1])),
        pa_f_scores=(f_score(pa_v, gv, f_thresholds[0]), f_score(pa_v, gv, f_thresholds[1])),
    )


def _mean(values: Sequence[float]) -> float:
    total = 0.0
    for value in values:
        total += value
    return total / len(values)


def summarize_hand_errors(
    frames: Sequence[HandFrameErrors],
    thresholds: Sequence[float],
) -> Tuple[PoseErrorReport, Dict[str, PckCurve]]:
    """프레임별 오차를 입력 순서대로 집계합니다.

    Returns:
        (지표 보고서, 곡선 이름 → PCK 곡선)
    """
    if not frames:
        raise EmptyInput("집계할 프레임이 없습니다")

    def flat(attr: str) -> np.ndarray:
        return np.concatenate([getattr(f, attr) for f in frames])

    curves = {
        "joints": pck_curve(flat("joint_errors"), thresholds),
        "pa_joints": pck_curve(flat("pa_joint_errors"), thresholds),
    }
    fields = {
        "count": len(frames),
        "j_pe": _mean([float(np.mean(f.joint_errors)) for f in frames]),
        "pa_j_pe": _mean([float(np.mean(f.pa_joint_errors)) for f in frames]),
        "st_j_pe": _mean([f.st_joint_error for f in frames]),
        "j_auc": auc(curves["joints"]),
        "pa_j_auc": auc(curves["pa_joints"]),
    }

    with_vertices = [f for f in frames if f.vertex_errors is not None]
    if with_vertices:
        curves["vertices"] = pck_curve(np.concatenate([f.vertex_errors for f in with_vertices]), thresholds)
        curves["pa_vertices"] = pck_curve(np.concatenate([f.pa_vertex_errors for f in with_vertices]), thresholds)
        fields.update(
            v_pe=_mean([float(np.mean(f.vertex_errors)) for f in with_vertices]),
            pa_v_pe=_mean([float(np.mean(f.pa_vertex_errors)) for f in with_vertices]),
            st_v_pe=_mean([f.st_vertex_error for f in with_vertices]),
            v_auc=auc(curves["vertices"]),
            pa_v_auc=auc(curves["pa_vertices"]),
            f_at_5=_mean([f.f_scores[0] for f in with_vertices]),
            f_at_15=_mean([f.f_scores[1] for f in with_vertices]),
            pa_f_at_5=_mean([f.pa_f_scores[0] for f in with_vertices]),
            pa_f_at_15=_mean([f.pa_f_scores[1] for f in with_vertices]),
        )
    return PoseErrorReport(**fields), curves

"""손 손실, 객체 그리드 손실, 다단계 강화 손실, 전체 목적 함수

reduction="sum"(기본)은 펼친 잔차의 유클리드 노름(L2 항)과 절대값 합(L1 항)을
씁니다. reduction="mean"은 L2 항에 RMS, L1 항에 평균 절대값을 씁니다.
"""

import math
from dataclasses import dataclass, fields
from typing import Literal, Optional

import numpy as np

from .config import DEFAULT_ALPHA, DEFAULT_GAMMA_INIT, DEFAULT_GAMMA_MANO, DEFAULT_GAMMA_ROI
from .dataprep import HandAnnotation
from .errors import DegenerateInput, ShapeMismatch
from .fusion import AttentionParams, multihead_attention

Reduction = Literal["sum", "mean"]


def _residual(pred: np.ndarray, gt: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(pred, dtype=float)
    b = np.asarray(gt, dtype=float)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{name} 형상이 다릅니다: {a.shape} vs {b.shape}")
    return (a - b).reshape(-1)


def l2_term(pred: np.ndarray, gt: np.ndarray, reduction: Reduction = "sum", name: str = "tensor") -> float:
    r = _residual(pred, gt, name)
    if r.size == 0:
        return 0.0
    norm = float(np.linalg.norm(r))
    return norm if reduction == "sum" else norm / math.sqrt(r.size)


def l1_term(pred: np.ndarray, gt: np.ndarray, reduction: Reduction = "sum", name: str = "tensor") -> float:
    r = _residual(pred, gt, name)
    if r.size == 0:
        return 0.0
    total = float(np.sum(np.abs(r)))
    return total if reduction == "sum" else total / r.size


@dataclass(frozen=True)
class LossWeights:
    alpha: float = DEFAULT_ALPHA
    gamma_init: float = DEFAULT_GAMMA_INIT
    gamma_roi: float = DEFAULT_GAMMA_ROI
    gamma_mano: float = DEFAULT_GAMMA_MANO

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not (value >= 0 and math.isfinite(value)):
                raise DegenerateInput(f"손실 가중치 {f.name}는 0 이상이어야 합니다: {value}")


@dataclass(frozen=True)
class HandLoss:
    total: float
    joints: float
    vertices: float
    mano: float


def hand_loss(pred: HandAnnotation, gt: HandAnnotation, reduction: Reduction = "sum") -> HandLoss:
    """L^h = L^J + L^V + L^MANO"""
    joints = l2_term(pred.joints_2d, gt.joints_2d, reduction, "joints_2d") + l2_term(
        pred.joints_3d, gt.joints_3d, reduction, "joints_3d"
    )
    if (pred.vertices_3d is None) != (gt.vertices_3d is None):
        raise ShapeMismatch("예측과 정답 중 한쪽에만 정점이 있습니다")
    vertices = 0.0
    if gt.vertices_3d is not None:
        vertices = l2_term(pred.vertices_3d, gt.vertices_3d, reduction, "vertices_3d")
    mano = l2_term(pred.mano_vector(), gt.mano_vector(), reduction, "mano")
    return HandLoss(total=joints + vertices + mano, joints=joints, vertices=vertices, mano=mano)


@dataclass(frozen=True, eq=False)
class GridPrediction:
    """그리드 셀별 N^o개 키포인트 픽셀 위치 (G, N, 2)와 신뢰도 (G, N)"""

    points: np.ndarray
    confidences: np.ndarray

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=float)
        conf = np.asarray(self.confidences, dtype=float)
        if points.ndim != 3 or points.shape[2] != 2 or conf.shape != points.shape[:2]:
            raise ShapeMismatch(f"그리드 예측 형상이 잘못되었습니다: {points.shape}, {conf.shape}")
        if np.any(conf < 0) or np.any(conf > 1):
            raise DegenerateInput("신뢰도는 [0, 1] 범위여야 합니다")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "confidences", conf)


def object_grid_loss(pred: GridPrediction, gt: GridPrediction, grasping: bool, reduction: Reduction = "sum") -> float:
    """Σ_g Σ_k ‖p − p̂‖₁ + ‖c − ĉ‖₁. 파지 프레임이 아니면 0."""
    if pred.points.shape != gt.points.shape:
        raise ShapeMismatch(f"그리드 형상이 다릅니다: {pred.points.shape} vs {gt.points.shape}")
    if not grasping:
        return 0.0
    return l1_term(pred.points, gt.points, reduction, "grid points") + l1_term(
        pred.confidences, gt.confidences, reduction, "grid confidences"
    )


@dataclass(frozen=True, eq=False)
class EnhancementFeatures:
    """세 단계 특징: 초기 특징, RoI 특징, MANO 특징 (L × d)"""

    init: np.ndarray
    roi: np.ndarray
    mano: np.ndarray


@dataclass(frozen=True)
class EnhancementLosses:
    init: float
    roi: float
    mano: float


def enhancement_losses(
    orig: EnhancementFeatures,
    deoccluded: EnhancementFeatures,
    adapter: AttentionParams,
    eligible: bool,
    reduction: Reduction = "sum",
) -> EnhancementLosses:
    """원본/가림 제거 이미지 특징 사이의 L1 손실. MANO 단계는 적응층을 양쪽에 적용합니다."""
    init = l1_term(orig.init, deoccluded.init, reduction, "init feature")
    roi = l1_term(orig.roi, deoccluded.roi, reduction, "roi feature")
    if np.shape(orig.mano) != np.shape(deoccluded.mano):
        raise ShapeMismatch(f"MANO 특징 형상이 다릅니다: {np.shape(orig.mano)} vs {np.shape(deoccluded.mano)}")
    if not eligible:
        return EnhancementLosses(0.0, 0.0, 0.0)
    mano = l1_term(
        multihead_attention(orig.mano, adapter), multihead_attention(deoccluded.mano, adapter), reduction, "mano feature"
    )
    return EnhancementLosses(init=init, roi=roi, mano=mano)


@dataclass(frozen=True)
class LossComponents:
    hand: float = 0.0
    object: float = 0.0
    switcher: float = 0.0
    init: float = 0.0
    roi: float = 0.0
    mano: float = 0.0

    @classmethod
    def build(
        cls,
        hand: HandLoss,
        object_loss: float,
        switcher: float,
        enhancement: Optional[EnhancementLosses] = None,
    ) -> "LossComponents":
        enh = enhancement or EnhancementLosses(0.0, 0.0, 0.0)
        return cls(hand.total, object_loss, switcher, enh.init, enh.roi, enh.mano)


def total_loss(components: LossComponents, weights: LossWeights = LossWeights()) -> float:
    """L = L^h + L^o + α·L^s + γ_init·L_init + γ_RoI·L_RoI + γ_MANO·L_MANO"""
    for f in fields(components):
        if not math.isfinite(getattr(components, f.name)):
            raise DegenerateInput(f"손실 성분 {f.name}가 유한하지 않습니다")
    return (
        components.hand
        + components.object
        + weights.alpha * components.switcher
        + weights.gamma_init * components.init
        + weights.gamma_roi * components.roi
        + weights.gamma_mano * components.mano
    )

"""기본 설정값과 환경변수 기반 설정

모든 내부 단위는 밀리미터와 라디안입니다. 도(degree)는 CLI 경계에서만 받습니다.
"""

import math
import os
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field

# 파지(grasping) 라벨 임계값
DEFAULT_RRE_THRESHOLD_DEG = 5.0
DEFAULT_RTE_THRESHOLD_MM = 10.0

# 가림(occlusion) 기반 필터링 임계값
DEFAULT_TAU = 0.1

# 손실 가중치
DEFAULT_ALPHA = 10.0
DEFAULT_GAMMA_INIT = 0.1
DEFAULT_GAMMA_ROI = 0.1
DEFAULT_GAMMA_MANO = 0.5

# 후보 control strength
DEFAULT_STRENGTH_CANDIDATES: Tuple[float, ...] = (0.25, 0.4, 0.55, 0.7, 0.85, 1.0)

# 노이즈 스케줄: 1000 기본 스텝의 선형 beta를 50 DDIM 스텝으로 서브샘플링
DEFAULT_DDIM_STEPS = 50
DEFAULT_BASE_STEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 2e-2
DEFAULT_LATENT_STRIDE = 8

# 평가 지표
DEFAULT_AUC_MIN_MM = 0.0
DEFAULT_AUC_MAX_MM = 50.0
DEFAULT_AUC_STEPS = 100
DEFAULT_OCCLUSION_EDGES: Tuple[float, ...] = (0.25, 0.50, 0.75, 1.0)
DEFAULT_F_THRESHOLDS_MM: Tuple[float, float] = (5.0, 15.0)

# 객체 스위처 MLP
DEFAULT_SWITCHER_HIDDEN = 256

# 손 모델 카디널리티
NUM_JOINTS = 21
NUM_VERTICES = 778
NUM_MANO_POSE = 48
NUM_MANO_SHAPE = 10
DEFAULT_NUM_OBJECT_KEYPOINTS = 8

DEFAULT_THREADS = 1
DEFAULT_BRIDGE_TIMEOUT = 60.0


def get_thread_count() -> int:
    """기본 워커 수를 반환합니다. (HOPE_TOOLKIT_THREADS)"""
    try:
        value = int(os.environ.get("HOPE_TOOLKIT_THREADS", DEFAULT_THREADS))
    except ValueError:
        return DEFAULT_THREADS
    return max(1, value)


def get_bridge_timeout() -> float:
    """외부 프로세스 브리지의 응답 대기 시간(초)을 반환합니다."""
    try:
        return float(os.environ.get("HOPE_TOOLKIT_BRIDGE_TIMEOUT", DEFAULT_BRIDGE_TIMEOUT))
    except ValueError:
        return DEFAULT_BRIDGE_TIMEOUT


def get_selftest_fault() -> Optional[str]:
    """셀프테스트에서 일부러 교란할 검사 이름 (테스트 훅)"""
    value = os.environ.get("HOPE_TOOLKIT_SELFTEST_FAULT", "").strip()
    return value or None


def auc_thresholds(
    lo: float = DEFAULT_AUC_MIN_MM,
    hi: float = DEFAULT_AUC_MAX_MM,
    steps: int = DEFAULT_AUC_STEPS,
) -> List[float]:
    """AUC 계산용 균일 임계값 (양 끝 포함, steps 구간)"""
    return [lo + (hi - lo) * i / steps for i in range(steps + 1)]


def deg_to_rad(deg: float) -> float:
    return deg * math.pi / 180.0


class RunConfig(BaseModel):
    """명령 공통 실행 설정"""

    seed: int = 0
    threads: int = Field(default_factory=get_thread_count, ge=1)
    output: Optional[str] = None
    format: Literal["table", "structured"] = "table"


class TrainingStage(BaseModel):
    name: str
    epochs: int
    enhancement: bool


class TrainingSchedule(BaseModel):
    """2단계 학습 스케줄 기술자 (학습 자체는 범위 밖)"""

    stages: List[TrainingStage] = [
        TrainingStage(name="stage1", epochs=30, enhancement=False),
        TrainingStage(name="stage2", epochs=40, enhancement=True),
    ]
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    lr_decay: float = 0.7
    lr_decay_every: int = 10
    batch_size: int = 64
    input_size: int = 128
    augmentation: dict = {
        "scale": 0.2,
        "rotation_deg": 180.0,
        "translation": 0.1,
        "color_jitter": 0.5,
    }

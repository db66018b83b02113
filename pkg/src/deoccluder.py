"""마스크 기반 확산 repaint 스케줄러와 적응형 control strength 선택

실제 생성 모델은 DenoiserOracle 계약으로 대체합니다. 저장소에는 장난감 오라클
(항등, 선형 축소, 상수)과 외부 프로세스 브리지(bridge.py)가 들어 있습니다.

배경 샘플의 난수는 numpy.random.default_rng([seed, t])에서만 뽑으므로 마스크
바깥 값은 x0, 스케줄, 시드에만 의존하고 디노이저와 스레드 수에는 의존하지 않습니다.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterator, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .config import (
    DEFAULT_BASE_STEPS,
    DEFAULT_BETA_END,
    DEFAULT_BETA_START,
    DEFAULT_DDIM_STEPS,
    DEFAULT_STRENGTH_CANDIDATES,
)
from .errors import (
    ActionableError,
    AllCandidatesFailed,
    DegenerateInput,
    DenoiserFailure,
    EmptyCandidates,
    InputError,
    ShapeMismatch,
    StepOutOfRange,
)
from .logger import trace, warn
from .metrics import mean_position_error


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """스텝 t = 0…T의 누적 신호 비율 ᾱ_t. (0, 1] 범위, t에 대해 비증가."""

    alpha_bar: np.ndarray

    def __post_init__(self) -> None:
        a = np.array(self.alpha_bar, dtype=float).reshape(-1)
        if a.size < 2:
            raise DegenerateInput("노이즈 스케줄에는 최소 2개의 스텝이 필요합니다")
        if np.any(a <= 0) or np.any(a > 1) or not np.all(np.isfinite(a)):
            raise DegenerateInput("ᾱ 값은 (0, 1] 범위여야 합니다")
        if np.any(np.diff(a) > 0):
            raise DegenerateInput("ᾱ는 t에 대해 비증가여야 합니다")
        a.setflags(write=False)
        object.__setattr__(self, "alpha_bar", a)

    @property
    def steps(self) -> int:
        return self.alpha_bar.size - 1

    def at(self, t: int) -> float:
        if not 0 <= t <= self.steps:
            raise StepOutOfRange(f"스텝 {t}가 범위 [0, {self.steps}] 밖입니다")
        return float(self.alpha_bar[t])

    def to_dict(self) -> Dict[str, Any]:
        return {"alpha_bar": [float(v) for v in self.alpha_bar], "steps": self.steps}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NoiseSchedule":
        return cls(np.asarray(data["alpha_bar"], dtype=float))


def linear_schedule(
    steps: int = DEFAULT_DDIM_STEPS,
    base_steps: int = DEFAULT_BASE_STEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """선형 β를 base_steps 동안 누적한 뒤 균등 간격으로 steps개를 뽑습니다. ᾱ[0] = 1."""
    if steps < 1 or base_steps < steps:
        raise InputError(f"스텝 수가 잘못되었습니다: steps={steps}, base_steps={base_steps}")
    betas = np.linspace(beta_start, beta_end, base_steps)
    cumulative = np.cumprod(1.0 - betas)
    ratio = base_steps // steps
    picks = np.arange(1, steps + 1) * ratio - 1
    return NoiseSchedule(np.concatenate([[1.0], cumulative[picks]]))


@dataclass(frozen=True, eq=False)
class LatentState:
    x: np.ndarray
    t: int


@dataclass(frozen=True)
class StrengthCandidates:
    values: Tuple[float, ...] = DEFAULT_STRENGTH_CANDIDATES

    def __post_init__(self) -> None:
        values = tuple(float(v) for v in self.values)
        if not values:
            raise EmptyCandidates("후보 strength가 없습니다")
        if any(not 0.0 < v <= 1.0 for v in values):
            raise InputError(f"strength는 (0, 1] 범위여야 합니다: {values}")
        if any(b < a for a, b in zip(values, values[1:])):
            raise InputError(f"strength는 오름차순이어야 합니다: {values}")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)


class DenoiserOracle(Protocol):
    def __call__(
        self, x_t: np.ndarray, x_masked: np.ndarray, depth: Optional[np.ndarray], t: int, strength: float
    ) -> np.ndarray:
        """x_{t−1} 제안을 반환합니다. 출력 형상은 x_t와 같아야 합니다."""
        ...


class IdentityDenoiser:
    def __call__(self, x_t, x_masked, depth, t, strength):
        return np.array(x_t, dtype=float)


class LinearShrinkDenoiser:
    """x_{t−1} = factor · x_t"""

    def __init__(self, factor: float = 0.9):
        self.factor = factor

    def __call__(self, x_t, x_masked, depth, t, strength):
        return self.factor * np.asarray(x_t, dtype=float)


class ConstantDenoiser:
    def __init__(self, value: float):
        self.value = value

    def __call__(self, x_t, x_masked, depth, t, strength):
        return np.full(np.shape(x_t), self.value, dtype=float)


def ddim_step(x_t: np.ndarray, eps: np.ndarray, alpha_t: float, alpha_prev: float) -> np.ndarray:
    """결정적 DDIM 갱신 (η = 0)"""
    x0_pred = (x_t - math.sqrt(1.0 - alpha_t) * eps) / math.sqrt(alpha_t)
    return math.sqrt(alpha_prev) * x0_pred + math.sqrt(1.0 - alpha_prev) * eps


class EpsilonDenoiser:
    """노이즈 예측 함수 ε(x_t, x_masked, depth, t, strength)를 DDIM 스텝으로 감싸는 오라클"""

    def __init__(self, predict_eps: Callable[..., np.ndarray], schedule: NoiseSchedule):
        self.predict_eps = predict_eps
        self.schedule = schedule

    def __call__(self, x_t, x_masked, depth, t, strength):
        eps = np.asarray(self.predict_eps(x_t, x_masked, depth, t, strength), dtype=float)
        return ddim_step(np.asarray(x_t, dtype=float), eps, self.schedule.at(t), self.schedule.at(t - 1))


def step_noise(shape: Tuple[int, ...], seed: int, t: int) -> np.ndarray:
    return np.random.default_rng([seed, t]).standard_normal(shape)


def sample_background(
    x0: np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    seed: int,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """√ᾱ_t·x₀ + √(1−ᾱ_t)·ε. noise를 주면 시드 대신 그 값을 ε로 씁니다."""
    alpha = schedule.at(t)
    x0 = np.asarray(x0, dtype=float)
    if alpha == 1.0:
        return x0.copy()
    eps = step_noise(x0.shape, seed, t) if noise is None else np.asarray(noise, dtype=float)
    if eps.shape != x0.shape:
        raise ShapeMismatch(f"노이즈 형상이 다릅니다: {eps.shape} vs {x0.shape}")
    return math.sqrt(alpha) * x0 + math.sqrt(1.0 - alpha) * eps


def _binary_mask(mask: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    m = np.asarray(mask, dtype=float)
    try:
        broadcast = np.broadcast_shapes(m.shape, shape)
    except ValueError:
        broadcast = None
    if broadcast != tuple(shape):
        raise ShapeMismatch(f"마스크 형상 {m.shape}을 잠재 형상 {shape}에 맞출 수 없습니다")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise InputError("repaint 마스크는 0/1 이진값이어야 합니다")
    return np.broadcast_to(m, shape) == 1.0


def repaint_step(
    state: LatentState,
    x0: np.ndarray,
    mask: np.ndarray,
    denoiser: DenoiserOracle,
    schedule: NoiseSchedule,
    strength: float,
    seed: int,
    depth: Optional[np.ndarray] = None,
) -> LatentState:
    """x_{t−1} = m ⊙ (디노이저 제안) + (1−m) ⊙ (배경 샘플)"""
    x_t = np.asarray(state.x, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if x_t.shape != x0.shape:
        raise ShapeMismatch(f"잠재 형상이 다릅니다: {x_t.shape} vs {x0.shape}")
    if not 1 <= state.t <= schedule.steps:
        raise StepOutOfRange(f"repaint 스텝은 [1, {schedule.steps}] 범위여야 합니다: {state.t}")
    m = _binary_mask(mask, x0.shape)

    x_masked = np.where(m, 0.0, x0)
    try:
        proposal = np.asarray(denoiser(x_t, x_masked, depth, state.t, strength), dtype=float)
    except ActionableError:
        raise
    except Exception as e:
        raise DenoiserFailure(f"디노이저 호출 실패 (t={state.t}): {e}")
    if proposal.shape != x0.shape:
        raise DenoiserFailure(f"디노이저 출력 형상이 다릅니다: {proposal.shape} vs {x0.shape}")

    background = sample_background(x0, state.t - 1, schedule, seed)
    return LatentState(np.where(m, proposal, background), state.t - 1)


def initial_latent(shape: Tuple[int, ...], schedule: NoiseSchedule, seed: int) -> LatentState:
    """x_T ~ N(0, I). 스텝 노이즈와 겹치지 않도록 t = T + 1 시드 슬롯을 씁니다."""
    return LatentState(step_noise(shape, seed, schedule.steps + 1), schedule.steps)


def repaint_trace(
    x0: np.ndarray,
    mask: np.ndarray,
    depth: Optional[np.ndarray],
    denoiser: DenoiserOracle,
    schedule: NoiseSchedule,
    strength: float,
    seed: int,
    initial: Optional[LatentState] = None,
) -> Iterator[LatentState]:
    """x_T부터 x_0까지의 잠재 상태를 차례로 내놓습니다.

    initial을 주면 시드로 x_T를 뽑는 대신 그 상태에서 시작합니다.
    """
    x0 = np.asarray(x0, dtype=float)
    state = initial_latent(x0.shape, schedule, seed) if initial is None else initial
    yield state
    while state.t > 0:
        state = repaint_step(state, x0, mask, denoiser, schedule, strength, seed, depth)
        yield state


def repaint_run(
    x0: np.ndarray,
    mask: np.ndarray,
    depth: Optional[np.ndarray],
    denoiser: DenoiserOracle,
    schedule: NoiseSchedule,
    strength: float,
    seed: int,
) -> np.ndarray:
    """t = T부터 1까지 repaint_step을 반복해 최종 잠재를 반환합니다."""
    state = None
    for state in repaint_trace(x0, mask, depth, denoiser, schedule, strength, seed):
        pass
    return state.x


def generate_candidates(
    x0: np.ndarray,
    mask: np.ndarray,
    depth: Optional[np.ndarray],
    denoiser: DenoiserOracle,
    schedule: NoiseSchedule,
    candidates: StrengthCandidates,
    seed: int,
    threads: int = 1,
) -> List[np.ndarray]:
    """후보 strength별 repaint 결과. 후보마다 독립 실행이며 순서는 후보 순서와 같습니다."""

    def run(strength: float) -> np.ndarray:
        return repaint_run(x0, mask, depth, denoiser, schedule, strength, seed)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(run, candidates.values))


def select_control_strength(
    candidates: StrengthCandidates, scores: Sequence[float]
) -> Tuple[float, int]:
    """J-PE가 가장 작은 후보를 고릅니다. 동점이면 작은 strength. +∞는 실패로 봅니다."""
    values = candidates.values
    if not values:
        raise EmptyCandidates("후보 strength가 없습니다")
    s = [float(v) for v in scores]
    if len(s) != len(values):
        raise ShapeMismatch(f"점수 개수({len(s)})가 후보 개수({len(values)})와 다릅니다")
    if any(math.isnan(v) or v == -math.inf for v in s):
        raise InputError("점수에 NaN 또는 -∞가 있습니다")
    if all(math.isinf(v) for v in s):
        raise AllCandidatesFailed("모든 후보의 자세 추정이 실패했습니다")
    best = min(range(len(s)), key=lambda i: (s[i], values[i]))
    return values[best], best


class PoseEstimator(Protocol):
    def __call__(self, candidate: Any) -> np.ndarray:
        """후보 이미지/잠재에서 21×3 관절(mm)을 추정합니다."""
        ...


def score_candidates(gt_joints: np.ndarray, estimator: PoseEstimator, candidates: Sequence[Any]) -> np.ndarray:
    """후보별 J-PE. 추정기 예외와 유한하지 않은 J-PE는 모두 +∞(실패)로 기록합니다."""
    scores = np.empty(len(candidates))
    for i, candidate in enumerate(candidates):
        try:
            joints = np.asarray(estimator(candidate), dtype=float)
            score = mean_position_error(joints, gt_joints)
        except Exception as e:
            warn(f"후보 {i} 자세 추정 실패: {type(e).__name__}: {e}")
            score = math.inf
        if not math.isfinite(score):
            if score != math.inf:
                warn(f"후보 {i}의 J-PE가 유한하지 않아 실패로 처리합니다: {score}")
            score = math.inf
        scores[i] = score
    return scores


@dataclass(frozen=True, eq=False)
class DeocclusionResult:
    strength: float
    index: int
    latent: np.ndarray
    scores: np.ndarray


def adaptive_deocclude(
    x0: np.ndarray,
    mask: np.ndarray,
    depth: Optional[np.ndarray],
    denoiser: DenoiserOracle,
    schedule: NoiseSchedule,
    gt_joints: np.ndarray,
    estimator: PoseEstimator,
    candidates: StrengthCandidates = StrengthCandidates(),
    seed: int = 0,
    threads: int = 1,
) -> DeocclusionResult:
    """후보 strength마다 생성하고, 추정 J-PE가 가장 낮은 결과를 고릅니다."""
    latents = generate_candidates(x0, mask, depth, denoiser, schedule, candidates, seed, threads)
    scores = score_candidates(gt_joints, estimator, latents)
    strength, index = select_control_strength(candidates, scores)
    trace(f"선택된 control strength: {strength} (J-PE {scores[index]:.3f}mm)")
    return DeocclusionResult(strength, index, latents[index], scores)

"""강체/상사 변환, 회전 오차, Procrustes 정렬, 카메라 투영, EPnP

단위는 내부적으로 밀리미터와 라디안으로 고정합니다.
모든 함수는 불변 입력에 대한 순수 함수이므로 스레드 간 동기화 없이 호출할 수 있습니다.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateInput,
    InsufficientPoints,
    NumericalFailure,
    ShapeMismatch,
)

ORTHONORMAL_TOL = 1e-9
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60
MIN_DEPTH = 1e-9
GN_MAX_ITERS = 10
GN_STEP_TOL = 1e-10


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Rotation3:
    """3x3 회전 행렬 (mᵀm = I, det = +1, 허용 오차 1e-9)"""

    m: np.ndarray

    def __post_init__(self) -> None:
        m = _frozen(self.m)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise ShapeMismatch(f"회전 행렬은 유한한 3x3이어야 합니다: {m.shape}")
        if np.max(np.abs(m.T @ m - np.eye(3))) > ORTHONORMAL_TOL:
            raise DegenerateInput("회전 행렬이 직교 정규가 아닙니다")
        if abs(np.linalg.det(m) - 1.0) > ORTHONORMAL_TOL:
            raise DegenerateInput("회전 행렬의 행렬식이 +1이 아닙니다")
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Rotation3":
        return cls(np.eye(3))

    @classmethod
    def about_axis(cls, axis: Union[str, Sequence[float]], angle: float) -> "Rotation3":
        """축-각 표현(Rodrigues)으로 회전을 만듭니다. axis는 "x"/"y"/"z" 또는 3-벡터."""
        if isinstance(axis, str):
            axis = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}[axis]
        k = np.asarray(axis, dtype=float)
        norm = np.linalg.norm(k)
        if norm == 0:
            raise DegenerateInput("회전 축이 0 벡터입니다")
        k = k / norm
        kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
        m = np.eye(3) + math.sin(angle) * kx + (1.0 - math.cos(angle)) * (kx @ kx)
        return cls(m)

    @classmethod
    def nearest(cls, m: np.ndarray) -> "Rotation3":
        """임의의 3x3 행렬에 가장 가까운 회전 (SVD 투영)"""
        u, _, vt = svd3(np.asarray(m, dtype=float))
        d = np.diag([1.0, 1.0, math.copysign(1.0, np.linalg.det(u @ vt))])
        return cls(u @ d @ vt)

    def compose(self, other: "Rotation3") -> "Rotation3":
        return Rotation3(self.m @ other.m)

    def inverse(self) -> "Rotation3":
        return Rotation3(self.m.T)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.m.T


@dataclass(frozen=True, eq=False)
class RigidPose:
    """객체 자세 (회전 + 밀리미터 단위 이동). x ↦ R·x + t"""

    rotation: Rotation3
    translation: np.ndarray

    def __post_init__(self) -> None:
        t = _frozen(self.translation).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ShapeMismatch(f"이동 벡터는 유한한 3-벡터여야 합니다: {t.shape}")
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(Rotation3.identity(), np.zeros(3))

    @classmethod
    def from_matrix(cls, rotation: np.ndarray, translation: Sequence[float]) -> "RigidPose":
        return cls(Rotation3(rotation), np.asarray(translation, dtype=float))

    def apply(self, points: Union["PointSet3", np.ndarray]) -> np.ndarray:
        return self.rotation.apply(_as_array(points)) + self.translation

    def compose(self, other: "RigidPose") -> "RigidPose":
        """self ∘ other (other를 먼저 적용)"""
        return RigidPose(
            self.rotation.compose(other.rotation),
            self.rotation.m @ other.translation + self.translation,
        )


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """상사 변환 x ↦ s·R·x + t"""

    scale: float
    rotation: Rotation3
    translation: np.ndarray

    def __post_init__(self) -> None:
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise DegenerateInput(f"스케일은 양수여야 합니다: {self.scale}")
        t = _frozen(self.translation).reshape(-1)
        if t.shape != (3,):
            raise ShapeMismatch(f"이동 벡터는 3-벡터여야 합니다: {t.shape}")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "translation", t)

    def apply(self, points: Union["PointSet3", np.ndarray]) -> np.ndarray:
        return self.scale * self.rotation.apply(_as_array(points)) + self.translation


@dataclass(frozen=True)
class CameraIntrinsics:
    """핀홀 카메라 내부 파라미터 (픽셀 단위)"""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise DegenerateInput(f"초점 거리는 양수여야 합니다: fx={self.fx}, fy={self.fy}")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class PointSet3:
    """N×3 점 집합 (밀리미터, N ≥ 1, 모두 유한)"""

    points: np.ndarray

    def __post_init__(self) -> None:
        p = _frozen(self.points)
        if p.ndim != 2 or p.shape[1] != 3 or p.shape[0] < 1:
            raise ShapeMismatch(f"점 집합은 N×3 (N ≥ 1)이어야 합니다: {p.shape}")
        if not np.all(np.isfinite(p)):
            raise DegenerateInput("점 집합에 유한하지 않은 값이 있습니다")
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return self.points.shape[0]


def _as_array(points: Union[PointSet3, np.ndarray, Sequence]) -> np.ndarray:
    if isinstance(points, PointSet3):
        return points.points
    return PointSet3(np.asarray(points, dtype=float)).points


def relative_rotation_error(a: Rotation3, b: Rotation3) -> float:
    """두 회전 사이의 등방성 회전 오차 (라디안, [0, π])"""
    cos = (np.trace(a.m.T @ b.m) - 1.0) / 2.0
    # 부동소수점 trace가 경계를 ~1e-15 넘을 수 있음
    return float(math.acos(min(1.0, max(-1.0, cos))))


def relative_translation_error(a: Sequence[float], b: Sequence[float]) -> float:
    """이동 벡터 차이의 유클리드 노름 (밀리미터)"""
    diff = np.asarray(a, dtype=float).reshape(-1) - np.asarray(b, dtype=float).reshape(-1)
    if diff.shape != (3,):
        raise ShapeMismatch("이동 벡터는 3-벡터여야 합니다")
    return float(np.linalg.norm(diff))


def svd3(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """3x3 행렬의 특이값 분해 (단측 cyclic Jacobi)

    Returns:
        (U, Σ, Vᵀ). Σ는 내림차순 비음수, U와 V는 직교 정규.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise ShapeMismatch(f"svd3 입력은 유한한 3x3이어야 합니다: {m.shape}")

    w = m.copy()
    v = np.eye(3)
    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(2):
            for q in range(p + 1, 3):
                alpha = w[:, p] @ w[:, p]
                beta = w[:, q] @ w[:, q]
                gamma = w[:, p] @ w[:, q]
                if alpha == 0.0 or beta == 0.0:
                    continue
                if abs(gamma) <= JACOBI_TOL * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                wp, wq = w[:, p].copy(), w[:, q].copy()
                w[:, p], w[:, q] = c * wp - s * wq, s * wp + c * wq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            break

    sigma = np.linalg.norm(w, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    w = w[:, order]
    v = v[:, order]

    u = np.zeros((3, 3))
    floor = sigma[0] * 1e-12
    rank = 0
    for i in range(3):
        if sigma[i] > floor:
            u[:, i] = w[:, i] / sigma[i]
            rank += 1
    # 0 특이값에 대응하는 U 열은 직교 보완으로 채움
    if rank == 0:
        u = np.eye(3)
    elif rank == 1:
        seed = np.eye(3)[int(np.argmin(np.abs(u[:, 0])))]
        u1 = seed - (seed @ u[:, 0]) * u[:, 0]
        u[:, 1] = u1 / np.linalg.norm(u1)
        u[:, 2] = np.cross(u[:, 0], u[:, 1])
    elif rank == 2:
        u[:, 2] = np.cross(u[:, 0], u[:, 1])
    return u, sigma, v.T


def procrustes_align(
    source: Union[PointSet3, np.ndarray],
    target: Union[PointSet3, np.ndarray],
    with_scale: bool = True,
) -> SimilarityTransform:
    """Σ‖s·R·xᵢ + t − yᵢ‖²를 최소화하는 상사 변환 (Umeyama 닫힌 해)

    with_scale=False이면 s = 1로 고정한 강체 정렬(Kabsch)을 수행합니다.
    """
    x = _as_array(source)
    y = _as_array(target)
    if x.shape != y.shape:
        raise ShapeMismatch(f"점 개수가 다릅니다: {x.shape} vs {y.shape}")
    n = x.shape[0]
    if n < 3:
        raise DegenerateInput(f"Procrustes 정렬에는 최소 3개의 점이 필요합니다: {n}")

    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    yc = y - mu_y
    var_x = float(np.sum(xc * xc)) / n
    if var_x == 0.0:
        raise DegenerateInput("소스 점들이 모두 한 점에 있습니다")
    _, spread, _ = svd3(xc.T @ xc)
    if spread[1] <= 1e-12 * spread[0]:
        raise DegenerateInput("소스 점들이 한 직선 위에 있습니다")

    cov = yc.T @ xc / n
    u, d, vt = svd3(cov)
    s = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2] = -1.0
    r = u @ np.diag(s) @ vt
    scale = float(np.sum(d * s)) / var_x if with_scale else 1.0
    if scale <= 0:
        raise DegenerateInput("정렬 스케일이 양수가 아닙니다")
    t = mu_y - scale * (r @ mu_x)
    return SimilarityTransform(scale, Rotation3(r), t)


def project_points(
    points: Union[PointSet3, np.ndarray], pose: RigidPose, cam: CameraIntrinsics
) -> np.ndarray:
    """핀홀 투영. 반환값은 N×2 픽셀 좌표."""
    pc = pose.apply(_as_array(points))
    z = pc[:, 2]
    if np.any(z <= MIN_DEPTH):
        raise BehindCamera(f"카메라 뒤에 있는 점이 있습니다 (최소 깊이 {float(z.min())})")
    u = cam.fx * pc[:, 0] / z + cam.cx
    v = cam.fy * pc[:, 1] / z + cam.cy
    return np.stack([u, v], axis=1)


def reprojection_error(
    model_points: Union[PointSet3, np.ndarray],
    image_points: np.ndarray,
    pose: RigidPose,
    cam: CameraIntrinsics,
) -> float:
    """평균 재투영 오차 (픽셀). 카메라 뒤로 가는 자세는 무한대."""
    try:
        projected = project_points(model_points, pose, cam)
    except BehindCamera:
        return math.inf
    return float(np.mean(np.linalg.norm(projected - image_points, axis=1)))


# ---------------------------------------------------------------------------
# EPnP
# ---------------------------------------------------------------------------


def _control_points(pw: np.ndarray) -> np.ndarray:
    """무게중심과 주성분 방향으로 제어점을 정합니다. 평면이면 3개, 아니면 4개."""
    centroid = pw.mean(axis=0)
    centered = pw - centroid
    _, eig, vt = svd3(centered.T @ centered / pw.shape[0])
    if eig[1] <= 1e-12 * max(eig[0], 1e-300):
        raise NumericalFailure("모델 점들이 한 직선 위에 있어 자세를 결정할 수 없습니다")
    planar = eig[2] <= 1e-12 * eig[0]
    count = 2 if planar else 3
    controls = [centroid + math.sqrt(eig[i]) * vt[i] for i in range(count)]
    controls.append(centroid)
    return np.array(controls)


def _barycentric(pw: np.ndarray, cw: np.ndarray) -> np.ndarray:
    """pw = alphas @ cw, Σ alphas = 1을 만족하는 (n, nc) 동차 무게중심 좌표"""
    nc = cw.shape[0]
    lhs = np.vstack([cw.T, np.ones((1, nc))])
    rhs = np.vstack([pw.T, np.ones((1, pw.shape[0]))])
    alphas, _, rank, _ = np.linalg.lstsq(lhs, rhs, rcond=None)
    if rank < nc:
        raise NumericalFailure("제어점 기저가 퇴화했습니다")
    return alphas.T


def _projection_matrix(uv: np.ndarray, cam: CameraIntrinsics, alphas: np.ndarray) -> np.ndarray:
    n, nc = alphas.shape
    m = np.zeros((2 * n, 3 * nc))
    m[0::2, 0::3] = alphas * cam.fx
    m[0::2, 2::3] = alphas * (cam.cx - uv[:, 0])[:, None]
    m[1::2, 1::3] = alphas * cam.fy
    m[1::2, 2::3] = alphas * (cam.cy - uv[:, 1])[:, None]
    return m


def _pairs(nc: int) -> List[Tuple[int, int]]:
    return [(i, j) for i in range(nc) for j in range(i + 1, nc)]


def _kernel_differences(kernel: np.ndarray, nc: int) -> np.ndarray:
    """(pairs, dims, 3) 배열: 각 제어점 쌍에 대한 커널 벡터 차이"""
    dims = kernel.shape[1]
    pairs = _pairs(nc)
    diffs = np.empty((len(pairs), dims, 3))
    for row, (i, j) in enumerate(pairs):
        diffs[row] = (kernel[3 * i:3 * i + 3, :] - kernel[3 * j:3 * j + 3, :]).T
    return diffs


def _linearized_betas(diffs: np.ndarray, rho: np.ndarray, dims: int) -> Optional[np.ndarray]:
    """β_aβ_b 곱을 미지수로 선형화해 N=dims 경우의 초기 β를 구합니다."""
    index = [(a, b) for a in range(dims) for b in range(a, dims)]
    if len(index) > diffs.shape[0]:
        return None
    lin = np.empty((diffs.shape[0], len(index)))
    for col, (a, b) in enumerate(index):
        factor = 1.0 if a == b else 2.0
        lin[:, col] = factor * np.sum(diffs[:, a, :] * diffs[:, b, :], axis=1)
    solution, *_ = np.linalg.lstsq(lin, rho, rcond=None)
    if not np.all(np.isfinite(solution)):
        return None
    lookup = {pair: solution[col] for col, pair in enumerate(index)}
    betas = np.zeros(diffs.shape[1])
    b00 = lookup[(0, 0)]
    betas[0] = math.sqrt(abs(b00))
    for k in range(1, dims):
        sign = -1.0 if (b00 > 0) ^ (lookup[(0, k)] > 0) else 1.0
        betas[k] = sign * math.sqrt(abs(lookup[(k, k)]))
    return betas


def _camera_points(kernel: np.ndarray, betas: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    nc = alphas.shape[1]
    cc = (kernel @ betas).reshape(nc, 3)
    return alphas @ cc


def _fix_scale_and_sign(
    kernel: np.ndarray, betas: np.ndarray, alphas: np.ndarray, pw: np.ndarray
) -> Optional[np.ndarray]:
    """무게중심 거리 비로 스케일을 맞추고 양의 깊이가 되도록 부호를 고정합니다."""
    pc = _camera_points(kernel, betas, alphas)
    dist_c = np.linalg.norm(pc - pc.mean(axis=0), axis=1)
    dist_w = np.linalg.norm(pw - pw.mean(axis=0), axis=1)
    denom = float(dist_c @ dist_c)
    if denom == 0.0 or not math.isfinite(denom):
        return None
    scaled = betas * (float(dist_c @ dist_w) / denom)
    if np.mean(_camera_points(kernel, scaled, alphas)[:, 2]) < 0:
        scaled = -scaled
    return scaled


def _gauss_newton(diffs: np.ndarray, betas: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """제어점 간 거리 제약 ‖Σ βₐ Δvₐ‖² = ρ에 대한 Gauss-Newton 정제"""
    gram = np.einsum("pai,pbi->pab", diffs, diffs)
    betas = betas.copy()
    for _ in range(GN_MAX_ITERS):
        half_jac = gram @ betas
        residual = half_jac @ betas - rho
        step, *_ = np.linalg.lstsq(2.0 * half_jac, -residual, rcond=None)
        if not np.all(np.isfinite(step)):
            break
        betas = betas + step
        if np.linalg.norm(step) <= GN_STEP_TOL * max(np.linalg.norm(betas), 1e-300):
            break
    return betas


def _pose_from_camera_points(pw: np.ndarray, pc: np.ndarray) -> Optional[RigidPose]:
    try:
        rigid = procrustes_align(pw, pc, with_scale=False)
    except DegenerateInput:
        return None
    return RigidPose(rigid.rotation, rigid.translation)


def solve_pnp_epnp(
    model_points: Union[PointSet3, np.ndarray],
    image_points: np.ndarray,
    cam: CameraIntrinsics,
    refine: bool = True,
) -> RigidPose:
    """EPnP로 2D-3D 대응에서 객체 자세를 복원합니다.

    제어점 4개(평면이면 3개)의 무게중심 좌표로 투영 제약을 세우고, 영공간
    조합 N=1..3 가운데 재투영 오차가 가장 작은 해를 고릅니다. refine=True이면
    각 후보의 β 계수를 Gauss-Newton으로 정제합니다.
    """
    pw = _as_array(model_points)
    uv = np.asarray(image_points, dtype=float)
    n = pw.shape[0]
    if n < 4:
        raise InsufficientPoints(f"EPnP에는 최소 4개의 대응점이 필요합니다: {n}")
    if uv.shape != (n, 2) or not np.all(np.isfinite(uv)):
        raise ShapeMismatch(f"이미지 점은 유한한 {n}×2 배열이어야 합니다: {uv.shape}")

    cw = _control_points(pw)
    nc = cw.shape[0]
    alphas = _barycentric(pw, cw)
    m = _projection_matrix(uv, cam, alphas)

    try:
        _, _, vt = np.linalg.svd(m)
    except np.linalg.LinAlgError as e:
        raise NumericalFailure(f"투영 제약 행렬의 SVD에 실패했습니다: {e}")
    # 가장 작은 특이값 순서의 오른쪽 특이벡터
    kernel = vt[::-1][:nc].T
    diffs = _kernel_differences(kernel, nc)
    rho = np.array([np.sum((cw[i] - cw[j]) ** 2) for i, j in _pairs(nc)])

    best: Optional[Tuple[RigidPose, float]] = None
    for dims in range(1, min(3, nc) + 1):
        if dims == 1:
            initial: Optional[np.ndarray] = np.zeros(nc)
            initial[0] = 1.0
        else:
            initial = _linearized_betas(diffs, rho, dims)
        if initial is None:
            continue
        initial = _fix_scale_and_sign(kernel, initial, alphas, pw)
        if initial is None:
            continue
        candidates = [initial]
        if refine:
            refined = _gauss_newton(diffs, initial, rho)
            if np.mean(_camera_points(kernel, refined, alphas)[:, 2]) < 0:
                refined = -refined
            candidates.append(refined)
        for betas in candidates:
            pose = _pose_from_camera_points(pw, _camera_points(kernel, betas, alphas))
            if pose is None:
                continue
            err = reprojection_error(pw, uv, pose, cam)
            if math.isfinite(err) and (best is None or err < best[1]):
                best = (pose, err)

    if best is None:
        raise NumericalFailure("EPnP 해를 찾지 못했습니다 (제약 행렬 계수 부족)")
    return best[0]

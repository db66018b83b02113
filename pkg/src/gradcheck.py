"""중앙 차분 기울기 검증"""

from typing import Callable

import numpy as np

from .errors import ShapeMismatch

DEFAULT_EPS = 1e-5


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """f의 x에 대한 중앙 차분 기울기. x는 변경하지 않습니다."""
    base = np.array(x, dtype=float)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = float(f(base))
        flat[i] = original - eps
        minus = float(f(base))
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """‖a − n‖ / max(‖a‖ + ‖n‖, 1e-12). 두 기울기가 모두 0이면 0."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    if a.shape != n.shape:
        raise ShapeMismatch(f"기울기 형상이 다릅니다: {a.shape} vs {n.shape}")
    denom = float(np.linalg.norm(a) + np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n)) / max(denom, 1e-12)

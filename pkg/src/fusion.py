"""객체 스위처, 파지 인식 특징 융합, 멀티헤드 어텐션 수치 커널

forward/backward 쌍은 호출별 캐시 객체(FusionCall, AttentionCall)에 중간값을
보관합니다. 캐시 객체는 한 스레드에서만 쓰고, 서로 다른 캐시 객체는 동시에
실행해도 됩니다.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from .config import DEFAULT_SWITCHER_HIDDEN
from .errors import DegenerateInput, InputError, ShapeMismatch, StaleCache
from .tensorio import read_tensors, write_tensors

SoftmaxAxis = Literal["row", "column"]


def as_feature(value: np.ndarray, name: str = "feature") -> np.ndarray:
    """유한한 float 배열로 변환합니다."""
    array = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(array)):
        raise DegenerateInput(f"{name}에 유한하지 않은 값이 있습니다")
    return array


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def _softmax_backward(a: np.ndarray, grad_a: np.ndarray, axis: int) -> np.ndarray:
    return a * (grad_a - np.sum(grad_a * a, axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# 객체 스위처 MLP
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class MlpParams:
    """weights[i]는 (in, out), biases[i]는 (out,). 마지막 출력 차원은 2입니다."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self) -> None:
        self.weights = [as_feature(w, "weight") for w in self.weights]
        self.biases = [as_feature(b, "bias").reshape(-1) for b in self.biases]
        if not self.weights or len(self.weights) != len(self.biases):
            raise ShapeMismatch("가중치와 편향의 층 수가 맞지 않습니다")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeMismatch(f"{i}번째 층 형상이 잘못되었습니다: {w.shape}, {b.shape}")
            if i > 0 and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeMismatch(f"{i}번째 층 입력 차원이 이전 층 출력과 다릅니다")
        if self.weights[-1].shape[1] != 2:
            raise ShapeMismatch("스위처의 마지막 출력 차원은 2여야 합니다")

    @property
    def sizes(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)


def init_mlp_params(in_dim: int, hidden: Sequence[int] = (DEFAULT_SWITCHER_HIDDEN,), seed: int = 0) -> MlpParams:
    """He 초기화한 스위처 파라미터 (셀프테스트/실험용)"""
    rng = np.random.default_rng(seed)
    sizes = [in_dim, *hidden, 2]
    weights = [rng.standard_normal((a, b)) * math.sqrt(2.0 / a) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return MlpParams(weights, biases)


def switcher_forward(feat: np.ndarray, params: MlpParams) -> np.ndarray:
    """아핀 층 사이에 ReLU, 마지막 층은 선형. 반환값은 2개의 로짓."""
    x = as_feature(feat, "switcher input").reshape(-1)
    if x.shape[0] != params.sizes[0]:
        raise ShapeMismatch(f"스위처 입력 차원이 {params.sizes[0]}이어야 합니다: {x.shape[0]}")
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = x @ w + b
        if i < last:
            x = np.maximum(x, 0.0)
    return x


def switcher_loss(logits: np.ndarray, label: int) -> Tuple[float, np.ndarray]:
    """2-클래스 softmax 교차 엔트로피와 로짓에 대한 기울기"""
    z = as_feature(logits, "logits").reshape(-1)
    if z.shape != (2,):
        raise ShapeMismatch(f"로짓은 2개여야 합니다: {z.shape}")
    if label not in (0, 1):
        raise InputError(f"라벨은 0 또는 1이어야 합니다: {label}")
    margin = float(z[label] - z[1 - label])
    # softplus(-margin)
    loss = math.log1p(math.exp(-margin)) if margin >= 0 else -margin + math.log1p(math.exp(margin))
    grad = softmax(z)
    grad[label] -= 1.0
    return loss, grad


def switcher_decide(logits: np.ndarray) -> int:
    """s = argmax(logits). 동점이면 0 (파지 아님)."""
    z = np.asarray(logits, dtype=float).reshape(-1)
    return 1 if z[1] > z[0] else 0


# ---------------------------------------------------------------------------
# 파지 인식 융합
# ---------------------------------------------------------------------------


@dataclass
class FusionGradients:
    hand: np.ndarray
    object: np.ndarray
    branch: np.ndarray


class FusionCall:
    """융합 forward/backward 한 쌍의 캐시

    입력은 (C, ...) 형상이며 채널 뒤의 공간 차원은 하나로 펼쳐 처리합니다.
    """

    def __init__(self, softmax_axis: SoftmaxAxis = "row"):
        if softmax_axis not in ("row", "column"):
            raise InputError(f"softmax 축은 row 또는 column이어야 합니다: {softmax_axis}")
        self.softmax_axis = softmax_axis
        self._cache: Optional[Dict[str, object]] = None

    def forward(self, hand: np.ndarray, obj: np.ndarray, s: int) -> np.ndarray:
        hand = as_feature(hand, "hand feature")
        obj = as_feature(obj, "object feature")
        if hand.shape != obj.shape or hand.ndim < 2:
            raise ShapeMismatch(f"손/객체 특징 형상이 다릅니다: {hand.shape} vs {obj.shape}")
        if s not in (0, 1):
            raise InputError(f"스위처 결정은 0 또는 1이어야 합니다: {s}")

        channels = hand.shape[0]
        h = hand.reshape(channels, -1)
        branch = obj.reshape(channels, -1) if s == 1 else h
        f = np.concatenate([h, branch], axis=0)
        scale = 1.0 / math.sqrt(f.shape[0])
        axis = 1 if self.softmax_axis == "row" else 0
        a = softmax((f @ f.T) * scale, axis=axis)
        out = a @ f

        self._cache = {"f": f, "a": a, "scale": scale, "axis": axis, "s": s, "shape": hand.shape}
        return out.reshape((2 * channels,) + hand.shape[1:])

    def attention_weights(self) -> np.ndarray:
        if self._cache is None:
            raise StaleCache("forward가 먼저 실행되어야 합니다")
        return self._cache["a"]  # type: ignore[return-value]

    def backward(self, upstream: np.ndarray) -> FusionGradients:
        if self._cache is None:
            raise StaleCache("forward 없이 backward를 호출했습니다")
        f: np.ndarray = self._cache["f"]  # type: ignore[assignment]
        a: np.ndarray = self._cache["a"]  # type: ignore[assignment]
        scale: float = self._cache["scale"]  # type: ignore[assignment]
        axis: int = self._cache["axis"]  # type: ignore[assignment]
        shape: Tuple[int, ...] = self._cache["shape"]  # type: ignore[assignment]

        channels = shape[0]
        expected = (2 * channels,) + tuple(shape[1:])
        grad_out = np.asarray(upstream, dtype=float)
        if grad_out.shape != expected:
            raise StaleCache(f"forward 이후 형상이 바뀌었습니다: {grad_out.shape} vs {expected}")
        grad_out = grad_out.reshape(2 * channels, -1)

        grad_a = grad_out @ f.T
        grad_f = a.T @ grad_out
        grad_scores = _softmax_backward(a, grad_a, axis)
        grad_f = grad_f + (grad_scores + grad_scores.T) @ f * scale

        top, bottom = grad_f[:channels], grad_f[channels:]
        if self._cache["s"] == 1:
            grad_hand, grad_obj = top, bottom
        else:
            grad_hand, grad_obj = top + bottom, np.zeros_like(bottom)
        return FusionGradients(
            hand=grad_hand.reshape(shape),
            object=grad_obj.reshape(shape),
            branch=bottom.reshape(shape),
        )


def grasp_aware_fuse(hand: np.ndarray, obj: np.ndarray, s: int, softmax_axis: SoftmaxAxis = "row") -> np.ndarray:
    return FusionCall(softmax_axis).forward(hand, obj, s)


def fuse_backward(call: FusionCall, upstream: np.ndarray) -> FusionGradients:
    return call.backward(upstream)


# ---------------------------------------------------------------------------
# 멀티헤드 어텐션 (적응층 h)
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class AttentionParams:
    """x ↦ concat_h softmax(Q_h K_hᵀ/√d_h) V_h · W_o + b_o

    투영 행렬은 (d, d)이며 헤드 h는 열 블록 [h·d_h, (h+1)·d_h)를 씁니다.
    """

    heads: int
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    bq: Optional[np.ndarray] = None
    bk: Optional[np.ndarray] = None
    bv: Optional[np.ndarray] = None
    bo: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.wq, self.wk, self.wv, self.wo = (as_feature(w, "projection") for w in (self.wq, self.wk, self.wv, self.wo))
        d = self.wq.shape[0]
        for w in (self.wq, self.wk, self.wv, self.wo):
            if w.shape != (d, d):
                raise ShapeMismatch(f"투영 행렬은 ({d}, {d})여야 합니다: {w.shape}")
        if self.heads < 1 or d % self.heads:
            raise ShapeMismatch(f"모델 차원 {d}이 헤드 수 {self.heads}로 나누어떨어지지 않습니다")
        self.bq, self.bk, self.bv, self.bo = (
            np.zeros(d) if b is None else as_feature(b, "bias").reshape(d) for b in (self.bq, self.bk, self.bv, self.bo)
        )

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    @classmethod
    def identity(cls, dim: int, heads: int = 1) -> "AttentionParams":
        eye = np.eye(dim)
        return cls(heads, eye, eye, eye, eye)


def init_attention_params(dim: int, heads: int, seed: int = 0) -> AttentionParams:
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(dim)
    wq, wk, wv, wo = (rng.standard_normal((dim, dim)) * scale for _ in range(4))
    bq, bk, bv, bo = (rng.standard_normal(dim) * 0.1 for _ in range(4))
    return AttentionParams(heads, wq, wk, wv, wo, bq, bk, bv, bo)


@dataclass
class AttentionGradients:
    x: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    bq: np.ndarray
    bk: np.ndarray
    bv: np.ndarray
    bo: np.ndarray


class AttentionCall:
    """멀티헤드 어텐션 forward/backward 한 쌍의 캐시"""

    def __init__(self, params: AttentionParams):
        self.params = params
        self._cache: Optional[Dict[str, object]] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        x = as_feature(x, "attention input")
        if x.ndim != 2 or x.shape[1] != p.dim:
            raise ShapeMismatch(f"어텐션 입력은 (L, {p.dim})이어야 합니다: {x.shape}")
        q = x @ p.wq + p.bq
        k = x @ p.wk + p.bk
        v = x @ p.wv + p.bv
        dh = p.dim // p.heads
        scale = 1.0 / math.sqrt(dh)
        o = np.empty_like(v)
        weights = []
        for h in range(p.heads):
            cols = slice(h * dh, (h + 1) * dh)
            a = softmax((q[:, cols] @ k[:, cols].T) * scale, axis=1)
            o[:, cols] = a @ v[:, cols]
            weights.append(a)
        y = o @ p.wo + p.bo
        self._cache = {"x": x, "q": q, "k": k, "v": v, "o": o, "a": weights, "scale": scale}
        return y

    def attention_weights(self) -> List[np.ndarray]:
        if self._cache is None:
            raise StaleCache("forward가 먼저 실행되어야 합니다")
        return list(self._cache["a"])  # type: ignore[arg-type]

    def backward(self, upstream: np.ndarray) -> AttentionGradients:
        if self._cache is None:
            raise StaleCache("forward 없이 backward를 호출했습니다")
        p = self.params
        c = self._cache
        x: np.ndarray = c["x"]  # type: ignore[assignment]
        q: np.ndarray = c["q"]  # type: ignore[assignment]
        k: np.ndarray = c["k"]  # type: ignore[assignment]
        v: np.ndarray = c["v"]  # type: ignore[assignment]
        o: np.ndarray = c["o"]  # type: ignore[assignment]
        weights: List[np.ndarray] = c["a"]  # type: ignore[assignment]
        scale: float = c["scale"]  # type: ignore[assignment]

        dy = np.asarray(upstream, dtype=float)
        if dy.shape != o.shape:
            raise StaleCache(f"forward 이후 형상이 바뀌었습니다: {dy.shape} vs {o.shape}")

        grad_wo = o.T @ dy
        grad_bo = dy.sum(axis=0)
        do = dy @ p.wo.T
        dq = np.zeros_like(q)
        dk = np.zeros_like(k)
        dv = np.zeros_like(v)
        dh = p.dim // p.heads
        for h, a in enumerate(weights):
            cols = slice(h * dh, (h + 1) * dh)
            da = do[:, cols] @ v[:, cols].T
            dv[:, cols] = a.T @ do[:, cols]
            ds = _softmax_backward(a, da, axis=1)
            dq[:, cols] = ds @ k[:, cols] * scale
            dk[:, cols] = ds.T @ q[:, cols] * scale

        return AttentionGradients(
            x=dq @ p.wq.T + dk @ p.wk.T + dv @ p.wv.T,
            wq=x.T @ dq,
            wk=x.T @ dk,
            wv=x.T @ dv,
            wo=grad_wo,
            bq=dq.sum(axis=0),
            bk=dk.sum(axis=0),
            bv=dv.sum(axis=0),
            bo=grad_bo,
        )


def multihead_attention(x: np.ndarray, params: AttentionParams) -> np.ndarray:
    return AttentionCall(params).forward(x)


# ---------------------------------------------------------------------------
# 파라미터 파일
# ---------------------------------------------------------------------------


def save_mlp_params(params: MlpParams, path: Union[str, Path]) -> None:
    tensors: Dict[str, np.ndarray] = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        tensors[f"layer{i}.weight"] = w
        tensors[f"layer{i}.bias"] = b
    write_tensors(path, tensors)


def load_mlp_params(path: Union[str, Path]) -> MlpParams:
    tensors = read_tensors(path)
    weights, biases = [], []
    i = 0
    while f"layer{i}.weight" in tensors:
        weights.append(tensors[f"layer{i}.weight"])
        biases.append(tensors[f"layer{i}.bias"] if f"layer{i}.bias" in tensors else np.zeros(tensors[f"layer{i}.weight"].shape[1]))
        i += 1
    return MlpParams(weights, biases)


def save_attention_params(params: AttentionParams, path: Union[str, Path]) -> None:
    tensors = {name: getattr(params, name) for name in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")}
    tensors["heads"] = np.array(float(params.heads))
    write_tensors(path, tensors)


def load_attention_params(path: Union[str, Path]) -> AttentionParams:
    tensors = read_tensors(path)
    missing = [n for n in ("heads", "wq", "wk", "wv", "wo") if n not in tensors]
    if missing:
        raise InputError(f"어텐션 파라미터 파일에 텐서가 없습니다: {', '.join(missing)}")
    return AttentionParams(
        int(tensors["heads"]),
        tensors["wq"],
        tensors["wk"],
        tensors["wv"],
        tensors["wo"],
        tensors.get("bq"),
        tensors.get("bk"),
        tensors.get("bv"),
        tensors.get("bo"),
    )

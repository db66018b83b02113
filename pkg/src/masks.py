"""이진 마스크: IoU, 런 길이 인코딩, 팽창, 잠재 해상도 다운샘플링

마스크 이미지는 8비트 그레이스케일이며 0이 아닌 픽셀을 전경으로 봅니다.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np
from PIL import Image

from .errors import DimensionMismatch, EmptyUnion, InputError, ParseError, ShapeMismatch


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """행 우선 순서의 W×H 이진 마스크"""

    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits).astype(bool).reshape(-1)
        if self.width < 0 or self.height < 0 or bits.size != self.width * self.height:
            raise ShapeMismatch(
                f"마스크 크기가 맞지 않습니다: {self.width}x{self.height}, 비트 {bits.size}개"
            )
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "BinaryMask":
        """(H, W) 배열에서 마스크를 만듭니다. 0이 아닌 값은 전경입니다."""
        arr = np.asarray(array)
        if arr.ndim != 2:
            raise ShapeMismatch(f"마스크 배열은 2차원이어야 합니다: {arr.shape}")
        return cls(arr.shape[1], arr.shape[0], arr != 0)

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(width, height, np.zeros(width * height, dtype=bool))

    def to_array(self) -> np.ndarray:
        return self.bits.reshape(self.height, self.width)

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def same_bits(self, other: "BinaryMask") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and bool(np.array_equal(self.bits, other.bits))
        )


def load_mask_image(path: Union[str, Path]) -> BinaryMask:
    try:
        with Image.open(path) as img:
            gray = np.asarray(img.convert("L"))
    except FileNotFoundError:
        raise InputError(f"마스크 파일을 찾을 수 없습니다: {path}")
    except OSError as e:
        raise ParseError(f"마스크 이미지를 읽을 수 없습니다: {path} ({e})")
    return BinaryMask.from_array(gray)


def save_mask_image(mask: BinaryMask, path: Union[str, Path]) -> None:
    pixels = mask.to_array().astype(np.uint8) * 255
    Image.fromarray(pixels).save(path)


def rle_encode(mask: BinaryMask) -> List[int]:
    """배경 런부터 시작하는 교대 런 길이. 첫 픽셀이 전경이면 맨 앞이 0입니다."""
    flat = mask.bits.astype(np.int8)
    if flat.size == 0:
        return []
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def rle_decode(runs: Sequence[int], width: int, height: int) -> BinaryMask:
    if any(int(r) < 0 for r in runs):
        raise ParseError("런 길이는 음수일 수 없습니다")
    total = sum(int(r) for r in runs)
    if total != width * height:
        raise ParseError(f"런 길이 합({total})이 마스크 크기({width}x{height})와 다릅니다")
    values = np.arange(len(runs)) % 2 == 1
    bits = np.repeat(values, np.asarray(runs, dtype=np.int64))
    return BinaryMask(width, height, bits)


def _check_dims(a: BinaryMask, b: BinaryMask) -> None:
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(
            f"마스크 크기가 다릅니다: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    _check_dims(a, b)
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        raise EmptyUnion("두 마스크가 모두 비어 있어 IoU를 정의할 수 없습니다")
    return int(np.count_nonzero(a.bits & b.bits)) / union


def mask_union(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    _check_dims(a, b)
    return BinaryMask(a.width, a.height, a.bits | b.bits)


def dilate(mask: BinaryMask, radius: int) -> BinaryMask:
    """(2r+1)×(2r+1) 정사각 구조 요소로 팽창"""
    if radius < 0:
        raise InputError(f"팽창 반경은 음수일 수 없습니다: {radius}")
    if radius == 0 or mask.bits.size == 0:
        return mask
    arr = mask.to_array()
    padded = np.pad(arr, radius, mode="constant", constant_values=False)
    out = np.zeros_like(arr)
    size = 2 * radius + 1
    for dy in range(size):
        for dx in range(size):
            out |= padded[dy:dy + mask.height, dx:dx + mask.width]
    return BinaryMask.from_array(out)


def downsample_max(mask: BinaryMask, stride: int) -> np.ndarray:
    """stride×stride 최대값 풀링. 가장자리는 0으로 채웁니다.

    Returns:
        (ceil(H/stride), ceil(W/stride)) 크기의 {0.0, 1.0} float 배열
    """
    if stride < 1:
        raise InputError(f"stride는 1 이상이어야 합니다: {stride}")
    out_h = math.ceil(mask.height / stride)
    out_w = math.ceil(mask.width / stride)
    padded = np.zeros((out_h * stride, out_w * stride), dtype=bool)
    padded[:mask.height, :mask.width] = mask.to_array()
    pooled = padded.reshape(out_h, stride, out_w, stride).any(axis=(1, 3))
    return pooled.astype(float)

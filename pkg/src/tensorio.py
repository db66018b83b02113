"""특징 텐서 파일 입출력

형식:
    HOPE-TENSORS 1\\n
    <이름> <d1>x<d2>x...\\n     (텐서마다 한 줄, 0차원은 "scalar")
    END\\n
    헤더 순서대로 [uint32 LE 원소 개수][float32 LE 데이터] 블록
"""

import struct
from pathlib import Path
from typing import Dict, List, Mapping, Tuple, Union

import numpy as np

from .errors import InputError, ParseError

MAGIC = "HOPE-TENSORS 1"
END = "END"
_FLOAT32_LE = np.dtype("<f4")


def _format_shape(shape: Tuple[int, ...]) -> str:
    return "x".join(str(d) for d in shape) if shape else "scalar"


def _parse_shape(text: str) -> Tuple[int, ...]:
    if text == "scalar":
        return ()
    try:
        dims = tuple(int(d) for d in text.split("x"))
    except ValueError:
        raise ParseError(f"텐서 형상을 해석할 수 없습니다: {text}")
    if any(d < 0 for d in dims):
        raise ParseError(f"텐서 형상에 음수 차원이 있습니다: {text}")
    return dims


def encode_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    header: List[str] = [MAGIC]
    blocks: List[bytes] = []
    for name, value in tensors.items():
        if not name or any(c.isspace() for c in name):
            raise InputError(f"텐서 이름에 공백을 쓸 수 없습니다: {name!r}")
        array = np.asarray(value, dtype=_FLOAT32_LE)
        header.append(f"{name} {_format_shape(array.shape)}")
        blocks.append(struct.pack("<I", array.size) + np.ascontiguousarray(array).tobytes())
    header.append(END)
    return ("\n".join(header) + "\n").encode("ascii") + b"".join(blocks)


class TensorBundle:
    """텐서 파일 바이트를 해석하는 클래스"""

    def __init__(self, buffer: bytes):
        self.buffer = buffer

    def read(self) -> Dict[str, np.ndarray]:
        lines: List[str] = []
        offset = 0
        while True:
            end = self.buffer.find(b"\n", offset)
            if end < 0:
                raise ParseError("텐서 파일 헤더가 끝나지 않았습니다")
            line = self.buffer[offset:end].decode("ascii", errors="replace")
            offset = end + 1
            if line == END:
                break
            lines.append(line)

        if not lines or lines[0] != MAGIC:
            raise ParseError("유효한 텐서 파일이 아닙니다")

        tensors: Dict[str, np.ndarray] = {}
        for line in lines[1:]:
            parts = line.split(" ")
            if len(parts) != 2:
                raise ParseError(f"텐서 헤더 줄을 해석할 수 없습니다: {line}")
            name, shape = parts[0], _parse_shape(parts[1])
            if offset + 4 > len(self.buffer):
                raise ParseError(f"텐서 {name}의 길이 필드가 잘렸습니다")
            (count,) = struct.unpack("<I", self.buffer[offset:offset + 4])
            offset += 4
            expected = int(np.prod(shape)) if shape else 1
            if count != expected:
                raise ParseError(f"텐서 {name}의 원소 수({count})가 형상 {shape}와 다릅니다")
            size = count * _FLOAT32_LE.itemsize
            if offset + size > len(self.buffer):
                raise ParseError(f"텐서 {name}의 데이터가 잘렸습니다")
            data = np.frombuffer(self.buffer, dtype=_FLOAT32_LE, count=count, offset=offset) if count else np.zeros(0, _FLOAT32_LE)
            tensors[name] = data.astype(np.float64).reshape(shape)
            offset += size
        return tensors


def write_tensors(path: Union[str, Path], tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_tensors(tensors))


def read_tensors(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    try:
        buffer = Path(path).read_bytes()
    except FileNotFoundError:
        raise InputError(f"텐서 파일을 찾을 수 없습니다: {path}")
    return TensorBundle(buffer).read()

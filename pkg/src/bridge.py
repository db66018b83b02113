"""외부 프로세스 브리지

요청/응답은 표준 입출력 위의 한 줄 JSON입니다. 배열은 텐서 파일 경로로 주고받습니다.

    요청: {"op": "denoise", "t": 12, "strength": 0.55, "inputs": "/tmp/.../req-3.tensors"}
    응답: {"proposal": "/tmp/.../resp-3.tensors"} 또는 {"error": "..."}

    요청: {"op": "estimate", "candidate": "/tmp/.../cand-0.tensors"}
    응답: {"joints_3d": [63개 실수]} 또는 {"error": "..."}
"""

import json
import queue
import shlex
import subprocess
import tempfile
import threading
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Type, Union

import numpy as np

from .config import NUM_JOINTS, get_bridge_timeout
from .errors import CheckFailure, DenoiserFailure, EstimatorFailure, InputError
from .logger import trace
from .tensorio import read_tensors, write_tensors


class LineBridge:
    """한 줄 요청에 한 줄 응답을 돌려주는 자식 프로세스

    요청은 잠금으로 직렬화되므로 여러 스레드가 공유해도 됩니다.
    """

    def __init__(
        self,
        command: Union[str, Sequence[str]],
        timeout: Optional[float] = None,
        failure: Type[CheckFailure] = DenoiserFailure,
    ):
        self.command: List[str] = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise InputError("브리지 명령이 비어 있습니다")
        self.timeout = get_bridge_timeout() if timeout is None else timeout
        self.failure = failure
        self._lock = threading.Lock()
        self._lines: "queue.Queue[Optional[str]]" = queue.Queue()
        self._process: Optional[subprocess.Popen] = None
        self._reader: Optional[threading.Thread] = None

    def _start(self) -> subprocess.Popen:
        if self._process is None:
            trace(f"브리지 프로세스 시작: {' '.join(self.command)}")
            try:
                self._process = subprocess.Popen(
                    self.command,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                    bufsize=1,
                )
            except OSError as e:
                raise self.failure(f"브리지 프로세스를 시작할 수 없습니다: {e}")
            self._reader = threading.Thread(target=self._pump, args=(self._process, self._lines), daemon=True)
            self._reader.start()
        return self._process

    @staticmethod
    def _pump(process: subprocess.Popen, lines: "queue.Queue[Optional[str]]") -> None:
        assert process.stdout is not None
        for line in process.stdout:
            lines.put(line)
        lines.put(None)

    def request(self, payload: Dict[str, Any]) -> Dict[str, Any]:
        with self._lock:
            process = self._start()
            assert process.stdin is not None
            try:
                process.stdin.write(json.dumps(payload) + "\n")
                process.stdin.flush()
            except (BrokenPipeError, OSError) as e:
                raise self.failure(f"브리지에 요청을 쓸 수 없습니다: {e}")
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                self.close()
                raise self.failure(f"브리지 응답 시간 초과 ({self.timeout}초)")
        if line is None:
            raise self.failure("브리지 프로세스가 종료되었습니다")
        try:
            response = json.loads(line)
        except json.JSONDecodeError:
            raise self.failure(f"브리지 응답을 해석할 수 없습니다: {line.strip()[:200]}")
        if not isinstance(response, dict):
            raise self.failure("브리지 응답은 JSON 객체여야 합니다")
        if "error" in response:
            raise self.failure(f"브리지 오류: {response['error']}")
        return response

    def close(self) -> None:
        process, self._process = self._process, None
        if process is None:
            return
        try:
            if process.stdin:
                process.stdin.close()
            process.terminate()
            process.wait(timeout=5)
        except (OSError, subprocess.TimeoutExpired):
            process.kill()
        self._lines = queue.Queue()

    def __enter__(self) -> "LineBridge":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


class _TensorExchange:
    """요청 텐서 파일을 둘 작업 디렉터리를 관리합니다.

    work_dir를 주지 않으면 임시 디렉터리를 만들고 close()에서 지웁니다.
    요청마다 쓴 파일은 응답을 읽은 뒤 바로 지웁니다.
    """

    def __init__(self, bridge: LineBridge, work_dir: Optional[Union[str, Path]], prefix: str):
        self.bridge = bridge
        self._owned: Optional[tempfile.TemporaryDirectory] = None
        if work_dir is None:
            self._owned = tempfile.TemporaryDirectory(prefix=prefix)
            work_dir = self._owned.name
        self.work_dir = Path(work_dir)
        self._counter = 0
        self._counter_lock = threading.Lock()

    def _next_path(self, stem: str) -> Path:
        with self._counter_lock:
            self._counter += 1
            index = self._counter
        return self.work_dir / f"{stem}-{index}.tensors"

    def _discard(self, path: Union[str, Path]) -> None:
        """작업 디렉터리 안의 파일만 지웁니다."""
        target = Path(path)
        if target.resolve().parent == self.work_dir.resolve():
            target.unlink(missing_ok=True)

    def close(self) -> None:
        if self._owned is not None:
            self._owned.cleanup()
            self._owned = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


class ExternalDenoiser(_TensorExchange):
    """브리지 너머의 생성 모델을 DenoiserOracle로 감쌉니다."""

    def __init__(self, bridge: LineBridge, work_dir: Optional[Union[str, Path]] = None):
        super().__init__(bridge, work_dir, "hope-denoise-")

    def __call__(self, x_t, x_masked, depth, t, strength):
        inputs = self._next_path("req")
        tensors = {"x_t": np.asarray(x_t), "x_masked": np.asarray(x_masked)}
        if depth is not None:
            tensors["depth"] = np.asarray(depth)
        write_tensors(inputs, tensors)
        try:
            response = self.bridge.request({"op": "denoise", "t": int(t), "strength": float(strength), "inputs": str(inputs)})
        finally:
            self._discard(inputs)
        ref = response.get("proposal")
        if not isinstance(ref, str):
            raise DenoiserFailure("브리지 응답에 proposal 경로가 없습니다")
        try:
            proposal = read_tensors(ref)
        except InputError as e:
            raise DenoiserFailure(f"proposal 텐서를 읽을 수 없습니다: {e}")
        finally:
            self._discard(ref)
        if "proposal" not in proposal:
            raise DenoiserFailure("proposal 파일에 proposal 텐서가 없습니다")
        return proposal["proposal"]


class ExternalEstimator(_TensorExchange):
    """브리지 너머의 손 자세 추정기를 PoseEstimator로 감쌉니다.

    후보가 배열이면 텐서 파일로 써서 경로를 넘기고, 문자열이면 그대로 참조로 넘깁니다.
    """

    def __init__(self, bridge: LineBridge, work_dir: Optional[Union[str, Path]] = None):
        super().__init__(bridge, work_dir, "hope-estimate-")

    def __call__(self, candidate: Any) -> np.ndarray:
        written: Optional[Path] = None
        if isinstance(candidate, (str, Path)):
            ref = str(candidate)
        else:
            written = self._next_path("cand")
            write_tensors(written, {"candidate": np.asarray(candidate)})
            ref = str(written)
        try:
            response = self.bridge.request({"op": "estimate", "candidate": ref})
        finally:
            if written is not None:
                self._discard(written)
        joints = np.asarray(response.get("joints_3d", []), dtype=float)
        if joints.size != NUM_JOINTS * 3:
            raise EstimatorFailure(f"추정 관절 수가 잘못되었습니다: {joints.size}")
        return joints.reshape(NUM_JOINTS, 3)

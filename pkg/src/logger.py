import os
import sys
from datetime import datetime


def _quiet() -> bool:
    return os.environ.get("HOPE_TOOLKIT_QUIET", "").lower() in ("1", "true", "yes")


def write_log(message: str, level: str = "INFO", echo: bool = True) -> None:
    """로그 메시지를 파일과 콘솔에 기록합니다.

    stdout은 명령 결과 전용이므로 콘솔 출력은 항상 stderr로 보냅니다.
    """
    log_file = os.environ.get('LOG_FILE')

    if log_file:
        timestamp = datetime.now().isoformat()
        log_message = f"[{timestamp}] {level} {message}"

        with open(log_file, 'a', encoding='utf-8') as f:
            f.write(log_message + "\n")

    if echo:
        print(message, file=sys.stderr)


def trace(message: str) -> None:
    """추적 로그를 기록합니다. HOPE_TOOLKIT_QUIET=1이면 콘솔 출력을 생략합니다."""
    write_log(message, "TRACE", echo=not _quiet())


def warn(message: str) -> None:
    """경고 로그를 기록합니다."""
    write_log(message, "WARN", echo=not _quiet())


def error(message: str) -> None:
    """오류 로그를 기록합니다."""
    write_log(message, "ERROR")

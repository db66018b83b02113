from typing import Iterable, List, Optional


class ActionableError(Exception):
    """사용자가 조치 가능한 오류"""
    pass


class InputError(ActionableError):
    """입력 파일이나 인자가 잘못된 경우 (CLI 종료 코드 2)"""
    exit_code = 2


class CheckFailure(ActionableError):
    """검증/지표 실패 (CLI 종료 코드 1)"""
    exit_code = 1


# geometry

class DegenerateInput(InputError):
    pass


class BehindCamera(InputError):
    pass


class InsufficientPoints(InputError):
    pass


class NumericalFailure(CheckFailure):
    pass


# 공통 형상/입력 오류

class ShapeMismatch(InputError):
    pass


class EmptyInput(InputError):
    pass


# dataprep

class MissingReference(InputError):
    pass


class UnlabeledRecord(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class EmptyUnion(InputError):
    pass


class MissingAnnotation(InputError):
    pass


class ParseError(InputError):
    """매니페스트 파싱 실패. line은 1부터 시작합니다."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"{line}번째 줄: {message}"
        super().__init__(message)


class SchemaError(InputError):
    """필수 필드 누락 또는 타입 오류. field에 문제의 필드명이 담깁니다."""

    def __init__(self, field: str, line: Optional[int] = None, detail: str = ""):
        self.field = field
        self.line = line
        prefix = f"{line}번째 줄: " if line is not None else ""
        suffix = f" ({detail})" if detail else ""
        super().__init__(f'{prefix}필드 "{field}" 스키마 오류{suffix}')


# deoccluder

class StepOutOfRange(InputError):
    pass


class EmptyCandidates(InputError):
    pass


class EstimatorFailure(CheckFailure):
    pass


class DenoiserFailure(CheckFailure):
    pass


class AllCandidatesFailed(CheckFailure):
    pass


# fusion

class StaleCache(ActionableError):
    pass


# cli

class FrameMismatch(InputError):
    """예측/정답 매니페스트의 frame_id가 일치하지 않는 경우"""

    def __init__(self, unmatched: Iterable[str]):
        self.unmatched: List[str] = sorted(unmatched)
        preview = ", ".join(self.unmatched[:10])
        more = f" 외 {len(self.unmatched) - 10}개" if len(self.unmatched) > 10 else ""
        super().__init__(f"일치하지 않는 frame_id: {preview}{more}")


def exit_code_for(exc: ActionableError) -> int:
    """예외에 대응하는 CLI 종료 코드를 반환합니다."""
    return getattr(exc, "exit_code", 1)

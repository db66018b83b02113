#!/usr/bin/env python3
import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

from .commands import (
    CommandResult,
    cmd_evaluate,
    cmd_pnp,
    cmd_prepare_labels,
    cmd_schedule,
    cmd_select_strength,
    cmd_selftest,
    cmd_split,
)
from .config import (
    DEFAULT_AUC_MAX_MM,
    DEFAULT_AUC_MIN_MM,
    DEFAULT_AUC_STEPS,
    DEFAULT_OCCLUSION_EDGES,
    DEFAULT_RRE_THRESHOLD_DEG,
    DEFAULT_RTE_THRESHOLD_MM,
    DEFAULT_STRENGTH_CANDIDATES,
    RunConfig,
    get_selftest_fault,
    get_thread_count,
)
from .errors import ActionableError, InputError, exit_code_for
from .logger import error, trace


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"쉼표로 구분된 숫자가 아닙니다: {text}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hope-toolkit",
        description="hope-toolkit - 손-객체 자세 데이터 준비, 평가, 가림 제거 도구",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
사용 예시:
  hope-toolkit prepare-labels data/train.jsonl -o data/train.labeled.jsonl
  hope-toolkit split data/train.labeled.jsonl --hand-only ho.jsonl --hand-object hob.jsonl
  hope-toolkit evaluate pred.jsonl data/test.labeled.jsonl --curve-dir curves/
  hope-toolkit --format structured pnp pred_keypoints.jsonl
  hope-toolkit --threads 8 selftest
""",
    )
    parser.add_argument("--seed", type=int, default=0, help="난수 시드. 기본값: 0")
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="워커 수. 기본값: HOPE_TOOLKIT_THREADS 또는 1",
    )
    parser.add_argument("--output", default=None, help="결과를 stdout 대신 이 파일에 씁니다")
    parser.add_argument(
        "--format",
        choices=["table", "structured"],
        default="table",
        help="출력 형식: table (고정 폭 표), structured (JSON). 기본값: table",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-labels", help="파지 라벨과 가림 비율 생성")
    p.add_argument("manifest")
    p.add_argument("-o", "--labeled-output", required=True, help="라벨이 붙은 매니페스트 경로")
    p.add_argument("--rre-deg", type=float, default=DEFAULT_RRE_THRESHOLD_DEG)
    p.add_argument("--rte-mm", type=float, default=DEFAULT_RTE_THRESHOLD_MM)
    p.add_argument("--reference", choices=["first_annotated", "initial"], default="first_annotated")
    p.add_argument("--occlusion-mode", choices=["complement", "iou"], default="complement")
    p.add_argument("--hand-only-dataset", action="store_true", help="객체 주석이 없는 데이터셋 (모두 손-단독)")

    p = sub.add_parser("split", help="손-단독/손-객체 매니페스트로 분할")
    p.add_argument("manifest")
    p.add_argument("--hand-only", required=True)
    p.add_argument("--hand-object", required=True)

    p = sub.add_parser("evaluate", help="예측 매니페스트 평가")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--auc-min", type=float, default=DEFAULT_AUC_MIN_MM)
    p.add_argument("--auc-max", type=float, default=DEFAULT_AUC_MAX_MM)
    p.add_argument("--auc-steps", type=int, default=DEFAULT_AUC_STEPS)
    p.add_argument("--occlusion-edges", type=_float_list, default=list(DEFAULT_OCCLUSION_EDGES))
    p.add_argument("--root-relative", action="store_true", help="루트 관절 기준 상대 좌표로 비교")
    p.add_argument("--curve-dir", default=None, help="PCK 곡선을 저장할 디렉터리")
    p.add_argument("--occlusion-mode", choices=["complement", "iou"], default="complement")

    p = sub.add_parser("pnp", help="2D 키포인트로 객체 자세 복원 (EPnP)")
    p.add_argument("manifest")
    p.add_argument("--no-refine", action="store_true", help="Gauss-Newton 보정 생략")

    p = sub.add_parser("select-strength", help="샘플별 control strength 선택")
    p.add_argument("scores")
    p.add_argument("--candidates", type=_float_list, default=list(DEFAULT_STRENGTH_CANDIDATES))
    p.add_argument("--estimator", default=None, help="점수가 없는 샘플에 쓸 추정기 브리지 명령")

    p = sub.add_parser("selftest", help="내장 검사 실행")
    p.add_argument("--inject-fault", default=None, help="일부러 교란할 검사 이름 (테스트용)")

    sub.add_parser("schedule", help="2단계 학습 스케줄 출력")
    return parser


def dispatch(args: argparse.Namespace, config: RunConfig) -> CommandResult:
    if args.command == "prepare-labels":
        return cmd_prepare_labels(
            args.manifest,
            args.labeled_output,
            args.rre_deg,
            args.rte_mm,
            args.reference,
            args.occlusion_mode,
            args.hand_only_dataset,
        )
    if args.command == "split":
        return cmd_split(args.manifest, args.hand_only, args.hand_object)
    if args.command == "evaluate":
        return cmd_evaluate(
            args.pred,
            args.gt,
            config,
            auc_min_mm=args.auc_min,
            auc_max_mm=args.auc_max,
            auc_steps=args.auc_steps,
            occlusion_edges=args.occlusion_edges,
            root_relative=args.root_relative,
            curve_dir=args.curve_dir,
            occlusion_mode=args.occlusion_mode,
        )
    if args.command == "pnp":
        return cmd_pnp(args.manifest, config, refine=not args.no_refine)
    if args.command == "select-strength":
        return cmd_select_strength(args.scores, args.candidates, config, args.estimator)
    if args.command == "selftest":
        return cmd_selftest(config, args.inject_fault or get_selftest_fault())
    if args.command == "schedule":
        return cmd_schedule(config)
    raise InputError(f"알 수 없는 명령: {args.command}")


def run(argv: Optional[Sequence[str]] = None) -> int:
    """명령을 실행하고 종료 코드를 반환합니다."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2

    try:
        config = RunConfig(
            seed=args.seed,
            threads=get_thread_count() if args.threads is None else args.threads,
            output=args.output,
            format=args.format,
        )
    except ValidationError as e:
        error(f"실행 설정이 잘못되었습니다: {e.errors()[0].get('msg', '')}")
        return 2

    try:
        result = dispatch(args, config)
    except ActionableError as e:
        error(f"{args.command}: {e}. 문제를 해결하고 다시 시도하세요.")
        return exit_code_for(e)
    except Exception as e:
        error(f"{args.command} 실행 중 치명적 오류 발생: {e}")
        raise

    if config.output:
        Path(config.output).write_text(result.text, encoding="utf-8")
        trace(f"결과 저장: {config.output}")
    else:
        sys.stdout.write(result.text)
        sys.stdout.flush()
    return result.exit_code


def main() -> None:
    """동기 진입점 함수"""
    sys.exit(run())


if __name__ == "__main__":
    try:
        main()
    except KeyboardInterrupt:
        error("키보드 인터럽트로 종료됨")
        sys.exit(130)

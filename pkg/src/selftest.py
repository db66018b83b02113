"""내장 셀프테스트

각 검사는 (seed, perturb) -> detail 함수이며 실패 시 CheckFailure를 발생시킵니다.
perturb=True이면 해당 검사가 비교하는 값을 일부러 교란합니다 (테스트 훅).
"""

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .config import auc_thresholds, deg_to_rad
from .dataprep import (
    FrameRecord,
    HandAnnotation,
    annotate_occlusion,
    is_enhancement_eligible,
    label_grasping,
    label_sequences,
)
from .deoccluder import (
    ConstantDenoiser,
    IdentityDenoiser,
    LinearShrinkDenoiser,
    StrengthCandidates,
    generate_candidates,
    linear_schedule,
    repaint_run,
    select_control_strength,
)
from .errors import ActionableError, CheckFailure
from .fusion import (
    AttentionCall,
    FusionCall,
    init_attention_params,
    switcher_loss,
)
from .geometry import (
    RigidPose,
    Rotation3,
    procrustes_align,
    project_points,
    relative_rotation_error,
    relative_translation_error,
    solve_pnp_epnp,
    svd3,
)
from .gradcheck import numerical_gradient, relative_error
from .losses import EnhancementFeatures, LossComponents, LossWeights, enhancement_losses, total_loss
from .metrics import (
    AddSample,
    add_half_diameter,
    bucket_by_occlusion,
    f_score,
    hand_frame_errors,
    summarize_hand_errors,
)
from .reports import SelftestCheck, SelftestReport
from .synthetic import DEFAULT_INTRINSICS, box_corners, fixture_records, perturb_predictions, random_rotation

PERTURBATION = 1e-3
CheckFn = Callable[[int, bool], str]


def _require(ok: bool, message: str) -> None:
    if not ok:
        raise CheckFailure(message)


def check_procrustes(seed: int, perturb: bool) -> str:
    rng = np.random.default_rng([seed, 1])
    worst = 0.0
    for _ in range(200):
        x = rng.normal(scale=100.0, size=(10, 3))
        s = rng.uniform(0.5, 2.0)
        r = random_rotation(rng)
        t = rng.normal(scale=100.0, size=3)
        y = s * r.apply(x) + t
        fit = procrustes_align(x, y)
        err = max(
            abs(fit.scale - s),
            float(np.max(np.abs(fit.rotation.m - r.m))),
            float(np.max(np.abs(fit.translation - t))) / 100.0,
            float(np.max(np.abs(fit.apply(x) - y))) / 100.0,
        )
        worst = max(worst, err + (PERTURBATION if perturb else 0.0))
    _require(worst < 1e-8, f"Procrustes 복원 오차 {worst:.3e} ≥ 1e-8")
    return "200개 상사 변환 복원"


def check_epnp(seed: int, perturb: bool) -> str:
    rng = np.random.default_rng([seed, 2])
    worst_r = worst_t = 0.0
    for _ in range(200):
        corners = box_corners(tuple(rng.uniform(100.0, 250.0, size=3)))
        pose = RigidPose(
            random_rotation(rng),
            np.array([rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(500, 2000)]),
        )
        image = project_points(corners, pose, DEFAULT_INTRINSICS)
        est = solve_pnp_epnp(corners, image, DEFAULT_INTRINSICS)
        worst_r = max(worst_r, relative_rotation_error(est.rotation, pose.rotation))
        worst_t = max(worst_t, relative_translation_error(est.translation, pose.translation))
    if perturb:
        worst_r += PERTURBATION
    _require(worst_r < 1e-6 and worst_t < 1e-3, f"EPnP 복원 오차 RRE {worst_r:.3e}, RTE {worst_t:.3e}")
    return "200개 무잡음 자세 복원"


def check_svd3(seed: int, perturb: bool) -> str:
    rng = np.random.default_rng([seed, 3])
    worst = 0.0
    for i in range(200):
        m = rng.normal(size=(3, 3))
        if i % 4 == 1:
            m[:, 2] = m[:, 0] + m[:, 1]
        elif i % 4 == 2:
            m = np.outer(rng.normal(size=3), rng.normal(size=3))
        u, sigma, vt = svd3(m)
        scale = max(1.0, float(np.max(np.abs(m))))
        err = max(
            float(np.max(np.abs(u @ np.diag(sigma) @ vt - m))) / scale,
            float(np.max(np.abs(u.T @ u - np.eye(3)))),
            float(np.max(np.abs(vt @ vt.T - np.eye(3)))),
        )
        _require(bool(np.all(np.diff(sigma) <= 0)) and sigma[-1] >= 0, "특이값이 내림차순 비음수가 아닙니다")
        worst = max(worst, err)
    if perturb:
        worst += PERTURBATION
    _require(worst < 1e-9, f"svd3 재구성 오차 {worst:.3e}")
    return "200개 행렬 분해"


def _oracle_umeyama(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    u, d, vt = np.linalg.svd(yc.T @ xc / len(x))
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1.0
    r = u @ s @ vt
    scale = np.trace(np.diag(d) @ s) / (np.sum(xc ** 2) / len(x))
    return scale * x @ r.T + (my - scale * r @ mx)


def _loop_mean_error(a: np.ndarray, b: np.ndarray) -> float:
    total = 0.0
    for p, q in zip(a, b):
        total += math.sqrt(sum((float(p[k]) - float(q[k])) ** 2 for k in range(3)))
    return total / len(a)


def _loop_f(a: np.ndarray, b: np.ndarray, thr: float) -> float:
    def hits(src, dst):
        count = 0
        for p in src:
            best = min(math.sqrt(sum((float(p[k]) - float(q[k])) ** 2 for k in range(3))) for q in dst)
            count += best <= thr
        return count / len(src)

    precision, recall = hits(a, b), hits(b, a)
    return 0.0 if precision + recall == 0 else 100.0 * 2 * precision * recall / (precision + recall)


def check_metric_oracles(seed: int, perturb: bool) -> str:
    gt = annotate_occlusion(label_sequences(fixture_records(seed)))
    pred = perturb_predictions(gt, seed + 1)
    thresholds = auc_thresholds()
    frames = [hand_frame_errors(p.hand.joints_3d, g.hand.joints_3d, p.hand.vertices_3d, g.hand.vertices_3d) for p, g in zip(pred, gt)]
    report, curves = summarize_hand_errors(frames, thresholds)

    j_pe = sum(_loop_mean_error(p.hand.joints_3d, g.hand.joints_3d) for p, g in zip(pred, gt)) / len(gt)
    pa_j_pe = sum(
        _loop_mean_error(_oracle_umeyama(p.hand.joints_3d, g.hand.joints_3d), g.hand.joints_3d) for p, g in zip(pred, gt)
    ) / len(gt)
    v_pe = sum(_loop_mean_error(p.hand.vertices_3d, g.hand.vertices_3d) for p, g in zip(pred, gt)) / len(gt)

    errors = [
        math.sqrt(sum((float(a[k]) - float(b[k])) ** 2 for k in range(3)))
        for p, g in zip(pred, gt)
        for a, b in zip(p.hand.joints_3d, g.hand.joints_3d)
    ]
    pck = [sum(1 for e in errors if e <= t) / len(errors) for t in thresholds]
    area = 0.0
    for i in range(1, len(thresholds)):
        area += (pck[i] + pck[i - 1]) / 2.0 * (thresholds[i] - thresholds[i - 1])
    j_auc = 100.0 * area / (thresholds[-1] - thresholds[0])

    subset = slice(0, 64)
    f_diff = abs(
        f_score(pred[0].hand.vertices_3d[subset], gt[0].hand.vertices_3d[subset], 5.0)
        - _loop_f(pred[0].hand.vertices_3d[subset], gt[0].hand.vertices_3d[subset], 5.0)
    )

    samples = [
        AddSample(g.object_id, g.object_keypoints.points, g.object_diameter, p.object_pose, g.object_pose)
        for p, g in zip(pred, gt)
        if g.grasping_label
    ]
    add_report = add_half_diameter(samples)
    oracle_success: Dict[str, List[int]] = {}
    for s in samples:
        add = _loop_mean_error(s.pred.apply(s.model_points), s.gt.apply(s.model_points))
        oracle_success.setdefault(s.object_id, []).append(int(add < 0.5 * s.diameter))
    oracle_add = sum(100.0 * sum(v) / len(v) for v in oracle_success.values()) / len(oracle_success)

    buckets = bucket_by_occlusion(
        [(g.occlusion_proportion, f.summary()) for g, f in zip(gt, frames)],
        [0.25, 0.5, 0.75, 1.0],
    )
    bucket_total = sum(b.count for b in buckets)

    diffs = {
        "j_pe": abs(report.j_pe - j_pe),
        "pa_j_pe": abs(report.pa_j_pe - pa_j_pe),
        "v_pe": abs(report.v_pe - v_pe),
        "pck": max(abs(a - b) for a, b in zip(curves["joints"].pck, pck)),
        "j_auc": abs(report.j_auc - j_auc),
        "f": f_diff,
        "add": abs(add_report.average - oracle_add),
        "buckets": float(bucket_total != sum(1 for g in gt if g.occlusion_proportion >= 0.25)),
    }
    if perturb:
        diffs["j_pe"] += PERTURBATION
    worst = max(diffs, key=diffs.get)
    _require(diffs[worst] <= 1e-9, f"지표 오라클 불일치: {worst} 차이 {diffs[worst]:.3e}")
    return f"{len(diffs)}개 지표 일치"


def check_switcher_gradient(seed: int, perturb: bool) -> str:
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng([seed, 10, i])
        logits = rng.normal(scale=2.0, size=2)
        label = int(i % 2)
        _, grad = switcher_loss(logits, label)
        if perturb:
            grad = grad + PERTURBATION
        numeric = numerical_gradient(lambda z: switcher_loss(z, label)[0], logits)
        worst = max(worst, relative_error(grad, numeric))
    _require(worst < 1e-6, f"스위처 기울기 상대 오차 {worst:.3e}")
    return "20개 시드"


def check_fuse_gradient(seed: int, perturb: bool) -> str:
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng([seed, 11, i])
        hand = rng.normal(size=(3, 4))
        obj = rng.normal(size=(3, 4))
        upstream = rng.normal(size=(6, 4))
        s = i % 2
        axis = "row" if i % 4 < 2 else "column"
        call = FusionCall(axis)
        call.forward(hand, obj, s)
        grads = call.backward(upstream)
        g_hand = grads.hand + (PERTURBATION if perturb else 0.0)

        def f_hand(h):
            return float(np.sum(FusionCall(axis).forward(h, obj, s) * upstream))

        def f_obj(o):
            return float(np.sum(FusionCall(axis).forward(hand, o, s) * upstream))

        worst = max(worst, relative_error(g_hand, numerical_gradient(f_hand, hand)))
        if s == 1:
            worst = max(worst, relative_error(grads.object, numerical_gradient(f_obj, obj)))
        else:
            _require(not np.any(grads.object), "s = 0에서 객체 기울기가 0이 아닙니다")
    _require(worst < 1e-5, f"융합 기울기 상대 오차 {worst:.3e}")
    return "20개 시드"


def check_attention_gradient(seed: int, perturb: bool) -> str:
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng([seed, 12, i])
        params = init_attention_params(4, 2, seed=seed * 100 + i)
        x = rng.normal(size=(5, 4))
        upstream = rng.normal(size=(5, 4))
        call = AttentionCall(params)
        call.forward(x)
        grads = call.backward(upstream)
        g_x = grads.x + (PERTURBATION if perturb else 0.0)
        worst = max(worst, relative_error(g_x, numerical_gradient(lambda v: float(np.sum(AttentionCall(params).forward(v) * upstream)), x)))

        def f_wq(w):
            candidate = type(params)(params.heads, w, params.wk, params.wv, params.wo, params.bq, params.bk, params.bv, params.bo)
            return float(np.sum(AttentionCall(candidate).forward(x) * upstream))

        worst = max(worst, relative_error(grads.wq, numerical_gradient(f_wq, params.wq)))
    _require(worst < 1e-4, f"어텐션 기울기 상대 오차 {worst:.3e}")
    return "20개 시드"


def check_fusion_gating(seed: int, perturb: bool) -> str:
    rng = np.random.default_rng([seed, 13])
    hand = rng.normal(size=(4, 6))
    base_obj = rng.normal(size=(4, 6))
    reference = FusionCall().forward(hand, base_obj, 0)
    for _ in range(100):
        obj = base_obj + rng.normal(size=base_obj.shape)
        call = FusionCall()
        out = call.forward(hand, obj, 0)
        if perturb:
            out = out + PERTURBATION
        _require(np.array_equal(out, reference), "s = 0 융합 출력이 객체 특징에 따라 바뀌었습니다")
        _require(not np.any(call.backward(rng.normal(size=out.shape)).object), "s = 0 객체 기울기가 0이 아닙니다")
    return "100개 객체 교란"


def check_loss_coefficients(seed: int, perturb: bool) -> str:
    expected = {"hand": 1.0, "object": 1.0, "switcher": 10.0, "init": 0.1, "roi": 0.1, "mano": 0.5}
    weights = LossWeights()
    for name, coef in expected.items():
        got = total_loss(LossComponents(**{name: 1.0}), weights)
        if perturb:
            got += PERTURBATION
        _require(got == coef, f"{name} 계수 {got} ≠ {coef}")
    return "6개 성분"


def check_repaint(seed: int, perturb: bool) -> str:
    rng = np.random.default_rng([seed, 14])
    x0 = rng.normal(size=(4, 8, 8))
    mask = (rng.uniform(size=(8, 8)) < 0.4).astype(float)
    schedule = linear_schedule(50)
    a = repaint_run(x0, mask, None, LinearShrinkDenoiser(0.9), schedule, 0.5, seed)
    b = repaint_run(x0, mask, None, ConstantDenoiser(3.0), schedule, 0.5, seed)
    if perturb:
        b = b + PERTURBATION
    background = np.broadcast_to(mask == 0, x0.shape)
    _require(np.array_equal(a[background], b[background]), "배경 영역이 디노이저에 의존합니다")
    _require(np.array_equal(a[background], x0[background]), "최종 배경이 x0와 다릅니다")

    candidates = StrengthCandidates()
    one = generate_candidates(x0, mask, None, IdentityDenoiser(), schedule, candidates, seed, threads=1)
    eight = generate_candidates(x0, mask, None, IdentityDenoiser(), schedule, candidates, seed, threads=8)
    _require(all(np.array_equal(p, q) for p, q in zip(one, eight)), "스레드 수에 따라 결과가 다릅니다")
    return "배경 독립성, 스레드 결정성"


def check_strength_permutations(seed: int, perturb: bool) -> str:
    candidates = StrengthCandidates()
    base = [12.0, 9.5, 10.1, 11.0, 13.2, 14.0]
    for order in itertools.permutations(range(6)):
        scores = [base[i] for i in order]
        strength, index = select_control_strength(candidates, scores)
        expected = int(np.argmin(scores))
        if perturb:
            expected = (expected + 1) % 6
        _require(index == expected, f"argmin 불일치: {scores}")
        tied = [1.0 if i in (order[0], order[1]) else 2.0 for i in range(6)]
        _, tie_index = select_control_strength(candidates, tied)
        _require(tie_index == min(order[0], order[1]), f"동점 처리 불일치: {tied}")
    return "720개 순열"


def _ramp_sequence(count: int) -> List[FrameRecord]:
    rng = np.random.default_rng(0)
    hand = HandAnnotation(
        joints_3d=rng.normal(size=(21, 3)),
        joints_2d=rng.normal(size=(21, 2)),
        mano_pose=np.zeros(48),
        mano_shape=np.zeros(10),
    )
    records = []
    for i in range(count):
        pose = RigidPose(Rotation3.identity(), np.array([0.5 * i, 0.0, 500.0]))
        records.append(FrameRecord(frame_id=f"ramp-{i:03d}", sequence_id="ramp", frame_index=i, hand=hand, object_pose=pose))
    return records


def check_label_boundary(seed: int, perturb: bool) -> str:
    labeled = label_grasping(_ramp_sequence(50), deg_to_rad(5.0), 10.0 + (1.0 if perturb else 0.0))
    # 0.5mm 간격이므로 20번 프레임이 정확히 10mm (경계 포함 → 파지 아님)
    flips = [r.frame_index for r in labeled if r.grasping_label]
    _require(bool(flips) and flips[0] == 21 and len(flips) == 29, f"파지 경계가 21번 프레임이 아닙니다: {flips[:3]}")
    return "50프레임 경사"


def check_enhancement_gating(seed: int, perturb: bool) -> str:
    rng = np.random.default_rng([seed, 15])
    adapter = init_attention_params(4, 2, seed)
    for _ in range(1000):
        occlusion = float(rng.choice([rng.uniform(0, 1), 0.1, 0.0999999]))
        grasping = bool(rng.integers(0, 2))
        orig = EnhancementFeatures(rng.normal(size=(2, 3)), rng.normal(size=(2, 3)), rng.normal(size=(3, 4)))
        deocc = EnhancementFeatures(rng.normal(size=(2, 3)), rng.normal(size=(2, 3)), rng.normal(size=(3, 4)))
        eligible = is_enhancement_eligible(occlusion, grasping)
        if perturb:
            eligible = not eligible
        losses = enhancement_losses(orig, deocc, adapter, eligible)
        values = (losses.init, losses.roi, losses.mano)
        should = grasping and occlusion >= 0.1
        if should:
            _require(all(v > 0 for v in values), "적격 샘플의 강화 손실이 0입니다")
        else:
            _require(all(v == 0.0 for v in values), "비적격 샘플의 강화 손실이 0이 아닙니다")
    return "1000개 경우"


CHECKS: List[Tuple[str, CheckFn]] = [
    ("geometry.procrustes", check_procrustes),
    ("geometry.epnp", check_epnp),
    ("geometry.svd3", check_svd3),
    ("metrics.oracles", check_metric_oracles),
    ("fusion.switcher_gradient", check_switcher_gradient),
    ("fusion.fuse_gradient", check_fuse_gradient),
    ("fusion.attention_gradient", check_attention_gradient),
    ("fusion.gating", check_fusion_gating),
    ("losses.coefficients", check_loss_coefficients),
    ("losses.enhancement_gating", check_enhancement_gating),
    ("deoccluder.repaint", check_repaint),
    ("deoccluder.strength_selection", check_strength_permutations),
    ("dataprep.label_boundary", check_label_boundary),
]


def run_selftest(seed: int = 0, threads: int = 1, fault: Optional[str] = None) -> SelftestReport:
    """모든 검사를 실행합니다. 결과 순서는 검사 등록 순서이며 스레드 수와 무관합니다."""

    def run(entry: Tuple[str, CheckFn]) -> SelftestCheck:
        name, fn = entry
        try:
            return SelftestCheck(name=name, passed=True, detail=fn(seed, fault == name))
        except ActionableError as e:
            return SelftestCheck(name=name, passed=False, detail=str(e))
        except Exception as e:
            return SelftestCheck(name=name, passed=False, detail=f"{type(e).__name__}: {e}")

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        checks = list(pool.map(run, CHECKS))
    return SelftestReport(passed=all(c.passed for c in checks), checks=checks)

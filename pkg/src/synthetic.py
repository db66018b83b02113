"""셀프테스트와 테스트가 함께 쓰는 합성 데이터

모든 생성기는 시드만으로 결정됩니다.
"""

from dataclasses import replace
from typing import List, Tuple

import numpy as np

from .config import NUM_JOINTS, NUM_MANO_POSE, NUM_MANO_SHAPE, NUM_VERTICES
from .dataprep import FrameRecord, HandAnnotation
from .geometry import CameraIntrinsics, PointSet3, RigidPose, Rotation3, project_points
from .masks import BinaryMask
from .metrics import object_diameter

DEFAULT_INTRINSICS = CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0)
MASK_SIZE = 16


def random_rotation(rng: np.random.Generator) -> Rotation3:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return Rotation3(q)


def box_corners(size: Tuple[float, float, float] = (80.0, 60.0, 40.0)) -> np.ndarray:
    """원점 중심 직육면체의 8개 꼭짓점 (mm)"""
    half = np.asarray(size, dtype=float) / 2.0
    signs = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
    return signs * half


def synthetic_hand(
    rng: np.random.Generator,
    center: Tuple[float, float, float] = (0.0, 0.0, 500.0),
    cam: CameraIntrinsics = DEFAULT_INTRINSICS,
    with_vertices: bool = True,
) -> HandAnnotation:
    c = np.asarray(center, dtype=float)
    joints = c + rng.normal(scale=30.0, size=(NUM_JOINTS, 3))
    vertices = c + rng.normal(scale=40.0, size=(NUM_VERTICES, 3)) if with_vertices else None
    return HandAnnotation(
        joints_3d=joints,
        joints_2d=project_points(joints, RigidPose.identity(), cam),
        mano_pose=rng.normal(scale=0.3, size=NUM_MANO_POSE),
        mano_shape=rng.normal(size=NUM_MANO_SHAPE),
        vertices_3d=vertices,
    )


def occluded_masks(visible_rows: int) -> Tuple[BinaryMask, BinaryMask]:
    """전체 손 마스크(8행 직사각형)와 그 위쪽 visible_rows행만 남은 amodal 마스크"""
    full = np.zeros((MASK_SIZE, MASK_SIZE), dtype=bool)
    full[4:12, 2:14] = True
    amodal = np.zeros_like(full)
    amodal[4:4 + visible_rows, 2:14] = True
    return BinaryMask.from_array(amodal), BinaryMask.from_array(full)


def _object_frame(
    rng: np.random.Generator,
    sequence_id: str,
    index: int,
    pose: RigidPose,
    object_id: str,
    visible_rows: int,
    cam: CameraIntrinsics,
) -> FrameRecord:
    corners = box_corners()
    amodal, full = occluded_masks(visible_rows)
    return FrameRecord(
        frame_id=f"{sequence_id}-{index:03d}",
        sequence_id=sequence_id,
        frame_index=index,
        hand=synthetic_hand(rng, cam=cam),
        intrinsics=cam,
        object_pose=pose,
        object_id=object_id,
        object_keypoints=PointSet3(corners),
        object_keypoints_2d=project_points(corners, pose, cam),
        object_diameter=object_diameter(corners),
        amodal_hand_mask=amodal,
        full_hand_mask=full,
    )


def fixture_records(seed: int = 0, cam: CameraIntrinsics = DEFAULT_INTRINSICS) -> List[FrameRecord]:
    """12프레임 합성 픽스처 (라벨 없음)

    static 시퀀스 6프레임은 객체가 움직이지 않고, grasp 시퀀스 6프레임은
    3번 프레임부터 객체가 임계값 이상 움직입니다.
    """
    rng = np.random.default_rng(seed)
    base_t = np.array([30.0, -20.0, 600.0])
    records = []
    static_pose = RigidPose(Rotation3.about_axis("x", 0.3), base_t)
    for i in range(6):
        records.append(_object_frame(rng, "static", i, static_pose, "box_a", 8 - i, cam))

    shifts = [0.0, 2.0, 4.0, 25.0, 45.0, 70.0]
    angles = [0.0, 0.01, 0.02, 0.2, 0.35, 0.5]
    for i, (shift, angle) in enumerate(zip(shifts, angles)):
        pose = RigidPose(Rotation3.about_axis("z", angle), base_t + np.array([shift, 0.0, 0.0]))
        records.append(_object_frame(rng, "grasp", i, pose, "box_b", 2 + i, cam))
    return records


def perturb_predictions(records: List[FrameRecord], seed: int = 1, noise_mm: float = 3.0) -> List[FrameRecord]:
    """정답 레코드에 잡음을 더한 예측 레코드"""
    rng = np.random.default_rng(seed)
    out = []
    for record in records:
        hand = record.hand
        pred_hand = HandAnnotation(
            joints_3d=hand.joints_3d + rng.normal(scale=noise_mm, size=hand.joints_3d.shape),
            joints_2d=hand.joints_2d,
            mano_pose=hand.mano_pose,
            mano_shape=hand.mano_shape,
            vertices_3d=None if hand.vertices_3d is None else hand.vertices_3d + rng.normal(scale=noise_mm, size=hand.vertices_3d.shape),
        )
        pose = record.object_pose
        if pose is not None:
            pose = RigidPose(
                Rotation3.about_axis(rng.normal(size=3), 0.02).compose(pose.rotation),
                pose.translation + rng.normal(scale=2.0, size=3),
            )
        out.append(replace(record, hand=pred_hand, object_pose=pose, amodal_hand_mask=None, full_hand_mask=None))
    return out


def offset_predictions(records: List[FrameRecord], offset_mm: float) -> List[FrameRecord]:
    """모든 관절/정점을 x축으로 offset_mm만큼 옮긴 예측"""
    shift = np.array([offset_mm, 0.0, 0.0])
    out = []
    for record in records:
        hand = record.hand
        moved = HandAnnotation(
            joints_3d=hand.joints_3d + shift,
            joints_2d=hand.joints_2d,
            mano_pose=hand.mano_pose,
            mano_shape=hand.mano_shape,
            vertices_3d=None if hand.vertices_3d is None else hand.vertices_3d + shift,
        )
        out.append(replace(record, hand=moved))
    return out

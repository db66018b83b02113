"""데이터셋 매니페스트 로딩, 파지 라벨 생성, 장면 분할, 가림 비율 계산

매니페스트는 한 줄에 레코드 하나인 JSON Lines 파일입니다. 저장 시에는 키를
정렬하고 실수를 17자리 유효숫자로 쓰는 정규 형식을 사용하므로
save(load(x))는 정규 형식 파일에 대해 바이트 단위로 같습니다.
"""

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Annotated, Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .config import (
    DEFAULT_RRE_THRESHOLD_DEG,
    DEFAULT_RTE_THRESHOLD_MM,
    DEFAULT_TAU,
    NUM_JOINTS,
    NUM_MANO_POSE,
    NUM_MANO_SHAPE,
    NUM_VERTICES,
    deg_to_rad,
)
from .errors import (
    DegenerateInput,
    InputError,
    MissingAnnotation,
    MissingReference,
    ParseError,
    SchemaError,
    ShapeMismatch,
    UnlabeledRecord,
)
from .geometry import (
    CameraIntrinsics,
    PointSet3,
    RigidPose,
    Rotation3,
    relative_rotation_error,
    relative_translation_error,
)
from .logger import trace
from .masks import BinaryMask, dilate, load_mask_image, mask_iou, mask_union, rle_decode, rle_encode

OcclusionMode = Literal["complement", "iou"]
ReferencePolicy = Literal["first_annotated", "initial"]


def _fixed(values: Any, shape: Tuple[int, ...], name: str) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.size != int(np.prod(shape)):
        raise ShapeMismatch(f"{name}의 원소 수가 {int(np.prod(shape))}이어야 합니다: {array.size}")
    array = array.reshape(shape)
    if not np.all(np.isfinite(array)):
        raise DegenerateInput(f"{name}에 유한하지 않은 값이 있습니다")
    return array


@dataclass(eq=False)
class HandAnnotation:
    """손 주석. 정점은 없을 수 있습니다 (관절만 있는 데이터셋)."""

    joints_3d: np.ndarray
    joints_2d: np.ndarray
    mano_pose: np.ndarray
    mano_shape: np.ndarray
    vertices_3d: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.joints_3d = _fixed(self.joints_3d, (NUM_JOINTS, 3), "joints_3d")
        self.joints_2d = _fixed(self.joints_2d, (NUM_JOINTS, 2), "joints_2d")
        self.mano_pose = _fixed(self.mano_pose, (NUM_MANO_POSE,), "mano_pose")
        self.mano_shape = _fixed(self.mano_shape, (NUM_MANO_SHAPE,), "mano_shape")
        if self.vertices_3d is not None:
            self.vertices_3d = _fixed(self.vertices_3d, (NUM_VERTICES, 3), "vertices_3d")

    def mano_vector(self) -> np.ndarray:
        return np.concatenate([self.mano_pose, self.mano_shape])


@dataclass(frozen=True)
class MaskRef:
    """매니페스트의 마스크 참조. 이미지 경로 또는 인라인 RLE 중 하나입니다."""

    path: Optional[str] = None
    runs: Optional[Tuple[int, ...]] = None
    width: int = 0
    height: int = 0
    base_dir: str = "."

    def load(self) -> BinaryMask:
        if self.path is not None:
            return load_mask_image(Path(self.base_dir) / self.path)
        return rle_decode(self.runs or (), self.width, self.height)


MaskLike = Union[BinaryMask, MaskRef]


def resolve_mask(mask: MaskLike) -> BinaryMask:
    return mask.load() if isinstance(mask, MaskRef) else mask


@dataclass(eq=False)
class FrameRecord:
    frame_id: str
    sequence_id: str
    frame_index: int
    hand: HandAnnotation
    intrinsics: Optional[CameraIntrinsics] = None
    object_pose: Optional[RigidPose] = None
    object_id: Optional[str] = None
    object_keypoints: Optional[PointSet3] = None
    object_keypoints_2d: Optional[np.ndarray] = None
    object_diameter: Optional[float] = None
    amodal_hand_mask: Optional[MaskLike] = None
    full_hand_mask: Optional[MaskLike] = None
    grasping_label: Optional[bool] = None
    occlusion_proportion: Optional[float] = None
    vertices_ref: Optional[str] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise InputError(f"frame_index는 0 이상이어야 합니다: {self.frame_index}")
        if self.grasping_label and self.object_pose is None:
            raise MissingAnnotation(f"파지 라벨이 참인 프레임에 객체 자세가 없습니다: {self.frame_id}")
        if self.occlusion_proportion is not None and not 0.0 <= self.occlusion_proportion <= 1.0:
            raise InputError(f"가림 비율은 [0, 1] 범위여야 합니다: {self.occlusion_proportion}")


# ---------------------------------------------------------------------------
# 라벨 생성
# ---------------------------------------------------------------------------


def label_grasping(
    sequence: Sequence[FrameRecord],
    rre_threshold: float = deg_to_rad(DEFAULT_RRE_THRESHOLD_DEG),
    rte_threshold: float = DEFAULT_RTE_THRESHOLD_MM,
    reference: ReferencePolicy = "first_annotated",
) -> List[FrameRecord]:
    """한 시퀀스의 프레임별 파지 라벨을 계산합니다.

    기준 자세 대비 RRE가 rre_threshold(라디안)를 넘거나 RTE가 rte_threshold(mm)를
    넘으면 파지로 봅니다. 객체 주석이 없는 프레임은 파지가 아닙니다.
    reference="initial"이면 frame_index가 가장 작은 프레임을 기준으로 고정하고,
    그 프레임에 자세가 없는데 다른 프레임에 있으면 MissingReference를 발생시킵니다.

    Returns:
        입력 순서를 유지한 새 레코드 목록
    """
    if not sequence:
        return []
    sequence_ids = {r.sequence_id for r in sequence}
    if len(sequence_ids) != 1:
        raise InputError(f"서로 다른 sequence_id가 섞여 있습니다: {sorted(sequence_ids)}")

    ordered = sorted(sequence, key=lambda r: r.frame_index)
    annotated = [r for r in ordered if r.object_pose is not None]
    ref: Optional[RigidPose] = annotated[0].object_pose if annotated else None
    if reference == "initial" and annotated and ordered[0].object_pose is None:
        raise MissingReference(
            f"시퀀스 {ordered[0].sequence_id}의 첫 프레임에 객체 자세가 없습니다"
        )

    labeled = []
    for record in sequence:
        pose = record.object_pose
        if pose is None or ref is None:
            grasped = False
        else:
            rre = relative_rotation_error(pose.rotation, ref.rotation)
            rte = relative_translation_error(pose.translation, ref.translation)
            grasped = rre > rre_threshold or rte > rte_threshold
        labeled.append(replace(record, grasping_label=grasped))
    return labeled


def group_by_sequence(records: Iterable[FrameRecord]) -> "OrderedDict[str, List[FrameRecord]]":
    groups: "OrderedDict[str, List[FrameRecord]]" = OrderedDict()
    for record in records:
        groups.setdefault(record.sequence_id, []).append(record)
    return groups


def label_sequences(
    records: Sequence[FrameRecord],
    rre_threshold: float = deg_to_rad(DEFAULT_RRE_THRESHOLD_DEG),
    rte_threshold: float = DEFAULT_RTE_THRESHOLD_MM,
    reference: ReferencePolicy = "first_annotated",
) -> List[FrameRecord]:
    """여러 시퀀스가 섞인 레코드에 파지 라벨을 붙입니다. 출력 순서는 입력 순서와 같습니다."""
    by_id: Dict[int, FrameRecord] = {}
    for group in group_by_sequence(records).values():
        for original, labeled in zip(group, label_grasping(group, rre_threshold, rte_threshold, reference)):
            by_id[id(original)] = labeled
    return [by_id[id(r)] for r in records]


def assume_hand_only(records: Sequence[FrameRecord]) -> List[FrameRecord]:
    """객체 주석이 없는 데이터셋의 모든 프레임을 손-단독 장면으로 표시합니다."""
    for record in records:
        if record.object_pose is not None:
            raise InputError(f"객체 자세가 있는 프레임입니다: {record.frame_id}")
    return [replace(r, grasping_label=False) for r in records]


def split_scenes(records: Sequence[FrameRecord]) -> Tuple[List[FrameRecord], List[FrameRecord]]:
    """파지 라벨로 (손-단독, 손-객체) 장면을 나눕니다. 각 부분은 입력 순서를 유지합니다."""
    hand_only: List[FrameRecord] = []
    hand_object: List[FrameRecord] = []
    for record in records:
        if record.grasping_label is None:
            raise UnlabeledRecord(f"파지 라벨이 없는 프레임입니다: {record.frame_id}")
        (hand_object if record.grasping_label else hand_only).append(record)
    return hand_only, hand_object


def scene_counts(records: Sequence[FrameRecord]) -> Dict[str, int]:
    hand_only, hand_object = split_scenes(records)
    return {"hand_only": len(hand_only), "hand_object": len(hand_object), "total": len(records)}


def occlusion_proportion(amodal: BinaryMask, full: BinaryMask, mode: OcclusionMode = "complement") -> float:
    """amodal 손 마스크와 렌더링된 전체 손 마스크로 가림 비율을 구합니다.

    mode="complement"는 1 − IoU, mode="iou"는 IoU 그대로를 반환합니다.
    """
    iou = mask_iou(amodal, full)
    return iou if mode == "iou" else 1.0 - iou


def annotate_occlusion(records: Sequence[FrameRecord], mode: OcclusionMode = "complement") -> List[FrameRecord]:
    """두 마스크가 모두 있는 레코드에 가림 비율을 채웁니다. 나머지는 그대로 둡니다."""
    out = []
    for record in records:
        if record.amodal_hand_mask is None or record.full_hand_mask is None:
            out.append(record)
            continue
        value = occlusion_proportion(resolve_mask(record.amodal_hand_mask), resolve_mask(record.full_hand_mask), mode)
        out.append(replace(record, occlusion_proportion=value))
    return out


def is_enhancement_eligible(occlusion: float, grasping: bool, tau: float = DEFAULT_TAU) -> bool:
    return bool(grasping) and occlusion >= tau


def enhancement_eligible(record: FrameRecord, tau: float = DEFAULT_TAU) -> bool:
    """가림 비율이 tau 이상인 파지 프레임만 강화 손실 대상입니다."""
    if record.occlusion_proportion is None or record.grasping_label is None:
        raise MissingAnnotation(f"가림 비율 또는 파지 라벨이 없습니다: {record.frame_id}")
    return is_enhancement_eligible(record.occlusion_proportion, record.grasping_label, tau)


def repaint_mask(hand_render: BinaryMask, object_render: BinaryMask, radius: int = 0) -> BinaryMask:
    """복원할 영역 마스크: 손과 객체 렌더 마스크의 합집합을 radius만큼 팽창"""
    return dilate(mask_union(hand_render, object_render), radius)


# ---------------------------------------------------------------------------
# 매니페스트 스키마
# ---------------------------------------------------------------------------


Floats3 = Annotated[List[float], Field(min_length=3, max_length=3)]
Floats9 = Annotated[List[float], Field(min_length=9, max_length=9)]
Joints3D = Annotated[List[float], Field(min_length=NUM_JOINTS * 3, max_length=NUM_JOINTS * 3)]
Joints2D = Annotated[List[float], Field(min_length=NUM_JOINTS * 2, max_length=NUM_JOINTS * 2)]
ManoPose = Annotated[List[float], Field(min_length=NUM_MANO_POSE, max_length=NUM_MANO_POSE)]
ManoShape = Annotated[List[float], Field(min_length=NUM_MANO_SHAPE, max_length=NUM_MANO_SHAPE)]


class _Schema(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


class IntrinsicsSchema(_Schema):
    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float


class ObjectSchema(_Schema):
    id: Optional[str] = None
    rotation: Optional[Floats9] = None
    translation: Optional[Floats3] = None
    keypoints: Optional[List[float]] = None
    keypoints_2d: Optional[List[float]] = None
    diameter: Optional[float] = Field(default=None, gt=0)


class RleSchema(_Schema):
    width: int = Field(ge=0)
    height: int = Field(ge=0)
    rle: List[int]


class MasksSchema(_Schema):
    amodal: Optional[Union[str, RleSchema]] = None
    full: Optional[Union[str, RleSchema]] = None


class LabelsSchema(_Schema):
    grasping: Optional[bool] = None
    occlusion: Optional[float] = Field(default=None, ge=0, le=1)


class RecordSchema(_Schema):
    frame_id: str
    sequence_id: str
    frame_index: int = Field(ge=0)
    joints_3d: Joints3D
    joints_2d: Joints2D
    vertices_3d: Optional[Union[str, List[float]]] = None
    mano_pose: ManoPose
    mano_shape: ManoShape
    intrinsics: Optional[IntrinsicsSchema] = None
    object: Optional[ObjectSchema] = None
    masks: Optional[MasksSchema] = None
    labels: Optional[LabelsSchema] = None


def _schema_field(error: ValidationError) -> str:
    loc = error.errors()[0].get("loc", ())
    parts = [str(p) for p in loc if not isinstance(p, int)]
    # Union 분기 태그(str, list[float], RleSchema)는 필드 경로에서 뺌
    parts = [p for p in parts if p != "str" and "[" not in p and not p[:1].isupper()]
    return ".".join(parts) or "record"


def _mask_from_schema(value: Union[str, RleSchema, None], base_dir: str) -> Optional[MaskRef]:
    if value is None:
        return None
    if isinstance(value, str):
        return MaskRef(path=value, base_dir=base_dir)
    return MaskRef(runs=tuple(value.rle), width=value.width, height=value.height, base_dir=base_dir)


def _record_from_schema(row: RecordSchema, base_dir: str, strict: bool, line: int) -> FrameRecord:
    if strict and row.intrinsics is None:
        raise SchemaError("intrinsics", line)

    vertices = None
    vertices_ref = None
    if isinstance(row.vertices_3d, str):
        vertices_ref = row.vertices_3d
        try:
            vertices = np.load(Path(base_dir) / vertices_ref)
        except (OSError, ValueError) as e:
            raise ParseError(f"정점 파일을 읽을 수 없습니다: {vertices_ref} ({e})", line)
    elif row.vertices_3d is not None:
        vertices = row.vertices_3d

    try:
        hand = HandAnnotation(
            joints_3d=row.joints_3d,
            joints_2d=row.joints_2d,
            mano_pose=row.mano_pose,
            mano_shape=row.mano_shape,
            vertices_3d=vertices,
        )
    except InputError as e:
        raise SchemaError("vertices_3d", line, str(e))

    intrinsics = None
    if row.intrinsics is not None:
        i = row.intrinsics
        intrinsics = CameraIntrinsics(i.fx, i.fy, i.cx, i.cy)

    pose = keypoints = keypoints_2d = None
    obj = row.object
    if obj is not None:
        if (obj.rotation is None) != (obj.translation is None):
            raise SchemaError("object.rotation" if obj.rotation is None else "object.translation", line)
        if obj.rotation is not None:
            try:
                pose = RigidPose(Rotation3(np.asarray(obj.rotation).reshape(3, 3)), np.asarray(obj.translation))
            except InputError as e:
                raise SchemaError("object.rotation", line, str(e))
        if obj.keypoints is not None:
            if len(obj.keypoints) == 0 or len(obj.keypoints) % 3:
                raise SchemaError("object.keypoints", line, "길이가 3의 배수가 아닙니다")
            keypoints = PointSet3(np.asarray(obj.keypoints).reshape(-1, 3))
        if obj.keypoints_2d is not None:
            keypoints_2d = np.asarray(obj.keypoints_2d, dtype=float)
            if keypoints is None or keypoints_2d.size != 2 * len(keypoints):
                raise SchemaError("object.keypoints_2d", line, "3D 키포인트 수와 맞지 않습니다")
            keypoints_2d = keypoints_2d.reshape(-1, 2)

    masks = row.masks or MasksSchema()
    labels = row.labels or LabelsSchema()
    try:
        return FrameRecord(
            frame_id=row.frame_id,
            sequence_id=row.sequence_id,
            frame_index=row.frame_index,
            hand=hand,
            intrinsics=intrinsics,
            object_pose=pose,
            object_id=obj.id if obj else None,
            object_keypoints=keypoints,
            object_keypoints_2d=keypoints_2d,
            object_diameter=obj.diameter if obj else None,
            amodal_hand_mask=_mask_from_schema(masks.amodal, base_dir),
            full_hand_mask=_mask_from_schema(masks.full, base_dir),
            grasping_label=labels.grasping,
            occlusion_proportion=labels.occlusion,
            vertices_ref=vertices_ref,
        )
    except MissingAnnotation as e:
        raise SchemaError("object", line, str(e))


def parse_manifest_line(text: str, line: int, base_dir: str = ".", strict: bool = True) -> FrameRecord:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"JSON 구문 오류: {e.msg}", line)
    if not isinstance(data, dict):
        raise ParseError("레코드는 JSON 객체여야 합니다", line)
    try:
        row = RecordSchema.model_validate(data)
    except ValidationError as e:
        raise SchemaError(_schema_field(e), line, e.errors()[0].get("msg", ""))
    return _record_from_schema(row, base_dir, strict, line)


def load_manifest(path: Union[str, Path], strict: bool = True) -> List[FrameRecord]:
    """매니페스트를 읽습니다. 빈 줄은 건너뜁니다.

    strict=False이면 카메라 내부 파라미터가 없는 레코드도 허용합니다 (평가 전용 입력).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"매니페스트 파일을 찾을 수 없습니다: {path}")
    base_dir = str(path.parent)
    records = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        records.append(parse_manifest_line(line, number, base_dir, strict))
    trace(f"매니페스트 로드: {path} ({len(records)}개 레코드)")
    return records


# ---------------------------------------------------------------------------
# 정규 직렬화
# ---------------------------------------------------------------------------


def format_float(value: float) -> str:
    """17자리 유효숫자 십진 표현. 음의 0은 부호를 보존합니다."""
    value = float(value)
    if not math.isfinite(value):
        raise InputError(f"유한하지 않은 값은 저장할 수 없습니다: {value}")
    text = format(value, ".17g")
    if value == 0.0 and math.copysign(1.0, value) < 0:
        return "-0.0"
    return text


def canonical_json(value: Any) -> str:
    """키를 정렬하고 실수를 17자리로 쓰는 한 줄 JSON"""
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, dict):
        items = (f"{json.dumps(k, ensure_ascii=False)}:{canonical_json(value[k])}" for k in sorted(value))
        return "{" + ",".join(items) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(canonical_json(v) for v in value) + "]"
    if isinstance(value, np.ndarray):
        return canonical_json([float(v) for v in value.reshape(-1)])
    raise InputError(f"직렬화할 수 없는 값입니다: {type(value).__name__}")


def _mask_to_json(mask: Optional[MaskLike]) -> Any:
    if mask is None:
        return None
    if isinstance(mask, MaskRef):
        if mask.path is not None:
            return mask.path
        return {"width": mask.width, "height": mask.height, "rle": list(mask.runs or ())}
    return {"width": mask.width, "height": mask.height, "rle": rle_encode(mask)}


def record_to_json(record: FrameRecord) -> Dict[str, Any]:
    hand = record.hand
    data: Dict[str, Any] = {
        "frame_id": record.frame_id,
        "sequence_id": record.sequence_id,
        "frame_index": int(record.frame_index),
        "joints_3d": hand.joints_3d,
        "joints_2d": hand.joints_2d,
        "mano_pose": hand.mano_pose,
        "mano_shape": hand.mano_shape,
    }
    if record.vertices_ref is not None:
        data["vertices_3d"] = record.vertices_ref
    elif hand.vertices_3d is not None:
        data["vertices_3d"] = hand.vertices_3d
    if record.intrinsics is not None:
        i = record.intrinsics
        data["intrinsics"] = {"fx": i.fx, "fy": i.fy, "cx": i.cx, "cy": i.cy}

    obj: Dict[str, Any] = {}
    if record.object_id is not None:
        obj["id"] = record.object_id
    if record.object_pose is not None:
        obj["rotation"] = record.object_pose.rotation.m
        obj["translation"] = record.object_pose.translation
    if record.object_keypoints is not None:
        obj["keypoints"] = record.object_keypoints.points
    if record.object_keypoints_2d is not None:
        obj["keypoints_2d"] = record.object_keypoints_2d
    if record.object_diameter is not None:
        obj["diameter"] = float(record.object_diameter)
    if obj:
        data["object"] = obj

    masks = {}
    for key, value in (("amodal", record.amodal_hand_mask), ("full", record.full_hand_mask)):
        encoded = _mask_to_json(value)
        if encoded is not None:
            masks[key] = encoded
    if masks:
        data["masks"] = masks

    labels: Dict[str, Any] = {}
    if record.grasping_label is not None:
        labels["grasping"] = bool(record.grasping_label)
    if record.occlusion_proportion is not None:
        labels["occlusion"] = float(record.occlusion_proportion)
    if labels:
        data["labels"] = labels
    return data


def dump_manifest(records: Sequence[FrameRecord]) -> str:
    return "".join(canonical_json(record_to_json(r)) + "\n" for r in records)


def save_manifest(records: Sequence[FrameRecord], path: Union[str, Path]) -> None:
    Path(path).write_text(dump_manifest(records), encoding="utf-8")
    trace(f"매니페스트 저장: {path} ({len(records)}개 레코드)")

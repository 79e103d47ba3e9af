"""Synthetic paired skeleton/silhouette gait sequences.

A 3D articulated walker (sinusoidal joint-angle trajectories, treadmill-style
in place) is posed per frame and projected orthographically at a given azimuth
onto a 64x64 image. The 17 COCO keypoints land in the same pixel space as the
rasterized silhouette, so the two modalities are frame- and geometry-aligned.

Identity is carried by limb proportions, gait frequency, phase offsets, and
posture, which both modalities can plausibly detect. Conditions perturb only
the rendering: CL inflates the torso/limb thickness, BG attaches a blob near
one hand. Skeletons are identical across conditions for the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IMG = 64
NUM_JOINTS = 17

# COCO-17 keypoint order
NOSE = 0
L_EYE, R_EYE, L_EAR, R_EAR = 1, 2, 3, 4
L_SHO, R_SHO, L_ELB, R_ELB, L_WRI, R_WRI = 5, 6, 7, 8, 9, 10
L_HIP, R_HIP, L_KNE, R_KNE, L_ANK, R_ANK = 11, 12, 13, 14, 15, 16

# kinematic tree with the nose as root; parent of joint i is PARENTS[i]
PARENTS = np.array([0, 0, 0, 1, 2, 0, 0, 5, 6, 7, 8, 5, 6, 11, 12, 13, 14])

CONDITIONS = ("NM", "BG", "CL")

BONES = [
    (L_SHO, L_ELB), (L_ELB, L_WRI), (R_SHO, R_ELB), (R_ELB, R_WRI),
    (L_HIP, L_KNE), (L_KNE, L_ANK), (R_HIP, R_KNE), (R_KNE, R_ANK),
]


@dataclass
class SubjectParams:
    """Per-subject body geometry and walking style."""

    limb_lengths: dict[str, float]
    gait_frequency: float            # cycles per frame
    phase_offsets: np.ndarray        # (17,) radians
    posture_bias: np.ndarray         # (17,) radians
    amplitudes: dict[str, float]     # swing amplitudes, radians
    seed: int


@dataclass
class SkeletonSequence:
    joints: np.ndarray              # (T, 17, 2) float64 pixel coords, v down
    subject_id: int
    condition: str
    view: int                       # azimuth degrees in {0, 18, ..., 180}
    seq_index: int


@dataclass
class SilhouetteSequence:
    frames: np.ndarray              # (T, 64, 64) uint8 in {0, 1}
    subject_id: int
    condition: str
    view: int
    seq_index: int


def synth_subject(seed: int) -> SubjectParams:
    """Deterministically sample a subject's body proportions and gait style."""
    rng = np.random.default_rng(seed)
    limbs = {
        "thigh": rng.uniform(0.21, 0.27),
        "shin": rng.uniform(0.20, 0.26),
        "torso": rng.uniform(0.26, 0.33),
        "neck": rng.uniform(0.055, 0.08),
        "head_r": rng.uniform(0.05, 0.068),
        "shoulder_hw": rng.uniform(0.085, 0.125),
        "hip_hw": rng.uniform(0.05, 0.078),
        "upper_arm": rng.uniform(0.15, 0.19),
        "forearm": rng.uniform(0.13, 0.17),
    }
    amplitudes = {
        "hip": rng.uniform(0.32, 0.55),
        "knee": rng.uniform(0.55, 0.95),
        "arm": rng.uniform(0.20, 0.45),
        "elbow": rng.uniform(0.25, 0.55),
        "bob": rng.uniform(0.008, 0.02),
        "lean": rng.uniform(-0.04, 0.10),
    }
    return SubjectParams(
        limb_lengths=limbs,
        gait_frequency=rng.uniform(0.055, 0.13),
        phase_offsets=rng.uniform(-0.25, 0.25, NUM_JOINTS),
        posture_bias=rng.uniform(-0.06, 0.06, NUM_JOINTS),
        amplitudes=amplitudes,
        seed=int(seed),
    )


def _pose_3d(subject: SubjectParams, phase: float) -> np.ndarray:
    """17 joint positions at one gait phase: x forward, y up, z lateral-left."""
    L = subject.limb_lengths
    A = subject.amplitudes
    d = subject.phase_offsets
    b = subject.posture_bias

    leg_len = L["thigh"] + L["shin"]
    pelvis_y = leg_len - A["bob"] * (1.0 - np.cos(2.0 * phase)) * 0.5
    sway = 0.012 * np.sin(phase)

    pts = np.zeros((NUM_JOINTS, 3))

    def leg(side, hip_idx, knee_idx, ank_idx, phase_side):
        hip_angle = A["hip"] * np.sin(phase_side + d[hip_idx]) + b[hip_idx]
        swing = 0.5 * (1.0 + np.cos(phase_side + d[knee_idx] - 1.0))
        knee_angle = A["knee"] * swing**2 + 0.08 + b[knee_idx]
        hip = np.array([0.0, pelvis_y - 0.015, side * L["hip_hw"]]) + [0, 0, sway]
        knee = hip + L["thigh"] * np.array([np.sin(hip_angle), -np.cos(hip_angle), 0.0])
        shin_angle = hip_angle - knee_angle
        ank = knee + L["shin"] * np.array([np.sin(shin_angle), -np.cos(shin_angle), 0.0])
        pts[hip_idx], pts[knee_idx], pts[ank_idx] = hip, knee, ank

    leg(+1, L_HIP, L_KNE, L_ANK, phase)
    leg(-1, R_HIP, R_KNE, R_ANK, phase + np.pi)

    lean = A["lean"]
    chest = np.array(
        [L["torso"] * np.sin(lean), pelvis_y + L["torso"] * np.cos(lean), sway * 0.5]
    )

    def arm(side, sho_idx, elb_idx, wri_idx, phase_side):
        sho = chest + np.array([0.0, -0.01, side * L["shoulder_hw"]])
        arm_angle = A["arm"] * np.sin(phase_side + d[sho_idx]) + b[sho_idx]
        elb = sho + L["upper_arm"] * np.array([np.sin(arm_angle), -np.cos(arm_angle), 0.0])
        elb_flex = 0.25 + A["elbow"] * 0.5 * (1.0 + np.sin(phase_side + d[elb_idx]))
        wri_angle = arm_angle + elb_flex
        wri = elb + L["forearm"] * np.array([np.sin(wri_angle), -np.cos(wri_angle), 0.0])
        pts[sho_idx], pts[elb_idx], pts[wri_idx] = sho, elb, wri

    # arms swing against the same-side leg
    arm(+1, L_SHO, L_ELB, L_WRI, phase + np.pi)
    arm(-1, R_SHO, R_ELB, R_WRI, phase)

    neck = chest + np.array([0.0, L["neck"], 0.0])
    head_c = neck + np.array([0.012, L["head_r"], 0.0])
    pts[NOSE] = head_c + np.array([0.55 * L["head_r"], -0.1 * L["head_r"], 0.0])
    for side, eye, ear in ((+1, L_EYE, L_EAR), (-1, R_EYE, R_EAR)):
        pts[eye] = head_c + np.array(
            [0.45 * L["head_r"], 0.15 * L["head_r"], side * 0.35 * L["head_r"]]
        )
        pts[ear] = head_c + np.array(
            [0.02 * L["head_r"], 0.05 * L["head_r"], side * 0.85 * L["head_r"]]
        )
    return pts


def _standing_height(subject: SubjectParams) -> float:
    L = subject.limb_lengths
    return L["thigh"] + L["shin"] + L["torso"] + L["neck"] + 2.2 * L["head_r"]


def _capsule(mask, yy, xx, p0, p1, r):
    """Set mask pixels within distance r of segment p0-p1 (pixel coords u,v)."""
    lo_u = max(int(np.floor(min(p0[0], p1[0]) - r - 1)), 0)
    hi_u = min(int(np.ceil(max(p0[0], p1[0]) + r + 1)), IMG - 1)
    lo_v = max(int(np.floor(min(p0[1], p1[1]) - r - 1)), 0)
    hi_v = min(int(np.ceil(max(p0[1], p1[1]) + r + 1)), IMG - 1)
    if lo_u > hi_u or lo_v > hi_v:
        return
    sub_x = xx[lo_v : hi_v + 1, lo_u : hi_u + 1]
    sub_y = yy[lo_v : hi_v + 1, lo_u : hi_u + 1]
    du, dv = p1[0] - p0[0], p1[1] - p0[1]
    denom = du * du + dv * dv
    if denom < 1e-18:
        t = np.zeros_like(sub_x)
    else:
        t = np.clip(((sub_x - p0[0]) * du + (sub_y - p0[1]) * dv) / denom, 0.0, 1.0)
    dist2 = (sub_x - (p0[0] + t * du)) ** 2 + (sub_y - (p0[1] + t * dv)) ** 2
    mask[lo_v : hi_v + 1, lo_u : hi_u + 1] |= dist2 <= r * r


def _ellipse(mask, yy, xx, center, ru, rv):
    lo_u = max(int(np.floor(center[0] - ru - 1)), 0)
    hi_u = min(int(np.ceil(center[0] + ru + 1)), IMG - 1)
    lo_v = max(int(np.floor(center[1] - rv - 1)), 0)
    hi_v = min(int(np.ceil(center[1] + rv + 1)), IMG - 1)
    if lo_u > hi_u or lo_v > hi_v:
        return
    sub_x = xx[lo_v : hi_v + 1, lo_u : hi_u + 1]
    sub_y = yy[lo_v : hi_v + 1, lo_u : hi_u + 1]
    val = ((sub_x - center[0]) / ru) ** 2 + ((sub_y - center[1]) / rv) ** 2
    mask[lo_v : hi_v + 1, lo_u : hi_u + 1] |= val <= 1.0


_GRID_Y, _GRID_X = np.mgrid[0:IMG, 0:IMG].astype(np.float64)


def _rasterize(kps: np.ndarray, scale: float, subject: SubjectParams, condition: str,
               bag_side: int, bag_size: float) -> np.ndarray:
    """Draw one silhouette frame from projected keypoints (pixel coords)."""
    L = subject.limb_lengths
    mask = np.zeros((IMG, IMG), dtype=bool)
    yy, xx = _GRID_Y, _GRID_X

    cl = condition == "CL"
    limb_mul = 1.3 if cl else 1.0
    torso_mul = 1.65 if cl else 1.0

    radii = {
        "thigh": 0.034 * limb_mul, "shin": 0.026 * limb_mul,
        "upper_arm": 0.026 * limb_mul, "forearm": 0.020 * limb_mul,
    }
    bone_r = {
        (L_HIP, L_KNE): radii["thigh"], (R_HIP, R_KNE): radii["thigh"],
        (L_KNE, L_ANK): radii["shin"], (R_KNE, R_ANK): radii["shin"],
        (L_SHO, L_ELB): radii["upper_arm"], (R_SHO, R_ELB): radii["upper_arm"],
        (L_ELB, L_WRI): radii["forearm"], (R_ELB, R_WRI): radii["forearm"],
    }
    for (a, b), r in bone_r.items():
        _capsule(mask, yy, xx, kps[a], kps[b], r * scale)

    # torso: side seams plus a wide center column between chest and pelvis
    sho_mid = 0.5 * (kps[L_SHO] + kps[R_SHO])
    hip_mid = 0.5 * (kps[L_HIP] + kps[R_HIP])
    seam_r = 0.035 * torso_mul * scale
    _capsule(mask, yy, xx, kps[L_SHO], kps[L_HIP], seam_r)
    _capsule(mask, yy, xx, kps[R_SHO], kps[R_HIP], seam_r)
    _capsule(mask, yy, xx, sho_mid, hip_mid, 0.055 * torso_mul * scale)
    _capsule(mask, yy, xx, kps[L_SHO], kps[R_SHO], 0.03 * torso_mul * scale)
    _capsule(mask, yy, xx, kps[L_HIP], kps[R_HIP], 0.04 * torso_mul * scale)
    if cl:
        # coat skirt reaching over the upper thighs
        knee_mid = 0.5 * (kps[L_KNE] + kps[R_KNE])
        skirt_end = hip_mid + 0.45 * (knee_mid - hip_mid)
        _capsule(mask, yy, xx, hip_mid, skirt_end, 0.075 * scale)

    # neck and head
    _capsule(mask, yy, xx, sho_mid, kps[NOSE], 0.024 * scale)
    ear_mid = 0.5 * (kps[L_EAR] + kps[R_EAR])
    hr = L["head_r"] * 1.12 * scale
    _ellipse(mask, yy, xx, ear_mid, hr, 1.12 * hr)

    if condition == "BG":
        wrist = kps[L_WRI] if bag_side > 0 else kps[R_WRI]
        center = wrist + np.array([0.02 * scale, 0.055 * scale])
        _ellipse(mask, yy, xx, center, bag_size * scale, 1.25 * bag_size * scale)
        _capsule(mask, yy, xx, wrist, center, 0.012 * scale)

    return mask.astype(np.uint8)


def render_sequence(
    subject: SubjectParams,
    condition: str,
    view: int,
    T: int,
    seed: int,
    subject_id: int = 0,
    seq_index: int = 0,
) -> tuple[SkeletonSequence, SilhouetteSequence]:
    """Pose, project, and rasterize one walking sequence.

    The kinematics depend only on (subject, T, seed), never on the condition,
    so NM/BG/CL with equal seeds share identical skeletons.
    """
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    if T < 2:
        raise ValueError(f"render_sequence: T must be >= 2, got {T}")
    height = _standing_height(subject)
    if height <= 1e-6:
        raise ValueError("render_sequence: degenerate projection (zero body height)")

    rng = np.random.default_rng(seed)
    phase0 = rng.uniform(0.0, 2.0 * np.pi)
    freq = subject.gait_frequency * rng.uniform(0.97, 1.03)
    # condition extras are drawn after the kinematic draws so that skeletons
    # stay identical across conditions for one seed
    bag_side = 1 if rng.uniform() < 0.5 else -1
    bag_size = rng.uniform(0.042, 0.06)

    theta = np.deg2rad(view)
    scale = 56.0 / height
    base_v = 61.0

    joints = np.zeros((T, NUM_JOINTS, 2))
    frames = np.zeros((T, IMG, IMG), dtype=np.uint8)
    for t in range(T):
        phase = phase0 + 2.0 * np.pi * freq * t
        p3 = _pose_3d(subject, phase)
        u = p3[:, 0] * np.sin(theta) + p3[:, 2] * np.cos(theta)
        v = p3[:, 1]
        hip_u = 0.5 * (u[L_HIP] + u[R_HIP])
        kps = np.stack(
            [(IMG / 2) + (u - hip_u) * scale, base_v - v * scale], axis=1
        )
        joints[t] = kps
        frames[t] = _rasterize(kps, scale, subject, condition, bag_side, bag_size)
        if frames[t].sum() == 0:
            raise ValueError(f"render_sequence: empty silhouette at frame {t}")

    ske = SkeletonSequence(joints, subject_id, condition, int(view), seq_index)
    sil = SilhouetteSequence(frames, subject_id, condition, int(view), seq_index)
    return ske, sil

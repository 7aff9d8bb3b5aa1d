"""Procedural two-frame toy scenes with coherent ground truth for all tasks.

A scene is a backdrop (ground plane plus wall or sky band) and 2-6 primitive
objects (rectangles/ellipses) at distinct depths. The second frame translates
each object by a whole number of pixels and shifts its depth, so screen-space
warps are exact and every derived quantity has a closed form:

* the image is exactly ``albedo * shading`` (clamped, remapped to [-1, 1]),
* optical flow is the per-object pixel displacement,
* scene flow is the screen flow back-projected with depth plus the depth
  delta in its third channel,
* occlusion is decided by comparing object ids along the flow.

Shading is grayscale Lambertian with an ambient floor of 0.2 under one
directional light per scene; object faces point at the camera and the ground
is a tilted plane (camera frame: x right, y down, z forward).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STYLES = ("indoor", "urban", "objects")

# class indices in the default palette
_ROAD, _BUILDING, _POLE, _LIGHT, _SIGN, _VEGETATION, _SKY, _VEHICLE = range(8)
_OBJECT_CLASSES = (_BUILDING, _POLE, _LIGHT, _SIGN, _VEGETATION, _VEHICLE)

MIN_RESOLUTION = 16


@dataclass
class SceneSample:
    frame_i: np.ndarray
    frame_j: np.ndarray
    labels: dict[str, np.ndarray]
    validity: dict[str, np.ndarray]
    dataset_id: str | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class _Primitive:
    kind: str
    cy: float
    cx: float
    ry: float
    rx: float
    depth: float
    depth_j: float
    albedo: np.ndarray
    cls: int
    dx: int
    dy: int

    @property
    def ddepth(self) -> float:
        # defined as the float difference so depth_j - depth == ddepth exactly
        return self.depth_j - self.depth

    def mask(self, yy: np.ndarray, xx: np.ndarray, shifted: bool) -> np.ndarray:
        cy = self.cy + (self.dy if shifted else 0)
        cx = self.cx + (self.dx if shifted else 0)
        if self.kind == "rect":
            return (np.abs(yy - cy) <= self.ry) & (np.abs(xx - cx) <= self.rx)
        return ((yy - cy) / self.ry) ** 2 + ((xx - cx) / self.rx) ** 2 <= 1.0


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def generate_scene(
    seed: int | np.random.SeedSequence,
    resolution: tuple[int, int] = (32, 64),
    style: str = "urban",
    motion_scale: float = 1.0,
) -> SceneSample:
    """Render one two-frame scene carrying ground truth for all seven tasks."""
    if style not in STYLES:
        raise ValueError(f"unknown style {style!r}; choose from {STYLES}")
    h, w = resolution
    if h < MIN_RESOLUTION or w < MIN_RESOLUTION:
        raise ValueError(f"resolution {h}x{w} too small to place primitives (min {MIN_RESOLUTION})")
    rng = np.random.default_rng(seed)
    focal = w / 2.0

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    # --- backdrop ---------------------------------------------------------
    albedo = np.zeros((h, w, 3))
    depth_i = np.zeros((h, w))
    normal = np.zeros((h, w, 3))
    semantic = np.zeros((h, w), dtype=np.int64)
    sky_mask = np.zeros((h, w), dtype=bool)

    tilt = np.deg2rad(rng.uniform(15.0, 35.0))
    ground_normal = np.array([0.0, -np.cos(tilt), -np.sin(tilt)])
    facing = np.array([0.0, 0.0, -1.0])

    near, far = rng.uniform(1.5, 2.5), rng.uniform(8.0, 14.0)
    if style == "objects":
        horizon = 0
        back_depth = rng.uniform(9.0, 15.0)
        depth_i[:] = back_depth
        normal[:] = facing
        albedo[:] = rng.uniform(0.25, 0.6, size=3)
        semantic[:] = _SKY
    else:
        horizon = int(h * rng.uniform(0.35, 0.55))
        rows = np.clip((yy - horizon) / max(h - 1 - horizon, 1), 0.0, 1.0)
        depth_i[:] = far + (near - far) * rows
        normal[:] = ground_normal
        base = rng.uniform(0.35, 0.55, size=3)
        albedo[:] = base * (0.6 + 0.4 * rows)[..., None]
        if style == "urban":
            semantic[:] = _ROAD
            depth_i[:horizon] = far
            normal[:horizon] = facing
            albedo[:horizon] = rng.uniform(0.55, 0.8, size=3) * np.array([0.9, 0.95, 1.0])
            semantic[:horizon] = _SKY
            sky_mask[:horizon] = True
        else:
            semantic[:] = _ROAD
            depth_i[:horizon] = far
            normal[:horizon] = facing
            albedo[:horizon] = rng.uniform(0.4, 0.75, size=3)
            semantic[:horizon] = _SKY

    # --- primitives --------------------------------------------------------
    n_obj = int(rng.integers(2, 7))
    max_shift = max(2, min(h, w) // 8)
    prims = []
    for _ in range(n_obj):
        ry = rng.uniform(0.08, 0.22) * h
        rx = rng.uniform(0.06, 0.18) * w
        depth = rng.uniform(0.8, 7.5)
        depth_j = max(0.3, depth + rng.uniform(-0.4, 0.4) * motion_scale)
        if motion_scale == 0.0:
            depth_j = depth
        prims.append(
            _Primitive(
                kind=("rect" if rng.random() < 0.5 else "ellipse"),
                cy=rng.uniform(0.15 * h, 0.85 * h),
                cx=rng.uniform(0.1 * w, 0.9 * w),
                ry=max(ry, 1.5),
                rx=max(rx, 1.5),
                depth=depth,
                depth_j=depth_j,
                albedo=rng.uniform(0.15, 0.95, size=3),
                cls=int(rng.choice(_OBJECT_CLASSES)),
                dx=int(np.rint(rng.uniform(-max_shift, max_shift) * motion_scale)),
                dy=int(np.rint(rng.uniform(-max_shift, max_shift) * motion_scale)),
            )
        )
    # painter's order: far objects first so nearer ones overdraw them
    prims.sort(key=lambda p: -p.depth)

    id_i = np.zeros((h, w), dtype=np.int64)
    id_j = np.zeros((h, w), dtype=np.int64)
    albedo_j = albedo.copy()
    normal_j = normal.copy()
    depth_j_map = depth_i.copy()
    flow = np.zeros((h, w, 2))
    ddepth_map = np.zeros((h, w))

    for oid, p in enumerate(prims, start=1):
        m_i = p.mask(yy, xx, shifted=False)
        id_i[m_i] = oid
        albedo[m_i] = p.albedo
        normal[m_i] = facing
        depth_i[m_i] = p.depth
        semantic[m_i] = p.cls
        sky_mask[m_i] = False
        flow[m_i] = (p.dx, p.dy)
        ddepth_map[m_i] = p.ddepth

        m_j = p.mask(yy, xx, shifted=True)
        id_j[m_j] = oid
        albedo_j[m_j] = p.albedo
        normal_j[m_j] = facing
        depth_j_map[m_j] = p.depth_j

    # --- shading and frames -------------------------------------------------
    light = _unit(rng.normal(size=3))
    light[2] = -abs(light[2]) - 0.2
    light = _unit(light)
    shading = 0.2 + 0.8 * np.maximum(0.0, normal @ light)
    shading_j = 0.2 + 0.8 * np.maximum(0.0, normal_j @ light)
    frame_i = np.clip(albedo * shading[..., None], 0.0, 1.0) * 2.0 - 1.0
    frame_j = np.clip(albedo_j * shading_j[..., None], 0.0, 1.0) * 2.0 - 1.0

    # --- flow ground truth and occlusion -------------------------------------
    scene_flow = np.stack(
        [
            flow[..., 0] * depth_i / focal,
            flow[..., 1] * depth_i / focal,
            ddepth_map,
        ],
        axis=-1,
    )
    tx = xx + flow[..., 0]
    ty = yy + flow[..., 1]
    inside = (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
    txi = np.clip(tx, 0, w - 1).astype(np.int64)
    tyi = np.clip(ty, 0, h - 1).astype(np.int64)
    occluded = ~inside | (id_j[tyi, txi] != id_i)

    all_valid = np.ones((h, w), dtype=bool)
    geo_valid = ~sky_mask if style == "urban" else all_valid
    labels = {
        "semantic": semantic,
        "normal": normal,
        "depth": depth_i,
        "optical_flow": flow,
        "scene_flow": scene_flow,
        "shading": shading,
        "albedo": albedo,
    }
    validity = {
        "semantic": all_valid,
        "normal": geo_valid,
        "depth": geo_valid,
        "optical_flow": ~occluded,
        "scene_flow": ~occluded,
        "shading": all_valid,
        "albedo": all_valid,
    }
    seed_int = seed if isinstance(seed, (int, np.integer)) else None
    return SceneSample(
        frame_i=frame_i,
        frame_j=frame_j,
        labels=labels,
        validity=validity,
        seed=None if seed_int is None else int(seed_int),
        meta={"style": style, "focal": focal, "resolution": (h, w), "depth_j": depth_j_map},
    )


def warp_backward(target: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Sample ``target`` at p + flow(p) with bilinear interpolation.

    Used as the oracle for photometric flow consistency: for non-occluded
    pixels, warp_backward(frame_j, flow) should reproduce frame_i.
    """
    h, w = flow.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    tx = np.clip(xx + flow[..., 0], 0, w - 1)
    ty = np.clip(yy + flow[..., 1], 0, h - 1)
    x0 = np.floor(tx).astype(np.int64)
    y0 = np.floor(ty).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (tx - x0)[..., None]
    wy = (ty - y0)[..., None]
    out = (
        target[y0, x0] * (1 - wx) * (1 - wy)
        + target[y0, x1] * wx * (1 - wy)
        + target[y1, x0] * (1 - wx) * wy
        + target[y1, x1] * wx * wy
    )
    return out

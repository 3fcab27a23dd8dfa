"""Procedural shape generation for the synthetic benchmark.

Five closed-form categories (box, cylinder, lamp, table, chair) are built
from rectangle / disk / cylinder-side patches, so sampling uniform by
surface area is exact. Category dimension ranges echo desk-furniture
proportions; every sampled shape records its parameters in a
:class:`ShapeSpec` so generation is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pointadapt.errors import InvalidInputError

CATEGORIES = ("box", "cylinder", "lamp", "table", "chair")


@dataclass
class ShapeSpec:
    """Category, per-category dimensions, and a rigid pose (yaw + offset)."""

    category: str
    params: dict
    yaw: float = 0.0
    offset: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise InvalidInputError(f"unknown category {self.category!r}")
        for key, value in self.params.items():
            if not value > 0:
                raise InvalidInputError(
                    f"{self.category} dimension {key}={value} must be positive"
                )


# -- surface patches ---------------------------------------------------------
# each patch is (kind, area, geometry...) and knows how to sample itself


@dataclass
class _Rect:
    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def area(self):
        return float(np.linalg.norm(np.cross(self.u, self.v)))

    def sample(self, m, rng):
        s = rng.uniform(size=(m, 1))
        t = rng.uniform(size=(m, 1))
        return self.origin + s * self.u + t * self.v


@dataclass
class _Disk:
    center: np.ndarray
    radius: float

    @property
    def area(self):
        return float(np.pi * self.radius**2)

    def sample(self, m, rng):
        r = self.radius * np.sqrt(rng.uniform(size=m))
        theta = rng.uniform(0.0, 2.0 * np.pi, size=m)
        pts = np.stack([r * np.cos(theta), r * np.sin(theta), np.zeros(m)], axis=1)
        return pts + self.center


@dataclass
class _CylinderSide:
    base: np.ndarray  # center of the bottom circle; axis is +z
    radius: float
    height: float

    @property
    def area(self):
        return float(2.0 * np.pi * self.radius * self.height)

    def sample(self, m, rng):
        theta = rng.uniform(0.0, 2.0 * np.pi, size=m)
        z = rng.uniform(0.0, self.height, size=m)
        pts = np.stack(
            [self.radius * np.cos(theta), self.radius * np.sin(theta), z], axis=1
        )
        return pts + self.base


def _box_patches(center, size):
    cx, cy, cz = center
    sx, sy, sz = size
    hx, hy, hz = sx / 2.0, sy / 2.0, sz / 2.0
    ex = np.array([sx, 0.0, 0.0])
    ey = np.array([0.0, sy, 0.0])
    ez = np.array([0.0, 0.0, sz])
    corner = np.array([cx - hx, cy - hy, cz - hz])
    return [
        _Rect(corner, ex, ey),                       # bottom
        _Rect(corner + ez, ex, ey),                  # top
        _Rect(corner, ex, ez),                       # front
        _Rect(corner + ey, ex, ez),                  # back
        _Rect(corner, ey, ez),                       # left
        _Rect(corner + ex, ey, ez),                  # right
    ]


def _legs(width, foot_x, foot_y, height):
    patches = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            center = (sx * foot_x, sy * foot_y, height / 2.0)
            patches.extend(_box_patches(center, (width, width, height)))
    return patches


def build_patches(spec):
    """Surface patches for a shape in its canonical (z-up) frame."""
    p = spec.params
    if spec.category == "box":
        return _box_patches((0.0, 0.0, 0.0), (p["sx"], p["sy"], p["sz"]))
    if spec.category == "cylinder":
        base = np.array([0.0, 0.0, -p["h"] / 2.0])
        return [
            _CylinderSide(base, p["r"], p["h"]),
            _Disk(base, p["r"]),
            _Disk(base + np.array([0.0, 0.0, p["h"]]), p["r"]),
        ]
    if spec.category == "lamp":
        shade_base = np.array([0.0, 0.0, p["pole_h"]])
        return [
            _Disk(np.zeros(3), p["base_r"]),
            _CylinderSide(np.zeros(3), p["pole_r"], p["pole_h"]),
            _CylinderSide(shade_base, p["shade_r"], p["shade_h"]),
        ]
    if spec.category == "table":
        top_center = (0.0, 0.0, p["h"] + p["top_t"] / 2.0)
        patches = _box_patches(top_center, (p["sx"], p["sy"], p["top_t"]))
        inset = p["leg_w"]
        patches += _legs(
            p["leg_w"], p["sx"] / 2.0 - inset, p["sy"] / 2.0 - inset, p["h"]
        )
        return patches
    if spec.category == "chair":
        seat_center = (0.0, 0.0, p["h"] + p["seat_t"] / 2.0)
        patches = _box_patches(seat_center, (p["sx"], p["sy"], p["seat_t"]))
        back_center = (
            0.0,
            -p["sy"] / 2.0 + p["seat_t"] / 2.0,
            p["h"] + p["seat_t"] + p["back_h"] / 2.0,
        )
        patches += _box_patches(back_center, (p["sx"], p["seat_t"], p["back_h"]))
        inset = p["leg_w"]
        patches += _legs(
            p["leg_w"], p["sx"] / 2.0 - inset, p["sy"] / 2.0 - inset, p["h"]
        )
        return patches
    raise InvalidInputError(f"unknown category {spec.category!r}")


_PARAM_RANGES = {
    "box": {"sx": (0.5, 1.5), "sy": (0.5, 1.5), "sz": (0.5, 1.5)},
    "cylinder": {"r": (0.25, 0.7), "h": (0.7, 1.8)},
    "lamp": {
        "base_r": (0.18, 0.3),
        "pole_r": (0.03, 0.06),
        "pole_h": (0.7, 1.2),
        "shade_r": (0.2, 0.4),
        "shade_h": (0.25, 0.45),
    },
    "table": {
        "sx": (0.9, 1.6),
        "sy": (0.9, 1.6),
        "top_t": (0.06, 0.1),
        "h": (0.55, 0.9),
        "leg_w": (0.05, 0.09),
    },
    "chair": {
        "sx": (0.45, 0.7),
        "sy": (0.45, 0.7),
        "seat_t": (0.05, 0.08),
        "h": (0.4, 0.55),
        "back_h": (0.45, 0.7),
        "leg_w": (0.04, 0.07),
    },
}


def sample_shape_spec(category, rng):
    """Draw per-category dimensions and a random yaw/offset pose."""
    if category not in _PARAM_RANGES:
        raise InvalidInputError(f"unknown category {category!r}")
    params = {
        key: float(rng.uniform(lo, hi))
        for key, (lo, hi) in _PARAM_RANGES[category].items()
    }
    yaw = float(rng.uniform(0.0, 2.0 * np.pi))
    offset = tuple(rng.uniform(-0.2, 0.2, size=3))
    return ShapeSpec(category, params, yaw=yaw, offset=offset)


def generate_complete(spec, n, seed):
    """Sample ``n`` points uniformly by area over the shape's surfaces.

    Deterministic under ``seed``; the pose (yaw about z, then offset) is
    applied after sampling in the canonical frame.
    """
    if n < 64:
        raise InvalidInputError(f"n must be >= 64, got {n}")
    patches = build_patches(spec)
    areas = np.array([p.area for p in patches])
    rng = np.random.default_rng(seed)
    assignment = rng.choice(len(patches), size=n, p=areas / areas.sum())
    chunks = []
    for i, patch in enumerate(patches):
        m = int((assignment == i).sum())
        if m:
            chunks.append(patch.sample(m, rng))
    pts = np.concatenate(chunks, axis=0)
    cos_y, sin_y = np.cos(spec.yaw), np.sin(spec.yaw)
    rot = np.array([[cos_y, -sin_y, 0.0], [sin_y, cos_y, 0.0], [0.0, 0.0, 1.0]])
    return pts @ rot.T + np.asarray(spec.offset)

"""Compact convex domains (ball, box) with exact diameters and closed-form
Euclidean projections.

All operations broadcast over leading axes, so a batch of points with shape
``(R, d)`` projects in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Ball:
    """Euclidean ball {x : ||x - center|| <= radius}."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.center.ndim != 1:
            raise ValueError("ball center must be a 1-D vector")
        if not self.radius > 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")

    @property
    def dimension(self) -> int:
        return self.center.shape[0]

    def diameter(self) -> float:
        return 2.0 * self.radius

    def project(self, point) -> np.ndarray:
        point = _check_dimension(self, point).astype(float)
        delta = point - self.center
        nrm = np.linalg.norm(delta, axis=-1, keepdims=True)
        outside = nrm > self.radius
        if not np.any(outside):
            return np.array(point, copy=True)
        # A single rescale can land an ulp outside the ball (breaking
        # bit-for-bit idempotence), and radius/nrm can even round to 1.0 for
        # points barely outside. Shrink the scale one ulp at a time until
        # every rescaled point tests inside; this terminates because the
        # scale strictly decreases while the original delta stays fixed.
        scale = np.where(outside, self.radius / np.where(outside, nrm, 1.0), 1.0)
        while True:
            out = np.where(outside, self.center + delta * scale, point)
            new_nrm = np.linalg.norm(out - self.center, axis=-1, keepdims=True)
            still = outside & (new_nrm > self.radius)
            if not np.any(still):
                return out
            scale = np.where(still, np.nextafter(scale, 0.0), scale)

    def distance(self, point) -> np.ndarray:
        point = _check_dimension(self, point)
        nrm = np.linalg.norm(point - self.center, axis=-1)
        return np.maximum(nrm - self.radius, 0.0)

    def support(self, direction) -> float:
        """sup_{x in D} <direction, x>."""
        direction = np.asarray(direction, dtype=float)
        return float(direction @ self.center + self.radius * np.linalg.norm(direction))

    def farthest_distance(self, point) -> float:
        """max_{x in D} ||x - point||."""
        point = np.asarray(point, dtype=float)
        return float(np.linalg.norm(point - self.center) + self.radius)

    def sample_interior(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform draw from the ball."""
        d = self.dimension
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        u = rng.random() ** (1.0 / d)
        return self.center + self.radius * u * direction


@dataclass(frozen=True)
class Box:
    """Axis-aligned box {x : lower <= x <= upper} with positive edge lengths."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("box bounds must be 1-D vectors of equal length")
        if not np.all(self.upper > self.lower):
            raise ValueError("box must have strictly positive edge lengths")

    @property
    def dimension(self) -> int:
        return self.lower.shape[0]

    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def project(self, point) -> np.ndarray:
        point = _check_dimension(self, point)
        return np.clip(point, self.lower, self.upper)

    def distance(self, point) -> np.ndarray:
        point = _check_dimension(self, point)
        excess = np.maximum(np.maximum(self.lower - point, point - self.upper), 0.0)
        return np.linalg.norm(excess, axis=-1)

    def support(self, direction) -> float:
        direction = np.asarray(direction, dtype=float)
        return float(np.sum(np.where(direction >= 0, direction * self.upper,
                                     direction * self.lower)))

    def farthest_distance(self, point) -> float:
        point = np.asarray(point, dtype=float)
        per_coord = np.maximum(np.abs(point - self.lower), np.abs(point - self.upper))
        return float(np.linalg.norm(per_coord))

    def sample_interior(self, rng: np.random.Generator) -> np.ndarray:
        return self.lower + rng.random(self.dimension) * (self.upper - self.lower)


Domain = Ball | Box


def _check_dimension(domain: Domain, point) -> np.ndarray:
    point = np.asarray(point, dtype=float)
    if point.shape[-1] != domain.dimension:
        raise ValueError(
            f"point dimension {point.shape[-1]} does not match domain "
            f"dimension {domain.dimension}"
        )
    return point


def project(domain: Domain, point) -> np.ndarray:
    """Euclidean-nearest point of the domain; idempotent and nonexpansive."""
    return domain.project(point)


def diameter(domain: Domain) -> float:
    return domain.diameter()


def contains(domain: Domain, point, tolerance: float = 0.0):
    """True iff distance(point, D) <= tolerance (closed-set convention)."""
    if tolerance < 0:
        raise ValueError("tolerance must be nonnegative")
    return domain.distance(point) <= tolerance


def domain_from_config(cfg: dict) -> Domain:
    """Build a domain from its config-file description."""
    if not isinstance(cfg, dict) or len(cfg) != 1:
        raise ValueError("domain config must be a single-key object")
    (kind, params), = cfg.items()
    if kind == "ball":
        _require_keys(params, {"center", "radius"}, "domain.ball")
        return Ball(center=params["center"], radius=float(params["radius"]))
    if kind == "box":
        _require_keys(params, {"lower", "upper"}, "domain.box")
        return Box(lower=params["lower"], upper=params["upper"])
    raise ValueError(f"unknown domain kind {kind!r} (expected 'ball' or 'box')")


def domain_to_config(domain: Domain) -> dict:
    if isinstance(domain, Ball):
        return {"ball": {"center": domain.center.tolist(), "radius": domain.radius}}
    return {"box": {"lower": domain.lower.tolist(), "upper": domain.upper.tolist()}}


def _require_keys(params, expected: set, where: str):
    if not isinstance(params, dict):
        raise ValueError(f"{where} must be an object")
    unknown = set(params) - expected
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")
    missing = expected - set(params)
    if missing:
        raise ValueError(f"missing keys in {where}: {sorted(missing)}")

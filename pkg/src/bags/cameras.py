"""Pinhole cameras: intrinsics, world-to-camera extrinsics, constructors.

Conventions: camera space is x-right, y-down, z-forward (z > 0 in front
of the camera); pixel (col, row) centers sit at (col + 0.5, row + 0.5);
``fov_deg`` is the vertical field of view.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bags.errors import ConfigError


def _unit(v, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ConfigError(f"{what} is degenerate (zero length)")
    return v / n


@dataclass
class Camera:
    """Pinhole camera with a rigid world-to-camera transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3,3), world-to-camera
    translation: np.ndarray  # (3,), world-to-camera
    width: int
    height: int
    spec: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be positive")
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ConfigError("extrinsics must be a 3x3 rotation and 3-vector")
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=1e-8):
            raise ConfigError("camera rotation is not orthonormal")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise ConfigError("image dimensions must be positive")

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Transform (N,3) world points into camera space."""
        return points @ self.rotation.T + self.translation

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project (N,3) world points; returns (N,2) pixel coords and (N,) depths."""
        pc = self.world_to_camera(np.asarray(points, dtype=np.float64))
        z = pc[:, 2]
        safe = np.where(np.abs(z) < 1e-12, 1e-12, z)
        uv = np.stack(
            [self.fx * pc[:, 0] / safe + self.cx, self.fy * pc[:, 1] / safe + self.cy],
            axis=1,
        )
        return uv, z

    @classmethod
    def look_at(
        cls,
        position,
        target,
        up,
        fov_deg: float,
        width: int,
        height: int,
    ) -> "Camera":
        """Camera at ``position`` looking at ``target`` with vertical fov."""
        position = np.asarray(position, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        if not (0.0 < fov_deg < 180.0):
            raise ConfigError(f"fov_deg must be in (0, 180), got {fov_deg}")
        forward = _unit(target - position, "view direction")
        upv = _unit(up, "up vector")
        if abs(float(forward @ upv)) > 1.0 - 1e-9:
            raise ConfigError("up vector is parallel to the view direction")
        right = _unit(np.cross(forward, upv), "camera right axis")
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        fy = 0.5 * height / np.tan(np.radians(fov_deg) / 2.0)
        spec = {
            "position": [float(x) for x in position],
            "look_at": [float(x) for x in target],
            "up": [float(x) for x in np.asarray(up, dtype=np.float64)],
            "fov_deg": float(fov_deg),
        }
        return cls(
            fx=fy,
            fy=fy,
            cx=width / 2.0,
            cy=height / 2.0,
            rotation=rot,
            translation=-rot @ position,
            width=int(width),
            height=int(height),
            spec=spec,
        )

    @classmethod
    def orbit(
        cls,
        target,
        radius: float,
        azimuth_deg: float,
        elevation_deg: float,
        fov_deg: float,
        width: int,
        height: int,
        up=(0.0, 1.0, 0.0),
    ) -> "Camera":
        """Camera on a sphere around ``target``, looking inward."""
        if radius <= 0:
            raise ConfigError("orbit radius must be positive")
        az = np.radians(azimuth_deg)
        el = np.radians(elevation_deg)
        offset = radius * np.array([np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)])
        return cls.look_at(np.asarray(target, dtype=np.float64) + offset, target, up, fov_deg, width, height)

    def to_spec(self) -> dict:
        """The {position, look_at, up, fov_deg} description of this camera."""
        if self.spec is not None:
            return dict(self.spec)
        # Reconstruct an equivalent description from the extrinsics.
        fov = float(np.degrees(2.0 * np.arctan(0.5 * self.height / self.fy)))
        forward = self.rotation[2]
        up = -self.rotation[1]
        pos = self.center
        return {
            "position": [float(x) for x in pos],
            "look_at": [float(x) for x in pos + forward],
            "up": [float(x) for x in up],
            "fov_deg": fov,
        }

    @classmethod
    def from_spec(cls, spec: dict, width: int, height: int) -> "Camera":
        """Build from the {position, look_at, up, fov_deg} JSON description."""
        missing = {"position", "look_at", "up", "fov_deg"} - set(spec)
        if missing:
            raise ConfigError(f"camera spec missing keys: {sorted(missing)}")
        for key in ("position", "look_at", "up"):
            arr = np.asarray(spec[key], dtype=np.float64)
            if arr.shape != (3,):
                raise ConfigError(f"camera spec {key} must be a 3-vector")
        return cls.look_at(
            spec["position"], spec["look_at"], spec["up"], float(spec["fov_deg"]), width, height
        )

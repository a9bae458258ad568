"""Analytic test scenes rendered by ray casting.

A scene is a list of primitives (textured quads and spheres) that every
camera ray must hit, so rendered depth is fully valid. Scenes double as the
geometry registered with the builtin depth estimator, which needs exact
depth rather than plausible depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera
from .geometry import Z_NEAR, RgbdFrame


def _as_vec3(value, name):
    v = np.asarray(value, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector")
    return v


@dataclass(frozen=True)
class Quad:
    """Planar patch spanned by two edges, colored by a bilinear gradient
    over its local (s, t) coordinates."""

    origin: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    color0: np.ndarray
    color_u: np.ndarray
    color_v: np.ndarray

    def __post_init__(self):
        for name in ("origin", "edge_u", "edge_v", "color0", "color_u",
                     "color_v"):
            object.__setattr__(self, name, _as_vec3(getattr(self, name), name))
        if np.linalg.norm(np.cross(self.edge_u, self.edge_v)) == 0:
            raise ValueError("quad edges must span a plane")

    def intersect(self, origins, directions):
        normal = np.cross(self.edge_u, self.edge_v)
        denom = directions @ normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.origin - origins) @ normal) / denom
        t_safe = np.where(np.isfinite(t), t, 0.0)
        hit_point = origins + t_safe[:, None] * directions
        rel = hit_point - self.origin
        gram = np.array([[self.edge_u @ self.edge_u, self.edge_u @ self.edge_v],
                         [self.edge_u @ self.edge_v, self.edge_v @ self.edge_v]])
        rhs = np.stack([rel @ self.edge_u, rel @ self.edge_v], axis=1)
        st = np.linalg.solve(gram, rhs.T).T
        inside = ((st >= 0.0) & (st <= 1.0)).all(axis=1)
        ok = np.isfinite(t) & (t > Z_NEAR) & (denom != 0) & inside
        return np.where(ok, t, np.inf), st

    def color_at(self, st):
        s, tt = st[:, 0:1], st[:, 1:2]
        rgb = self.color0 + s * (self.color_u - self.color0) \
            + tt * (self.color_v - self.color0)
        return np.clip(rgb, 0.0, 1.0)


@dataclass(frozen=True)
class Sphere:
    """Sphere colored by a gradient along the vertical surface normal."""

    center: np.ndarray
    radius: float
    color0: np.ndarray
    color1: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", _as_vec3(self.center, "center"))
        object.__setattr__(self, "color0", _as_vec3(self.color0, "color0"))
        object.__setattr__(self, "color1", _as_vec3(self.color1, "color1"))
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    def intersect(self, origins, directions):
        oc = origins - self.center
        a = np.einsum("ij,ij->i", directions, directions)
        b = 2.0 * np.einsum("ij,ij->i", oc, directions)
        c = np.einsum("ij,ij->i", oc, oc) - self.radius ** 2
        disc = b * b - 4.0 * a * c
        with np.errstate(invalid="ignore"):
            root = np.sqrt(np.where(disc >= 0, disc, np.nan))
        near = (-b - root) / (2.0 * a)
        far = (-b + root) / (2.0 * a)
        t = np.where(near > Z_NEAR, near, far)
        ok = (disc >= 0) & (t > Z_NEAR)
        t = np.where(ok, t, np.inf)
        hit = origins + t[:, None] * directions
        with np.errstate(invalid="ignore"):
            normal_y = (hit[:, 1] - self.center[1]) / self.radius
        return t, np.nan_to_num(normal_y[:, None])

    def color_at(self, aux):
        blend = (aux + 1.0) / 2.0
        return np.clip(self.color0 + blend * (self.color1 - self.color0),
                       0.0, 1.0)


class AnalyticScene:
    """Closed list of primitives; nearest hit wins per ray."""

    def __init__(self, primitives):
        if not primitives:
            raise ValueError("scene needs at least one primitive")
        self.primitives = tuple(primitives)

    def raycast(self, origins, directions):
        """Nearest hit depth (in units of the direction parameter) and color
        per ray; rays that miss everything raise."""
        origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
        n = directions.shape[0]
        if origins.shape[0] == 1:
            origins = np.broadcast_to(origins, (n, 3))
        best_t = np.full(n, np.inf)
        colors = np.zeros((n, 3))
        for prim in self.primitives:
            t, aux = prim.intersect(origins, directions)
            closer = t < best_t
            if closer.any():
                best_t = np.where(closer, t, best_t)
                colors[closer] = prim.color_at(aux[closer])
        if not np.isfinite(best_t).all():
            raise ValueError("some rays miss every primitive; "
                             "scenes must be closed")
        return best_t, colors

    def render_rgbd(self, camera: Camera) -> RgbdFrame:
        """Ray-cast RGBD render; ray parameter equals camera z-depth."""
        intr = camera.intrinsics
        u, v = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
        dirs_cam = np.stack([(u.ravel() - intr.cx) / intr.fx,
                             (v.ravel() - intr.cy) / intr.fy,
                             np.ones(u.size)], axis=1)
        dirs_world = dirs_cam @ camera.pose.rotation
        depth, colors = self.raycast(camera.pose.center[None], dirs_world)
        shape = intr.shape()
        return RgbdFrame(colors.reshape(shape + (3,)),
                         depth.reshape(shape),
                         np.ones(shape, dtype=bool))

    def depth_at(self, camera: Camera) -> np.ndarray:
        return self.render_rgbd(camera).depth

    def to_config(self) -> dict:
        prims = []
        for p in self.primitives:
            if isinstance(p, Quad):
                prims.append({"kind": "quad",
                              "origin": p.origin.tolist(),
                              "edge_u": p.edge_u.tolist(),
                              "edge_v": p.edge_v.tolist(),
                              "colors": [p.color0.tolist(), p.color_u.tolist(),
                                         p.color_v.tolist()]})
            else:
                prims.append({"kind": "sphere",
                              "center": p.center.tolist(),
                              "radius": p.radius,
                              "colors": [p.color0.tolist(), p.color1.tolist()]})
        return {"primitives": prims}

    @classmethod
    def from_config(cls, config: dict) -> "AnalyticScene":
        prims = []
        for spec in config.get("primitives", []):
            kind = spec.get("kind")
            if kind == "quad":
                c0, cu, cv = spec["colors"]
                prims.append(Quad(spec["origin"], spec["edge_u"],
                                  spec["edge_v"], c0, cu, cv))
            elif kind == "sphere":
                c0, c1 = spec["colors"]
                prims.append(Sphere(spec["center"], spec["radius"], c0, c1))
            else:
                raise ValueError(f"unknown primitive kind {kind!r}")
        return cls(prims)


def two_planes() -> AnalyticScene:
    """Floor and back wall with gradient textures inside a large backdrop
    sphere, viewed from the origin looking along +z."""
    floor = Quad(origin=(-6.0, 0.8, -6.0), edge_u=(12.0, 0.0, 0.0),
                 edge_v=(0.0, 0.0, 12.0),
                 color0=(0.55, 0.40, 0.25), color_u=(0.75, 0.60, 0.40),
                 color_v=(0.35, 0.25, 0.15))
    wall = Quad(origin=(-6.0, -6.0, 4.0), edge_u=(12.0, 0.0, 0.0),
                edge_v=(0.0, 12.0, 0.0),
                color0=(0.20, 0.35, 0.60), color_u=(0.45, 0.60, 0.80),
                color_v=(0.10, 0.20, 0.40))
    backdrop = Sphere(center=(0.0, 0.0, 0.0), radius=50.0,
                      color0=(0.70, 0.80, 0.90), color1=(0.30, 0.40, 0.55))
    return AnalyticScene([floor, wall, backdrop])


PRESETS = {"two_planes": two_planes}

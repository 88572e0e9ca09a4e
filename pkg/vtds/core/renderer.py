"""
Tile-based software rasterizer producing a G-buffer, plus shading and weather.

Triangles are sampled at pixel centers without anti-aliasing. The z-buffer
keeps, per pixel, the fragment with the smallest (depth, triangle index) pair,
so ties resolve the same way whatever the tile or thread schedule.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import cv2
import numpy as np
import torch

from vtds.core.camera import Camera
from vtds.core.environment import EnvironmentState, Weather
from vtds.core.geometry import Mesh, Pose
from vtds.core.rng import keyed_generator
from vtds.core.semantics import SemanticClass

logger = logging.getLogger(__name__)

device = torch.device("cpu")

TILE_SIZE = 64
MAX_FRAGMENTS = 1 << 22
NO_TRIANGLE = torch.iinfo(torch.int64).max

SKY_ZENITH = np.array([0.30, 0.50, 0.85])
SKY_HORIZON = np.array([0.75, 0.85, 0.95])
FOG_GRAY = 0.7
FOG_SKY_DEPTH = 500.0
RAIN_COLOR = np.array([0.8, 0.8, 0.85])
RAIN_ALPHA = 0.3


##################
## Triangle soup ##
##################


@dataclass
class TriangleSoup:
    """
    World-space triangles with their per-triangle labels and per-corner albedo.
    """

    corners: np.ndarray  # (T, 3, 3) float64
    class_ids: np.ndarray  # (T,) int64
    instance_ids: np.ndarray  # (T,) int64
    albedo: np.ndarray  # (T, 3, 3) float64

    @property
    def n_triangles(self) -> int:
        return len(self.corners)

    @classmethod
    def empty(cls) -> "TriangleSoup":
        return cls(
            np.zeros((0, 3, 3)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros((0, 3, 3))
        )

    @classmethod
    def from_nodes(cls, nodes: Iterable[Tuple[Mesh, Pose]]) -> "TriangleSoup":
        parts = []
        for mesh, pose in nodes:
            if not mesh.n_triangles:
                continue
            corners = pose.apply(mesh.vertices)[mesh.triangles]
            parts.append(
                cls(
                    corners,
                    mesh.class_ids.astype(np.int64),
                    np.full(mesh.n_triangles, mesh.instance_id, dtype=np.int64),
                    mesh.corner_albedo().astype(np.float64),
                )
            )
        return cls.concat(parts)

    @classmethod
    def concat(cls, soups: Sequence["TriangleSoup"]) -> "TriangleSoup":
        soups = [s for s in soups if s.n_triangles]
        if not soups:
            return cls.empty()
        return cls(
            np.concatenate([s.corners for s in soups]),
            np.concatenate([s.class_ids for s in soups]),
            np.concatenate([s.instance_ids for s in soups]),
            np.concatenate([s.albedo for s in soups]),
        )

    def select(self, mask: np.ndarray) -> "TriangleSoup":
        return TriangleSoup(self.corners[mask], self.class_ids[mask], self.instance_ids[mask], self.albedo[mask])


@dataclass
class GBuffer:
    class_id: np.ndarray  # (H, W) uint8
    instance_id: np.ndarray  # (H, W) int32
    depth: np.ndarray  # (H, W) float64, inf for sky
    world: np.ndarray  # (H, W, 3) float64
    albedo: np.ndarray  # (H, W, 3) float64
    normal: np.ndarray  # (H, W, 3) float64

    @property
    def shape(self) -> Tuple[int, int]:
        return self.class_id.shape

    @property
    def sky(self) -> np.ndarray:
        return ~np.isfinite(self.depth)


#################
## Rasterizer ##
#################


@dataclass
class _Prepared:
    """
    Near-clipped screen-space triangles ready for fragment generation.
    """

    source: torch.Tensor  # index into the soup
    screen: torch.Tensor  # (T, 3, 2) pixel coordinates
    inv_z: torch.Tensor  # (T, 3)
    area: torch.Tensor  # (T,) twice the signed screen area
    bbox: torch.Tensor  # (T, 4) inclusive pixel index range x0, x1, y0, y1
    albedo: torch.Tensor  # (T, 3, 3)


def _clip_near(pc: torch.Tensor, albedo: torch.Tensor, near: float):
    """
    Clip camera-space triangles against z = near; corners with z >= near are
    inside, as in ``Camera.project_points``. Returns the clipped corners,
    their albedo and the source index of every output triangle.
    """
    inside = pc[..., 2] >= near
    count = inside.sum(dim=1)
    index = torch.arange(len(pc), device=device)
    keep_pc, keep_alb, keep_src = [pc[count == 3]], [albedo[count == 3]], [index[count == 3]]

    def lerp(a, b, fa, fb, za, zb):
        s = ((near - za) / (zb - za)).unsqueeze(-1)
        return a + s * (b - a), fa + s * (fb - fa)

    for k in (1, 2):
        sel = count == k
        if not bool(sel.any()):
            continue
        p, f, ins = pc[sel], albedo[sel], inside[sel]
        # rotate corners so the odd one out comes first
        odd = ins if k == 1 else ~ins
        first = odd.to(torch.int64).argmax(dim=1)
        order = (first.unsqueeze(1) + torch.arange(3, device=device)) % 3
        p = torch.gather(p, 1, order.unsqueeze(-1).expand(-1, -1, 3))
        f = torch.gather(f, 1, order.unsqueeze(-1).expand(-1, -1, 3))
        a, b, c = p[:, 0], p[:, 1], p[:, 2]
        fa, fb, fc = f[:, 0], f[:, 1], f[:, 2]
        za, zb, zc = a[:, 2], b[:, 2], c[:, 2]
        src = index[sel]
        if k == 1:
            ab, fab = lerp(a, b, fa, fb, za, zb)
            ac, fac = lerp(a, c, fa, fc, za, zc)
            keep_pc.append(torch.stack([a, ab, ac], dim=1))
            keep_alb.append(torch.stack([fa, fab, fac], dim=1))
            keep_src.append(src)
        else:
            # a is outside, b and c inside
            ba, fba = lerp(b, a, fb, fa, zb, za)
            ca, fca = lerp(c, a, fc, fa, zc, za)
            keep_pc.append(torch.stack([b, c, ca], dim=1))
            keep_alb.append(torch.stack([fb, fc, fca], dim=1))
            keep_pc.append(torch.stack([b, ca, ba], dim=1))
            keep_alb.append(torch.stack([fb, fca, fba], dim=1))
            keep_src.extend([src, src])
    return torch.cat(keep_pc), torch.cat(keep_alb), torch.cat(keep_src)


def _prepare(soup: TriangleSoup, camera: Camera) -> _Prepared:
    k = camera.intrinsics
    corners = torch.as_tensor(soup.corners, dtype=torch.float64, device=device)
    albedo = torch.as_tensor(soup.albedo, dtype=torch.float64, device=device)
    rotation = torch.as_tensor(camera.rotation, dtype=torch.float64, device=device)
    position = torch.as_tensor(camera.position, dtype=torch.float64, device=device)
    pc = (corners - position) @ rotation.T
    pc, albedo, source = _clip_near(pc, albedo, k.near)

    z = pc[..., 2]
    screen = torch.stack([k.cx + k.focal * pc[..., 0] / z, k.cy + k.focal * pc[..., 1] / z], dim=-1)
    e1 = screen[:, 1] - screen[:, 0]
    e2 = screen[:, 2] - screen[:, 0]
    area = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]

    lo = screen.min(dim=1).values
    hi = screen.max(dim=1).values
    x0 = torch.ceil(lo[:, 0] - 0.5).clamp(min=0)
    x1 = torch.floor(hi[:, 0] - 0.5).clamp(max=k.width - 1)
    y0 = torch.ceil(lo[:, 1] - 0.5).clamp(min=0)
    y1 = torch.floor(hi[:, 1] - 0.5).clamp(max=k.height - 1)
    bbox = torch.stack([x0, x1, y0, y1], dim=1).to(torch.int64)
    visible = (area != 0) & (bbox[:, 0] <= bbox[:, 1]) & (bbox[:, 2] <= bbox[:, 3])
    return _Prepared(source[visible], screen[visible], 1.0 / z[visible], area[visible], bbox[visible], albedo[visible])


def _barycentric(prep: _Prepared, tri: torch.Tensor, px: torch.Tensor, py: torch.Tensor) -> torch.Tensor:
    """
    Screen-space barycentric weights (N, 3) of pixel centers in triangles.
    """
    s = prep.screen[tri]
    cx = px.to(torch.float64) + 0.5
    cy = py.to(torch.float64) + 0.5

    def edge(i, j):
        return (s[:, j, 0] - s[:, i, 0]) * (cy - s[:, i, 1]) - (s[:, j, 1] - s[:, i, 1]) * (cx - s[:, i, 0])

    w = torch.stack([edge(1, 2), edge(2, 0), edge(0, 1)], dim=1)
    return w / prep.area[tri].unsqueeze(1)


def _fragments(prep: _Prepared, width: int, height: int, tile: int = TILE_SIZE) -> Iterator[Tuple]:
    """
    Yield covered fragments tile by tile as (tile origin, tile size, triangle,
    px, py, depth). Tiles are disjoint, so each pixel is produced by one tile.
    """
    for ty0 in range(0, height, tile):
        for tx0 in range(0, width, tile):
            tx1 = min(tx0 + tile, width) - 1
            ty1 = min(ty0 + tile, height) - 1
            b = prep.bbox
            hit = (b[:, 0] <= tx1) & (b[:, 1] >= tx0) & (b[:, 2] <= ty1) & (b[:, 3] >= ty0)
            tris = torch.nonzero(hit).squeeze(1)
            if not len(tris):
                continue
            x0 = b[tris, 0].clamp(min=tx0)
            x1 = b[tris, 1].clamp(max=tx1)
            y0 = b[tris, 2].clamp(min=ty0)
            y1 = b[tris, 3].clamp(max=ty1)
            nx = x1 - x0 + 1
            counts = nx * (y1 - y0 + 1)
            bounds = torch.cumsum(counts, 0)
            start = 0
            while start < len(tris):
                # chunk triangles so that each chunk expands to a bounded fragment count
                base = int(bounds[start - 1]) if start else 0
                limit = torch.tensor([base + MAX_FRAGMENTS], device=device)
                stop = int(torch.searchsorted(bounds, limit, right=True)[0])
                stop = max(stop, start + 1)
                sl = slice(start, stop)
                c = counts[sl]
                tri = torch.repeat_interleave(tris[sl], c)
                local = torch.arange(int(c.sum()), device=device) - torch.repeat_interleave(torch.cumsum(c, 0) - c, c)
                w = torch.repeat_interleave(nx[sl], c)
                px = torch.repeat_interleave(x0[sl], c) + local % w
                py = torch.repeat_interleave(y0[sl], c) + torch.div(local, w, rounding_mode="floor")
                lam = _barycentric(prep, tri, px, py)
                inside = (lam >= 0).all(dim=1)
                tri, px, py, lam = tri[inside], px[inside], py[inside], lam[inside]
                depth = 1.0 / (lam * prep.inv_z[tri]).sum(dim=1)
                yield (tx0, ty0), (tx1 - tx0 + 1, ty1 - ty0 + 1), tri, px, py, depth
                start = stop


def _resolve(prep: _Prepared, width: int, height: int) -> torch.Tensor:
    """
    Winning prepared-triangle index per pixel (NO_TRIANGLE for sky).
    """
    best_tri = torch.full((height, width), NO_TRIANGLE, dtype=torch.int64, device=device)
    best_z = torch.full((height, width), float("inf"), dtype=torch.float64, device=device)
    for (tx0, ty0), (tw, th), tri, px, py, depth in _fragments(prep, width, height):
        if not len(tri):
            continue
        pix = (py - ty0) * tw + (px - tx0)
        tile_z = best_z[ty0:ty0 + th, tx0:tx0 + tw].reshape(-1)
        tile_tri = best_tri[ty0:ty0 + th, tx0:tx0 + tw].reshape(-1)
        new_z = tile_z.scatter_reduce(0, pix, depth, reduce="amin", include_self=True)
        tied = depth == new_z[pix]
        cand = torch.full_like(tile_tri, NO_TRIANGLE).scatter_reduce(
            0, pix[tied], tri[tied], reduce="amin", include_self=True
        )
        new_tri = torch.where(tile_z == new_z, torch.minimum(tile_tri, cand), cand)
        best_z[ty0:ty0 + th, tx0:tx0 + tw] = new_z.reshape(th, tw)
        best_tri[ty0:ty0 + th, tx0:tx0 + tw] = new_tri.reshape(th, tw)
    return best_tri


def rasterize(scene, camera: Camera) -> GBuffer:
    """
    Z-buffered rasterization of a scene snapshot.

    :param scene: A ``TriangleSoup`` or an iterable of (Mesh, Pose) nodes.
    :param camera: The viewing camera.
    :return: The G-buffer; pixels without geometry are sky with infinite depth.
    """
    soup = scene if isinstance(scene, TriangleSoup) else TriangleSoup.from_nodes(scene)
    k = camera.intrinsics
    h, w = k.height, k.width
    gbuffer = GBuffer(
        class_id=np.full((h, w), SemanticClass.SKY.value, dtype=np.uint8),
        instance_id=np.zeros((h, w), dtype=np.int32),
        depth=np.full((h, w), np.inf),
        world=np.zeros((h, w, 3)),
        albedo=np.zeros((h, w, 3)),
        normal=np.zeros((h, w, 3)),
    )
    if not soup.n_triangles:
        return gbuffer

    prep = _prepare(soup, camera)
    if not len(prep.source):
        return gbuffer
    best_tri = _resolve(prep, w, h)

    py, px = torch.nonzero(best_tri != NO_TRIANGLE, as_tuple=True)
    tri = best_tri[py, px]
    lam = _barycentric(prep, tri, px, py)
    weighted = lam * prep.inv_z[tri]
    depth = 1.0 / weighted.sum(dim=1)
    perspective = weighted * depth.unsqueeze(1)
    albedo = (perspective.unsqueeze(-1) * prep.albedo[tri]).sum(dim=1)

    py_np, px_np = py.numpy(), px.numpy()
    depth_np = depth.numpy()
    world = camera.unproject(px_np + 0.5, py_np + 0.5, depth_np)

    source = prep.source[tri].numpy()
    corners = soup.corners[source]
    normal = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    normal /= np.maximum(np.linalg.norm(normal, axis=1, keepdims=True), 1e-300)
    facing_away = np.einsum("ij,ij->i", normal, camera.position - world) < 0
    normal[facing_away] *= -1.0

    gbuffer.class_id[py_np, px_np] = soup.class_ids[source]
    gbuffer.instance_id[py_np, px_np] = soup.instance_ids[source]
    gbuffer.depth[py_np, px_np] = depth_np
    gbuffer.world[py_np, px_np] = world
    gbuffer.albedo[py_np, px_np] = albedo.numpy()
    gbuffer.normal[py_np, px_np] = normal
    return gbuffer


def solo_pixel_counts(soup: TriangleSoup, camera: Camera, instance_ids: Optional[Iterable[int]] = None) -> Dict[int, int]:
    """
    Pixel count of each instance rendered alone, i.e. ignoring every other
    object. All instances are handled in one pass.

    :param instance_ids: Instances to count; defaults to every nonzero id.
    """
    wanted = soup.instance_ids > 0
    if instance_ids is not None:
        wanted &= np.isin(soup.instance_ids, np.fromiter(instance_ids, dtype=np.int64))
    counts: Dict[int, int] = {}
    sub = soup.select(wanted)
    if not sub.n_triangles:
        return counts
    k = camera.intrinsics
    prep = _prepare(sub, camera)
    if not len(prep.source):
        return counts
    ids = torch.as_tensor(sub.instance_ids, device=device)[prep.source]
    keys = []
    for _, _, tri, px, py, _ in _fragments(prep, k.width, k.height):
        keys.append(ids[tri] * (k.width * k.height) + py * k.width + px)
    if not keys:
        return counts
    unique = torch.unique(torch.cat(keys))
    inst, n = torch.unique(torch.div(unique, k.width * k.height, rounding_mode="floor"), return_counts=True)
    return {int(i): int(c) for i, c in zip(inst.tolist(), n.tolist())}


#############
## Shading ##
#############


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def sky_color(height: int, width: int, env: EnvironmentState) -> np.ndarray:
    """
    Vertical gradient from zenith blue at the top row to a pale horizon at the
    bottom, dimmed by the light level.
    """
    t = ((np.arange(height) + 0.5) / height)[:, None, None]
    gradient = SKY_ZENITH * (1.0 - t) + SKY_HORIZON * t
    level = min(1.0, env.ambient + env.sun_intensity)
    return np.broadcast_to(gradient * level, (height, width, 3))


def shade_linear(g: GBuffer, env: EnvironmentState) -> np.ndarray:
    """
    Unquantized shading in [0, 1]: Lambert sun plus ambient on surfaces and
    the sky gradient elsewhere.
    """
    sun = np.asarray(env.sun_direction, dtype=np.float64)
    lambert = np.clip(g.normal @ sun, 0.0, None)
    light = env.ambient + env.sun_intensity * lambert
    color = g.albedo * light[..., None]
    sky = g.sky
    h, w = g.shape
    color[sky] = sky_color(h, w, env)[sky]
    return np.clip(color, 0.0, 1.0)


def shade(g: GBuffer, env: EnvironmentState) -> np.ndarray:
    return to_uint8(shade_linear(g, env))


def apply_weather(image: np.ndarray, g: GBuffer, env: EnvironmentState, seed: int = 0, frame_index: int = 0) -> np.ndarray:
    """
    Fog blends towards gray with distance; rain overlays streaks drawn from a
    stream keyed by (seed, frame index). Sunny and cloudy are already in the
    shading and pass through.
    """
    out = image
    if env.fog_density > 0:
        z = np.where(g.sky, FOG_SKY_DEPTH, g.depth)
        blend = (1.0 - np.exp(-env.fog_density * z))[..., None]
        color = out.astype(np.float64) / 255.0
        out = to_uint8(color * (1.0 - blend) + FOG_GRAY * blend)
    if env.weather is Weather.RAINY:
        out = _rain_streaks(out, seed, frame_index)
    return out if out is not image else image.copy()


def _rain_streaks(image: np.ndarray, seed: int, frame_index: int) -> np.ndarray:
    h, w = image.shape[:2]
    rng = keyed_generator(seed, "rain", frame_index)
    n = max(1, (h * w) // 400)
    x = rng.integers(0, w, size=n)
    y = rng.integers(0, h, size=n)
    length = rng.integers(8, 17, size=n)
    mask = np.zeros((h, w), dtype=np.uint8)
    for xi, yi, li in zip(x, y, length):
        cv2.line(mask, (int(xi), int(yi)), (int(xi - li // 4), int(yi + li)), 255, 1, cv2.LINE_8)
    alpha = (mask > 0)[..., None] * RAIN_ALPHA
    color = image.astype(np.float64) / 255.0
    return to_uint8(color * (1.0 - alpha) + RAIN_COLOR * alpha)

"""
Soft silhouette renderer

Each projected triangle covers a pixel with logistic(d / tau), d the signed
screen distance to its outline (positive inside). Coverages are combined as a
union, S = 1 - prod(1 - c). Derivatives come from torch autograd in float64,
through coverage, distance, projection and near-plane clipping.
"""
import logging
import math
import os
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from errors import ArgumentError, ParseError
from mesh_io import TriMesh
from schemas import Camera

logger = logging.getLogger(__name__)

DTYPE = torch.float64


@dataclass(frozen=True)
class RenderConfig:
    tau: float = 1.0          # edge softness, pixels
    near: float = 1e-3        # near plane, world units
    background: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ArgumentError(f"tau must be positive, got {self.tau}")
        if not self.near > 0:
            raise ArgumentError(f"near plane must be positive, got {self.near}")


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Row-major (height, width) float64 image with values in [0, 1]"""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.height, self.width):
            raise ArgumentError(f"image values have shape {v.shape}, expected {(self.height, self.width)}")
        if not np.all(np.isfinite(v)) or v.min(initial=0.0) < 0.0 or v.max(initial=0.0) > 1.0:
            raise ArgumentError("image values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "ImageBuffer":
        values = np.asarray(values)
        return cls(values.shape[1], values.shape[0], values)

    def save_png(self, path) -> None:
        """8-bit grayscale, for viewing"""
        os.makedirs(os.path.dirname(os.path.abspath(str(path))), exist_ok=True)
        Image.fromarray(np.round(self.values * 255.0).astype(np.uint8)).save(path, format="PNG")

    @classmethod
    def load_png(cls, path) -> "ImageBuffer":
        with Image.open(path) as img:
            return cls.from_array(np.asarray(img.convert("L"), dtype=np.float64) / 255.0)

    def save_raw(self, path) -> None:
        """Little-endian uint32 width and height, then float32 values"""
        os.makedirs(os.path.dirname(os.path.abspath(str(path))), exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(np.array([self.width, self.height], dtype="<u4").tobytes())
            fh.write(self.values.astype("<f4").tobytes())

    @classmethod
    def load_raw(cls, path) -> "ImageBuffer":
        with open(path, "rb") as fh:
            data = fh.read()
        if len(data) < 8:
            raise ParseError("raw image is missing its header", str(path))
        width, height = (int(x) for x in np.frombuffer(data[:8], dtype="<u4"))
        body = np.frombuffer(data[8:], dtype="<f4")
        if body.size != width * height:
            raise ParseError(f"raw image holds {body.size} values, header says {width}x{height}", str(path))
        return cls(width, height, np.clip(body.astype(np.float64), 0.0, 1.0).reshape(height, width))


@dataclass(frozen=True)
class _View:
    position: np.ndarray
    basis: np.ndarray      # rows: right, up, forward
    focal: float           # pixels
    width: int
    height: int


def _view_of(cam: Camera) -> _View:
    position = np.asarray(cam.position, dtype=np.float64)
    forward = np.subtract(cam.look_at, position)
    norm = np.linalg.norm(forward)
    if not norm > 0:
        raise ArgumentError("degenerate camera: position equals look_at")
    forward = forward / norm
    right = np.cross(forward, cam.up)
    if np.linalg.norm(right) < 1e-12:
        raise ArgumentError("degenerate camera: up is parallel to the view direction")
    right /= np.linalg.norm(right)
    up = np.cross(right, forward)
    if not 0 < cam.vertical_fov < 180:
        raise ArgumentError("degenerate camera: fov outside (0, 180)")
    focal = (cam.height / 2.0) / math.tan(math.radians(cam.vertical_fov) / 2.0)
    return _View(position, np.stack([right, up, forward]), focal, cam.width, cam.height)


def _clip_polygons(z: np.ndarray, faces: np.ndarray, near: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Near-plane clipping as index pairs.

    Returns (I0, I1) of shape (P, 4): polygon corner k is the point on the
    segment I0[k] -> I1[k] at depth ``near`` (I0 == I1 for an original
    vertex). Triangles are padded to four corners by repeating their last one.
    """
    inside = z[faces] >= near
    n_in = inside.sum(axis=1)
    whole = faces[n_in == 3]
    i0 = [np.column_stack([whole, whole[:, 2]])]
    i1 = [np.column_stack([whole, whole[:, 2]])]
    partial = np.flatnonzero((n_in > 0) & (n_in < 3))
    for fi in partial:
        tri = faces[fi]
        flags = inside[fi]
        a_list, b_list = [], []
        for k in range(3):
            cur, nxt = int(tri[k]), int(tri[(k + 1) % 3])
            if flags[k]:
                a_list.append(cur)
                b_list.append(cur)
            if flags[k] != flags[(k + 1) % 3]:
                a_list.append(cur)
                b_list.append(nxt)
        while len(a_list) < 4:
            a_list.append(a_list[-1])
            b_list.append(b_list[-1])
        i0.append(np.array([a_list], dtype=np.int64))
        i1.append(np.array([b_list], dtype=np.int64))
    return np.concatenate(i0).astype(np.int64), np.concatenate(i1).astype(np.int64)


def _pixel_pairs(screen: np.ndarray, view: _View, pad: float) -> Tuple[np.ndarray, np.ndarray]:
    """(polygon index, flat pixel index) for pixel centres inside each padded bbox"""
    lo = screen.min(axis=1) - pad
    hi = screen.max(axis=1) + pad
    c_lo = np.clip(np.ceil(lo[:, 0] - 0.5), 0, view.width).astype(np.int64)
    c_hi = np.clip(np.floor(hi[:, 0] - 0.5), -1, view.width - 1).astype(np.int64)
    r_lo = np.clip(np.ceil(lo[:, 1] - 0.5), 0, view.height).astype(np.int64)
    r_hi = np.clip(np.floor(hi[:, 1] - 0.5), -1, view.height - 1).astype(np.int64)
    ncols = np.maximum(c_hi - c_lo + 1, 0)
    nrows = np.maximum(r_hi - r_lo + 1, 0)
    counts = ncols * nrows
    poly = np.repeat(np.arange(len(screen)), counts)
    if not len(poly):
        return poly, poly
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    k = np.arange(len(poly)) - starts
    rows = r_lo[poly] + k // ncols[poly]
    cols = c_lo[poly] + k % ncols[poly]
    return poly, rows * view.width + cols


def _render(x: torch.Tensor, faces: np.ndarray, cam: Camera, cfg: RenderConfig) -> torch.Tensor:
    """Silhouette of vertex tensor ``x`` as an (H, W) tensor"""
    view = _view_of(cam)
    h, w = view.height, view.width
    out = torch.zeros(h * w, dtype=DTYPE)
    if not len(faces):
        return out.reshape(h, w)
    basis = torch.as_tensor(view.basis, dtype=DTYPE)
    pc = (x - torch.as_tensor(view.position, dtype=DTYPE)) @ basis.T
    z_np = pc[:, 2].detach().numpy()
    i0, i1 = _clip_polygons(z_np, np.asarray(faces), cfg.near)
    if not len(i0):
        return out.reshape(h, w)

    p0 = pc[torch.as_tensor(i0)]
    p1 = pc[torch.as_tensor(i1)]
    same = torch.as_tensor(i0 == i1)
    dz = p1[..., 2] - p0[..., 2]
    t = torch.where(same, torch.zeros_like(dz), (cfg.near - p0[..., 2]) / torch.where(same, torch.ones_like(dz), dz))
    corners = p0 + t.unsqueeze(-1) * (p1 - p0)
    sx = view.focal * corners[..., 0] / corners[..., 2] + w / 2.0
    sy = h / 2.0 - view.focal * corners[..., 1] / corners[..., 2]
    screen = torch.stack([sx, sy], dim=-1)                      # (P, 4, 2)

    poly, pix = _pixel_pairs(screen.detach().numpy(), view, 4.0 * cfg.tau)
    if not len(poly):
        return out.reshape(h, w)
    poly_t = torch.as_tensor(poly)
    pix_t = torch.as_tensor(pix)
    px = torch.as_tensor((pix % w) + 0.5, dtype=DTYPE)
    py = torch.as_tensor((pix // w) + 0.5, dtype=DTYPE)
    p = torch.stack([px, py], dim=-1)                           # (Q, 2)

    verts = screen[poly_t]                                      # (Q, 4, 2)
    nxt = torch.roll(verts, shifts=-1, dims=1)
    edge = nxt - verts
    rel = p.unsqueeze(1) - verts
    seg2 = (edge * edge).sum(-1)
    s = torch.clamp((rel * edge).sum(-1) / torch.clamp(seg2, min=1e-30), 0.0, 1.0)
    off = rel - s.unsqueeze(-1) * edge
    dist = torch.sqrt((off * off).sum(-1) + 1e-30).min(dim=1).values

    with torch.no_grad():
        sv = screen.detach()
        area2 = (sv[..., 0] * torch.roll(sv[..., 1], -1, 1) - torch.roll(sv[..., 0], -1, 1) * sv[..., 1]).sum(-1)
        orient = torch.sign(area2)[poly_t]
        cross = edge[..., 0].detach() * rel[..., 1].detach() - edge[..., 1].detach() * rel[..., 0].detach()
        inside = (orient != 0) & ((orient.unsqueeze(1) * cross) >= 0).all(dim=1)
    signed = torch.where(inside, dist, -dist)

    log_clear = out.index_add(0, pix_t, -F.softplus(signed / cfg.tau))
    return (1.0 - torch.exp(log_clear)).reshape(h, w)


def _as_tensor(vertices, requires_grad: bool = False) -> torch.Tensor:
    return torch.tensor(np.asarray(vertices, dtype=np.float64), dtype=DTYPE, requires_grad=requires_grad)


def render_silhouette(mesh: TriMesh, cam: Camera, cfg: RenderConfig = RenderConfig()) -> ImageBuffer:
    if not len(mesh.faces):
        raise ArgumentError("cannot render a mesh without faces")
    with torch.no_grad():
        img = _render(_as_tensor(mesh.vertices), mesh.faces, cam, cfg)
    return ImageBuffer(cam.width, cam.height, np.clip(img.numpy(), 0.0, 1.0))


def render_all(mesh: TriMesh, cams: Sequence[Camera], cfg: RenderConfig = RenderConfig()) -> List[ImageBuffer]:
    return [render_silhouette(mesh, cam, cfg) for cam in cams]


def _check_targets(cams: Sequence[Camera], targets: Sequence[ImageBuffer]) -> None:
    if len(cams) != len(targets):
        raise ArgumentError(f"{len(cams)} cameras but {len(targets)} target images")
    if not cams:
        raise ArgumentError("at least one view is required")
    for i, (cam, target) in enumerate(zip(cams, targets)):
        if (target.width, target.height) != (cam.width, cam.height):
            raise ArgumentError(f"target {i} is {target.width}x{target.height}, camera renders {cam.width}x{cam.height}")


def silhouette_loss(x: torch.Tensor, faces: np.ndarray, cams: Sequence[Camera], targets: Sequence[ImageBuffer],
                    cfg: RenderConfig) -> torch.Tensor:
    """Mean over views of the per-pixel squared error, as a differentiable tensor"""
    _check_targets(cams, targets)
    total = torch.zeros((), dtype=DTYPE)
    for cam, target in zip(cams, targets):
        diff = _render(x, faces, cam, cfg) - torch.tensor(target.values, dtype=DTYPE)
        total = total + (diff * diff).mean()
    return total / len(cams)


def render_loss_and_grad(mesh: TriMesh, cams: Sequence[Camera], targets: Sequence[ImageBuffer],
                         cfg: RenderConfig = RenderConfig()) -> Tuple[float, np.ndarray]:
    """Rendering loss and its exact gradient with respect to every vertex coordinate"""
    x = _as_tensor(mesh.vertices, requires_grad=True)
    loss = silhouette_loss(x, mesh.faces, cams, targets, cfg)
    loss.backward()
    return float(loss.detach()), x.grad.numpy().copy()

"""
Vertex optimisation

Minimises  phi(x) + w1 * tr(x^T L x) + w2 * sum_k min(0, det J_k)^2  over the
vertex positions with Adam. phi is the silhouette loss, L the uniform
bi-Laplacian and J_k the in-plane map from face k's reference shape to its
current shape.
"""
import logging
import os
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from scipy.sparse import csr_matrix, diags, identity
from scipy.sparse.linalg import cg
from tqdm import tqdm

from config import OptimizeConfig
from diffrender import DTYPE, ImageBuffer, RenderConfig, silhouette_loss
from errors import ArgumentError, ConfigurationError, InconsistencyError, ReconstructionError
from mesh_io import TriMesh, genus, save_obj
from schemas import Camera

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BiLaplacian:
    """L = G @ G with G = D - A the uniform graph Laplacian"""

    matrix: csr_matrix
    graph: csr_matrix

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def build_bilaplacian(mesh: TriMesh) -> BiLaplacian:
    adjacency = mesh.vertex_adjacency()
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    graph = (diags(degree) - adjacency).tocsr()
    return BiLaplacian((graph @ graph).tocsr(), graph)


def smoothness(x: np.ndarray, bilap: BiLaplacian) -> Tuple[float, np.ndarray]:
    """(tr(x^T L x), 2 L x)"""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    if len(x) != bilap.size:
        raise ArgumentError(f"{len(x)} vertices but the bi-Laplacian is {bilap.size}x{bilap.size}")
    lx = bilap.matrix @ x
    return float(np.sum(x * lx)), 2.0 * lx


@dataclass(frozen=True, eq=False)
class InversionReference:
    """Per-face reference data: first edge direction, unit normal and twice the area"""

    faces: np.ndarray
    edge_dir: np.ndarray
    normal: np.ndarray
    area2: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: TriMesh) -> "InversionReference":
        v = mesh.vertices[mesh.faces]
        e1 = v[:, 1] - v[:, 0]
        cross = mesh.face_normals
        area2 = np.linalg.norm(cross, axis=1)
        length = np.linalg.norm(e1, axis=1)
        bad = np.flatnonzero(~(area2 > 1e-14 * np.maximum(length, 1e-300) ** 2))
        if len(bad):
            raise ConfigurationError(f"reference mesh has {len(bad)} degenerate faces (first: face {int(bad[0])})")
        return cls(mesh.faces, e1 / length[:, None], cross / area2[:, None], area2)


Reference = Union[TriMesh, InversionReference]


def _as_reference(reference: Reference) -> InversionReference:
    if isinstance(reference, InversionReference):
        return reference
    return InversionReference.from_mesh(reference)


def face_determinants(x: torch.Tensor, ref: InversionReference) -> torch.Tensor:
    """
    det J_k for every face.

    The current tangent frame is (t1, n~ x t1) with t1 the current first edge
    direction and n~ the reference normal carried by the minimal rotation
    taking the reference first edge direction onto t1.
    """
    faces = torch.tensor(ref.faces)
    v = x[faces]
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    b = e1 / torch.linalg.norm(e1, dim=1, keepdim=True).clamp_min(1e-300)
    a = torch.as_tensor(ref.edge_dir, dtype=DTYPE)
    n = torch.as_tensor(ref.normal, dtype=DTYPE)
    cos = (a * b).sum(dim=1, keepdim=True)
    n_t = n - (b * n).sum(dim=1, keepdim=True) * (a + b) / (1.0 + cos).clamp_min(1e-12)
    return (n_t * torch.linalg.cross(e1, e2)).sum(dim=1) / torch.as_tensor(ref.area2, dtype=DTYPE)


def _inversion_tensor(x: torch.Tensor, ref: InversionReference) -> Tuple[torch.Tensor, torch.Tensor]:
    det = face_determinants(x, ref)
    return (torch.clamp(det, max=0.0) ** 2).sum(), det


def inversion_penalty(x: np.ndarray, reference: Reference) -> Tuple[float, np.ndarray]:
    """(sum_k min(0, det J_k)^2, gradient per vertex)"""
    ref = _as_reference(reference)
    xt = torch.tensor(np.asarray(x, dtype=np.float64).reshape(-1, 3), dtype=DTYPE, requires_grad=True)
    value, _ = _inversion_tensor(xt, ref)
    value.backward()
    return float(value.detach()), xt.grad.numpy().copy()


def flip_count(x: np.ndarray, reference: Reference) -> int:
    """Faces whose reference-to-current map has det <= 0"""
    ref = _as_reference(reference)
    with torch.no_grad():
        det = face_determinants(torch.tensor(np.asarray(x, dtype=np.float64).reshape(-1, 3)), ref)
    return int((det <= 0).sum())


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, size: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, grad: np.ndarray, params: np.ndarray) -> Tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; neither input is modified"""
    grad = np.asarray(grad, dtype=np.float64).ravel()
    params = np.asarray(params, dtype=np.float64).ravel()
    if grad.shape != state.m.shape or params.shape != state.m.shape:
        raise ArgumentError(f"Adam state holds {state.m.size} values, got grad {grad.size} and params {params.size}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), new_params


@dataclass(frozen=True)
class LossBreakdown:
    step: int
    phi: float
    smooth: float
    inversion: float
    w1: float
    w2: float
    flips: int = 0

    @property
    def total(self) -> float:
        return self.phi + self.w1 * self.smooth + self.w2 * self.inversion


HISTORY_COLUMNS = ["step", "phi", "smooth", "inversion", "total", "flips"]


def history_frame(history: Sequence[LossBreakdown]) -> pd.DataFrame:
    return pd.DataFrame(
        [[h.step, h.phi, h.smooth, h.inversion, h.total, h.flips] for h in history],
        columns=HISTORY_COLUMNS,
    )


def save_history(history: Sequence[LossBreakdown], path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(str(path))), exist_ok=True)
    history_frame(history).to_csv(path, index=False, float_format="%.17g")


@dataclass
class _Objective:
    faces: np.ndarray
    cams: Sequence[Camera]
    targets: Sequence[ImageBuffer]
    render_cfg: RenderConfig
    bilap: BiLaplacian
    reference: InversionReference
    w1: float
    w2: float
    preconditioner: Optional[csr_matrix] = None

    def evaluate(self, params: np.ndarray, step: int) -> Tuple[LossBreakdown, np.ndarray]:
        x = params.reshape(-1, 3)
        xt = torch.tensor(x, dtype=DTYPE, requires_grad=True)
        phi = silhouette_loss(xt, self.faces, self.cams, self.targets, self.render_cfg)
        phi.backward()
        g_phi = xt.grad.numpy().copy()

        xi = torch.tensor(x, dtype=DTYPE, requires_grad=True)
        inv, det = _inversion_tensor(xi, self.reference)
        inv.backward()
        g_inv = xi.grad.numpy().copy()

        smooth, g_smooth = smoothness(x, self.bilap)
        if self.preconditioner is not None:
            g_phi = self._precondition(g_phi)
        grad = g_phi + self.w1 * g_smooth + self.w2 * g_inv
        breakdown = LossBreakdown(step, float(phi.detach()), smooth, float(inv.detach()), self.w1, self.w2,
                                  int((det.detach() <= 0).sum()))
        return breakdown, grad.ravel()

    def _precondition(self, grad: np.ndarray) -> np.ndarray:
        """Solve (I + lambda G) y = grad column by column"""
        out = np.empty_like(grad)
        for c in range(3):
            y, info = cg(self.preconditioner, grad[:, c], rtol=1e-8, maxiter=500)
            if info > 0:
                logger.warning("⚠️  preconditioner CG stopped after %d iterations without converging", info)
            out[:, c] = y
        return out


def optimize(mesh0: TriMesh, cams: Sequence[Camera], targets: Sequence[ImageBuffer], cfg: OptimizeConfig,
             render_cfg: RenderConfig = RenderConfig(), reference: Optional[TriMesh] = None,
             target_genus: Optional[int] = None, checkpoint_dir: Optional[str] = None,
             progress: bool = True) -> Tuple[TriMesh, List[LossBreakdown]]:
    """
    Run ``cfg.steps`` Adam iterations from ``mesh0``.

    The history holds the loss before every update plus one entry for the
    final mesh, so it has ``cfg.steps + 1`` rows. The inversion reference
    defaults to ``mesh0``. With ``cfg.precondition`` the silhouette gradient
    is smoothed by (I + lam * G)^-1 before the update.
    """
    if not len(mesh0.faces):
        raise ArgumentError("cannot optimise a mesh without faces")
    if target_genus is not None:
        try:
            start_genus = genus(mesh0)
        except ReconstructionError as e:
            logger.warning("⚠️  could not compute the genus of the initial mesh: %s", e)
        else:
            if start_genus != target_genus:
                logger.warning("⚠️  initial mesh has genus %d but the target has genus %d; "
                               "vertex optimisation cannot change it", start_genus, target_genus)

    torch.manual_seed(cfg.seed)
    ref_mesh = mesh0 if reference is None else reference
    if ref_mesh.faces.shape != mesh0.faces.shape or not np.array_equal(ref_mesh.faces, mesh0.faces):
        raise ArgumentError("reference mesh must share the initial mesh's connectivity")

    bilap = build_bilaplacian(mesh0)
    preconditioner = None
    if cfg.precondition:
        preconditioner = (identity(mesh0.n_vertices, format="csr") + cfg.lam * bilap.graph).tocsr()
    objective = _Objective(mesh0.faces, list(cams), list(targets), render_cfg, bilap,
                           InversionReference.from_mesh(ref_mesh), cfg.w1, cfg.w2, preconditioner)

    params = mesh0.vertices.ravel().copy()
    state = AdamState.fresh(params.size, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    history: List[LossBreakdown] = []
    logger.info("🎯 optimising %d vertices over %d views for %d steps%s", mesh0.n_vertices, len(cams), cfg.steps,
                " (preconditioned)" if cfg.precondition else "")

    for step in tqdm(range(cfg.steps), desc="optimize", disable=not progress, leave=False):
        breakdown, grad = objective.evaluate(params, step)
        if not np.isfinite(breakdown.total) or not np.all(np.isfinite(grad)):
            raise InconsistencyError(f"loss or gradient became non-finite at step {step}")
        history.append(breakdown)
        state, params = adam_step(state, grad, params)
        if checkpoint_dir and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            path = os.path.join(checkpoint_dir, f"step_{step + 1:05d}.obj")
            save_obj(mesh0.with_vertices(params), path)
            logger.debug("📊 step %d: phi=%.6g total=%.6g flips=%d -> %s", step + 1, breakdown.phi,
                         breakdown.total, breakdown.flips, path)

    final, _ = objective.evaluate(params, cfg.steps)
    history.append(final)
    logger.info("✅ optimisation done: phi %.6g -> %.6g, %d flipped faces", history[0].phi, final.phi, final.flips)
    return mesh0.with_vertices(params), history


def laplacian_smooth(mesh: TriMesh, rounds: int = 20, step: float = 0.5) -> TriMesh:
    """Uniform umbrella smoothing; connectivity and genus are untouched"""
    if rounds < 0:
        raise ArgumentError("smoothing rounds must be non-negative")
    if not 0 < step <= 1:
        raise ArgumentError("smoothing step must lie in (0, 1]")
    adjacency = mesh.vertex_adjacency()
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    inv_degree = np.divide(1.0, degree, out=np.zeros_like(degree), where=degree > 0)
    x = mesh.vertices.copy()
    for _ in range(rounds):
        average = (adjacency @ x) * inv_degree[:, None]
        moved = degree > 0
        x[moved] += step * (average[moved] - x[moved])
    return mesh.with_vertices(x)

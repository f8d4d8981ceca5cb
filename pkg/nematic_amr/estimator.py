"""
后验误差估计: 单元内强形式残差 p, q 和内部边上的通量跳跃 p̂, q̂.

    Θ_T² = h_T² (‖p‖²_T + ‖q‖²_T) + Σ_E h_E (‖p̂‖²_E + ‖q̂‖²_E)

边项有两种归属: 标记时每个相邻单元拿完整的边项, 求全局估计时两侧各拿一半,
这样 Σ Θ_T² 正好是体积项加边项, 不重复计数.
"""

from typing import List, Sequence, Tuple

import attr
import numpy as np
import pandas as pd

from .common import get_logger
from .exception import BoundaryEdgeError
from .fem import FieldSample, State, edge_traces, quadrature_samples
from .mesh import Cell, InteriorEdge
from .physics import MaterialParams, fluxes, local_variables, strong_residuals

logger = get_logger()


def volume_residual_p(sample: FieldSample, params: MaterialParams) -> np.ndarray:
    """
    >>> params = MaterialParams()
    >>> trivial = FieldSample.from_values([0, 0, 1, 0], np.zeros((4, 2)), np.zeros((4, 2, 2)))
    >>> bool(np.all(volume_residual_p(trivial, params) == 0))
    True
    >>> hess = np.zeros((4, 2, 2))
    >>> hess[3, 0, 0] = 2
    >>> x = 0.3
    >>> square = FieldSample.from_values([0, 0, 1, x**2], [[0, 0], [0, 0], [0, 0], [2 * x, 0]], hess)
    >>> (np.round(volume_residual_p(square, params), 12) + 0.0).tolist()
    [0.0, 0.0, 3.0]
    >>> tall = FieldSample.from_values([0, 0, np.sqrt(2), 0], np.zeros((4, 2)), np.zeros((4, 2, 2)))
    >>> bool(abs(float(volume_residual_p(tall, params)[2]) - 2 * np.sqrt(2) * 1e5) < 1e-6)
    True
    """
    return strong_residuals(sample, params)[0]


def volume_residual_q(sample: FieldSample, params: MaterialParams) -> np.ndarray:
    """
    >>> params = MaterialParams()
    >>> hess = np.zeros((4, 2, 2))
    >>> hess[3, 0, 0] = 2
    >>> square = FieldSample.from_values([0, 0, 1, 0.09], [[0, 0], [0, 0], [0, 0], [0.6, 0]], hess)
    >>> round(float(volume_residual_q(square, params)), 10)
    19.99326
    """
    return strong_residuals(sample, params)[1]


@attr.s(frozen=True, eq=False)
class EdgeJumps:
    """内部边积分点上的跳跃, 形状 (E, P, 3) 和 (E, P)"""
    p_hat: np.ndarray = attr.ib()
    q_hat: np.ndarray = attr.ib()


def _jumps(traces, params: MaterialParams) -> EdgeJumps:
    flux_n_first, flux_phi_first = fluxes(local_variables(traces.first), params)
    flux_n_second, flux_phi_second = fluxes(local_variables(traces.second), params)
    normals = traces.normals[:, None, :]
    p_hat = np.einsum('epid,epd->epi', flux_n_first - flux_n_second, np.broadcast_to(normals, flux_phi_first.shape))
    q_hat = ((flux_phi_first - flux_phi_second) * normals).sum(axis=-1)
    return EdgeJumps(p_hat=p_hat, q_hat=q_hat)


def edge_jumps(edge: InteriorEdge, state: State, params: MaterialParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    >>> from .fem import build_dof_system, interpolate
    >>> from .mesh import QuadMesh
    >>> from .problems import vertical_director
    >>> kink = lambda x, y: np.maximum(x - 0.5, 0.0)
    >>> mesh = QuadMesh.uniform(root_cells=2)
    >>> state = interpolate(build_dof_system(mesh, vertical_director, kink), vertical_director, kink)
    >>> edge = [e for e in mesh.edges if e.normal == (1.0, 0.0)][0]
    >>> p_hat, q_hat = edge_jumps(edge, state, MaterialParams())
    >>> bool(np.abs(q_hat - 1.42809 * 7).max() < 1e-10)
    True
    >>> boundary = InteriorEdge(first=(0, 0, 0), second=(0, -1, 0), start=(0.0, 0.0), end=(0.0, 0.5), normal=(-1.0, 0.0))
    >>> edge_jumps(boundary, state, MaterialParams())
    Traceback (most recent call last):
    ...
    nematic_amr.exception.BoundaryEdgeError: edge is not interior: (0, 0, 0) -> (0, -1, 0)
    """
    mesh = state.mesh
    if not (mesh.is_inside(edge.first) and mesh.is_inside(edge.second)):
        raise BoundaryEdgeError(f'edge is not interior: {edge.first} -> {edge.second}')
    mesh.require_active(edge.first)
    mesh.require_active(edge.second)
    jumps = _jumps(edge_traces(state, [edge]), params)
    return jumps.p_hat[0], jumps.q_hat[0]


@attr.s(frozen=True, eq=False)
class EstimatorResult:
    cells: List[Cell] = attr.ib()
    volume_p: np.ndarray = attr.ib()
    volume_q: np.ndarray = attr.ib()
    # 边项各取一半
    edge_p: np.ndarray = attr.ib()
    edge_q: np.ndarray = attr.ib()
    # 边项完整计入每个相邻单元
    edge_p_full: np.ndarray = attr.ib()
    edge_q_full: np.ndarray = attr.ib()

    @property
    def theta(self) -> np.ndarray:
        return np.sqrt(self.volume_p + self.volume_q + self.edge_p + self.edge_q)

    @property
    def marking_theta(self) -> np.ndarray:
        return np.sqrt(self.volume_p + self.volume_q + self.edge_p_full + self.edge_q_full)

    @property
    def global_estimate(self) -> float:
        return float(np.sqrt((self.theta**2).sum()))

    def marking_estimates(self) -> List[Tuple[Cell, float]]:
        return list(zip(self.cells, self.marking_theta.tolist()))

    def to_frame(self) -> pd.DataFrame:
        levels, xs, ys = zip(*self.cells) if self.cells else ((), (), ())
        return pd.DataFrame({
            'level': levels,
            'i': xs,
            'j': ys,
            'theta': self.theta,
            'theta_marking': self.marking_theta,
            'volume_p': self.volume_p,
            'volume_q': self.volume_q,
            'edge_p': self.edge_p,
            'edge_q': self.edge_q,
        })


def estimate(state: State, params: MaterialParams, edges: Sequence[InteriorEdge] = None) -> EstimatorResult:
    """
    >>> from .fem import build_dof_system, interpolate
    >>> from .mesh import QuadMesh
    >>> from .problems import vertical_director, zero_potential
    >>> square = lambda x, y: np.asarray(x)**2
    >>> one = QuadMesh.uniform(root_cells=1)
    >>> result = estimate(interpolate(build_dof_system(one, vertical_director, square), vertical_director, square), MaterialParams())
    >>> bool(abs(float(result.theta[0]) - np.sqrt(9 + (2 * 1.42809 * 7)**2)) < 1e-9)
    True
    >>> mesh = QuadMesh.uniform(root_cells=4)
    >>> trivial = interpolate(build_dof_system(mesh, vertical_director, zero_potential), vertical_director, zero_potential)
    >>> estimate(trivial, MaterialParams()).global_estimate
    0.0
    >>> state = interpolate(build_dof_system(mesh, vertical_director, square), vertical_director, square)
    >>> result = estimate(state, MaterialParams())
    >>> bool(abs(result.global_estimate**2 - (result.theta**2).sum()) < 1e-13 * result.global_estimate**2)
    True
    >>> halves = result.edge_p.sum() + result.edge_q.sum()
    >>> bool(abs(2 * halves - result.edge_p_full.sum() - result.edge_q_full.sum()) < 1e-9 * max(1.0, halves))
    True

    只有平凡临界点的估计为 0, 内部扰动一个系数就不是 0

    >>> from .common import Field
    >>> from .mesh import DIRECTIONS
    >>> dofs = trivial.dofs
    >>> cell = (0, 1, 2)
    >>> center = dofs.cell_nodes[mesh.cell_index[cell], 4]
    >>> bump = np.where(dofs.free_dofs == dofs.dof(center, Field.PHI), 0.1, 0.0)
    >>> estimate(trivial.with_free(trivial.free + bump), MaterialParams()).global_estimate > 1e-10
    True

    单元中心节点只影响本单元的体积项和四条边的跳跃, 也就是本单元和边邻居

    >>> moved = estimate(state.with_free(state.free + bump), MaterialParams())
    >>> diff = np.abs(moved.theta - result.theta)
    >>> changed = {mesh.cell_list[i] for i in np.flatnonzero(diff > 1e-12 * result.theta.max())}
    >>> changed == {cell} | {n for d in DIRECTIONS for n in mesh.edge_neighbors(cell, d)}
    True

    光滑的构造解, 加密后估计严格变小

    >>> from .problems import manufactured_potential_problem
    >>> from .solver import initial_guess
    >>> problem = manufactured_potential_problem()
    >>> decoupled = MaterialParams().decoupled()
    >>> def solved_estimate(root_cells):
    ...     dofs = problem.build_dofs(QuadMesh.uniform(root_cells=root_cells))
    ...     return estimate(initial_guess(dofs, problem, decoupled), decoupled).global_estimate
    >>> solved_estimate(32) < solved_estimate(16)
    True
    """
    mesh = state.mesh
    dofs = state.dofs
    samples, weights = quadrature_samples(state, with_hessians=True)
    p, q = strong_residuals(samples, params)
    h = mesh.sizes
    volume_p = h**2 * (weights * (p**2).sum(axis=-1)).sum(axis=-1)
    volume_q = h**2 * (weights * q**2).sum(axis=-1)

    n_cells = mesh.n_cells
    edge_p_full = np.zeros(n_cells)
    edge_q_full = np.zeros(n_cells)
    traces = edge_traces(state, edges)
    if len(traces.lengths):
        jumps = _jumps(traces, params)
        # h_E ‖·‖²_E, h_E 是子边长度
        edge_p = traces.lengths * (traces.weights * (jumps.p_hat**2).sum(axis=-1)).sum(axis=-1)
        edge_q = traces.lengths * (traces.weights * jumps.q_hat**2).sum(axis=-1)
        for owners in (traces.first_cells, traces.second_cells):
            edge_p_full += np.bincount(owners, weights=edge_p, minlength=n_cells)
            edge_q_full += np.bincount(owners, weights=edge_q, minlength=n_cells)

    result = EstimatorResult(
        cells=list(mesh.cell_list),
        volume_p=volume_p,
        volume_q=volume_q,
        edge_p=edge_p_full / 2,
        edge_q=edge_q_full / 2,
        edge_p_full=edge_p_full,
        edge_q_full=edge_q_full,
    )
    logger.debug(f'estimator: cells={n_cells} edges={len(traces.lengths)} dofs={dofs.n_dofs} '
                 f'global={result.global_estimate:.6e}')
    return result


def effectivity(result: EstimatorResult, error: float) -> float:
    """全局估计 / 真实误差"""
    if error <= 0:
        raise ValueError(f'error must be positive, got {error}')
    return result.global_estimate / error

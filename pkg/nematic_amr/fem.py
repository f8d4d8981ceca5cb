"""
Q2 (双二次) 有限元: 参考单元, 积分, DOF 编号, Dirichlet/悬挂节点约束, 场求值, 网格间插值.

全局 DOF 按场分块: dof = field * n_nodes + node, 场顺序 n1, n2, n3, phi.
约束写成仿射映射 u = T @ x + c, x 是自由 DOF.
"""

from functools import cached_property
from typing import Callable, Dict, List, Sequence, Tuple

import attr
import numpy as np
import scipy.sparse as sp

from . import settings
from .common import FIELD_COUNT, Field, get_logger
from .exception import CellNotActive, DimensionMismatch, MeshNotNested
from .mesh import Cell, InteriorEdge, QuadMesh

logger = get_logger()

DirectorFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
PotentialFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

# 参考单元上 9 个节点, 局部编号 a + 3*b
NODE_OFFSETS = np.array([(a, b) for b in range(3) for a in range(3)])
# 逆时针的四个角点
CORNER_NODES = (0, 2, 8, 6)


def lagrange_1d(t) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """节点 0, 1/2, 1 上的一维二次 Lagrange 基函数及其一阶、二阶导数

    >>> values, _, _ = lagrange_1d(0.25)
    >>> [float(v) for v in values]
    [0.375, 0.75, -0.125]
    """
    t = np.asarray(t, dtype=float)
    values = np.stack([2*(t - 0.5)*(t - 1), 4*t*(1 - t), 2*t*(t - 0.5)], axis=-1)
    first = np.stack([4*t - 3, 4 - 8*t, 4*t - 1], axis=-1)
    second = np.broadcast_to(np.array([4.0, -8.0, 4.0]), values.shape)
    return values, first, second


class ReferenceQ2:
    """[0,1]² 上的张量积二次基函数

    >>> ref = ReferenceQ2()
    >>> points = np.random.default_rng(0).random((100, 2))
    >>> bool(np.abs(ref.values(points).sum(axis=-1) - 1).max() < 1e-14)
    True
    >>> bool(np.abs(ref.gradients(points).sum(axis=-2)).max() < 1e-13)
    True
    >>> bool(np.allclose(ref.values(ref.node_points), np.eye(9)))
    True
    """
    n_shape = 9

    @property
    def node_points(self) -> np.ndarray:
        return NODE_OFFSETS / 2.0

    @staticmethod
    def _split(points):
        points = np.asarray(points, dtype=float)
        lx, dlx, ddlx = lagrange_1d(points[..., 0])
        ly, dly, ddly = lagrange_1d(points[..., 1])
        return (lx, dlx, ddlx), (ly, dly, ddly)

    def values(self, points) -> np.ndarray:
        (lx, _, _), (ly, _, _) = self._split(points)
        return (ly[..., :, None] * lx[..., None, :]).reshape(*lx.shape[:-1], 9)

    def gradients(self, points) -> np.ndarray:
        (lx, dlx, _), (ly, dly, _) = self._split(points)
        shape = (*lx.shape[:-1], 9)
        gx = (ly[..., :, None] * dlx[..., None, :]).reshape(shape)
        gy = (dly[..., :, None] * lx[..., None, :]).reshape(shape)
        return np.stack([gx, gy], axis=-1)

    def hessians(self, points) -> np.ndarray:
        (lx, dlx, ddlx), (ly, dly, ddly) = self._split(points)
        shape = (*lx.shape[:-1], 9)
        hxx = (ly[..., :, None] * ddlx[..., None, :]).reshape(shape)
        hxy = (dly[..., :, None] * dlx[..., None, :]).reshape(shape)
        hyy = (ddly[..., :, None] * lx[..., None, :]).reshape(shape)
        return np.stack([np.stack([hxx, hxy], axis=-1), np.stack([hxy, hyy], axis=-1)], axis=-2)


@attr.s(frozen=True, eq=False)
class QuadratureRule:
    """张量积 Gauss 积分, 映射到 [0,1]² 和 [0,1]

    >>> rule = QuadratureRule.gauss()
    >>> x, y = rule.points[:, 0], rule.points[:, 1]
    >>> exact = lambda a, b: 1 / ((a + 1) * (b + 1))
    >>> max(abs(float((rule.weights * x**a * y**b).sum()) - exact(a, b)) for a in range(8) for b in range(8)) < 1e-13
    True
    >>> abs(float(rule.edge_weights.sum()) - 1) < 1e-15
    True
    """
    points: np.ndarray = attr.ib()
    weights: np.ndarray = attr.ib()
    edge_points: np.ndarray = attr.ib()
    edge_weights: np.ndarray = attr.ib()

    @classmethod
    def gauss(cls, n_volume: int = None, n_edge: int = None) -> 'QuadratureRule':
        n_volume = n_volume or settings.volume_quadrature_points
        n_edge = n_edge or settings.edge_quadrature_points
        t, w = np.polynomial.legendre.leggauss(n_volume)
        t, w = (t + 1) / 2, w / 2
        points = np.array([(t[a], t[b]) for b in range(n_volume) for a in range(n_volume)])
        weights = np.array([w[a] * w[b] for b in range(n_volume) for a in range(n_volume)])
        te, we = np.polynomial.legendre.leggauss(n_edge)
        return cls(points=points, weights=weights, edge_points=(te + 1) / 2, edge_weights=we / 2)


@attr.s(frozen=True, eq=False)
class FieldSample:
    """点上的场值. 前导维度任意, 末尾是 (4,), (4,2), (4,2,2)"""
    values: np.ndarray = attr.ib()
    gradients: np.ndarray = attr.ib()
    hessians: np.ndarray = attr.ib(default=None)

    @property
    def n(self) -> np.ndarray:
        return self.values[..., :3]

    @property
    def grad_n(self) -> np.ndarray:
        return self.gradients[..., :3, :]

    @property
    def hess_n(self) -> np.ndarray:
        return self.hessians[..., :3, :, :]

    @property
    def phi(self) -> np.ndarray:
        return self.values[..., 3]

    @property
    def grad_phi(self) -> np.ndarray:
        return self.gradients[..., 3, :]

    @property
    def hess_phi(self) -> np.ndarray:
        return self.hessians[..., 3, :, :]

    @classmethod
    def from_values(cls, values, gradients, hessians=None) -> 'FieldSample':
        return cls(
            values=np.asarray(values, dtype=float),
            gradients=np.asarray(gradients, dtype=float),
            hessians=None if hessians is None else np.asarray(hessians, dtype=float),
        )

    def __getitem__(self, index) -> 'FieldSample':
        return FieldSample(
            values=self.values[index],
            gradients=self.gradients[index],
            hessians=None if self.hessians is None else self.hessians[index],
        )


@attr.s(eq=False)
class DofSystem:
    mesh: QuadMesh = attr.ib()
    director_fn: DirectorFn = attr.ib()
    potential_fn: PotentialFn = attr.ib()
    node_coords: np.ndarray = attr.ib()
    cell_nodes: np.ndarray = attr.ib()
    boundary_nodes: np.ndarray = attr.ib()
    # 悬挂节点 -> [(主节点, 权重)]
    hanging: Dict[int, List[Tuple[int, float]]] = attr.ib()
    free_dofs: np.ndarray = attr.ib()
    transfer: sp.csr_matrix = attr.ib()
    offset: np.ndarray = attr.ib()
    # 整数坐标 (最细网格的半格为单位) -> 节点编号
    node_index: Dict[Tuple[int, int], int] = attr.ib(factory=dict)
    resolution: int = attr.ib(default=1)
    reference: ReferenceQ2 = attr.ib(factory=ReferenceQ2)
    quadrature: QuadratureRule = attr.ib(factory=QuadratureRule.gauss)

    @property
    def n_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def n_dofs(self) -> int:
        return FIELD_COUNT * self.n_nodes

    @property
    def n_free(self) -> int:
        return len(self.free_dofs)

    @property
    def n_dirichlet(self) -> int:
        return FIELD_COUNT * int(self.boundary_nodes.sum())

    @property
    def n_hanging(self) -> int:
        return FIELD_COUNT * len(self.hanging)

    def dof(self, node, field: Field):
        return field.index * self.n_nodes + node

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        """(C, 4, 9) 每个单元的全局 DOF"""
        fields = np.arange(FIELD_COUNT)[None, :, None] * self.n_nodes
        return fields + self.cell_nodes[:, None, :]

    @cached_property
    def free_fields(self) -> np.ndarray:
        return self.free_dofs // self.n_nodes

    def expand(self, free: np.ndarray) -> np.ndarray:
        if free.shape != (self.n_free,):
            raise DimensionMismatch(f'expected {self.n_free} free coefficients, got {free.shape}')
        return self.transfer @ free + self.offset

    def describe(self) -> str:
        return (f'cells={self.mesh.n_cells} dofs={self.n_dofs} free={self.n_free} '
                f'dirichlet={self.n_dirichlet} hanging={self.n_hanging}')


def _node_key(x: float, y: float, resolution: int) -> Tuple[int, int]:
    return (int(round(x * resolution)), int(round(y * resolution)))


def build_dof_system(mesh: QuadMesh, director_fn: DirectorFn, potential_fn: PotentialFn,
                     quadrature: QuadratureRule = None) -> DofSystem:
    """
    >>> from .mesh import adaptive_refine
    >>> director = lambda x, y: np.stack([0*x, 0*x, 1 + 0*x], axis=-1)
    >>> potential = lambda x, y: 0*x
    >>> one = build_dof_system(QuadMesh.uniform(root_cells=1), director, potential)
    >>> one.n_dofs, one.n_dirichlet, one.n_free
    (36, 32, 4)
    >>> build_dof_system(QuadMesh.uniform(), director, potential).n_dofs
    4356
    >>> mesh = adaptive_refine(QuadMesh.uniform(root_cells=2), {(0, 1, 0)})
    >>> dofs = build_dof_system(mesh, director, potential)
    >>> node = dofs.node_index[_node_key(0.5, 0.125, dofs.resolution)]
    >>> sorted((float(dofs.node_coords[m][1]), w) for m, w in dofs.hanging[node])
    [(0.0, 0.375), (0.25, 0.75), (0.5, -0.125)]
    """
    resolution = 2 * mesh.cells_per_side(mesh.max_level)
    node_index: Dict[Tuple[int, int], int] = dict()
    coords = []
    cell_nodes = np.empty((mesh.n_cells, 9), dtype=np.int64)
    for c, cell in enumerate(mesh.cell_list):
        x0, y0 = mesh.cell_origin(cell)
        h = mesh.cell_size(cell)
        for k, (a, b) in enumerate(NODE_OFFSETS):
            x, y = x0 + a * h / 2, y0 + b * h / 2
            key = _node_key(x, y, resolution)
            index = node_index.get(key)
            if index is None:
                index = len(coords)
                node_index[key] = index
                coords.append(key)
            cell_nodes[c, k] = index
    keys = np.array(coords, dtype=np.int64)
    node_coords = keys / resolution
    boundary = (keys == 0).any(axis=1) | (keys == resolution).any(axis=1)

    hanging = dict()
    for edge in mesh.edges:
        if edge.conforming:
            continue
        coarse = edge.first
        h_coarse = mesh.cell_size(coarse)
        origin = np.array(mesh.cell_origin(coarse))
        mid = (np.array(edge.start) + np.array(edge.end)) / 2
        axis = 1 if edge.normal[0] != 0 else 0
        side = 2 if (edge.normal[0] + edge.normal[1]) > 0 else 0
        t = (mid[axis] - origin[axis]) / h_coarse
        masters = []
        for m in range(3):
            offset = (side, m) if axis == 1 else (m, side)
            local = offset[0] + 3 * offset[1]
            masters.append(int(cell_nodes[mesh.cell_index[coarse], local]))
        weights, _, _ = lagrange_1d(t)
        node = node_index[_node_key(mid[0], mid[1], resolution)]
        hanging[node] = [(masters[m], float(weights[m])) for m in range(3)]

    n_nodes = len(node_coords)
    director_values = np.asarray(director_fn(node_coords[:, 0], node_coords[:, 1]), dtype=float)
    potential_values = np.asarray(potential_fn(node_coords[:, 0], node_coords[:, 1]), dtype=float)
    nodal = np.concatenate([director_values.T.reshape(3, n_nodes), potential_values.reshape(1, n_nodes)])

    is_free_node = ~boundary
    is_free_node[np.fromiter(hanging, dtype=np.int64, count=len(hanging))] = False
    free_nodes = np.flatnonzero(is_free_node)
    column_of_node = -np.ones(n_nodes, dtype=np.int64)
    column_of_node[free_nodes] = np.arange(len(free_nodes))
    n_free_nodes = len(free_nodes)

    def resolve(node: int) -> List[Tuple[int, float]]:
        if node not in hanging:
            return [(node, 1.0)]
        res = []
        for master, weight in hanging[node]:
            res.extend((m, weight * w) for m, w in resolve(master))
        return res

    rows, cols, vals = [], [], []
    offset = np.zeros(FIELD_COUNT * n_nodes)
    for field in range(FIELD_COUNT):
        base = field * n_nodes
        rows.extend(base + free_nodes)
        cols.extend(field * n_free_nodes + np.arange(n_free_nodes))
        vals.extend(np.ones(n_free_nodes))
        boundary_nodes = np.flatnonzero(boundary)
        offset[base + boundary_nodes] = nodal[field, boundary_nodes]
        for node in hanging:
            for master, weight in resolve(node):
                if boundary[master]:
                    offset[base + node] += weight * nodal[field, master]
                else:
                    rows.append(base + node)
                    cols.append(field * n_free_nodes + column_of_node[master])
                    vals.append(weight)
    n_free = FIELD_COUNT * n_free_nodes
    transfer = sp.csr_matrix((vals, (rows, cols)), shape=(FIELD_COUNT * n_nodes, n_free))
    free_dofs = (np.arange(FIELD_COUNT)[:, None] * n_nodes + free_nodes[None, :]).ravel()

    dofs = DofSystem(
        mesh=mesh,
        director_fn=director_fn,
        potential_fn=potential_fn,
        node_coords=node_coords,
        cell_nodes=cell_nodes,
        boundary_nodes=boundary,
        hanging=hanging,
        free_dofs=free_dofs,
        transfer=transfer,
        offset=offset,
        node_index=node_index,
        resolution=resolution,
        quadrature=quadrature or QuadratureRule.gauss(),
    )
    logger.debug(f'dof system: {dofs.describe()}')
    return dofs


@attr.s(frozen=True, eq=False)
class State:
    """离散解 (n_h, φ_h): 自由 DOF 系数 + 约束映射"""
    dofs: DofSystem = attr.ib()
    free: np.ndarray = attr.ib()

    @free.validator
    def _check_free(self, attribute, value):
        if value.shape != (self.dofs.n_free,):
            raise DimensionMismatch(f'expected {self.dofs.n_free} free coefficients, got {value.shape}')

    @property
    def mesh(self) -> QuadMesh:
        return self.dofs.mesh

    @cached_property
    def full_values(self) -> np.ndarray:
        return self.dofs.expand(self.free)

    @property
    def nodal(self) -> np.ndarray:
        """(4, n_nodes)"""
        return self.full_values.reshape(FIELD_COUNT, self.dofs.n_nodes)

    @cached_property
    def cell_coefficients(self) -> np.ndarray:
        """(C, 4, 9)"""
        return self.full_values[self.dofs.cell_dofs]

    def with_free(self, free: np.ndarray) -> 'State':
        return State(dofs=self.dofs, free=np.asarray(free, dtype=float))


def interpolate(dofs: DofSystem, director_fn: DirectorFn, potential_fn: PotentialFn) -> State:
    """Q2 节点插值. 约束 DOF 的值由 DofSystem 决定

    >>> director = lambda x, y: np.stack([0*x, 0*x, 1 + 0*x], axis=-1)
    >>> square = lambda x, y: x**2
    >>> dofs = build_dof_system(QuadMesh.uniform(root_cells=2), director, square)
    >>> state = interpolate(dofs, director, square)
    >>> sample = evaluate(state, (0, 1, 1), [(0.3, 0.7)])[0]
    >>> [round(float(v), 12) for v in sample.values]
    [0.0, 0.0, 1.0, 0.4225]
    >>> abs(float(sample.hessians[3, 0, 0]) - 2) < 1e-9, abs(float(sample.hessians[3, 1, 1])) < 1e-9
    (True, True)
    """
    x, y = dofs.node_coords[:, 0], dofs.node_coords[:, 1]
    director = np.asarray(director_fn(x, y), dtype=float).reshape(-1, 3)
    potential = np.asarray(potential_fn(x, y), dtype=float).reshape(-1)
    full = np.concatenate([director[:, 0], director[:, 1], director[:, 2], potential])
    return State(dofs=dofs, free=full[dofs.free_dofs].copy())


def evaluate_batch(state: State, cell_indices, ref_points, with_hessians: bool = True) -> FieldSample:
    """cell_indices: (M,); ref_points: (P, 2) 共用或 (M, P, 2) 每个单元一组. 结果形状 (M, P, ...)"""
    dofs = state.dofs
    cell_indices = np.asarray(cell_indices, dtype=np.int64)
    ref_points = np.asarray(ref_points, dtype=float)
    if ref_points.ndim == 2:
        ref_points = ref_points[None, :, :]
    coefficients = state.cell_coefficients[cell_indices]
    h = dofs.mesh.sizes[cell_indices]
    m = len(cell_indices)
    p = ref_points.shape[1]

    # 基函数和为 1, 导数和为 0: 减去第一个系数后常数场可以精确重现
    anchor = coefficients[:, :, 0]
    centered = coefficients - anchor[:, :, None]
    reference = dofs.reference
    basis = np.broadcast_to(reference.values(ref_points), (m, p, 9))
    grads = np.broadcast_to(reference.gradients(ref_points), (m, p, 9, 2))
    values = anchor[:, None, :] + np.einsum('mfk,mpk->mpf', centered, basis)
    gradients = np.einsum('mfk,mpkd->mpfd', centered, grads) / h[:, None, None, None]
    hessians = None
    if with_hessians:
        hess = np.broadcast_to(reference.hessians(ref_points), (m, p, 9, 2, 2))
        hessians = np.einsum('mfk,mpkde->mpfde', centered, hess) / h[:, None, None, None, None]**2
    return FieldSample(values=values, gradients=gradients, hessians=hessians)


def evaluate(state: State, cell: Cell, ref_points) -> List[FieldSample]:
    """
    >>> director = lambda x, y: np.stack([0*x, 0*x, 1 + 0*x], axis=-1)
    >>> product = lambda x, y: x * y
    >>> dofs = build_dof_system(QuadMesh.uniform(root_cells=2), director, product)
    >>> sample = evaluate(interpolate(dofs, director, product), (0, 0, 1), [(0.5, 0.5)])[0]
    >>> [round(float(v), 12) for v in sample.gradients[3]], round(float(sample.hessians[3, 0, 1]), 12)
    ([0.75, 0.25], 1.0)
    >>> evaluate(interpolate(dofs, director, product), (1, 0, 0), [(0.5, 0.5)])
    Traceback (most recent call last):
    ...
    nematic_amr.exception.CellNotActive: cell is not active: (1, 0, 0)
    """
    state.mesh.require_active(cell)
    index = state.mesh.cell_index[cell]
    batch = evaluate_batch(state, [index], np.asarray(ref_points, dtype=float).reshape(-1, 2))
    return [batch[0, k] for k in range(batch.values.shape[1])]


def quadrature_samples(state: State, with_hessians: bool = True) -> Tuple[FieldSample, np.ndarray]:
    """所有单元所有体积分点上的样本, 以及对应的物理权重 (C, Q)"""
    dofs = state.dofs
    quadrature = dofs.quadrature
    samples = evaluate_batch(state, np.arange(dofs.mesh.n_cells), quadrature.points, with_hessians=with_hessians)
    weights = quadrature.weights[None, :] * dofs.mesh.sizes[:, None]**2
    return samples, weights


def quadrature_points_physical(mesh: QuadMesh, quadrature: QuadratureRule) -> np.ndarray:
    """(C, Q, 2)"""
    return mesh.origins[:, None, :] + mesh.sizes[:, None, None] * quadrature.points[None, :, :]


@attr.s(frozen=True, eq=False)
class EdgeTraces:
    """内部边积分点上两侧的场值. first/second 与 InteriorEdge 一致"""
    first: FieldSample = attr.ib()
    second: FieldSample = attr.ib()
    normals: np.ndarray = attr.ib()
    lengths: np.ndarray = attr.ib()
    weights: np.ndarray = attr.ib()
    first_cells: np.ndarray = attr.ib()
    second_cells: np.ndarray = attr.ib()


def edge_traces(state: State, edges: Sequence[InteriorEdge] = None) -> EdgeTraces:
    """
    >>> from .mesh import adaptive_refine
    >>> mesh = adaptive_refine(QuadMesh.uniform(root_cells=2), {(0, 1, 0)})
    >>> director = lambda x, y: np.stack([0*x, 0*x, 1 + 0*x], axis=-1)
    >>> dofs = build_dof_system(mesh, director, lambda x, y: 0*x)
    >>> state = State(dofs, np.random.default_rng(3).standard_normal(dofs.n_free))
    >>> traces = edge_traces(state, [e for e in mesh.edges if not e.conforming])
    >>> len(traces.lengths), bool(np.abs(traces.first.values - traces.second.values).max() < 1e-12)
    (4, True)
    """
    mesh = state.mesh
    edges = mesh.edges if edges is None else list(edges)
    quadrature = state.dofs.quadrature
    t = quadrature.edge_points
    if not edges:
        empty = np.zeros((0, len(t), FIELD_COUNT))
        sample = FieldSample(values=empty, gradients=np.zeros((0, len(t), FIELD_COUNT, 2)))
        return EdgeTraces(first=sample, second=sample, normals=np.zeros((0, 2)), lengths=np.zeros(0),
                          weights=np.zeros((0, len(t))), first_cells=np.zeros(0, dtype=np.int64),
                          second_cells=np.zeros(0, dtype=np.int64))
    starts = np.array([e.start for e in edges])
    ends = np.array([e.end for e in edges])
    points = starts[:, None, :] + t[None, :, None] * (ends - starts)[:, None, :]

    def side(cells):
        indices = np.array([mesh.cell_index[c] for c in cells], dtype=np.int64)
        ref = (points - mesh.origins[indices][:, None, :]) / mesh.sizes[indices][:, None, None]
        return indices, evaluate_batch(state, indices, ref, with_hessians=False)

    first_cells, first = side([e.first for e in edges])
    second_cells, second = side([e.second for e in edges])
    lengths = np.array([e.length for e in edges])
    return EdgeTraces(
        first=first,
        second=second,
        normals=np.array([e.normal for e in edges]),
        lengths=lengths,
        weights=quadrature.edge_weights[None, :] * lengths[:, None],
        first_cells=first_cells,
        second_cells=second_cells,
    )


def prolong(state: State, fine_dofs: DofSystem) -> State:
    """粗网格解插值到加密后的网格. 边界值按细网格重新插值

    >>> from .mesh import adaptive_refine, uniform_refine
    >>> director = lambda x, y: np.stack([0*x, 0*x, 1 + 0*x], axis=-1)
    >>> square = lambda x, y: x**2
    >>> coarse = interpolate(build_dof_system(QuadMesh.uniform(root_cells=2), director, square), director, square)
    >>> fine_mesh = adaptive_refine(coarse.mesh, {(0, 0, 0)})
    >>> fine = prolong(coarse, build_dof_system(fine_mesh, director, square))
    >>> sample = evaluate(fine, (1, 1, 1), [(0.4, 0.9)])[0]
    >>> abs(float(sample.phi) - 0.35**2) < 1e-12, [round(float(v), 12) for v in sample.n]
    (True, [0.0, 0.0, 1.0])
    >>> prolong(fine, coarse.dofs)
    Traceback (most recent call last):
    ...
    nematic_amr.exception.MeshNotNested: no active ancestor for (0, 0, 0)

    随机粗网格解: 边界数据在粗网格上可以精确表示时, 加密前后在任意点上的值相同

    >>> def values_at(state, points):
    ...     mesh = state.mesh
    ...     res = []
    ...     for x, y in points:
    ...         for cell in mesh.cell_list:
    ...             (x0, y0), h = mesh.cell_origin(cell), mesh.cell_size(cell)
    ...             if x0 <= x < x0 + h and y0 <= y < y0 + h:
    ...                 res.append(evaluate(state, cell, [((x - x0) / h, (y - y0) / h)])[0].values)
    ...                 break
    ...     return np.array(res)
    >>> product = lambda x, y: x * y
    >>> rng = np.random.default_rng(7)
    >>> coarse_dofs = build_dof_system(QuadMesh.uniform(root_cells=2), director, product)
    >>> coarse = State(coarse_dofs, rng.standard_normal(coarse_dofs.n_free))
    >>> fine_mesh = uniform_refine(adaptive_refine(coarse.mesh, {(0, 1, 1)}))
    >>> fine = prolong(coarse, build_dof_system(fine_mesh, director, product))
    >>> points = rng.random((50, 2))
    >>> bool(np.abs(values_at(fine, points) - values_at(coarse, points)).max() < 1e-12)
    True
    """
    coarse_mesh = state.mesh
    fine_mesh = fine_dofs.mesh
    if coarse_mesh.root_cells != fine_mesh.root_cells:
        raise MeshNotNested(f'root grids differ: {coarse_mesh.root_cells} vs {fine_mesh.root_cells}')
    ancestors = np.array([coarse_mesh.cell_index[coarse_mesh.locate_ancestor(c)] for c in fine_mesh.cell_list],
                         dtype=np.int64)
    node_points = fine_mesh.origins[:, None, :] + fine_mesh.sizes[:, None, None] * (NODE_OFFSETS / 2.0)[None, :, :]
    ref = (node_points - coarse_mesh.origins[ancestors][:, None, :]) / coarse_mesh.sizes[ancestors][:, None, None]
    samples = evaluate_batch(state, ancestors, ref, with_hessians=False)

    nodal = np.zeros((FIELD_COUNT, fine_dofs.n_nodes))
    nodal[:, fine_dofs.cell_nodes.ravel()] = samples.values.reshape(-1, FIELD_COUNT).T
    return State(dofs=fine_dofs, free=nodal.ravel()[fine_dofs.free_dofs].copy())


def constrain_and_distribute(element_values: np.ndarray, dofs: DofSystem):
    """单元向量 (C,4,9) 或单元矩阵 (C,4,9,4,9) 组装到全局, 再用 T 消去约束 DOF

    >>> director = lambda x, y: np.stack([0*x, 0*x, 1 + 0*x], axis=-1)
    >>> dofs = build_dof_system(QuadMesh.uniform(root_cells=2), director, lambda x, y: 0*x)
    >>> ones = np.ones((dofs.mesh.n_cells, 4, 9))
    >>> constrain_and_distribute(ones, dofs).shape
    (36,)
    >>> matrix = constrain_and_distribute(np.ones((dofs.mesh.n_cells, 4, 9, 4, 9)), dofs)
    >>> matrix.shape, bool(abs(matrix - matrix.T).max() == 0)
    ((36, 36), True)
    >>> constrain_and_distribute(np.ones((3, 4, 9)), dofs)
    Traceback (most recent call last):
    ...
    nematic_amr.exception.DimensionMismatch: element data shape (3, 4, 9) does not match 4 cells
    """
    cells = dofs.mesh.n_cells
    cell_dofs = dofs.cell_dofs.reshape(cells, -1)
    local = cell_dofs.shape[1]
    if element_values.shape == (cells, FIELD_COUNT, 9):
        full = np.bincount(cell_dofs.ravel(), weights=element_values.reshape(cells, local).ravel(), minlength=dofs.n_dofs)
        return dofs.transfer.T @ full
    if element_values.shape == (cells, FIELD_COUNT, 9, FIELD_COUNT, 9):
        rows = np.repeat(cell_dofs, local, axis=1).ravel()
        cols = np.tile(cell_dofs, (1, local)).ravel()
        full = sp.coo_matrix((element_values.reshape(-1), (rows, cols)), shape=(dofs.n_dofs, dofs.n_dofs)).tocsr()
        transfer = dofs.transfer
        return (transfer.T @ full @ transfer).tocsr()
    raise DimensionMismatch(f'element data shape {element_values.shape} does not match {cells} cells')


def potential_h1_error(state: State, exact: PotentialFn, exact_gradient: Callable) -> float:
    """‖φ_h − φ*‖_1 按单元积分"""
    samples, weights = quadrature_samples(state, with_hessians=False)
    points = quadrature_points_physical(state.mesh, state.dofs.quadrature)
    x, y = points[..., 0], points[..., 1]
    value_error = samples.phi - exact(x, y)
    gradient_error = samples.grad_phi - np.asarray(exact_gradient(x, y))
    total = (weights * (value_error**2 + (gradient_error**2).sum(axis=-1))).sum()
    return float(np.sqrt(total))


def dump_state(state: State, path: str):
    """原始系数 (全部 DOF) 和网格单元, 用于精确重启后处理"""
    cells = np.array(state.mesh.cell_list, dtype=np.int64).reshape(-1, 3)
    with open(path, 'wb') as f:
        np.savez(f, free=state.free, full=state.full_values, cells=cells, root_cells=state.mesh.root_cells)


def load_state(path: str, director_fn: DirectorFn, potential_fn: PotentialFn) -> State:
    """边界数据不存盘, 要和写出时的一样

    >>> import os, tempfile
    >>> from .mesh import adaptive_refine
    >>> vertical = lambda x, y: np.stack([0*x, 0*x, 1 + 0*x], axis=-1)
    >>> ramp = lambda x, y: x + y
    >>> mesh = adaptive_refine(QuadMesh.uniform(root_cells=2), {(0, 0, 0)})
    >>> state = interpolate(build_dof_system(mesh, vertical, ramp), vertical, ramp)
    >>> with tempfile.TemporaryDirectory() as tmp:
    ...     dump_state(state, os.path.join(tmp, 'state.npz'))
    ...     loaded = load_state(os.path.join(tmp, 'state.npz'), vertical, ramp)
    >>> loaded.mesh == mesh, bool(np.array_equal(loaded.full_values, state.full_values))
    (True, True)
    """
    with np.load(path) as data:
        mesh = QuadMesh(root_cells=int(data['root_cells']), cells=[tuple(int(v) for v in row) for row in data['cells']])
        free = data['free'].copy()
    dofs = build_dof_system(mesh, director_fn, potential_fn)
    return State(dofs=dofs, free=free)

"""
Frank-Oseen 自由能 (含电场, 挠曲电耦合) + 罚项, 以及它的一阶/二阶变分.

积分点上的局部变量 u 有 12 个分量, 按 (场, 导数) 排列:
    u[3*f + 0] = 场 f 的值, u[3*f + 1] = ∂x, u[3*f + 2] = ∂y
场顺序 n1, n2, n3, phi. 几何是二维的, 指向矢是三维的, ∂z ≡ 0.
"""

from typing import Tuple

import attr
import numpy as np

from . import settings
from .common import FIELD_COUNT, get_logger
from .exception import ConfigError
from .fem import FieldSample, State, constrain_and_distribute, evaluate_batch, quadrature_samples

logger = get_logger()

LOCAL_SIZE = 3 * FIELD_COUNT


def _positive(instance, attribute, value):
    if not value > 0:
        raise ConfigError(attribute.name, f'must be positive, got {value}')


@attr.s(frozen=True)
class MaterialParams:
    """
    >>> params = MaterialParams()
    >>> params.eps_parallel, abs(params.kappa * params.K3 - params.K2) < 1e-15
    (18.5, True)
    >>> params.decoupled().es, params.decoupled().K3
    (0.0, 1.32258)
    >>> MaterialParams(K1=0)
    Traceback (most recent call last):
    ...
    nematic_amr.exception.ConfigError: K1: must be positive, got 0
    """
    K1: float = attr.ib(default=1.0, validator=_positive)
    K2: float = attr.ib(default=0.62903, validator=_positive)
    K3: float = attr.ib(default=1.32258, validator=_positive)
    eps0: float = attr.ib(default=1.42809, validator=_positive)
    eps_perp: float = attr.ib(default=7.0, validator=_positive)
    eps_a: float = attr.ib(default=11.5)
    es: float = attr.ib(default=1.5)
    eb: float = attr.ib(default=-1.5)
    zeta: float = attr.ib(default=1e5, validator=_positive)

    @property
    def kappa(self) -> float:
        return self.K2 / self.K3

    @property
    def eps_parallel(self) -> float:
        return self.eps_a + self.eps_perp

    def evolve(self, **changes) -> 'MaterialParams':
        return attr.evolve(self, **changes)

    def decoupled(self) -> 'MaterialParams':
        """去掉 n-phi 耦合后的参数, 用于求初始电势"""
        return self.evolve(eps_a=0.0, es=0.0, eb=0.0)


def _skew(v: np.ndarray) -> np.ndarray:
    """[v]x, 满足 [v]x @ w = v x w"""
    zero = np.zeros_like(v[..., 0])
    return np.stack([
        np.stack([zero, -v[..., 2], v[..., 1]], axis=-1),
        np.stack([v[..., 2], zero, -v[..., 0]], axis=-1),
        np.stack([-v[..., 1], v[..., 0], zero], axis=-1),
    ], axis=-2)


@attr.s(frozen=True, eq=False)
class DirectorCalculus:
    """
    >>> sample = FieldSample.from_values([0, 0, 1, 0], np.zeros((4, 2)))
    >>> calc = DirectorCalculus.from_sample(sample)
    >>> float(calc.div), bool(np.all(calc.curl == 0))
    (0.0, True)
    >>> z = calc.z_matrix(kappa=0.5)
    >>> np.diag(z).tolist(), bool(np.allclose(z, z.T))
    ([1.0, 1.0, 0.5], True)
    >>> unit = np.array([0.6, 0.0, 0.8])
    >>> calc = DirectorCalculus.from_sample(FieldSample.from_values([*unit, 0], np.zeros((4, 2))))
    >>> np.round(np.linalg.eigvalsh(calc.z_matrix(kappa=0.3)), 12).tolist()
    [0.3, 1.0, 1.0]
    """
    n: np.ndarray = attr.ib()
    grad_n: np.ndarray = attr.ib()
    grad_phi: np.ndarray = attr.ib()

    @classmethod
    def from_sample(cls, sample: FieldSample) -> 'DirectorCalculus':
        grad_phi = np.concatenate([sample.grad_phi, np.zeros_like(sample.grad_phi[..., :1])], axis=-1)
        return cls(n=sample.n, grad_n=sample.grad_n, grad_phi=grad_phi)

    @property
    def div(self) -> np.ndarray:
        return self.grad_n[..., 0, 0] + self.grad_n[..., 1, 1]

    @property
    def curl(self) -> np.ndarray:
        g = self.grad_n
        return np.stack([g[..., 2, 1], -g[..., 2, 0], g[..., 1, 0] - g[..., 0, 1]], axis=-1)

    @property
    def n_dot_grad_phi(self) -> np.ndarray:
        return (self.n * self.grad_phi).sum(axis=-1)

    def z_matrix(self, kappa: float) -> np.ndarray:
        return np.eye(3) - (1 - kappa) * self.n[..., :, None] * self.n[..., None, :]


def electric_displacement(sample: FieldSample, params: MaterialParams) -> np.ndarray:
    """D = -ε0ε⊥∇φ - ε0εa(n·∇φ)n + es n(∇·n) + eb(n×∇×n)

    >>> params = MaterialParams()
    >>> (np.round(electric_displacement(FieldSample.from_values([0, 0, 1, 0], [[0, 0]] * 3 + [[0, 1]]), params), 10) + 0.0).tolist()
    [0.0, -9.99663, 0.0]
    >>> (electric_displacement(FieldSample.from_values(np.zeros(4), np.zeros((4, 2))), params) + 0.0).tolist()
    [0.0, 0.0, 0.0]
    >>> y = 0.5
    >>> bend = FieldSample.from_values([y, 0, 0, 0], [[0, 1], [0, 0], [0, 0], [0, 0]])
    >>> (electric_displacement(bend, params.evolve(es=0.0)) + 0.0).tolist()
    [0.0, -0.75, 0.0]
    """
    calc = DirectorCalculus.from_sample(sample)
    n = calc.n
    return (-params.eps0 * params.eps_perp * calc.grad_phi
            - params.eps0 * params.eps_a * calc.n_dot_grad_phi[..., None] * n
            + params.es * calc.div[..., None] * n
            + params.eb * np.cross(n, calc.curl))


def electric_displacement_divergence(sample: FieldSample, params: MaterialParams) -> np.ndarray:
    """∇·D, 逐项用乘积法则展开, 需要 sample.hessians"""
    calc = DirectorCalculus.from_sample(sample)
    n, c, g = calc.n, calc.curl, calc.grad_phi
    s, m = calc.div, calc.n_dot_grad_phi
    hn = sample.hess_n
    hphi = sample.hess_phi

    # ∂_d 作用在 s, m 上, 最后一维是 d
    grad_s = hn[..., 0, 0, :] + hn[..., 1, 1, :]
    grad_m = np.einsum('...id,...i->...d', sample.grad_n[..., :2, :], g[..., :2]) \
        + np.einsum('...i,...id->...d', n[..., :2], hphi)
    n_plane = n[..., :2]
    div_n_times_scalar = lambda grad_scalar, scalar: (n_plane * grad_scalar).sum(axis=-1) + scalar * s
    # curl c = (∂y c3, -∂x c3, ∂x c2 - ∂y c1), c = (n3y, -n3x, n2x - n1y)
    grad_c3 = hn[..., 1, 0, :] - hn[..., 0, 1, :]
    curl_c = np.stack([
        grad_c3[..., 1],
        -grad_c3[..., 0],
        -hn[..., 2, 0, 0] - hn[..., 2, 1, 1],
    ], axis=-1)
    div_n_cross_c = (c * c).sum(axis=-1) - (n * curl_c).sum(axis=-1)

    return (-params.eps0 * params.eps_perp * (hphi[..., 0, 0] + hphi[..., 1, 1])
            - params.eps0 * params.eps_a * div_n_times_scalar(grad_m, m)
            + params.es * div_n_times_scalar(grad_s, s)
            + params.eb * div_n_cross_c)


# 局部变量到 n, curl n, ∇φ, div n 的线性映射
_N = np.zeros((3, LOCAL_SIZE))
_N[0, 0] = _N[1, 3] = _N[2, 6] = 1
_C = np.zeros((3, LOCAL_SIZE))
_C[0, 8], _C[1, 7], _C[2, 4], _C[2, 2] = 1, -1, 1, -1
_G = np.zeros((3, LOCAL_SIZE))
_G[0, 10] = _G[1, 11] = 1
_S = np.zeros(LOCAL_SIZE)
_S[1] = _S[5] = 1
_NC = _N.T @ _C + _C.T @ _N
_NG = _N.T @ _G + _G.T @ _N
_NN = _N.T @ _N


def local_variables(sample: FieldSample) -> np.ndarray:
    """FieldSample -> (..., 12)"""
    stacked = np.concatenate([sample.values[..., None], sample.gradients], axis=-1)
    return stacked.reshape(*stacked.shape[:-2], LOCAL_SIZE)


def local_variable_gradients(sample: FieldSample) -> np.ndarray:
    """(..., 12, 2), 局部变量的空间导数, 需要 sample.hessians"""
    stacked = np.concatenate([sample.gradients[..., None, :], sample.hessians], axis=-2)
    return stacked.reshape(*stacked.shape[:-3], LOCAL_SIZE, 2)


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


def energy_terms(u: np.ndarray, params: MaterialParams) -> dict:
    n, c, g, s = u @ _N.T, u @ _C.T, u @ _G.T, u @ _S
    t = (n * c).sum(axis=-1)
    m = (n * g).sum(axis=-1)
    r = (n * n).sum(axis=-1) - 1
    return dict(
        splay=0.5 * params.K1 * s**2,
        curl=0.5 * params.K3 * ((c * c).sum(axis=-1) - (1 - params.kappa) * t**2),
        dielectric=-0.5 * params.eps0 * params.eps_perp * (g * g).sum(axis=-1),
        anisotropic=-0.5 * params.eps0 * params.eps_a * m**2,
        flexo_splay=params.es * s * m,
        flexo_bend=params.eb * (n * np.cross(c, g)).sum(axis=-1),
        penalty=0.5 * params.zeta * r**2,
    )


def energy_density_derivatives(u: np.ndarray, params: MaterialParams,
                               order: int = 2) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """能量密度 W(u) 及其梯度 (..., 12) 和 Hessian (..., 12, 12)

    >>> params = MaterialParams(zeta=10.0)
    >>> u = np.random.default_rng(1).standard_normal(12)
    >>> w, grad, hess = energy_density_derivatives(u, params)
    >>> eye = np.eye(12) * 1e-6
    >>> fd_grad = np.array([(energy_density_derivatives(u + e, params, 0)[0] - energy_density_derivatives(u - e, params, 0)[0]) / 2e-6 for e in eye])
    >>> bool(np.abs(fd_grad - grad).max() < 1e-6 * np.abs(grad).max())
    True
    >>> fd_hess = np.array([(energy_density_derivatives(u + e, params, 1)[1] - energy_density_derivatives(u - e, params, 1)[1]) / 2e-6 for e in eye])
    >>> bool(np.abs(fd_hess - hess).max() < 1e-6 * np.abs(hess).max()), bool(np.array_equal(hess, hess.T))
    (True, True)
    """
    w = sum(energy_terms(u, params).values())
    if order == 0:
        return w, None, None

    n, c, g, s = u @ _N.T, u @ _C.T, u @ _G.T, u @ _S
    t = (n * c).sum(axis=-1)
    m = (n * g).sum(axis=-1)
    r = (n * n).sum(axis=-1) - 1
    beta = params.K3 * (1 - params.kappa)
    a_perp = params.eps0 * params.eps_perp
    a_aniso = params.eps0 * params.eps_a
    dt = c @ _N + n @ _C
    dm = g @ _N + n @ _G
    dn = n @ _N
    s_vec = np.broadcast_to(_S, u.shape)

    grad = (params.K1 * s[..., None] * _S
            + params.K3 * (c @ _C) - beta * t[..., None] * dt
            - a_perp * (g @ _G)
            - a_aniso * m[..., None] * dm
            + params.es * (m[..., None] * _S + s[..., None] * dm)
            + params.eb * (np.cross(c, g) @ _N + np.cross(g, n) @ _C + np.cross(n, c) @ _G)
            + 2 * params.zeta * r[..., None] * dn)
    if order == 1:
        return w, grad, None

    t_, m_, r_, s_ = (v[..., None, None] for v in (t, m, r, s))
    cross_block = (np.einsum('ik,...ij,jl->...kl', _N, -_skew(g), _C)
                   + np.einsum('ik,...ij,jl->...kl', _N, _skew(c), _G)
                   + np.einsum('ik,...ij,jl->...kl', _C, -_skew(n), _G))
    hess = (params.K1 * np.outer(_S, _S)
            + params.K3 * (_C.T @ _C) - beta * (_outer(dt, dt) + t_ * _NC)
            - a_perp * (_G.T @ _G)
            - a_aniso * (_outer(dm, dm) + m_ * _NG)
            + params.es * (_outer(s_vec, dm) + _outer(dm, s_vec) + s_ * _NG)
            + params.eb * (cross_block + np.swapaxes(cross_block, -1, -2))
            + params.zeta * (4 * _outer(dn, dn) + 2 * r_ * _NN))
    return w, grad, hess


def fluxes(u: np.ndarray, params: MaterialParams) -> Tuple[np.ndarray, np.ndarray]:
    """∂W/∂(∇n) (..., 3, 2) 和 ∂W/∂(∇φ) (..., 2). 后者就是 D 的面内分量"""
    _, grad, _ = energy_density_derivatives(u, params, order=1)
    grad = grad.reshape(*grad.shape[:-1], FIELD_COUNT, 3)
    return grad[..., :3, 1:], grad[..., 3, 1:]


def strong_residuals(sample: FieldSample, params: MaterialParams) -> Tuple[np.ndarray, np.ndarray]:
    """单元内部的强形式残差 p (..., 3) 和 q (...): ∂W/∂u - div(∂W/∂∇u)

    >>> rng = np.random.default_rng(5)
    >>> sample = FieldSample.from_values(rng.standard_normal(4), rng.standard_normal((4, 2)), rng.standard_normal((4, 2, 2)))
    >>> sample.hessians[...] = (sample.hessians + np.swapaxes(sample.hessians, -1, -2)) / 2
    >>> params = MaterialParams()
    >>> _, q = strong_residuals(sample, params)
    >>> bool(abs(q + electric_displacement_divergence(sample, params)) < 1e-10 * max(1.0, abs(q)))
    True
    """
    u = local_variables(sample)
    du = local_variable_gradients(sample)
    _, grad, hess = energy_density_derivatives(u, params, order=2)
    # div(∂W/∂(∂_d u_k)) = Σ_d Σ_l H[k_d, l] ∂_d u_l
    divergence = np.stack([
        np.einsum('...kl,...l->...k', hess[..., 1 + d::3, :], du[..., d]) for d in range(2)
    ], axis=-1).sum(axis=-1)
    residual = grad[..., 0::3] - divergence
    return residual[..., :3], residual[..., 3]


@attr.s(frozen=True)
class EnergyBreakdown:
    splay: float = attr.ib()
    curl: float = attr.ib()
    dielectric: float = attr.ib()
    anisotropic: float = attr.ib()
    flexo_splay: float = attr.ib()
    flexo_bend: float = attr.ib()
    penalty: float = attr.ib()

    @property
    def elastic(self) -> float:
        return self.splay + self.curl

    @property
    def flexoelectric(self) -> float:
        return self.flexo_splay + self.flexo_bend

    @property
    def free_energy(self) -> float:
        """G, 不含罚项"""
        return self.elastic + self.dielectric + self.anisotropic + self.flexoelectric

    @property
    def total(self) -> float:
        """H = G + 罚项"""
        return self.free_energy + self.penalty


def free_energy(state: State, params: MaterialParams) -> EnergyBreakdown:
    """
    >>> from .fem import build_dof_system, interpolate
    >>> from .mesh import QuadMesh
    >>> vertical = lambda x, y: np.stack([0*x, 0*x, 1 + 0*x], axis=-1)
    >>> mesh = QuadMesh.uniform(root_cells=2)
    >>> zero = lambda x, y: 0*x
    >>> free_energy(interpolate(build_dof_system(mesh, vertical, zero), vertical, zero), MaterialParams()).total
    0.0
    >>> ramp = lambda x, y: y
    >>> energy = free_energy(interpolate(build_dof_system(mesh, vertical, ramp), vertical, ramp), MaterialParams())
    >>> abs(energy.free_energy + 0.5 * 1.42809 * 7) < 1e-10, energy.penalty
    (True, 0.0)
    >>> tall = lambda x, y: np.stack([0*x, 0*x, np.sqrt(2) + 0*x], axis=-1)
    >>> stretched = interpolate(build_dof_system(mesh, tall, zero), tall, zero)
    >>> abs(free_energy(stretched, MaterialParams()).total - 5e4) < 1e-6
    True
    >>> half = free_energy(stretched, MaterialParams(zeta=5e4)).penalty
    >>> abs(2 * half - free_energy(stretched, MaterialParams()).penalty) < 1e-9
    True

    x↔y 对调, 同时 n1↔n2 对调, 能量不变

    >>> def twisted(x, y):
    ...     x, y = np.asarray(x), np.asarray(y)
    ...     return np.stack([0.3 * np.sin(x + 2 * y), x * y, np.cos(x - 0.5 * y)], axis=-1)
    >>> mirrored = lambda x, y: twisted(y, x)[..., [1, 0, 2]]
    >>> bumpy = lambda x, y: np.asarray(x) + np.sin(3 * np.asarray(y))**2
    >>> swapped = lambda x, y: bumpy(y, x)
    >>> grid = QuadMesh.uniform(root_cells=4)
    >>> a = free_energy(interpolate(build_dof_system(grid, twisted, bumpy), twisted, bumpy), MaterialParams()).total
    >>> b = free_energy(interpolate(build_dof_system(grid, mirrored, swapped), mirrored, swapped), MaterialParams()).total
    >>> bool(abs(a - b) < 1e-12 * abs(a))
    True
    """
    samples, weights = quadrature_samples(state, with_hessians=False)
    terms = energy_terms(local_variables(samples), params)
    return EnergyBreakdown(**{name: float((weights * value).sum()) for name, value in terms.items()})


def _shape_tables(dofs) -> np.ndarray:
    """(3, Q, 9): 值, ∂ξ, ∂η"""
    points = dofs.quadrature.points
    grads = dofs.reference.gradients(points)
    return np.stack([dofs.reference.values(points), grads[..., 0], grads[..., 1]])


def _element_contributions(state: State, params: MaterialParams, with_hessian: bool):
    dofs = state.dofs
    mesh = dofs.mesh
    tables = _shape_tables(dofs)
    quad_weights = dofs.quadrature.weights
    n_cells = mesh.n_cells
    vectors = np.empty((n_cells, FIELD_COUNT, 9))
    matrices = np.empty((n_cells, FIELD_COUNT, 9, FIELD_COUNT, 9)) if with_hessian else None

    chunk = settings.assembly_chunk_cells
    for begin in range(0, n_cells, chunk):
        cells = np.arange(begin, min(begin + chunk, n_cells))
        h = mesh.sizes[cells]
        samples = evaluate_batch(state, cells, dofs.quadrature.points, with_hessians=False)
        _, grad, hess = energy_density_derivatives(local_variables(samples), params, order=2 if with_hessian else 1)
        # 参考单元导数到物理导数的缩放, 以及积分权重
        scale = np.stack([np.ones_like(h), 1 / h, 1 / h], axis=-1)
        weights = quad_weights[None, :] * h[:, None]**2
        m, q = len(cells), len(quad_weights)

        g = grad.reshape(m, q, FIELD_COUNT, 3) * scale[:, None, None, :] * weights[:, :, None, None]
        vectors[cells] = np.einsum('mqfd,dqk->mfk', g, tables)
        if with_hessian:
            hs = hess.reshape(m, q, FIELD_COUNT, 3, FIELD_COUNT, 3)
            hs = hs * (scale[:, None, None, :, None, None] * scale[:, None, None, None, None, :]
                       * weights[:, :, None, None, None, None])
            partial = np.einsum('mqfdge,dqk->mqfkge', hs, tables)
            local = np.einsum('mqfkge,eql->mfkgl', partial, tables)
            matrices[cells] = 0.5 * (local + local.transpose(0, 3, 4, 1, 2))
    return vectors, matrices


def assemble_residual(state: State, params: MaterialParams) -> np.ndarray:
    """自由 DOF 上的残差向量, 即 H 对自由系数的梯度

    >>> from .fem import build_dof_system, interpolate
    >>> from .mesh import QuadMesh
    >>> vertical = lambda x, y: np.stack([0*x, 0*x, 1 + 0*x], axis=-1)
    >>> zero = lambda x, y: 0*x
    >>> mesh = QuadMesh.uniform(root_cells=2)
    >>> state = interpolate(build_dof_system(mesh, vertical, zero), vertical, zero)
    >>> float(np.linalg.norm(assemble_residual(state, MaterialParams())))
    0.0
    >>> product = lambda x, y: x * y
    >>> state = interpolate(build_dof_system(mesh, vertical, product), vertical, product)
    >>> bool(np.abs(assemble_residual(state, MaterialParams().decoupled())).max() < 1e-11)
    True
    """
    vectors, _ = _element_contributions(state, params, with_hessian=False)
    return constrain_and_distribute(vectors, state.dofs)


def assemble_hessian(state: State, params: MaterialParams):
    return assemble_system(state, params)[1]


def assemble_system(state: State, params: MaterialParams):
    """残差和 Hessian 一起组装, 牛顿迭代每步调用一次

    >>> from .fem import State, build_dof_system
    >>> from .mesh import QuadMesh
    >>> from .mesh import adaptive_refine
    >>> vertical = lambda x, y: np.stack([0*x, 0*x, 1 + 0*x], axis=-1)
    >>> mesh = adaptive_refine(QuadMesh.uniform(root_cells=2), {(0, 0, 0)})
    >>> dofs = build_dof_system(mesh, vertical, lambda x, y: 0.3 * x)
    >>> rng = np.random.default_rng(11)
    >>> fields = dofs.free_fields
    >>> state = State(dofs, np.where(fields == 2, 1.0, 0.0) + 0.1 * rng.standard_normal(dofs.n_free))
    >>> params = MaterialParams(zeta=100.0)
    >>> residual, hessian = assemble_system(state, params)
    >>> direction = rng.standard_normal(dofs.n_free)
    >>> energy = lambda x: free_energy(state.with_free(x), params).total
    >>> eps = 1e-5
    >>> fd = (energy(state.free + eps * direction) - energy(state.free - eps * direction)) / (2 * eps)
    >>> bool(abs(fd - residual @ direction) < 1e-6 * abs(residual @ direction))
    True
    >>> fd_residual = (assemble_residual(state.with_free(state.free + eps * direction), params)
    ...                - assemble_residual(state.with_free(state.free - eps * direction), params)) / (2 * eps)
    >>> product = hessian @ direction
    >>> bool(np.linalg.norm(fd_residual - product) < 1e-5 * np.linalg.norm(product))
    True
    >>> bool(abs(hessian - hessian.T).max() < 1e-12 * abs(hessian).max())
    True

    平凡状态, 去耦参数: φ 和 n 之间的 Hessian 块为 0

    >>> zero = lambda x, y: 0*x
    >>> trivial = State(build_dof_system(mesh, vertical, zero), np.where(fields == 2, 1.0, 0.0))
    >>> hessian = assemble_hessian(trivial, MaterialParams().decoupled())
    >>> potential = fields == 3
    >>> coupling = [hessian[potential][:, ~potential], hessian[~potential][:, potential]]
    >>> [float(abs(block).max()) < 1e-12 for block in coupling]
    [True, True]
    """
    vectors, matrices = _element_contributions(state, params, with_hessian=True)
    return constrain_and_distribute(vectors, state.dofs), constrain_and_distribute(matrices, state.dofs)

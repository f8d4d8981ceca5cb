"""
阻尼 Newton 迭代和嵌套迭代 (nested iteration).

每一层 α 固定: 从 damping_start 开始, 每加密一层加 damping_increment, 不超过 damping_cap.

自由能对 n 取极小, 对 φ 取极大. n = (0,0,1) 配上离散调和的 φ 总是离散方程的解, 而且 n1 = n2 = 0
在 Newton 迭代下保持不变, 所以初值沿面内指向矢 Hessian 块的负曲率方向倾斜一点. 之后 Newton 方向在 n 上
不是下降方向时, 给指向矢块加平移 μI 重解.
"""

import time
from typing import Callable, List, Optional, Tuple

import attr
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import settings
from .common import FIELD_COUNT, Field, LinearSolverKind, RefinementMode, get_logger
from .estimator import EstimatorResult, estimate
from .exception import ConfigError, FactorizationError, NonConvergence, NothingToMark, ResidualGrowth
from .fem import DofSystem, State, prolong
from .mesh import QuadMesh, adaptive_refine, dorfler_mark, uniform_refine
from .metrics import RunReport, reference_dof_count, summarize_run
from .physics import MaterialParams, assemble_hessian, assemble_system, free_energy
from .problems import BoundaryData

logger = get_logger()

# 面内分量倾斜超过这个值时, 节点上 n3 = sqrt(1 - n1² - n2²) 可能没有定义
MAX_TILT = 0.5


@attr.s(frozen=True)
class SolverConfig:
    """
    >>> config = SolverConfig(mode=RefinementMode.AMR, levels=6)
    >>> [round(config.damping(level), 10) for level in range(6)]
    [0.2, 0.4, 0.6, 0.8, 1.0, 1.0]
    >>> SolverConfig(mode=RefinementMode.UNIFORM).level_count, config.reference_level_count
    (5, 5)
    >>> SolverConfig(damping_start=0.5, damping_cap=0.4)
    Traceback (most recent call last):
    ...
    nematic_amr.exception.ConfigError: damping_start: need 0 < damping_start <= damping_cap <= 1, got 0.5 and 0.4
    >>> SolverConfig(initial_tilt=0.8)
    Traceback (most recent call last):
    ...
    nematic_amr.exception.ConfigError: initial_tilt: must lie in [0, 0.5], got 0.8
    """
    tolerance: float = attr.ib(default=1e-4)
    max_iterations: int = attr.ib(default=200)
    damping_start: float = attr.ib(default=0.2)
    damping_increment: float = attr.ib(default=0.2)
    damping_cap: float = attr.ib(default=1.0)
    mode: RefinementMode = attr.ib(default=RefinementMode.AMR)
    levels: Optional[int] = attr.ib(default=None)
    nu: float = attr.ib(default=0.9)
    linear_solver: LinearSolverKind = attr.ib(default=LinearSolverKind.LU)
    root_cells: int = attr.ib(default=16)
    # 计算 WU 时参照的均匀网格层数, 默认是同一层级结构里最细的均匀网格
    reference_levels: Optional[int] = attr.ib(default=None)
    # 一步之后残差最多允许增长的倍数
    growth_limit: float = attr.ib(default=10.0)
    # 根网格初值上面内分量的最大值, 0 表示不倾斜
    initial_tilt: float = attr.ib(default=0.1)
    # 每步 Newton 最多给指向矢块加几次平移
    max_shifts: int = attr.ib(default=12)

    def __attrs_post_init__(self):
        if not self.tolerance > 0:
            raise ConfigError('tolerance', f'must be positive, got {self.tolerance}')
        if self.max_iterations < 1:
            raise ConfigError('max_iterations', f'must be at least 1, got {self.max_iterations}')
        if not 0 < self.damping_start <= self.damping_cap <= 1:
            raise ConfigError('damping_start', f'need 0 < damping_start <= damping_cap <= 1, '
                                               f'got {self.damping_start} and {self.damping_cap}')
        if self.damping_increment < 0:
            raise ConfigError('damping_increment', f'must not be negative, got {self.damping_increment}')
        if self.levels is not None and self.levels < 1:
            raise ConfigError('levels', f'must be at least 1, got {self.levels}')
        if not 0 < self.nu <= 1:
            raise ConfigError('nu', f'must lie in (0, 1], got {self.nu}')
        if self.root_cells < 1:
            raise ConfigError('root_cells', f'must be at least 1, got {self.root_cells}')
        if self.reference_levels is not None and self.reference_levels < 1:
            raise ConfigError('reference_levels', f'must be at least 1, got {self.reference_levels}')
        if not 0 <= self.initial_tilt <= MAX_TILT:
            raise ConfigError('initial_tilt', f'must lie in [0, {MAX_TILT}], got {self.initial_tilt}')
        if self.max_shifts < 0:
            raise ConfigError('max_shifts', f'must not be negative, got {self.max_shifts}')

    @property
    def level_count(self) -> int:
        if self.levels is not None:
            return self.levels
        return 5 if self.mode is RefinementMode.UNIFORM else 6

    @property
    def reference_level_count(self) -> int:
        if self.reference_levels is not None:
            return self.reference_levels
        if self.mode is RefinementMode.UNIFORM:
            return self.level_count
        return max(1, self.level_count - 1)

    def damping(self, level: int) -> float:
        return min(self.damping_cap, round(self.damping_start + self.damping_increment * level, 12))


@attr.s(frozen=True)
class LevelStats:
    level: int = attr.ib()
    dofs: int = attr.ib()
    iterations: int = attr.ib()
    residual: float = attr.ib()
    damping: float = attr.ib()
    wall_time: float = attr.ib()
    # 组装 + 线性求解的次数, 用于 WU. 加平移重解也算
    linearizations: int = attr.ib()
    initial_residual: float = attr.ib(default=None)
    free_dofs: int = attr.ib(default=0)
    cells: int = attr.ib(default=0)
    marked: int = attr.ib(default=0)
    free_energy: float = attr.ib(default=None)
    shifted_steps: int = attr.ib(default=0)


def solve_linear(matrix: sp.spmatrix, rhs: np.ndarray, kind: LinearSolverKind = LinearSolverKind.LU) -> np.ndarray:
    """
    >>> solve_linear(sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 3.0]])), np.array([3.0, 5.0])).round(12).tolist()
    [0.8, 1.4]
    >>> solve_linear(sp.csr_matrix(np.zeros((2, 2))), np.ones(2))
    Traceback (most recent call last):
    ...
    nematic_amr.exception.FactorizationError: singular system of size 2 (lu)
    """
    if rhs.shape[0] == 0:
        return np.zeros(0)
    try:
        if kind is LinearSolverKind.SPSOLVE:
            res = spla.spsolve(matrix.tocsc(), rhs)
        else:
            res = spla.splu(matrix.tocsc()).solve(rhs)
    except RuntimeError as e:
        raise FactorizationError(f'singular system of size {rhs.shape[0]} ({kind.value})') from e
    if not np.all(np.isfinite(res)):
        raise FactorizationError(f'singular system of size {rhs.shape[0]} ({kind.value})')
    return res


def lowest_mode(matrix: sp.spmatrix) -> Tuple[float, np.ndarray]:
    """对称矩阵最小的特征值和对应的特征向量. Lanczos 的初始向量固定, 结果可重复

    >>> value, vector = lowest_mode(sp.csr_matrix(np.diag([3.0, -2.0, 1.0])))
    >>> value, np.abs(vector).round(12).tolist()
    (-2.0, [0.0, 1.0, 0.0])
    """
    size = matrix.shape[0]
    if size <= settings.dense_eigen_limit:
        values, vectors = sla.eigh(matrix.toarray(), subset_by_index=[0, 0])
    else:
        values, vectors = spla.eigsh(matrix.tocsc(), k=1, which='SA', v0=np.ones(size))
    return float(values[0]), vectors[:, 0]


def _reduced_gradient(hessian: sp.spmatrix, residual: np.ndarray, director: np.ndarray,
                      kind: LinearSolverKind) -> np.ndarray:
    # 消去 φ 之后 n 的梯度: g_n - H_nφ H_φφ⁻¹ g_φ
    potential = ~director
    gradient = residual[director]
    if not potential.any():
        return gradient
    coupling = hessian[director][:, potential]
    if coupling.count_nonzero() == 0:
        return gradient
    return gradient - coupling @ solve_linear(hessian[potential][:, potential], residual[potential], kind)


def _ascends(reduced: np.ndarray, step: np.ndarray) -> bool:
    if not np.linalg.norm(reduced) * np.linalg.norm(step) > 0:
        return False
    return float(reduced @ step) >= 0


def descent_direction(hessian: sp.spmatrix, residual: np.ndarray, director: np.ndarray,
                      kind: LinearSolverKind = LinearSolverKind.LU, max_shifts: int = 12) -> Tuple[np.ndarray, int]:
    """Newton 方向 H δ = -R, 以及加了几次平移. director 标出指向矢的自由 DOF

    消去 φ 后 n 的方向不是下降方向时, 解 (H + μ P_n) δ = -R, μ 从 1e-4 max|diag H_nn| 开始每次乘 10.
    平移只加在指向矢块上, φ 块保持负定.

    >>> director = np.array([True, True, False])
    >>> residual = np.array([0.5, 1.0, 1.0])
    >>> delta, shifts = descent_direction(sp.csr_matrix(np.diag([4.0, -2.0, -2.0])), residual, director)
    >>> shifts, bool(residual[:2] @ delta[:2] < 0), float(delta[2])
    (5, True, 0.5)
    >>> delta, shifts = descent_direction(sp.csr_matrix(np.diag([2.0, 1.0, -1.0])), np.ones(3), director)
    >>> shifts, delta.tolist()
    (0, [-0.5, -1.0, 1.0])
    >>> descent_direction(sp.csr_matrix(np.diag([4.0, -2.0, -2.0])), residual, director, max_shifts=3)
    Traceback (most recent call last):
    ...
    nematic_amr.exception.FactorizationError: no descent direction after 3 shifts
    """
    delta = solve_linear(hessian, -residual, kind)
    reduced = _reduced_gradient(hessian, residual, director, kind)
    if not _ascends(reduced, delta[director]):
        return delta, 0

    shift = 1e-4 * (float(np.abs(hessian.diagonal()[director]).max()) or 1.0)
    identity = sp.diags(director.astype(float))
    for count in range(1, max_shifts + 1):
        try:
            delta = solve_linear((hessian + shift * identity).tocsr(), -residual, kind)
        except FactorizationError:
            shift *= 10
            continue
        if not _ascends(reduced, delta[director]):
            logger.debug(f'director block shifted by {shift:.3e} after {count} tries')
            return delta, count
        shift *= 10
    raise FactorizationError(f'no descent direction after {max_shifts} shifts')


def newton_solve(initial: State, params: MaterialParams, config: SolverConfig, damping: float,
                 level: int = 0) -> Tuple[State, LevelStats]:
    """x <- x + α δ, H(x) δ = -R(x), 直到 ‖R‖ < tolerance

    >>> from .fem import build_dof_system, interpolate
    >>> from .problems import trivial_problem, vertical_director
    >>> problem = trivial_problem()
    >>> dofs = problem.build_dofs(QuadMesh.uniform(root_cells=4))
    >>> state, stats = newton_solve(initial_guess(dofs, problem, MaterialParams()), MaterialParams(), SolverConfig(), 0.2)
    >>> stats.iterations, stats.residual
    (0, 0.0)
    >>> ramp = lambda x, y: 0.5 * np.asarray(x) + np.asarray(y)**2
    >>> dofs = build_dof_system(QuadMesh.uniform(root_cells=2), vertical_director, ramp)
    >>> start = State(dofs, np.where(dofs.free_fields == Field.N3.index, 1.0, 0.0))
    >>> decoupled = MaterialParams().decoupled()
    >>> _, stats = newton_solve(start, decoupled, SolverConfig(), 1.0)
    >>> stats.iterations, stats.linearizations, stats.residual < 1e-10
    (1, 1, True)
    >>> try:
    ...     newton_solve(start, decoupled, SolverConfig(max_iterations=3), 0.5)
    ... except NonConvergence as e:
    ...     e.iterations, abs(e.residual / stats.initial_residual - 0.125) < 1e-8
    (3, True)

    α = 1 的去耦线性问题, 带悬挂节点的网格上一步得到离散调和电势 (xy 在 Q2 空间里, 就是它的插值)

    >>> from .mesh import adaptive_refine
    >>> product = lambda x, y: np.asarray(x) * np.asarray(y)
    >>> dofs = build_dof_system(adaptive_refine(QuadMesh.uniform(root_cells=2), {(0, 0, 0)}), vertical_director, product)
    >>> start = State(dofs, np.where(dofs.free_fields == Field.N3.index, 1.0, 0.0))
    >>> solved, stats = newton_solve(start, decoupled, SolverConfig(), 1.0)
    >>> exact = interpolate(dofs, vertical_director, product)
    >>> dofs.n_hanging > 0, stats.iterations, bool(np.abs(solved.full_values - exact.full_values).max() < 1e-10)
    (True, 1, True)
    """
    start = time.time()
    state = initial
    director = state.dofs.free_fields != Field.PHI.index
    residual, hessian = assemble_system(state, params)
    norm = float(np.linalg.norm(residual))
    initial_norm = norm
    iterations = 0
    solves = 0
    shifted_steps = 0
    logger.info(f'level={level} iter=0 residual={norm:.6e} alpha={damping}')
    while norm >= config.tolerance:
        if iterations >= config.max_iterations:
            raise NonConvergence(norm, iterations)
        delta, shifts = descent_direction(hessian, residual, director, config.linear_solver, config.max_shifts)
        state = state.with_free(state.free + damping * delta)
        iterations += 1
        solves += 1 + shifts
        shifted_steps += shifts > 0
        residual, hessian = assemble_system(state, params)
        new_norm = float(np.linalg.norm(residual))
        # 平移过的步只保证 n 方向下降, 残差可以先变大
        if not shifts and new_norm > config.growth_limit * norm:
            raise ResidualGrowth(norm, new_norm, iterations)
        norm = new_norm
        logger.info(f'level={level} iter={iterations} residual={norm:.6e} alpha={damping} shifts={shifts}')

    dofs = state.dofs
    stats = LevelStats(
        level=level,
        dofs=dofs.n_dofs,
        iterations=iterations,
        residual=norm,
        damping=damping,
        wall_time=time.time() - start,
        linearizations=solves,
        initial_residual=initial_norm,
        free_dofs=dofs.n_free,
        cells=dofs.mesh.n_cells,
        shifted_steps=shifted_steps,
    )
    return state, stats


def tilt_director(state: State, params: MaterialParams, tilt: float) -> State:
    """沿面内指向矢 Hessian 块最小特征值的特征向量倾斜, 节点上面内分量最大为 tilt, n3 补成单位长度.
    块没有负特征值时原样返回
    """
    dofs = state.dofs
    inplane = np.flatnonzero(dofs.free_fields <= Field.N2.index)
    if tilt == 0 or not len(inplane):
        return state
    block = assemble_hessian(state, params)[inplane][:, inplane]
    value, mode = lowest_mode(block)
    scale = float(np.abs(block.diagonal()).max()) or 1.0
    if value >= -1e-10 * scale:
        logger.info(f'in-plane director block has no negative curvature (lowest eigenvalue {value:.3e}), no tilt')
        return state

    mode = mode / np.abs(mode).max()
    # 特征向量的符号不确定, 固定成绝对值最大的分量为正
    if mode[np.argmax(np.abs(mode))] < 0:
        mode = -mode
    coefficients = state.free.reshape(FIELD_COUNT, -1).copy()
    coefficients[:2] = tilt * mode.reshape(2, -1)
    coefficients[Field.N3.index] = np.sqrt(1 - coefficients[0]**2 - coefficients[1]**2)
    logger.info(f'director tilted by {tilt} along the mode with eigenvalue {value:.6e}')
    return state.with_free(coefficients.ravel())


def initial_guess(dofs: DofSystem, problem: BoundaryData, params: MaterialParams, tilt: float = 0.0) -> State:
    """内部 n = (0,0,1); φ 解一次去耦的线性问题 (只剩 ε0ε⊥ Laplace). tilt > 0 时再用 tilt_director 倾斜

    >>> from .physics import assemble_residual
    >>> from .problems import boundary_pulse_problem
    >>> problem = boundary_pulse_problem()
    >>> dofs = problem.build_dofs(QuadMesh.uniform(root_cells=4))
    >>> state = initial_guess(dofs, problem, MaterialParams())
    >>> director = state.free[dofs.free_fields != Field.PHI.index].reshape(3, -1)
    >>> bool(np.all(director[:2] == 0) and np.all(director[2] == 1))
    True
    >>> residual = assemble_residual(state, MaterialParams().decoupled())
    >>> bool(np.abs(residual[dofs.free_fields == Field.PHI.index]).max() < 1e-10)
    True

    不倾斜时它就是耦合问题的解, 面内块有负曲率

    >>> dofs = problem.build_dofs(QuadMesh.uniform(root_cells=16))
    >>> saddle = initial_guess(dofs, problem, MaterialParams())
    >>> float(np.linalg.norm(assemble_residual(saddle, MaterialParams()))) < 1e-10
    True
    >>> tilted = initial_guess(dofs, problem, MaterialParams(), tilt=0.1)
    >>> n = tilted.free[dofs.free_fields != Field.PHI.index].reshape(3, -1)
    >>> round(float(np.abs(n[:2]).max()), 12), bool(np.abs((n**2).sum(axis=0) - 1).max() < 1e-12)
    (0.1, True)
    >>> bool(np.array_equal(tilted.free[dofs.free_fields == Field.PHI.index], saddle.free[dofs.free_fields == Field.PHI.index]))
    True
    """
    fields = dofs.free_fields
    free = np.where(fields == Field.N3.index, 1.0, 0.0)
    state = State(dofs=dofs, free=free)
    potential = fields == Field.PHI.index
    if not potential.any():
        return state
    residual, hessian = assemble_system(state, params.decoupled())
    index = np.flatnonzero(potential)
    block = hessian[index][:, index]
    free = free.copy()
    free[index] += solve_linear(block, -residual[index])
    logger.debug(f'initial guess for {problem.name}: {dofs.describe()}')
    return tilt_director(state.with_free(free), params, tilt)


def nested_iteration(config: SolverConfig, params: MaterialParams, problem: BoundaryData,
                     on_level: Callable[[LevelStats, State, EstimatorResult], None] = None) -> Tuple[State, RunReport]:
    """on_level 在每层求解和估计之后调用, 用来写每层的输出文件. 只有根网格的初值会倾斜

    >>> from .problems import trivial_problem
    >>> state, report = nested_iteration(SolverConfig(levels=1, root_cells=4), MaterialParams(), trivial_problem())
    >>> len(report.levels), report.levels[0].iterations, report.levels[0].linearizations
    (1, 0, 1)
    >>> config = SolverConfig(mode=RefinementMode.UNIFORM, levels=3, root_cells=2)
    >>> _, report = nested_iteration(config, MaterialParams(), trivial_problem())
    >>> [stats.dofs for stats in report.levels], [stats.damping for stats in report.levels]
    ([100, 324, 1156], [0.2, 0.4, 0.6])

    同样的配置跑两次, DOF, 迭代次数, 加密结果完全一样

    >>> from .problems import boundary_pulse_problem
    >>> config = SolverConfig(levels=2, root_cells=4)
    >>> (first_state, first), (second_state, second) = [
    ...     nested_iteration(config, MaterialParams(), boundary_pulse_problem()) for _ in range(2)]
    >>> [(s.dofs, s.iterations, s.marked) for s in first.levels] == [(s.dofs, s.iterations, s.marked) for s in second.levels]
    True
    >>> first_state.mesh == second_state.mesh
    True
    >>> max(abs(a.residual - b.residual) for a, b in zip(first.levels, second.levels)) <= 1e-13
    True
    """
    start = time.time()
    params = problem.material(params)
    mesh = QuadMesh.uniform(root_cells=config.root_cells)
    state = initial_guess(problem.build_dofs(mesh), problem, params, tilt=config.initial_tilt)
    levels: List[LevelStats] = []
    estimates: List[EstimatorResult] = []
    logger.info(f'nested iteration: problem={problem.name} mode={config.mode.value} levels={config.level_count}')

    for level in range(config.level_count):
        marked = 0
        if level > 0:
            if config.mode is RefinementMode.AMR:
                try:
                    marks = dorfler_mark(estimates[-1].marking_estimates(), config.nu)
                except NothingToMark:
                    logger.warning(f'level={level}: estimator vanished, stopping refinement')
                    break
                marked = len(marks)
                mesh = adaptive_refine(state.mesh, marks)
            else:
                mesh = uniform_refine(state.mesh)
                marked = state.mesh.n_cells
            state = prolong(state, problem.build_dofs(mesh))

        damping = config.damping(level)
        try:
            state, stats = newton_solve(state, params, config, damping, level=level)
        except (NonConvergence, ResidualGrowth) as e:
            raise e.at_level(level) from e
        # 第 0 层初值里的那次线性求解也算一次线性化
        linearizations = stats.linearizations + (1 if level == 0 else 0)
        stats = attr.evolve(stats, linearizations=linearizations, marked=marked,
                            free_energy=free_energy(state, params).free_energy)
        levels.append(stats)
        estimates.append(estimate(state, params))
        logger.info(f'level={level} done: cells={stats.cells} dofs={stats.dofs} iterations={stats.iterations} '
                    f'shifted={stats.shifted_steps} estimate={estimates[-1].global_estimate:.6e}')
        if on_level is not None:
            on_level(stats, state, estimates[-1])

    reference = reference_dof_count(config.root_cells, config.reference_level_count)
    report = summarize_run(
        mode=config.mode,
        state=state,
        params=params,
        levels=levels,
        estimates=estimates,
        reference_dofs=reference,
        wall_time=time.time() - start,
    )
    return state, report

"""
离线验收: 在桌面规模上跑主引擎, 检查数值性质和 AMR 与均匀加密的对比趋势.

大部分检查要跑几分钟, doctest_runner 只在 RUN_SLOW_CHECKS=1 时运行这个模块.

    $ python -m nematic_amr.acceptance.checks
"""

import itertools
import math
import time
from typing import Dict, List, Sequence

import attr
import numpy as np
import pandas as pd

from ..common import Field, RefinementMode, compare_with_tolerance, get_logger
from ..estimator import EstimatorResult, effectivity
from ..fem import State, potential_h1_error, prolong
from ..mesh import QuadMesh, adaptive_refine, dorfler_mark
from ..metrics import gauss_conformance
from ..physics import MaterialParams, assemble_hessian, assemble_residual, free_energy
from ..problems import BoundaryData, boundary_pulse_problem, manufactured_potential_problem, trivial_problem
from ..solver import LevelStats, SolverConfig, initial_guess, nested_iteration

logger = get_logger()


@attr.s(frozen=True)
class CheckResult:
    name: str = attr.ib()
    passed: bool = attr.ib()
    measured: Dict[str, object] = attr.ib(factory=dict)
    wall_time: float = attr.ib(default=0.0)

    @property
    def stats(self) -> str:
        res = [f"{self.name}：{'通过' if self.passed else '失败'}"]
        res.extend(f"  {k}：{v}" for k, v in self.measured.items())
        return '\n'.join(res)


def _finish(name: str, passed: bool, start: float, **measured) -> CheckResult:
    res = CheckResult(name=name, passed=bool(passed), measured=measured, wall_time=time.time() - start)
    log = logger.info if res.passed else logger.warning
    log(f'{name}: passed={res.passed} {measured}')
    return res


def _collect_levels(config: SolverConfig, params: MaterialParams, problem: BoundaryData):
    """nested iteration, 同时收集每层的状态和估计"""
    states: List[State] = []
    results: List[EstimatorResult] = []

    def on_level(stats: LevelStats, state: State, result: EstimatorResult):
        states.append(state)
        results.append(result)

    state, report = nested_iteration(config, params, problem, on_level=on_level)
    return state, report, states, results


def check_trivial(root_cells: int = 16, levels: int = 2) -> CheckResult:
    """n = (0,0,1), φ = 0 是精确的临界点, 每层最多一步 Newton, 所有指标为 0

    >>> check_trivial().passed
    True
    """
    start = time.time()
    config = SolverConfig(mode=RefinementMode.UNIFORM, levels=levels, root_cells=root_cells)
    _, report, _, results = _collect_levels(config, MaterialParams(), trivial_problem())
    max_iterations = max(stats.iterations for stats in report.levels)
    estimate = max(result.global_estimate for result in results)
    metrics = max(abs(report.max_unit_length_deviation), abs(report.gauss_conformance), abs(report.free_energy))
    passed = max_iterations <= 1 and estimate < 1e-10 and metrics < 1e-10
    return _finish('trivial', passed, start, max_iterations=max_iterations, estimate=estimate, metrics=metrics)


def _richardson(fn, eps: float) -> np.ndarray:
    # 能量是系数的四次多项式, 外推后的中心差分只剩舍入误差
    def central(h):
        return (fn(h) - fn(-h)) / (2 * h)
    return (4 * central(eps / 2) - central(eps)) / 3


def check_derivatives(root_cells: int = 4, directions: int = 20, seed: int = 0, eps: float = 1e-5) -> CheckResult:
    """
    >>> check_derivatives(directions=3).passed
    True
    """
    start = time.time()
    rng = np.random.default_rng(seed)
    params = MaterialParams()
    problem = boundary_pulse_problem()
    # 带悬挂节点的网格
    mesh = adaptive_refine(QuadMesh.uniform(root_cells=root_cells), [(0, 1, 1)])
    dofs = problem.build_dofs(mesh)
    base = np.where(dofs.free_fields == Field.N3.index, 1.0, 0.0) + 0.05 * rng.standard_normal(dofs.n_free)
    state = State(dofs=dofs, free=base)
    residual = assemble_residual(state, params)
    hessian = assemble_hessian(state, params)

    gradient_errors = []
    hessian_errors = []
    for _ in range(directions):
        d = rng.standard_normal(dofs.n_free)
        d /= np.linalg.norm(d)

        def energy(h):
            return free_energy(state.with_free(base + h * d), params).total

        def shifted_residual(h):
            return assemble_residual(state.with_free(base + h * d), params)

        exact = float(residual @ d)
        gradient_errors.append(abs(_richardson(energy, eps) - exact) / max(abs(exact), 1e-12))
        product = hessian @ d
        diff = _richardson(shifted_residual, eps) - product
        hessian_errors.append(float(np.linalg.norm(diff) / max(np.linalg.norm(product), 1e-12)))

    symmetry = float(abs(hessian - hessian.T).max())
    passed = max(gradient_errors) < 1e-6 and max(hessian_errors) < 1e-5 and symmetry < 1e-12 * max(1.0, abs(hessian).max())
    return _finish('derivatives', passed, start, gradient_error=max(gradient_errors),
                   hessian_error=max(hessian_errors), symmetry=symmetry)


def _manufactured_run(root_cells: int, levels: int):
    problem = manufactured_potential_problem()
    # 线性问题: α = 1, 一步 Newton 就是精确解
    config = SolverConfig(mode=RefinementMode.UNIFORM, levels=levels, root_cells=root_cells, tolerance=1e-9,
                          damping_start=1.0, damping_increment=0.0)
    _, report, states, results = _collect_levels(config, MaterialParams(), problem)
    errors = [potential_h1_error(state, problem.exact_potential, problem.exact_potential_gradient) for state in states]
    return report, errors, results


def check_manufactured_convergence(root_cells: int = 16, levels: int = 3) -> CheckResult:
    """16 -> 32 -> 64 均匀加密, H¹ 误差的收敛阶在 [1.8, 2.2]

    >>> check_manufactured_convergence().passed
    True
    """
    start = time.time()
    report, errors, _ = _manufactured_run(root_cells, levels)
    rates = [math.log2(coarse / fine) for coarse, fine in zip(errors, errors[1:])]
    # 第 0 层的初值已经是离散解
    iterations = [stats.iterations for stats in report.levels]
    passed = all(1.8 <= rate <= 2.2 for rate in rates) and all(i == 1 for i in iterations[1:]) and iterations[0] <= 1
    return _finish('manufactured_convergence', passed, start, errors=errors, rates=rates, iterations=iterations)


def check_effectivity(root_cells: int = 16, levels: int = 3) -> CheckResult:
    """全局估计 / H¹ 误差 落在 [0.05, 200], 各层之间变化不超过 3 倍

    >>> check_effectivity().passed
    True
    """
    start = time.time()
    _, errors, results = _manufactured_run(root_cells, levels)
    ratios = [effectivity(result, error) for result, error in zip(results, errors)]
    passed = all(0.05 <= r <= 200 for r in ratios) and max(ratios) < 3 * min(ratios)
    return _finish('effectivity', passed, start, ratios=ratios)


def _minimal_mark_count(thetas: Sequence[float], nu: float) -> int:
    squares = [t**2 for t in thetas]
    threshold = nu * sum(squares) * (1 - 1e-12)
    for count in range(1, len(squares) + 1):
        for subset in itertools.combinations(squares, count):
            if sum(subset) >= threshold:
                return count
    return len(squares)


def check_dorfler_oracle(instances: int = 1000, max_cells: int = 12, seed: int = 0) -> CheckResult:
    """贪心标记和穷举最小集合的基数比较

    >>> check_dorfler_oracle(instances=50, max_cells=6).passed
    True
    """
    start = time.time()
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(instances):
        n = int(rng.integers(1, max_cells + 1))
        thetas = rng.random(n).tolist()
        # 偶尔放进几个 0
        if n > 2 and rng.random() < 0.2:
            thetas[int(rng.integers(n))] = 0.0
        if not any(thetas):
            thetas[0] = 1.0
        nu = float(rng.uniform(0.05, 1.0))
        marks = dorfler_mark(list(enumerate(thetas)), nu)
        if len(marks) != _minimal_mark_count(thetas, nu):
            mismatches += 1
    return _finish('dorfler_oracle', mismatches == 0, start, instances=instances, mismatches=mismatches)


def check_amr_vs_uniform(root_cells: int = 16, uniform_levels: int = 2, amr_levels: int = 3,
                         nu: float = 0.9) -> CheckResult:
    """桌面规模的 AMR 与均匀加密对比: DOF, Gauss 定律, 自由能, WU

    >>> check_amr_vs_uniform().passed
    True
    """
    start = time.time()
    params = MaterialParams()
    problem = boundary_pulse_problem()
    _, uniform = nested_iteration(
        SolverConfig(mode=RefinementMode.UNIFORM, levels=uniform_levels, root_cells=root_cells), params, problem)
    _, amr = nested_iteration(
        SolverConfig(mode=RefinementMode.AMR, levels=amr_levels, root_cells=root_cells, nu=nu), params, problem)
    table = pd.DataFrame([uniform.summary_row(), amr.summary_row()])
    logger.info('\n' + table.to_string(index=False))
    passed = (
        amr.dofs <= 0.7 * uniform.dofs
        and amr.gauss_conformance <= uniform.gauss_conformance
        and compare_with_tolerance(amr.free_energy, uniform.free_energy, '==', tolerance_percent=2)
        and amr.work_units < uniform.work_units
    )
    return _finish('amr_vs_uniform', passed, start,
                   dofs=(uniform.dofs, amr.dofs),
                   gauss_law=(uniform.gauss_conformance, amr.gauss_conformance),
                   free_energy=(uniform.free_energy, amr.free_energy),
                   work_units=(uniform.work_units, amr.work_units))


def check_penalty_trend(root_cells: int = 16, levels: int = 2, zetas: Sequence[float] = (1e3, 1e5)) -> CheckResult:
    """罚参数越大, 单位长度偏差越小 (留 5% 余量)

    >>> check_penalty_trend().passed
    True
    """
    start = time.time()
    deviations = []
    for zeta in zetas:
        config = SolverConfig(mode=RefinementMode.UNIFORM, levels=levels, root_cells=root_cells)
        _, report = nested_iteration(config, MaterialParams(zeta=zeta), boundary_pulse_problem())
        deviations.append(report.max_unit_length_deviation)
    passed = all(
        compare_with_tolerance(stiff, soft, '<=', tolerance_percent=5)
        for soft, stiff in zip(deviations, deviations[1:])
    )
    return _finish('penalty_trend', passed, start, zetas=list(zetas), deviations=deviations)


def in_transition_band(x: float, y: float) -> bool:
    """
    >>> in_transition_band(0.5, 0.7), in_transition_band(0.3, 0.2), in_transition_band(0.5, 0.2)
    (True, True, False)
    """
    return y > 0.6 or abs(x - 1/3) < 0.15 or abs(x - 2/3) < 0.15


def check_refinement_localization(root_cells: int = 16, levels: int = 3, nu: float = 0.9) -> CheckResult:
    """两次 AMR 加密后, 至少 60% 的加密单元落在电势过渡区

    >>> check_refinement_localization().passed
    True
    """
    start = time.time()
    config = SolverConfig(mode=RefinementMode.AMR, levels=levels, root_cells=root_cells, nu=nu)
    state, _ = nested_iteration(config, MaterialParams(), boundary_pulse_problem())
    mesh = state.mesh
    refined = [cell for cell in mesh.cell_list if cell[0] > 0]
    inside = 0
    for cell in refined:
        x, y = mesh.cell_origin(cell)
        half = mesh.cell_size(cell) / 2
        inside += in_transition_band(x + half, y + half)
    fraction = inside / len(refined) if refined else 0.0
    return _finish('refinement_localization', fraction >= 0.6, start, refined=len(refined), fraction=fraction)


def check_gauss_identity(root_cells: int = 4, levels: int = 3) -> CheckResult:
    """gauss_conformance 和估计量里的 Σ_T ∫ q² 一致

    >>> check_gauss_identity(levels=2).passed
    True
    """
    start = time.time()
    config = SolverConfig(mode=RefinementMode.AMR, levels=levels, root_cells=root_cells)
    _, _, states, results = _collect_levels(config, MaterialParams(), boundary_pulse_problem())
    differences = []
    for state, result in zip(states, results):
        from_estimator = float((result.volume_q / state.mesh.sizes**2).sum())
        direct = gauss_conformance(state, MaterialParams())
        differences.append(abs(direct - from_estimator) / max(abs(direct), 1e-300))
    return _finish('gauss_identity', max(differences) <= 1e-11, start, differences=differences)


def check_director_deforms(root_cells: int = 16, levels: int = 2) -> CheckResult:
    """脉冲问题收敛后指向矢离开 (0,0,1): 面内分量非零, 罚项下单位长度有偏差

    >>> check_director_deforms().passed
    True
    """
    start = time.time()
    config = SolverConfig(mode=RefinementMode.UNIFORM, levels=levels, root_cells=root_cells)
    state, report = nested_iteration(config, MaterialParams(), boundary_pulse_problem())
    director = state.free[state.dofs.free_fields != Field.PHI.index].reshape(3, -1)
    inplane = float(np.abs(director[:2]).max())
    deviation = report.max_unit_length_deviation
    passed = inplane > 1e-3 and deviation > 0
    return _finish('director_deforms', passed, start, max_inplane=inplane, deviation=deviation)


def check_energy_convergence(root_cells: int = 16, levels: int = 4, nu: float = 0.9) -> CheckResult:
    """AMR 各层 G 的变化量逐层变小.

    G 对 φ 取极大, 每层的边界插值也不同, G 本身不一定随加密下降, 这里只看它收敛

    >>> check_energy_convergence().passed
    True
    """
    start = time.time()
    config = SolverConfig(mode=RefinementMode.AMR, levels=levels, root_cells=root_cells, nu=nu)
    _, report = nested_iteration(config, MaterialParams(), boundary_pulse_problem())
    energies = [stats.free_energy for stats in report.levels]
    changes = [abs(fine - coarse) for coarse, fine in zip(energies, energies[1:])]
    passed = all(later < earlier for earlier, later in zip(changes, changes[1:]))
    return _finish('energy_convergence', passed, start, energies=energies, changes=changes)


def check_nested_consistency(root_cells: int = 16) -> CheckResult:
    """插值过来的粗网格解, 在细网格上的初始残差小于直接在细网格上构造的初值

    >>> check_nested_consistency().passed
    True
    """
    start = time.time()
    problem = boundary_pulse_problem()
    config = SolverConfig(mode=RefinementMode.UNIFORM, levels=2, root_cells=root_cells)
    params = problem.material(MaterialParams())
    _, _, states, _ = _collect_levels(config, params, problem)
    fine_dofs = states[1].dofs
    prolonged = float(np.linalg.norm(assemble_residual(prolong(states[0], fine_dofs), params)))
    fresh = initial_guess(fine_dofs, problem, params, tilt=config.initial_tilt)
    direct = float(np.linalg.norm(assemble_residual(fresh, params)))
    return _finish('nested_consistency', prolonged < direct, start, prolonged=prolonged, direct=direct)


ALL_CHECKS = (
    check_trivial,
    check_derivatives,
    check_manufactured_convergence,
    check_effectivity,
    check_dorfler_oracle,
    check_amr_vs_uniform,
    check_penalty_trend,
    check_refinement_localization,
    check_gauss_identity,
    check_director_deforms,
    check_energy_convergence,
    check_nested_consistency,
)


def run_all() -> List[CheckResult]:
    res = []
    for check in ALL_CHECKS:
        result = check()
        print(result.stats)
        res.append(result)
    return res


if __name__ == '__main__':
    results = run_all()
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise SystemExit(f'failed: {", ".join(failed)}')

"""解的质量指标: 单位长度偏差, Gauss 定律符合度, 自由能, DOF, WU"""

from typing import TYPE_CHECKING, Dict, List, Sequence

import attr
import numpy as np
import pandas as pd

from .common import FIELD_COUNT, RefinementMode, human_time_delta, readable_number
from .fem import State, quadrature_samples
from .physics import MaterialParams, free_energy, strong_residuals

if TYPE_CHECKING:
    from .estimator import EstimatorResult
    from .solver import LevelStats


def max_unit_length_deviation(state: State) -> float:
    """所有体积分点上 |n·n - 1| 的最大值

    >>> from .fem import build_dof_system, interpolate
    >>> from .mesh import QuadMesh
    >>> from .problems import zero_potential
    >>> tall = lambda x, y: np.stack([0*x, 0*x, np.sqrt(2) + 0*x], axis=-1)
    >>> state = interpolate(build_dof_system(QuadMesh.uniform(root_cells=2), tall, zero_potential), tall, zero_potential)
    >>> abs(max_unit_length_deviation(state) - 1) < 1e-12
    True
    """
    samples, _ = quadrature_samples(state, with_hessians=False)
    n = samples.n
    return float(np.abs((n * n).sum(axis=-1) - 1).max())


def gauss_conformance(state: State, params: MaterialParams) -> float:
    """Σ_T ∫_T (∇·D)², 用 ∇·D = -q

    >>> from .fem import build_dof_system, interpolate
    >>> from .mesh import QuadMesh
    >>> from .problems import vertical_director
    >>> square = lambda x, y: np.asarray(x)**2
    >>> state = interpolate(build_dof_system(QuadMesh.uniform(root_cells=1), vertical_director, square), vertical_director, square)
    >>> abs(gauss_conformance(state, MaterialParams()) - (2 * 1.42809 * 7)**2) < 1e-9
    True
    """
    samples, weights = quadrature_samples(state, with_hessians=True)
    _, q = strong_residuals(samples, params)
    return float((weights * q**2).sum())


def reference_dof_count(root_cells: int, levels: int) -> int:
    """levels 层均匀加密 (第 0 层是根网格) 的 DOF 总数

    >>> reference_dof_count(16, 3)
    66564
    """
    cells_per_side = root_cells * 2**(levels - 1)
    return FIELD_COUNT * (2 * cells_per_side + 1)**2


@attr.s
class RunReport:
    mode: RefinementMode = attr.ib()
    levels: List['LevelStats'] = attr.ib(factory=list)
    estimates: List['EstimatorResult'] = attr.ib(factory=list)
    max_unit_length_deviation: float = attr.ib(default=0.0)
    gauss_conformance: float = attr.ib(default=0.0)
    free_energy: float = attr.ib(default=0.0)
    penalty_energy: float = attr.ib(default=0.0)
    dofs: int = attr.ib(default=0)
    reference_dofs: int = attr.ib(default=0)
    work_units: float = attr.ib(default=0.0)
    wall_time: float = attr.ib(default=0.0)

    def to_frame(self) -> pd.DataFrame:
        columns = [
            'level',
            'cells',
            'dofs',
            'free_dofs',
            'marked',
            'iterations',
            'linearizations',
            'shifted_steps',
            'initial_residual',
            'residual',
            'damping',
            'free_energy',
            'estimate',
            'wall_time',
        ]
        data = []
        for index, stats in enumerate(self.levels):
            estimate = self.estimates[index].global_estimate if index < len(self.estimates) else None
            row = [
                stats.level,
                stats.cells,
                stats.dofs,
                stats.free_dofs,
                stats.marked,
                stats.iterations,
                stats.linearizations,
                stats.shifted_steps,
                stats.initial_residual,
                stats.residual,
                stats.damping,
                stats.free_energy,
                estimate,
                stats.wall_time,
            ]
            data.append(row)
        return pd.DataFrame(data, columns=columns)

    def summary_row(self) -> Dict[str, object]:
        return {
            'Refinement': self.mode.value,
            'Max |n·n−1|': self.max_unit_length_deviation,
            'Gauss Law': self.gauss_conformance,
            'Free Energy': self.free_energy,
            'DOFs': self.dofs,
            'WUs': self.work_units,
            'Timing': self.wall_time,
        }

    @property
    def stats(self) -> str:
        res = [
            f"加密方式：{self.mode.value}",
            f"层数：{len(self.levels)}",
            f"Newton 迭代总数：{sum(i.iterations for i in self.levels)}",
            f"最大单位长度偏差：{readable_number(self.max_unit_length_deviation)}",
            f"Gauss 定律：{readable_number(self.gauss_conformance)}",
            f"自由能：{readable_number(self.free_energy)}",
            f"罚项能量：{readable_number(self.penalty_energy)}",
            f"DOFs：{self.dofs}",
            f"WUs：{readable_number(self.work_units)}",
            f"耗时：{human_time_delta(self.wall_time)}",
        ]
        return '\n'.join(res)


def work_units(report: RunReport, reference: int) -> float:
    """WU = Σ_ℓ k_ℓ N_ℓ / N_ref

    >>> from .solver import LevelStats
    >>> stats = lambda dofs, steps: LevelStats(level=0, dofs=dofs, iterations=steps, residual=0.0, damping=1.0, wall_time=0.0, linearizations=steps)
    >>> work_units(RunReport(mode=RefinementMode.UNIFORM, levels=[stats(400, 1)]), 400)
    1.0
    >>> work_units(RunReport(mode=RefinementMode.AMR, levels=[stats(100, 2), stats(400, 3)]), 400)
    3.5
    """
    if reference <= 0:
        raise ValueError(f'reference dof count must be positive, got {reference}')
    return float(sum(stats.linearizations * stats.dofs for stats in report.levels) / reference)


def summarize_run(mode: RefinementMode, state: State, params: MaterialParams, levels: Sequence['LevelStats'],
                  estimates: Sequence['EstimatorResult'], reference_dofs: int, wall_time: float) -> RunReport:
    energy = free_energy(state, params)
    report = RunReport(
        mode=mode,
        levels=list(levels),
        estimates=list(estimates),
        max_unit_length_deviation=max_unit_length_deviation(state),
        gauss_conformance=gauss_conformance(state, params),
        free_energy=energy.free_energy,
        penalty_energy=energy.penalty,
        dofs=state.dofs.n_dofs,
        reference_dofs=reference_dofs,
        wall_time=wall_time,
    )
    report.work_units = work_units(report, reference_dofs)
    return report

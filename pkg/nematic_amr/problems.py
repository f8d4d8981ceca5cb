"""内置算例: 边界上的电势脉冲 (主实验), 平凡临界点, 以及调和电势的构造解"""

from typing import Callable, Optional

import attr
import numpy as np

from .exception import ConfigError
from .fem import DofSystem, build_dof_system
from .mesh import QuadMesh
from .physics import MaterialParams


def vertical_director(x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.stack([np.zeros_like(x), np.zeros_like(x), np.ones_like(x)], axis=-1)


def zero_potential(x, y) -> np.ndarray:
    return np.zeros_like(np.asarray(x, dtype=float))


@attr.s(frozen=True)
class BoundaryData:
    name: str = attr.ib()
    director: Callable = attr.ib(default=vertical_director)
    potential: Callable = attr.ib(default=zero_potential)
    exact_potential: Optional[Callable] = attr.ib(default=None)
    exact_potential_gradient: Optional[Callable] = attr.ib(default=None)
    # 构造解只对去耦参数成立
    decoupled: bool = attr.ib(default=False)

    @property
    def has_exact_solution(self) -> bool:
        return self.exact_potential is not None

    def material(self, params: MaterialParams) -> MaterialParams:
        return params.decoupled() if self.decoupled else params

    def build_dofs(self, mesh: QuadMesh) -> DofSystem:
        return build_dof_system(mesh, self.director, self.potential)


def boundary_pulse_problem(steepness: float = 50.0, amplitude: float = 1.5) -> BoundaryData:
    """n = (0,0,1) 全边界; y = 1 上电势是中间三分之一处的平滑方波, 其余边为 0

    >>> problem = boundary_pulse_problem()
    >>> abs(float(problem.potential(0.5, 1.0)) - 1.5) < 1e-3, float(problem.potential(0.0, 1.0)) < 1e-6
    (True, True)
    >>> float(problem.potential(0.5, 0.0)), problem.director(0.3, 1.0).tolist()
    (0.0, [0.0, 0.0, 1.0])
    >>> boundary_pulse_problem(steepness=0)
    Traceback (most recent call last):
    ...
    nematic_amr.exception.ConfigError: steepness: must be positive, got 0
    """
    if not steepness > 0:
        raise ConfigError('steepness', f'must be positive, got {steepness}')

    def potential(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        pulse = amplitude / 2 * (np.tanh(steepness * (x - 1/3)) - np.tanh(steepness * (x - 2/3)))
        return np.where(np.isclose(y, 1.0, rtol=0, atol=1e-14), pulse, 0.0)

    return BoundaryData(name='pulse', potential=potential)


def trivial_problem() -> BoundaryData:
    """n = (0,0,1), φ = 0: 精确临界点"""
    return BoundaryData(name='trivial')


def manufactured_potential_problem() -> BoundaryData:
    """φ* = sin(πx) sinh(πy) / sinh(π), 去耦参数下 n = (0,0,1), φ = φ* 是精确解

    >>> problem = manufactured_potential_problem()
    >>> round(float(problem.exact_potential(0.5, 1.0)), 12)
    1.0
    >>> [round(float(v), 12) for v in problem.exact_potential_gradient(0.5, 0.0)]
    [0.0, 0.0]
    """
    def potential(x, y):
        return np.sin(np.pi * np.asarray(x)) * np.sinh(np.pi * np.asarray(y)) / np.sinh(np.pi)

    def gradient(x, y):
        x, y = np.asarray(x), np.asarray(y)
        return np.stack([
            np.pi * np.cos(np.pi * x) * np.sinh(np.pi * y) / np.sinh(np.pi),
            np.pi * np.sin(np.pi * x) * np.cosh(np.pi * y) / np.sinh(np.pi),
        ], axis=-1)

    return BoundaryData(
        name='manufactured',
        potential=potential,
        exact_potential=potential,
        exact_potential_gradient=gradient,
        decoupled=True,
    )


def get_problem(name: str, steepness: float = 50.0, amplitude: float = 1.5) -> BoundaryData:
    """
    >>> get_problem('Trivial').name
    'trivial'
    >>> get_problem('cavity')
    Traceback (most recent call last):
    ...
    nematic_amr.exception.ConfigError: problem: unknown problem 'cavity', choose from pulse, trivial, manufactured
    """
    builders = {
        'pulse': lambda: boundary_pulse_problem(steepness=steepness, amplitude=amplitude),
        'trivial': trivial_problem,
        'manufactured': manufactured_potential_problem,
    }
    builder = builders.get(name.lower())
    if builder is None:
        raise ConfigError('problem', f"unknown problem '{name}', choose from {', '.join(builders)}")
    return builder()

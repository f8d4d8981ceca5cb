"""
实验配置. config.yaml 是平铺的 key: value, key 不区分大小写;
出错时报出 key 所在的行号.
"""

from typing import Dict, Optional, Tuple

import attr
import yaml

from . import settings
from .common import LinearSolverKind, RefinementMode
from .exception import ConfigError
from .physics import MaterialParams
from .problems import BoundaryData, get_problem
from .solver import SolverConfig


def _to_float(field: str, value) -> float:
    # yaml 1.1 把 1e5 读成字符串
    if isinstance(value, bool):
        raise ConfigError(field, f'expected a number, got {value!r}')
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(field, f'expected a number, got {value!r}')


def _to_int(field: str, value) -> int:
    if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
        raise ConfigError(field, f'expected an integer, got {value!r}')
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(field, f'expected an integer, got {value!r}')


def _optional_int(field: str, value) -> Optional[int]:
    return None if value is None else _to_int(field, value)


def _to_bool(field: str, value) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(field, f'expected true or false, got {value!r}')
    return value


def _to_enum(enum_cls):
    def convert(field: str, value):
        res = enum_cls.from_string(str(value))
        if res is None:
            choices = ', '.join(i.value for i in enum_cls)
            raise ConfigError(field, f'unknown value {value!r}, choose from {choices}')
        return res
    return convert


def _to_str(field: str, value) -> str:
    if not isinstance(value, str):
        raise ConfigError(field, f'expected a string, got {value!r}')
    return value


SOLVER_KEYS = {
    'tolerance': _to_float,
    'max_iterations': _to_int,
    'damping_start': _to_float,
    'damping_increment': _to_float,
    'damping_cap': _to_float,
    'mode': _to_enum(RefinementMode),
    'levels': _optional_int,
    'nu': _to_float,
    'linear_solver': _to_enum(LinearSolverKind),
    'root_cells': _to_int,
    'reference_levels': _optional_int,
    'initial_tilt': _to_float,
    'max_shifts': _to_int,
}
# 小写 key -> MaterialParams 字段名
MATERIAL_KEYS = {i.name.lower(): i.name for i in attr.fields(MaterialParams)}
EXPERIMENT_KEYS = {
    'problem': _to_str,
    'steepness': _to_float,
    'amplitude': _to_float,
    'output_dir': _to_str,
    'emit_fields': _to_bool,
    'seed': _to_int,
}


@attr.s(frozen=True)
class ExperimentConfig:
    problem: str = attr.ib(default='pulse')
    solver: SolverConfig = attr.ib(factory=SolverConfig)
    params: MaterialParams = attr.ib(factory=MaterialParams)
    steepness: float = attr.ib(default=50.0)
    amplitude: float = attr.ib(default=1.5)
    output_dir: str = attr.ib(default=settings.default_out_dir)
    emit_fields: bool = attr.ib(default=True)
    # 只给测试里的随机样本用
    seed: int = attr.ib(default=0)

    def build_problem(self) -> BoundaryData:
        return get_problem(self.problem, steepness=self.steepness, amplitude=self.amplitude)


def load_raw_config(text: str) -> Tuple[Dict[str, object], Dict[str, int]]:
    """返回小写 key 的取值和 key 所在的行号 (从 1 开始)

    >>> load_raw_config('Problem: pulse\\nK1: 2.0\\n')
    ({'problem': 'pulse', 'k1': 2.0}, {'problem': 1, 'k1': 2})
    >>> load_raw_config('')
    ({}, {})
    >>> load_raw_config('- 1\\n- 2\\n')
    Traceback (most recent call last):
    ...
    nematic_amr.exception.ConfigError: config (line 1): top level must be a mapping
    """
    node = yaml.compose(text)
    if node is None:
        return {}, {}
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError('config', 'top level must be a mapping', line=node.start_mark.line + 1)
    values = yaml.safe_load(text)
    lines = {}
    for key_node, _ in node.value:
        key = str(key_node.value).lower()
        line = key_node.start_mark.line + 1
        if key in lines:
            raise ConfigError(key_node.value, f'duplicate key, first defined on line {lines[key]}', line=line)
        lines[key] = line
    raw = {str(k).lower(): v for k, v in values.items()}
    return raw, lines


def format_raw_config(raw: Dict[str, object], lines: Dict[str, int] = None) -> ExperimentConfig:
    """
    >>> config = format_raw_config({'problem': 'trivial', 'mode': 'uniform', 'levels': 2, 'k1': 2, 'zeta': '1e3'})
    >>> config.problem, config.solver.mode, config.solver.levels, config.params.K1, config.params.zeta
    ('trivial', <RefinementMode.UNIFORM: 'uniform'>, 2, 2.0, 1000.0)
    >>> config = format_raw_config({'initial_tilt': 0, 'max_shifts': '4'})
    >>> config.solver.initial_tilt, config.solver.max_shifts
    (0.0, 4)
    >>> format_raw_config({'problem': 'pulse', 'nu': 1.5}, {'problem': 1, 'nu': 2})
    Traceback (most recent call last):
    ...
    nematic_amr.exception.ConfigError: nu (line 2): must lie in (0, 1], got 1.5
    >>> format_raw_config({'level': 3}, {'level': 4})
    Traceback (most recent call last):
    ...
    nematic_amr.exception.ConfigError: level (line 4): unknown key
    >>> format_raw_config({'mode': 'coarsen'})
    Traceback (most recent call last):
    ...
    nematic_amr.exception.ConfigError: mode: unknown value 'coarsen', choose from uniform, amr
    """
    lines = lines or {}
    solver_kwargs = {}
    material_kwargs = {}
    experiment_kwargs = {}
    try:
        for key, value in raw.items():
            if key in SOLVER_KEYS:
                solver_kwargs[key] = SOLVER_KEYS[key](key, value)
            elif key in MATERIAL_KEYS:
                material_kwargs[MATERIAL_KEYS[key]] = _to_float(MATERIAL_KEYS[key], value)
            elif key in EXPERIMENT_KEYS:
                experiment_kwargs[key] = EXPERIMENT_KEYS[key](key, value)
            else:
                raise ConfigError(key, 'unknown key')
        config = ExperimentConfig(
            solver=SolverConfig(**solver_kwargs),
            params=MaterialParams(**material_kwargs),
            **experiment_kwargs,
        )
        # 名字和 steepness 在这里就检查, 不要等到求解时
        config.build_problem()
    except ConfigError as e:
        if e.line is not None:
            raise
        raise ConfigError(e.field, e.message, line=lines.get(e.field.lower())) from None
    return config


def parse_config_text(text: str) -> ExperimentConfig:
    """
    >>> config = parse_config_text('problem: manufactured\\nmode: uniform\\nroot_cells: 4\\nZeta: 1.0e+3\\n')
    >>> config.problem, config.solver.root_cells, config.params.zeta
    ('manufactured', 4, 1000.0)
    >>> parse_config_text('problem: pulse\\n\\nsteepness: -1\\n')
    Traceback (most recent call last):
    ...
    nematic_amr.exception.ConfigError: steepness (line 3): must be positive, got -1.0
    """
    raw, lines = load_raw_config(text)
    return format_raw_config(raw, lines)


def read_config(file_path: str = None) -> ExperimentConfig:
    file_path = file_path or settings.default_config_path
    with open(file_path, 'r') as f:
        return parse_config_text(f.read())


def apply_overrides(config: ExperimentConfig, mode: str = None, levels: int = None, nu: float = None,
                    zeta: float = None, output_dir: str = None) -> ExperimentConfig:
    """命令行参数覆盖配置文件

    >>> config = apply_overrides(ExperimentConfig(), mode='uniform', levels=3, zeta=1000)
    >>> config.solver.mode, config.solver.levels, config.params.zeta, config.params.K1
    (<RefinementMode.UNIFORM: 'uniform'>, 3, 1000.0, 1.0)
    >>> apply_overrides(ExperimentConfig(), nu=0)
    Traceback (most recent call last):
    ...
    nematic_amr.exception.ConfigError: nu: must lie in (0, 1], got 0.0
    """
    solver_changes = {}
    if mode is not None:
        solver_changes['mode'] = _to_enum(RefinementMode)('mode', mode)
    if levels is not None:
        solver_changes['levels'] = _to_int('levels', levels)
    if nu is not None:
        solver_changes['nu'] = _to_float('nu', nu)
    changes = {}
    if solver_changes:
        changes['solver'] = attr.evolve(config.solver, **solver_changes)
    if zeta is not None:
        changes['params'] = config.params.evolve(zeta=_to_float('zeta', zeta))
    if output_dir is not None:
        changes['output_dir'] = output_dir
    return attr.evolve(config, **changes)

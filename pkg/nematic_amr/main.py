"""
    $ python -m nematic_amr.main run --config config.yaml --mode amr --levels 4

退出码: 0 所有层都收敛, 2 配置错误, 3 求解失败
"""

import sys
import time
from os import path

import attr

from .common import get_logger
from .exception import ConfigError, SolverException
from .experiment_config import ExperimentConfig, apply_overrides, read_config
from .output import (
    estimator_file,
    fields_file,
    save_state,
    summary_table,
    write_estimator,
    write_fields,
    write_report,
)
from .solver import nested_iteration

logger = get_logger()

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_SOLVER_ERROR = 3


def run_experiment(config: ExperimentConfig) -> int:
    """
    >>> import contextlib, io, os, tempfile
    >>> from .common import RefinementMode
    >>> from .solver import SolverConfig
    >>> with tempfile.TemporaryDirectory() as tmp, contextlib.redirect_stdout(io.StringIO()) as out:
    ...     solver = SolverConfig(mode=RefinementMode.UNIFORM, levels=2, root_cells=2)
    ...     status = run_experiment(ExperimentConfig(problem='trivial', solver=solver, output_dir=tmp))
    ...     files = sorted(os.listdir(tmp))
    >>> status, files
    (0, ['estimator_level0.csv', 'estimator_level1.csv', 'fields_level0.vtk', 'fields_level1.vtk', 'report.csv', 'state.npz'])
    >>> 'Gauss Law' in out.getvalue()
    True

    第 1 层的初值是插值过来的, 一步 Newton 不够

    >>> with tempfile.TemporaryDirectory() as tmp:
    ...     solver = SolverConfig(mode=RefinementMode.UNIFORM, levels=2, root_cells=2, max_iterations=1)
    ...     run_experiment(ExperimentConfig(problem='pulse', solver=solver, output_dir=tmp, emit_fields=False))
    3

    两次同样的运行: report.csv 的列固定, 每层的场文件和估计文件逐字节相同

    >>> def run_twice(config):
    ...     res = []
    ...     for _ in range(2):
    ...         with tempfile.TemporaryDirectory() as tmp, contextlib.redirect_stdout(io.StringIO()):
    ...             assert run_experiment(attr.evolve(config, output_dir=tmp)) == EXIT_OK
    ...             contents = {}
    ...             for name in sorted(os.listdir(tmp)):
    ...                 with open(os.path.join(tmp, name), 'rb') as f:
    ...                     contents[name] = f.read()
    ...             res.append(contents)
    ...     return res
    >>> solver = SolverConfig(mode=RefinementMode.AMR, levels=2, root_cells=4)
    >>> first, second = run_twice(ExperimentConfig(problem='pulse', solver=solver))
    >>> first['report.csv'].decode().splitlines()[0]
    'level,cells,dofs,free_dofs,marked,iterations,linearizations,shifted_steps,initial_residual,residual,damping,free_energy,estimate,wall_time'
    >>> [name for name in first if name.endswith(('.vtk', '.csv')) and name != 'report.csv' and first[name] != second[name]]
    []
    >>> sorted(first) == sorted(second)
    True
    """
    start = time.time()
    output_dir = config.output_dir
    try:
        problem = config.build_problem()
    except ConfigError as e:
        logger.error(f'config error: {e}')
        return EXIT_CONFIG_ERROR

    def on_level(stats, state, result):
        write_estimator(result, estimator_file(output_dir, stats.level))
        if config.emit_fields:
            write_fields(state, result, fields_file(output_dir, stats.level))

    logger.info(f'experiment: problem={problem.name} mode={config.solver.mode.value} out={output_dir}')
    try:
        state, report = nested_iteration(config.solver, config.params, problem, on_level=on_level)
    except SolverException as e:
        logger.error(f'solver failed: {e}')
        return EXIT_SOLVER_ERROR

    write_report(report, path.join(output_dir, 'report.csv'))
    save_state(state, path.join(output_dir, 'state.npz'))
    logger.info('\n' + report.stats)
    print(summary_table(report).to_string(index=False))
    logger.info(f'experiment finished in {time.time() - start:.1f}s')
    return EXIT_OK


def main():
    from argparse import ArgumentParser
    parser = ArgumentParser()
    subparsers = parser.add_subparsers(dest='command', required=True)
    run_parser = subparsers.add_parser('run', help='nested iteration + 输出报告')
    run_parser.add_argument('--config', default=None, help='实验配置文件. 默认: 仓库根目录下的 config.yaml')
    run_parser.add_argument('--mode', choices=['uniform', 'amr'], default=None, help='加密方式')
    run_parser.add_argument('--levels', type=int, default=None, help='层数 (含根网格)')
    run_parser.add_argument('--nu', type=float, default=None, help='Dörfler 参数')
    run_parser.add_argument('--zeta', type=float, default=None, help='罚参数')
    run_parser.add_argument('--out', default=None, help='输出目录')
    args = parser.parse_args()

    try:
        config = read_config(args.config)
        config = apply_overrides(config, mode=args.mode, levels=args.levels, nu=args.nu, zeta=args.zeta,
                                 output_dir=args.out)
    except ConfigError as e:
        logger.error(f'config error: {e}')
        sys.exit(EXIT_CONFIG_ERROR)
    except OSError as e:
        logger.error(f'cannot read config: {e}')
        sys.exit(EXIT_CONFIG_ERROR)
    sys.exit(run_experiment(config))


if __name__ == "__main__":
    main()

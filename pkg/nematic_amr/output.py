"""
结果文件: report.csv, 每层的 estimator_level{ℓ}.csv, 每层的 legacy VTK 网格文件和最终状态的系数 dump.

所有文件先写临时文件再 rename.
"""

import os
import tempfile
from os import path
from typing import Callable, Tuple, Union

import meshio
import numpy as np
import pandas as pd

from .common import Field, get_logger, human_time_delta
from .estimator import EstimatorResult
from .fem import CORNER_NODES, State, dump_state
from .metrics import RunReport

logger = get_logger()


def atomic_save(file_path: str, save: Callable[[str], None], suffix: str = ''):
    """save 写到同目录下的临时文件, 成功后 rename 成 file_path"""
    directory = path.dirname(path.abspath(file_path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=suffix)
    os.close(fd)
    try:
        save(tmp_path)
        os.replace(tmp_path, file_path)
    except BaseException:
        if path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write(file_path: str, content: Union[str, bytes]):
    """
    >>> with tempfile.TemporaryDirectory() as tmp:
    ...     target = path.join(tmp, 'a.txt')
    ...     atomic_write(target, 'old')
    ...     atomic_write(target, 'new')
    ...     open(target).read(), sorted(os.listdir(tmp))
    ('new', ['a.txt'])
    """
    mode = 'wb' if isinstance(content, bytes) else 'w'

    def save(tmp_path: str):
        with open(tmp_path, mode) as f:
            f.write(content)

    atomic_save(file_path, save)


def fields_mesh(state: State, estimator: EstimatorResult = None) -> meshio.Mesh:
    """单元角点上的 n1, n2, n3, phi (Q2 的边中点和中心点不输出), 单元上的 theta"""
    dofs = state.dofs
    corners = dofs.cell_nodes[:, list(CORNER_NODES)]
    nodes = np.unique(corners)
    n_cells = len(corners)
    theta = np.zeros(n_cells) if estimator is None else np.asarray(estimator.theta, dtype=float)
    if len(theta) != n_cells:
        raise ValueError(f'estimator has {len(theta)} cells, mesh has {n_cells}')

    points = np.zeros((len(nodes), 3))
    points[:, :2] = dofs.node_coords[nodes]
    nodal = state.nodal[:, nodes]
    return meshio.Mesh(
        points,
        [('quad', np.searchsorted(nodes, corners))],
        point_data={field.value: nodal[field.index] for field in Field},
        cell_data={'theta': [theta]},
    )


def write_fields(state: State, estimator: EstimatorResult, file_path: str):
    """
    >>> from .mesh import QuadMesh
    >>> from .physics import MaterialParams
    >>> from .problems import trivial_problem
    >>> from .estimator import estimate
    >>> from .fem import interpolate
    >>> problem = trivial_problem()
    >>> state = interpolate(problem.build_dofs(QuadMesh.uniform(root_cells=2)), problem.director, problem.potential)
    >>> with tempfile.TemporaryDirectory() as tmp:
    ...     target = path.join(tmp, 'fields.vtk')
    ...     write_fields(state, estimate(state, MaterialParams()), target)
    ...     points, n_cells = read_vtk_summary(target)
    ...     mesh = meshio.read(target)
    ...     first = open(target, 'rb').read()
    ...     write_fields(state, estimate(state, MaterialParams()), target)
    ...     second = open(target, 'rb').read()
    >>> n_cells, points.shape
    (4, (9, 3))
    >>> sorted(set(map(tuple, points[:, :2].tolist()))) == [(x, y) for x in (0.0, 0.5, 1.0) for y in (0.0, 0.5, 1.0)]
    True
    >>> sorted(mesh.point_data), mesh.point_data['n3'].tolist() == [1.0] * 9
    (['n1', 'n2', 'n3', 'phi'], True)
    >>> mesh.cell_data['theta'][0].tolist(), first == second
    ([0.0, 0.0, 0.0, 0.0], True)
    """
    mesh = fields_mesh(state, estimator)
    atomic_save(file_path, lambda tmp_path: meshio.write(tmp_path, mesh, file_format='vtk', binary=False),
                suffix='.vtk')
    logger.info(f'fields written: {file_path}')


def read_vtk_summary(file_path: str) -> Tuple[np.ndarray, int]:
    """读回点坐标和单元数"""
    mesh = meshio.read(file_path, file_format='vtk')
    return mesh.points, sum(len(block.data) for block in mesh.cells)


def write_report(report: RunReport, file_path: str):
    atomic_write(file_path, report.to_frame().to_csv(index=False))


def write_estimator(result: EstimatorResult, file_path: str):
    atomic_write(file_path, result.to_frame().to_csv(index=False))


def save_state(state: State, file_path: str):
    atomic_save(file_path, lambda tmp_path: dump_state(state, tmp_path), suffix='.npz')


def summary_table(report: RunReport) -> pd.DataFrame:
    """
    >>> from .common import RefinementMode
    >>> table = summary_table(RunReport(mode=RefinementMode.AMR, dofs=4356, wall_time=75))
    >>> list(table.columns)
    ['Refinement', 'Max |n·n−1|', 'Gauss Law', 'Free Energy', 'DOFs', 'WUs', 'Timing']
    >>> table.iloc[0]['Refinement'], table.iloc[0]['Timing']
    ('amr', '1m15s')
    """
    row = report.summary_row()
    row['Timing'] = human_time_delta(row['Timing'])
    return pd.DataFrame([row])


def fields_file(output_dir: str, level: int) -> str:
    return path.join(output_dir, f'fields_level{level}.vtk')


def estimator_file(output_dir: str, level: int) -> str:
    return path.join(output_dir, f'estimator_level{level}.csv')

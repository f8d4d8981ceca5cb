"""
四叉树网格. 单位正方形, 根网格 root_cells x root_cells, 所有单元都是正方形.

单元用 (level, i, j) 表示: level 层的第 i 列第 j 行, 边长 1/(root_cells*2**level).
"""

from functools import cached_property
from typing import Dict, FrozenSet, Iterable, List, Sequence, Tuple

import attr
import numpy as np

from . import settings
from .common import get_logger
from .exception import CellNotActive, MeshException, MeshNotNested, NothingToMark

logger = get_logger()

Cell = Tuple[int, int, int]
MarkSet = FrozenSet[Cell]

# +x, -x, +y, -y
DIRECTIONS: Tuple[Tuple[int, int], ...] = ((1, 0), (-1, 0), (0, 1), (0, -1))


def children(cell: Cell) -> List[Cell]:
    """
    >>> children((0, 1, 2))
    [(1, 2, 4), (1, 3, 4), (1, 2, 5), (1, 3, 5)]
    """
    level, i, j = cell
    return [(level + 1, 2*i + a, 2*j + b) for b in (0, 1) for a in (0, 1)]


def parent(cell: Cell) -> Cell:
    level, i, j = cell
    if level == 0:
        raise MeshException(f'root cell has no parent: {cell}')
    return (level - 1, i // 2, j // 2)


def _edge_neighbors(cells, root_cells: int, cell: Cell, direction: Tuple[int, int]) -> List[Cell]:
    level, i, j = cell
    dx, dy = direction
    same = (level, i + dx, j + dy)
    n = root_cells * 2**level
    if not (0 <= same[1] < n and 0 <= same[2] < n):
        return []
    if same in cells:
        return [same]
    ancestor = same
    while ancestor[0] > 0:
        ancestor = parent(ancestor)
        if ancestor in cells:
            return [ancestor]
    return _facing_descendants(cells, same, direction)


def _facing_descendants(cells, cell: Cell, direction: Tuple[int, int]) -> List[Cell]:
    dx, dy = direction
    res = []
    for child in children(cell):
        a, b = child[1] % 2, child[2] % 2
        # 只保留朝向原单元那一侧的子单元
        if (dx == 1 and a != 0) or (dx == -1 and a != 1) or (dy == 1 and b != 0) or (dy == -1 and b != 1):
            continue
        if child in cells:
            res.append(child)
        elif child[0] < settings.max_refine_level:
            res.extend(_facing_descendants(cells, child, direction))
    return res


@attr.s(frozen=True)
class InteriorEdge:
    """内部边. normal 从 first 指向 second; 粗细交界时 first 是粗单元"""
    first: Cell = attr.ib()
    second: Cell = attr.ib()
    start: Tuple[float, float] = attr.ib()
    end: Tuple[float, float] = attr.ib()
    normal: Tuple[float, float] = attr.ib()
    conforming: bool = attr.ib(default=True)

    @property
    def length(self) -> float:
        return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))

    @property
    def level_gap(self) -> int:
        return abs(self.first[0] - self.second[0])


@attr.s(frozen=True)
class QuadMesh:
    root_cells: int = attr.ib(default=16)
    cells: FrozenSet[Cell] = attr.ib(factory=frozenset, converter=frozenset)

    @root_cells.validator
    def _check_root(self, attribute, value):
        if value < 1:
            raise MeshException(f'root grid needs at least one cell: {value}')

    @classmethod
    def uniform(cls, root_cells: int = 16) -> 'QuadMesh':
        """
        >>> len(QuadMesh.uniform().cells)
        256
        """
        return cls(root_cells=root_cells, cells=[(0, i, j) for j in range(root_cells) for i in range(root_cells)])

    @cached_property
    def cell_list(self) -> List[Cell]:
        # 单元编号顺序. 所有数组按这个顺序排列
        return sorted(self.cells, key=lambda c: (c[0], c[2], c[1]))

    @cached_property
    def cell_index(self) -> Dict[Cell, int]:
        return {cell: index for index, cell in enumerate(self.cell_list)}

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def max_level(self) -> int:
        return max(c[0] for c in self.cells)

    def cells_per_side(self, level: int) -> int:
        return self.root_cells * 2**level

    def cell_size(self, cell: Cell) -> float:
        """
        >>> QuadMesh.uniform().cell_size((1, 0, 0))
        0.03125
        """
        return 1.0 / self.cells_per_side(cell[0])

    def cell_origin(self, cell: Cell) -> Tuple[float, float]:
        h = self.cell_size(cell)
        return (cell[1] * h, cell[2] * h)

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([self.cell_size(c) for c in self.cell_list])

    @cached_property
    def origins(self) -> np.ndarray:
        return np.array([self.cell_origin(c) for c in self.cell_list]).reshape(-1, 2)

    def require_active(self, cell: Cell):
        if cell not in self.cells:
            raise CellNotActive(f'cell is not active: {cell}')

    def is_inside(self, cell: Cell) -> bool:
        level, i, j = cell
        n = self.cells_per_side(level)
        return 0 <= i < n and 0 <= j < n

    def edge_neighbors(self, cell: Cell, direction: Tuple[int, int]) -> List[Cell]:
        """与 cell 在 direction 一侧共享 (部分) 边的所有活动单元. 边界上返回空列表

        >>> mesh = adaptive_refine(QuadMesh.uniform(root_cells=2), {(0, 1, 0)})
        >>> mesh.edge_neighbors((0, 0, 0), (1, 0))
        [(1, 2, 0), (1, 2, 1)]
        >>> mesh.edge_neighbors((1, 2, 1), (-1, 0))
        [(0, 0, 0)]
        >>> mesh.edge_neighbors((0, 0, 0), (-1, 0))
        []
        """
        return _edge_neighbors(self.cells, self.root_cells, cell, direction)

    def side_segment(self, cell: Cell, direction: Tuple[int, int]) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        x0, y0 = self.cell_origin(cell)
        h = self.cell_size(cell)
        dx, dy = direction
        if dx == 1:
            return (x0 + h, y0), (x0 + h, y0 + h)
        if dx == -1:
            return (x0, y0), (x0, y0 + h)
        if dy == 1:
            return (x0, y0 + h), (x0 + h, y0 + h)
        return (x0, y0), (x0 + h, y0)

    def locate_ancestor(self, cell: Cell) -> Cell:
        """cell 自身或其在本网格中处于活动状态的祖先"""
        current = cell
        while True:
            if current in self.cells:
                return current
            if current[0] == 0:
                raise MeshNotNested(f'no active ancestor for {cell}')
            current = parent(current)

    @cached_property
    def edges(self) -> List[InteriorEdge]:
        return interior_edges(self)


def uniform_refine(mesh: QuadMesh) -> QuadMesh:
    """
    >>> mesh = uniform_refine(QuadMesh.uniform())
    >>> len(mesh.cells), float(mesh.sizes.max())
    (1024, 0.03125)
    >>> len(uniform_refine(uniform_refine(QuadMesh.uniform())).cells)
    4096
    """
    if mesh.max_level + 1 > settings.max_refine_level:
        raise MeshException(f'refinement level limit reached: {settings.max_refine_level}')
    new_cells = [child for cell in mesh.cells for child in children(cell)]
    return QuadMesh(root_cells=mesh.root_cells, cells=new_cells)


def adaptive_refine(mesh: QuadMesh, marks: Iterable[Cell]) -> QuadMesh:
    """加密标记单元, 并级联加密粗邻居以保持 1-irregular

    >>> mesh = QuadMesh.uniform(root_cells=4)
    >>> adaptive_refine(mesh, set()) == mesh
    True
    >>> mesh = adaptive_refine(mesh, {(0, 1, 1)})
    >>> len(mesh.cells), len(interior_edges(mesh))
    (19, 32)
    >>> fine = adaptive_refine(mesh, {(1, 3, 3)})
    >>> len(fine.cells), (0, 2, 1) in fine.cells, (0, 1, 2) in fine.cells
    (28, False, False)
    >>> check_one_irregular(fine)
    True
    >>> abs(float((fine.sizes**2).sum()) - 1) < 1e-14
    True
    """
    marks = sorted(set(marks))
    for cell in marks:
        mesh.require_active(cell)
    if not marks:
        return mesh

    cells = set(mesh.cells)
    closure_count = 0

    def coarser_neighbor(cell: Cell, direction):
        for neighbor in _edge_neighbors(cells, mesh.root_cells, cell, direction):
            if neighbor[0] < cell[0]:
                return neighbor

    def refine(cell: Cell):
        nonlocal closure_count
        if cell not in cells:
            return
        if cell[0] + 1 > settings.max_refine_level:
            raise MeshException(f'refinement level limit reached: {settings.max_refine_level}')
        for direction in DIRECTIONS:
            neighbor = coarser_neighbor(cell, direction)
            while neighbor is not None:
                closure_count += 1
                refine(neighbor)
                neighbor = coarser_neighbor(cell, direction)
        cells.remove(cell)
        cells.update(children(cell))

    for cell in marks:
        refine(cell)

    logger.debug(f'refined {len(marks)} marked cells, {closure_count} closure refinements')
    return QuadMesh(root_cells=mesh.root_cells, cells=cells)


def interior_edges(mesh: QuadMesh) -> List[InteriorEdge]:
    """
    >>> len(interior_edges(QuadMesh.uniform(root_cells=2)))
    4
    >>> len(interior_edges(QuadMesh.uniform()))
    480

    和逐对比较单元几何得到的公共边一一对应 (二进制分数, 坐标比较是精确的)

    >>> from itertools import combinations
    >>> def shared_sides(mesh):
    ...     res = set()
    ...     for a, b in combinations(mesh.cell_list, 2):
    ...         (xa, ya), ha = mesh.cell_origin(a), mesh.cell_size(a)
    ...         (xb, yb), hb = mesh.cell_origin(b), mesh.cell_size(b)
    ...         overlap_x = min(xa + ha, xb + hb) - max(xa, xb)
    ...         overlap_y = min(ya + ha, yb + hb) - max(ya, yb)
    ...         if (xa + ha == xb or xb + hb == xa) and overlap_y > 0:
    ...             res.add(frozenset((a, b)))
    ...         elif (ya + ha == yb or yb + hb == ya) and overlap_x > 0:
    ...             res.add(frozenset((a, b)))
    ...     return res
    >>> mesh = adaptive_refine(QuadMesh.uniform(root_cells=4), {(0, 1, 1)})
    >>> for m in (mesh, adaptive_refine(mesh, {(1, 3, 3)})):
    ...     edges = interior_edges(m)
    ...     print(len(edges) == len(shared_sides(m)), {frozenset((e.first, e.second)) for e in edges} == shared_sides(m))
    True True
    True True
    """
    res = []
    for cell in mesh.cell_list:
        for direction in DIRECTIONS:
            for neighbor in mesh.edge_neighbors(cell, direction):
                if neighbor[0] == cell[0]:
                    if direction not in ((1, 0), (0, 1)):
                        continue
                    start, end = mesh.side_segment(cell, direction)
                    res.append(InteriorEdge(first=cell, second=neighbor, start=start, end=end,
                                            normal=(float(direction[0]), float(direction[1])), conforming=True))
                elif neighbor[0] < cell[0]:
                    # 细单元一侧的子边, 法向从粗单元指向细单元
                    start, end = mesh.side_segment(cell, direction)
                    res.append(InteriorEdge(first=neighbor, second=cell, start=start, end=end,
                                            normal=(float(-direction[0]), float(-direction[1])), conforming=False))
    return res


def check_one_irregular(mesh: QuadMesh) -> bool:
    return all(edge.level_gap <= 1 for edge in mesh.edges)


def dorfler_mark(estimates: Sequence[Tuple[Cell, float]], nu: float) -> MarkSet:
    """Dörfler 标记: 按 Θ_T 降序贪心累加, 直到 ∑Θ² ≥ ν·∑Θ²(全部). 相等时按单元编号升序

    >>> f = lambda thetas, nu: sorted(dorfler_mark(list(enumerate(thetas)), nu))
    >>> f([4, 2, 1, 1], 0.9)
    [0, 1]
    >>> f([5, 0, 0], 0.9)
    [0]
    >>> f([1, 1, 1, 1], 1.0)
    [0, 1, 2, 3]
    >>> f([1, 2, 2], 0.5)
    [1, 2]
    >>> f([0, 0], 0.9)
    Traceback (most recent call last):
    ...
    nematic_amr.exception.NothingToMark: nothing to mark
    """
    if not 0 < nu <= 1:
        raise ValueError(f'dorfler fraction must lie in (0, 1]: {nu}')
    if any(theta < 0 for _, theta in estimates):
        raise ValueError('local estimates must be non-negative')
    ordered = sorted(estimates, key=lambda item: (-item[1], item[0]))
    squares = [float(theta)**2 for _, theta in ordered]
    total = sum(squares)
    if total <= 0:
        raise NothingToMark()

    threshold = nu * total
    marked = []
    accumulated = 0.0
    for (cell, _), square in zip(ordered, squares):
        marked.append(cell)
        accumulated += square
        if accumulated >= threshold:
            break
    return frozenset(marked)


def mesh_to_text(mesh: QuadMesh) -> str:
    """每行一个活动单元: level, 左下角 x, 左下角 y, 边长

    >>> print(mesh_to_text(QuadMesh.uniform(root_cells=2)).splitlines()[1])
    0 0.5 0.0 0.5
    """
    lines = []
    for cell in mesh.cell_list:
        x, y = mesh.cell_origin(cell)
        lines.append(f'{cell[0]} {x!r} {y!r} {mesh.cell_size(cell)!r}')
    return '\n'.join(lines) + '\n'


def mesh_from_text(text: str, root_cells: int = 16) -> QuadMesh:
    """
    >>> mesh = adaptive_refine(QuadMesh.uniform(root_cells=4), {(0, 2, 3)})
    >>> mesh_from_text(mesh_to_text(mesh), root_cells=4) == mesh
    True
    """
    cells = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise MeshException(f'line {line_no}: expected "level x y h", got {line!r}')
        level = int(parts[0])
        x, y, h = map(float, parts[1:])
        n = root_cells * 2**level
        if abs(h * n - 1) > 1e-12:
            raise MeshException(f'line {line_no}: side length {h} does not match level {level}')
        cells.append((level, int(round(x * n)), int(round(y * n))))
    return QuadMesh(root_cells=root_cells, cells=cells)

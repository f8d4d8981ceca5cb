class NematicException(Exception):
    pass


class MeshException(NematicException):
    pass


class NothingToMark(MeshException):
    """所有 Θ_T 都是 0, 说明估计量已经收敛或退化"""
    def __init__(self, message='nothing to mark'):
        super().__init__(message)


class CellNotActive(MeshException):
    pass


class MeshNotNested(MeshException):
    """细网格不是由粗网格加密得到的"""
    pass


class BoundaryEdgeError(MeshException):
    pass


class DimensionMismatch(NematicException):
    pass


class SolverException(NematicException):
    pass


class NonConvergence(SolverException):
    def __init__(self, residual: float, iterations: int, level: int = None):
        self.residual = residual
        self.iterations = iterations
        self.level = level
        super().__init__(f'no convergence after {iterations} iterations on level {level}: residual={residual:.6e}')

    def at_level(self, level: int) -> 'NonConvergence':
        return NonConvergence(self.residual, self.iterations, level=level)


class ResidualGrowth(SolverException):
    """一次阻尼 Newton 步之后残差增长超过允许的倍数"""
    def __init__(self, before: float, after: float, iteration: int, level: int = None):
        self.before = before
        self.after = after
        self.iteration = iteration
        self.level = level
        super().__init__(f'residual grew from {before:.6e} to {after:.6e} at iteration {iteration} on level {level}')

    def at_level(self, level: int) -> 'ResidualGrowth':
        return ResidualGrowth(self.before, self.after, self.iteration, level=level)


class FactorizationError(SolverException):
    pass


class ConfigError(NematicException):
    def __init__(self, field: str, message: str, line: int = None):
        self.field = field
        self.line = line
        self.message = message
        where = f' (line {line})' if line is not None else ''
        super().__init__(f'{field}{where}: {message}')

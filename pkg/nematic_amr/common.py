import re
import sys
from enum import Enum
from functools import lru_cache
from os import path

import loguru

from . import settings


class BaseEnum(Enum):
    @classmethod
    def from_string(cls, val: str):
        """
        >>> RefinementMode.from_string('AMR')
        <RefinementMode.AMR: 'amr'>
        >>> RefinementMode.from_string('coarsen') is None
        True
        """
        enum_map = {i.value.upper(): i for i in cls}
        return enum_map.get(val.upper())


class RefinementMode(BaseEnum):
    UNIFORM = 'uniform'
    AMR = 'amr'


class LinearSolverKind(BaseEnum):
    # sparse LU via scipy splu
    LU = 'lu'
    SPSOLVE = 'spsolve'


class Field(BaseEnum):
    """四个标量场. value 顺序即 DOF 分块顺序"""
    N1 = 'n1'
    N2 = 'n2'
    N3 = 'n3'
    PHI = 'phi'

    @property
    def index(self) -> int:
        """
        >>> Field.PHI.index
        3
        """
        return list(Field).index(self)


FIELD_COUNT = len(Field)


class LoggerName(Enum):
    MAIN = 'MAIN'


@lru_cache()
def get_logger(name: LoggerName = LoggerName.MAIN):
    if name == LoggerName.MAIN:
        logger = loguru.logger
        logger.remove()
        logger.add(sys.stderr, level=settings.log_level)
        log_file = path.join(settings.logs_dir, 'main.log')
        logger.add(log_file, level='DEBUG')
        return logger


def human_time_delta(seconds: float) -> str:
    """
    >>> f = human_time_delta
    >>> f(10)
    '10s'
    >>> f(7174)
    '1h59m34s'
    >>> f(0.2)
    '0.2s'
    """
    if seconds < 1:
        return f'{seconds:.1f}s'
    seconds = int(round(seconds))
    res = []
    if seconds >= 60*60*24:
        days = seconds // (60*60*24)
        seconds %= 60*60*24
        res.append(f'{days}d')

    if seconds >= 60*60:
        hours = seconds // (60*60)
        seconds %= 60*60
        res.append(f'{hours}h')

    if seconds >= 60:
        minutes = seconds // 60
        seconds %= 60
        res.append(f'{minutes}m')

    if seconds > 0:
        res.append(f'{seconds}s')
    return ''.join(res)


def readable_number(number: float, keep_count: int = 4):
    """summary 表格里的数字不至于太长

    >>> readable_number(-39.48583333)
    -39.4858
    >>> readable_number(0.0446012)
    0.0446
    >>> readable_number(0.00000333666)
    3.337e-06
    >>> readable_number(0)
    0
    """
    if number == 0:
        return number
    if abs(number) >= 1:
        return round(number, keep_count)
    match = re.search(r'^.+?e-(?P<exp>\d+)$', str(number))
    if match:
        ndigits = keep_count + int(match.group('exp')) - 1
    else:
        ndigits = keep_count
        for i in str(abs(number)).split('.')[1]:
            if i != '0':
                break
            ndigits += 1
    return round(number, ndigits)


def compare_with_tolerance(a: float, b: float, operator: str, tolerance_percent: float = 0, base: float = None) -> bool:
    """
    >>> f = compare_with_tolerance
    >>> f(1, 2, '>')
    False

    >>> f(1, 2, '>', tolerance_percent=20)
    False

    >>> f(1, 2, '>', 50)
    True

    >>> f(-39.47, -39.48, '<=', tolerance_percent=2)
    True
    """
    assert tolerance_percent >= 0
    if base:
        assert base == a or base == b
    base = base if base is not None else b

    operator_fns = {
        '>': lambda: a > b,
        '>=': lambda: a >= b,
        '==': lambda: a == b,
        '<': lambda: a < b,
        '<=': lambda: a <= b,
    }
    assert operator in operator_fns
    if operator_fns[operator]():
        return True
    if tolerance_percent <= 0:
        return False
    if base == 0:
        return abs(a - b) == 0
    if 100*abs(a-b)/abs(base) <= tolerance_percent:
        return True
    return False

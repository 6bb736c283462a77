"""nomore 异常层次

所有模块抛出的错误都继承自 NoMoreError，同时继承对应的内置异常类型，
调用方既可以统一捕获，也可以按 ValueError / RuntimeError 处理。
"""
from typing import Optional


class NoMoreError(Exception):
    """nomore 错误基类"""


class InvalidArgumentError(NoMoreError, ValueError):
    """参数不合法：形状不匹配、尺寸越界、约束不可满足等"""


class InvalidStateError(NoMoreError, RuntimeError):
    """对象状态不允许当前操作，例如参数缺少梯度"""


class NumericalError(NoMoreError, ArithmeticError):
    """出现 NaN/Inf 或训练发散"""


class NumericalSingularityError(NumericalError):
    """协方差矩阵奇异且未允许伪逆"""


class FormatError(NoMoreError, ValueError):
    """二进制文件格式错误，offset 为出错位置的字节偏移"""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)

"""Errors raised by mbf_amen.

Everything derives from AmenError and from the builtin one would otherwise
have raised, so ``except ValueError`` keeps working for callers.
"""


class AmenError(Exception):
    pass


class ShapeError(AmenError, ValueError):
    """Extents of two operands do not fit together"""

    def __init__(self, message, *shapes):
        if shapes:
            message = message + " (shapes: %s)" % (
                ", ".join(str(tuple(s)) for s in shapes)
            )
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)


class NumericError(AmenError, ArithmeticError):
    pass


class SpecError(AmenError, ValueError):
    def __init__(self, message, layer_index=None, layer=None):
        if layer_index is not None:
            message = f"layer {layer_index} ({layer}): {message}"
        super().__init__(message)
        self.layer_index = layer_index


class ArgumentError(AmenError, ValueError):
    pass


class ConfigError(AmenError, ValueError):
    def __init__(self, field, message):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


class ConfigParseError(AmenError, ValueError):
    def __init__(self, path, line, column, message):
        super().__init__(f"{path}:{line}:{column}: {message}")
        self.path = path
        self.line = line
        self.column = column


class DecodeError(AmenError, ValueError):
    pass


class CheckpointError(AmenError, ValueError):
    pass


class TrainingError(AmenError, RuntimeError):
    """Training diverged.

    ``scale`` is filled in by the pipeline when the failing branch is known.
    """

    def __init__(self, message, epoch=None, scale=None):
        self.base_message = message
        self.epoch = epoch
        self.scale = scale
        super().__init__(self._format())

    def _format(self):
        where = []
        if self.scale is not None:
            where.append(f"scale {self.scale}")
        if self.epoch is not None:
            where.append(f"epoch {self.epoch}")
        if where:
            return f"{self.base_message} ({', '.join(where)})"
        return self.base_message

    def with_scale(self, scale):
        self.scale = scale
        self.args = (self._format(),)
        return self

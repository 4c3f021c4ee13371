"""Exception types shared across the package."""


class DbbError(Exception):
    """Base class for every error raised by dbbsim."""

    code = "Internal"


class DensityExceeded(DbbError, ValueError):
    code = "DensityExceeded"

    def __init__(self, count, nnz, block_index=None):
        self.count = count
        self.nnz = nnz
        self.block_index = block_index
        where = "" if block_index is None else f" at block {block_index}"
        super().__init__(f"{count} nonzeros exceed the density bound nnz={nnz}{where}")


class LengthMismatch(DbbError, ValueError):
    code = "LengthMismatch"


class MaskArityMismatch(DbbError, ValueError):
    code = "MaskArityMismatch"


class CorruptHeader(DbbError, ValueError):
    code = "CorruptHeader"


class ChecksumMismatch(CorruptHeader):
    code = "ChecksumMismatch"


class TruncatedStream(DbbError, ValueError):
    code = "TruncatedStream"


class InvalidNnz(DbbError, ValueError):
    code = "InvalidNnz"


class StageCapExceeded(DbbError, ValueError):
    code = "StageCapExceeded"


class EmptySample(DbbError, ValueError):
    code = "EmptySample"


class WrongBlockShape(DbbError, ValueError):
    code = "WrongBlockShape"


class AccumulatorOverflow(DbbError, OverflowError):
    code = "AccumulatorOverflow"


class ShapeMismatch(DbbError, ValueError):
    code = "ShapeMismatch"


class ConfigError(DbbError, ValueError):
    code = "ConfigError"


class UnsupportedLayer(DbbError, ValueError):
    code = "UnsupportedLayer"


class UnknownNetwork(DbbError, KeyError):
    code = "UnknownNetwork"

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class NetworkSchemaError(DbbError, ValueError):
    """Network file violation; ``field`` is a dotted path, ``line`` is 1-based when known."""

    code = "NetworkSchemaError"

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field {field}")
        prefix = f"{', '.join(loc)}: " if loc else ""
        super().__init__(prefix + message)


class NegativeCoefficient(ConfigError):
    code = "NegativeCoefficient"


class UnknownBaseline(DbbError, KeyError):
    code = "UnknownBaseline"

    def __str__(self):
        return str(self.args[0]) if self.args else ""

"""Exception hierarchy shared by every subpackage.

Each class carries a stable ``code`` string; the CLI prints it as the
machine-parsable error class on failure.
"""


class KFGError(Exception):
    code = "error"


class ShapeError(KFGError, ValueError):
    """Operand shapes disagree. ``dim`` names the offending dimension."""

    code = "shape_error"

    def __init__(self, message, dim=None):
        super().__init__(message)
        self.dim = dim


class NonFiniteError(KFGError, FloatingPointError):
    code = "non_finite"

    def __init__(self, op):
        super().__init__(f"non-finite values produced by op '{op}'")
        self.op = op


class GraphError(KFGError, RuntimeError):
    code = "graph_error"


class ConfigError(KFGError, ValueError):
    code = "config_error"


class WarehouseError(KFGError, ValueError):
    code = "warehouse_error"


class WeightFileError(KFGError):
    """Base for weight-file problems."""

    code = "weight_file_error"


class MagicError(WeightFileError):
    code = "bad_magic"


class VersionError(WeightFileError):
    code = "bad_version"


class IntegrityError(WeightFileError):
    code = "integrity_error"


class MissingTensorError(WeightFileError):
    code = "missing_tensor"

    def __init__(self, name):
        super().__init__(f"tensor '{name}' expected by the model is absent from the file")
        self.name = name


class UnexpectedTensorError(WeightFileError):
    code = "unexpected_tensor"

    def __init__(self, name):
        super().__init__(f"file carries tensor '{name}' unknown to the model")
        self.name = name


class TensorShapeMismatchError(WeightFileError):
    code = "shape_mismatch"

    def __init__(self, name, expected, found):
        super().__init__(f"tensor '{name}': model expects {tuple(expected)}, file has {tuple(found)}")
        self.name = name
        self.expected = tuple(expected)
        self.found = tuple(found)


class LabelError(KFGError, ValueError):
    code = "label_error"

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ImageFormatError(KFGError, ValueError):
    code = "image_format"


class AliasMismatchError(WeightFileError):
    code = "alias_mismatch"

    def __init__(self, name, expected, found):
        super().__init__(f"'{name}' should alias '{expected}', file says '{found}'")
        self.name = name

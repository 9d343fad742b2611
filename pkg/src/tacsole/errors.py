"""Exception hierarchy shared by every pipeline."""


class TacsoleError(Exception):
    """Base class; the CLI maps it to exit code 1."""


class GeometryError(TacsoleError, ValueError):
    pass


class SourceError(TacsoleError):
    pass


class SourceConnectionError(SourceError, ConnectionError):
    pass


class SceneError(TacsoleError, ValueError):
    pass


class AnnotationError(TacsoleError, ValueError):
    pass


class DataError(TacsoleError, ValueError):
    pass


class DivergenceError(TacsoleError, ArithmeticError):
    pass


class NumericError(TacsoleError, ArithmeticError):
    pass


class TrackingError(TacsoleError):
    pass


class InterpolationError(TacsoleError):
    pass


class ModelError(TacsoleError):
    pass


class ControllerError(TacsoleError, ArithmeticError):
    pass

"""Exception hierarchy shared by all pipeline modules."""


class EnvTriCascadeError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 2


class InvalidAudio(EnvTriCascadeError):
    pass


class InvalidConfig(EnvTriCascadeError):
    exit_code = 1


class InvalidInput(EnvTriCascadeError):
    pass


class InvalidLabel(InvalidInput):
    pass


class CorruptFile(EnvTriCascadeError):
    pass


class ShapeError(EnvTriCascadeError):
    pass


class EmptySubset(EnvTriCascadeError):
    pass


class MissingModel(EnvTriCascadeError):
    pass


class DegenerateLabels(EnvTriCascadeError):
    pass


class NumericalError(EnvTriCascadeError):
    exit_code = 3

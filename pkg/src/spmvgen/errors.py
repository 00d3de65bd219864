"""Exception hierarchy shared by all stages of the designer pipeline."""


class SpmvgenError(Exception):
    """Base class for every error raised by this package."""


# -- ingestion ---------------------------------------------------------------

class IngestionError(SpmvgenError):
    pass


class MalformedHeader(IngestionError):
    pass


class IndexOutOfRange(IngestionError):
    pass


class DuplicateEntry(IngestionError):
    pass


class EmptyRow(IngestionError):
    pass


class DimensionMismatch(SpmvgenError, ValueError):
    pass


# -- graphs ------------------------------------------------------------------

class UnknownNode(SpmvgenError, KeyError):
    pass


class ParseError(SpmvgenError):
    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)


class InvalidGraph(SpmvgenError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


# -- designer / generators ---------------------------------------------------

class DesignError(SpmvgenError):
    """An operator could not be applied; ``node_id`` names the culprit."""

    def __init__(self, message, node_id=None):
        self.node_id = node_id
        if node_id is not None:
            message = f"node {node_id}: {message}"
        super().__init__(message)


class BadThresholds(DesignError):
    pass


class SizeZero(DesignError):
    pass


class InfeasibleDesign(DesignError):
    """Parameters are legal but the design cannot compute SpMV correctly."""


class MissingKey(SpmvgenError, KeyError):
    pass


class UnknownFragment(SpmvgenError):
    pass


class MissingResource(SpmvgenError):
    pass


class NoAdapterRule(SpmvgenError):
    pass


# -- execution ---------------------------------------------------------------

class ExecutionError(SpmvgenError):
    pass


class OutOfBoundsRead(ExecutionError):
    pass


class ScratchOverflow(ExecutionError):
    pass


# -- search ------------------------------------------------------------------

class DeadEnd(SpmvgenError):
    pass


class TooFewSamples(SpmvgenError):
    pass


class NoFeasibleDesign(SpmvgenError):
    pass

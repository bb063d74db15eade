class ExporterError(Exception):
    """Base class for all exporter failures."""


class ValidationError(ExporterError):
    """A job or argument violates a precondition."""


class FetchError(ExporterError):
    """The archive endpoint could not be read; progress is checkpointed."""


class EncoderError(ExporterError):
    """The requested encoder could not be resolved or run."""

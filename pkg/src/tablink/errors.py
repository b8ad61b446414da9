"""Exception hierarchy shared across the pipeline."""


class TablinkError(Exception):
    """Base class for all errors raised by this package."""


class IngestError(TablinkError):
    """A KB dump file is malformed or internally inconsistent."""


class CorpusError(TablinkError):
    """A corpus file violates the documented schema or an invariant."""


class NotFoundError(TablinkError):
    """A referenced record (paper, entity, cell) does not exist."""


class ConfigError(TablinkError):
    """The pipeline configuration is invalid or inconsistent."""


class MissingArtifactError(TablinkError):
    """A required upstream artifact (checkpoint, prediction file) is absent."""

"""Exception taxonomy shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(PipelineError):
    """A file could not be parsed. Carries path and, where known, the section
    or line that failed."""

    def __init__(self, message, path=None, section=None, line=None):
        detail = message
        if path is not None:
            detail = f"{path}: {detail}"
        if section is not None:
            detail = f"{detail} (section: {section})"
        if line is not None:
            detail = f"{detail} (line {line})"
        super().__init__(detail)
        self.path = path
        self.section = section
        self.line = line


class FormatError(ParseError):
    """A file is a recognized container but an unsupported flavor
    (wrong bit depth, wrong channel count, wrong version)."""


class ValidationError(PipelineError):
    """Structurally parseable data violating a documented invariant."""


class DimensionError(ValidationError):
    """Array shapes or counts that do not line up."""


class ProviderError(PipelineError):
    """An external provider subprocess failed or answered garbage."""


class NumericalError(PipelineError):
    """Math fell over: non-finite losses, degenerate systems."""

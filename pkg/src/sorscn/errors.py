"""Exception and warning types shared across the package."""


class SorscnError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SorscnError):
    """Array shapes are inconsistent with the model or with each other."""


class DegenerateMatrix(SorscnError):
    """Spectral radius is numerically zero; the candidate matrix cannot be scaled."""


class WashoutTooLarge(SorscnError):
    """Washout length leaves no samples to work with."""


class ZeroStateNorm(SorscnError):
    """Candidate state trajectory has (numerically) zero energy and cannot be scored."""


class NoCandidateFound(SorscnError):
    """Every (lambda, r) setting was exhausted without an acceptable candidate."""


class EmptyWindow(SorscnError):
    """An operation over a data window received zero samples."""


class ZeroVariance(SorscnError):
    """Targets are constant; the normalized error is undefined."""


class MissingColumn(SorscnError):
    """A column required by the schema is absent from the CSV header."""


class NonNumericCell(SorscnError):
    """A cell could not be parsed as a number.

    Attributes carry 1-based data-row index (header excluded) and column name.
    """

    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"non-numeric cell at row {row}, column {column!r}: {value!r}")


class EmptyFile(SorscnError):
    """The CSV contains no data rows."""


class ConfigError(SorscnError):
    """Invalid or inconsistent experiment configuration."""


class VersionMismatch(SorscnError):
    """Model file schema version is not supported by this reader."""


class CorruptFile(SorscnError):
    """Model file failed checksum verification or cannot be parsed."""


class AllTrialsFailed(SorscnError):
    """Every trial of an experiment raised; there is nothing to report."""


class ConstantStateWarning(UserWarning):
    """A block's window states had zero variance; its correlations default to 0."""


class InvalidThresholdWarning(UserWarning):
    """The adaptability threshold exceeds the curve maximum; all blocks retained."""


class ConstructionStalledWarning(UserWarning):
    """Candidate search stalled; the model is returned as built so far."""

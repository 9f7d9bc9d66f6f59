"""Exception taxonomy shared by all modules.

The CLI maps these onto process exit codes via the ``exit_code`` attribute:
2 = configuration problem, 3 = data problem, 4 = violated invariant,
5 = numerical abort.
"""


class BbekitError(Exception):
    exit_code = 1


class ConfigError(BbekitError):
    """Invalid configuration value or unusable call arguments."""

    exit_code = 2


class DimensionError(ConfigError):
    """Tensor shapes incompatible with the requested operation."""


class StateError(ConfigError):
    """Operation called on an object in the wrong state (no tape, double expansion, ...)."""


class DataError(BbekitError):
    """Base for problems with input data and on-disk artifacts."""

    exit_code = 3


class InputError(DataError):
    """Model input rejected (empty, non-finite, too short)."""


class FormatError(DataError):
    """Binary file (checkpoint / feature file) malformed or wrong version."""


class ParseError(DataError):
    """Text file (mapping table, manifest) malformed; carries a line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class LabelError(DataError):
    """Class index or label string outside the expected inventory."""


class UnmappedLabelError(LabelError):
    """One or more raw labels have no entry in the mapping table."""

    def __init__(self, labels):
        self.labels = sorted(set(labels))
        super().__init__("unmapped labels: " + ", ".join(repr(s) for s in self.labels))


class IngestError(DataError):
    """Manifest refers to unusable data (missing file, negative duration, ...)."""


class SplitError(DataError):
    """Split generation impossible for this corpus."""


class SplitViolationError(SplitError):
    """A speaker appears in more than one partition."""

    def __init__(self, speakers):
        self.speakers = sorted(set(speakers))
        super().__init__("speakers present in multiple splits: " + ", ".join(self.speakers))


class EvalError(DataError):
    """Evaluation requested on an empty or unusable split."""


class MetricError(DataError):
    """Metric undefined for the given inputs (e.g. all-zero confusion matrix)."""


class ReportError(DataError):
    """Report rows are inconsistent (ragged variant sets, empty results)."""


class InvariantViolation(BbekitError):
    """A must-hold property failed (preservation nonzero, gradcheck above tolerance)."""

    exit_code = 4


class NumericalError(BbekitError):
    """An operation produced non-finite values."""

    exit_code = 5


class NumericalAbort(NumericalError):
    """Training aborted on a non-finite loss; carries step diagnostics."""

    def __init__(self, message: str, step: int | None = None, corpus_id: str | None = None,
                 loss_tail=None):
        self.step = step
        self.corpus_id = corpus_id
        self.loss_tail = list(loss_tail) if loss_tail else []
        detail = message
        if step is not None:
            detail += f" (step {step}"
            if corpus_id:
                detail += f", corpus {corpus_id}"
            detail += ")"
        if self.loss_tail:
            detail += "; recent losses: " + ", ".join(f"{x:g}" for x in self.loss_tail)
        super().__init__(detail)

"""Exception hierarchy shared across the package."""


class DeepPromptError(Exception):
    """Base class for every error raised by deepprompt."""


class ConfigError(DeepPromptError, ValueError):
    """Invalid or mutually inconsistent configuration."""


class InputError(DeepPromptError, ValueError):
    """Token ids or arrays outside the range the model accepts."""


class LengthError(InputError):
    """Sequence longer than the model's position table."""


class ModeError(DeepPromptError, ValueError):
    """Operation called for the wrong prompt mode."""


class TaskEncodingError(DeepPromptError, ValueError):
    """Encoded input lacks something a head needs (e.g. a [MASK] token)."""


class DataError(DeepPromptError, ValueError):
    """Raw data that cannot be turned into training examples."""


class ParseError(DataError):
    """Malformed data file; carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UsageError(DeepPromptError, ValueError):
    """Caller passed arguments that do not fit together."""


class PlanError(ConfigError):
    """Multi-task plan mixing incompatible datasets."""


class SpecError(ConfigError):
    """Sweep specification that cannot be executed."""


class TrainingDivergedError(DeepPromptError, RuntimeError):
    """Loss became NaN or infinite during training."""

    def __init__(self, step, lr, grad_norms, loss):
        self.step = step
        self.lr = lr
        self.grad_norms = dict(grad_norms)
        self.loss = loss
        norms = ", ".join(f"{k}={v:.3g}" for k, v in self.grad_norms.items())
        super().__init__(f"non-finite loss {loss} at step {step} (lr={lr:.3g}; grad norms: {norms})")


class CheckpointError(DeepPromptError, IOError):
    """Checkpoint file is unreadable, truncated or corrupted."""


class IncompatibleCheckpointError(CheckpointError):
    """Checkpoint was produced against a different backbone."""

    def __init__(self, expected, found, what="model config hash"):
        self.expected = expected
        self.found = found
        super().__init__(f"{what} mismatch: backbone has {expected}, checkpoint has {found}")


class IncompleteReportError(DeepPromptError, ValueError):
    """Report is missing sweep points and cannot be emitted."""

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"report incomplete; missing points: {self.missing}")

"""Error types shared across the package.

The CLI maps these onto its stable exit codes: configuration/usage
problems exit 2, I/O failures exit 3, numerical aborts exit 4.
"""


class ConfigurationError(ValueError):
    """A config value is invalid or inconsistent (exit code 2)."""


class DataIOError(OSError):
    """Reading or writing dataset/checkpoint files failed (exit code 3)."""


class EvalOnlyDepthError(RuntimeError):
    """Training code touched ground truth that is reserved for evaluation."""


class VariantMismatchError(ValueError):
    """A depth-variant model was used where an SfS model is needed, or vice versa."""


class TrainingDiverged(RuntimeError):
    """A loss went non-finite; the last good checkpoint is preserved."""

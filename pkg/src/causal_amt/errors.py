"""Exception hierarchy shared by all modules."""


class CausalAmtError(Exception):
    """Base class for errors raised on bad user input or configuration."""


class ConfigurationError(CausalAmtError, ValueError):
    """Invalid or inconsistent configuration values."""


class InvalidSpecError(ConfigurationError):
    """A window or filter specification violates its invariants."""


class ShapeMismatchError(CausalAmtError, ValueError):
    """Array or weight shapes disagree with what a contract requires."""


class UnsupportedConfigurationError(ConfigurationError):
    """The configuration is valid but cannot run in the requested mode."""


class InvalidInputError(CausalAmtError, ValueError):
    """Input data violates a precondition, e.g. non-finite values."""


class ContractViolationError(CausalAmtError, RuntimeError):
    """A caller broke a sequencing contract, e.g. feeding frames out of order."""


class WavFormatError(CausalAmtError, ValueError):
    """A WAV file uses a property this package does not accept."""


class TrainingDivergedError(CausalAmtError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, value):
        super().__init__(f"non-finite training loss {value!r} at epoch {epoch}")
        self.epoch = epoch
        self.value = value

"""Exception types shared across the toolkit."""


class TwsError(Exception):
    """Base class for every error raised by this package."""


# --- WAV I/O -----------------------------------------------------------------

class WavError(TwsError):
    pass


class MissingAudioFileError(WavError, FileNotFoundError):
    pass


class UnsupportedWavFormatError(WavError):
    pass


class TruncatedWavError(WavError):
    pass


class UnwritablePathError(WavError, OSError):
    pass


# --- signal contracts --------------------------------------------------------

class SignalError(TwsError, ValueError):
    pass


class SampleRateMismatchError(SignalError):
    pass


class LengthMismatchError(SignalError):
    pass


class ZeroPowerError(SignalError):
    pass


class SignalTooShortError(SignalError):
    pass


class ParameterRangeError(SignalError):
    pass


# --- operators and tool calls ------------------------------------------------

class UnknownOperatorError(TwsError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class ToolCallError(TwsError):
    pass


class UnknownToolError(ToolCallError):
    pass


class InvalidArgsError(ToolCallError):
    pass


class BackendError(TwsError):
    pass


# --- data / manifests --------------------------------------------------------

class ManifestError(TwsError):
    pass


class PolicyError(TwsError, ValueError):
    """Malformed oracle policy."""

"""Exception types raised by the toolkit."""


class CtcSegError(Exception):
    """Base class for all toolkit errors."""


class PosteriorFormatError(CtcSegError, ValueError):
    """A posterior file is malformed."""


class TruncatedPayloadError(PosteriorFormatError):
    def __init__(self, expected: int, actual: int):
        super().__init__(
            f"payload size mismatch: expected {expected} bytes, got {actual} bytes"
        )
        self.expected = expected
        self.actual = actual


class InputFormatError(CtcSegError, ValueError):
    """A token table, transcript, rules or manifest file is invalid."""


class MissingTokenError(CtcSegError, ValueError):
    def __init__(self, char: str, utterance_id: str):
        super().__init__(
            f"character {char!r} in utterance {utterance_id!r} has no token"
        )
        self.char = char
        self.utterance_id = utterance_id


class AllDroppedError(CtcSegError, ValueError):
    """Every utterance of a transcript was dropped during normalization."""


class InfeasibleLengthError(CtcSegError, ValueError):
    """The text has more characters than the posteriors have frames."""


class WindowInfeasibleError(CtcSegError, ValueError):
    """Bands of consecutive characters cannot be connected by any path."""


class WindowEscapeError(CtcSegError):
    """The best windowed path runs into the edge of the band."""

    def __init__(self, char_index: int, window: int):
        super().__init__(
            f"alignment path left the window at character {char_index} "
            f"(window={window}); retry with a larger window or --auto-widen"
        )
        self.char_index = char_index
        self.window = window


class NoPathError(CtcSegError):
    """No finite-probability path reaches the last character."""


class EvaluationError(CtcSegError, ValueError):
    pass


class SynthesisError(CtcSegError, ValueError):
    pass

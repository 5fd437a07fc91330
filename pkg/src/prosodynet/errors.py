"""Exception hierarchy shared by all prosodynet modules."""


class ProsodyNetError(Exception):
    """Base class for all library errors."""


class SignalTooShort(ProsodyNetError):
    """Audio shorter than one analysis frame."""


class AlignmentFormatError(ProsodyNetError):
    """Malformed alignment/label lines; carries (line_number, message) pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "; ".join(f"line {n}: {msg}" for n, msg in self.problems)
        super().__init__(f"{len(self.problems)} malformed line(s): {lines}")


class AlignmentOverlap(ProsodyNetError):
    """Two words of the same utterance overlap in time."""


class BadInterval(ProsodyNetError):
    """Word interval with end <= start or negative start."""


class UnknownLabel(ProsodyNetError):
    """ToBI label outside the known inventory; never dropped silently."""

    def __init__(self, labels):
        self.labels = list(labels)
        super().__init__("unknown ToBI label(s): " + ", ".join(map(str, self.labels)))


class MissingAudio(ProsodyNetError):
    """A word token has no covering feature track."""


class MissingLabel(ProsodyNetError):
    """A word token has no event-label record."""


class FrameRangeError(ProsodyNetError):
    """Entry frame range falls outside its utterance track."""


class EmptyDataset(ProsodyNetError):
    """Operation requires at least one dataset entry."""


class InputTooShort(ProsodyNetError):
    """Input narrower than the convolution kernel."""


class PoolTooSmall(ProsodyNetError):
    """Pooling input shorter than the requested output length."""


class TooFewEntries(ProsodyNetError):
    """Dataset too small for the requested fold count."""


class TooFewSpeakers(ProsodyNetError):
    """Leave-one-speaker-out requires at least two speakers."""


class DivergedError(ProsodyNetError):
    """Training loss became NaN; the fold is aborted."""


class ShapeError(ProsodyNetError):
    """Model geometry does not match the input it was applied to."""


class ConfigError(ProsodyNetError):
    """Invalid experiment configuration; carries every problem found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))

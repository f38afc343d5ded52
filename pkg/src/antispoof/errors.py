"""Exception types raised across the toolkit.

Every error carries a stable ``code`` string and an ``exit_code`` used by the
command-line interface, so a failing stage prints one machine-parseable line.
"""


class AntispoofError(Exception):
    code = "ERROR"
    exit_code = 1


# audio / framing
class NotFound(AntispoofError):
    code = "NOT_FOUND"
    exit_code = 10


class MalformedHeader(AntispoofError):
    code = "MALFORMED_HEADER"
    exit_code = 11


class UnsupportedChannelLayout(AntispoofError):
    code = "UNSUPPORTED_CHANNEL_LAYOUT"
    exit_code = 12


class UnsupportedEncoding(AntispoofError):
    code = "UNSUPPORTED_ENCODING"
    exit_code = 13


class SignalTooShort(AntispoofError):
    code = "SIGNAL_TOO_SHORT"
    exit_code = 14


# front-ends
class BadFftSize(AntispoofError):
    code = "BAD_FFT_SIZE"
    exit_code = 20


class BadBand(AntispoofError):
    code = "BAD_BAND"
    exit_code = 21


class BandOutOfRange(BadBand):
    code = "BAND_OUT_OF_RANGE"
    exit_code = 22


class DimensionMismatch(AntispoofError):
    code = "DIMENSION_MISMATCH"
    exit_code = 23


class TooManyCeps(AntispoofError):
    code = "TOO_MANY_CEPS"
    exit_code = 24


class MalformedArchive(AntispoofError):
    code = "MALFORMED_ARCHIVE"
    exit_code = 25


# gmm
class TooFewFrames(AntispoofError):
    code = "TOO_FEW_FRAMES"
    exit_code = 30


class NumericalCollapse(AntispoofError):
    code = "NUMERICAL_COLLAPSE"
    exit_code = 31


class KindMismatch(AntispoofError):
    code = "KIND_MISMATCH"
    exit_code = 32


class EmptyFeatures(AntispoofError):
    code = "EMPTY_FEATURES"
    exit_code = 33


class InvalidModel(AntispoofError):
    code = "INVALID_MODEL"
    exit_code = 34


# x-vector
class UtteranceTooShort(AntispoofError):
    code = "UTTERANCE_TOO_SHORT"
    exit_code = 40


class SingleClassDataset(AntispoofError):
    code = "SINGLE_CLASS_DATASET"
    exit_code = 41


class CropLongerThanShortestUtterance(AntispoofError):
    code = "CROP_TOO_LONG"
    exit_code = 42


# fusion
class DegenerateScores(AntispoofError):
    code = "DEGENERATE_SCORES"
    exit_code = 50


class EmptyInput(AntispoofError):
    code = "EMPTY_INPUT"
    exit_code = 51


class TrialIdMismatch(AntispoofError):
    code = "TRIAL_ID_MISMATCH"
    exit_code = 52


class TrialSetMismatch(AntispoofError):
    code = "TRIAL_SET_MISMATCH"
    exit_code = 53


# metrics
class SingleClassScores(AntispoofError):
    code = "SINGLE_CLASS_SCORES"
    exit_code = 60


class DegenerateOperatingPoint(AntispoofError):
    code = "DEGENERATE_OPERATING_POINT"
    exit_code = 61


# protocol / scores
class MalformedLine(AntispoofError):
    code = "MALFORMED_LINE"
    exit_code = 70

    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DuplicateUtteranceId(AntispoofError):
    code = "DUPLICATE_UTTERANCE_ID"
    exit_code = 71


class LabelAttackMismatch(AntispoofError):
    code = "LABEL_ATTACK_MISMATCH"
    exit_code = 72


class DuplicateTrialId(AntispoofError):
    code = "DUPLICATE_TRIAL_ID"
    exit_code = 73


class IoError(AntispoofError):
    code = "IO_ERROR"
    exit_code = 74


class ConfigError(AntispoofError):
    code = "CONFIG_ERROR"
    exit_code = 80

"""Exception hierarchy shared by the pipeline modules.

Every error carries a ``kind`` string so the command line can report it as
machine-readable JSON.
"""


class LVError(Exception):
    kind = "Error"
    exit_code = 2


# signal I/O
class MalformedHeader(LVError):
    kind = "MalformedHeader"


class MixedRates(LVError):
    kind = "MixedRates"


class TruncatedRecords(LVError):
    kind = "TruncatedRecords"


class HeaderPayloadMismatch(LVError):
    kind = "HeaderPayloadMismatch"


class InvalidInput(LVError):
    kind = "InvalidInput"


# preprocessing
class BandOutOfRange(LVError):
    kind = "BandOutOfRange"


class UpsampleRequested(LVError):
    kind = "UpsampleRequested"


class DegenerateStd(LVError):
    kind = "DegenerateStd"
    exit_code = 3


class UnknownLabel(LVError):
    kind = "UnknownLabel"


# feature construction
class CenterOutOfRange(LVError):
    kind = "CenterOutOfRange"


# model
class ShapeMismatch(LVError):
    kind = "ShapeMismatch"


class NonFiniteProbability(LVError):
    kind = "NonFiniteProbability"
    exit_code = 3


class NoForwardRecorded(LVError):
    kind = "NoForwardRecorded"


# training / evaluation
class NonFiniteLoss(LVError):
    kind = "NonFiniteLoss"
    exit_code = 3

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class EmptyDataset(LVError):
    kind = "EmptyDataset"


class ConfigInvalid(LVError):
    kind = "ConfigInvalid"


class CheckpointMissing(LVError):
    kind = "CheckpointMissing"

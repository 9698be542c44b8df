"""Exception hierarchy shared across the toolkit."""


class PromptSegError(Exception):
    """Base class for all toolkit errors."""

    code = "PromptSegError"


class ZeroVectorRow(PromptSegError):
    code = "ZeroVectorRow"


class BatchTooSmall(PromptSegError):
    code = "BatchTooSmall"


class BackendUnavailable(PromptSegError):
    code = "BackendUnavailable"


class BackendFrozen(PromptSegError):
    code = "BackendFrozen"


class PreprocessError(PromptSegError):
    code = "PreprocessError"


class EmptyPrompt(PromptSegError):
    code = "EmptyPrompt"


class ActivationsUnavailable(PromptSegError):
    code = "ActivationsUnavailable"


class BadFractions(PromptSegError):
    code = "BadFractions"


class DecodeError(PromptSegError):
    code = "DecodeError"


class KTooLarge(PromptSegError):
    code = "KTooLarge"


class CorpusTooSmall(PromptSegError):
    code = "CorpusTooSmall"


class LengthMismatch(PromptSegError):
    code = "LengthMismatch"


class SizeMismatch(PromptSegError):
    code = "SizeMismatch"


class ShapeMismatch(PromptSegError):
    code = "ShapeMismatch"


class NoForeground(PromptSegError):
    code = "NoForeground"


class EmptySegmentation(PromptSegError):
    """Zero-shot pipeline produced no foreground; carries the saliency map."""

    code = "EmptySegmentation"

    def __init__(self, message, saliency=None):
        super().__init__(message)
        self.saliency = saliency


class SingleClassGT(PromptSegError):
    code = "SingleClassGT"


class EmptyTrainingSet(PromptSegError):
    code = "EmptyTrainingSet"


class CheckpointCorrupt(PromptSegError):
    code = "CheckpointCorrupt"


class ConfigError(PromptSegError):
    code = "ConfigError"


class MissingEntry(PromptSegError):
    code = "MissingEntry"

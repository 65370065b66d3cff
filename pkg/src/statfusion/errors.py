"""Exception hierarchy.

Every error carries a stable ``code`` (the class name) and an exit status
used by the command line: 2 for bad input, 3 for numerical failure.
"""


class StatFusionError(Exception):
    exit_code = 2

    @property
    def code(self):
        return type(self).__name__


class InputError(StatFusionError):
    exit_code = 2


class NumericalError(StatFusionError):
    exit_code = 3


# imageio
class UnsupportedFormat(InputError):
    pass


class CorruptImage(InputError):
    pass


class DegenerateSize(InputError):
    pass


# glcm / indicators
class BadChannelIndex(InputError):
    pass


class BadLevelCount(InputError):
    pass


# classifiers
class EmptySplit(InputError):
    pass


class SingleClassSplit(InputError):
    pass


class NonFiniteFeature(NumericalError):
    pass


class DimensionMismatch(InputError):
    pass


class UnknownClassifier(InputError):
    pass


class ModelFormatError(InputError):
    pass


# fusion
class MissingProbabilities(InputError):
    def __init__(self, image_ids, message=None):
        self.image_ids = list(image_ids)
        shown = ",".join(self.image_ids[:5])
        if len(self.image_ids) > 5:
            shown += ",..."
        super().__init__(message or f"missing CNN probabilities for image_id={shown}")


class InvalidProbabilityRow(InputError):
    def __init__(self, image_id, message):
        self.image_id = image_id
        super().__init__(f"image_id={image_id}: {message}")


class EmptyInput(InputError):
    pass


# ablation
class UnknownFamily(InputError):
    pass


# pipeline
class ClassTooSmall(InputError):
    pass


class BadSpec(InputError):
    pass


class ManifestError(InputError):
    pass


class ConfigError(InputError):
    pass


class SplitError(InputError):
    pass

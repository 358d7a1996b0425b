"""Exception hierarchy shared by every subpackage.

The CLI maps these onto exit codes: ``DataError`` subclasses exit 2,
``NumericFault`` exits 3.
"""


class ErgoriskError(Exception):
    pass


class DataError(ErgoriskError):
    """Input data could not be used."""


class SchemaError(DataError):
    pass


class LandmarkValueError(DataError, ValueError):
    pass


class MissingLandmarkError(DataError):
    def __init__(self, region: str, indices):
        self.region = region
        self.indices = tuple(sorted(indices))
        super().__init__(f"{region}: missing landmark(s) {list(self.indices)}")


class SampleRejected(DataError):
    """A skeleton lacks landmarks needed for scoring; it is skipped, not imputed."""


class ConfigError(ErgoriskError):
    pass


class DomainError(ErgoriskError, ValueError):
    pass


class ShapeError(ErgoriskError, ValueError):
    pass


class NumericFault(ErgoriskError, ArithmeticError):
    pass

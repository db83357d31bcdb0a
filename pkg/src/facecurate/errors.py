"""Exception hierarchy.

Every error carries the CLI exit code it maps to, so commands can translate
failures without a lookup table.
"""


class FacecurateError(Exception):
    exit_code = 1


class InputError(FacecurateError):
    """Missing, unreadable or undecodable input."""

    exit_code = 1


class FormatError(InputError):
    pass


class TruncationError(FormatError):
    pass


class RowIndexError(FormatError):
    pass


class ConfigError(InputError):
    pass


class ContractError(FacecurateError):
    """A precondition or invariant was violated."""

    exit_code = 2


class IngestionError(ContractError):
    pass


class ValidationError(ContractError):
    pass


class DegenerateInputError(ContractError):
    pass


class CapacityError(ContractError):
    pass


class ProtocolError(ContractError):
    """An external client answered with the wrong shape."""


class ParseError(ValueError):
    """LLM response did not match the outlier-list grammar."""


class RangeError(ParseError):
    pass


class TransportError(FacecurateError):
    """An external client could not be reached or returned an error status."""

    exit_code = 1


class ScreeningFailure(FacecurateError):
    exit_code = 3

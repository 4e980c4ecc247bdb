"""Exception types shared across ergolab modules."""


class ErgolabError(Exception):
    """Base class for all library errors."""


class ConfigError(ErgolabError, ValueError):
    """Invalid system, partition or experiment configuration."""


class WindowTooLarge(ErgolabError):
    """A requested orbit window exceeds the configured memory cap."""


class ScanBudgetExceeded(ErgolabError):
    """A scan ran past its step budget, or too many samples were unresolved."""


class NotSeparated(ErgolabError):
    """The tower base failed its disjointness validation."""


class CapacityExceeded(ErgolabError):
    """A block table or codebook is larger than the configured cap."""


class InsufficientCodewords(ErgolabError):
    """Not enough words remain outside the forbidden set."""


class UnresolvedError(ErgolabError):
    """A tower-level predicate could not be resolved within the scan budget."""

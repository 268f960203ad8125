"""Exception types raised across the package."""


class DistregError(Exception):
    pass


class RankDeficient(DistregError):
    pass


class NoConvergence(DistregError):
    pass


class DimensionMismatch(DistregError, ValueError):
    pass


class BadParam(DistregError, ValueError):
    pass


class TopologyViolation(DistregError):
    pass


class SketchFailure(DistregError):
    """A randomized embedding failed its runtime check; reseeding may help."""


class SamplerOverflow(DistregError):
    pass


class LeverageTooLarge(DistregError):
    pass


class RejectionBudget(DistregError):
    pass

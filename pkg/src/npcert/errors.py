"""Exception hierarchy shared by all npcert modules."""


class NPCError(Exception):
    """Base class for every error raised by npcert."""


class DimensionMismatch(NPCError, ValueError):
    pass


class InvariantViolation(NPCError, ValueError):
    pass


class SchemaVersionMismatch(NPCError, ValueError):
    pass


class DataFormatError(NPCError, ValueError):
    pass


class UnsupportedCombination(NPCError):
    """The requested (metric, threat, mode, domain) cell has no polynomial solver."""


class DegenerateBoundary(NPCError, ValueError):
    """Own and other prototype coincide, so there is no decision boundary."""


class DomainViolation(NPCError, ValueError):
    pass


class Infeasible(NPCError):
    pass


class IterationLimit(NPCError):
    def __init__(self, message, dual_lower=0.0, iterations=0):
        super().__init__(message)
        self.dual_lower = dual_lower
        self.iterations = iterations


class PreconditionViolated(NPCError, ValueError):
    pass


class NotOnSphere(NPCError, ValueError):
    def __init__(self, block, deviation):
        super().__init__(f"block {block} deviates from its sphere radius by {deviation:.3g}")
        self.block = block
        self.deviation = deviation


class NegativeEntry(NPCError, ValueError):
    def __init__(self, index, value):
        super().__init__(f"entry {index} is negative ({value:.3g})")
        self.index = index
        self.value = value


class ClassTooSmall(NPCError, ValueError):
    pass


class DimensionTooLarge(NPCError, ValueError):
    pass


class UnsupportedBlockShape(NPCError, ValueError):
    pass

"""Exception hierarchy for partvar."""


class PartvarError(Exception):
    """Base class for all errors raised by partvar."""


class EmptySampleError(PartvarError, ValueError):
    def __init__(self, msg: str = "empty sample (M_sample = 0)"):
        super().__init__(msg)


class DegenerateDependenceError(PartvarError, ValueError):
    def __init__(self, msg: str = "degenerate dependence parameter (C_ij >= 1)"):
        super().__init__(msg)


class DegenerateMassVarianceError(PartvarError, ValueError):
    def __init__(self, msg: str = "degenerate mass variance (second-order Taylor undefined)"):
        super().__init__(msg)


class ZeroSampleAmountError(PartvarError, ValueError):
    def __init__(self, msg: str = "zero sample amount (beta undefined)"):
        super().__init__(msg)


class InvalidConfigurationError(PartvarError, ValueError):
    """Bad option values, design/population mismatch, malformed design strings."""


class EnumerationTooLargeError(PartvarError, ValueError):
    def __init__(self, size: int, cap: int):
        self.size = size
        self.cap = cap
        super().__init__(
            f"design support has {size} outcomes, above the enumeration cap of {cap}; "
            "use Monte Carlo (run_monte_carlo) or shrink the population"
        )


class FileFormatError(PartvarError, ValueError):
    """A parse or validation failure in an input file, located by line and column."""

    def __init__(self, path, line: int | None, column: int | None, msg: str):
        self.path = str(path)
        self.line = line
        self.column = column
        loc = self.path
        if line is not None:
            loc += f":{line}"
            if column is not None:
                loc += f":{column}"
        super().__init__(f"{loc}: {msg}")

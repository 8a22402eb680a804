"""
Exception hierarchy shared by every module and mapped to CLI exit codes.
"""
from typing import List, Optional, Sequence


class DvaPfnError(Exception):
    """Base class for all errors raised by the package."""


class ConfigError(DvaPfnError):
    """Invalid configuration value or combination."""


class ContractError(DvaPfnError):
    """A precondition of an operation was violated (shapes, ranges, emptiness)."""


class UsageError(DvaPfnError):
    """Bad command-line usage."""


class NumericError(DvaPfnError):
    """Non-finite values or a degenerate numerical quantity."""


class NotSPDError(NumericError):
    """Cholesky factorization failed for every jitter in the schedule."""

    def __init__(self, message: str, jitters_tried: Sequence[float]):
        super().__init__(f"{message} (jitters tried: {', '.join(f'{j:.0e}' for j in jitters_tried)})")
        self.jitters_tried = list(jitters_tried)


class GenerationError(DvaPfnError):
    """A synthetic or power-flow dataset could not be generated."""

    def __init__(self, message: str, seed: Optional[int] = None):
        super().__init__(message if seed is None else f"{message} [seed={seed}]")
        self.seed = seed


class TrainingDivergedError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, batch_seeds: List[int], detail: str = ""):
        super().__init__(
            f"non-finite loss at step {step}; batch seeds {batch_seeds}"
            + (f": {detail}" if detail else "")
        )
        self.step = step
        self.batch_seeds = list(batch_seeds)


class TopologyError(DvaPfnError):
    """Network is not a tree rooted at the slack bus."""


class NetworkFileError(TopologyError):
    """Malformed or invalid network data file."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class PowerFlowDivergedError(NumericError):
    """Backward/forward sweep did not reach the mismatch tolerance."""

    def __init__(self, message: str, trace: Sequence[float]):
        super().__init__(f"{message}; mismatch trace tail: {[f'{m:.3e}' for m in list(trace)[-5:]]}")
        self.trace = list(trace)

"""Exception hierarchy shared by the packing engine and the command surface."""

from __future__ import annotations

from pathlib import Path


class PackbenchError(RuntimeError):
    """Base class for every error raised by packbench."""

    kind = "packbench_error"


class DomainError(PackbenchError, ValueError):
    """Raised when an operation is called outside its precondition."""

    kind = "domain_error"


class InfeasiblePlacementError(DomainError):
    """Raised when a placement violates bounds, resting height or stability."""

    kind = "infeasible_placement"


class MaskedActionError(DomainError):
    """Raised when an action index is out of range or masked out."""

    kind = "masked_action"


class DatasetError(PackbenchError):
    """Raised when a dataset file cannot be parsed or fails schema validation."""

    kind = "dataset_error"


class CheckpointError(PackbenchError):
    """Raised when a checkpoint is corrupt, truncated or from another format version."""

    kind = "checkpoint_error"


class NonFiniteLossError(PackbenchError):
    """Raised when a PPO loss or gradient evaluates to NaN or infinity."""

    kind = "non_finite_loss"

    def __init__(self, message: str, diagnostics: dict[str, float] | None = None) -> None:
        """Initialize with the offending loss components.

        Args:
            message: Human-readable description.
            diagnostics: Loss components captured when the guard fired.
        """
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TrainingAborted(PackbenchError):
    """Raised when training stops early; carries the last good checkpoint."""

    kind = "training_aborted"

    def __init__(self, message: str, checkpoint: Path | None) -> None:
        """Initialize with the checkpoint to resume from.

        Args:
            message: Human-readable description.
            checkpoint: Path of the last checkpoint written before the failure.
        """
        super().__init__(message)
        self.checkpoint = checkpoint


class NoFeasibleActionError(DomainError):
    """Raised when a policy is asked to act on a state with an all-false mask."""

    kind = "no_feasible_action"


class UnknownPolicyError(PackbenchError):
    """Raised when a policy specification names no built-in, checkpoint or plugin."""

    kind = "unknown_policy"

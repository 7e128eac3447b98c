"""Shared exception types."""


class ConfigError(ValueError):
    """Bad or inconsistent configuration (unknown kind, impossible split, ...)."""


class BudgetError(ValueError):
    """Poison set would exceed the allowed fraction of the unlabeled data."""


class TrainingDiverged(RuntimeError):
    """Non-finite loss during training; carries enough context to reproduce."""

    def __init__(self, message: str, *, seed: int, epoch: int, batch: int):
        super().__init__(f"{message} (seed={seed}, epoch={epoch}, batch={batch})")
        self.seed = seed
        self.epoch = epoch
        self.batch = batch

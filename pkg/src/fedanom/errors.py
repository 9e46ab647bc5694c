"""Exception types shared across the package."""


class FedanomError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(FedanomError, ValueError):
    """Invalid configuration value; message names the offending field."""


class CsvFormatError(ConfigError):
    """Malformed dataset CSV; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ContractError(FedanomError, ValueError):
    """Precondition violation on an operation (dimension/layout/range)."""


class TrainingDivergenceError(FedanomError, RuntimeError):
    """Non-finite loss encountered during local training."""

    def __init__(self, epoch: int, batch: int, tenant_id=None):
        where = f"epoch {epoch}, batch {batch}"
        if tenant_id is not None:
            where = f"tenant {tenant_id}, {where}"
        super().__init__(f"training diverged (non-finite loss) at {where}")
        self.epoch = epoch
        self.batch = batch
        self.tenant_id = tenant_id


class InsufficientWindowError(FedanomError, ValueError):
    """Mahalanobis scoring requested with fewer than two window vectors."""


class DegenerateCovarianceError(FedanomError, ArithmeticError):
    """Covariance not positive definite even after shrinkage."""

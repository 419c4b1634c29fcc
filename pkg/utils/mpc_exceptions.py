class MpcError(Exception):
    """Base class for every error raised by the toolkit"""


class FixedPointFormatError(MpcError):
    """Raised when a fixed-point format descriptor is invalid"""


class QuantizationError(MpcError):
    """Raised when a value cannot be quantized (non-finite input)"""


class ModelError(MpcError):
    """Raised when a state-space model is malformed or mismatched"""


class RiccatiError(MpcError):
    """Raised when a Riccati iteration does not converge"""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class DesignError(MpcError):
    """Raised when a controller design stage fails"""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class SolverError(MpcError):
    """Raised when the online solver receives inconsistent inputs"""


class OracleError(MpcError):
    """Raised when the reference box-QP solver hits its iteration cap"""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (KKT residual {residual:.3e})")
        self.residual = residual


class SimulationError(MpcError):
    """Raised when a closed-loop run aborts"""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


class ConfigError(MpcError):
    """Raised when the config file is missing or malformed"""


class ArtifactError(MpcError):
    """Raised when a JSON artifact cannot be parsed or validated"""


class VerificationError(MpcError):
    """Raised when an acceptance check fails"""

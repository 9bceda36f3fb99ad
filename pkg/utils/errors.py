class AnalysisError(Exception):
    """Base class for every failure raised by the analysis engines"""


class InputDataError(AnalysisError):
    """Unreadable, malformed or insufficient input data"""


class ZeroVarianceError(AnalysisError):
    """A local window has zero variance so it cannot be standardised"""

    def __init__(self, message, asset=None, index=None):
        super().__init__(message)
        self.asset = asset
        self.index = index


class SimulationError(AnalysisError):
    """Base class for simulator failures"""


class DivergenceError(SimulationError):
    """The simulated state became non-finite"""

    def __init__(self, step):
        super().__init__(f"trajectory diverged at step {step}")
        self.step = step


class NegativeDiffusionError(SimulationError):
    """A diffusion function returned a negative value"""

    def __init__(self, step, value):
        super().__init__(f"negative diffusion {value!r} at step {step}")
        self.step = step
        self.value = value


class SamplerError(AnalysisError):
    """The ensemble sampler could not be set up or run"""


class SummaryError(AnalysisError):
    """Posterior summaries requested from too few samples"""


class LikelihoodError(AnalysisError):
    """Likelihood evaluated outside its domain"""


class DegenerateWindowError(AnalysisError):
    """A rolling window carries (almost) no variability"""


class InfiniteTimescaleError(AnalysisError):
    """The drift slope is exactly zero, the characteristic time diverges"""


class ArtifactMissingError(AnalysisError):
    """An upstream artifact required by a command does not exist"""


class ConfigValidationError(AnalysisError):
    """One or more configuration fields are invalid"""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__('; '.join(self.errors))


class PriorDomainError(AnalysisError):
    """A prior component evaluated outside its support"""

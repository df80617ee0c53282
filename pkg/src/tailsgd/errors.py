class StepSizeError(ValueError):
    """Step-size and spectrum are incompatible (gamma * sigma >= 1, sigma <= 0, or a guard is violated)."""


class DivergenceError(RuntimeError):
    """An SGD iterate left the admissible region."""

    def __init__(self, step: int, norm: float):
        super().__init__(f"iterate diverged at step {step} (norm={norm!r})")
        self.step = step
        self.norm = norm


class ConfigError(ValueError):
    pass

class ValidationError(ValueError):
    """Bad input: malformed file, schema violation, out-of-range parameter."""


class ConvergenceError(RuntimeError):
    def __init__(self, iterations: int, grad_norm: float):
        super().__init__(
            f"Bradley-Terry fit did not converge after {iterations} iterations "
            f"(gradient norm {grad_norm:.3e})"
        )
        self.iterations = iterations
        self.grad_norm = grad_norm

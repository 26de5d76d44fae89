"""Exception types shared across the package."""


class ScenarioError(ValueError):
    """Malformed or inconsistent configuration. ``path`` is the dotted field path, if known."""

    def __init__(self, msg, path=None):
        self.path = path
        super().__init__(f"{path}: {msg}" if path else msg)


class AssumptionError(ValueError):
    """A standing assumption (numbered 1-6) does not hold for the given data."""

    def __init__(self, assumption, msg):
        self.assumption = assumption
        super().__init__(f"Assumption {assumption} violated: {msg}")


class NonSquareRegulator(AssumptionError):
    def __init__(self, eigenvalue, msg):
        self.eigenvalue = eigenvalue
        super().__init__(5, msg)


class InvalidWeights(ValueError):
    pass


class RiccatiFailure(RuntimeError):
    def __init__(self, msg, residual):
        self.residual = residual
        super().__init__(f"{msg} (residual {residual:.3e})")


class SynthesisError(RuntimeError):
    pass


class DivergenceAbort(RuntimeError):
    def __init__(self, t, agent, what="state"):
        self.t = t
        self.agent = agent
        self.what = what
        super().__init__(f"non-finite or exploding {what} at t={t:.4f} (agent {agent})")

"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class ResolutionError(ValueError):
    """The time grid cannot resolve the requested basis."""


class SingularGramianError(ArithmeticError):
    """A subsystem Gramian is numerically singular (subsystem not controllable)."""

    def __init__(self, index, eigmin, eigmax, outer_iteration=None):
        self.index = index
        self.eigmin = eigmin
        self.eigmax = eigmax
        self.outer_iteration = outer_iteration
        msg = (
            f"Gramian of sample {index} is singular "
            f"(eigenvalues {eigmin:.3e} .. {eigmax:.3e})"
        )
        if outer_iteration is not None:
            msg += f" at outer iteration {outer_iteration}"
        super().__init__(msg)

    def at_outer_iteration(self, k):
        return SingularGramianError(self.index, self.eigmin, self.eigmax, k)


class NumericalBlowupError(FloatingPointError):
    pass


class SpectrumViolationError(ArithmeticError):
    pass


class ScenarioError(ValueError):
    """Invalid scenario file. ``problems`` lists every violation found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class MissingArtifactError(FileNotFoundError):
    pass

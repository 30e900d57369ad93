"""Exception types shared across the simulator."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class SkipRound(Exception):
    """A user cannot transmit this round; its contribution is zeroed."""

    reason = "skip"


class DeepFadeError(SkipRound, DomainError):
    reason = "deep_fade"


class InfeasibleError(SkipRound):
    reason = "infeasible"


class IdxParseError(ValueError):
    """Malformed IDX file. Messages carry the byte offset of the problem."""


class ConfigError(ValueError):
    """Configuration failed validation. ``problems`` lists every issue found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))

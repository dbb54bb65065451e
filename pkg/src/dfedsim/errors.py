"""Exception taxonomy shared across the simulator."""

from __future__ import annotations


class ConfigurationError(ValueError):
    """Invalid configuration value (bad degree, unknown key, infeasible split)."""


class SchemeError(ConfigurationError):
    """Mixing scheme incompatible with the given graph."""


class ProtocolDegeneracyError(RuntimeError):
    """A push-sum weight fell below the positivity floor."""

    def __init__(self, client: int, weight: float, floor: float):
        self.client = client
        self.weight = weight
        self.floor = floor
        super().__init__(
            f"push-sum weight of client {client} degenerated to {weight:.3e} "
            f"(floor {floor:.3e}); the communication schedule is likely disconnected"
        )


class DivergenceError(RuntimeError):
    """Local training produced non-finite parameters."""

    def __init__(self, client: int, round_index: int, what: str = "parameters"):
        self.client = client
        self.round_index = round_index
        super().__init__(
            f"non-finite {what} on client {client} at round {round_index}"
        )


class EvaluationError(ValueError):
    """Evaluation requested on an empty or malformed shard."""

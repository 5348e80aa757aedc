"""
Periodic motor babbling: one tanh of three harmonics per joint.
"""
from typing import Any, Dict, NamedTuple, Tuple

import numpy as np

from dfc2bp.errors import ConfigurationError

HARMONICS = (1, 2, 4)


class BabblingConfig(NamedTuple):
    period: float = 2.0

    def validate(self):
        if self.period <= 0:
            raise ConfigurationError("babbling.period must be positive")
        return self


class BabblingProgram(NamedTuple):
    # (n_joints, 3) amplitudes A1, A2, A3 of each joint
    coefficients: np.ndarray
    period: float
    seed: int

    @property
    def omega(self) -> float:
        return 2 * np.pi / self.period

    @property
    def n_joints(self) -> int:
        return self.coefficients.shape[0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "coefficients": self.coefficients.tolist(),
            "period": self.period,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BabblingProgram":
        return cls(
            coefficients=np.array(data["coefficients"], dtype=float),
            period=float(data["period"]),
            seed=int(data["seed"]),
        )


def sample_program(seed: int, n_joints: int = 6, period: float = 2.0) -> BabblingProgram:
    rng = np.random.default_rng(seed)
    coefficients = rng.uniform(-1.0, 1.0, size=(n_joints, len(HARMONICS)))
    return BabblingProgram(coefficients=coefficients, period=period, seed=seed)


def activations(program: BabblingProgram, t: float) -> np.ndarray:
    """sigma(t) of every joint."""
    if t < 0:
        raise ValueError("babbling time must be non-negative")
    phases = np.sin(np.multiply(HARMONICS, program.omega * t))
    return np.tanh(program.coefficients @ phases)


def activation(program: BabblingProgram, joint: int, t: float) -> float:
    return float(activations(program, t)[joint])


def to_muscle_pair(sigma: float) -> Tuple[float, float]:
    """Route a signed activation to the flexor (positive) or extensor (negative)."""
    if sigma >= 0:
        return float(sigma), 0.0
    return 0.0, float(-sigma)


def muscle_commands(program: BabblingProgram, t: float) -> np.ndarray:
    """(n_joints, 2) flexor/extensor activations at time t."""
    sigma = activations(program, t)
    return np.stack([np.maximum(sigma, 0.0), np.maximum(-sigma, 0.0)], axis=1)

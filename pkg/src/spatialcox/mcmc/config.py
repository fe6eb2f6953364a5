from __future__ import annotations

from dataclasses import asdict, dataclass

from ..errors import InvalidArgumentError

__all__ = ["PriorConfig", "ChainConfig", "DESK_CHAIN", "PUBLISHED_CHAIN"]

C_UPDATE_MODES = ("collapsed", "conditional")


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the stage-2 hierarchy.

    ``a0``/``b0`` are the shape/rate of the slab on the spatial decay,
    ``beta_pi_a``/``beta_pi_b`` the Beta prior on the slab probability.
    ``nugget`` is added to the diagonal of every correlation matrix.
    """

    a0: float = 25.0
    b0: float = 50.0
    beta_pi_a: float = 0.5
    beta_pi_b: float = 0.5
    nugget: float = 1e-6

    def __post_init__(self):
        if min(self.a0, self.b0, self.beta_pi_a, self.beta_pi_b) <= 0:
            raise InvalidArgumentError("a0, b0 and the Beta parameters must be positive")
        if not self.nugget >= 0:
            raise InvalidArgumentError("nugget must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "PriorConfig":
        return cls(**(d or {}))


@dataclass(frozen=True)
class ChainConfig:
    """Length, thinning and seeding of the stage-2 sampler.

    ``c_update`` selects the spike/slab kernel: ``"collapsed"`` integrates
    the coefficient column out before drawing the indicator and then
    redraws the column; ``"conditional"`` draws the indicator given the
    current column.
    """

    n_iter: int = 50_000
    burn_in: int = 40_000
    thin: int = 10
    seed: int = 0
    n_chains: int = 1
    mh_step: float = 0.3
    c_update: str = "collapsed"

    def __post_init__(self):
        if self.n_iter <= 0 or self.n_chains < 1 or self.thin < 1:
            raise InvalidArgumentError("n_iter, n_chains and thin must be positive")
        if not 0 <= self.burn_in < self.n_iter:
            raise InvalidArgumentError("burn_in must satisfy 0 <= burn_in < n_iter")
        if not self.mh_step > 0:
            raise InvalidArgumentError("mh_step must be positive")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgumentError("seed must be a 64-bit unsigned integer")
        if self.c_update not in C_UPDATE_MODES:
            raise InvalidArgumentError(f"c_update must be one of {C_UPDATE_MODES}")

    @property
    def draws_per_chain(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "ChainConfig":
        return cls(**(d or {}))


DESK_CHAIN = ChainConfig(n_iter=50_000, burn_in=40_000, thin=10)
PUBLISHED_CHAIN = ChainConfig(n_iter=1_000_000, burn_in=900_000, thin=20)

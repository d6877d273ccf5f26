"""Trial-offer markets: equilibria, dynamics and ranking experiments."""

__version__ = "0.1.0"

from .equilibrium import (  # noqa: E402
    Method,
    TomeResult,
    expost_weights,
    heterogeneous_tome,
    homogeneous_tome,
    homogenize,
    nash_sw_kkt_residual,
    solve_tome,
    verify_tome,
)
from .exceptions import (  # noqa: E402
    ConfigError,
    DomainError,
    NoConvergence,
    ParseError,
    RangeError,
    ShapeError,
    TrialOfferError,
    ZeroColumn,
    ZeroIntensity,
)
from .market import (  # noqa: E402
    MarketConfig,
    PurchaseLedger,
    market_efficiency,
    next_purchase_probabilities,
    purchase_intensity,
    share_entropy,
    trial_probabilities,
)

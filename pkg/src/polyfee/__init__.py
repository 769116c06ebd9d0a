"""Multi-stablecoin blockchain node with deterministic BFT simulation.

Native balances per currency unit, rate-derived base fees, monetary-value
transaction ordering, per-unit RPC gateways, and committee-voted stablecoin
management, all driven by a seeded single-process event loop.
"""

from .types import (
    GIGA,
    RATE_SCALE,
    TOKEN,
    Block,
    ChainConfig,
    CommitteeSpec,
    Rate,
    TaggedTransaction,
    TxKind,
    UpgradeAction,
)

__all__ = [
    "GIGA",
    "RATE_SCALE",
    "TOKEN",
    "Block",
    "ChainConfig",
    "CommitteeSpec",
    "Rate",
    "TaggedTransaction",
    "TxKind",
    "UpgradeAction",
]

__version__ = "0.1.0"

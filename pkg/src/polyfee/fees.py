"""Fee math: rate-derived base fees, total gas fees, monetary fee values,
value-based ordering keys, and the unit/base-fee consistency check.

Base fees are constant in reference-currency terms and track exchange rates,
not congestion. All functions are pure over immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

from .encoding import canonical_digest
from .errors import BaseFeeMismatch, MissingRate, Overflow
from .oracle import ExchangeRateTable
from .types import RATE_SCALE, U256_MAX, ChainConfig, TaggedTransaction, checked_add, checked_mul


@dataclass(frozen=True)
class FeeQuote:
    unit: str
    base_fee_per_gas: int          # subunits of `unit`
    as_of_height: int


@dataclass(frozen=True)
class OrderingKey:
    """Mempool priority: higher fee value first, then lower nonce, lower digest."""

    fee_value_in_reference: int
    nonce: int
    digest: bytes

    def sort_key(self) -> tuple[int, int, bytes]:
        return (-self.fee_value_in_reference, self.nonce, self.digest)

    def __lt__(self, other: "OrderingKey") -> bool:
        return self.sort_key() < other.sort_key()


def base_fee_for_unit(unit: str, rates: ExchangeRateTable, config: ChainConfig) -> FeeQuote:
    """Quote the per-gas base fee for `unit` at the table's snapshot.

    reference_base_fee * rate / 10^9, rounded half-up at the subunit; the
    reference unit always quotes the configured base fee exactly.
    """
    if unit == config.reference_unit:
        return FeeQuote(unit, config.reference_base_fee, rates.snapshot_height)
    rate = rates.get(unit)
    if rate is None:
        raise MissingRate(f"no {config.reference_unit}->{unit} rate at snapshot {rates.snapshot_height}")
    fee = (config.reference_base_fee * rate.value + RATE_SCALE // 2) // RATE_SCALE
    if fee > U256_MAX:
        raise Overflow("base fee quote exceeds u256")
    return FeeQuote(unit, fee, rates.snapshot_height)


def gas_fee(base_fee_per_gas: int, tip_per_gas: int, gas_used: int) -> int:
    """(base + tip) * gas_used, in subunits of the transaction's unit."""
    return checked_mul(checked_add(base_fee_per_gas, tip_per_gas), gas_used)


def fee_value_in_reference(
    tx: TaggedTransaction, gas_used: int, rates: ExchangeRateTable
) -> int:
    """Monetary value of the fee, converted into reference-unit subunits.

    gas_fee * 10^9 / rate, floor division; strictly monotone in the tip for a
    fixed rate and gas amount.
    """
    rate = rates.get(tx.unit)
    if rate is None:
        raise MissingRate(f"no rate for {tx.unit} at snapshot {rates.snapshot_height}")
    fee = gas_fee(tx.base_fee, tx.tip, gas_used)
    value = fee * RATE_SCALE // rate.value
    if value > U256_MAX:
        raise Overflow("fee value exceeds u256")
    return value


def ordering_key(
    tx: TaggedTransaction, gas_estimate: int, rates: ExchangeRateTable
) -> OrderingKey:
    """Key for value-based transaction ordering; gas_estimate is the tx gas limit
    pre-execution since the realized gas amount is not known yet."""
    return OrderingKey(
        fee_value_in_reference=fee_value_in_reference(tx, gas_estimate, rates),
        nonce=tx.nonce,
        digest=canonical_digest(tx),
    )


def check_base_fee_matches_unit(
    tx: TaggedTransaction,
    rates: ExchangeRateTable,
    config: ChainConfig,
    tolerance: int = 0,
) -> None:
    """Require tx.base_fee to equal the quote for tx.unit at this snapshot.

    A mismatch means the unit or the fee was altered after quoting (the attack
    a tampering node would mount), so validators treat it as invalid.
    """
    quote = base_fee_for_unit(tx.unit, rates, config)
    if abs(tx.base_fee - quote.base_fee_per_gas) > tolerance:
        raise BaseFeeMismatch(
            f"unit {tx.unit}: base fee {tx.base_fee} != quote "
            f"{quote.base_fee_per_gas} at snapshot {rates.snapshot_height}"
        )

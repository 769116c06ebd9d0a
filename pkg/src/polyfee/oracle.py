"""Emulated rate-feed contract and the nodes' periodic rate-table sync.

An external feeder account pushes fiat exchange rates into a contract-like
store; nodes copy the store into their own ExchangeRateTable every K blocks.
The store keeps per-height history so a table for any past sync height can be
rebuilt deterministically (needed when a node replays old blocks).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import ConfigError, ParseError, Unauthorized, ZeroRate
from .types import RATE_SCALE, Rate, is_valid_unit_code, parse_rate_decimal


@dataclass(frozen=True)
class FeedContractState:
    """Exchange-rate store fed by one authorized oracle account.

    `history` maps (base, quote) to a height-ascending tuple of
    (updated_at_height, value); the latest entry is the live rate.
    """

    authorized_feeder: bytes
    history: dict[tuple[str, str], tuple[tuple[int, int], ...]] = field(default_factory=dict)

    def latest(self, base: str, quote: str) -> Rate | None:
        entries = self.history.get((base, quote))
        if not entries:
            return None
        height, value = entries[-1]
        return Rate(value, base, quote)

    def as_of(self, base: str, quote: str, height: int) -> Rate | None:
        entries = self.history.get((base, quote), ())
        value = None
        for h, v in entries:
            if h > height:
                break
            value = v
        return None if value is None else Rate(value, base, quote)


def feed_update(
    contract: FeedContractState,
    pair: tuple[str, str],
    rate: Rate,
    height: int,
    caller: bytes,
) -> FeedContractState:
    """Store `rate` for `pair` at `height`; only the authorized feeder may call."""
    if caller != contract.authorized_feeder:
        raise Unauthorized("feed update from non-feeder address")
    if rate.value <= 0:
        raise ZeroRate("rates must be strictly positive")
    if (rate.base, rate.quote) != pair:
        raise ConfigError(f"rate pair {rate.base}->{rate.quote} does not match {pair}")
    history = dict(contract.history)
    entries = [e for e in history.get(pair, ()) if e[0] != height]
    entries.append((height, rate.value))
    entries.sort()
    history[pair] = tuple(entries)
    return replace(contract, history=history)


@dataclass(frozen=True)
class ExchangeRateTable:
    """Node-held snapshot of reference->unit rates, refreshed every K blocks."""

    reference: str
    rates: dict[str, Rate] = field(default_factory=dict)
    snapshot_height: int = 0

    def get(self, unit: str) -> Rate | None:
        if unit == self.reference:
            return Rate.identity(self.reference)
        return self.rates.get(unit)


def table_from_contract(
    contract: FeedContractState, reference: str, height: int
) -> ExchangeRateTable:
    """Snapshot every reference->unit pair stored up to and including `height`."""
    rates: dict[str, Rate] = {reference: Rate.identity(reference)}
    for base, quote in sorted(contract.history):
        if base != reference:
            continue
        rate = contract.as_of(base, quote, height)
        if rate is not None:
            rates[quote] = rate
    return ExchangeRateTable(reference=reference, rates=rates, snapshot_height=height)


def sync_rates(
    table: ExchangeRateTable,
    contract: FeedContractState,
    height: int,
    sync_interval: int,
) -> ExchangeRateTable:
    """Replace the table from the contract when `height` is a sync height."""
    if height % sync_interval != 0:
        return table
    return table_from_contract(contract, table.reference, height)


def load_rate_series(path: str) -> list[tuple[int, str, int]]:
    """Parse a header-less CSV of `height,unit,rate_decimal` lines.

    Decimals become 10^9 fixed point exactly; raises ParseError with the
    offending 1-based line number. Blank lines are skipped.
    """
    entries: list[tuple[int, str, int]] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3:
                raise ParseError(f"expected 3 fields, got {len(parts)}", lineno)
            height_text, unit, rate_text = parts
            if not height_text.isdigit():
                raise ParseError(f"bad height {height_text!r}", lineno)
            if not is_valid_unit_code(unit):
                raise ParseError(f"bad unit code {unit!r}", lineno)
            try:
                value = parse_rate_decimal(rate_text)
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if value <= 0:
                raise ParseError(f"rate must be positive, got {rate_text!r}", lineno)
            entries.append((int(height_text), unit, value))
    entries.sort(key=lambda e: (e[0], e[1]))
    return entries


def write_rate_series(path: str, entries: list[tuple[int, str, int]]):
    """Inverse of load_rate_series, for generated series."""
    from .types import format_fixed

    with open(path, "w", encoding="ascii") as fh:
        for height, unit, value in entries:
            fh.write(f"{height},{unit},{format_fixed(value, RATE_SCALE)}\n")

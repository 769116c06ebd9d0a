"""Shared builders for the test suite."""

from __future__ import annotations

import pytest

from polyfee.encoding import sign_transaction
from polyfee.oracle import ExchangeRateTable
from polyfee.state import ChainState
from polyfee.types import (
    GIGA,
    TOKEN,
    ChainConfig,
    CommitteeSpec,
    KeyRegistry,
    Rate,
    TaggedTransaction,
    TxKind,
    account_address,
    account_key,
)

RATE_CNY = Rate(7_200_000_000, "USD", "CNY")   # 7.2

ALICE = account_address("alice")
BOB = account_address("bob")
CAROL = account_address("carol")
MANAGERS = [account_address(f"mgr-{i}") for i in range(4)]


def make_config(**overrides) -> ChainConfig:
    defaults = dict(
        units=("USD", "CNY"),
        reference_unit="USD",
        reference_base_fee=GIGA,
        oracle_sync_interval=10,
        validators=(0, 1, 2, 3),
        block_gas_limit=30_000_000,
        genesis_rates=(RATE_CNY,),
        genesis_committees=(
            ("USD", CommitteeSpec(members=tuple(MANAGERS), committee_size=4, quorum_size=3)),
            ("CNY", CommitteeSpec(members=tuple(MANAGERS), committee_size=4, quorum_size=3)),
        ),
    )
    defaults.update(overrides)
    return ChainConfig(**defaults)


def make_table(config: ChainConfig | None = None, snapshot_height: int = 0) -> ExchangeRateTable:
    config = config or make_config()
    rates = {config.reference_unit: Rate.identity(config.reference_unit)}
    for rate in config.genesis_rates:
        rates[rate.quote] = rate
    return ExchangeRateTable(config.reference_unit, rates, snapshot_height)


def make_state(config: ChainConfig | None = None, **balances_tokens) -> ChainState:
    """Genesis state with whole-token balances, e.g. alice_USD=100."""
    config = config or make_config()
    balances: dict[bytes, dict[str, int]] = {}
    for key, tokens in balances_tokens.items():
        label, _, unit = key.rpartition("_")
        balances.setdefault(account_address(label.replace("__", "-")), {})[unit] = tokens * TOKEN
    return ChainState.genesis(config, balances)


def make_registry(*labels: str) -> KeyRegistry:
    registry = KeyRegistry()
    for label in labels:
        registry.register(account_key(label))
    return registry


def make_tx(
    sender_label: str = "alice",
    recipient=BOB,
    nonce: int = 0,
    unit: str = "USD",
    base_fee: int = GIGA,
    tip: int = 0,
    gas_limit: int = 21_000,
    amount: int = 0,
    payload: bytes = b"",
    kind: TxKind | None = None,
) -> TaggedTransaction:
    if kind is None:
        kind = TxKind.PAYLOAD if (recipient is None or payload) else TxKind.TRANSFER
    tx = TaggedTransaction(
        kind=kind,
        sender=account_address(sender_label),
        recipient=recipient,
        nonce=nonce,
        unit=unit,
        base_fee=base_fee,
        tip=tip,
        gas_limit=gas_limit,
        transfer_amount=amount,
        payload=payload,
    )
    return sign_transaction(tx, account_key(sender_label))


@pytest.fixture
def config():
    return make_config()


@pytest.fixture
def table():
    return make_table()

"""Deterministic state transition: gas metering, fee settlement, transfers,
and dispatch of governance transactions.

Fees are charged in the transaction's own unit and credited in full to the
block proposer (distributed, never burned), so per-unit balance sums are
preserved by fee handling. A transaction only ever touches sender/recipient
balances in its own unit; governance bodies additionally touch the governed
unit via mint and burn.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from . import governance as gov_mod
from .encoding import canonical_digest, signature_well_formed, verify_transaction_signature
from .errors import (
    BadNonce,
    BadSignature,
    ChainError,
    GasLimitExceeded,
    InsufficientBalance,
    InvalidBlock,
    MalformedBody,
    MalformedSignature,
    UnknownUnit,
)
from .fees import check_base_fee_matches_unit, gas_fee
from .governance import decode_proposal_body, decode_vote_body
from .oracle import ExchangeRateTable
from .state import ChainState, state_root
from .types import (
    GAS_GOVERNANCE,
    GAS_PAYLOAD_SURCHARGE,
    GAS_PER_PAYLOAD_BYTE,
    GAS_TRANSFER,
    GOVERNANCE_ADDRESS,
    REVERT_MARKER,
    Block,
    ChainConfig,
    KeyRegistry,
    TaggedTransaction,
    TxKind,
    is_valid_unit_code,
    validator_address,
)


class TxStatus(Enum):
    SUCCESS = "success"
    REVERTED = "reverted"
    INVALID = "invalid"


@dataclass(frozen=True)
class Receipt:
    tx_digest: bytes
    status: TxStatus
    gas_used: int
    fee_charged: int              # subunits of `unit`
    unit: str
    block_height: int


def classify(recipient: bytes | None, payload: bytes) -> TxKind:
    """Kind implied by the envelope shape; used when tagging client envelopes."""
    if recipient == GOVERNANCE_ADDRESS:
        if payload[:1] == bytes([gov_mod.PROPOSAL_BODY_TAG]):
            return TxKind.PROPOSAL
        if payload[:1] == bytes([gov_mod.VOTE_BODY_TAG]):
            return TxKind.VOTE
        raise MalformedBody("governance recipient without proposal/vote body")
    if recipient is None or payload:
        return TxKind.PAYLOAD
    return TxKind.TRANSFER


def gas_used_for(tx: TaggedTransaction) -> int:
    """Deterministic gas schedule: plain transfers cost 21,000; payload runs add
    a flat surcharge plus a per-byte cost; governance transactions are flat."""
    if tx.kind is TxKind.TRANSFER:
        return GAS_TRANSFER
    if tx.kind is TxKind.PAYLOAD:
        return GAS_TRANSFER + GAS_PAYLOAD_SURCHARGE + GAS_PER_PAYLOAD_BYTE * len(tx.payload)
    return GAS_GOVERNANCE


def validate_stateless(tx: TaggedTransaction, config: ChainConfig):
    """Shape checks needing no ledger state; raises the specific error."""
    if not is_valid_unit_code(tx.unit) or tx.unit not in config.units:
        raise UnknownUnit(f"unit {tx.unit!r} not active")
    if not signature_well_formed(tx.signature):
        raise MalformedSignature("signature must be 64 nonzero bytes")
    if classify(tx.recipient, tx.payload) is not tx.kind:
        raise MalformedBody(f"kind {tx.kind.name} does not match envelope shape")
    if tx.recipient is None and tx.transfer_amount:
        raise MalformedBody("recipient-less transaction cannot move value")
    if tx.gas_limit > config.block_gas_limit:
        raise GasLimitExceeded(f"gas limit {tx.gas_limit} above block gas limit")
    if tx.gas_limit < gas_used_for(tx):
        raise GasLimitExceeded(f"gas limit {tx.gas_limit} below intrinsic cost {gas_used_for(tx)}")
    if tx.kind is TxKind.PROPOSAL:
        unit, _, _ = decode_proposal_body(tx.payload)
        if unit not in config.units:
            raise UnknownUnit(f"proposal governs unknown unit {unit!r}")
    elif tx.kind is TxKind.VOTE:
        unit, _ = decode_vote_body(tx.payload)
        if unit not in config.units:
            raise UnknownUnit(f"vote targets unknown unit {unit!r}")


def _dispatch_governance(state: ChainState, tx: TaggedTransaction, config: ChainConfig, height: int):
    if tx.kind is TxKind.PROPOSAL:
        unit, _, _ = decode_proposal_body(tx.payload)
        gov = state.governance.get(unit)
        if gov is None:
            raise UnknownUnit(f"no governance for {unit!r}")
        pid = gov_mod.submit_proposal(gov, tx, height, config.proposal_ttl)
    else:
        unit, pid = decode_vote_body(tx.payload)
        gov = state.governance.get(unit)
        if gov is None:
            raise UnknownUnit(f"no governance for {unit!r}")
        gov_mod.cast_vote(gov, tx, height)
    gov_mod.maybe_execute(gov, state, pid)


def _apply_tx_into(
    state: ChainState,
    tx: TaggedTransaction,
    rates: ExchangeRateTable,
    proposer_address_: bytes,
    config: ChainConfig,
    height: int,
) -> Receipt:
    """Mutating core; callers hand in a working copy they may discard on error."""
    validate_stateless(tx, config)
    gov_mod.enforce_blacklist(state.governance, tx)
    account = state.account(tx.sender)
    if tx.nonce != account.nonce:
        raise BadNonce(f"expected nonce {account.nonce}, got {tx.nonce}")
    check_base_fee_matches_unit(tx, rates, config)

    gas_used = gas_used_for(tx)
    fee = gas_fee(tx.base_fee, tx.tip, gas_used)
    if account.balance(tx.unit) < tx.transfer_amount + fee:
        raise InsufficientBalance(
            f"{tx.unit} balance {account.balance(tx.unit)} cannot cover "
            f"transfer {tx.transfer_amount} plus fee {fee}"
        )

    status = TxStatus.SUCCESS
    if tx.kind in (TxKind.PROPOSAL, TxKind.VOTE):
        _dispatch_governance(state, tx, config, height)
        state.debit(tx.sender, tx.unit, fee)
    elif tx.kind is TxKind.PAYLOAD and tx.payload[:1] == bytes([REVERT_MARKER]):
        # Reverted execution: no value moves, gas is still paid for.
        status = TxStatus.REVERTED
        state.debit(tx.sender, tx.unit, fee)
    else:
        state.debit(tx.sender, tx.unit, tx.transfer_amount + fee)
        if tx.recipient is not None and tx.transfer_amount:
            state.credit(tx.recipient, tx.unit, tx.transfer_amount)

    account.nonce += 1
    distribute_fees(state, {tx.unit: fee}, proposer_address_)
    return Receipt(
        tx_digest=canonical_digest(tx),
        status=status,
        gas_used=gas_used,
        fee_charged=fee,
        unit=tx.unit,
        block_height=height,
    )


def apply_transaction(
    state: ChainState,
    tx: TaggedTransaction,
    rates: ExchangeRateTable,
    proposer: int,
    config: ChainConfig,
    height: int = 0,
) -> tuple[ChainState, Receipt]:
    """Apply one transaction to a copy of `state`; the input is never mutated."""
    working = state.copy()
    receipt = _apply_tx_into(working, tx, rates, validator_address(proposer), config, height)
    return working, receipt


def distribute_fees(state: ChainState, fees_by_unit: dict[str, int], proposer_address_: bytes):
    """Credit collected fees to the proposer; sums per unit are unchanged."""
    for unit in sorted(fees_by_unit):
        amount = fees_by_unit[unit]
        if amount:
            state.credit(proposer_address_, unit, amount)


def apply_block(
    state: ChainState,
    block: Block,
    rates: ExchangeRateTable,
    config: ChainConfig,
    registry: KeyRegistry | None = None,
) -> tuple[ChainState, list[Receipt], bytes]:
    """Left-fold of the transaction transition over a copy of `state`.

    Any invalid transaction aborts the whole block: honest proposers never
    pack one, so a failure here is proposer misbehavior. When a key registry
    is supplied, sender signatures are verified as well.
    """
    working = state.copy()
    for unit in sorted(working.governance):
        gov_mod.expire_proposals(working.governance[unit], block.height)

    total_gas_limit = sum(tx.gas_limit for tx in block.transactions)
    if total_gas_limit > config.block_gas_limit:
        raise InvalidBlock("block gas limit exceeded", -1)

    proposer_addr = validator_address(block.proposer)
    receipts: list[Receipt] = []
    for index, tx in enumerate(block.transactions):
        if registry is not None:
            key = registry.key_for(tx.sender)
            if key is None or not verify_transaction_signature(tx, key):
                raise InvalidBlock("bad transaction signature", index)
        try:
            receipts.append(
                _apply_tx_into(working, tx, rates, proposer_addr, config, block.height)
            )
        except ChainError as exc:
            raise InvalidBlock(str(exc), index) from exc
    return working, receipts, state_root(working)

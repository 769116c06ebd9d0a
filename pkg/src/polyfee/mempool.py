"""Pending-transaction pool ordered by monetary fee value.

Admission enforces stateless validity, signature verification, nonce and
balance sanity, and the replacement rule (same sender+nonce needs a strictly
higher fee value). Selection walks per-sender nonce chains in descending
ordering-key priority under the block gas limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .encoding import canonical_digest, verify_transaction_signature
from .errors import ChainError
from .fees import OrderingKey, check_base_fee_matches_unit, gas_fee, ordering_key
from .ledger import validate_stateless
from .oracle import ExchangeRateTable
from .state import ChainState
from .types import ChainConfig, KeyRegistry, TaggedTransaction


class Admission(Enum):
    ACCEPTED = "accepted"
    REPLACED = "replaced"
    REJECTED = "rejected"


@dataclass(frozen=True)
class AdmissionResult:
    outcome: Admission
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.outcome is not Admission.REJECTED


def _rejected(reason: str) -> AdmissionResult:
    return AdmissionResult(Admission.REJECTED, reason)


@dataclass
class _Entry:
    tx: TaggedTransaction
    key: OrderingKey


@dataclass
class Mempool:
    capacity: int = 10_000
    by_sender: dict[bytes, dict[int, _Entry]] = field(default_factory=dict)

    def __len__(self) -> int:
        return sum(len(chain) for chain in self.by_sender.values())

    def __contains__(self, digest: bytes) -> bool:
        return any(
            canonical_digest(e.tx) == digest
            for chain in self.by_sender.values()
            for e in chain.values()
        )

    def transactions(self) -> list[TaggedTransaction]:
        return [e.tx for chain in self.by_sender.values() for e in chain.values()]

    def _evict_lowest(self):
        worst: tuple[bytes, int] | None = None
        worst_key: OrderingKey | None = None
        for sender in sorted(self.by_sender):
            chain = self.by_sender[sender]
            for nonce in sorted(chain):
                key = chain[nonce].key
                if worst_key is None or worst_key < key:
                    worst, worst_key = (sender, nonce), key
        if worst is not None:
            sender, nonce = worst
            del self.by_sender[sender][nonce]
            if not self.by_sender[sender]:
                del self.by_sender[sender]

    def drop_committed(self, txs: list[TaggedTransaction]):
        """Remove included transactions and any stale lower nonces."""
        for tx in txs:
            chain = self.by_sender.get(tx.sender)
            if not chain:
                continue
            for nonce in [n for n in chain if n <= tx.nonce]:
                del chain[nonce]
            if not chain:
                del self.by_sender[tx.sender]


def mempool_add(
    pool: Mempool,
    tx: TaggedTransaction,
    rates: ExchangeRateTable,
    state_view: ChainState,
    config: ChainConfig,
    registry: KeyRegistry | None = None,
) -> AdmissionResult:
    """Admit, replace, or reject one transaction against current state."""
    try:
        validate_stateless(tx, config)
    except ChainError as exc:
        return _rejected(type(exc).__name__)

    if registry is not None:
        key = registry.key_for(tx.sender)
        if key is None or not verify_transaction_signature(tx, key):
            return _rejected("BadSignature")

    account_nonce = state_view.nonce_of(tx.sender)
    if tx.nonce < account_nonce:
        return _rejected("NonceTooLow")

    try:
        check_base_fee_matches_unit(tx, rates, config)
    except ChainError as exc:
        return _rejected(type(exc).__name__)

    try:
        worst_case = tx.transfer_amount + gas_fee(tx.base_fee, tx.tip, tx.gas_limit)
        priority = ordering_key(tx, tx.gas_limit, rates)
    except ChainError as exc:
        return _rejected(type(exc).__name__)
    if state_view.balance_of(tx.sender, tx.unit) < worst_case:
        return _rejected("Underfunded")

    chain = pool.by_sender.setdefault(tx.sender, {})
    existing = chain.get(tx.nonce)
    if existing is not None:
        if canonical_digest(existing.tx) == canonical_digest(tx):
            return _rejected("AlreadyKnown")
        if priority.fee_value_in_reference <= existing.key.fee_value_in_reference:
            return _rejected("FeeTooLowToReplace")
        chain[tx.nonce] = _Entry(tx, priority)
        return AdmissionResult(Admission.REPLACED)

    chain[tx.nonce] = _Entry(tx, priority)
    if len(pool) > pool.capacity:
        pool._evict_lowest()
    return AdmissionResult(Admission.ACCEPTED)


def mempool_select(
    pool: Mempool,
    block_gas_limit: int,
    rates: ExchangeRateTable,
    state_view: ChainState | None = None,
    config: ChainConfig | None = None,
) -> list[TaggedTransaction]:
    """Pick transactions in descending fee-value order under the gas limit.

    Per-sender nonce order always wins over priority: nonce n+1 never leaves
    before nonce n. Keys are recomputed at the current snapshot, and entries
    whose base fee no longer matches their unit's quote are skipped (they
    could not be packed into a valid block).
    """
    heads: dict[bytes, int] = {}
    for sender in sorted(pool.by_sender):
        chain = pool.by_sender[sender]
        start = state_view.nonce_of(sender) if state_view is not None else min(chain)
        if start in chain:
            heads[sender] = start

    selected: list[TaggedTransaction] = []
    gas_left = block_gas_limit
    while heads:
        best_sender: bytes | None = None
        best_key: OrderingKey | None = None
        stale: list[bytes] = []
        for sender in sorted(heads):
            entry = pool.by_sender[sender][heads[sender]]
            try:
                if config is not None:
                    check_base_fee_matches_unit(entry.tx, rates, config)
                key = ordering_key(entry.tx, entry.tx.gas_limit, rates)
            except ChainError:
                stale.append(sender)  # unquotable at this snapshot; chain blocked
                continue
            if best_key is None or key < best_key:
                best_sender, best_key = sender, key
        for sender in stale:
            del heads[sender]
        if best_sender is None:
            break
        tx = pool.by_sender[best_sender][heads[best_sender]].tx
        if tx.gas_limit <= gas_left:
            selected.append(tx)
            gas_left -= tx.gas_limit
            next_nonce = tx.nonce + 1
            if next_nonce in pool.by_sender[best_sender]:
                heads[best_sender] = next_nonce
            else:
                del heads[best_sender]
        else:
            del heads[best_sender]  # does not fit; successors stay blocked
    return selected

"""Multi-currency account state and its deterministic digest.

Accounts hold one nonce plus one balance per currency unit; a missing entry
means zero. The state root is a sorted-key digest chain over accounts,
per-unit governance, and supply counters (documented in docs/state-root.md).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .encoding import blob, text, u8, u64, u256
from .governance import ProposalStatus, StablecoinGovernance, encode_action
from .types import ChainConfig, checked_add, checked_sub


@dataclass
class MultiBalanceAccount:
    nonce: int = 0
    balances: dict[str, int] = field(default_factory=dict)

    def balance(self, unit: str) -> int:
        return self.balances.get(unit, 0)

    def copy(self) -> "MultiBalanceAccount":
        return MultiBalanceAccount(nonce=self.nonce, balances=dict(self.balances))


@dataclass
class ChainState:
    accounts: dict[bytes, MultiBalanceAccount] = field(default_factory=dict)
    governance: dict[str, StablecoinGovernance] = field(default_factory=dict)
    minted: dict[str, int] = field(default_factory=dict)
    burned: dict[str, int] = field(default_factory=dict)

    @staticmethod
    def genesis(config: ChainConfig, balances: dict[bytes, dict[str, int]] | None = None) -> "ChainState":
        state = ChainState()
        for unit in config.units:
            state.governance[unit] = StablecoinGovernance.from_spec(unit, config.committee_for(unit))
        for addr, by_unit in (balances or {}).items():
            account = state.account(addr)
            for unit, amount in by_unit.items():
                account.balances[unit] = amount
        return state

    def account(self, address: bytes) -> MultiBalanceAccount:
        acct = self.accounts.get(address)
        if acct is None:
            acct = MultiBalanceAccount()
            self.accounts[address] = acct
        return acct

    def balance_of(self, address: bytes, unit: str) -> int:
        acct = self.accounts.get(address)
        return 0 if acct is None else acct.balance(unit)

    def nonce_of(self, address: bytes) -> int:
        acct = self.accounts.get(address)
        return 0 if acct is None else acct.nonce

    def credit(self, address: bytes, unit: str, amount: int):
        acct = self.account(address)
        acct.balances[unit] = checked_add(acct.balance(unit), amount)

    def debit(self, address: bytes, unit: str, amount: int):
        acct = self.account(address)
        acct.balances[unit] = checked_sub(acct.balance(unit), amount)

    def total_supply(self, unit: str) -> int:
        return sum(acct.balance(unit) for acct in self.accounts.values())

    def copy(self) -> "ChainState":
        return ChainState(
            accounts={addr: acct.copy() for addr, acct in self.accounts.items()},
            governance={unit: gov.copy() for unit, gov in self.governance.items()},
            minted=dict(self.minted),
            burned=dict(self.burned),
        )


_STATUS_CODES = {
    ProposalStatus.OPEN: 0,
    ProposalStatus.EXECUTED: 1,
    ProposalStatus.REJECTED: 2,
    ProposalStatus.EXPIRED: 3,
}


def _chain(digest: bytes, part: bytes) -> bytes:
    return hashlib.sha256(digest + part).digest()


def governance_digest(gov: StablecoinGovernance) -> bytes:
    """Deterministic digest of one unit's governance state."""
    h = hashlib.sha256(b"polyfee-governance:" + text(gov.unit)).digest()
    h = _chain(h, u64(gov.committee_size) + u64(gov.quorum_size))
    for addr in sorted(gov.committee):
        h = _chain(h, b"C" + addr)
    for addr in sorted(gov.blacklist):
        h = _chain(h, b"B" + addr)
    for pid in sorted(gov.proposals):
        p = gov.proposals[pid]
        h = _chain(
            h,
            b"P"
            + pid
            + p.proposer
            + encode_action(p.action)
            + u64(p.expiry_height)
            + u8(_STATUS_CODES[p.status])
            + blob(p.evidence),
        )
        for voter in sorted(p.yes_votes):
            h = _chain(h, b"V" + voter)
    return h


def state_root(state: ChainState) -> bytes:
    """Digest chain over sorted addresses, balances, governance, and supply."""
    h = hashlib.sha256(b"polyfee-state:v1").digest()
    for addr in sorted(state.accounts):
        acct = state.accounts[addr]
        h = _chain(h, b"A" + addr + u64(acct.nonce))
        for unit in sorted(acct.balances):
            amount = acct.balances[unit]
            if amount:
                h = _chain(h, text(unit) + u256(amount))
    for unit in sorted(state.governance):
        h = _chain(h, governance_digest(state.governance[unit]))
    for unit in sorted(set(state.minted) | set(state.burned)):
        h = _chain(h, b"S" + text(unit) + u256(state.minted.get(unit, 0)) + u256(state.burned.get(unit, 0)))
    return h

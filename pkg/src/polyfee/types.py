"""Core domain values: currency units, amounts, rates, transactions, blocks, config.

All monetary arithmetic is integer fixed-point. Rates carry a 10^9 scale,
amounts are unsigned 256-bit subunit counts (10^18 subunits per token,
10^9 subunits per gigasubunit -- the unit base fees are quoted in).
Every value here is immutable after construction and safe to share.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

from .errors import ConfigError, Overflow, ZeroRate

RATE_SCALE = 10**9        # fixed-point scale for exchange rates (7.2 -> 7_200_000_000)
GIGA = 10**9              # subunits per gigasubunit
TOKEN = 10**18            # subunits per whole token
U64_MAX = 2**64 - 1
U256_MAX = 2**256 - 1

ADDRESS_LEN = 20
DIGEST_LEN = 32
SIGNATURE_LEN = 64

# Reserved recipient for governance proposal/vote transactions.
GOVERNANCE_ADDRESS = b"\x00" * 19 + b"\x67"

# Gas schedule (fixed; the execution engine is gas-metered but abstract).
GAS_TRANSFER = 21_000
GAS_PAYLOAD_SURCHARGE = 40_000        # flat cost of entering payload execution
GAS_PER_PAYLOAD_BYTE = 16
GAS_GOVERNANCE = 50_000               # flat cost of proposal and vote transactions

# Payloads starting with this byte deterministically revert (fee still charged).
REVERT_MARKER = 0xFE


def is_valid_unit_code(code: str) -> bool:
    """Unit codes are 3-8 uppercase ASCII letters, e.g. "USD"."""
    return (
        isinstance(code, str)
        and 3 <= len(code) <= 8
        and all("A" <= c <= "Z" for c in code)
    )


def checked_add(a: int, b: int) -> int:
    r = a + b
    if r > U256_MAX:
        raise Overflow(f"amount addition overflows: {a} + {b}")
    return r


def checked_sub(a: int, b: int) -> int:
    if b > a:
        raise Overflow(f"amount subtraction underflows: {a} - {b}")
    return a - b


def checked_mul(a: int, b: int) -> int:
    r = a * b
    if r > U256_MAX:
        raise Overflow(f"amount multiplication overflows: {a} * {b}")
    return r


@dataclass(frozen=True)
class Rate:
    """Exchange rate from `base` to `quote`, scaled by 10^9."""

    value: int                # > 0, fits u64
    base: str
    quote: str

    def __post_init__(self):
        if self.value <= 0:
            raise ZeroRate(f"rate must be strictly positive, got {self.value}")
        if self.value > U64_MAX:
            raise ConfigError(f"rate value beyond u64: {self.value}")

    @staticmethod
    def identity(unit: str) -> "Rate":
        return Rate(RATE_SCALE, unit, unit)


def parse_decimal_fixed(text: str, scale: int) -> int:
    """Parse a decimal string into `scale` fixed point without float rounding."""
    text = text.strip()
    digits = len(str(scale)) - 1
    if not text or text[0] == "-":
        raise ValueError(f"not a nonnegative decimal: {text!r}")
    whole, _, frac = text.partition(".")
    if frac and not frac.isdigit():
        raise ValueError(f"not a decimal: {text!r}")
    if len(frac) > digits:
        raise ValueError(f"more than {digits} decimal places: {text!r}")
    if not whole.isdigit():
        raise ValueError(f"not a decimal: {text!r}")
    return int(whole) * scale + int(frac.ljust(digits, "0") or "0")


def parse_rate_decimal(text: str) -> int:
    """Parse a decimal like "7.2" into 10^9 fixed point."""
    return parse_decimal_fixed(text, RATE_SCALE)


def parse_token_decimal(text: str) -> int:
    """Parse a whole-token decimal like "0.5" into 10^18 subunits."""
    return parse_decimal_fixed(text, TOKEN)


def format_fixed(value: int, scale: int = RATE_SCALE) -> str:
    """Render a fixed-point integer as a decimal string, trimming zeros."""
    whole, frac = divmod(value, scale)
    digits = len(str(scale)) - 1
    return f"{whole}.{frac:0{digits}d}".rstrip("0").rstrip(".")


class TxKind(Enum):
    TRANSFER = 0
    PAYLOAD = 1
    PROPOSAL = 2
    VOTE = 3


@dataclass(frozen=True)
class TaggedTransaction:
    """A user transaction tagged with the currency unit its fee settles in.

    `base_fee` and `tip` are per-gas amounts in subunits of `unit`.
    The signature covers every field except `unit` and `kind`: the unit is
    appended by the RPC gateway after signing and is bound to the transaction
    through the base-fee consistency check instead.
    """

    kind: TxKind
    sender: bytes                     # 20-byte address
    recipient: bytes | None           # None = contract-style payload
    nonce: int
    unit: str
    base_fee: int                     # per gas, subunits
    tip: int                          # per gas, subunits
    gas_limit: int
    transfer_amount: int              # subunits
    payload: bytes = b""
    signature: bytes = b"\x00" * SIGNATURE_LEN


@dataclass(frozen=True)
class Block:
    height: int
    proposer: int                     # validator id
    parent_hash: bytes                # 32-byte digest
    transactions: tuple[TaggedTransaction, ...]
    rate_snapshot_height: int
    state_root: bytes                 # 32-byte digest


@dataclass(frozen=True)
class CommitteeSpec:
    """Genesis governance parameters for one currency unit."""

    members: tuple[bytes, ...] = ()
    committee_size: int = 4
    quorum_size: int = 3


@dataclass(frozen=True)
class UpgradeAction:
    """A scheduled config change: add or remove one unit at a block height."""

    height: int
    kind: str                         # "add" | "remove"
    unit: str
    committee: CommitteeSpec = CommitteeSpec()
    force: bool = False               # required to remove a unit with live supply


@dataclass(frozen=True)
class ChainConfig:
    units: tuple[str, ...]
    reference_unit: str = "USD"
    reference_base_fee: int = GIGA                    # subunits per gas
    oracle_sync_interval: int = 10                    # blocks between rate syncs (K)
    validators: tuple[int, ...] = (0, 1, 2, 3)
    block_gas_limit: int = 30_000_000
    chain_id: int = 1337
    proposal_ttl: int = 10_000                        # blocks until an open proposal expires
    genesis_rates: tuple[Rate, ...] = ()              # reference->unit, applied at height 0
    genesis_committees: tuple[tuple[str, CommitteeSpec], ...] = ()
    scheduled_upgrades: tuple[UpgradeAction, ...] = ()

    def __post_init__(self):
        for code in self.units:
            if not is_valid_unit_code(code):
                raise ConfigError(f"bad unit code: {code!r}")
        if len(set(self.units)) != len(self.units):
            raise ConfigError("duplicate unit codes")
        if self.reference_unit not in self.units:
            raise ConfigError(f"reference unit {self.reference_unit} not in units")
        if self.oracle_sync_interval < 1:
            raise ConfigError("oracle sync interval must be >= 1")
        if len(self.validators) < 1:
            raise ConfigError("validator set empty")
        if self.reference_base_fee <= 0:
            raise ConfigError("reference base fee must be positive")

    @property
    def validator_count(self) -> int:
        return len(self.validators)

    def committee_for(self, unit: str) -> CommitteeSpec:
        for code, spec in self.genesis_committees:
            if code == unit:
                return spec
        return CommitteeSpec()


def fault_tolerance(n: int) -> int:
    """Largest Byzantine count a BFT quorum of n equal-weight validators tolerates."""
    return (n - 1) // 3


def quorum_threshold(n: int) -> int:
    """Vote count strictly greater than two thirds of n."""
    return (2 * n) // 3 + 1


def expected_snapshot_height(height: int, sync_interval: int) -> int:
    """Rate snapshot a block at `height` must be validated against.

    Nodes fetch at the start of every K-th height, so blocks k*K .. k*K+K-1
    all use the snapshot taken at k*K and a rate used at height h was read at
    a snapshot inside (h-K, h].
    """
    if height <= 0:
        return 0
    return (height // sync_interval) * sync_interval


# --- modeled identities -------------------------------------------------
# Key pairs are identity plumbing here, not real cryptography: a "secret" is a
# deterministic 32-byte value and signatures are keyed digests over canonical
# payloads (see encoding.sign_payload). Addresses derive from the secret.

def account_key(label: str) -> bytes:
    return hashlib.sha256(b"polyfee-account-key:" + label.encode()).digest()


def validator_key(validator_id: int) -> bytes:
    return hashlib.sha256(b"polyfee-validator-key:" + str(validator_id).encode()).digest()


def address_of(key: bytes) -> bytes:
    return hashlib.sha256(b"polyfee-address:" + key).digest()[:ADDRESS_LEN]


def account_address(label: str) -> bytes:
    return address_of(account_key(label))


def validator_address(validator_id: int) -> bytes:
    return address_of(validator_key(validator_id))


@dataclass
class KeyRegistry:
    """World-visible address -> signing key map (the modeled PKI).

    Real deployments would verify recoverable signatures; the simulation keeps
    a registry so honest nodes can check keyed digests.
    """

    keys: dict[bytes, bytes] = field(default_factory=dict)

    def register(self, key: bytes) -> bytes:
        addr = address_of(key)
        self.keys[addr] = key
        return addr

    def key_for(self, address: bytes) -> bytes | None:
        return self.keys.get(address)

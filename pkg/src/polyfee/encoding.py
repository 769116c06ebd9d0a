"""Canonical binary encoding, digests, and modeled signatures.

The wire form is a length-prefixed, field-ordered byte layout (documented in
docs/encoding.md): fixed-width big-endian integers, u32 length prefixes for
byte strings, a presence byte for optionals. It is intentionally not RLP.
Digests are SHA-256 over the canonical bytes; signatures are HMAC-SHA512
keyed digests over the unsigned payload (modeled crypto, see KeyRegistry).
"""

from __future__ import annotations

import hashlib
import hmac
from functools import lru_cache

from .errors import MalformedAddress, MalformedBody
from .types import (
    ADDRESS_LEN,
    DIGEST_LEN,
    SIGNATURE_LEN,
    U64_MAX,
    U256_MAX,
    Block,
    TaggedTransaction,
    TxKind,
)


def u8(v: int) -> bytes:
    return v.to_bytes(1, "big")


def u32(v: int) -> bytes:
    return v.to_bytes(4, "big")


def u64(v: int) -> bytes:
    if not 0 <= v <= U64_MAX:
        raise MalformedBody(f"value out of u64 range: {v}")
    return v.to_bytes(8, "big")


def u256(v: int) -> bytes:
    if not 0 <= v <= U256_MAX:
        raise MalformedBody(f"value out of u256 range: {v}")
    return v.to_bytes(32, "big")


def blob(data: bytes) -> bytes:
    return u32(len(data)) + data


def text(s: str) -> bytes:
    return blob(s.encode("ascii"))


def opt_address(addr: bytes | None) -> bytes:
    if addr is None:
        return b"\x00"
    if len(addr) != ADDRESS_LEN:
        raise MalformedAddress(f"address must be {ADDRESS_LEN} bytes, got {len(addr)}")
    return b"\x01" + addr


class Reader:
    """Sequential decoder over one canonical byte string."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise MalformedBody("truncated encoding")
        chunk = self._data[self._pos : self._pos + n]
        self._pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "big")

    def u64(self) -> int:
        return int.from_bytes(self.take(8), "big")

    def u256(self) -> int:
        return int.from_bytes(self.take(32), "big")

    def blob(self) -> bytes:
        return self.take(self.u32())

    def text(self) -> str:
        raw = self.blob()
        try:
            return raw.decode("ascii")
        except UnicodeDecodeError as exc:
            raise MalformedBody("non-ascii text field") from exc

    def opt_address(self) -> bytes | None:
        flag = self.u8()
        if flag == 0:
            return None
        if flag != 1:
            raise MalformedBody(f"bad optional flag {flag}")
        return self.take(ADDRESS_LEN)

    def done(self) -> bool:
        return self._pos == len(self._data)

    def expect_done(self):
        if not self.done():
            raise MalformedBody("trailing bytes after encoding")


# --- transactions --------------------------------------------------------

def signing_payload(tx: TaggedTransaction) -> bytes:
    """The byte string a sender signs: every field except unit, kind, signature.

    Leaving the unit out lets an unmodified wallet sign first and the per-unit
    RPC gateway tag afterwards; the unit is then bound to the signed base fee
    by the base-fee consistency check during validation.
    """
    return b"".join(
        (
            b"polyfee-tx:",
            tx.sender,
            opt_address(tx.recipient),
            u64(tx.nonce),
            u256(tx.base_fee),
            u256(tx.tip),
            u64(tx.gas_limit),
            u256(tx.transfer_amount),
            blob(tx.payload),
        )
    )


def encode_transaction(tx: TaggedTransaction) -> bytes:
    if len(tx.sender) != ADDRESS_LEN:
        raise MalformedAddress("sender must be a 20-byte address")
    return b"".join(
        (
            u8(tx.kind.value),
            text(tx.unit),
            tx.sender,
            opt_address(tx.recipient),
            u64(tx.nonce),
            u256(tx.base_fee),
            u256(tx.tip),
            u64(tx.gas_limit),
            u256(tx.transfer_amount),
            blob(tx.payload),
            blob(tx.signature),
        )
    )


def read_transaction(r: Reader) -> TaggedTransaction:
    kind = TxKind(r.u8())
    unit = r.text()
    sender = r.take(ADDRESS_LEN)
    recipient = r.opt_address()
    nonce = r.u64()
    base_fee = r.u256()
    tip = r.u256()
    gas_limit = r.u64()
    transfer_amount = r.u256()
    payload = r.blob()
    signature = r.blob()
    return TaggedTransaction(
        kind=kind,
        sender=sender,
        recipient=recipient,
        nonce=nonce,
        unit=unit,
        base_fee=base_fee,
        tip=tip,
        gas_limit=gas_limit,
        transfer_amount=transfer_amount,
        payload=payload,
        signature=signature,
    )


def decode_transaction(data: bytes) -> TaggedTransaction:
    r = Reader(data)
    tx = read_transaction(r)
    r.expect_done()
    return tx


# --- blocks ---------------------------------------------------------------

def encode_block(block: Block) -> bytes:
    if len(block.parent_hash) != DIGEST_LEN or len(block.state_root) != DIGEST_LEN:
        raise MalformedBody("block digests must be 32 bytes")
    parts = [
        b"polyfee-block:",
        u64(block.height),
        u64(block.proposer),
        block.parent_hash,
        u64(block.rate_snapshot_height),
        block.state_root,
        u32(len(block.transactions)),
    ]
    parts.extend(encode_transaction(tx) for tx in block.transactions)
    return b"".join(parts)


def decode_block(data: bytes) -> Block:
    r = Reader(data)
    if r.take(len(b"polyfee-block:")) != b"polyfee-block:":
        raise MalformedBody("missing block prefix")
    height = r.u64()
    proposer = r.u64()
    parent_hash = r.take(DIGEST_LEN)
    rate_snapshot_height = r.u64()
    state_root = r.take(DIGEST_LEN)
    count = r.u32()
    txs = tuple(read_transaction(r) for _ in range(count))
    r.expect_done()
    return Block(
        height=height,
        proposer=proposer,
        parent_hash=parent_hash,
        transactions=txs,
        rate_snapshot_height=rate_snapshot_height,
        state_root=state_root,
    )


# --- digests and signatures ------------------------------------------------

@lru_cache(maxsize=8192)
def canonical_digest(value: Block | TaggedTransaction) -> bytes:
    """Deterministic 32-byte digest over the full canonical encoding."""
    if isinstance(value, Block):
        return hashlib.sha256(encode_block(value)).digest()
    return hashlib.sha256(encode_transaction(value)).digest()


def sign_payload(key: bytes, payload: bytes) -> bytes:
    return hmac.new(key, payload, hashlib.sha512).digest()


def sign_transaction(tx: TaggedTransaction, key: bytes) -> TaggedTransaction:
    from dataclasses import replace

    return replace(tx, signature=sign_payload(key, signing_payload(tx)))


def verify_transaction_signature(tx: TaggedTransaction, key: bytes) -> bool:
    return hmac.compare_digest(tx.signature, sign_payload(key, signing_payload(tx)))


def signature_well_formed(sig: bytes) -> bool:
    return len(sig) == SIGNATURE_LEN and any(sig)


# --- hex helpers -----------------------------------------------------------

def to_hex(data: bytes) -> str:
    return "0x" + data.hex()


def from_hex(textual: str, expect_len: int | None = None) -> bytes:
    if not isinstance(textual, str) or not textual.startswith("0x"):
        raise MalformedAddress(f"expected 0x-prefixed hex, got {textual!r}")
    try:
        raw = bytes.fromhex(textual[2:])
    except ValueError as exc:
        raise MalformedAddress(f"bad hex string {textual!r}") from exc
    if expect_len is not None and len(raw) != expect_len:
        raise MalformedAddress(f"expected {expect_len} bytes, got {len(raw)}")
    return raw


def quantity_hex(value: int) -> str:
    """Ethereum-style hex quantity: 0x-prefixed, no leading zeros."""
    return hex(value)


def parse_quantity(textual: str) -> int:
    if not isinstance(textual, str) or not textual.startswith("0x"):
        raise MalformedBody(f"expected hex quantity, got {textual!r}")
    return int(textual, 16)

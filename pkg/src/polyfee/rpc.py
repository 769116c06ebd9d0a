"""Per-currency JSON-RPC gateways with Ethereum wire conventions.

Each endpoint serves exactly one currency unit: balances, gas prices, and
receipts it returns are denominated in that unit only, and every transaction
submitted through it gets tagged with that unit. Clients stay unmodified:
they sign a unit-less envelope (nonce, fees, value, payload) and the gateway
appends the unit and forwards to its backing node. The envelope's gas price
field is overwritten with the endpoint quote; a client that signed a
different price fails signature validation downstream.

Quantities are 0x-hex strings; request/response ids echo per JSON-RPC 2.0.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .consensus import Node
from .encoding import (
    Reader,
    blob,
    from_hex,
    opt_address,
    parse_quantity,
    quantity_hex,
    sign_payload,
    to_hex,
    u64,
    u256,
)
from .errors import ChainError, MalformedAddress, MalformedBody, MissingRate
from .ledger import TxStatus, classify
from .types import ADDRESS_LEN, SIGNATURE_LEN, TaggedTransaction


@dataclass(frozen=True)
class ClientTxEnvelope:
    """What an unmodified Ethereum-style wallet signs and submits: no unit."""

    sender: bytes
    recipient: bytes | None
    nonce: int
    max_fee_per_gas: int          # wallet sets this to the endpoint's gas price
    tip_per_gas: int
    gas_limit: int
    value: int
    payload: bytes = b""
    signature: bytes = b"\x00" * SIGNATURE_LEN


def envelope_signing_bytes(env: ClientTxEnvelope) -> bytes:
    """Byte-identical to the tagged transaction's signing payload, so the
    client signature stays valid after the gateway appends the unit."""
    return b"".join(
        (
            b"polyfee-tx:",
            env.sender,
            opt_address(env.recipient),
            u64(env.nonce),
            u256(env.max_fee_per_gas),
            u256(env.tip_per_gas),
            u64(env.gas_limit),
            u256(env.value),
            blob(env.payload),
        )
    )


def sign_envelope(env: ClientTxEnvelope, key: bytes) -> ClientTxEnvelope:
    return replace(env, signature=sign_payload(key, envelope_signing_bytes(env)))


def encode_envelope(env: ClientTxEnvelope) -> bytes:
    return b"".join(
        (
            env.sender,
            opt_address(env.recipient),
            u64(env.nonce),
            u256(env.max_fee_per_gas),
            u256(env.tip_per_gas),
            u64(env.gas_limit),
            u256(env.value),
            blob(env.payload),
            blob(env.signature),
        )
    )


def decode_envelope(data: bytes) -> ClientTxEnvelope:
    r = Reader(data)
    sender = r.take(ADDRESS_LEN)
    recipient = r.opt_address()
    nonce = r.u64()
    max_fee = r.u256()
    tip = r.u256()
    gas_limit = r.u64()
    value = r.u256()
    payload = r.blob()
    signature = r.blob()
    r.expect_done()
    return ClientTxEnvelope(
        sender=sender,
        recipient=recipient,
        nonce=nonce,
        max_fee_per_gas=max_fee,
        tip_per_gas=tip,
        gas_limit=gas_limit,
        value=value,
        payload=payload,
        signature=signature,
    )


def tag_envelope(env: ClientTxEnvelope, unit: str, base_fee: int) -> TaggedTransaction:
    """Attach the endpoint's unit and quoted base fee to a client envelope."""
    return TaggedTransaction(
        kind=classify(env.recipient, env.payload),
        sender=env.sender,
        recipient=env.recipient,
        nonce=env.nonce,
        unit=unit,
        base_fee=base_fee,
        tip=env.tip_per_gas,
        gas_limit=env.gas_limit,
        transfer_amount=env.value,
        payload=env.payload,
        signature=env.signature,
    )


class RpcEndpoint:
    """One currency unit's JSON-RPC surface over a backing node."""

    def __init__(self, unit: str, node: Node, submit=None, lock: threading.Lock | None = None):
        self.unit = unit
        self.node = node
        self._submit = submit or (lambda tx: _local_submit(node, tx))
        self._lock = lock or threading.Lock()

    # --- raw operations (also usable without JSON-RPC framing) ---

    def get_balance(self, address: bytes) -> int:
        if len(address) != ADDRESS_LEN:
            raise MalformedAddress(f"expected {ADDRESS_LEN}-byte address")
        return self.node.state.balance_of(address, self.unit)

    def get_nonce(self, address: bytes, pending: bool = False) -> int:
        nonce = self.node.state.nonce_of(address)
        if pending:
            chain = self.node.mempool.by_sender.get(address, {})
            while nonce in chain:
                nonce += 1
        return nonce

    def gas_price(self) -> int:
        return self.node.gas_price(self.unit)

    def send_transaction(self, env: ClientTxEnvelope) -> bytes:
        tx = tag_envelope(env, self.unit, self.gas_price())
        return self._submit(tx)

    def get_receipt(self, digest: bytes):
        receipt = self.node.receipts.get(digest)
        if receipt is None or receipt.unit != self.unit:
            return None   # unit-filtered: this endpoint never shows foreign amounts
        return receipt

    # --- JSON-RPC dispatcher ---

    def handle(self, request: dict) -> dict:
        req_id = request.get("id")
        method = request.get("method")
        params = request.get("params") or []
        with self._lock:
            try:
                result = self._dispatch(method, params)
            except MalformedAddress as exc:
                return _error(req_id, -32602, f"MalformedAddress: {exc}")
            except MissingRate as exc:
                return _error(req_id, -32000, f"MissingRate: {exc}")
            except ChainError as exc:
                return _error(req_id, -32000, f"{type(exc).__name__}: {exc}")
            except _UnknownMethod as exc:
                return _error(req_id, -32601, str(exc))
        return {"jsonrpc": "2.0", "id": req_id, "result": result}

    def _dispatch(self, method: str, params: list):
        if method == "eth_chainId":
            return quantity_hex(self.node.config.chain_id)
        if method == "eth_blockNumber":
            return quantity_hex(self.node.committed_height)
        if method == "eth_getBalance":
            return quantity_hex(self.get_balance(from_hex(params[0], ADDRESS_LEN)))
        if method == "eth_getTransactionCount":
            pending = len(params) > 1 and params[1] == "pending"
            return quantity_hex(self.get_nonce(from_hex(params[0], ADDRESS_LEN), pending))
        if method == "eth_gasPrice":
            return quantity_hex(self.gas_price())
        if method == "eth_sendRawTransaction":
            try:
                env = decode_envelope(from_hex(params[0]))
            except ChainError as exc:
                raise MalformedBody(f"undecodable raw transaction: {exc}") from exc
            return to_hex(self.send_transaction(env))
        if method == "eth_getTransactionReceipt":
            receipt = self.get_receipt(from_hex(params[0], 32))
            return None if receipt is None else _receipt_json(receipt)
        if method == "eth_getBlockByNumber":
            return self._block_json(params[0])
        raise _UnknownMethod(f"method {method!r} not found")

    def _block_json(self, tag):
        height = self.node.committed_height if tag == "latest" else parse_quantity(tag)
        block = self.node.block_at(height)
        if block is None:
            return None
        from .encoding import canonical_digest

        return {
            "number": quantity_hex(block.height),
            "hash": to_hex(canonical_digest(block)),
            "parentHash": to_hex(block.parent_hash),
            "stateRoot": to_hex(block.state_root),
            "miner": quantity_hex(block.proposer),
            "transactions": [to_hex(canonical_digest(tx)) for tx in block.transactions],
        }


class _UnknownMethod(Exception):
    pass


def _error(req_id, code: int, message: str) -> dict:
    return {"jsonrpc": "2.0", "id": req_id, "error": {"code": code, "message": message}}


def _receipt_json(receipt) -> dict:
    gas_price = receipt.fee_charged // receipt.gas_used if receipt.gas_used else 0
    return {
        "transactionHash": to_hex(receipt.tx_digest),
        "status": quantity_hex(1 if receipt.status is TxStatus.SUCCESS else 0),
        "gasUsed": quantity_hex(receipt.gas_used),
        "effectiveGasPrice": quantity_hex(gas_price),
        "blockNumber": quantity_hex(receipt.block_height),
        "fee": quantity_hex(receipt.fee_charged),
        "feeUnit": receipt.unit,
    }


def _local_submit(node: Node, tx: TaggedTransaction) -> bytes:
    from .encoding import canonical_digest
    from .errors import MempoolRejected

    ok, reason, _ = node.submit_transaction(tx)
    if not ok:
        raise MempoolRejected(reason)
    return canonical_digest(tx)


class RpcHttpServer:
    """Minimal HTTP wrapper for live-demo mode; tests drive handle() directly."""

    def __init__(self, endpoint: RpcEndpoint, host: str = "127.0.0.1", port: int = 0):
        self.endpoint = endpoint
        handler = self._make_handler()
        self._server = ThreadingHTTPServer((host, port), handler)
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def _make_handler(self):
        endpoint = self.endpoint

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", "0"))
                try:
                    request = json.loads(self.rfile.read(length))
                    response = endpoint.handle(request)
                except Exception as exc:  # malformed JSON and such
                    response = _error(None, -32700, f"parse error: {exc}")
                body = json.dumps(response).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        return Handler

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def stop(self):
        self._server.shutdown()
        self._server.server_close()

import json

import pytest

from polyfee.encoding import canonical_digest, from_hex, parse_quantity, to_hex
from polyfee.rpc import (
    ClientTxEnvelope,
    RpcEndpoint,
    decode_envelope,
    encode_envelope,
    sign_envelope,
    tag_envelope,
)
from polyfee.simnet import SimParams, World
from polyfee.state import ChainState
from polyfee.types import (
    GIGA,
    TOKEN,
    account_address,
    account_key,
)

from conftest import ALICE, BOB, make_config, make_state, make_tx

FAST = dict(gst_ms=0, delta_ms=10, base_timeout_ms=100, block_interval_ms=10)
CNY_FEE = 7_200_000_000


class Gateway:
    """A world plus one endpoint per unit, submission routed through node 0."""

    def __init__(self, config=None, state=None, seed=21):
        self.config = config or make_config()
        state = state if state is not None else make_state(
            self.config, alice_USD=100_000, alice_CNY=200_000
        )
        self.world = World(self.config, SimParams(seed=seed, **FAST), state)
        for label in ("alice", "bob"):
            self.world.registry.register(account_key(label))
        self.endpoints = {
            unit: RpcEndpoint(unit, self.world.nodes[0], submit=self._submit)
            for unit in self.config.units
        }

    def _submit(self, tx):
        ok, reason = self.world.submit_via_node(0, tx)
        if not ok:
            from polyfee.errors import MempoolRejected

            raise MempoolRejected(reason)
        return canonical_digest(tx)

    def run_until_committed(self, *digests, floor=3):
        node = self.world.nodes[0]

        def done():
            return (
                self.world.min_honest_height() >= floor
                and all(d in node.receipts for d in digests)
            )

        self.world.step_until(60_000, stop_when=done)


def rpc(endpoint, method, *params, req_id=1):
    return endpoint.handle({"jsonrpc": "2.0", "id": req_id, "method": method, "params": list(params)})


def wallet_send(endpoint, sender_label, recipient, value=0, tip=0, gas_limit=21_000, payload=b""):
    """The standard client flow: count, price, sign, send raw."""
    sender = account_address(sender_label)
    nonce = parse_quantity(rpc(endpoint, "eth_getTransactionCount", to_hex(sender), "pending")["result"])
    price = parse_quantity(rpc(endpoint, "eth_gasPrice")["result"])
    env = ClientTxEnvelope(
        sender=sender,
        recipient=recipient,
        nonce=nonce,
        max_fee_per_gas=price,
        tip_per_gas=tip,
        gas_limit=gas_limit,
        value=value,
        payload=payload,
    )
    env = sign_envelope(env, account_key(sender_label))
    response = rpc(endpoint, "eth_sendRawTransaction", to_hex(encode_envelope(env)))
    return response


def test_envelope_round_trip():
    env = sign_envelope(
        ClientTxEnvelope(ALICE, BOB, 3, GIGA, GIGA // 2, 21_000, 7 * TOKEN, b"\x01\x02"),
        account_key("alice"),
    )
    assert decode_envelope(encode_envelope(env)) == env


def test_tagging_preserves_client_signature():
    from polyfee.encoding import verify_transaction_signature

    env = sign_envelope(
        ClientTxEnvelope(ALICE, BOB, 0, GIGA, 0, 21_000, 0), account_key("alice")
    )
    tagged_usd = tag_envelope(env, "USD", GIGA)
    tagged_cny = tag_envelope(env, "CNY", GIGA)   # same quote, different unit
    assert verify_transaction_signature(tagged_usd, account_key("alice"))
    assert verify_transaction_signature(tagged_cny, account_key("alice"))


def test_balances_are_per_endpoint():
    gw = Gateway()
    usd = rpc(gw.endpoints["USD"], "eth_getBalance", to_hex(ALICE))
    cny = rpc(gw.endpoints["CNY"], "eth_getBalance", to_hex(ALICE))
    assert parse_quantity(usd["result"]) == 100_000 * TOKEN
    assert parse_quantity(cny["result"]) == 200_000 * TOKEN
    assert usd["id"] == 1 and usd["jsonrpc"] == "2.0"


def test_unknown_address_reads_zero():
    gw = Gateway()
    result = rpc(gw.endpoints["USD"], "eth_getBalance", to_hex(account_address("nobody")))
    assert parse_quantity(result["result"]) == 0


def test_malformed_address_is_an_error():
    gw = Gateway()
    response = rpc(gw.endpoints["USD"], "eth_getBalance", "0x1234")
    assert response["error"]["code"] == -32602


def test_gas_price_per_unit():
    gw = Gateway()
    assert parse_quantity(rpc(gw.endpoints["USD"], "eth_gasPrice")["result"]) == GIGA
    assert parse_quantity(rpc(gw.endpoints["CNY"], "eth_gasPrice")["result"]) == CNY_FEE


def test_chain_id_shared_across_endpoints():
    gw = Gateway()
    ids = {rpc(ep, "eth_chainId")["result"] for ep in gw.endpoints.values()}
    assert ids == {hex(gw.config.chain_id)}


def test_unknown_method_code():
    gw = Gateway()
    assert rpc(gw.endpoints["USD"], "eth_call")["error"]["code"] == -32601


def test_send_tags_endpoint_unit_and_scales_fee():
    gw = Gateway()
    sent_usd = wallet_send(gw.endpoints["USD"], "alice", BOB)
    sent_cny = wallet_send(gw.endpoints["CNY"], "alice", BOB)
    d_usd = from_hex(sent_usd["result"], 32)
    d_cny = from_hex(sent_cny["result"], 32)
    gw.run_until_committed(d_usd, d_cny)

    r_usd = rpc(gw.endpoints["USD"], "eth_getTransactionReceipt", sent_usd["result"])["result"]
    r_cny = rpc(gw.endpoints["CNY"], "eth_getTransactionReceipt", sent_cny["result"])["result"]
    assert r_usd["feeUnit"] == "USD" and r_cny["feeUnit"] == "CNY"
    fee_usd = parse_quantity(r_usd["fee"])
    fee_cny = parse_quantity(r_cny["fee"])
    assert fee_cny * GIGA == fee_usd * CNY_FEE    # 7.2x in exact fixed point
    assert parse_quantity(r_usd["gasUsed"]) == 21_000


def test_nonce_too_low_rejected_at_gateway():
    gw = Gateway()
    env = sign_envelope(
        ClientTxEnvelope(ALICE, BOB, 0, GIGA, 0, 21_000, 0), account_key("alice")
    )
    raw = to_hex(encode_envelope(env))
    first = rpc(gw.endpoints["USD"], "eth_sendRawTransaction", raw)
    gw.run_until_committed(from_hex(first["result"], 32))
    retry = rpc(gw.endpoints["USD"], "eth_sendRawTransaction", raw)
    assert "NonceTooLow" in retry["error"]["message"]


def test_wrong_gas_price_breaks_signature():
    gw = Gateway()
    env = sign_envelope(
        ClientTxEnvelope(ALICE, BOB, 0, GIGA + 1, 0, 21_000, 0), account_key("alice")
    )
    response = rpc(gw.endpoints["USD"], "eth_sendRawTransaction", to_hex(encode_envelope(env)))
    assert "BadSignature" in response["error"]["message"]


def test_pending_and_unknown_receipts_read_as_null():
    gw = Gateway()
    unknown = rpc(gw.endpoints["USD"], "eth_getTransactionReceipt", to_hex(b"\x01" * 32))
    assert unknown["result"] is None
    sent = wallet_send(gw.endpoints["USD"], "alice", BOB)
    pending = rpc(gw.endpoints["USD"], "eth_getTransactionReceipt", sent["result"])
    assert pending["result"] is None    # not yet committed


def test_receipts_are_unit_filtered():
    gw = Gateway()
    sent = wallet_send(gw.endpoints["CNY"], "alice", BOB)
    gw.run_until_committed(from_hex(sent["result"], 32))
    via_cny = rpc(gw.endpoints["CNY"], "eth_getTransactionReceipt", sent["result"])
    via_usd = rpc(gw.endpoints["USD"], "eth_getTransactionReceipt", sent["result"])
    assert via_cny["result"] is not None
    assert via_usd["result"] is None    # no foreign-unit amounts ever leak


def test_block_by_number_lists_tx_hashes_only():
    gw = Gateway()
    sent = wallet_send(gw.endpoints["USD"], "alice", BOB)
    gw.run_until_committed(from_hex(sent["result"], 32))
    receipt = rpc(gw.endpoints["USD"], "eth_getTransactionReceipt", sent["result"])["result"]
    block = rpc(gw.endpoints["USD"], "eth_getBlockByNumber", receipt["blockNumber"], False)["result"]
    assert sent["result"] in block["transactions"]
    latest = rpc(gw.endpoints["USD"], "eth_blockNumber")["result"]
    assert parse_quantity(latest) >= parse_quantity(receipt["blockNumber"])


def test_zero_amount_fee_matches_published_quote():
    # base fee chosen so a 21,000-gas transfer costs 0.22315 tokens at 5 decimals
    per_gas = 10_626_190_476_190
    config = make_config(reference_base_fee=per_gas)
    state = make_state(config, alice_USD=100_000, alice_CNY=200_000)
    gw = Gateway(config=config, state=state)
    sent = wallet_send(gw.endpoints["USD"], "alice", BOB)
    gw.run_until_committed(from_hex(sent["result"], 32))
    receipt = rpc(gw.endpoints["USD"], "eth_getTransactionReceipt", sent["result"])["result"]
    fee = parse_quantity(receipt["fee"])
    assert fee == per_gas * 21_000
    # rounded half-up at 5 decimal places the charge reads 0.22315 tokens
    assert (fee * 10**5 + TOKEN // 2) // TOKEN == 22315


def test_http_round_trip_smoke():
    from polyfee.rpc import RpcHttpServer
    import urllib.request

    gw = Gateway()
    try:
        server = RpcHttpServer(gw.endpoints["USD"], port=0)
        server.start()
    except OSError:
        pytest.skip("sockets unavailable in sandbox")
    try:
        body = json.dumps(
            {"jsonrpc": "2.0", "id": 9, "method": "eth_getBalance", "params": [to_hex(ALICE)]}
        ).encode()
        request = urllib.request.Request(
            f"http://127.0.0.1:{server.port}", data=body, headers={"Content-Type": "application/json"}
        )
        with urllib.request.urlopen(request, timeout=5) as resp:
            payload = json.loads(resp.read())
        assert payload["id"] == 9
        assert parse_quantity(payload["result"]) == 100_000 * TOKEN
    finally:
        server.stop()

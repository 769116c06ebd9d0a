"""Seeded, deterministic multi-node simulation under partial synchrony.

One event loop owns every node. Messages carry integer-millisecond delivery
times drawn from a seeded RNG: before the global stabilization time (GST)
delays are arbitrary but finite, afterwards every message lands within delta.
Events at equal times break ties by insertion sequence, so a run is a pure
function of (config, seed). Byzantine behavior plugs in per node as a
strategy that rewrites outbound traffic or the blocks a proposer builds.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field, replace

from .consensus import (
    Broadcast,
    Message,
    Node,
    Outbound,
    ProposalMsg,
    Timer,
    VoteMsg,
    sign_proposal,
    sign_vote,
)
from .encoding import canonical_digest, sign_transaction
from .errors import MissingRate
from .fees import base_fee_for_unit
from .oracle import FeedContractState, feed_update
from .state import ChainState
from .types import (
    Block,
    ChainConfig,
    KeyRegistry,
    Rate,
    TaggedTransaction,
    TxKind,
    account_key,
    address_of,
    validator_address,
    validator_key,
)

FEEDER_LABEL = "rate-feeder"


@dataclass(frozen=True)
class SimParams:
    seed: int
    gst_ms: int | None = 0            # None = stabilization never happens
    delta_ms: int = 40                # post-GST delivery bound
    pre_gst_max_ms: int = 400         # pre-GST delays are uniform in [1, this]
    base_timeout_ms: int = 200
    block_interval_ms: int = 50


@dataclass(frozen=True)
class ByzantineStrategy:
    """What a flagged validator does instead of following the protocol.

    kinds: "silence" sends nothing at all; "equivocate" shows different
    proposals and votes to different peers; "pack_invalid" proposes blocks
    holding a forged junk transaction; "unit_tamper" flips the currency
    unit of a packed transaction (or self-signs one whose base fee belongs
    to another unit), the exact mismatch validators must catch.
    """

    kind: str
    params: dict = field(default_factory=dict)


class ByzantineActor:
    """Per-validator strategy state; tracks what it corrupted for later checks."""

    def __init__(self, strategy: ByzantineStrategy, node: Node):
        self.strategy = strategy
        self.node = node
        self.tampered_tx_digests: set[bytes] = set()
        self.tampered_block_digests: set[bytes] = set()

    def rewrite_block(self, block: Block) -> Block:
        kind = self.strategy.kind
        if kind == "pack_invalid":
            junk = TaggedTransaction(
                kind=TxKind.TRANSFER,
                sender=b"\x11" * 20,
                recipient=b"\x22" * 20,
                nonce=0,
                unit=self.node.config.units[0],
                base_fee=self.node.config.reference_base_fee,
                tip=0,
                gas_limit=21_000,
                transfer_amount=1,
                signature=b"\x01" * 64,
            )
            bad = replace(block, transactions=block.transactions + (junk,))
            self.tampered_block_digests.add(canonical_digest(bad))
            return bad
        if kind == "unit_tamper":
            bad = self._tamper_unit(block)
            if bad is not None:
                self.tampered_block_digests.add(canonical_digest(bad))
                return bad
        return block

    def _tamper_unit(self, block: Block) -> Block | None:
        units = self.node.config.units
        if len(units) < 2:
            return None
        for index, tx in enumerate(block.transactions):
            other = next((u for u in units if u != tx.unit), None)
            if other is None:
                continue
            flipped = replace(tx, unit=other)
            self.tampered_tx_digests.add(canonical_digest(flipped))
            txs = list(block.transactions)
            txs[index] = flipped
            return replace(block, transactions=tuple(txs))
        # Nothing pending to corrupt: self-sign a transaction carrying the
        # base fee of a different unit. The signature is genuine, so only the
        # unit/base-fee consistency check can reject it.
        me = self.node.vid
        unit, wrong = units[0], units[1]
        try:
            wrong_fee = base_fee_for_unit(wrong, self.node.table, self.node.config).base_fee_per_gas
        except MissingRate:
            return None
        if wrong_fee == base_fee_for_unit(unit, self.node.table, self.node.config).base_fee_per_gas:
            return None
        forged = TaggedTransaction(
            kind=TxKind.TRANSFER,
            sender=validator_address(me),
            recipient=b"\x33" * 20,
            nonce=self.node.state.nonce_of(validator_address(me)),
            unit=unit,
            base_fee=wrong_fee,
            tip=0,
            gas_limit=21_000,
            transfer_amount=0,
        )
        forged = sign_transaction(forged, validator_key(me))
        self.tampered_tx_digests.add(canonical_digest(forged))
        return replace(block, transactions=block.transactions + (forged,))

    def plan_sends(self, out: list[Outbound], peers: list[int]) -> list[tuple[int, Message]]:
        """Turn Broadcast items into explicit per-peer sends per the strategy."""
        if self.strategy.kind == "silence":
            return []
        sends: list[tuple[int, Message]] = []
        for item in out:
            if not isinstance(item, Broadcast):
                continue
            msg = item.msg
            if self.strategy.kind == "equivocate" and isinstance(msg, (ProposalMsg, VoteMsg)):
                variant = self._equivocation_variant(msg)
                half = len(peers) // 2
                sends.extend((target, msg) for target in peers[:half])
                sends.extend((target, variant) for target in peers[half:])
            else:
                sends.extend((target, msg) for target in peers)
        return sends

    def _equivocation_variant(self, msg: Message) -> Message:
        if isinstance(msg, ProposalMsg):
            alt_block = replace(msg.block, transactions=())
            if canonical_digest(alt_block) == canonical_digest(msg.block):
                alt_block = replace(alt_block, state_root=b"\xee" * 32)
            self.tampered_block_digests.add(canonical_digest(alt_block))
            return sign_proposal(ProposalMsg(msg.height, msg.round, alt_block, msg.proposer))
        alt_digest = None if msg.block_digest is not None else b"\xee" * 32
        return sign_vote(VoteMsg(msg.vote_type, msg.height, msg.round, alt_digest, msg.voter))


@dataclass(order=True)
class _Event:
    time: int
    seq: int
    kind: str = field(compare=False)              # "deliver" | "timeout" | "call"
    target: int = field(compare=False, default=-1)
    payload: object = field(compare=False, default=None)


class World:
    """Validators, the shared rate feed, and the event queue driving them."""

    def __init__(
        self,
        config: ChainConfig,
        params: SimParams,
        genesis_state: ChainState,
        byzantine: dict[int, ByzantineStrategy] | None = None,
    ):
        self.config = config
        self.params = params
        self.rng = random.Random(params.seed)
        self.time = 0
        self._seq = 0
        self._queue: list[_Event] = []

        self.registry = KeyRegistry()
        feeder_key = account_key(FEEDER_LABEL)
        self.registry.register(feeder_key)
        self.feeder = address_of(feeder_key)
        self.feed = FeedContractState(authorized_feeder=self.feeder)
        for rate in config.genesis_rates:
            self.feed = feed_update(self.feed, (rate.base, rate.quote), rate, 0, self.feeder)

        for vid in config.validators:
            self.registry.register(validator_key(vid))

        self.nodes: dict[int, Node] = {}
        self.byzantine: dict[int, ByzantineActor] = {}
        for vid in config.validators:
            node = Node(
                vid,
                config,
                genesis_state,
                self.feed,
                self.registry,
                base_timeout_ms=params.base_timeout_ms,
                block_interval_ms=params.block_interval_ms,
            )
            self.nodes[vid] = node
            strategy = (byzantine or {}).get(vid)
            if strategy is not None:
                self.byzantine[vid] = ByzantineActor(strategy, node)

        self.committed: dict[int, bytes] = {}          # height -> first committed digest
        self.safety_violations: list[str] = []
        self._checked_height: dict[int, int] = {vid: 0 for vid in self.nodes}

        for vid in sorted(self.nodes):
            self._emit(vid, self.nodes[vid].start())

    # --- feed plumbing ----------------------------------------------------

    def preload_rate_series(self, entries: list[tuple[int, str, int]]):
        """Stamp scripted feed updates into the contract before the run starts.

        Entries carry activation heights, so a node syncing at height h only
        ever observes updates stamped at or below h.
        """
        reference = self.config.reference_unit
        for height, unit, value in entries:
            rate = Rate(value, reference, unit)
            self.feed = feed_update(self.feed, (reference, unit), rate, height, self.feeder)
        for node in self.nodes.values():
            node.refresh_feed(self.feed)

    # --- event machinery ----------------------------------------------------

    def _push(self, time: int, kind: str, target: int, payload: object):
        self._seq += 1
        heapq.heappush(self._queue, _Event(time, self._seq, kind, target, payload))

    def _delay(self) -> int:
        gst = self.params.gst_ms
        if gst is None:
            return self.rng.randint(1, self.params.pre_gst_max_ms)
        if self.time >= gst:
            return self.rng.randint(1, self.params.delta_ms)
        raw = self.time + self.rng.randint(1, self.params.pre_gst_max_ms)
        capped = gst + self.rng.randint(1, self.params.delta_ms)
        return min(raw, capped) - self.time

    def _emit(self, sender: int, out: list[Outbound]):
        peers = sorted(self.nodes)
        actor = self.byzantine.get(sender)
        if actor is not None:
            out = [self._maybe_tamper(actor, item) for item in out]
            for target, msg in actor.plan_sends(out, peers):
                delay = 0 if target == sender else max(1, self._delay())
                self._push(self.time + delay, "deliver", target, msg)
            for item in out:
                if isinstance(item, Timer):
                    self._push(self.time + item.delay_ms, "timeout", sender, item.key)
            return
        for item in out:
            if isinstance(item, Broadcast):
                for target in peers:
                    delay = 0 if target == sender else max(1, self._delay())
                    self._push(self.time + delay, "deliver", target, item.msg)
            else:
                self._push(self.time + item.delay_ms, "timeout", sender, item.key)

    @staticmethod
    def _maybe_tamper(actor: ByzantineActor, item: Outbound) -> Outbound:
        if isinstance(item, Broadcast) and isinstance(item.msg, ProposalMsg):
            bad_block = actor.rewrite_block(item.msg.block)
            if canonical_digest(bad_block) != canonical_digest(item.msg.block):
                msg = item.msg
                return Broadcast(sign_proposal(ProposalMsg(msg.height, msg.round, bad_block, msg.proposer)))
        return item

    def submit_via_node(self, vid: int, tx: TaggedTransaction) -> tuple[bool, str]:
        node = self.nodes[vid]
        ok, reason, out = node.submit_transaction(tx)
        if ok:
            self._emit(vid, out)
        return ok, reason

    def schedule_call(self, at_ms: int, fn):
        """Run a harness callback inside the deterministic loop."""
        self._push(at_ms, "call", -1, fn)

    def _record_commits(self, vid: int):
        node = self.nodes[vid]
        if vid in self.byzantine:
            return
        start = self._checked_height[vid] + 1
        for height in range(start, node.committed_height + 1):
            digest = canonical_digest(node.chain[height - 1])
            first = self.committed.get(height)
            if first is None:
                self.committed[height] = digest
            elif first != digest:
                self.safety_violations.append(
                    f"height {height}: node {vid} committed {digest.hex()[:12]} "
                    f"but {first.hex()[:12]} was committed first"
                )
        self._checked_height[vid] = node.committed_height
        if node.safety_alarms:
            self.safety_violations.extend(f"node {vid}: {a}" for a in node.safety_alarms)
            node.safety_alarms.clear()

    def step_until(self, until_ms: int, stop_when=None) -> None:
        """Process due events in deterministic order until the horizon or predicate."""
        while self._queue and self._queue[0].time <= until_ms:
            event = heapq.heappop(self._queue)
            self.time = max(self.time, event.time)
            if event.kind == "call":
                event.payload()
                continue
            node = self.nodes[event.target]
            if event.kind == "deliver":
                out = node.handle_message(event.payload, self.time)
            else:
                out = node.handle_timeout(event.payload, self.time)
            self._emit(event.target, out)
            self._record_commits(event.target)
            if stop_when is not None and stop_when():
                return
        self.time = max(self.time, until_ms)

    # --- run-level checks -----------------------------------------------------

    def honest_nodes(self) -> list[Node]:
        return [n for vid, n in sorted(self.nodes.items()) if vid not in self.byzantine]

    def min_honest_height(self) -> int:
        return min(n.committed_height for n in self.honest_nodes())

    def no_tampered_commits(self) -> bool:
        """True when no tampered block or transaction reached any honest chain."""
        tampered = set()
        for actor in self.byzantine.values():
            tampered |= actor.tampered_block_digests
            tampered |= actor.tampered_tx_digests
        for node in self.honest_nodes():
            for block in node.chain:
                if canonical_digest(block) in tampered:
                    return False
                for tx in block.transactions:
                    if canonical_digest(tx) in tampered:
                        return False
        return True

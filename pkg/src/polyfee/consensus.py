"""Three-phase BFT consensus over equal-weight validators.

Each height runs propose -> prevote -> precommit rounds with exponential
timeout backoff. A validator locks on a block once it precommits it and only
unlocks when a newer-round prevote quorum forms for a different block;
proposers re-propose their locked block. Commit needs a precommit quorum of
more than two thirds of the validators for one digest. Committing nodes
broadcast the block with its precommit certificate so lagging peers catch up.

Conflicting signed messages for the same slot are kept as equivocation
evidence; nothing further is done with them (no slashing).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

from . import governance as gov_mod
from .encoding import canonical_digest, sign_payload, u64, u8
from .errors import ChainError, InvalidBlock, RemoveNonEmptyUnit
from .fees import base_fee_for_unit
from .ledger import Receipt, apply_block
from .mempool import Mempool, mempool_add, mempool_select
from .oracle import ExchangeRateTable, FeedContractState, sync_rates, table_from_contract
from .state import ChainState
from .types import (
    Block,
    ChainConfig,
    CommitteeSpec,
    KeyRegistry,
    TaggedTransaction,
    UpgradeAction,
    expected_snapshot_height,
    quorum_threshold,
    validator_key,
)

GENESIS_PARENT = b"\x00" * 32
_NIL = b"\x00" * 32  # stands in for "no block" inside vote signatures


class Step(Enum):
    PROPOSE = 0
    PREVOTE = 1
    PRECOMMIT = 2


class VoteType(Enum):
    PREVOTE = 0
    PRECOMMIT = 1


@dataclass(frozen=True)
class ProposalMsg:
    height: int
    round: int
    block: Block
    proposer: int
    signature: bytes = b""


@dataclass(frozen=True)
class VoteMsg:
    vote_type: VoteType
    height: int
    round: int
    block_digest: bytes | None      # None = nil vote
    voter: int
    signature: bytes = b""


@dataclass(frozen=True)
class CommitMsg:
    """A committed block plus the precommit quorum justifying it."""

    height: int
    block: Block
    justification: tuple[VoteMsg, ...]


@dataclass(frozen=True)
class TxGossip:
    tx: TaggedTransaction


Message = ProposalMsg | VoteMsg | CommitMsg | TxGossip


def _proposal_payload(msg: ProposalMsg) -> bytes:
    return b"proposal:" + u64(msg.height) + u64(msg.round) + u64(msg.proposer) + canonical_digest(msg.block)


def _vote_payload(msg: VoteMsg) -> bytes:
    digest = msg.block_digest if msg.block_digest is not None else _NIL
    return (
        b"vote:"
        + u8(msg.vote_type.value)
        + u64(msg.height)
        + u64(msg.round)
        + digest
        + u64(msg.voter)
    )


def sign_proposal(msg: ProposalMsg) -> ProposalMsg:
    return replace(msg, signature=sign_payload(validator_key(msg.proposer), _proposal_payload(msg)))


def sign_vote(msg: VoteMsg) -> VoteMsg:
    return replace(msg, signature=sign_payload(validator_key(msg.voter), _vote_payload(msg)))


def proposal_signature_ok(msg: ProposalMsg) -> bool:
    return msg.signature == sign_payload(validator_key(msg.proposer), _proposal_payload(msg))


def vote_signature_ok(msg: VoteMsg) -> bool:
    return msg.signature == sign_payload(validator_key(msg.voter), _vote_payload(msg))


@dataclass(frozen=True)
class Evidence:
    """Two signed messages from one validator for the same slot, different values."""

    kind: str                       # "proposal" | "vote"
    first: ProposalMsg | VoteMsg
    second: ProposalMsg | VoteMsg


# --- outbound effects -------------------------------------------------------

@dataclass(frozen=True)
class Broadcast:
    msg: Message


@dataclass(frozen=True)
class Timer:
    key: tuple
    delay_ms: int


Outbound = Broadcast | Timer


def apply_scheduled_upgrade(config: ChainConfig, height: int, state: ChainState | None = None) -> ChainConfig:
    """Activate every upgrade registered for exactly `height`.

    Removing a unit whose circulating supply is nonzero is refused unless the
    upgrade is force-flagged, since those balances would strand.
    """
    units = list(config.units)
    committees = list(config.genesis_committees)
    changed = False
    for upgrade in config.scheduled_upgrades:
        if upgrade.height != height:
            continue
        if upgrade.kind == "add":
            if upgrade.unit not in units:
                units.append(upgrade.unit)
                committees.append((upgrade.unit, upgrade.committee))
                changed = True
        elif upgrade.kind == "remove":
            if upgrade.unit == config.reference_unit:
                raise RemoveNonEmptyUnit("cannot remove the reference unit")
            if upgrade.unit in units:
                supply = state.total_supply(upgrade.unit) if state is not None else 0
                if supply > 0 and not upgrade.force:
                    raise RemoveNonEmptyUnit(
                        f"unit {upgrade.unit} still has {supply} subunits in circulation"
                    )
                units.remove(upgrade.unit)
                changed = True
    if not changed:
        return config
    return replace(config, units=tuple(units), genesis_committees=tuple(committees))


@dataclass
class _RoundState:
    proposals: dict[tuple[int, int], ProposalMsg] = field(default_factory=dict)   # (round, proposer)
    prevotes: dict[int, dict[int, VoteMsg]] = field(default_factory=dict)         # round -> voter -> msg
    precommits: dict[int, dict[int, VoteMsg]] = field(default_factory=dict)
    blocks: dict[bytes, Block] = field(default_factory=dict)                      # digest -> block
    polkas: dict[int, bytes] = field(default_factory=dict)                        # round -> digest


class Node:
    """One validator: ledger, mempool, rate table, and consensus engine."""

    def __init__(
        self,
        validator_id: int,
        config: ChainConfig,
        genesis_state: ChainState,
        feed: FeedContractState,
        registry: KeyRegistry,
        base_timeout_ms: int = 200,
        block_interval_ms: int = 50,
    ):
        self.vid = validator_id
        self.config = config
        self.state = genesis_state.copy()
        self.feed = feed
        self.registry = registry
        self.base_timeout_ms = base_timeout_ms
        self.block_interval_ms = block_interval_ms

        self.height = 1
        self.round = 0
        self.step = Step.PROPOSE
        self.locked_block: Block | None = None
        self.locked_round = -1

        self.mempool = Mempool()
        self.table: ExchangeRateTable = table_from_contract(feed, config.reference_unit, 0)
        self.chain: list[Block] = []
        self.receipts: dict[bytes, Receipt] = {}
        self.evidence: list[Evidence] = []
        self.commit_times: dict[int, int] = {}      # height -> sim ms at commit
        self.safety_alarms: list[str] = []

        self._rounds = _RoundState()
        self._my_votes: dict[tuple[int, int], bytes | None] = {}   # (round, vote_type) -> digest
        self._valid_cache: dict[bytes, tuple[bool, ChainState | None, list[Receipt], bytes]] = {}
        self._commit_cache: dict[int, CommitMsg] = {}
        self._rates_cache: dict[int, ExchangeRateTable] = {}
        self._upgrades_applied_to = 0
        self._advance_config(1)

    # --- read surface (used by the RPC gateway and the harness) ---

    @property
    def committed_height(self) -> int:
        return self.height - 1

    def tip_digest(self) -> bytes:
        return canonical_digest(self.chain[-1]) if self.chain else GENESIS_PARENT

    def block_at(self, height: int) -> Block | None:
        if 1 <= height <= len(self.chain):
            return self.chain[height - 1]
        return None

    def gas_price(self, unit: str) -> int:
        return base_fee_for_unit(unit, self.table, self.config).base_fee_per_gas

    def rates_at(self, snapshot_height: int) -> ExchangeRateTable:
        table = self._rates_cache.get(snapshot_height)
        if table is None:
            table = table_from_contract(self.feed, self.config.reference_unit, snapshot_height)
            self._rates_cache[snapshot_height] = table
        return table

    def refresh_feed(self, feed: FeedContractState):
        """Point at updated contract contents (pre-run scripting only)."""
        self.feed = feed
        self._rates_cache = {}
        self.table = self.rates_at(self.table.snapshot_height)

    def proposer_for(self, height: int, round_: int) -> int:
        validators = self.config.validators
        return validators[(height + round_) % len(validators)]

    # --- lifecycle -------------------------------------------------------

    def start(self) -> list[Outbound]:
        return self._start_round(0)

    def submit_transaction(self, tx: TaggedTransaction) -> tuple[bool, str, list[Outbound]]:
        """Gateway entry: admit locally and gossip when accepted."""
        result = mempool_add(self.mempool, tx, self.table, self.state, self.config, self.registry)
        if not result.ok:
            return False, result.reason, []
        return True, "", [Broadcast(TxGossip(tx))]

    def _advance_config(self, height: int):
        while self._upgrades_applied_to < height:
            self._upgrades_applied_to += 1
            try:
                self.config = apply_scheduled_upgrade(self.config, self._upgrades_applied_to, self.state)
            except RemoveNonEmptyUnit:
                continue  # deterministic refusal on every honest node
            for unit in self.config.units:
                if unit not in self.state.governance:
                    self.state.governance[unit] = gov_mod.StablecoinGovernance.from_spec(
                        unit, self.config.committee_for(unit)
                    )

    def _timeout(self, step: Step) -> int:
        return self.base_timeout_ms * (2 ** min(self.round, 6))

    def _start_round(self, round_: int) -> list[Outbound]:
        self.round = round_
        self.step = Step.PROPOSE
        out: list[Outbound] = [Timer(("step", self.height, round_, Step.PROPOSE.value), self._timeout(Step.PROPOSE))]
        if self.proposer_for(self.height, round_) == self.vid:
            block = self.locked_block if self.locked_block is not None else self._build_block()
            proposal = sign_proposal(ProposalMsg(self.height, round_, block, self.vid))
            out.append(Broadcast(proposal))
        return out

    def _build_block(self) -> Block:
        height = self.height
        snapshot = expected_snapshot_height(height, self.config.oracle_sync_interval)
        rates = self.rates_at(snapshot)
        txs = mempool_select(self.mempool, self.config.block_gas_limit, rates, self.state, self.config)
        while True:
            trial = Block(height, self.vid, self.tip_digest(), tuple(txs), snapshot, _NIL)
            try:
                _, _, root = apply_block(self.state, trial, rates, self.config, self.registry)
            except InvalidBlock as exc:
                if 0 <= exc.offending_index < len(txs):
                    txs.pop(exc.offending_index)
                    continue
                txs = []
                continue
            return replace(trial, state_root=root)

    def _validate_block(self, block: Block) -> bool:
        digest = canonical_digest(block)
        cached = self._valid_cache.get(digest)
        if cached is not None:
            return cached[0]
        ok = False
        post: ChainState | None = None
        receipts: list[Receipt] = []
        root = b""
        snapshot = expected_snapshot_height(self.height, self.config.oracle_sync_interval)
        if (
            block.height == self.height
            and block.parent_hash == self.tip_digest()
            and block.rate_snapshot_height == snapshot
            and block.proposer in self.config.validators
        ):
            try:
                post, receipts, root = apply_block(
                    self.state, block, self.rates_at(snapshot), self.config, self.registry
                )
                ok = root == block.state_root
            except ChainError:
                ok = False
        self._valid_cache[digest] = (ok, post if ok else None, receipts, root)
        return ok

    # --- message handling --------------------------------------------------

    def handle_message(self, msg: Message, now: int) -> list[Outbound]:
        if isinstance(msg, TxGossip):
            mempool_add(self.mempool, msg.tx, self.table, self.state, self.config, self.registry)
            return []
        if isinstance(msg, CommitMsg):
            return self._on_commit_msg(msg, now)
        if isinstance(msg, ProposalMsg):
            return self._on_proposal(msg, now)
        if isinstance(msg, VoteMsg):
            return self._on_vote(msg, now)
        return []

    def handle_timeout(self, key: tuple, now: int) -> list[Outbound]:
        tag = key[0]
        if tag == "newheight":
            if key[1] == self.height:
                return self._start_round(0)
            return []
        _, height, round_, step_value = key
        if height != self.height or round_ != self.round or step_value != self.step.value:
            return []  # stale timer
        if self.step is Step.PROPOSE:
            self._maybe_unlock()
            return self._do_prevote(self._locked_digest(), now)
        if self.step is Step.PREVOTE:
            return self._do_precommit(None, now)
        return self._start_round(self.round + 1)

    def _locked_digest(self) -> bytes | None:
        return canonical_digest(self.locked_block) if self.locked_block is not None else None

    def _record_equivocation(self, kind: str, first, second):
        self.evidence.append(Evidence(kind, first, second))

    def _on_proposal(self, msg: ProposalMsg, now: int) -> list[Outbound]:
        if msg.height != self.height or not proposal_signature_ok(msg):
            return []
        if msg.proposer != self.proposer_for(msg.height, msg.round):
            return []
        slot = (msg.round, msg.proposer)
        seen = self._rounds.proposals.get(slot)
        if seen is not None:
            if canonical_digest(seen.block) != canonical_digest(msg.block):
                self._record_equivocation("proposal", seen, msg)
            return []
        self._rounds.proposals[slot] = msg
        self._rounds.blocks[canonical_digest(msg.block)] = msg.block

        if msg.round != self.round or self.step is not Step.PROPOSE:
            return []
        self._maybe_unlock()
        digest = canonical_digest(msg.block)
        if self.locked_block is not None:
            vote = digest if digest == self._locked_digest() else None
        else:
            vote = digest if self._validate_block(msg.block) else None
        return self._do_prevote(vote, now)

    def _do_prevote(self, digest: bytes | None, now: int) -> list[Outbound]:
        self.step = Step.PREVOTE
        slot = (self.round, VoteType.PREVOTE.value)
        if slot in self._my_votes:
            digest = self._my_votes[slot]   # never sign a second, different vote per slot
        else:
            self._my_votes[slot] = digest
        vote = sign_vote(VoteMsg(VoteType.PREVOTE, self.height, self.round, digest, self.vid))
        out: list[Outbound] = [
            Broadcast(vote),
            Timer(("step", self.height, self.round, Step.PREVOTE.value), self._timeout(Step.PREVOTE)),
        ]
        out.extend(self._check_polka_now(now))
        return out

    def _do_precommit(self, digest: bytes | None, now: int) -> list[Outbound]:
        self.step = Step.PRECOMMIT
        if digest is not None and self._rounds.blocks.get(digest) is None:
            digest = None  # cannot lock a block we never saw
        slot = (self.round, VoteType.PRECOMMIT.value)
        if slot in self._my_votes:
            digest = self._my_votes[slot]
        else:
            self._my_votes[slot] = digest
        if digest is not None and digest in self._rounds.blocks:
            self.locked_block = self._rounds.blocks[digest]
            self.locked_round = self.round
        vote = sign_vote(VoteMsg(VoteType.PRECOMMIT, self.height, self.round, digest, self.vid))
        out: list[Outbound] = [
            Broadcast(vote),
            Timer(("step", self.height, self.round, Step.PRECOMMIT.value), self._timeout(Step.PRECOMMIT)),
        ]
        out.extend(self._check_precommit_nil_now(now))
        return out

    def _check_polka_now(self, now: int) -> list[Outbound]:
        """Precommit immediately if the current round's prevote quorum already exists."""
        if self.step is not Step.PREVOTE:
            return []
        votes = self._rounds.prevotes.get(self.round, {})
        quorum = quorum_threshold(self.config.validator_count)
        tally: dict[bytes | None, int] = {}
        for vote in votes.values():
            tally[vote.block_digest] = tally.get(vote.block_digest, 0) + 1
        polka = self._rounds.polkas.get(self.round)
        if polka is not None and tally.get(polka, 0) >= quorum:
            return self._do_precommit(polka, now)
        if tally.get(None, 0) >= quorum:
            return self._do_precommit(None, now)
        return []

    def _check_precommit_nil_now(self, now: int) -> list[Outbound]:
        if self.step is not Step.PRECOMMIT:
            return []
        votes = self._rounds.precommits.get(self.round, {})
        nil_count = sum(1 for v in votes.values() if v.block_digest is None)
        if nil_count >= quorum_threshold(self.config.validator_count):
            return self._start_round(self.round + 1)
        return []

    def _maybe_unlock(self):
        if self.locked_block is None:
            return
        locked_digest = self._locked_digest()
        for round_ in sorted(self._rounds.polkas):
            digest = self._rounds.polkas[round_]
            if round_ > self.locked_round and digest != locked_digest:
                self.locked_block = None
                self.locked_round = -1
                return

    def _on_vote(self, msg: VoteMsg, now: int) -> list[Outbound]:
        if msg.height != self.height or msg.voter not in self.config.validators:
            return []
        if not vote_signature_ok(msg):
            return []
        book = self._rounds.prevotes if msg.vote_type is VoteType.PREVOTE else self._rounds.precommits
        votes = book.setdefault(msg.round, {})
        seen = votes.get(msg.voter)
        if seen is not None:
            if seen.block_digest != msg.block_digest:
                self._record_equivocation("vote", seen, msg)
            return []
        votes[msg.voter] = msg

        quorum = quorum_threshold(self.config.validator_count)
        if msg.vote_type is VoteType.PREVOTE:
            tally: dict[bytes | None, int] = {}
            for vote in votes.values():
                tally[vote.block_digest] = tally.get(vote.block_digest, 0) + 1
            for digest, count in tally.items():
                if digest is not None and count >= quorum:
                    self._rounds.polkas.setdefault(msg.round, digest)
            if msg.round == self.round:
                return self._check_polka_now(now)
            return []

        # precommit bookkeeping: commit as soon as any digest has a quorum
        tally = {}
        for vote in votes.values():
            tally[vote.block_digest] = tally.get(vote.block_digest, 0) + 1
        for digest, count in tally.items():
            if digest is not None and count >= quorum:
                block = self._rounds.blocks.get(digest)
                if block is not None:
                    justification = tuple(
                        sorted(
                            (v for v in votes.values() if v.block_digest == digest),
                            key=lambda v: v.voter,
                        )[:quorum]
                    )
                    return self._commit(block, justification, now)
        if msg.round == self.round:
            return self._check_precommit_nil_now(now)
        return []

    def _on_commit_msg(self, msg: CommitMsg, now: int) -> list[Outbound]:
        if msg.height < self.height:
            return []
        if not self._commit_msg_valid(msg):
            return []
        if msg.height > self.height:
            self._commit_cache.setdefault(msg.height, msg)
            return []
        return self._commit(msg.block, msg.justification, now)

    def _commit_msg_valid(self, msg: CommitMsg) -> bool:
        digest = canonical_digest(msg.block)
        voters = set()
        rounds = set()
        for vote in msg.justification:
            if (
                vote.vote_type is not VoteType.PRECOMMIT
                or vote.height != msg.height
                or vote.block_digest != digest
                or vote.voter not in self.config.validators
                or not vote_signature_ok(vote)
            ):
                return False
            voters.add(vote.voter)
            rounds.add(vote.round)
        return len(rounds) == 1 and len(voters) >= quorum_threshold(self.config.validator_count)

    def _commit(self, block: Block, justification: tuple[VoteMsg, ...], now: int) -> list[Outbound]:
        digest = canonical_digest(block)
        cached = self._valid_cache.get(digest)
        if cached is not None and cached[0]:
            post, receipts = cached[1], cached[2]
        else:
            snapshot = expected_snapshot_height(self.height, self.config.oracle_sync_interval)
            try:
                post, receipts, root = apply_block(
                    self.state, block, self.rates_at(snapshot), self.config, self.registry
                )
            except ChainError as exc:
                self.safety_alarms.append(
                    f"height {self.height}: quorum-committed block fails to apply: {exc}"
                )
                return []
            if root != block.state_root:
                self.safety_alarms.append(f"height {self.height}: committed state root mismatch")
                return []

        self.state = post
        self.chain.append(block)
        for receipt in receipts:
            self.receipts[receipt.tx_digest] = receipt
        self.mempool.drop_committed(list(block.transactions))
        self.commit_times[self.height] = now

        committed_height = self.height
        # Fetch for the upcoming height: a sync labeled k*K applies from block
        # k*K on, keeping every validated rate within one interval of its read.
        self.table = sync_rates(self.table, self.feed, committed_height + 1, self.config.oracle_sync_interval)

        out: list[Outbound] = [Broadcast(CommitMsg(committed_height, block, justification))]
        self.height += 1
        self.round = 0
        self.step = Step.PROPOSE
        self.locked_block = None
        self.locked_round = -1
        self._rounds = _RoundState()
        self._my_votes = {}
        self._valid_cache = {}
        self._advance_config(self.height)

        # The new-height timer stays even when a cached certificate lets us
        # commit further immediately: a stale key is ignored, a live one
        # restarts the round if the cached path could not advance.
        out.append(Timer(("newheight", self.height), self.block_interval_ms))
        cached_commit = self._commit_cache.pop(self.height, None)
        if cached_commit is not None:
            out.extend(self._on_commit_msg(cached_commit, now))
        return out

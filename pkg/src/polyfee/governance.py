"""Per-currency stablecoin management: proposals, committee voting, execution.

Each unit is governed independently by a whitelisted committee. Management
actions (mint, burn, list changes, size changes) ride in ordinary proposal
and vote transactions; a proposal executes as soon as distinct committee
yes-votes reach the quorum size. Submitting a proposal counts as the
proposer's own yes vote. Votes are yes-only: abstention is absence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Union

from . import encoding
from .encoding import Reader, blob, text, u8, u64, u256
from .errors import (
    AlreadyVoted,
    Blacklisted,
    DuplicateProposal,
    InsufficientBalanceForBurn,
    InvalidAction,
    InvariantViolation,
    MalformedBody,
    NotCommitteeMember,
    ProposalClosed,
    UnknownProposal,
)
from .types import ADDRESS_LEN, CommitteeSpec, TaggedTransaction

if TYPE_CHECKING:
    from .state import ChainState

PROPOSAL_BODY_TAG = 0x01
VOTE_BODY_TAG = 0x02


@dataclass(frozen=True)
class Mint:
    to: bytes
    amount: int


@dataclass(frozen=True)
class Burn:
    from_: bytes
    amount: int


@dataclass(frozen=True)
class WhitelistAdd:
    address: bytes


@dataclass(frozen=True)
class WhitelistRemove:
    address: bytes


@dataclass(frozen=True)
class BlacklistAdd:
    address: bytes


@dataclass(frozen=True)
class BlacklistRemove:
    address: bytes


@dataclass(frozen=True)
class SetCommitteeSize:
    size: int


@dataclass(frozen=True)
class SetQuorumSize:
    size: int


GovAction = Union[
    Mint,
    Burn,
    WhitelistAdd,
    WhitelistRemove,
    BlacklistAdd,
    BlacklistRemove,
    SetCommitteeSize,
    SetQuorumSize,
]

_ACTION_TAGS: list[type] = [
    Mint,
    Burn,
    WhitelistAdd,
    WhitelistRemove,
    BlacklistAdd,
    BlacklistRemove,
    SetCommitteeSize,
    SetQuorumSize,
]


def encode_action(action: GovAction) -> bytes:
    tag = u8(_ACTION_TAGS.index(type(action)) + 1)
    if isinstance(action, Mint):
        return tag + action.to + u256(action.amount)
    if isinstance(action, Burn):
        return tag + action.from_ + u256(action.amount)
    if isinstance(action, (WhitelistAdd, WhitelistRemove, BlacklistAdd, BlacklistRemove)):
        return tag + action.address
    return tag + u64(action.size)


def read_action(r: Reader) -> GovAction:
    tag = r.u8()
    if not 1 <= tag <= len(_ACTION_TAGS):
        raise MalformedBody(f"unknown governance action tag {tag}")
    cls = _ACTION_TAGS[tag - 1]
    if cls is Mint:
        return Mint(r.take(ADDRESS_LEN), r.u256())
    if cls is Burn:
        return Burn(r.take(ADDRESS_LEN), r.u256())
    if cls in (WhitelistAdd, WhitelistRemove, BlacklistAdd, BlacklistRemove):
        return cls(r.take(ADDRESS_LEN))
    return cls(r.u64())


def encode_proposal_body(unit: str, action: GovAction, evidence: bytes = b"") -> bytes:
    """Transaction payload for a proposal: tag, governed unit, action, evidence."""
    return u8(PROPOSAL_BODY_TAG) + text(unit) + encode_action(action) + blob(evidence)


def decode_proposal_body(payload: bytes) -> tuple[str, GovAction, bytes]:
    r = Reader(payload)
    if r.u8() != PROPOSAL_BODY_TAG:
        raise MalformedBody("not a proposal body")
    unit = r.text()
    action = read_action(r)
    evidence = r.blob()
    r.expect_done()
    return unit, action, evidence


def encode_vote_body(unit: str, proposal_id: bytes) -> bytes:
    return u8(VOTE_BODY_TAG) + text(unit) + proposal_id


def decode_vote_body(payload: bytes) -> tuple[str, bytes]:
    r = Reader(payload)
    if r.u8() != VOTE_BODY_TAG:
        raise MalformedBody("not a vote body")
    unit = r.text()
    proposal_id = r.take(32)
    r.expect_done()
    return unit, proposal_id


class ProposalStatus(Enum):
    OPEN = "open"
    EXECUTED = "executed"
    REJECTED = "rejected"
    EXPIRED = "expired"


@dataclass
class Proposal:
    id: bytes
    unit: str
    action: GovAction
    proposer: bytes
    expiry_height: int
    evidence: bytes = b""
    yes_votes: set[bytes] = field(default_factory=set)
    status: ProposalStatus = ProposalStatus.OPEN


@dataclass
class StablecoinGovernance:
    """Governance state for one currency unit; never touches other units."""

    unit: str
    committee: set[bytes] = field(default_factory=set)
    blacklist: set[bytes] = field(default_factory=set)
    committee_size: int = 4
    quorum_size: int = 3
    proposals: dict[bytes, Proposal] = field(default_factory=dict)

    @staticmethod
    def from_spec(unit: str, spec: CommitteeSpec) -> "StablecoinGovernance":
        return StablecoinGovernance(
            unit=unit,
            committee=set(spec.members),
            committee_size=spec.committee_size,
            quorum_size=spec.quorum_size,
        )

    def copy(self) -> "StablecoinGovernance":
        return StablecoinGovernance(
            unit=self.unit,
            committee=set(self.committee),
            blacklist=set(self.blacklist),
            committee_size=self.committee_size,
            quorum_size=self.quorum_size,
            proposals={
                pid: Proposal(
                    id=p.id,
                    unit=p.unit,
                    action=p.action,
                    proposer=p.proposer,
                    expiry_height=p.expiry_height,
                    evidence=p.evidence,
                    yes_votes=set(p.yes_votes),
                    status=p.status,
                )
                for pid, p in self.proposals.items()
            },
        )


def _check_action_shape(gov: StablecoinGovernance, action: GovAction):
    if isinstance(action, (Mint, Burn)) and action.amount <= 0:
        raise InvalidAction("mint/burn amount must be positive")
    if isinstance(action, (SetCommitteeSize, SetQuorumSize)) and action.size < 1:
        raise InvalidAction("size must be at least 1")
    for attr in ("to", "from_", "address"):
        addr = getattr(action, attr, None)
        if addr is not None and len(addr) != ADDRESS_LEN:
            raise InvalidAction(f"bad address length in {type(action).__name__}")


def submit_proposal(
    gov: StablecoinGovernance, proposal_tx: TaggedTransaction, height: int, ttl: int
) -> bytes:
    """Open a proposal from a committee member; the submission is one yes vote."""
    if proposal_tx.sender not in gov.committee:
        raise NotCommitteeMember(f"{proposal_tx.sender.hex()} not on {gov.unit} committee")
    unit, action, evidence = decode_proposal_body(proposal_tx.payload)
    if unit != gov.unit:
        raise MalformedBody(f"proposal body unit {unit} routed to {gov.unit} governance")
    _check_action_shape(gov, action)
    for p in gov.proposals.values():
        if (
            p.status is ProposalStatus.OPEN
            and p.action == action
            and p.proposer == proposal_tx.sender
        ):
            raise DuplicateProposal(f"open duplicate of {type(action).__name__} by same proposer")
    pid = encoding.canonical_digest(proposal_tx)
    gov.proposals[pid] = Proposal(
        id=pid,
        unit=unit,
        action=action,
        proposer=proposal_tx.sender,
        expiry_height=height + ttl,
        evidence=evidence,
        yes_votes={proposal_tx.sender},
    )
    return pid


def cast_vote(gov: StablecoinGovernance, vote_tx: TaggedTransaction, height: int) -> bytes:
    """Record a committee member's yes vote; returns the proposal id."""
    if vote_tx.sender not in gov.committee:
        raise NotCommitteeMember(f"{vote_tx.sender.hex()} not on {gov.unit} committee")
    unit, pid = decode_vote_body(vote_tx.payload)
    if unit != gov.unit:
        raise MalformedBody(f"vote body unit {unit} routed to {gov.unit} governance")
    proposal = gov.proposals.get(pid)
    if proposal is None:
        raise UnknownProposal(f"no proposal {pid.hex()}")
    if proposal.status is not ProposalStatus.OPEN or height > proposal.expiry_height:
        raise ProposalClosed(f"proposal {pid.hex()} is {proposal.status.value}")
    if vote_tx.sender in proposal.yes_votes:
        raise AlreadyVoted(f"{vote_tx.sender.hex()} already voted on {pid.hex()}")
    proposal.yes_votes.add(vote_tx.sender)
    return pid


def quorum_reached(gov: StablecoinGovernance, proposal_id: bytes) -> bool:
    proposal = gov.proposals.get(proposal_id)
    if proposal is None:
        return False
    return (
        proposal.status is ProposalStatus.OPEN
        and len(proposal.yes_votes & gov.committee) >= gov.quorum_size
    )


def try_execute(gov: StablecoinGovernance, ledger_state: "ChainState", proposal_id: bytes):
    """Apply an approved proposal to governance and ledger state.

    Burn and size changes may fail their guards; the proposal then stays open
    so a later retry (after funding or another vote) can still land it.
    """
    proposal = gov.proposals.get(proposal_id)
    if proposal is None:
        raise UnknownProposal(f"no proposal {proposal_id.hex()}")
    if proposal.status is not ProposalStatus.OPEN:
        raise ProposalClosed(f"proposal {proposal_id.hex()} is {proposal.status.value}")
    if len(proposal.yes_votes & gov.committee) < gov.quorum_size:
        raise InvariantViolation("quorum not reached")

    action = proposal.action
    if isinstance(action, Mint):
        ledger_state.credit(action.to, gov.unit, action.amount)
        ledger_state.minted[gov.unit] = ledger_state.minted.get(gov.unit, 0) + action.amount
    elif isinstance(action, Burn):
        if ledger_state.balance_of(action.from_, gov.unit) < action.amount:
            raise InsufficientBalanceForBurn(
                f"{action.from_.hex()} holds less than {action.amount} {gov.unit} subunits"
            )
        ledger_state.debit(action.from_, gov.unit, action.amount)
        ledger_state.burned[gov.unit] = ledger_state.burned.get(gov.unit, 0) + action.amount
    elif isinstance(action, WhitelistAdd):
        if action.address not in gov.committee and len(gov.committee) + 1 > gov.committee_size:
            raise InvariantViolation("committee already at committee_size")
        gov.committee.add(action.address)
    elif isinstance(action, WhitelistRemove):
        gov.committee.discard(action.address)
    elif isinstance(action, BlacklistAdd):
        gov.blacklist.add(action.address)
    elif isinstance(action, BlacklistRemove):
        gov.blacklist.discard(action.address)
    elif isinstance(action, SetCommitteeSize):
        if action.size < len(gov.committee):
            raise InvariantViolation("committee_size below current committee")
        if action.size < gov.quorum_size:
            raise InvariantViolation("committee_size below quorum_size")
        gov.committee_size = action.size
    elif isinstance(action, SetQuorumSize):
        if action.size > gov.committee_size:
            raise InvariantViolation("quorum_size above committee_size")
        gov.quorum_size = action.size
    else:  # pragma: no cover - exhaustive above
        raise InvalidAction(f"unhandled action {action!r}")

    proposal.status = ProposalStatus.EXECUTED


def maybe_execute(gov: StablecoinGovernance, ledger_state: "ChainState", proposal_id: bytes) -> bool:
    """Execute on quorum; guard failures leave the proposal open. Returns True
    when the proposal transitioned to executed."""
    if not quorum_reached(gov, proposal_id):
        return False
    try:
        try_execute(gov, ledger_state, proposal_id)
    except (InsufficientBalanceForBurn, InvariantViolation):
        return False
    return True


def expire_proposals(gov: StablecoinGovernance, height: int):
    """Mark open proposals past their expiry; run at the start of each block."""
    for pid in sorted(gov.proposals):
        p = gov.proposals[pid]
        if p.status is ProposalStatus.OPEN and p.expiry_height < height:
            p.status = ProposalStatus.EXPIRED


def enforce_blacklist(gov_by_unit: dict[str, StablecoinGovernance], tx: TaggedTransaction):
    """Reject senders blacklisted for the transaction's unit; other units stay usable."""
    gov = gov_by_unit.get(tx.unit)
    if gov is not None and tx.sender in gov.blacklist:
        raise Blacklisted(f"{tx.sender.hex()} blacklisted for {tx.unit}")

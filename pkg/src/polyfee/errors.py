"""Error types raised across the chain, fee, governance, and harness layers."""


class ChainError(Exception):
    """Base class for every error this package raises deliberately."""


# --- stateless validation ---

class UnknownUnit(ChainError):
    pass


class MalformedSignature(ChainError):
    pass


class GasLimitExceeded(ChainError):
    pass


class MalformedBody(ChainError):
    pass


class MalformedAddress(ChainError):
    pass


# --- fee math ---

class Overflow(ChainError):
    """Arithmetic result does not fit the declared unsigned width."""


class MissingRate(ChainError):
    pass


class BaseFeeMismatch(ChainError):
    """Transaction base fee does not match the quote for its currency unit."""


# --- ledger execution ---

class InsufficientBalance(ChainError):
    pass


class BadNonce(ChainError):
    pass


class Blacklisted(ChainError):
    pass


class BadSignature(ChainError):
    """Signature does not verify against the sender's registered key."""


class InvalidBlock(ChainError):
    def __init__(self, reason: str, offending_index: int = -1):
        super().__init__(f"invalid block: {reason} (tx index {offending_index})")
        self.reason = reason
        self.offending_index = offending_index


# --- oracle feed ---

class Unauthorized(ChainError):
    pass


class ZeroRate(ChainError):
    pass


class ParseError(ChainError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# --- governance ---

class NotCommitteeMember(ChainError):
    pass


class InvalidAction(ChainError):
    pass


class DuplicateProposal(ChainError):
    pass


class ProposalClosed(ChainError):
    pass


class AlreadyVoted(ChainError):
    pass


class UnknownProposal(ChainError):
    pass


class InsufficientBalanceForBurn(ChainError):
    pass


class InvariantViolation(ChainError):
    pass


class MempoolRejected(ChainError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


# --- config upgrades / harness ---

class RemoveNonEmptyUnit(ChainError):
    pass


class ConfigError(ChainError):
    pass


class EmptySeries(ChainError):
    pass


class ScenarioDiverged(ChainError):
    """Two honest nodes committed different blocks at the same height."""

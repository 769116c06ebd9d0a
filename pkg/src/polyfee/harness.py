"""Scenario runner, experiments, and deterministic metrics reports.

run_scenario boots a simulated world (validators, per-unit endpoints, scripted
rate feed), plays a timed workload through the gateways exactly like an
external wallet would, and renders a report that is byte-identical across
reruns with the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import governance as gov_mod
from .consensus import Node
from .encoding import canonical_digest, to_hex
from .errors import (
    ChainError,
    ConfigError,
    EmptySeries,
    InvalidBlock,
    MempoolRejected,
    ScenarioDiverged,
)
from .fees import fee_value_in_reference, gas_fee
from .ledger import apply_block
from .oracle import ExchangeRateTable, load_rate_series
from .rpc import ClientTxEnvelope, RpcEndpoint, sign_envelope
from .scenario import ScenarioConfig, WorkloadEntry
from .simnet import World
from .state import ChainState
from .types import (
    GAS_GOVERNANCE,
    GIGA,
    GOVERNANCE_ADDRESS,
    RATE_SCALE,
    Block,
    ChainConfig,
    Rate,
    TaggedTransaction,
    account_address,
    account_key,
    expected_snapshot_height,
    format_fixed,
    parse_token_decimal,
)

DEFAULT_SERIES_DAYS = 183     # odd, so the triangle wave hits its peak exactly


# --- metrics ---------------------------------------------------------------

@dataclass
class MetricsReport:
    tx_lines: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def render(self) -> str:
        lines = ["# per-transaction"]
        for tx in self.tx_lines:
            lines.append(
                "tx {digest} height={height} kind={kind} unit={unit} gas_used={gas_used} "
                "fee={fee} fee_value_ref={fee_value} status={status}".format(**tx)
            )
        lines.append("# per-run")
        for key in sorted(self.summary):
            lines.append(f"{key}={self.summary[key]}")
        return "\n".join(lines) + "\n"

    def write(self, path: str):
        import json

        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())
        with open(path + ".json", "w", encoding="utf-8") as fh:
            json.dump({"transactions": self.tx_lines, "summary": self.summary}, fh, sort_keys=True, indent=2)
            fh.write("\n")


# --- scenario runner ---------------------------------------------------------

class ScenarioRunner:
    """Owns one world plus its per-unit RPC endpoints and scripted workload."""

    def __init__(self, scenario: ScenarioConfig):
        self.scenario = scenario
        balances = {
            account_address(label): dict(by_unit)
            for label, by_unit in scenario.accounts.items()
        }
        genesis = ChainState.genesis(scenario.chain, balances)
        self.world = World(scenario.chain, scenario.params, genesis, scenario.byzantine)
        for label in scenario.accounts:
            self.world.registry.register(account_key(label))
        for entry in scenario.workload:
            self.world.registry.register(account_key(entry.sender))
        if scenario.rate_series_path:
            self.world.preload_rate_series(load_rate_series(scenario.rate_series_path))

        self._endpoints: dict[tuple[int, str], RpcEndpoint] = {}
        self.submissions: list[dict] = []          # label, unit, digest/error
        self._proposal_ids: dict[str, bytes] = {}  # workload label -> proposal digest

    def endpoint(self, unit: str, via: int = 0) -> RpcEndpoint:
        key = (via, unit)
        if key not in self._endpoints:
            node = self.world.nodes[via]
            self._endpoints[key] = RpcEndpoint(
                unit, node, submit=lambda tx, v=via: self._submit(v, tx)
            )
        return self._endpoints[key]

    def _submit(self, via: int, tx: TaggedTransaction) -> bytes:
        ok, reason = self.world.submit_via_node(via, tx)
        if not ok:
            raise MempoolRejected(reason)
        return canonical_digest(tx)

    def _resolve_governance(self, entry: WorkloadEntry) -> tuple[bytes | None, bytes]:
        spec = entry.governance
        if "propose" in spec:
            raw = spec["propose"]
            action = _parse_gov_action(raw["action"])
            evidence = bytes.fromhex(raw.get("evidence_hex", ""))
            body = gov_mod.encode_proposal_body(entry.unit, action, evidence)
            return GOVERNANCE_ADDRESS, body
        if "vote" in spec:
            label = spec["vote"]["proposal"]
            pid = self._proposal_ids.get(label)
            if pid is None:
                raise ConfigError(f"vote references unknown proposal label {label!r}")
            return GOVERNANCE_ADDRESS, gov_mod.encode_vote_body(entry.unit, pid)
        raise ConfigError("governance entry needs 'propose' or 'vote'")

    def _play(self, entry: WorkloadEntry):
        record = {"label": entry.label, "unit": entry.unit, "at_ms": entry.at_ms}
        endpoint = self.endpoint(entry.unit, entry.via)
        sender_addr = account_address(entry.sender)
        try:
            # The standard wallet flow: nonce, quote, sign, send.
            nonce = endpoint.get_nonce(sender_addr, pending=True)
            price = endpoint.gas_price()
            if entry.governance is not None:
                recipient, payload = self._resolve_governance(entry)
                gas_limit = max(entry.gas_limit, GAS_GOVERNANCE)
                value = 0
            else:
                recipient = account_address(entry.recipient) if entry.recipient else None
                payload = entry.payload
                gas_limit = entry.gas_limit
                value = entry.amount_subunits
            env = ClientTxEnvelope(
                sender=sender_addr,
                recipient=recipient,
                nonce=nonce,
                max_fee_per_gas=price,
                tip_per_gas=entry.tip_per_gas,
                gas_limit=gas_limit,
                value=value,
                payload=payload,
            )
            env = sign_envelope(env, account_key(entry.sender))
            digest = endpoint.send_transaction(env)
        except ChainError as exc:
            record["error"] = f"{type(exc).__name__}: {exc}"
            self.submissions.append(record)
            return
        record["digest"] = to_hex(digest)
        if entry.governance is not None and "propose" in entry.governance:
            self._proposal_ids[entry.label] = digest
        self.submissions.append(record)

    def run(self) -> MetricsReport:
        for entry in self.scenario.workload:
            self.world.schedule_call(entry.at_ms, lambda e=entry: self._play(e))

        goal = self.scenario.until_height
        expected_plays = len(self.scenario.workload)

        def done() -> bool:
            if self.world.safety_violations:
                return True
            if len(self.submissions) < expected_plays:
                return False
            if self.world.min_honest_height() < goal:
                return False
            reference_node = self.world.honest_nodes()[0]
            for record in self.submissions:
                digest = record.get("digest")
                if digest and bytes.fromhex(digest[2:]) not in reference_node.receipts:
                    return False
            return True

        self.world.step_until(self.scenario.max_ms, stop_when=done)
        report = self._report()
        if self.scenario.report_path:
            report.write(self.scenario.report_path)
        if self.world.safety_violations:
            error = ScenarioDiverged("; ".join(self.world.safety_violations))
            error.report = report
            raise error
        return report

    def _report(self) -> MetricsReport:
        node = self.world.honest_nodes()[0]
        report = MetricsReport()
        fee_values: list[int] = []
        for block in node.chain:
            rates = node.rates_at(block.rate_snapshot_height)
            for tx in block.transactions:
                digest = canonical_digest(tx)
                receipt = node.receipts[digest]
                value = fee_value_in_reference(tx, receipt.gas_used, rates)
                fee_values.append(value)
                report.tx_lines.append(
                    {
                        "digest": to_hex(digest),
                        "height": block.height,
                        "kind": tx.kind.name.lower(),
                        "unit": tx.unit,
                        "gas_used": receipt.gas_used,
                        "fee": f"{format_fixed(receipt.fee_charged, 10**18)} {tx.unit}",
                        "fee_value": format_fixed(value, GIGA),
                        "status": receipt.status.value,
                    }
                )

        heights = [n.committed_height for n in self.world.honest_nodes()]
        evidence = sum(len(n.evidence) for n in self.world.honest_nodes())
        rejected = [r for r in self.submissions if "error" in r]
        summary = {
            "seed": self.scenario.params.seed,
            "blocks_committed": min(heights),
            "honest_heights": ",".join(str(h) for h in heights),
            "transactions_committed": len(report.tx_lines),
            "submissions_rejected": len(rejected),
            "evidence_records": evidence,
            "safety_violations": len(self.world.safety_violations),
            "sim_time_ms": self.world.time,
        }
        positive = [v for v in fee_values if v > 0]
        if positive:
            ratio = max(positive) * RATE_SCALE // min(positive)
            summary["fee_value_max_min_ratio"] = format_fixed(ratio, RATE_SCALE)
        for record in rejected:
            summary[f"rejected_{record['label']}"] = record["error"]
        report.summary = summary
        return report


def run_scenario(scenario: ScenarioConfig) -> MetricsReport:
    return ScenarioRunner(scenario).run()


def _parse_gov_action(raw: dict) -> gov_mod.GovAction:
    kind = raw["kind"]
    if kind == "mint":
        return gov_mod.Mint(account_address(raw["to"]), parse_token_decimal(str(raw["amount_tokens"])))
    if kind == "burn":
        return gov_mod.Burn(account_address(raw["from"]), parse_token_decimal(str(raw["amount_tokens"])))
    if kind == "whitelist_add":
        return gov_mod.WhitelistAdd(account_address(raw["address"]))
    if kind == "whitelist_remove":
        return gov_mod.WhitelistRemove(account_address(raw["address"]))
    if kind == "blacklist_add":
        return gov_mod.BlacklistAdd(account_address(raw["address"]))
    if kind == "blacklist_remove":
        return gov_mod.BlacklistRemove(account_address(raw["address"]))
    if kind == "set_committee_size":
        return gov_mod.SetCommitteeSize(int(raw["size"]))
    if kind == "set_quorum_size":
        return gov_mod.SetQuorumSize(int(raw["size"]))
    raise ConfigError(f"unknown governance action kind {kind!r}")


# --- single-proposer chain (ledger-only driver) -------------------------------

class SoloChain:
    """Drives the ledger without consensus: one trusted proposer, no network.

    Used by conservation-style tests and the governance status command, where
    the interesting behavior is the state transition itself.
    """

    def __init__(self, config: ChainConfig, genesis: ChainState, proposer: int = 0):
        self.config = config
        self.state = genesis.copy()
        self.proposer = proposer
        self.height = 0
        self.chain: list[Block] = []
        self.receipts: list = []
        rates = {config.reference_unit: Rate.identity(config.reference_unit)}
        for rate in config.genesis_rates:
            rates[rate.quote] = rate
        self.table = ExchangeRateTable(config.reference_unit, rates, 0)

    def quote(self, unit: str) -> int:
        from .fees import base_fee_for_unit

        return base_fee_for_unit(unit, self.table, self.config).base_fee_per_gas

    def set_rate(self, unit: str, value: int):
        rates = dict(self.table.rates)
        rates[unit] = Rate(value, self.config.reference_unit, unit)
        self.table = ExchangeRateTable(self.config.reference_unit, rates, self.table.snapshot_height)

    def commit(self, txs: list[TaggedTransaction]):
        height = self.height + 1
        parent = canonical_digest(self.chain[-1]) if self.chain else b"\x00" * 32
        trial = Block(height, self.proposer, parent, tuple(txs), self.table.snapshot_height, b"\x00" * 32)
        _, _, root = apply_block(self.state, trial, self.table, self.config)
        block = replace(trial, state_root=root)
        self.state, receipts, _ = apply_block(self.state, block, self.table, self.config)
        self.height = height
        self.chain.append(block)
        self.receipts.extend(receipts)
        return receipts


# --- experiments ---------------------------------------------------------------

def fee_ratio_experiment(rate_value: int, seed: int = 7) -> tuple[int, MetricsReport]:
    """Submit one zero-amount, zero-tip transfer through the reference endpoint
    and one through a second-unit endpoint at the given rate; return the fixed-
    point ratio of the two charged fees."""
    from .simnet import SimParams

    chain = ChainConfig(
        units=("USD", "CNY"),
        genesis_rates=(Rate(rate_value, "USD", "CNY"),),
    )
    scenario = ScenarioConfig(
        chain=chain,
        params=SimParams(seed=seed, gst_ms=0, delta_ms=10, base_timeout_ms=100, block_interval_ms=10),
        accounts={
            "fee-user": {"USD": parse_token_decimal("100000"), "CNY": parse_token_decimal("200000")},
        },
        workload=(
            WorkloadEntry(at_ms=5, unit="USD", sender="fee-user", recipient="sink", label="usd-leg"),
            WorkloadEntry(at_ms=6, unit="CNY", sender="fee-user", recipient="sink", label="cny-leg"),
        ),
        until_height=3,
        max_ms=60_000,
    )
    runner = ScenarioRunner(scenario)
    report = runner.run()

    fees: dict[str, int] = {}
    node = runner.world.honest_nodes()[0]
    for record in runner.submissions:
        digest = bytes.fromhex(record["digest"][2:])
        receipt = node.receipts[digest]
        fees[record["label"]] = receipt.fee_charged
    ratio = fees["cny-leg"] * RATE_SCALE // fees["usd-leg"]
    report.summary["fee_ratio"] = format_fixed(ratio, RATE_SCALE)
    return ratio, report


def fee_stability_experiment(
    stable_series: list[tuple[int, str, int]],
    volatile_series: list[tuple[int, str, int]],
    base_fee_per_gas: int = GIGA,
    tip_per_gas: int = 0,
    gas_used: int = 21_000,
) -> tuple[int, int]:
    """Reference-currency fee of one template transfer priced day by day.

    For each day the settlement fee equals the constant gas fee times that
    day's token price; the returned numbers are the fixed-point max/min fee
    ratios under stable-token and volatile-token pricing respectively.
    """
    if not stable_series or not volatile_series:
        raise EmptySeries("price series must be non-empty")
    if len(stable_series) != len(volatile_series):
        raise ConfigError(
            f"series lengths differ: {len(stable_series)} vs {len(volatile_series)}"
        )
    template_fee = gas_fee(base_fee_per_gas, tip_per_gas, gas_used)

    def ratio(series: list[tuple[int, str, int]]) -> int:
        fees = [template_fee * price // RATE_SCALE for _, _, price in series]
        low = min(fees)
        if low <= 0:
            raise ConfigError("prices too small: a daily fee rounded to zero")
        return max(fees) * RATE_SCALE // low

    return ratio(stable_series), ratio(volatile_series)


def generate_price_series(
    days: int,
    low: int,
    high: int,
    unit: str,
) -> list[tuple[int, str, int]]:
    """Deterministic triangle wave from `low` up to `high` and back (fixed point).

    With an odd number of days the wave hits both extremes exactly, which the
    ratio assertions rely on; an even count is bumped by one.
    """
    if days < 3:
        raise ConfigError("need at least 3 days")
    if days % 2 == 0:
        days += 1
    if not 0 < low <= high:
        raise ConfigError("need 0 < low <= high")
    period = days - 1
    span = high - low
    return [
        (day, unit, low + span * (2 * min(day, period - day)) // period)
        for day in range(days)
    ]


def stable_series_default(days: int = DEFAULT_SERIES_DAYS) -> list[tuple[int, str, int]]:
    """USDT-like prices: 1.0 within +/-0.15%, well inside a 0.2% band."""
    return generate_price_series(days, RATE_SCALE - 1_500_000, RATE_SCALE + 1_500_000, "USDT")


def volatile_series_default(days: int = DEFAULT_SERIES_DAYS) -> list[tuple[int, str, int]]:
    """ETH-like prices sweeping 2500.0 to 4600.0, a max/min ratio of exactly 1.84."""
    return generate_price_series(days, 2_500 * RATE_SCALE, 4_600 * RATE_SCALE, "ETH")

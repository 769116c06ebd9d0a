"""Scenario files: JSON descriptions of a chain, its network, and a workload.

A scenario pins everything a run depends on (seed included) so reruns are
byte-identical. Amounts are decimal strings: token balances in whole tokens,
fees in gigasubunits, rates as plain decimals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .simnet import ByzantineStrategy, SimParams
from .types import (
    GIGA,
    ChainConfig,
    CommitteeSpec,
    Rate,
    UpgradeAction,
    account_address,
    parse_decimal_fixed,
    parse_rate_decimal,
    parse_token_decimal,
)

STRATEGY_KINDS = ("silence", "equivocate", "pack_invalid", "unit_tamper")


@dataclass(frozen=True)
class WorkloadEntry:
    at_ms: int
    unit: str
    sender: str                     # account label
    via: int = 0                    # validator whose endpoint takes the submission
    recipient: str | None = None
    amount_subunits: int = 0
    tip_per_gas: int = 0            # subunits
    gas_limit: int = 21_000
    payload: bytes = b""
    governance: dict | None = None  # {"propose": {...}} | {"vote": {"label": ...}}
    label: str = ""


@dataclass(frozen=True)
class ScenarioConfig:
    chain: ChainConfig
    params: SimParams
    byzantine: dict[int, ByzantineStrategy] = field(default_factory=dict)
    accounts: dict[str, dict[str, int]] = field(default_factory=dict)   # label -> unit -> subunits
    workload: tuple[WorkloadEntry, ...] = ()
    rate_series_path: str | None = None
    until_height: int = 10
    max_ms: int = 600_000
    report_path: str | None = None

    def __post_init__(self):
        for entry in self.workload:
            if entry.unit not in self.chain.units and not any(
                u.unit == entry.unit for u in self.chain.scheduled_upgrades
            ):
                raise ConfigError(f"workload references unknown unit {entry.unit!r}")
        byz_limit = (self.chain.validator_count - 1) // 3
        if len(self.byzantine) > byz_limit:
            raise ConfigError(
                f"{len(self.byzantine)} byzantine validators exceeds tolerance {byz_limit}"
            )


def _parse_committee(raw: dict) -> CommitteeSpec:
    members = tuple(account_address(label) for label in raw.get("members", []))
    return CommitteeSpec(
        members=members,
        committee_size=int(raw.get("committee_size", max(len(members), 1))),
        quorum_size=int(raw.get("quorum_size", max(1, (len(members) * 2) // 3))),
    )


def parse_scenario(doc: dict, base_dir: str = ".") -> ScenarioConfig:
    try:
        return _parse_scenario(doc, base_dir)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad scenario: {exc}") from exc


def _parse_scenario(doc: dict, base_dir: str) -> ScenarioConfig:
    import os

    chain_doc = doc["chain"]
    reference = chain_doc.get("reference_unit", "USD")
    genesis_rates = tuple(
        Rate(parse_rate_decimal(str(value)), reference, unit)
        for unit, value in sorted(chain_doc.get("genesis_rates", {}).items())
    )
    committees = tuple(
        (unit, _parse_committee(raw))
        for unit, raw in sorted(chain_doc.get("committees", {}).items())
    )
    upgrades = tuple(
        UpgradeAction(
            height=int(u["height"]),
            kind=u["action"],
            unit=u["unit"],
            committee=_parse_committee(u.get("committee", {})),
            force=bool(u.get("force", False)),
        )
        for u in chain_doc.get("upgrades", [])
    )
    chain = ChainConfig(
        units=tuple(chain_doc["units"]),
        reference_unit=reference,
        reference_base_fee=parse_decimal_fixed(str(chain_doc.get("reference_base_fee", "1")), GIGA),
        oracle_sync_interval=int(chain_doc.get("oracle_sync_interval", 10)),
        validators=tuple(range(int(chain_doc.get("validators", 4)))),
        block_gas_limit=int(chain_doc.get("block_gas_limit", 30_000_000)),
        chain_id=int(chain_doc.get("chain_id", 1337)),
        proposal_ttl=int(chain_doc.get("proposal_ttl", 10_000)),
        genesis_rates=genesis_rates,
        genesis_committees=committees,
        scheduled_upgrades=upgrades,
    )

    net = doc.get("network", {})
    if "seed" not in doc:
        raise ConfigError("scenario must pin a seed")
    params = SimParams(
        seed=int(doc["seed"]),
        gst_ms=None if net.get("gst_ms") is None else int(net.get("gst_ms", 0)),
        delta_ms=int(net.get("delta_ms", 40)),
        pre_gst_max_ms=int(net.get("pre_gst_max_ms", 400)),
        base_timeout_ms=int(net.get("base_timeout_ms", 200)),
        block_interval_ms=int(net.get("block_interval_ms", 50)),
    )

    byzantine: dict[int, ByzantineStrategy] = {}
    for raw in doc.get("byzantine", []):
        kind = raw["strategy"]
        if kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown byzantine strategy {kind!r}")
        byzantine[int(raw["validator"])] = ByzantineStrategy(kind, dict(raw.get("params", {})))

    accounts = {
        label: {unit: parse_token_decimal(str(text)) for unit, text in sorted(by_unit.items())}
        for label, by_unit in sorted(doc.get("accounts", {}).items())
    }

    workload = []
    for index, raw in enumerate(doc.get("workload", [])):
        workload.append(
            WorkloadEntry(
                at_ms=int(raw["at_ms"]),
                unit=raw["unit"],
                sender=raw["from"],
                via=int(raw.get("via", 0)),
                recipient=raw.get("to"),
                amount_subunits=parse_token_decimal(str(raw.get("amount_tokens", "0"))),
                tip_per_gas=parse_decimal_fixed(str(raw.get("tip_gigasubunits", "0")), GIGA),
                gas_limit=int(raw.get("gas_limit", 21_000)),
                payload=bytes.fromhex(raw.get("payload_hex", "")),
                governance=raw.get("governance"),
                label=raw.get("label", f"tx-{index}"),
            )
        )

    run = doc.get("run", {})
    series = doc.get("rate_series")
    if series is not None and not os.path.isabs(series):
        series = os.path.join(base_dir, series)
    return ScenarioConfig(
        chain=chain,
        params=params,
        byzantine=byzantine,
        accounts=accounts,
        workload=tuple(workload),
        rate_series_path=series,
        until_height=int(run.get("until_height", 10)),
        max_ms=int(run.get("max_ms", 600_000)),
        report_path=doc.get("report_path"),
    )


def load_scenario(path: str) -> ScenarioConfig:
    import os

    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scenario is not valid JSON: {exc}") from exc
    return parse_scenario(doc, base_dir=os.path.dirname(os.path.abspath(path)))

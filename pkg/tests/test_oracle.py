import pytest

from polyfee.errors import ConfigError, ParseError, Unauthorized, ZeroRate
from polyfee.oracle import (
    ExchangeRateTable,
    FeedContractState,
    feed_update,
    load_rate_series,
    sync_rates,
    table_from_contract,
    write_rate_series,
)
from polyfee.types import Rate, account_address

FEEDER = account_address("feeder")
OUTSIDER = account_address("outsider")


def fresh_contract() -> FeedContractState:
    return FeedContractState(authorized_feeder=FEEDER)


def test_feed_update_visible_from_its_height():
    contract = feed_update(fresh_contract(), ("USD", "CNY"), Rate(7_200_000_000, "USD", "CNY"), 5, FEEDER)
    assert contract.as_of("USD", "CNY", 4) is None
    assert contract.as_of("USD", "CNY", 5).value == 7_200_000_000
    assert contract.as_of("USD", "CNY", 50).value == 7_200_000_000
    assert contract.latest("USD", "CNY").value == 7_200_000_000


def test_feed_update_requires_feeder():
    with pytest.raises(Unauthorized):
        feed_update(fresh_contract(), ("USD", "CNY"), Rate(1, "USD", "CNY"), 1, OUTSIDER)


def test_feed_update_rejects_nonpositive_rate():
    with pytest.raises(ZeroRate):
        feed_update(fresh_contract(), ("USD", "CNY"), Rate(0, "USD", "CNY"), 1, FEEDER)


def test_feed_update_pair_must_match():
    with pytest.raises(ConfigError):
        feed_update(fresh_contract(), ("USD", "EUR"), Rate(1, "USD", "CNY"), 1, FEEDER)


def test_feed_update_replaces_previous_value():
    contract = fresh_contract()
    contract = feed_update(contract, ("USD", "CNY"), Rate(7_200_000_000, "USD", "CNY"), 5, FEEDER)
    contract = feed_update(contract, ("USD", "CNY"), Rate(7_300_000_000, "USD", "CNY"), 12, FEEDER)
    assert contract.latest("USD", "CNY").value == 7_300_000_000
    assert contract.as_of("USD", "CNY", 11).value == 7_200_000_000   # history kept for replays


def test_sync_rates_only_on_interval():
    contract = feed_update(fresh_contract(), ("USD", "CNY"), Rate(7_200_000_000, "USD", "CNY"), 0, FEEDER)
    table = ExchangeRateTable("USD", {}, 0)
    synced = sync_rates(table, contract, 10, 10)
    assert synced.snapshot_height == 10
    assert synced.get("CNY").value == 7_200_000_000
    assert sync_rates(synced, contract, 11, 10) is synced            # not a sync height


def test_sync_is_deterministic_across_nodes():
    contract = fresh_contract()
    contract = feed_update(contract, ("USD", "CNY"), Rate(7_200_000_000, "USD", "CNY"), 3, FEEDER)
    contract = feed_update(contract, ("USD", "EUR"), Rate(930_000_000, "USD", "EUR"), 7, FEEDER)
    node_a = sync_rates(ExchangeRateTable("USD", {}, 0), contract, 20, 10)
    node_b = sync_rates(ExchangeRateTable("USD", {"CNY": Rate(1, "USD", "CNY")}, 10), contract, 20, 10)
    assert node_a == node_b


def test_table_identity_rate_for_reference():
    table = ExchangeRateTable("USD", {}, 0)
    assert table.get("USD").value == 10**9


def test_table_from_contract_filters_reference_pairs():
    contract = fresh_contract()
    contract = feed_update(contract, ("USD", "CNY"), Rate(7_200_000_000, "USD", "CNY"), 0, FEEDER)
    contract = feed_update(contract, ("EUR", "CNY"), Rate(7_800_000_000, "EUR", "CNY"), 0, FEEDER)
    table = table_from_contract(contract, "USD", 0)
    assert set(table.rates) == {"USD", "CNY"}


def test_load_rate_series(tmp_path):
    path = tmp_path / "rates.csv"
    path.write_text("0,CNY,7.2\n10,CNY,7.3\n")
    assert load_rate_series(str(path)) == [(0, "CNY", 7_200_000_000), (10, "CNY", 7_300_000_000)]


def test_load_rate_series_empty(tmp_path):
    path = tmp_path / "rates.csv"
    path.write_text("")
    assert load_rate_series(str(path)) == []


def test_load_rate_series_errors(tmp_path):
    path = tmp_path / "rates.csv"
    path.write_text("0,CNY,abc\n")
    with pytest.raises(ParseError) as err:
        load_rate_series(str(path))
    assert err.value.line == 1

    path.write_text("0,CNY,7.2\nnope\n")
    with pytest.raises(ParseError) as err:
        load_rate_series(str(path))
    assert err.value.line == 2

    path.write_text("x,CNY,7.2\n")
    with pytest.raises(ParseError):
        load_rate_series(str(path))


def test_rate_series_round_trip(tmp_path):
    entries = [(0, "CNY", 7_200_000_000), (5, "EUR", 930_000_000), (10, "CNY", 7_110_000_000)]
    path = tmp_path / "series.csv"
    write_rate_series(str(path), entries)
    assert load_rate_series(str(path)) == entries

import pytest

from chainauth.contracts import HtlcStatus
from chainauth.crypto import hash32
from chainauth.scenario import (EXPIRED, GRANTED, REFUNDED, REJECTED, ConfigError,
                                ScenarioConfig, run_model1, run_model2, run_model3, run_model4,
                                run_scenario)

PRICE = 100


def model4(**kw):
    return ScenarioConfig(model=4, n=kw.pop("n", 4), m=kw.pop("m", 2), **kw)


def test_model1_happy_path():
    result = run_scenario(ScenarioConfig(model=1))
    r = result.report
    assert r.outcome == GRANTED and r.public_rounds == 3
    assert r.balances_after["owner"] == PRICE
    assert r.balances_after["client"] == r.balances_before["client"] - PRICE
    assert r.tx_count == {"public": 3}
    assert r.ok


def test_model1_refund_when_secret_withheld():
    r = run_model1(ScenarioConfig(model=1, as_withholds_reveal=frozenset({1})))
    assert r.outcome == REFUNDED
    assert r.balances_after == r.balances_before
    assert r.ok


def test_model1_receipts_match_client_data():
    a = run_scenario(ScenarioConfig(model=1)).artifacts
    assert a["recorded_hash_bundle"] == hash32(a["encrypted_pop"] + a["pop"] + a["encrypted_token"])
    assert a["recorded_hash_token"] == hash32(a["token"])


def test_model2_rounds_and_delay():
    r = run_model2()
    assert r.outcome == GRANTED and r.public_rounds == 4 and r.estimated_delay_seconds == 60
    assert r.label == "SC & 1 BC"


def test_model2_rejects_non_allowlisted():
    r = run_model2(ScenarioConfig(model=2, client_allowlisted=False))
    assert r.outcome == REJECTED and r.public_rounds == 1 and r.failed_tx == {"public": 1}
    assert r.ok


def test_model3_two_ledgers():
    result = run_scenario(ScenarioConfig(model=3))
    r = result.report
    assert r.outcome == GRANTED and r.public_rounds == 3 and r.estimated_delay_seconds == 45
    assert r.tx_count == {"public": 3, "private": 3}


def test_model3_gateway_fee():
    r = run_model3(ScenarioConfig(model=3, gateway_fee=7))
    assert r.balances_after["owner"] == PRICE - 7 and r.balances_after["gateway"] == 7
    assert r.ok


def test_model3_client_initiated_payment():
    r = run_model3(ScenarioConfig(model=3, htlc_initiator="client"))
    assert r.outcome == GRANTED and r.public_rounds == 3


def test_model3_refund():
    r = run_model3(ScenarioConfig(model=3, as_withholds_reveal=frozenset({1})))
    assert r.outcome == REFUNDED and r.balances_after == r.balances_before


@pytest.mark.parametrize("m", [2, 3])
@pytest.mark.parametrize("ledgers,rounds", [(1, 4), (2, 3)])
def test_model4_rounds(m, ledgers, rounds):
    r = run_model4(model4(m=m, ledgers=ledgers))
    assert r.outcome == GRANTED and r.public_rounds == rounds
    assert r.label == f"Dec-Auth {m}-of-4 & {'1 BC' if ledgers == 1 else '2 BCs'}"


def test_model4_bytes():
    r = run_model4(model4(m=3, agg_mac=True, dedup=True))
    assert r.bytes_to_thing == 314 and r.reduction_percent == 32.0


def test_model4_first_m_responses():
    result = run_scenario(model4(m=3, selection_mode="FirstMResponses"))
    r = result.report
    assert r.outcome == GRANTED
    assert r.tx_count["private"] == 1 + 4 + 3  # request, all four answers, three relays
    assert r.tx_count["public"] == 1 + 1 + 3


def test_model4_partial_reveal_refunds():
    result = run_scenario(model4(m=3, as_withholds_reveal=frozenset({2})))
    assert result.report.outcome == REFUNDED
    assert result.report.balances_after["client"] == 1000
    htlcs = [c for c in result.ledgers["public"].contracts.values()]
    assert htlcs[0].htlc.status is HtlcStatus.REFUNDED and len(htlcs[0].htlc.revealed) == 2


def test_model4_expiry_takes_no_deposit():
    result = run_scenario(model4(m=3, as_never_responds=frozenset({1, 2})))
    r = result.report
    assert r.outcome == EXPIRED and r.tx_count["public"] == 0
    assert not result.ledgers["public"].contracts
    assert r.balances_after == r.balances_before


def test_model4_never_responding_unselected_as_is_harmless():
    r = run_model4(model4(m=2, as_never_responds=frozenset({4})))
    assert r.outcome == GRANTED


def test_model4_latency_drives_selection():
    result = run_scenario(model4(m=2, as_latency=(5, None, 1, 2)))
    (ready,) = result.ledgers["private"].read_events(None, "ResponsesReady")
    assert ready["as_ids"] == ["AS3", "AS4"]


@pytest.mark.parametrize("section", ["tokens", "tags"])
def test_corrupted_bundle_rejected_for_integrity(section):
    r = run_model4(model4(m=2, agg_mac=True, corrupt_byte=(section, 3)))
    assert r.outcome == REJECTED and r.reason == "integrity"


def test_corrupted_pop_fails_key_agreement():
    r = run_model4(model4(m=2, agg_mac=True, dedup=True, corrupt_byte=("pops", 0)))
    assert r.outcome == REJECTED and r.reason == "key agreement"


def test_determinism_and_seed_independence():
    cfg = model4(m=3, agg_mac=True)
    a, b = run_scenario(cfg), run_scenario(cfg)
    assert a.transcript == b.transcript
    assert a.report.to_text() == b.report.to_text()
    c = run_scenario(ScenarioConfig(**{**cfg.__dict__, "rng_seed": 7}))
    assert c.report.transcript_digest != a.report.transcript_digest
    assert c.report.public_rounds == a.report.public_rounds
    assert c.report.bytes_to_thing == a.report.bytes_to_thing
    assert c.report.tx_count == a.report.tx_count


@pytest.mark.parametrize("bad", [
    dict(model=5), dict(model=1, ledgers=2), dict(model=2, n=2, m=1), dict(model=4, n=2, m=3),
    dict(model=4, n=2, m=2, as_withholds_reveal=frozenset({3})),
    dict(model=4, n=2, m=1, as_latency=(1,)), dict(model=3, price=10, gateway_fee=11),
    dict(model=4, n=2, m=1, corrupt_byte=("nowhere", 0)), dict(model=3, block_time_seconds=0),
    dict(model=4, n=2, m=1, selection_mode="Random"),
])
def test_invalid_configs(bad):
    with pytest.raises((ConfigError, ValueError)):
        ScenarioConfig(**bad).validated()


def test_ledger_states_hash_identically_across_runs():
    a = run_scenario(model4(m=2, ledgers=1))
    b = run_scenario(model4(m=2, ledgers=1))
    assert a.ledgers["public"].state_hash() == b.ledgers["public"].state_hash()

import itertools
import random
from dataclasses import replace

import pytest

from chainauth import contracts
from chainauth.actors import (AccessRejected, AccessRequestToThing, AuthServer, Client, Gateway,
                              ThingState, challenge_response, check_challenge, issue_challenge,
                              make_access_request, thing_verify_and_derive)
from chainauth.contracts import AsEntry, AuthzContract
from chainauth.crypto import hash32, keygen, keygen_symmetric, keystream_encrypt, xor_combine
from chainauth.ledger import Ledger
from chainauth.tokens import BundleOptions

URI = "coap://thing.example/sensor"
NOW = 1_000


def setup(n, m, seed=0):
    servers = [AuthServer(f"AS{i}", keygen(b"as%d" % i), keygen_symmetric(b"kt%d" % i),
                          random.Random(seed * 100 + i)) for i in range(1, n + 1)]
    thing = ThingState(URI, {s.as_id: s.thing_key for s in servers}, m)
    client = Client(keygen(b"client"))
    return servers, thing, client


def obtain(servers, client, sid="s1", now=NOW):
    """Each server responds; the client opens every response with its secret."""
    entries, pops = [], []
    for s in servers:
        r = s.respond(sid, URI, "read", client.account.public, now, 3600)
        token, enc_pop, pop = client.open_response(sid, s.as_id, r.blob, r.secret, r.lock)
        assert token == r.token and enc_pop == r.encrypted_pop
        entries.append((s.as_id, token, enc_pop))
        pops.append(pop)
    return entries, pops


@pytest.mark.parametrize("n", [2, 3, 4])
def test_key_agreement_every_subset(n):
    servers, _, client = setup(n, 1)
    for m in range(1, n + 1):
        for subset in itertools.combinations(servers, m):
            thing = ThingState(URI, {s.as_id: s.thing_key for s in servers}, m)
            entries, pops = obtain(subset, client)
            for opts in BundleOptions.all():
                req = make_access_request("s1", entries, opts)
                assert thing_verify_and_derive(req, thing, NOW) == client.combine(pops)


def test_policy_rejects_m_minus_one():
    servers, thing, client = setup(4, 3)
    entries, _ = obtain(servers[:2], client)
    with pytest.raises(AccessRejected) as exc:
        thing_verify_and_derive(make_access_request("s1", entries, BundleOptions()), thing, NOW)
    assert exc.value.reason == "policy"


def test_unknown_issuer():
    servers, thing, client = setup(2, 2)
    rogue = AuthServer("AS9", keygen(b"r"), keygen_symmetric(b"r"), random.Random(9))
    entries, _ = obtain([servers[0], rogue], client)
    with pytest.raises(AccessRejected) as exc:
        thing_verify_and_derive(make_access_request("s1", entries, BundleOptions()), thing, NOW)
    assert exc.value.reason == "unknown issuer"


def test_expired_and_not_yet_valid():
    servers, thing, client = setup(2, 2)
    entries, _ = obtain(servers, client)
    req = make_access_request("s1", entries, BundleOptions(True, True))
    for now in (NOW - 1, NOW + 3600):
        with pytest.raises(AccessRejected) as exc:
            thing_verify_and_derive(req, thing, now)
        assert exc.value.reason == "expired"
    thing_verify_and_derive(req, thing, NOW + 3599)


def test_wrong_subject():
    servers, _, client = setup(1, 1)
    other = ThingState("coap://elsewhere", {servers[0].as_id: servers[0].thing_key}, 1)
    entries, _ = obtain(servers, client)
    with pytest.raises(AccessRejected) as exc:
        thing_verify_and_derive(make_access_request("s1", entries, BundleOptions()), other, NOW)
    assert exc.value.reason == "subject"


def test_swapped_issuer_order_rejected():
    servers, thing, client = setup(2, 2)
    entries, _ = obtain(servers, client)
    req = make_access_request("s1", entries, BundleOptions())
    with pytest.raises(AccessRejected) as exc:
        thing_verify_and_derive(replace(req, as_ids=tuple(reversed(req.as_ids))), thing, NOW)
    assert exc.value.reason == "integrity"


@pytest.mark.parametrize("opts", BundleOptions.all(), ids=lambda o: o.label)
def test_bit_flip_sweep(opts):
    servers, thing, client = setup(3, 3)
    entries, pops = obtain(servers, client)
    req = make_access_request("s1", entries, opts)
    client_pop = client.combine(pops)
    pop_start = len(req.bundle) - 32 * 3
    for bit in range(len(req.bundle) * 8):
        bad = bytearray(req.bundle)
        bad[bit // 8] ^= 1 << (bit % 8)
        fresh = ThingState(URI, thing.keys, 3)
        tampered = AccessRequestToThing(bytes(bad), req.as_ids, "s1", opts)
        if bit // 8 < pop_start:
            with pytest.raises(AccessRejected):
                thing_verify_and_derive(tampered, fresh, NOW)
        else:
            derived = thing_verify_and_derive(tampered, fresh, NOW)
            assert derived != client_pop
            assert not challenge_response(fresh, "s1", client_pop, random.Random(bit))


def test_challenge_response():
    servers, thing, client = setup(3, 3)
    entries, pops = obtain(servers, client)
    thing_verify_and_derive(make_access_request("s1", entries, BundleOptions()), thing, NOW)
    rng = random.Random(1)
    assert challenge_response(thing, "s1", client.combine(pops), rng)
    assert not challenge_response(thing, "s1", client.combine(pops[:2]), rng)
    nonce = issue_challenge(thing, "s1", rng)
    answer = Client.answer(client.combine(pops), nonce)
    fresh = issue_challenge(thing, "s1", rng)
    assert not check_challenge(thing, "s1", fresh, answer)
    assert check_challenge(thing, "s1", nonce, answer)
    assert not check_challenge(thing, "s1", nonce, answer)  # nonce is single use
    assert not challenge_response(thing, "unknown", client.combine(pops), rng)


def test_eavesdropper_sees_no_pop():
    servers, thing, client = setup(3, 3)
    sid = "s1"
    responses = [s.respond(sid, URI, "read", client.account.public, NOW, 3600) for s in servers]
    pops = []
    for s, r in zip(servers, responses):
        pops.append(client.open_response(sid, s.as_id, r.blob, r.secret, r.lock)[2])
    transcript = b"".join(r.blob + r.lock + r.secret for r in responses)
    entries = [(s.as_id, r.token, r.encrypted_pop) for s, r in zip(servers, responses)]
    req = make_access_request(sid, entries, BundleOptions(True, True))
    for pop, r in zip(pops, responses):
        assert pop not in transcript + req.bundle
        assert r.encrypted_pop != pop
    thing_verify_and_derive(req, thing, NOW)
    # replaying the bundle without the PoP gives an attacker nothing to answer with
    guess = xor_combine([r.encrypted_pop for r in responses])
    assert not challenge_response(thing, sid, guess, random.Random(2))


def test_open_response_rejects_wrong_secret():
    servers, _, client = setup(1, 1)
    r = servers[0].respond("s1", URI, "read", client.account.public, NOW, 3600)
    with pytest.raises(ValueError):
        client.open_response("s1", "AS1", r.blob, b"x" * 32, r.lock)


def test_thing_pop_decrypts_with_session_nonce():
    servers, _, client = setup(1, 1)
    r = servers[0].respond("s7", URI, "read", client.account.public, NOW, 3600)
    pop = client.open_response("s7", "AS1", r.blob, r.secret, r.lock)[2]
    assert keystream_encrypt(servers[0].thing_key, b"s7|AS1", r.encrypted_pop) == pop


# -- gateway ------------------------------------------------------------------------

def two_ledgers(n=3, m=2):
    auth = Ledger("private", 15, contracts.FACTORIES)
    pay = Ledger("public", 15, contracts.FACTORIES)
    for led in (auth, pay):
        for acct in ["client", "owner", "gw", *[f"a{i}" for i in range(1, n + 1)]]:
            led.open_account(acct, 1000 if acct == "client" else 0)
    registry = [AsEntry(f"AS{i}", f"a{i}") for i in range(1, n + 1)]
    cid = auth.deploy(AuthzContract("owner", {"read": 100}, registry, m))
    return auth, pay, cid


def test_gateway_relays_once():
    auth, pay, cid = two_ledgers()
    gw = Gateway("gw", cid)
    assert gw.poll(auth, pay) == []
    contracts.authz_request_access(auth, cid, "client", URI, "read")
    auth.mine()
    sid = auth.read_events(cid, "AccessRequested")[0]["session_id"]
    secrets = {}
    for i in (1, 2):
        secrets[i] = bytes([i]) * 32
        contracts.authz_post_response(auth, cid, f"a{i}", f"AS{i}", sid, b"b", hash32(secrets[i]))
    auth.mine()
    assert len(gw.poll(auth, pay)) == 1
    assert gw.poll(auth, pay) == []
    pay.mine()
    (created,) = pay.read_events(None, "HtlcCreated")
    htlc_id = created.contract_id
    assert created["link"] == {"authz": cid, "session_id": sid}
    contracts.htlc_deposit(pay, htlc_id, "client", 100)
    pay.mine()
    for i in (1, 2):
        contracts.htlc_reveal(pay, htlc_id, f"a{i}", secrets[i])
    pay.mine()
    relayed = gw.poll(auth, pay)
    assert len(relayed) == 2
    assert gw.poll(auth, pay) == []
    block = auth.mine()
    assert block.applied == relayed  # one auth round
    assert auth.read_events(cid, "SecretsRecorded")[0]["secrets"] == {
        "AS1": secrets[1], "AS2": secrets[2]}


def test_gateway_skips_malformed_events():
    auth, pay, cid = two_ledgers()
    gw = Gateway("gw", cid)
    auth._emit(cid, "ResponsesReady", {"session_id": "s9"})
    auth.mine()
    assert gw.poll(auth, pay) == []

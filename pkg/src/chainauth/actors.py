"""Client, authorization server, Thing and interledger gateway actors.

Actors exchange plain values only. Anything an actor learns from a chain it
reads from mined events, so a message can never depend on a transaction in
the same round.
"""
from __future__ import annotations

import hmac
import logging
import random
from dataclasses import dataclass, field
from typing import Sequence

from . import contracts
from .crypto import (KeyPair, check32, hash32, keystream_encrypt, mac_tag, mac_verify, seal,
                     unseal, xor_combine)
from .ledger import Ledger
from .tokens import (POP_SIZE, SIGNED_SIZE, TYPE_POP, VERSION, BundleOptions, CodecError,
                     SignedToken, TokenPayload, aggregate_tags, build_bundle, encode_compact,
                     pad, parse_bundle, sign_token, thing_id, token_mac_key)

log = logging.getLogger(__name__)


def session_nonce(session_id: str, sender_id: str) -> bytes:
    return session_id.encode() + b"|" + sender_id.encode()


@dataclass(frozen=True)
class AsResponse:
    as_id: str
    token: SignedToken
    sealed_pop: bytes
    encrypted_pop: bytes
    secret: bytes = field(repr=False)
    lock: bytes
    blob: bytes


@dataclass(frozen=True)
class DirectGrant:
    """What a single AS hands the client off-chain (the hash-recording model)."""
    pop: bytes = field(repr=False)
    encrypted_pop: bytes
    encrypted_token: bytes
    lock: bytes
    price: int


def pack_response_items(token: SignedToken, encrypted_pop: bytes, sealed_pop: bytes) -> bytes:
    return token.to_bytes() + encrypted_pop + sealed_pop


def unpack_response_items(data: bytes) -> tuple[SignedToken, bytes, bytes]:
    if len(data) < SIGNED_SIZE + POP_SIZE:
        raise CodecError("response blob too short")
    token = SignedToken.from_bytes(data[:SIGNED_SIZE])
    encrypted_pop = data[SIGNED_SIZE:SIGNED_SIZE + POP_SIZE]
    return token, encrypted_pop, data[SIGNED_SIZE + POP_SIZE:]


class AuthServer:
    def __init__(self, as_id: str, account: KeyPair, thing_key: bytes, rng: random.Random):
        self.as_id = as_id
        self.account = account
        self.thing_key = check32(thing_key, "thing key")
        self.mac_key = token_mac_key(thing_key)
        self.rng = rng
        self._secrets: dict[bytes, bytes] = {}

    @property
    def iss(self) -> bytes:
        return pad(self.as_id, 16)

    def issue_token(self, thing_uri: str, scope: str, now: int, validity: int) -> SignedToken:
        payload = TokenPayload(sub=thing_id(thing_uri), scope=pad(scope, 8), iat=now,
                               exp=now + validity, type=TYPE_POP, version=VERSION,
                               iss=self.iss, cti=self.rng.randbytes(32))
        return sign_token(payload, self.mac_key)

    def respond(self, session_id: str, thing_uri: str, scope: str, client_public: bytes,
                now: int, validity: int) -> AsResponse:
        nonce = session_nonce(session_id, self.as_id)
        pop = self.rng.randbytes(POP_SIZE)
        token = self.issue_token(thing_uri, scope, now, validity)
        encrypted_pop = keystream_encrypt(self.thing_key, nonce, pop)
        sealed_pop = seal(client_public, pop, self.rng)
        secret = self.rng.randbytes(32)
        lock = hash32(secret)
        self._secrets[lock] = secret
        blob = keystream_encrypt(secret, nonce, pack_response_items(token, encrypted_pop, sealed_pop))
        return AsResponse(self.as_id, token, sealed_pop, encrypted_pop, secret, lock, blob)

    def grant_direct(self, session_id: str, thing_uri: str, scope: str, price: int, now: int,
                     validity: int) -> tuple[DirectGrant, SignedToken]:
        """Off-chain grant: PoP in the clear over the secured link, token under secret s."""
        nonce = session_nonce(session_id, self.as_id)
        pop = self.rng.randbytes(POP_SIZE)
        token = self.issue_token(thing_uri, scope, now, validity)
        secret = self.rng.randbytes(32)
        lock = hash32(secret)
        self._secrets[lock] = secret
        grant = DirectGrant(pop=pop,
                            encrypted_pop=keystream_encrypt(self.thing_key, nonce, pop),
                            encrypted_token=keystream_encrypt(secret, nonce, token.to_bytes()),
                            lock=lock, price=price)
        return grant, token

    def secret_for(self, lock: bytes) -> bytes:
        return self._secrets[lock]


class Client:
    def __init__(self, account: KeyPair):
        self.account = account

    @property
    def account_id(self) -> str:
        return self.account.public_id

    def open_response(self, session_id: str, as_id: str, blob: bytes, secret: bytes,
                      lock: bytes) -> tuple[SignedToken, bytes, bytes]:
        """Decrypt an on-chain response; returns (token, PoP ciphertext for Thing, PoP)."""
        if hash32(secret) != lock:
            raise ValueError(f"secret from {as_id} does not open its lock")
        items = keystream_encrypt(secret, session_nonce(session_id, as_id), blob)
        token, encrypted_pop, sealed_pop = unpack_response_items(items)
        return token, encrypted_pop, unseal(self.account, sealed_pop)

    @staticmethod
    def combine(pops: Sequence[bytes]) -> bytes:
        return xor_combine(pops)

    @staticmethod
    def answer(pop: bytes, nonce: bytes) -> bytes:
        return mac_tag(pop, nonce)


@dataclass(frozen=True)
class AccessRequestToThing:
    bundle: bytes
    as_ids: tuple[str, ...]
    session_id: str
    opts: BundleOptions = BundleOptions()


def make_access_request(session_id: str, entries: Sequence[tuple[str, SignedToken, bytes]],
                        opts: BundleOptions) -> AccessRequestToThing:
    """``entries`` are (as_id, signed token, PoP ciphertext for the Thing)."""
    bundle = build_bundle([(t.payload, t.tag, c) for _, t, c in entries], opts)
    return AccessRequestToThing(bundle, tuple(a for a, _, _ in entries), session_id, opts)


class AccessRejected(Exception):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass
class ThingState:
    thing_uri: str
    keys: dict[str, bytes]
    required_m: int
    accepted: dict[str, bytes] = field(default_factory=dict)
    outstanding: dict[str, set[bytes]] = field(default_factory=dict)


def thing_verify_and_derive(request: AccessRequestToThing, state: ThingState, now: int) -> bytes:
    """Check a bundle against the Thing's keys and policy; return the combined PoP key."""
    m = len(request.as_ids)
    if m != state.required_m:
        raise AccessRejected("policy", f"{m} issuers presented, {state.required_m} required")
    if len(set(request.as_ids)) != m:
        raise AccessRejected("policy", "repeated issuer")
    for as_id in request.as_ids:
        if as_id not in state.keys:
            raise AccessRejected("unknown issuer", as_id)
    try:
        contents = parse_bundle(request.bundle, m, request.opts)
    except CodecError as exc:
        raise AccessRejected("integrity", str(exc)) from None
    keys = [state.keys[a] for a in request.as_ids]
    expected = [mac_tag(token_mac_key(k), encode_compact(p))
                for k, p in zip(keys, contents.payloads)]
    if contents.aggregate:
        ok = hmac.compare_digest(aggregate_tags(expected), contents.tags[0])
    else:
        ok = all(hmac.compare_digest(e, t) for e, t in zip(expected, contents.tags))
    if not ok:
        raise AccessRejected("integrity", "MAC verification failed")
    sub = thing_id(state.thing_uri)
    for as_id, payload in zip(request.as_ids, contents.payloads):
        if payload.iss != pad(as_id, 16):
            raise AccessRejected("integrity", "issuer does not match presented AS")
        if payload.sub != sub:
            raise AccessRejected("subject", "token is for another Thing")
        if not payload.iat <= now < payload.exp:
            raise AccessRejected("expired")
    pops = [keystream_encrypt(k, session_nonce(request.session_id, a), c)
            for k, a, c in zip(keys, request.as_ids, contents.pops)]
    pop = xor_combine(pops)
    state.accepted[request.session_id] = pop
    return pop


def issue_challenge(state: ThingState, session_id: str, rng: random.Random) -> bytes:
    nonce = rng.randbytes(32)
    state.outstanding.setdefault(session_id, set()).add(nonce)
    return nonce


def check_challenge(state: ThingState, session_id: str, nonce: bytes, response: bytes) -> bool:
    pending = state.outstanding.get(session_id, set())
    if nonce not in pending or session_id not in state.accepted:
        return False
    pending.discard(nonce)
    return mac_verify(state.accepted[session_id], nonce, response)


def challenge_response(state: ThingState, session_id: str, client_pop: bytes,
                       rng: random.Random) -> bool:
    nonce = issue_challenge(state, session_id, rng)
    return check_challenge(state, session_id, nonce, Client.answer(client_pop, nonce))


class Gateway:
    """Relays lock/price data to the payment ledger and revealed secrets back."""

    def __init__(self, account: str, authz_id: str, payment_window: int = 10):
        self.account = account
        self.authz_id = authz_id
        self.payment_window = payment_window
        self._sessions: dict[str, dict] = {}
        self._relayed: set[tuple[str, str]] = set()

    def poll(self, auth: Ledger, payment: Ledger, create_htlc: bool = True) -> list[str]:
        submitted = []
        for ev in auth.read_events(self.authz_id, "ResponsesReady"):
            try:
                sid = ev["session_id"]
                if sid in self._sessions:
                    continue
                info = {"as_by_lock": dict(zip(ev["locks"], ev["as_ids"])),
                        "client": ev["client"], "price": ev["price"],
                        "locks": list(ev["locks"]), "payout_plan": ev["payout_plan"]}
            except (KeyError, TypeError) as exc:
                log.warning("skipping malformed event %s: %s", ev.index, exc)
                continue
            self._sessions[sid] = info
            if create_htlc:
                submitted.append(contracts.htlc_create(
                    payment, self.account, payer=info["client"], price=info["price"],
                    hash_locks=info["locks"], payout_plan=info["payout_plan"],
                    deadline_height=payment.height + 2 + self.payment_window,
                    link={"authz": self.authz_id, "session_id": sid}))
        for ev in payment.read_events(None, "SecretRevealed"):
            try:
                link = ev["link"]
                if link.get("authz") != self.authz_id:
                    continue
                sid = link["session_id"]
                as_id = self._sessions[sid]["as_by_lock"][ev["lock"]]
                secret = ev["secret"]
            except (KeyError, TypeError, AttributeError) as exc:
                log.warning("skipping malformed event %s: %s", ev.index, exc)
                continue
            if (sid, as_id) in self._relayed:
                continue
            self._relayed.add((sid, as_id))
            submitted.append(contracts.authz_record_secret(
                auth, self.authz_id, self.account, sid, as_id, secret))
        return submitted

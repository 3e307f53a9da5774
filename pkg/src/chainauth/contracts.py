"""Contract state machines executed by :class:`~chainauth.ledger.Ledger`.

* ``HtlcContract``: hashed time-lock payment with one or more hash-locks that
  must all be opened (AND) before the deadline, else the payer may refund.
* ``AuthzContract``: prices, allowlist, AS registry and per-request sessions.
  On a single ledger it also hosts the payment HTLC for each session.
* ``RegistryContract``: Thing URI to contract/AS binding.

The module-level helpers (``htlc_create``, ``authz_request_access``...) only
queue transactions; effects happen when the ledger mines.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Sequence

from .crypto import hash32
from .ledger import CREATE, CallContext, Contract, ContractError, Ledger, LedgerError


class HtlcStatus(str, enum.Enum):
    CREATED = "Created"
    FUNDED = "Funded"
    PAID = "Paid"
    REFUNDED = "Refunded"


class SessionStatus(str, enum.Enum):
    OPEN = "Open"
    RESPONDED = "Responded"
    PAID_RECORDED = "PaidRecorded"
    EXPIRED = "Expired"


class SelectionMode(str, enum.Enum):
    CONTRACT_SELECTS = "ContractSelects"
    FIRST_M_RESPONSES = "FirstMResponses"


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ContractError(message)


def _as_bytes(value) -> bytes:
    return bytes.fromhex(value) if isinstance(value, str) else bytes(value)


@dataclass
class HtlcState:
    payer: str
    price: int
    hash_locks: list[bytes]
    payout_plan: list[tuple[str, int]]
    deadline_height: int
    revealed: dict[bytes, bytes] = field(default_factory=dict)
    amount_deposited: int = 0
    status: HtlcStatus = HtlcStatus.CREATED

    @classmethod
    def new(cls, ctx: CallContext, payer: str, price: int, hash_locks: Sequence,
            payout_plan: Sequence, deadline_height: int) -> HtlcState:
        locks = [_as_bytes(h) for h in hash_locks]
        plan = [(str(acct), int(amount)) for acct, amount in payout_plan]
        _require(len(locks) > 0, "at least one hash-lock required")
        _require(all(len(h) == 32 for h in locks), "hash-locks must be 32 bytes")
        _require(len(set(locks)) == len(locks), "duplicate hash-lock")
        _require(price >= 0, "negative price")
        _require(all(amount >= 0 for _, amount in plan), "negative payout")
        _require(sum(amount for _, amount in plan) == price, "payout plan must sum to price")
        _require(deadline_height > ctx.height, "deadline must be in the future")
        return cls(payer, price, locks, plan, deadline_height)

    def describe(self) -> dict:
        return {"payer": self.payer, "price": self.price, "hash_locks": list(self.hash_locks),
                "payout_plan": [list(p) for p in self.payout_plan],
                "deadline_height": self.deadline_height}

    def deposit(self, ctx: CallContext) -> None:
        _require(self.status is HtlcStatus.CREATED, "not awaiting deposit")
        _require(ctx.sender == self.payer, "only the payer may deposit")
        _require(ctx.value == self.price, "deposit must equal price")
        self.amount_deposited = ctx.value
        self.status = HtlcStatus.FUNDED

    def reveal(self, ctx: CallContext, secret: bytes) -> bytes:
        """Open the lock matching ``secret``; returns the lock. Pays out once all are open."""
        _require(self.status is HtlcStatus.FUNDED, "not funded")
        _require(ctx.height < self.deadline_height, "deadline passed")
        lock = hash32(secret)
        _require(lock in self.hash_locks, "secret matches no lock")
        _require(lock not in self.revealed, "lock already opened")
        self.revealed[lock] = secret
        if len(self.revealed) == len(self.hash_locks):
            for account, amount in self.payout_plan:
                ctx.pay(account, amount)
            self.status = HtlcStatus.PAID
        return lock

    def refund(self, ctx: CallContext) -> None:
        _require(self.status is HtlcStatus.FUNDED, "not refundable")
        _require(ctx.height >= self.deadline_height, "deadline not reached")
        ctx.pay(self.payer, self.amount_deposited)
        self.status = HtlcStatus.REFUNDED


@dataclass
class HtlcContract(Contract):
    htlc: HtlcState
    link: dict = field(default_factory=dict)
    hash_token: bytes | None = None
    hash_bundle: bytes | None = None

    kind = "htlc"
    payable = frozenset({"deposit"})

    @classmethod
    def create(cls, ctx: CallContext, payer, price, hash_locks, payout_plan, deadline_height,
               link=None, hash_token=None, hash_bundle=None) -> HtlcContract:
        state = HtlcState.new(ctx, payer, price, hash_locks, payout_plan, deadline_height)
        contract = cls(state, dict(link or {}))
        ctx.emit("HtlcCreated", link=contract.link, **state.describe())
        if hash_token is not None or hash_bundle is not None:
            contract.hash_token = _as_bytes(hash_token)
            contract.hash_bundle = _as_bytes(hash_bundle)
            _require(len(contract.hash_token) == 32 and len(contract.hash_bundle) == 32,
                     "recorded hashes must be 32 bytes")
            ctx.emit("HashesRecorded", hash_token=contract.hash_token,
                     hash_bundle=contract.hash_bundle)
        return contract

    def call_deposit(self, ctx: CallContext) -> None:
        self.htlc.deposit(ctx)
        ctx.emit("Funded", payer=ctx.sender, amount=ctx.value)

    def call_reveal(self, ctx: CallContext, secret) -> None:
        secret = _as_bytes(secret)
        lock = self.htlc.reveal(ctx, secret)
        ctx.emit("SecretRevealed", lock=lock, secret=secret, link=self.link)
        if self.htlc.status is HtlcStatus.PAID:
            ctx.emit("Paid", payout_plan=[list(p) for p in self.htlc.payout_plan])

    def call_refund(self, ctx: CallContext) -> None:
        self.htlc.refund(ctx)
        ctx.emit("Refunded", payer=self.htlc.payer, amount=self.htlc.amount_deposited)


@dataclass
class AsEntry:
    as_id: str
    account: str
    last_response_rounds: int | None = None


@dataclass
class AuthzSession:
    session_id: str
    client: str
    thing_uri: str
    scope: str
    price: int
    response_deadline: int
    selected_as_ids: list[str]
    responses: dict[str, tuple[bytes, bytes]] = field(default_factory=dict)
    accepted: list[str] = field(default_factory=list)
    ignored: list[str] = field(default_factory=list)
    secrets: dict[str, bytes] = field(default_factory=dict)
    status: SessionStatus = SessionStatus.OPEN
    htlc: HtlcState | None = None


def select_servers(registry: Sequence[AsEntry], m: int) -> list[str]:
    """The ``m`` fastest registered ASes; unknown latency sorts last, ties by registration."""
    order = sorted(range(len(registry)), key=lambda i: (
        registry[i].last_response_rounds is None,
        registry[i].last_response_rounds or 0,
        i))
    return [registry[i].as_id for i in order[:m]]


@dataclass
class AuthzContract(Contract):
    owner: str
    price_per_scope: dict[str, int]
    registry: list[AsEntry]
    threshold_m: int
    selection_mode: SelectionMode = SelectionMode.CONTRACT_SELECTS
    allowlist: set[str] | None = None
    response_window: int = 10
    # single-ledger deployments settle payment inside this contract
    local_payment: bool = False
    payment_window: int = 10
    gateway_fee: int = 0
    gateway: str | None = None
    sessions: dict[str, AuthzSession] = field(default_factory=dict)

    kind = "authz"
    payable = frozenset({"deposit"})

    def __post_init__(self):
        ids = [e.as_id for e in self.registry]
        if len(set(ids)) != len(ids):
            raise ValueError("registered AS ids must be unique")
        if not 1 <= self.threshold_m <= len(self.registry):
            raise ValueError("need 1 <= threshold_m <= total_n")
        self.selection_mode = SelectionMode(self.selection_mode)

    @property
    def total_n(self) -> int:
        return len(self.registry)

    def entry(self, as_id: str) -> AsEntry:
        for e in self.registry:
            if e.as_id == as_id:
                return e
        raise ContractError(f"unknown AS {as_id}")

    def session(self, session_id: str) -> AuthzSession:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise ContractError(f"unknown session {session_id}") from None

    def payout_plan(self, price: int) -> list[tuple[str, int]]:
        if self.gateway_fee and self.gateway:
            _require(self.gateway_fee <= price, "gateway fee exceeds price")
            return [(self.owner, price - self.gateway_fee), (self.gateway, self.gateway_fee)]
        return [(self.owner, price)]

    # -- session lifecycle ---------------------------------------------
    def call_request_access(self, ctx: CallContext, thing_uri: str, scope: str) -> None:
        _require(self.allowlist is None or ctx.sender in self.allowlist, "client not allowed")
        _require(scope in self.price_per_scope, "unknown scope")
        sid = f"s{len(self.sessions) + 1}"
        if self.selection_mode is SelectionMode.CONTRACT_SELECTS:
            selected = select_servers(self.registry, self.threshold_m)
        else:
            selected = []
        session = AuthzSession(sid, ctx.sender, thing_uri, scope, self.price_per_scope[scope],
                               ctx.height + self.response_window, selected)
        self.sessions[sid] = session
        ctx.emit("AccessRequested", session_id=sid, client=ctx.sender, thing_uri=thing_uri,
                 scope=scope, price=session.price, selected_as_ids=selected,
                 threshold_m=self.threshold_m, response_deadline=session.response_deadline)

    def call_post_response(self, ctx: CallContext, session_id: str, as_id: str, blob, lock) -> None:
        s = self.session(session_id)
        entry = self.entry(as_id)
        _require(ctx.sender == entry.account, "sender is not the AS account")
        _require(as_id not in s.responses, "duplicate response")
        _require(ctx.height < s.response_deadline, "response window closed")
        first_m = self.selection_mode is SelectionMode.FIRST_M_RESPONSES
        if first_m:
            _require(s.status in (SessionStatus.OPEN, SessionStatus.RESPONDED), "session not accepting")
        else:
            _require(s.status is SessionStatus.OPEN, "session not open")
            _require(as_id in s.selected_as_ids, "AS not selected")
        blob, lock = _as_bytes(blob), _as_bytes(lock)
        _require(len(lock) == 32, "lock must be 32 bytes")
        s.responses[as_id] = (blob, lock)
        if s.status is not SessionStatus.OPEN:
            s.ignored.append(as_id)
            ctx.emit("ResponseIgnored", session_id=session_id, as_id=as_id)
            return
        s.accepted.append(as_id)
        ctx.emit("ResponsePosted", session_id=session_id, as_id=as_id, blob=blob, lock=lock)
        if len(s.accepted) == self.threshold_m:
            s.status = SessionStatus.RESPONDED
            locks = [s.responses[a][1] for a in s.accepted]
            ctx.emit("ResponsesReady", session_id=session_id, client=s.client, price=s.price,
                     as_ids=list(s.accepted), locks=locks,
                     payout_plan=[list(p) for p in self.payout_plan(s.price)])
            if self.local_payment:
                s.htlc = HtlcState.new(ctx, s.client, s.price, locks, self.payout_plan(s.price),
                                       ctx.height + 1 + self.payment_window)
                ctx.emit("HtlcCreated", link={"session_id": session_id}, **s.htlc.describe())

    def call_expire(self, ctx: CallContext, session_id: str) -> None:
        s = self.session(session_id)
        _require(s.status is SessionStatus.OPEN, "session not open")
        _require(ctx.height >= s.response_deadline, "response window still open")
        s.status = SessionStatus.EXPIRED
        ctx.emit("SessionExpired", session_id=session_id, responses=len(s.accepted))

    def _store_secret(self, ctx: CallContext, s: AuthzSession, as_id: str, secret: bytes) -> None:
        s.secrets[as_id] = secret
        if len(s.secrets) == self.threshold_m:
            s.status = SessionStatus.PAID_RECORDED
            ctx.emit("SecretsRecorded", session_id=s.session_id,
                     secrets={a: s.secrets[a] for a in s.accepted})

    def call_record_secret(self, ctx: CallContext, session_id: str, as_id: str, secret) -> None:
        s = self.session(session_id)
        _require(not self.local_payment, "secrets are recorded by local payment")
        _require(s.status is SessionStatus.RESPONDED, "session not awaiting secrets")
        _require(as_id in s.accepted, "AS response not accepted")
        _require(as_id not in s.secrets, "secret already recorded")
        secret = _as_bytes(secret)
        _require(hash32(secret) == s.responses[as_id][1], "secret does not match lock")
        self._store_secret(ctx, s, as_id, secret)

    # -- single-ledger payment -----------------------------------------
    def _local_htlc(self, s: AuthzSession) -> HtlcState:
        _require(self.local_payment and s.htlc is not None, "no payment for this session")
        return s.htlc

    def call_deposit(self, ctx: CallContext, session_id: str) -> None:
        s = self.session(session_id)
        self._local_htlc(s).deposit(ctx)
        ctx.emit("Funded", session_id=session_id, payer=ctx.sender, amount=ctx.value)

    def call_reveal(self, ctx: CallContext, session_id: str, secret) -> None:
        s = self.session(session_id)
        htlc = self._local_htlc(s)
        secret = _as_bytes(secret)
        lock = htlc.reveal(ctx, secret)
        as_id = next(a for a in s.accepted if s.responses[a][1] == lock)
        ctx.emit("SecretRevealed", session_id=session_id, as_id=as_id, lock=lock, secret=secret,
                 link={"session_id": session_id})
        if htlc.status is HtlcStatus.PAID:
            ctx.emit("Paid", session_id=session_id,
                     payout_plan=[list(p) for p in htlc.payout_plan])
            for a in s.accepted:
                self._store_secret(ctx, s, a, htlc.revealed[s.responses[a][1]])

    def call_refund(self, ctx: CallContext, session_id: str) -> None:
        s = self.session(session_id)
        htlc = self._local_htlc(s)
        htlc.refund(ctx)
        ctx.emit("Refunded", session_id=session_id, payer=htlc.payer, amount=htlc.amount_deposited)

    # -- administration ------------------------------------------------
    def call_update_latency(self, ctx: CallContext, as_id: str, rounds: int) -> None:
        _require(ctx.sender == self.owner, "only the owner may update latency")
        _require(rounds >= 0, "negative latency")
        self.entry(as_id).last_response_rounds = int(rounds)
        ctx.emit("LatencyUpdated", as_id=as_id, rounds=int(rounds))


@dataclass
class RegistryContract(Contract):
    bindings: dict[str, str] = field(default_factory=dict)
    binders: dict[str, str] = field(default_factory=dict)

    kind = "registry"

    def bind(self, thing_uri: str, target: str, binder: str) -> None:
        if thing_uri in self.bindings and self.binders[thing_uri] != binder:
            raise ContractError("URI bound by another account")
        self.bindings[thing_uri] = target
        self.binders[thing_uri] = binder

    def call_bind(self, ctx: CallContext, thing_uri: str, target: str) -> None:
        self.bind(thing_uri, target, ctx.sender)
        ctx.emit("Bound", thing_uri=thing_uri, target=target)

    def lookup(self, thing_uri: str) -> str:
        try:
            return self.bindings[thing_uri]
        except KeyError:
            raise LedgerError(f"no binding for {thing_uri}") from None


FACTORIES = {"htlc": HtlcContract.create}


# -- transaction builders ----------------------------------------------------

def htlc_create(ledger: Ledger, sender: str, payer: str, price: int, hash_locks: Sequence[bytes],
                payout_plan: Sequence[tuple[str, int]], deadline_height: int,
                link: dict | None = None) -> str:
    return ledger.submit(sender, CREATE, "htlc", dict(
        payer=payer, price=price, hash_locks=list(hash_locks),
        payout_plan=[list(p) for p in payout_plan], deadline_height=deadline_height,
        link=link or {}))


def model1_record_hashes(ledger: Ledger, sender: str, hash_token: bytes, hash_bundle: bytes,
                         payer: str, price: int, lock: bytes,
                         payout_plan: Sequence[tuple[str, int]], deadline_height: int) -> str:
    """Queue one transaction that records both receipts and creates the payment HTLC."""
    return ledger.submit(sender, CREATE, "htlc", dict(
        payer=payer, price=price, hash_locks=[lock],
        payout_plan=[list(p) for p in payout_plan], deadline_height=deadline_height,
        hash_token=hash_token, hash_bundle=hash_bundle))


def htlc_deposit(ledger: Ledger, contract_id: str, payer: str, amount: int) -> str:
    return ledger.submit(payer, contract_id, "deposit", value=amount)


def htlc_reveal(ledger: Ledger, contract_id: str, sender: str, secret: bytes) -> str:
    return ledger.submit(sender, contract_id, "reveal", {"secret": secret})


def htlc_refund(ledger: Ledger, contract_id: str, sender: str) -> str:
    return ledger.submit(sender, contract_id, "refund")


def authz_request_access(ledger: Ledger, contract_id: str, client: str, thing_uri: str,
                         scope: str) -> str:
    return ledger.submit(client, contract_id, "request_access",
                         {"thing_uri": thing_uri, "scope": scope})


def authz_post_response(ledger: Ledger, contract_id: str, sender: str, as_id: str,
                        session_id: str, blob: bytes, lock: bytes) -> str:
    return ledger.submit(sender, contract_id, "post_response", dict(
        session_id=session_id, as_id=as_id, blob=blob, lock=lock))


def authz_record_secret(ledger: Ledger, contract_id: str, sender: str, session_id: str,
                        as_id: str, secret: bytes) -> str:
    return ledger.submit(sender, contract_id, "record_secret",
                         {"session_id": session_id, "as_id": as_id, "secret": secret})


def authz_update_latency(ledger: Ledger, contract_id: str, owner: str, as_id: str,
                         rounds: int) -> str:
    return ledger.submit(owner, contract_id, "update_latency", {"as_id": as_id, "rounds": rounds})


def registry_bind(ledger: Ledger, contract_id: str, sender: str, thing_uri: str, target: str) -> str:
    return ledger.submit(sender, contract_id, "bind", {"thing_uri": thing_uri, "target": target})


def registry_lookup(ledger: Ledger, contract_id: str, thing_uri: str) -> str:
    registry = ledger.contract(contract_id)
    if not isinstance(registry, RegistryContract):
        raise LedgerError(f"{contract_id} is not a registry")
    return registry.lookup(thing_uri)


def created_contract(ledger: Ledger, tx_id: str) -> str | None:
    """Contract id created by a mined transaction, if it succeeded."""
    for block in reversed(ledger.blocks):
        for result in block.results:
            if result.tx_id == tx_id:
                return result.created if result.ok else None
    return None


def tx_ok(ledger: Ledger, tx_id: str) -> bool:
    for block in reversed(ledger.blocks):
        for result in block.results:
            if result.tx_id == tx_id:
                return result.ok
    raise LedgerError(f"transaction {tx_id} not mined")


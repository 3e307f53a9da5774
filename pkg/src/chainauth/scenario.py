"""Round-by-round orchestration of the four authorization models.

Model 1 records receipts and an HTLC on one public chain while the client
talks to the AS directly. Models 2-4 go through the authorization contract;
model 2 is model 3 on a single ledger, and model 3 is model 4 with n = m = 1.
Only rounds on the public ledger count towards the delay estimate.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any

from . import canonical, contracts
from .actors import (AccessRejected, AccessRequestToThing, AuthServer, Client, Gateway,
                     ThingState, challenge_response, make_access_request, session_nonce,
                     thing_verify_and_derive)
from .contracts import (AsEntry, AuthzContract, HtlcStatus, RegistryContract, SelectionMode,
                        SessionStatus)
from .crypto import hash32, keygen, keygen_symmetric, keystream_encrypt
from .ledger import Ledger
from .tokens import BundleOptions, SignedToken, bundle_size, measure_reduction

GRANTED = "Granted"
REFUNDED = "Refunded"
EXPIRED = "Expired"
REJECTED = "Rejected"

MODEL_LEDGERS = {1: 1, 2: 1, 3: 2}
CORRUPT_SECTIONS = ("tokens", "tags", "pops")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    model: int = 4
    ledgers: int | None = None
    n: int = 1
    m: int = 1
    selection_mode: str = SelectionMode.CONTRACT_SELECTS.value
    agg_mac: bool = False
    dedup: bool = False
    block_time_seconds: float | Fraction = 15
    price: int = 100
    gateway_fee: int = 0
    response_deadline: int = 10
    payment_deadline: int = 10
    validity_seconds: int = 3600
    htlc_initiator: str = "gateway"
    client_funds: int = 1000
    client_allowlisted: bool = True
    scope: str = "read"
    thing_uri: str = "coap://thing.example/sensor"
    as_latency: tuple[int | None, ...] = ()
    rng_seed: int = 0
    as_withholds_reveal: frozenset[int] = frozenset()
    as_never_responds: frozenset[int] = frozenset()
    corrupt_byte: tuple[str, int] | None = None

    def validated(self) -> ScenarioConfig:
        """Return a copy with the ledger count filled in, or raise ConfigError."""
        if self.model not in (1, 2, 3, 4):
            raise ConfigError("model must be 1, 2, 3 or 4")
        ledgers = self.ledgers
        if self.model in MODEL_LEDGERS:
            implied = MODEL_LEDGERS[self.model]
            if ledgers not in (None, implied):
                raise ConfigError(f"model {self.model} runs on {implied} ledger(s)")
            ledgers = implied
            if self.n != 1 or self.m != 1:
                raise ConfigError("only model 4 supports more than one AS")
        ledgers = 2 if ledgers is None else ledgers
        if ledgers not in (1, 2):
            raise ConfigError("ledgers must be 1 or 2")
        if not 1 <= self.m <= self.n:
            raise ConfigError("need 1 <= m <= n")
        if self.block_time_seconds <= 0:
            raise ConfigError("block time must be positive")
        if self.price < 0 or not 0 <= self.gateway_fee <= self.price:
            raise ConfigError("need price >= 0 and 0 <= gateway fee <= price")
        if self.client_funds < 0:
            raise ConfigError("client funds must be non-negative")
        if self.response_deadline < 1 or self.payment_deadline < 1:
            raise ConfigError("deadlines must be at least one block")
        if self.htlc_initiator not in ("gateway", "client"):
            raise ConfigError("htlc initiator is 'gateway' or 'client'")
        SelectionMode(self.selection_mode)
        if self.as_latency and len(self.as_latency) != self.n:
            raise ConfigError("as_latency needs one entry per AS")
        for ids in (self.as_withholds_reveal, self.as_never_responds):
            if any(not 1 <= i <= self.n for i in ids):
                raise ConfigError("fault AS indices are 1..n")
        if self.corrupt_byte is not None:
            section, index = self.corrupt_byte
            if section not in CORRUPT_SECTIONS or index < 0:
                raise ConfigError(f"corrupt section must be one of {CORRUPT_SECTIONS}")
        return replace(self, ledgers=ledgers,
                       as_withholds_reveal=frozenset(self.as_withholds_reveal),
                       as_never_responds=frozenset(self.as_never_responds))

    @property
    def opts(self) -> BundleOptions:
        return BundleOptions(self.agg_mac, self.dedup)

    @property
    def faulty(self) -> bool:
        return bool(self.as_withholds_reveal or self.as_never_responds or self.corrupt_byte
                    or not self.client_allowlisted)

    @property
    def label(self) -> str:
        if self.model == 1:
            return "Hashes of auth. inform."
        ledgers = MODEL_LEDGERS.get(self.model, self.ledgers)
        bc = "1 BC" if ledgers == 1 else "2 BCs"
        if self.model in (2, 3):
            return f"SC & {bc}"
        return f"Dec-Auth {self.m}-of-{self.n} & {bc}"


@dataclass
class ScenarioReport:
    model: int
    label: str
    ledgers: int
    n: int
    m: int
    opts: str
    outcome: str
    reason: str
    tx_count: dict[str, int]
    failed_tx: dict[str, int]
    public_rounds: int
    private_rounds: int
    estimated_delay_seconds: float | Fraction
    bytes_to_thing: int | None
    reduction_percent: float | None
    balances_before: dict[str, int]
    balances_after: dict[str, int]
    invariants: dict[str, bool]
    transcript_digest: str
    gas: str = "not modeled"

    @property
    def ok(self) -> bool:
        return all(self.invariants.values())

    def to_text(self) -> str:
        return canonical.dumps(self, indent=2)


@dataclass
class ScenarioRun:
    """Everything a finished scenario leaves behind."""
    config: ScenarioConfig
    report: ScenarioReport
    ledgers: dict[str, Ledger]
    transcript: list[str]
    artifacts: dict[str, Any] = field(default_factory=dict)


class Scenario:
    def __init__(self, config: ScenarioConfig):
        cfg = config.validated()
        self.cfg = cfg
        self.rng = random.Random(cfg.rng_seed)
        self.transcript: list[str] = []
        self.artifacts: dict[str, Any] = {}
        self.public = Ledger("public", cfg.block_time_seconds, contracts.FACTORIES)
        self.private = (Ledger("private", cfg.block_time_seconds, contracts.FACTORIES)
                        if cfg.ledgers == 2 else None)
        seed = str(cfg.rng_seed).encode()

        def kp(role: str):
            return keygen(seed + b":" + role.encode())

        self.client = Client(kp("client"))
        self.owner = kp("owner")
        self.gateway_account = kp("gateway")
        self.servers = [
            AuthServer(f"AS{i}", kp(f"AS{i}"), keygen_symmetric(seed + f":thing:AS{i}".encode()),
                       random.Random(hash32(seed + f":rng:AS{i}".encode())))
            for i in range(1, cfg.n + 1)]
        self.thing = ThingState(cfg.thing_uri, {s.as_id: s.thing_key for s in self.servers}, cfg.m)
        self.roles = {self.client.account_id: "client", self.owner.public_id: "owner",
                      self.gateway_account.public_id: "gateway"}
        self.roles.update({s.account.public_id: s.as_id for s in self.servers})
        for ledger in self.ledgers.values():
            for account, role in self.roles.items():
                ledger.open_account(account, cfg.client_funds if role == "client" else 0)
        self.supply = {name: l.total_supply() for name, l in self.ledgers.items()}
        self.balances_before = self.named_balances()
        self.bundle_bytes: int | None = None
        self.client_secrets: dict[str, bytes] = {}
        self.paid = False

    @property
    def ledgers(self) -> dict[str, Ledger]:
        out = {"public": self.public}
        if self.private is not None:
            out["private"] = self.private
        return out

    @property
    def auth(self) -> Ledger:
        return self.private if self.private is not None else self.public

    def named_balances(self) -> dict[str, int]:
        return {self.roles[a]: b for a, b in sorted(self.public.balances.items())}

    def now(self) -> int:
        return int(self.public.height * self.cfg.block_time_seconds)

    # -- transcript ----------------------------------------------------
    def note(self, kind: str, **data) -> None:
        self.transcript.append(canonical.dumps({"kind": kind, **data}))

    def mine(self, ledger: Ledger):
        block = ledger.mine()
        self.note("block", ledger=ledger.name, height=block.height,
                  txs=[{"id": t.tx_id, "sender": self.roles.get(t.sender, t.sender),
                        "target": t.target, "call": t.call, "args": dict(t.args), "value": t.value}
                       for t in block.transactions],
                  results=[{"id": r.tx_id, "ok": r.ok, "error": r.error, "created": r.created}
                           for r in block.results],
                  events=[[e.index, e.contract_id, e.name, dict(e.payload)] for e in block.events])
        return block

    def mine_until(self, ledger: Ledger, height: int) -> None:
        """Mine empty blocks until a transaction would land at ``height``."""
        while ledger.height + 1 < height:
            self.mine(ledger)

    # -- access to the Thing ---------------------------------------------
    def present(self, session_id: str, entries: list[tuple[str, SignedToken, bytes]],
                client_pop: bytes) -> tuple[str, str]:
        request = make_access_request(session_id, entries, self.cfg.opts)
        self.bundle_bytes = len(request.bundle)
        if self.cfg.corrupt_byte is not None:
            request = self.corrupt(request)
        self.note("to_thing", session_id=session_id, as_ids=list(request.as_ids),
                  bundle=request.bundle, opts=self.cfg.opts.label)
        try:
            thing_verify_and_derive(request, self.thing, self.now())
        except AccessRejected as exc:
            self.note("thing_reject", reason=exc.reason)
            return REJECTED, exc.reason
        ok = challenge_response(self.thing, session_id, client_pop, self.rng)
        self.note("challenge", ok=ok)
        return (GRANTED, "") if ok else (REJECTED, "key agreement")

    def corrupt(self, request: AccessRequestToThing) -> AccessRequestToThing:
        section, index = self.cfg.corrupt_byte
        m, opts = len(request.as_ids), request.opts
        tags_len = 32 if opts.agg_mac else 32 * m
        tokens_len = len(request.bundle) - tags_len - 32 * m
        start, length = {"tokens": (0, tokens_len), "tags": (tokens_len, tags_len),
                         "pops": (tokens_len + tags_len, 32 * m)}[section]
        pos = start + index % length
        data = bytearray(request.bundle)
        data[pos] ^= 0x01
        return replace(request, bundle=bytes(data))

    # -- models --------------------------------------------------------
    def run_model1(self) -> tuple[str, str]:
        cfg, ledger = self.cfg, self.public
        server = self.servers[0]
        sid = "direct-1"
        self.note("message", frm="client", to=server.as_id, what="access request",
                  scope=cfg.scope, thing_uri=cfg.thing_uri)
        grant, token = server.grant_direct(sid, cfg.thing_uri, cfg.scope, cfg.price, self.now(),
                                           cfg.validity_seconds)
        self.note("message", frm=server.as_id, to="client", what="grant",
                  encrypted_pop=grant.encrypted_pop, encrypted_token=grant.encrypted_token,
                  lock=grant.lock, price=grant.price)
        hash_token = hash32(token.to_bytes())
        hash_bundle = hash32(grant.encrypted_pop + grant.pop + grant.encrypted_token)
        tx = contracts.model1_record_hashes(
            ledger, server.account.public_id, hash_token, hash_bundle, payer=self.client.account_id,
            price=cfg.price, lock=grant.lock, payout_plan=[(self.owner.public_id, cfg.price)],
            deadline_height=ledger.height + 2 + cfg.payment_deadline)
        self.mine(ledger)
        htlc_id = contracts.created_contract(ledger, tx)
        created = ledger.read_events(htlc_id, "HtlcCreated")[0]
        if list(created["hash_locks"]) != [grant.lock] or created["price"] != grant.price:
            return REJECTED, "payment terms differ from grant"
        recorded = ledger.read_events(htlc_id, "HashesRecorded")[0]
        self.artifacts.update(recorded_hash_token=recorded["hash_token"],
                              recorded_hash_bundle=recorded["hash_bundle"],
                              encrypted_pop=grant.encrypted_pop, pop=grant.pop,
                              encrypted_token=grant.encrypted_token, htlc_id=htlc_id)

        contracts.htlc_deposit(ledger, htlc_id, self.client.account_id, cfg.price)
        self.mine(ledger)
        if 1 not in cfg.as_withholds_reveal:
            contracts.htlc_reveal(ledger, htlc_id, server.account.public_id,
                                  server.secret_for(grant.lock))
        self.mine(ledger)
        self.paid = ledger.contract(htlc_id).htlc.status is HtlcStatus.PAID
        if not self.paid:
            return self.refund(ledger, htlc_id, ledger.contract(htlc_id).htlc.deadline_height)

        secret = ledger.read_events(htlc_id, "SecretRevealed")[0]["secret"]
        self.client_secrets["AS1"] = secret
        token_bytes = keystream_encrypt(secret, session_nonce(sid, server.as_id),
                                        grant.encrypted_token)
        self.artifacts["token"] = token_bytes
        held = SignedToken.from_bytes(token_bytes)
        return self.present(sid, [(server.as_id, held, grant.encrypted_pop)], grant.pop)

    def run_contract_flow(self) -> tuple[str, str]:
        cfg, auth, public = self.cfg, self.auth, self.public
        local = self.private is None
        latency = cfg.as_latency or (None,) * cfg.n
        registry = [AsEntry(s.as_id, s.account.public_id, lat)
                    for s, lat in zip(self.servers, latency)]
        client_id = self.client.account_id
        authz = AuthzContract(
            owner=self.owner.public_id, price_per_scope={cfg.scope: cfg.price}, registry=registry,
            threshold_m=cfg.m, selection_mode=SelectionMode(cfg.selection_mode),
            allowlist={client_id} if cfg.client_allowlisted else {self.owner.public_id},
            response_window=cfg.response_deadline, local_payment=local,
            payment_window=cfg.payment_deadline, gateway_fee=cfg.gateway_fee,
            gateway=self.gateway_account.public_id)
        authz_id = auth.deploy(authz)
        reg = RegistryContract()
        reg.bind(cfg.thing_uri, authz_id, self.owner.public_id)
        registry_id = auth.deploy(reg)
        gateway = Gateway(self.gateway_account.public_id, authz_id, cfg.payment_deadline)

        # round: access request
        target = contracts.registry_lookup(auth, registry_id, cfg.thing_uri)
        tx = contracts.authz_request_access(auth, target, client_id, cfg.thing_uri, cfg.scope)
        self.mine(auth)
        if not contracts.tx_ok(auth, tx):
            return REJECTED, "request refused by contract"
        request = auth.read_events(authz_id, "AccessRequested")[-1]
        sid = request["session_id"]

        # round: AS responses
        if authz.selection_mode is SelectionMode.CONTRACT_SELECTS:
            responders = [s for s in self.servers if s.as_id in request["selected_as_ids"]]
        else:
            responders = list(self.servers)
            self.rng.shuffle(responders)
        responses = {}
        now = self.now()
        for server in responders:
            if int(server.as_id[2:]) in cfg.as_never_responds:
                continue
            resp = server.respond(sid, cfg.thing_uri, cfg.scope, self.client.account.public, now,
                                  cfg.validity_seconds)
            responses[server.as_id] = resp
            contracts.authz_post_response(auth, authz_id, server.account.public_id,
                                          server.as_id, sid, resp.blob, resp.lock)
        self.mine(auth)
        ready = auth.read_events(authz_id, "ResponsesReady")
        if not ready:
            self.mine_until(auth, request["response_deadline"])
            auth.submit(client_id, authz_id, "expire", {"session_id": sid})
            self.mine(auth)
            return EXPIRED, f"fewer than {cfg.m} responses"
        ready = ready[-1]
        accepted = list(ready["as_ids"])

        # payment round 1: HTLC on the payment ledger
        if local:
            pay_id, pay_args = authz_id, {"session_id": sid}
            created = auth.read_events(authz_id, "HtlcCreated")[-1]
        else:
            gateway.poll(auth, public, create_htlc=cfg.htlc_initiator == "gateway")
            if cfg.htlc_initiator == "client":
                contracts.htlc_create(
                    public, client_id, payer=client_id, price=ready["price"],
                    hash_locks=ready["locks"], payout_plan=ready["payout_plan"],
                    deadline_height=public.height + 2 + cfg.payment_deadline,
                    link={"authz": authz_id, "session_id": sid})
            self.mine(public)
            created = public.read_events(None, "HtlcCreated")[-1]
            pay_id, pay_args = created.contract_id, {}
        if list(created["hash_locks"]) != list(ready["locks"]) or created["price"] != ready["price"]:
            return REJECTED, "payment terms differ from authorization record"
        deadline = created["deadline_height"]

        # payment round 2: deposit
        public.submit(client_id, pay_id, "deposit", pay_args, value=ready["price"])
        self.mine(public)

        # payment round 3: each accepted AS opens its lock
        by_id = {s.as_id: s for s in self.servers}
        for as_id in accepted:
            if int(as_id[2:]) in cfg.as_withholds_reveal:
                continue
            server = by_id[as_id]
            public.submit(server.account.public_id, pay_id, "reveal",
                          {**pay_args, "secret": server.secret_for(responses[as_id].lock)})
        self.mine(public)
        if not local:
            gateway.poll(auth, public)
            self.mine(auth)

        htlc = authz.sessions[sid].htlc if local else public.contract(pay_id).htlc
        self.paid = htlc.status is HtlcStatus.PAID
        if not self.paid:
            return self.refund(public, pay_id, deadline, pay_args)

        recorded = auth.read_events(authz_id, "SecretsRecorded")
        if not recorded or authz.sessions[sid].status is not SessionStatus.PAID_RECORDED:
            return REJECTED, "secrets not recorded"
        secrets = dict(recorded[-1]["secrets"])
        self.client_secrets.update(secrets)
        posted = {e["as_id"]: e for e in auth.read_events(authz_id, "ResponsePosted")
                  if e["session_id"] == sid}
        entries, pops = [], []
        for as_id in accepted:
            token, encrypted_pop, pop = self.client.open_response(
                sid, as_id, posted[as_id]["blob"], secrets[as_id], posted[as_id]["lock"])
            entries.append((as_id, token, encrypted_pop))
            pops.append(pop)
        client_pop = self.client.combine(pops)
        self.artifacts["client_pop"] = client_pop
        return self.present(sid, entries, client_pop)

    def refund(self, ledger: Ledger, pay_id: str, deadline: int,
               args: dict | None = None) -> tuple[str, str]:
        self.mine_until(ledger, deadline)
        ledger.submit(self.client.account_id, pay_id, "refund", args or {})
        self.mine(ledger)
        return REFUNDED, "reveal withheld past deadline"

    # -- report --------------------------------------------------------
    def finish(self, outcome: str, reason: str) -> ScenarioRun:
        cfg = self.cfg
        after = self.named_balances()
        got_secrets = len(self.client_secrets) == cfg.m
        owner_gain = after["owner"] - self.balances_before["owner"]
        rounds = self.public.height
        delay = rounds * cfg.block_time_seconds
        invariants = {
            "conservation": all(l.total_supply() == self.supply[name]
                                for name, l in self.ledgers.items()),
            "payment_atomicity": self.paid == got_secrets
            and owner_gain == (cfg.price - cfg.gateway_fee if self.paid else 0),
            "client_made_whole": outcome not in (REFUNDED, EXPIRED)
            or after["client"] == self.balances_before["client"],
            "delay_consistent": delay == rounds * cfg.block_time_seconds,
            "no_fault_grants": cfg.faulty or outcome == GRANTED,
            "bytes_match_codec": self.bundle_bytes is None
            or self.bundle_bytes == bundle_size(cfg.m, cfg.opts),
        }
        digest = hash32("\n".join(self.transcript).encode()).hex()
        report = ScenarioReport(
            model=cfg.model, label=cfg.label, ledgers=cfg.ledgers, n=cfg.n, m=cfg.m,
            opts=cfg.opts.label, outcome=outcome, reason=reason,
            tx_count={name: sum(len(b.transactions) for b in l.blocks)
                      for name, l in self.ledgers.items()},
            failed_tx={name: sum(len(b.failed) for b in l.blocks)
                       for name, l in self.ledgers.items()},
            public_rounds=rounds,
            private_rounds=self.private.height if self.private is not None else 0,
            estimated_delay_seconds=delay,
            bytes_to_thing=self.bundle_bytes,
            reduction_percent=(measure_reduction(cfg.m, cfg.opts)[1]
                               if self.bundle_bytes is not None else None),
            balances_before=self.balances_before, balances_after=after,
            invariants=invariants, transcript_digest=digest)
        return ScenarioRun(cfg, report, self.ledgers, self.transcript, self.artifacts)

    def run(self) -> ScenarioRun:
        if self.cfg.model == 1:
            outcome, reason = self.run_model1()
        else:
            outcome, reason = self.run_contract_flow()
        return self.finish(outcome, reason)


def run_scenario(config: ScenarioConfig) -> ScenarioRun:
    return Scenario(config).run()


def run_model1(config: ScenarioConfig = ScenarioConfig(model=1)) -> ScenarioReport:
    return run_scenario(replace(config, model=1)).report


def run_model2(config: ScenarioConfig = ScenarioConfig(model=2)) -> ScenarioReport:
    return run_scenario(replace(config, model=2)).report


def run_model3(config: ScenarioConfig = ScenarioConfig(model=3)) -> ScenarioReport:
    return run_scenario(replace(config, model=3)).report


def run_model4(config: ScenarioConfig = ScenarioConfig(model=4, n=4, m=2)) -> ScenarioReport:
    return run_scenario(replace(config, model=4)).report

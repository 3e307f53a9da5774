"""A deterministic in-memory blockchain.

Transactions queue in a FIFO mempool and are applied when a block is mined.
Each transaction applies atomically: a failing contract call is reverted and
recorded as failed in the block summary rather than raised. One ``mine()``
call is one round; time-locks are expressed in block heights.
"""
from __future__ import annotations

import pickle
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from types import MappingProxyType
from typing import Any, Callable, Mapping

from . import canonical
from .crypto import hash32

log = logging.getLogger(__name__)

CREATE = "@create"
TRANSFER = "transfer"


class LedgerError(Exception):
    """Raised for ledger-level misuse (unknown account, bad submission)."""


class ContractError(Exception):
    """Raised inside a contract call; the ledger reverts the transaction."""


@dataclass(frozen=True)
class Transaction:
    sender: str
    target: str
    call: str
    args: Mapping[str, Any] = field(default_factory=dict)
    value: int = 0
    submit_round: int = 0
    tx_id: str = ""


@dataclass(frozen=True)
class EventRecord:
    height: int
    index: int
    contract_id: str
    name: str
    payload: Mapping[str, Any]

    def __getitem__(self, key):
        return self.payload[key]

    def __reduce__(self):
        # mapping proxies don't pickle; rebuild one around a plain copy
        return (_event, (self.height, self.index, self.contract_id, self.name, dict(self.payload)))


def _event(height, index, contract_id, name, payload) -> EventRecord:
    return EventRecord(height, index, contract_id, name, MappingProxyType(payload))


@dataclass
class TxResult:
    tx_id: str
    ok: bool
    error: str | None = None
    created: str | None = None


@dataclass
class BlockSummary:
    height: int
    transactions: list[Transaction]
    results: list[TxResult]
    events: list[EventRecord]

    @property
    def applied(self) -> list[str]:
        return [r.tx_id for r in self.results if r.ok]

    @property
    def failed(self) -> list[str]:
        return [r.tx_id for r in self.results if not r.ok]


class CallContext:
    """What a contract sees while one of its calls executes."""

    def __init__(self, ledger: Ledger, contract_id: str, tx: Transaction):
        self.ledger = ledger
        self.contract_id = contract_id
        self.sender = tx.sender
        self.value = tx.value
        self.tx_id = tx.tx_id

    @property
    def height(self) -> int:
        # the block being built
        return self.ledger.height + 1

    def emit(self, name: str, **payload) -> None:
        self.ledger._emit(self.contract_id, name, payload)

    def held(self) -> int:
        return self.ledger.escrow.get(self.contract_id, 0)

    def pay(self, account: str, amount: int) -> None:
        if amount < 0 or amount > self.held():
            raise ContractError("contract cannot pay that amount")
        self.ledger.escrow[self.contract_id] -= amount
        self.ledger.balances[account] = self.ledger.balances.get(account, 0) + amount


class Contract:
    """Base class: calls dispatch to ``call_<name>(ctx, **args)`` methods."""

    kind = "contract"
    payable: frozenset[str] = frozenset()

    def dispatch(self, ctx: CallContext, call: str, args: Mapping[str, Any]) -> None:
        method = getattr(self, f"call_{call}", None)
        if method is None:
            raise ContractError(f"unknown call {call!r}")
        if ctx.value and call not in self.payable:
            raise ContractError(f"{call} does not accept value")
        method(ctx, **args)

    def snapshot(self) -> Any:
        return canonical.plain(self)


class Ledger:
    def __init__(self, name: str, block_time_seconds: float | Fraction = 15,
                 factories: Mapping[str, Callable[..., Contract]] | None = None):
        if block_time_seconds <= 0:
            raise ValueError("block_time_seconds must be positive")
        self.name = name
        self.block_time_seconds = block_time_seconds
        self.height = 0
        self.balances: dict[str, int] = {}
        self.escrow: dict[str, int] = {}
        self.contracts: dict[str, Contract] = {}
        self.events: list[EventRecord] = []
        self.mempool: list[Transaction] = []
        self.blocks: list[BlockSummary] = []
        self.factories: dict[str, Callable[..., Contract]] = dict(factories or {})
        self._seq = 0
        self._created = 0
        self._pending_events: list[EventRecord] = []

    # -- accounts -------------------------------------------------------
    def open_account(self, account: str, amount: int = 0) -> None:
        if amount < 0:
            raise LedgerError("negative genesis balance")
        self.balances[account] = self.balances.get(account, 0) + amount

    def balance(self, account: str) -> int:
        try:
            return self.balances[account]
        except KeyError:
            raise LedgerError(f"unknown account {account}") from None

    def total_supply(self) -> int:
        return sum(self.balances.values()) + sum(self.escrow.values())

    def deploy(self, contract: Contract) -> str:
        """Install a contract at genesis, outside any transaction."""
        cid = self._new_contract_id(contract.kind)
        self.contracts[cid] = contract
        return cid

    def _new_contract_id(self, kind: str) -> str:
        self._created += 1
        return f"{self.name}/{kind}-{self._created}"

    # -- transactions ---------------------------------------------------
    def submit(self, sender: str, target: str, call: str, args: Mapping[str, Any] | None = None,
               value: int = 0) -> str:
        if sender not in self.balances:
            raise LedgerError(f"unknown sender {sender}")
        if value < 0:
            raise LedgerError("negative value")
        self._seq += 1
        tx = Transaction(sender, target, call, dict(args or {}), value,
                         submit_round=self.height, tx_id=f"{self.name}-tx{self._seq:04d}")
        self.mempool.append(tx)
        return tx.tx_id

    def mine(self) -> BlockSummary:
        pending, self.mempool = self.mempool, []
        results = [self._apply(tx) for tx in pending]
        self.height += 1
        events, self._pending_events = self._pending_events, []
        self.events.extend(events)
        block = BlockSummary(self.height, pending, results, events)
        self.blocks.append(block)
        return block

    def _apply(self, tx: Transaction) -> TxResult:
        # a call can only touch balances, escrow and its own target contract
        contracts = dict(self.contracts)
        if tx.target in contracts:
            contracts[tx.target] = pickle.loads(pickle.dumps(contracts[tx.target]))
        saved = (dict(self.balances), dict(self.escrow), contracts, self._created)
        n_events = len(self._pending_events)
        try:
            created = self._execute(tx)
        except (ContractError, TypeError, ValueError) as exc:
            self.balances, self.escrow, self.contracts, self._created = saved
            del self._pending_events[n_events:]
            log.debug("%s failed: %s", tx.tx_id, exc)
            return TxResult(tx.tx_id, False, str(exc))
        return TxResult(tx.tx_id, True, created=created)

    def _execute(self, tx: Transaction) -> str | None:
        if tx.value > self.balances.get(tx.sender, 0):
            raise ContractError("insufficient funds")
        if tx.target == CREATE:
            factory = self.factories.get(tx.call)
            if factory is None:
                raise ContractError(f"no factory for {tx.call!r}")
            if tx.value:
                raise ContractError("creation does not accept value")
            cid = self._new_contract_id(tx.call)
            ctx = CallContext(self, cid, tx)
            self.contracts[cid] = factory(ctx, **tx.args)
            return cid
        if tx.target in self.contracts:
            self.balances[tx.sender] -= tx.value
            self.escrow[tx.target] = self.escrow.get(tx.target, 0) + tx.value
            self.contracts[tx.target].dispatch(CallContext(self, tx.target, tx), tx.call, tx.args)
            return None
        if tx.target in self.balances and tx.call == TRANSFER:
            self.balances[tx.sender] -= tx.value
            self.balances[tx.target] += tx.value
            return None
        raise ContractError(f"unknown target {tx.target}")

    def _emit(self, contract_id: str, name: str, payload: dict) -> None:
        index = len(self.events) + len(self._pending_events)
        self._pending_events.append(
            EventRecord(self.height + 1, index, contract_id, name, MappingProxyType(dict(payload))))

    # -- reads ----------------------------------------------------------
    def read_events(self, contract_id: str | None = None, prefix: str = "",
                    from_height: int = 0) -> list[EventRecord]:
        return [e for e in self.events
                if (contract_id is None or e.contract_id == contract_id)
                and e.name.startswith(prefix) and e.height >= from_height]

    def contract(self, contract_id: str) -> Contract:
        try:
            return self.contracts[contract_id]
        except KeyError:
            raise LedgerError(f"unknown contract {contract_id}") from None

    def dump(self) -> str:
        """Canonical sorted text form of the full ledger state."""
        return canonical.dumps({
            "name": self.name,
            "height": self.height,
            "block_time_seconds": self.block_time_seconds,
            "balances": self.balances,
            "escrow": self.escrow,
            "contracts": {cid: {"kind": c.kind, "state": c.snapshot()}
                          for cid, c in self.contracts.items()},
            "events": [[e.height, e.index, e.contract_id, e.name, dict(e.payload)]
                       for e in self.events],
            "mempool": self.mempool,
        })

    def state_hash(self) -> bytes:
        return hash32(self.dump().encode())

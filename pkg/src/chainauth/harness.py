"""Scenario runner, parameter sweeps and dispute verification."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, fields, replace
from typing import Any, Iterable, Mapping, Sequence

from . import canonical
from .crypto import hash32
from .scenario import ScenarioConfig, ScenarioReport, ScenarioRun, run_scenario


def run(config: ScenarioConfig) -> ScenarioReport:
    return run_scenario(config).report


def sweep(template: ScenarioConfig,
          vary: Mapping[str, Sequence[Any]] | Iterable[tuple[str, Sequence[Any]]] = ()) -> list[ScenarioReport]:
    """One run per point of the cross product of ``vary``; empty ``vary`` is a single run."""
    items = list(vary.items() if isinstance(vary, Mapping) else vary)
    known = {f.name for f in fields(ScenarioConfig)}
    for name, _ in items:
        if name not in known:
            raise ValueError(f"unknown config field {name!r}")
    names = [name for name, _ in items]
    reports = []
    for values in itertools.product(*(list(v) for _, v in items)):
        reports.append(run(replace(template, **dict(zip(names, values)))))
    return reports


TABLE_COLUMNS = ("label", "opts", "outcome", "public_tx", "failed_tx", "public_rounds",
                 "delay_s", "bytes", "reduction_%", "gas")


def table_row(report: ScenarioReport) -> dict[str, Any]:
    return {
        "label": report.label,
        "opts": report.opts,
        "outcome": report.outcome,
        "public_tx": report.tx_count["public"],
        "failed_tx": sum(report.failed_tx.values()),
        "public_rounds": report.public_rounds,
        "delay_s": canonical.plain(report.estimated_delay_seconds),
        "bytes": report.bytes_to_thing,
        "reduction_%": report.reduction_percent,
        "gas": report.gas,
    }


def format_table(reports: Sequence[ScenarioReport]) -> str:
    rows = [[str(table_row(r)[c]) for c in TABLE_COLUMNS] for r in reports]
    widths = [max(len(c), *(len(row[i]) for row in rows)) if rows else len(c)
              for i, c in enumerate(TABLE_COLUMNS)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(TABLE_COLUMNS, widths)).rstrip()]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines)


def format_reports(reports: Sequence[ScenarioReport], mode: str = "json") -> str:
    if mode == "table":
        return format_table(reports)
    if len(reports) == 1:
        return reports[0].to_text()
    return canonical.dumps(list(reports), indent=2)


@dataclass(frozen=True)
class DisputeReport:
    token_match: bool | None
    bundle_match: bool

    @property
    def ok(self) -> bool:
        return self.bundle_match and self.token_match is not False


def verify_dispute(recorded: Mapping[str, bytes], held: Mapping[str, bytes]) -> DisputeReport:
    """Recompute the two on-chain receipts from what the client holds.

    ``recorded`` carries ``hash_token`` and ``hash_bundle``; ``held`` carries
    ``encrypted_pop``, ``pop``, ``encrypted_token`` and (once decrypted)
    ``token``. A missing token is reported as ``None`` rather than a mismatch.
    """
    bundle = hash32(held["encrypted_pop"] + held["pop"] + held["encrypted_token"])
    token = held.get("token")
    return DisputeReport(
        token_match=None if token is None else hash32(token) == recorded["hash_token"],
        bundle_match=bundle == recorded["hash_bundle"])


def dispute_inputs(result: ScenarioRun) -> tuple[dict[str, bytes], dict[str, bytes]]:
    """Split a finished hash-recording run into (on-chain receipts, client-held items)."""
    a = result.artifacts
    if "recorded_hash_token" not in a:
        raise ValueError("dispute verification needs a completed model 1 run")
    recorded = {"hash_token": a["recorded_hash_token"], "hash_bundle": a["recorded_hash_bundle"]}
    held = {k: a[k] for k in ("encrypted_pop", "pop", "encrypted_token", "token") if k in a}
    return recorded, held

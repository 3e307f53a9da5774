"""Independent oracles and small fixtures shared by the test modules."""
from chainauth import contracts
from chainauth.contracts import FACTORIES
from chainauth.crypto import hash32
from chainauth.ledger import Ledger


def brute_force_selection(latencies, m):
    """Pick m ASes by repeated linear scans: known latency beats unknown, lower wins,
    earlier registration wins ties."""
    remaining = list(range(len(latencies)))
    chosen = []
    for _ in range(m):
        best = remaining[0]
        for i in remaining[1:]:
            a, b = latencies[i], latencies[best]
            if b is None and a is not None:
                best = i
            elif a is not None and b is not None and a < b:
                best = i
        chosen.append(best)
        remaining.remove(best)
    return chosen


def bundle_size_by_parts(m, agg_mac, dedup):
    """Count bytes component by component, serializing nothing shared."""
    parts = []
    if dedup:
        parts.append(bytes(16 + 8 + 8 + 8 + 1 + 1))
        parts += [bytes(16 + 32)] * m
    else:
        parts += [bytes(16 + 8 + 8 + 8 + 1 + 1 + 16 + 32)] * m
    parts += [bytes(32)] * (1 if agg_mac else m)
    parts += [bytes(32)] * m
    return sum(len(p) for p in parts)


def secrets_for(k):
    return [hash32(b"secret-%d" % i) for i in range(k)]


def funded_htlc(k=1, price=100, window=2, fund=True):
    """Ledger with a k-lock HTLC created at height 1 and (optionally) funded at height 2.

    Deadline is ``2 + window``.
    """
    led = Ledger("pay", 15, FACTORIES)
    led.open_account("client", 1000)
    led.open_account("owner")
    led.open_account("as")
    secrets = secrets_for(k)
    tx = contracts.htlc_create(led, "as", payer="client", price=price,
                               hash_locks=[hash32(s) for s in secrets],
                               payout_plan=[("owner", price)], deadline_height=2 + window)
    led.mine()
    cid = contracts.created_contract(led, tx)
    if fund:
        contracts.htlc_deposit(led, cid, "client", price)
        led.mine()
    return led, cid, secrets

import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ethtlm.errors import InvalidConfig, MalformedRow, MissingColumn
from ethtlm.ingest import (FIELDS, INCOMING, OUTGOING, LabeledDataset, SynthConfig, build_account_ledgers,
                           dataset_to_json, discrete_powerlaw_sample, generate_synthetic_dataset,
                           parse_transactions, serialize_transactions, split_dataset)

from conftest import addr, make_tx

HEADER = ",".join(FIELDS)


def csv_row(**over):
    row = {"blockNumber": "100", "timeStamp": "1600000000", "hash": "0x" + "11" * 32, "nonce": "0",
           "blockHash": "0x" + "22" * 32, "transactionIndex": "0", "from": "0x" + addr(0),
           "to": "0x" + addr(1), "value": "300000000000000000", "gas": "21000", "gasPrice": "3100000000",
           "isError": "0", "txreceipt_status": "1", "contractAddress": "", "cumulativeGasUsed": "21000",
           "gasUsed": "21000", "confirmations": "5", "methodId": "0x", "functionName": ""}
    row.update(over)
    return ",".join(row[f] for f in FIELDS)


def test_parse_single_row_copies_fields():
    txs = parse_transactions(HEADER + "\n" + csv_row() + "\n")
    assert len(txs) == 1
    assert txs[0].value == 3 * 10 ** 17
    assert txs[0].gas == 21000
    assert txs[0].sender == addr(0) and txs[0].to == addr(1)
    assert txs[0].methodId == ""


def test_parse_empty_file_with_header():
    assert parse_transactions(HEADER + "\n") == []


def test_parse_bad_value_reports_field():
    with pytest.raises(MalformedRow) as e:
        parse_transactions(HEADER + "\n" + csv_row(value="abc"))
    assert e.value.field == "value"


def test_parse_missing_column():
    cols = [f for f in FIELDS if f != "gas"]
    with pytest.raises(MissingColumn):
        parse_transactions(",".join(cols) + "\n")


def test_parse_rejects_gas_used_above_limit():
    with pytest.raises(MalformedRow):
        parse_transactions(HEADER + "\n" + csv_row(gasUsed="30000"))


def test_ledger_single_transfer():
    tx = make_tx(addr(0), addr(1))
    led = build_account_ledgers([tx])
    assert led[addr(0)].transactions == [(tx, OUTGOING)]
    assert led[addr(1)].transactions == [(tx, INCOMING)]


def test_ledger_sorted_by_time():
    late = make_tx(addr(0), addr(1), ts=5)
    early = make_tx(addr(0), addr(1), ts=3)
    led = build_account_ledgers([late, early])
    assert [t.timeStamp for t, _ in led[addr(0)].transactions] == [3, 5]


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(1, 10 ** 6)), max_size=30))
def test_ledger_lengths_match_participation_count(edges):
    txs = [make_tx(addr(a), addr(b), ts=t) for a, b, t in edges]
    ledgers = build_account_ledgers(txs)
    # oracle: count each address once per transaction it appears in
    count = Counter()
    for tx in txs:
        for a in {tx.sender, tx.to}:
            count[a] += 1
    assert {a: len(l) for a, l in ledgers.items()} == dict(count)
    # conservation: two entries per transfer, one per self-transfer
    assert sum(len(l) for l in ledgers.values()) == sum(1 if tx.sender == tx.to else 2 for tx in txs)


def test_contract_creation_reaches_sender_only():
    tx = make_tx(addr(0), "")
    tx = tx.__class__(**{**tx.__dict__, "contractAddress": addr(9)})
    led = build_account_ledgers([tx])
    assert list(led) == [addr(0)]


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(1, 2 ** 40),
                          st.integers(0, 10 ** 24), st.booleans()), max_size=20),
       st.sampled_from(["csv", "jsonl"]))
def test_serialize_parse_round_trip(rows, fmt):
    txs = [make_tx(addr(a), addr(b), ts=t, value=v, is_error=int(e)) for a, b, t, v, e in rows]
    assert parse_transactions(serialize_transactions(txs, fmt), fmt) == txs


def test_synthetic_is_deterministic_and_counts_anomalies():
    cfg = SynthConfig(n_accounts=100, anomaly_rate=0.05, seed=7)
    a = generate_synthetic_dataset(cfg)
    b = generate_synthetic_dataset(cfg)
    assert dataset_to_json(a) == dataset_to_json(b)
    assert sum(a.labels.values()) == 5


def _powerlaw_ll(x, lo, hi):
    # discrete power law on [lo, hi]: grid-search MLE for the exponent
    k = np.arange(lo, hi + 1, dtype=float)
    best = -math.inf
    for alpha in np.linspace(1.01, 4.0, 300):
        logz = np.log(np.sum(k ** -alpha))
        best = max(best, float(np.sum(-alpha * np.log(x)) - len(x) * logz))
    return best


def _geometric_ll(x, lo):
    # shifted geometric (discrete exponential) on lo, lo+1, ...: closed-form MLE
    y = x - lo
    p = 1.0 / (1.0 + y.mean())
    return float(len(y) * math.log(p) + y.sum() * math.log(1 - p))


def test_lifespans_prefer_power_law_over_exponential():
    rng = np.random.default_rng(0)
    x = discrete_powerlaw_sample(rng, 2.0, 1, 1000, 2000).astype(float)
    assert _powerlaw_ll(x, 1, 1000) > _geometric_ll(x, 1)
    ds = generate_synthetic_dataset(SynthConfig(n_accounts=300, seed=3))
    counts = np.array([len(l) for l in ds.accounts if ds.labels.get(l.address) is not None], float)
    counts = counts[counts >= 5]
    assert _powerlaw_ll(counts, 5, int(counts.max())) > _geometric_ll(counts, 5)


def _toy_dataset(n=100, n_pos=10):
    led = build_account_ledgers([make_tx(addr(i), addr(i + 1000), ts=i + 1) for i in range(n)])
    accounts = [led[addr(i)] for i in range(n)]
    labels = {addr(i): int(i < n_pos) for i in range(n)}
    return LabeledDataset(accounts, labels, {})


def test_split_sizes_and_stratification():
    ds = split_dataset(_toy_dataset(), (0.7, 0.1, 0.2), seed=1)
    sizes = Counter(ds.split.values())
    assert sizes == {"train": 70, "val": 10, "test": 20}
    # oracle: largest-remainder quota of 10 positives at 20% is 2
    assert sum(ds.labels[a] for a in ds.addresses("test")) == 2
    again = split_dataset(_toy_dataset(), (0.7, 0.1, 0.2), seed=1)
    assert again.split == ds.split


@given(st.integers(0, 1000))
def test_split_is_a_partition(seed):
    ds = split_dataset(_toy_dataset(40, 6), seed=seed)
    parts = [set(ds.addresses(p)) for p in ("train", "val", "test")]
    assert set.union(*parts) == set(ds.addresses())
    assert sum(len(p) for p in parts) == len(ds.accounts)


def test_split_rejects_bad_ratios():
    with pytest.raises(InvalidConfig):
        split_dataset(_toy_dataset(), (0.5, 0.5, 0.5))

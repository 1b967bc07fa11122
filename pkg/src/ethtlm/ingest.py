"""Transaction ingestion: Etherscan exports, per-account ledgers, synthetic data, splits."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import InvalidConfig, MalformedRow, MissingColumn

FIELDS = (
    "blockNumber", "timeStamp", "hash", "nonce", "blockHash", "transactionIndex",
    "from", "to", "value", "gas", "gasPrice", "isError", "txreceipt_status",
    "contractAddress", "cumulativeGasUsed", "gasUsed", "confirmations", "methodId",
    "functionName",
)
_INT_FIELDS = {"blockNumber", "timeStamp", "nonce", "transactionIndex", "value", "gas",
               "gasPrice", "isError", "cumulativeGasUsed", "gasUsed", "confirmations"}
_ADDR_RE = re.compile(r"^(0x)?[0-9a-fA-F]{40}$")
_HEX_RE = re.compile(r"^(0x)?[0-9a-fA-F]*$")

INCOMING, OUTGOING = 0, 1
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class RawTransaction:
    blockNumber: int
    timeStamp: int
    hash: str
    nonce: int
    blockHash: str
    transactionIndex: int
    sender: str
    to: str
    value: int
    gas: int
    gasPrice: int
    isError: int
    txreceipt_status: int | None
    contractAddress: str
    cumulativeGasUsed: int
    gasUsed: int
    confirmations: int
    methodId: str
    functionName: str

    @property
    def receiver(self) -> str:
        return self.to

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["from"] = rec.pop("sender")
        return {k: rec[k] for k in FIELDS}


def normalize_address(raw: str) -> str:
    s = raw.strip().lower()
    return s[2:] if s.startswith("0x") else s


def _parse_row(row: Mapping[str, str], line: int) -> RawTransaction:
    vals: dict = {}
    for name in FIELDS:
        v = row.get(name)
        raw = v if isinstance(v, int) else (v or "").strip()
        if name in _INT_FIELDS:
            try:
                vals[name] = int(raw)
            except (TypeError, ValueError):
                raise MalformedRow(line, name, str(raw)) from None
        elif name == "txreceipt_status":
            if raw == "" or raw is None:
                vals[name] = None
            else:
                try:
                    vals[name] = int(raw)
                except (TypeError, ValueError):
                    raise MalformedRow(line, name, str(raw)) from None
        elif name in ("from", "to", "contractAddress"):
            if raw == "" and name != "from":
                vals[name] = ""
            elif not _ADDR_RE.match(str(raw)):
                raise MalformedRow(line, name, str(raw))
            else:
                vals[name] = normalize_address(raw)
        elif name in ("hash", "blockHash"):
            if not raw or not _HEX_RE.match(raw):
                raise MalformedRow(line, name, str(raw))
            vals[name] = raw.lower()
        elif name == "methodId":
            if not _HEX_RE.match(raw):
                raise MalformedRow(line, name, raw)
            # Etherscan writes "0x" for plain transfers
            vals[name] = "" if raw.lower() in ("", "0x") else raw.lower()
        else:
            vals[name] = str(raw)

    if vals["value"] < 0:
        raise MalformedRow(line, "value", str(vals["value"]))
    if vals["timeStamp"] <= 0:
        raise MalformedRow(line, "timeStamp", str(vals["timeStamp"]))
    if vals["gasUsed"] > vals["gas"]:
        raise MalformedRow(line, "gasUsed", str(vals["gasUsed"]))
    if vals["isError"] not in (0, 1):
        raise MalformedRow(line, "isError", str(vals["isError"]))
    if not vals["to"] and not vals["contractAddress"]:
        raise MalformedRow(line, "to", "")
    vals["sender"] = vals.pop("from")
    return RawTransaction(**vals)


def parse_transactions(content: bytes | str, fmt: str = "csv") -> list[RawTransaction]:
    """Parse an Etherscan CSV export or JSON-lines file.

    Columns may come in any order and extra columns are ignored; every one of
    the 19 transaction fields must be present.
    """
    text = content.decode("utf-8-sig") if isinstance(content, bytes) else content
    if fmt == "csv":
        reader = csv.DictReader(io.StringIO(text))
        header = reader.fieldnames or []
        for name in FIELDS:
            if name not in header:
                raise MissingColumn(name)
        return [_parse_row(row, i + 2) for i, row in enumerate(reader)]
    if fmt in ("jsonl", "json-lines"):
        out = []
        for i, line in enumerate(text.splitlines()):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                raise MalformedRow(i + 1, "<json>", line[:40]) from None
            for name in FIELDS:
                if name not in obj:
                    raise MissingColumn(name)
            out.append(_parse_row({k: ("" if v is None else v if isinstance(v, int) else str(v))
                                   for k, v in obj.items()}, i + 1))
        return out
    raise InvalidConfig(f"unknown format {fmt!r}")


def _render(tx: RawTransaction) -> dict:
    rec = tx.to_record()
    for k in ("from", "to", "contractAddress"):
        rec[k] = ("0x" + rec[k]) if rec[k] else ""
    if rec["txreceipt_status"] is None:
        rec["txreceipt_status"] = ""
    return rec


def serialize_transactions(txs: Iterable[RawTransaction], fmt: str = "csv") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=FIELDS, quoting=csv.QUOTE_ALL, lineterminator="\n")
        w.writeheader()
        for tx in txs:
            w.writerow(_render(tx))
        return buf.getvalue()
    if fmt in ("jsonl", "json-lines"):
        return "".join(json.dumps(_render(tx)) + "\n" for tx in txs)
    raise InvalidConfig(f"unknown format {fmt!r}")


# ---------------------------------------------------------------- ledgers

@dataclass
class AccountLedger:
    address: str
    transactions: list[tuple[RawTransaction, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.transactions)


def _tx_order(tx: RawTransaction) -> tuple:
    return (tx.timeStamp, tx.blockNumber, tx.transactionIndex)


def build_account_ledgers(txs: Iterable[RawTransaction],
                          drop_failed: bool = False) -> dict[str, AccountLedger]:
    """Group transactions per participating address, oldest first.

    The sender gets the entry with io=1, the receiver io=0.  Contract
    creations (empty ``to``) only reach the sender; a self-transfer is
    recorded once, as outgoing.
    """
    ledgers: dict[str, AccountLedger] = {}
    for tx in txs:
        if drop_failed and tx.isError:
            continue
        ledgers.setdefault(tx.sender, AccountLedger(tx.sender)).transactions.append((tx, OUTGOING))
        if tx.to and tx.to != tx.sender:
            ledgers.setdefault(tx.to, AccountLedger(tx.to)).transactions.append((tx, INCOMING))
    for led in ledgers.values():
        led.transactions.sort(key=lambda e: _tx_order(e[0]))
    return ledgers


# ---------------------------------------------------------------- datasets

@dataclass
class LabeledDataset:
    accounts: list[AccountLedger]
    labels: dict[str, int]
    split: dict[str, str] = field(default_factory=dict)

    def ledger(self, address: str) -> AccountLedger:
        for led in self.accounts:
            if led.address == address:
                return led
        raise KeyError(address)

    def addresses(self, part: str | None = None) -> list[str]:
        addrs = [a.address for a in self.accounts]
        if part is None:
            return addrs
        return [a for a in addrs if self.split.get(a) == part]

    def transactions(self) -> list[RawTransaction]:
        """Every distinct transaction referenced by any ledger, in chain order."""
        seen: dict[str, RawTransaction] = {}
        for led in self.accounts:
            for tx, _ in led.transactions:
                seen.setdefault(tx.hash, tx)
        return sorted(seen.values(), key=lambda t: (*_tx_order(t), t.hash))


def dataset_to_json(ds: LabeledDataset) -> str:
    accounts = []
    for led in sorted(ds.accounts, key=lambda a: a.address):
        rows = []
        for tx, io_flag in led.transactions:
            rec = tx.to_record()
            rec["io"] = io_flag
            rows.append(rec)
        accounts.append({"address": led.address, "transactions": rows})
    doc = {"accounts": accounts,
           "labels": {k: int(v) for k, v in sorted(ds.labels.items())},
           "split": dict(sorted(ds.split.items()))}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def dataset_from_json(text: str) -> LabeledDataset:
    doc = json.loads(text)
    for key in ("accounts", "labels", "split"):
        if key not in doc:
            raise MissingColumn(key)
    cache: dict[str, RawTransaction] = {}
    accounts = []
    for entry in doc["accounts"]:
        rows = []
        for i, rec in enumerate(entry["transactions"]):
            h = rec["hash"]
            tx = cache.get(h)
            if tx is None:
                tx = _parse_row({k: ("" if rec[k] is None else rec[k]) for k in FIELDS}, i + 1)
                cache[h] = tx
            rows.append((tx, int(rec["io"])))
        accounts.append(AccountLedger(entry["address"], rows))
    return LabeledDataset(accounts, {k: int(v) for k, v in doc["labels"].items()}, dict(doc["split"]))


def save_dataset(ds: LabeledDataset, path) -> None:
    Path(path).write_text(dataset_to_json(ds))


def load_dataset(path) -> LabeledDataset:
    return dataset_from_json(Path(path).read_text())


# ---------------------------------------------------------------- splits

def _quotas(n: int, ratios: tuple[float, ...]) -> list[int]:
    raw = [r * n for r in ratios]
    base = [int(math.floor(x)) for x in raw]
    rest = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:rest]:
        base[i] += 1
    return base


def split_dataset(ds: LabeledDataset, ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
                  seed: int = 0) -> LabeledDataset:
    """Stratified train/val/test assignment (largest-remainder quotas per class)."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise InvalidConfig(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    by_class: dict[int, list[str]] = {}
    for led in ds.accounts:
        if led.address in ds.labels:
            by_class.setdefault(ds.labels[led.address], []).append(led.address)
    for cls, members in by_class.items():
        if len(members) < 3:
            raise InvalidConfig(f"class {cls} has {len(members)} members; need at least 3")
    rng = np.random.default_rng(seed)
    split: dict[str, str] = {}
    for cls in sorted(by_class):
        members = sorted(by_class[cls])
        perm = rng.permutation(len(members))
        q = _quotas(len(members), ratios)
        bounds = np.cumsum([0] + q)
        for part, lo, hi in zip(SPLITS, bounds[:-1], bounds[1:]):
            for j in perm[lo:hi]:
                split[members[j]] = part
    return LabeledDataset(ds.accounts, dict(ds.labels), split)


# ---------------------------------------------------------------- synthetic data

@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic phishing-style generator.

    Transaction counts and lifespans follow a truncated discrete power law;
    anomalous accounts shift the log-normal value and gas-price means by
    ``anomaly_shift_sigmas`` standard deviations and compress their
    inter-transaction gaps by ``anomaly_gap_scale``.
    """
    n_accounts: int = 500
    anomaly_rate: float = 0.05
    seed: int = 0
    powerlaw_exponent: float = 2.0
    min_tx: int = 5
    max_tx: int = 200
    min_lifespan_days: int = 1
    max_lifespan_days: int = 1000
    value_log_mean: float = -1.0
    value_log_sigma: float = 1.5
    gasprice_log_mean: float = math.log(30.0)
    gasprice_log_sigma: float = 0.5
    anomaly_shift_sigmas: float = 1.5
    anomaly_gap_scale: float = 0.1
    counterparty_ratio: float = 2.0
    n_contracts: int = 20
    contract_call_rate: float = 0.2
    outgoing_rate: float = 0.5
    error_rate: float = 0.01
    start_time: int = 1_500_000_000
    horizon_days: int = 1500
    split_ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)


_SELECTORS = (("0xa9059cbb", "transfer(address _to, uint256 _value)"),
              ("0x095ea7b3", "approve(address _spender, uint256 _value)"),
              ("0x23b872dd", "transferFrom(address _from, address _to, uint256 _value)"),
              ("0x7ff36ab5", "swapExactETHForTokens(uint256 amountOutMin, address[] path)"),
              ("0xd0e30db0", "deposit()"))


def _addr(tag: str, seed: int, i: int) -> str:
    return hashlib.sha256(f"{tag}:{seed}:{i}".encode()).hexdigest()[:40]


def discrete_powerlaw_sample(rng: np.random.Generator, alpha: float, lo: int, hi: int,
                             size: int) -> np.ndarray:
    k = np.arange(lo, hi + 1, dtype=np.float64)
    p = k ** -alpha
    p /= p.sum()
    return rng.choice(np.arange(lo, hi + 1), size=size, p=p)


def generate_synthetic_dataset(cfg: SynthConfig) -> LabeledDataset:
    if not 0 < cfg.anomaly_rate < 0.5:
        raise InvalidConfig(f"anomaly_rate must lie in (0, 0.5), got {cfg.anomaly_rate}")
    if cfg.n_accounts < 2 or cfg.min_tx < 2 or cfg.max_tx < cfg.min_tx:
        raise InvalidConfig("need n_accounts >= 2 and 2 <= min_tx <= max_tx")
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_accounts
    n_anom = int(round(n * cfg.anomaly_rate))
    accounts = [_addr("acct", cfg.seed, i) for i in range(n)]
    anomalous = set(rng.permutation(n)[:n_anom].tolist())
    pool = [_addr("peer", cfg.seed, i) for i in range(max(1, int(n * cfg.counterparty_ratio)))]
    contracts = [_addr("contract", cfg.seed, i) for i in range(max(1, cfg.n_contracts))]

    n_tx = discrete_powerlaw_sample(rng, cfg.powerlaw_exponent, cfg.min_tx, cfg.max_tx, n)
    life = discrete_powerlaw_sample(rng, cfg.powerlaw_exponent, cfg.min_lifespan_days,
                                    cfg.max_lifespan_days, n)
    genesis = cfg.start_time - 86400 * 365
    last_time = cfg.start_time + 86400 * (cfg.horizon_days + cfg.max_lifespan_days)
    head_block = (last_time - genesis) // 13 + 10

    txs: list[RawTransaction] = []
    for i, acct in enumerate(accounts):
        is_anom = i in anomalous
        k = int(n_tx[i])
        span = int(life[i]) * 86400
        if is_anom:
            span = int(round(span * cfg.anomaly_gap_scale))
        start = cfg.start_time + int(rng.integers(0, cfg.horizon_days * 86400))
        inner = np.sort(rng.integers(0, span + 1, size=k - 2)) if k > 2 else np.array([], dtype=np.int64)
        offsets = np.concatenate([[0], inner, [span]]).astype(np.int64)
        shift_v = cfg.anomaly_shift_sigmas * cfg.value_log_sigma if is_anom else 0.0
        shift_g = cfg.anomaly_shift_sigmas * cfg.gasprice_log_sigma if is_anom else 0.0
        log_v = rng.normal(cfg.value_log_mean + shift_v, cfg.value_log_sigma, size=k)
        log_g = rng.normal(cfg.gasprice_log_mean + shift_g, cfg.gasprice_log_sigma, size=k)
        outgoing = rng.random(k) < cfg.outgoing_rate
        is_call = rng.random(k) < cfg.contract_call_rate
        peers = rng.integers(0, len(pool), size=k)
        which_contract = rng.integers(0, len(contracts), size=k)
        selector = rng.integers(0, len(_SELECTORS), size=k)
        tx_index = rng.integers(0, 200, size=k)
        used_frac = rng.uniform(0.5, 1.0, size=k)
        call_gas = rng.integers(40_000, 250_000, size=k)
        cumulative = rng.integers(0, 1_000_000, size=k)
        errors = rng.random(k) < cfg.error_rate
        peer_nonce = rng.integers(0, 5000, size=k)
        nonce = 0
        for j in range(k):
            ts = start + int(offsets[j])
            block = (ts - genesis) // 13
            value = int(round(math.exp(log_v[j]) * 1e6)) * 10 ** 12
            gas_price = int(round(math.exp(log_g[j]) * 1e3)) * 10 ** 6
            method, fname = "", ""
            if outgoing[j] and is_call[j]:
                sender, to = acct, contracts[which_contract[j]]
                method, fname = _SELECTORS[selector[j]]
                gas = int(call_gas[j])
                gas_used = int(gas * used_frac[j])
            else:
                peer = pool[peers[j]]
                sender, to = (acct, peer) if outgoing[j] else (peer, acct)
                gas = gas_used = 21_000
            if sender == acct:
                tx_nonce = nonce
                nonce += 1
            else:
                tx_nonce = int(peer_nonce[j])
            txs.append(RawTransaction(
                blockNumber=int(block), timeStamp=int(ts),
                hash="0x" + hashlib.sha256(f"tx:{cfg.seed}:{i}:{j}".encode()).hexdigest(),
                nonce=tx_nonce,
                blockHash="0x" + hashlib.sha256(f"block:{block}".encode()).hexdigest(),
                transactionIndex=int(tx_index[j]), sender=sender, to=to, value=value, gas=gas,
                gasPrice=gas_price, isError=int(errors[j]), txreceipt_status=int(not errors[j]),
                contractAddress="", cumulativeGasUsed=gas_used + int(cumulative[j]),
                gasUsed=gas_used, confirmations=int(head_block - block), methodId=method,
                functionName=fname,
            ))
    ledgers = build_account_ledgers(txs)
    labels = {a: int(i in anomalous) for i, a in enumerate(accounts)}
    ds = LabeledDataset([ledgers[a] for a in sorted(accounts)], labels, {})
    return split_dataset(ds, cfg.split_ratios, cfg.seed)


def synth_config_fields() -> list[str]:
    return [f.name for f in fields(SynthConfig)]

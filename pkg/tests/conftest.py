"""Shared builders for small hand-made transaction sets."""
from __future__ import annotations

import hashlib

import pytest
from hypothesis import settings

from ethtlm.ingest import RawTransaction

settings.register_profile("ci", deadline=None, max_examples=60)
settings.load_profile("ci")


def addr(i: int) -> str:
    return f"{i + 1:040x}"


_counter = [0]


def make_tx(sender: str, to: str, ts: int = 1_600_000_000, value: int = 10 ** 18, gas: int = 21_000,
            gas_price: int = 30 * 10 ** 9, method: str = "", is_error: int = 0, block: int | None = None,
            index: int = 0) -> RawTransaction:
    _counter[0] += 1
    h = "0x" + hashlib.sha256(f"{sender}{to}{ts}{value}{_counter[0]}".encode()).hexdigest()
    return RawTransaction(
        blockNumber=block if block is not None else ts // 13, timeStamp=ts, hash=h, nonce=0,
        blockHash="0x" + "ab" * 32, transactionIndex=index, sender=sender, to=to, value=value, gas=gas,
        gasPrice=gas_price, isError=is_error, txreceipt_status=1 - is_error, contractAddress="",
        cumulativeGasUsed=gas, gasUsed=gas, confirmations=1, methodId=method,
        functionName="transfer(address _to, uint256 _value)" if method else "")


@pytest.fixture
def tx_factory():
    return make_tx


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end check")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

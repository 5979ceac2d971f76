import os
import sys

import pytest

from rfpkv import kernels
from rfpkv.baselines import ParadigmKind
from rfpkv.cluster import Client, Server
from rfpkv.rdma import Emulator

BACKENDS = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])


def make_cluster(paradigm="rfp", workers=2, clients=1, mode="sim", profile=None, torn=None,
                 cpu_ns=0.0, index_keys=256, entry_bytes=64, **client_kw):
    emu = Emulator(profile, mode=mode, torn=torn)
    snic = emu.add_nic("server", issuers=workers)
    cnic = emu.add_nic("client", issuers=max(1, clients))
    server = Server(emu, snic, ParadigmKind.parse(paradigm), workers, cpu_ns=cpu_ns)
    if server.paradigm is ParadigmKind.BYPASS:
        server.expose_index(index_keys, entry_bytes)
    cl = [Client(server, cnic, **client_kw) for _ in range(clients)]
    return emu, server, cl


@pytest.fixture
def cluster():
    return make_cluster


@pytest.fixture(autouse=True, scope="session")
def _report_backend():
    print(f"\nkernel backend: {kernels.BACKEND} (RFPKV_PURE={os.environ.get('RFPKV_PURE', '')})")
    yield


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        checks = mod.RESULTS[n]
        status = "PASS" if all(ok for ok, _ in checks) else "FAIL"
        tr.write_line(f"criterion {n:2d}: {status}  " + "; ".join(d for _, d in checks))

import subprocess
import sys
import time

import pytest

from kaas_client import ClientSession

_BOOT = "import sys; from kaas.cli import kaasd_main; sys.exit(kaasd_main())"


@pytest.fixture(scope="session")
def server_address():
    """A real kaasd server in a subprocess, strict schema mode, mem store."""
    proc = subprocess.Popen(
        [sys.executable, "-c", _BOOT, "serve", "--port", "0", "--store", "mem",
         "--executors", "2", "--capacity", "64MiB", "--strict-schema"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        if "listening on" not in line:
            raise RuntimeError(f"server failed to start: {line!r} "
                               f"{proc.stderr.read()}")
        address = line.strip().rsplit(" ", 1)[1]
        session = ClientSession(address, timeout=5.0)
        deadline = time.time() + 10
        while True:
            try:
                if session.health():
                    break
            except Exception:
                pass
            if time.time() > deadline:
                raise RuntimeError("server never became healthy")
            time.sleep(0.05)
        yield address
    finally:
        proc.terminate()
        proc.wait(timeout=10)


@pytest.fixture
def session(server_address):
    return ClientSession(server_address, timeout=10.0)

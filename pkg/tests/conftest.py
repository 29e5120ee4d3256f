import threading

import pytest

from distsgd.transport import Fabric, local_world


def run_ranks(endpoints, fn, *args):
    """Run ``fn(ep, *args)`` on one thread per endpoint; return results by rank or re-raise."""
    results = [None] * len(endpoints)
    errors = [None] * len(endpoints)

    def body(ep):
        try:
            results[ep.rank] = fn(ep, *args)
        except BaseException as exc:  # noqa: BLE001
            errors[ep.rank] = exc

    threads = [threading.Thread(target=body, args=(ep,), daemon=True) for ep in endpoints]
    for t in threads:
        t.start()
    for t in threads:
        t.join(60)
    for exc in errors:
        if exc is not None:
            raise exc
    return results


def make_world(backend, n, timeout=10.0):
    if backend == "inprocess":
        return Fabric(n, timeout).endpoints()
    return local_world(n, timeout)


def close_world(eps):
    for ep in eps:
        ep.close()


@pytest.fixture(params=["inprocess", "tcp"])
def backend(request):
    return request.param


# Acceptance criteria report: one line per criterion at the end of the run.
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])

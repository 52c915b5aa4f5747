import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=30, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def cache(tmp_path, monkeypatch):
    from scrambling.spectra import SpectrumCache

    monkeypatch.setenv("SCRAMBLING_CACHE_DIR", str(tmp_path / "cache"))
    return SpectrumCache(tmp_path / "cache")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow on first run)")
    config._acceptance = {}


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, passed, detail)`` for the end-of-run report."""

    def record(criterion: int, passed: bool, detail: str) -> bool:
        request.config._acceptance.setdefault(criterion, []).append((bool(passed), detail))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        ok = all(p for p, _ in results[k])
        detail = "; ".join(d for _, d in results[k])
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")

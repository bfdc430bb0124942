import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import write_dpo_fixture  # noqa: E402

from rankcot.gateway import Gateway, MockBackend, MockRule, MockScript  # noqa: E402


@pytest.fixture
def dpo_fixture(tmp_path):
    return write_dpo_fixture(tmp_path / "fixture")


@pytest.fixture
def make_gateway(tmp_path):
    def factory(rules=(), default="", cache=False, **kwargs):
        script = MockScript([r if isinstance(r, MockRule) else MockRule(*r) for r in rules], default)
        backend = MockBackend(script)
        cache_dir = tmp_path / "cache" if cache else None
        return Gateway(backend, cache_dir=cache_dir, **kwargs)

    return factory

import datetime

import pytest

import conelab
from conelab import cache, computation
from conelab.cache import utils
from conelab.computation import Output
from conelab.config import RunConfig

SPECTRUM_ROW = {
    "mode": "0,0",
    "laplace_eig": 0.0,
    "lambda": -6.0,
    "mu_plus": -2.0,
    "mu_minus": -3.0,
    "multiplicity": 1,
    "exact": True,
}


class CountingHandler:
    def __init__(self) -> None:
        self.calls = 0

    def __call__(self, config_: RunConfig) -> Output:
        self.calls += 1
        return Output(rows=[dict(SPECTRUM_ROW)])


@pytest.fixture
def config_(tmp_path) -> RunConfig:
    return RunConfig(
        command="spectrum", parameters={"count": 1}, cache_dir=tmp_path.as_posix()
    )


def test_now_is_utc():
    stamp = utils.now()

    assert stamp.utcoffset() == datetime.timedelta(0)


def test_content_hash_is_canonical():
    first = utils.content_hash({"b": [1, 2], "a": 0.5})
    second = utils.content_hash({"a": 0.5, "b": [1, 2]})

    assert first == second
    assert first != utils.content_hash({"a": 0.5, "b": [2, 1]})
    assert int(first, 16) >= 0


def test_computation_value(config_: RunConfig):
    handler = CountingHandler()
    computation_ = computation.Computation(config_, handler)

    value = computation_.value()

    assert handler.calls == 1
    assert value["command"] == "spectrum"
    assert value["rows"] == [{**SPECTRUM_ROW, "config_hash": config_.config_hash}]
    assert value["provenance"]["config_hash"] == config_.config_hash
    assert value["provenance"]["duration"] >= 0


def test_cached_value_hits(config_: RunConfig):
    handler = CountingHandler()
    store: dict = {}
    cached = cache.Computation(computation.Computation(config_, handler), store)

    first = cached.value()
    second = cached.value()

    assert handler.calls == 1
    assert first == second
    assert list(store) == [cached.key]


def test_cache_key_tracks_code_version(config_: RunConfig, monkeypatch):
    computation_ = computation.Computation(config_, CountingHandler())
    key = computation_.key

    monkeypatch.setattr(computation, "code_version", lambda: "0.0.0-other")

    assert computation_.key != key


def test_stale_code_version_never_hits(config_: RunConfig):
    handler = CountingHandler()
    store: dict = {}
    cached = cache.Computation(computation.Computation(config_, handler), store)
    store[cached.key] = ("0.0.0-stale", {"rows": []})

    assert cached.maybe_get() is None

    value = cached.value()

    assert handler.calls == 1
    assert store[cached.key] == (cached.code_version, value)


def test_cached_repr(config_: RunConfig):
    cached = cache.Computation(computation.Computation(config_, CountingHandler()), {})

    assert repr(cached).startswith("Cached(Computation('spectrum', ")


def test_get_or_create_cache_needs_directory(tmp_path):
    with pytest.raises(OSError, match="does not exist"):
        conelab.get_or_create_cache((tmp_path / "missing").as_posix(), "conelab")


def test_get_or_create_cache_reuses_shelf(tmp_path):
    try:
        first = conelab.get_or_create_cache(tmp_path.as_posix(), "conelab")
        second = conelab.get_or_create_cache(tmp_path.as_posix(), "conelab")
        other = conelab.get_or_create_cache(tmp_path.as_posix(), "other")

        assert first is second
        assert first is not other
    finally:
        conelab.close_caches()

    assert conelab.caches == {}


def test_shelf_survives_reopen(config_: RunConfig):
    handler = CountingHandler()
    try:
        shelf = conelab.get_or_create_cache(config_.cache_dir, config_.cache_file)
        first = conelab.add_caching(
            computation.Computation(config_, handler), shelf
        ).value()
    finally:
        conelab.close_caches()

    try:
        shelf = conelab.get_or_create_cache(config_.cache_dir, config_.cache_file)
        second = conelab.add_caching(
            computation.Computation(config_, handler), shelf
        ).value()
    finally:
        conelab.close_caches()

    assert handler.calls == 1
    assert first == second

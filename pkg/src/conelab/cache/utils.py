import datetime
import hashlib
import json
from typing import Any

import pytz


def now() -> datetime.datetime:
    return datetime.datetime.now(tz=pytz.utc)


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def content_hash(value: Any) -> str:
    """sha256 over the canonical JSON form of a JSON-serializable value."""
    return hashlib.sha256(canonical_json(value).encode("utf-8")).hexdigest()

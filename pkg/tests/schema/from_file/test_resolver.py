from dataclasses import dataclass
from typing import Dict

import pytest

from conelab.schema import from_file
from conelab.schema.from_file import api
from conelab.schema.from_file.api import Schema


@dataclass
class MockSchemaCollection(from_file.SchemaCollection):
    schemas: Dict[str, Schema]

    def get_schema_by_name(self, name: str) -> Schema:
        return self.schemas[name]

    def get_schemas(self) -> Dict[str, Schema]:
        return self.schemas


ROW = {
    "type": "object",
    "properties": {"config_hash": {"type": "string"}},
    "required": ["config_hash"],
}


@pytest.fixture
def row_collection() -> MockSchemaCollection:
    return MockSchemaCollection(
        {
            "Row.json": ROW,
            "Number.json": {"type": ["null", "number"]},
            "ModeRow.json": {
                "allOf": [
                    {"$ref": "Row.json"},
                    {
                        "type": "object",
                        "properties": {
                            "mode": {"$ref": "#/$defs/label"},
                            "lambda": {"$ref": "Number.json"},
                        },
                        "required": ["mode"],
                    },
                ],
                "$defs": {"label": {"type": "string"}},
            },
        }
    )


def test_resolver_init(row_collection: MockSchemaCollection):
    resolver = api.Resolver(row_collection)

    assert resolver.collection is row_collection


def test_resolver_plain_schema(row_collection: MockSchemaCollection):
    resolver = api.Resolver(row_collection)

    assert resolver.get_schema_by_name("Row.json") == ROW


def test_resolver_resolves_allof(row_collection: MockSchemaCollection):
    resolver = api.Resolver(row_collection)

    expected = {
        "allOf": [
            ROW,
            {
                "type": "object",
                "properties": {
                    "mode": {"type": "string"},
                    "lambda": {"type": ["null", "number"]},
                },
                "required": ["mode"],
            },
        ]
    }

    assert resolver.get_schema_by_name("ModeRow.json") == expected


def test_resolver_leaves_collection_untouched(row_collection: MockSchemaCollection):
    resolver = api.Resolver(row_collection)

    resolver.get_schemas()

    schema = row_collection.get_schema_by_name("ModeRow.json")
    assert schema["allOf"][0] == {"$ref": "Row.json"}
    assert "$defs" in schema


def test_resolver_resolves_all_schemas(row_collection: MockSchemaCollection):
    resolver = api.Resolver(row_collection)

    schemas = resolver.get_schemas()

    assert set(schemas) == {"Row.json", "Number.json", "ModeRow.json"}
    assert all("$defs" not in schema for schema in schemas.values())


def test_flatten_merges_allof(row_collection: MockSchemaCollection):
    resolver = api.Resolver(row_collection)

    schema = api.flatten(resolver.get_schema_by_name("ModeRow.json"))

    assert schema == {
        "type": "object",
        "properties": {
            "config_hash": {"type": "string"},
            "mode": {"type": "string"},
            "lambda": {"type": ["null", "number"]},
        },
        "required": ["config_hash", "mode"],
    }


def test_flatten_plain_object():
    assert api.flatten(ROW) == ROW


def test_flatten_nested_allof():
    inner = {"allOf": [ROW, {"properties": {"h": {"type": "number"}}}]}

    schema = api.flatten({"allOf": [inner, {"required": ["h"]}]})

    assert list(schema["properties"]) == ["config_hash", "h"]
    assert schema["required"] == ["config_hash", "h"]

from dataclasses import dataclass
from typing import Dict
from unittest import mock

import pkg_resources
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


TABLES = [
    ("result_table", "ResultTable.json"),
    ("hardt_simon", "HardtSimonRow.json"),
    ("spectrum", "SpectrumRow.json"),
    ("smooth_link", "SmoothLinkRow.json"),
    ("log_cone", "LogConeRow.json"),
    ("barriers", "BarrierRow.json"),
    ("three_annulus", "ThreeAnnulusRow.json"),
    ("report", "ReportRow.json"),
]


def test_facade_init():
    collection = MockSchemaCollection({})
    facade = api.Facade(collection)
    assert facade.collection is collection


@pytest.mark.parametrize("method, name", TABLES)
def test_facade_table(method, name):
    collection = MockSchemaCollection({name: mock.sentinel.schema})
    facade = api.Facade(collection)
    schema = getattr(facade, method)()
    assert schema is mock.sentinel.schema


@pytest.fixture(scope="module")
def packaged() -> api.Facade:
    schemas_directory = pkg_resources.resource_filename("conelab", "schemas")
    return api.Facade(api.Resolver(api.Loader(schemas_directory)))


@pytest.mark.parametrize("method, name", TABLES[1:])
def test_packaged_rows_carry_config_hash(packaged: api.Facade, method, name):
    schema = api.flatten(getattr(packaged, method)())

    assert "config_hash" in schema["required"]
    assert len(schema["properties"]) > 1


def test_packaged_result_table_resolves_provenance(packaged: api.Facade):
    schema = packaged.result_table()

    provenance = schema["properties"]["provenance"]
    assert "$ref" not in provenance
    assert "config_hash" in provenance["required"]

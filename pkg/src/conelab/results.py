import csv
import json
import pathlib
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import pkg_resources
import singer
from singer.transform import SchemaMismatch

from conelab.schema.from_file import api as schema

logger = singer.get_logger()

SCHEMA_VERSION = 1

Row = Dict[str, Any]


@dataclass
class Provenance:
    config_hash: str
    code_version: str
    created_at: str
    finished_at: Optional[str] = None
    duration: Optional[float] = None

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "Provenance":
        return cls(
            config_hash=data["config_hash"],
            code_version=data["code_version"],
            created_at=data["created_at"],
            finished_at=data.get("finished_at"),
            duration=data.get("duration"),
        )


@dataclass
class ResultTable:
    command: str
    provenance: Provenance
    rows: List[Row]
    parameters: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    flags: Dict[str, bool] = field(default_factory=dict)
    series: Dict[str, List[Row]] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ResultTable":
        required = load_schema("result_table")["required"]
        missing = [key for key in required if key not in data]
        if missing:
            raise ResultsError("schema mismatch: table lacks {}".format(missing))

        if data["schema_version"] != SCHEMA_VERSION:
            raise ResultsError(
                "schema mismatch: version [{}] != [{}]".format(
                    data["schema_version"], SCHEMA_VERSION
                )
            )

        return cls(
            command=data["command"],
            provenance=Provenance.from_mapping(data["provenance"]),
            rows=list(data["rows"]),
            parameters=dict(data.get("parameters", {})),
            seed=data.get("seed"),
            flags=dict(data.get("flags", {})),
            series=dict(data.get("series", {})),
            schema_version=data["schema_version"],
        )

    def asdict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def config_hash(self) -> str:
        return self.provenance.config_hash

    @property
    def stem(self) -> str:
        return "{}-{}".format(self.command, self.config_hash[:12])

    @property
    def columns(self) -> List[str]:
        return columns_of(self.rows)

    def to_json(self) -> str:
        return json.dumps(self.asdict(), indent=2, sort_keys=True)

    def write(
        self, output_dir: Union[str, pathlib.Path], formats: Sequence[str]
    ) -> List[pathlib.Path]:
        output_dir_ = pathlib.Path(output_dir)
        output_dir_.mkdir(parents=True, exist_ok=True)

        written: List[pathlib.Path] = []
        if "json" in formats:
            path = output_dir_ / "{}.json".format(self.stem)
            path.write_text(self.to_json() + "\n")
            written.append(path)

        if "csv" in formats:
            path = output_dir_ / "{}.csv".format(self.stem)
            write_csv_rows(path, self.rows, self.columns)
            written.append(path)

            for name, rows in sorted(self.series.items()):
                path = output_dir_ / "{}-{}.csv".format(self.stem, name)
                write_csv_rows(path, rows, columns_of(rows))
                written.append(path)

        logger.info(
            "%s: wrote [%s]", self.command, ", ".join(p.name for p in written)
        )

        return written


def columns_of(rows: Sequence[Row]) -> List[str]:
    columns: List[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    return columns


def write_csv_rows(
    path: pathlib.Path, rows: Sequence[Row], columns: List[str]
) -> None:
    with open(path, "w", newline="") as stream:
        writer = csv.DictWriter(stream, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def load_schema(name: str) -> Dict[str, Any]:
    schemas_directory = pkg_resources.resource_filename("conelab", "schemas")

    loader = schema.Loader(schemas_directory)
    resolver = schema.Resolver(loader)
    facade = schema.Facade(resolver)

    schema_loader = getattr(facade, name)

    return schema_loader()


def row_schema(command: str) -> Dict[str, Any]:
    name = command.replace("-", "_")
    if name == "result_table" or not hasattr(schema.Facade, name):
        raise ResultsError("schema mismatch: unknown command [{}]".format(command))

    return schema.flatten(load_schema(name))


def check_rows(command: str, rows: Sequence[Row]) -> List[Row]:
    """Rows of `command` conformed to its row schema; plain JSON types out."""
    row_schema_ = row_schema(command)
    properties = row_schema_["properties"]

    checked: List[Row] = []
    with singer.Transformer() as transformer:
        for i, row in enumerate(rows):
            missing = [key for key in row_schema_["required"] if key not in row]
            unknown = [key for key in row if key not in properties]
            if missing or unknown:
                raise ResultsError(
                    "schema mismatch: [{}] row [{}] missing {} unknown {}".format(
                        command, i, missing, unknown
                    )
                )

            try:
                checked.append(transformer.transform(row, row_schema_))
            except SchemaMismatch as error:
                raise ResultsError(
                    "schema mismatch: [{}] row [{}]: {}".format(command, i, error)
                ) from error

    return checked


def load_table(path: Union[str, pathlib.Path]) -> ResultTable:
    path_ = pathlib.Path(path)
    try:
        data = json.loads(path_.read_text())
    except (OSError, ValueError) as error:
        raise ResultsError("cannot read table [{}]: {}".format(path_, error))

    if not isinstance(data, dict):
        raise ResultsError("schema mismatch: [{}] is not a table".format(path_))

    table = ResultTable.from_mapping(data)
    table.rows = check_rows(table.command, table.rows)

    logger.debug(
        "loaded [%s] rows of [%s] from [%s]", len(table.rows), table.command, path_
    )

    return table


class ResultsError(Exception):
    """Result table unreadable or off its schema"""

import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List

import pkg_resources
import singer

from conelab import results
from conelab.cache import utils

logger = singer.get_logger()

Row = Dict[str, Any]


@dataclass
class Output:
    rows: List[Row]
    flags: Dict[str, bool] = field(default_factory=dict)
    series: Dict[str, List[Row]] = field(default_factory=dict)


Handler = Callable[[Any], Output]


def code_version() -> str:
    try:
        return pkg_resources.get_distribution("conelab").version
    except pkg_resources.DistributionNotFound:
        return "0+unknown"


class Computation:
    """One CLI command evaluated for one run configuration."""

    def __init__(self, config: Any, handler: Handler) -> None:
        self.config = config
        self.handler = handler

    @property
    def code_version(self) -> str:
        return code_version()

    @property
    def key(self) -> str:
        return utils.content_hash(
            [
                self.config.command,
                self.config.parameters,
                self.config.seed,
                self.code_version,
            ]
        )

    def value(self) -> Dict[str, Any]:
        command = self.config.command
        config_hash = self.config.config_hash

        start_time = time.monotonic()
        created_at = utils.now()
        logger.info("%s: Starting run [%s]", command, config_hash)

        output = self.handler(self.config)
        rows = [{**row, "config_hash": config_hash} for row in output.rows]
        rows = results.check_rows(command, rows)

        finished_at = utils.now()
        duration = time.monotonic() - start_time
        logger.info(
            "%s: Completed run (%s rows) in %s seconds", command, len(rows), duration
        )

        table = results.ResultTable(
            command=command,
            parameters=self.config.parameters,
            seed=self.config.seed,
            provenance=results.Provenance(
                config_hash=config_hash,
                code_version=self.code_version,
                created_at=created_at.isoformat(),
                finished_at=finished_at.isoformat(),
                duration=duration,
            ),
            flags=output.flags,
            series=output.series,
            rows=rows,
        )

        return table.asdict()

    def __repr__(self) -> str:
        return "Computation({!r}, {})".format(
            self.config.command, self.config.config_hash[:12]
        )

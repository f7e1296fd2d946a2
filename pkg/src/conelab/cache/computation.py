from typing import Any, Dict, MutableMapping, Optional

import singer

from conelab import computation

logger = singer.get_logger()


class Computation(computation.Computation):
    def __init__(
        self,
        computation: computation.Computation,
        cache: MutableMapping[str, Any],
    ) -> None:
        """cache.Computation provides a cached variant of a Computation. Result
        tables are stored in the provided MutableMapping under a key derived from
        the command, its parameters, the seed and the code version, so a repeated
        run returns the stored table unchanged.

        Parameters
        ----------
        computation : computation.Computation
            Computation object to decorate, in case of cache miss evaluation is
            redirected to it.
        cache : MutableMapping[str, Any]
            cache object used for result tables
        """

        self.computation = computation
        self.cache = cache

    @property
    def config(self) -> Any:
        return self.computation.config

    @property
    def key(self) -> str:
        return self.computation.key

    @property
    def code_version(self) -> str:
        return self.computation.code_version

    def value(self) -> Dict[str, Any]:
        value_ = self.maybe_get()
        if value_:
            return value_

        value_ = self.computation.value()

        self.put(value_)

        return value_

    def maybe_get(self) -> Optional[Dict[str, Any]]:
        if self.key not in self.cache:
            return None

        code_version, data = self.cache[self.key]

        if code_version != self.code_version:
            logger.debug(
                "value for key [%s] is stale (code_version [%s] != [%s])",
                self.key,
                code_version,
                self.code_version,
            )

            return None

        logger.debug("hit key [%s]", self.key)

        return data

    def put(self, value: Dict[str, Any]) -> None:
        logger.debug(
            "storing key [%s] with code version [%s]", self.key, self.code_version
        )

        self.cache[self.key] = (self.code_version, value)

    def __repr__(self) -> str:
        return "Cached({})".format(repr(self.computation))

from dataclasses import dataclass

from . import Schema, SchemaCollection


@dataclass
class Facade:
    collection: SchemaCollection

    def result_table(self) -> Schema:
        return self.collection.get_schema_by_name("ResultTable.json")

    def hardt_simon(self) -> Schema:
        return self.collection.get_schema_by_name("HardtSimonRow.json")

    def spectrum(self) -> Schema:
        return self.collection.get_schema_by_name("SpectrumRow.json")

    def smooth_link(self) -> Schema:
        return self.collection.get_schema_by_name("SmoothLinkRow.json")

    def log_cone(self) -> Schema:
        return self.collection.get_schema_by_name("LogConeRow.json")

    def barriers(self) -> Schema:
        return self.collection.get_schema_by_name("BarrierRow.json")

    def three_annulus(self) -> Schema:
        return self.collection.get_schema_by_name("ThreeAnnulusRow.json")

    def report(self) -> Schema:
        return self.collection.get_schema_by_name("ReportRow.json")

from typing import List, Optional


class VtdsError(Exception):
    """
    Base class for every error raised by the dataset generator.
    """


class OsmParseError(VtdsError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        """
        :param message: What went wrong.
        :param line: 1-based line of the offending XML, when known.
        :param column: 0-based column of the offending XML, when known.
        """
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ReferentialIntegrityError(VtdsError):
    def __init__(self, way_id: int, node_id: int):
        self.way_id = way_id
        self.node_id = node_id
        super().__init__(f"Way {way_id} references missing node {node_id}.")


class RuleSyntaxError(VtdsError):
    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"{message} at line {line}, column {column}")


class RuleError(VtdsError):
    def __init__(self, message: str, rule: Optional[str] = None):
        self.rule = rule
        prefix = f"Rule '{rule}': " if rule else ""
        super().__init__(prefix + message)


class GeometryError(VtdsError):
    pass


class CapacityError(VtdsError):
    def __init__(self, what: str, requested: int, capacity: int):
        self.requested = requested
        self.capacity = capacity
        super().__init__(
            f"Cannot place {requested} {what} vehicles: capacity is {capacity}."
        )


class InactiveError(VtdsError):
    pass


class ConfigError(VtdsError):
    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"{len(self.violations)} configuration violation(s):\n{lines}")


class ConfigIOError(VtdsError):
    pass


class DatasetWriteError(VtdsError):
    def __init__(self, message: str, path: str):
        self.path = path
        super().__init__(f"{message}: {path}")

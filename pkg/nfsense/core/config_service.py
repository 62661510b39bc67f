"""
INI experiment files read through QSettings, plus a small arithmetic evaluator for numeric fields.

QSettings returns a value containing unquoted commas as a list of strings; everything else
arrives as a single string. Section and key names are matched case-insensitively.
"""
import ast
import logging
import math
import operator
import os

from PyQt6.QtCore import QSettings

from .errors import ConfigurationError

logger = logging.getLogger("nfsense.core.config_service")

_BINARY_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY_OPS = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_FUNCTIONS = {"sqrt": math.sqrt, "radians": math.radians, "deg": math.radians}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def evaluate_expression(text: str, names: dict[str, float] | None = None) -> float:
    """
    Evaluate an arithmetic expression such as "pi/12" or "rd/50".

    Only numbers, the given names, + - * / ** and the functions sqrt/radians are accepted.
    """
    names = {"pi": math.pi, "inf": math.inf, **(names or {})}
    try:
        tree = ast.parse(str(text).strip(), mode="eval")
    except SyntaxError as e:
        raise ConfigurationError(f"Cannot parse numeric expression '{text}': {e.msg}") from None

    def visit(node):
        if isinstance(node, ast.Expression):
            return visit(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id not in names:
                raise ConfigurationError(f"Unknown name '{node.id}' in expression '{text}'")
            return float(names[node.id])
        if isinstance(node, ast.BinOp) and type(node.op) in _BINARY_OPS:
            return _BINARY_OPS[type(node.op)](visit(node.left), visit(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY_OPS:
            return _UNARY_OPS[type(node.op)](visit(node.operand))
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCTIONS
                and len(node.args) == 1 and not node.keywords):
            return _FUNCTIONS[node.func.id](visit(node.args[0]))
        raise ConfigurationError(f"Unsupported syntax in expression '{text}'")

    try:
        return visit(tree)
    except (ZeroDivisionError, OverflowError, ValueError) as e:
        raise ConfigurationError(f"Cannot evaluate '{text}': {e}") from None


class ConfigService:
    """Reads one INI file and hands out validated, typed values per section."""

    def __init__(self, path: str, schema: dict[str, set[str]]):
        self.path = path
        self.schema = {section.lower(): {k.lower() for k in keys} for section, keys in schema.items()}
        self._values: dict[str, dict[str, object]] = {section: {} for section in self.schema}

    def load(self) -> tuple[bool, str]:
        if not os.path.isfile(self.path):
            return False, f"Config file '{self.path}' does not exist."
        settings = QSettings(self.path, QSettings.Format.IniFormat)
        if settings.status() != QSettings.Status.NoError:
            return False, f"Config file '{self.path}' could not be parsed (status {settings.status()})."

        unknown = []
        for full_key in settings.allKeys():
            section, _, key = full_key.rpartition("/")
            section, key = section.lower(), key.lower()
            if section not in self.schema:
                unknown.append(f"[{section or 'General'}]")
            elif key not in self.schema[section]:
                unknown.append(f"{section}.{key}")
            else:
                self._values[section][key] = settings.value(full_key)
        if unknown:
            return False, f"Unknown config entries in '{self.path}': {', '.join(sorted(set(unknown)))}"
        count = sum(len(v) for v in self._values.values())
        logger.info(f"Loaded {count} config entries from '{self.path}'.")
        return True, f"Loaded '{self.path}'."

    def has(self, section: str, key: str) -> bool:
        return key in self._values.get(section, {})

    def raw(self, section: str, key: str, default=None):
        return self._values.get(section, {}).get(key, default)

    def number(self, section: str, key: str, default: float | None = None,
               names: dict[str, float] | None = None) -> float | None:
        value = self.raw(section, key)
        if value is None:
            return default
        if isinstance(value, list):
            raise ConfigurationError(f"{section}.{key} must be a single number, got a list")
        return evaluate_expression(value, names)

    def integer(self, section: str, key: str, default: int | None = None) -> int | None:
        value = self.number(section, key)
        if value is None:
            return default
        if not value.is_integer():
            raise ConfigurationError(f"{section}.{key} must be an integer, got {value}")
        return int(value)

    def boolean(self, section: str, key: str, default: bool = False) -> bool:
        value = self.raw(section, key)
        if value is None:
            return default
        text = str(value).strip().lower()
        if text in _TRUE:
            return True
        if text in _FALSE:
            return False
        raise ConfigurationError(f"{section}.{key} must be a boolean (on/off), got '{value}'")

    def text(self, section: str, key: str, default: str | None = None) -> str | None:
        value = self.raw(section, key)
        if value is None:
            return default
        if isinstance(value, list):
            return ",".join(value)
        return str(value).strip()

    def text_list(self, section: str, key: str, default: list[str] | None = None) -> list[str] | None:
        value = self.raw(section, key)
        if value is None:
            return default
        items = value if isinstance(value, list) else str(value).split(",")
        return [item.strip() for item in items if item.strip()]

    def number_list(self, section: str, key: str, default: list[float] | None = None,
                    names: dict[str, float] | None = None) -> list[float] | None:
        items = self.text_list(section, key)
        if items is None:
            return default
        return [evaluate_expression(item, names) for item in items]

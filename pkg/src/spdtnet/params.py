"""Flat ``key=value`` parameter files."""

from __future__ import annotations

from importlib import resources
from pathlib import Path


class ParamFileError(ValueError):
    def __init__(self, path, line: int, message: str):
        self.path, self.line = str(path), line
        super().__init__(f"{path}:{line}: {message}")


def _coerce(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_kv(text: str, source="<string>") -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParamFileError(source, lineno, f"expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParamFileError(source, lineno, "empty key")
        if key in out:
            raise ParamFileError(source, lineno, f"duplicate key {key!r}")
        out[key] = _coerce(value)
    return out


def read_kv(path) -> dict:
    path = Path(path)
    return parse_kv(path.read_text(), source=path)


def format_kv(values: dict) -> str:
    return "".join(f"{k}={_format_value(v)}\n" for k, v in values.items())


def _format_value(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_kv(path, values: dict) -> None:
    Path(path).write_text(format_kv(values))


def default_params() -> dict:
    """The shipped default parameter set (``paper-defaults.kv``)."""
    text = resources.files("spdtnet").joinpath("data/paper-defaults.kv").read_text()
    return parse_kv(text, source="paper-defaults.kv")


def defaults_path() -> Path:
    return Path(str(resources.files("spdtnet").joinpath("data/paper-defaults.kv")))


def merged(*layers: dict) -> dict:
    """Later layers override earlier ones; ``None`` values are skipped."""
    out = {}
    for layer in layers:
        out.update({k: v for k, v in layer.items() if v is not None})
    return out

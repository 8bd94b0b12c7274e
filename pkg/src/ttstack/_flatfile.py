"""Reader/writer for flat ``key = value`` config files.

Keys may be dotted (``train.max_epochs``) and indexed
(``learners[0].patch_size``). Values are JSON literals; anything that does
not parse as JSON is kept as a bare string. ``#`` starts a comment line.
"""
import json
import re
from pathlib import Path

from .errors import ConfigError

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\[\d+\])?(\.[A-Za-z_][A-Za-z0-9_]*(\[\d+\])?)*$")


def parse_flat(text: str, source: str = "<string>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"{source}:{lineno}: bad key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def read_flat(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_flat(text, str(path))


def format_flat(items: dict) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in items.items())


def section(flat: dict, prefix: str) -> dict:
    """Sub-dict of keys under ``prefix.``, prefix stripped."""
    p = prefix + "."
    return {k[len(p):]: v for k, v in flat.items() if k.startswith(p)}


def indexed_sections(flat: dict, name: str) -> list:
    """``learners[0].x``, ``learners[1].x`` ... -> list of dicts ordered by index."""
    pat = re.compile(re.escape(name) + r"\[(\d+)\]\.(.+)$")
    groups = {}
    for k, v in flat.items():
        m = pat.match(k)
        if m:
            groups.setdefault(int(m.group(1)), {})[m.group(2)] = v
    if groups and sorted(groups) != list(range(len(groups))):
        raise ConfigError(f"{name}[i] indices must be contiguous from 0, got {sorted(groups)}")
    return [groups[i] for i in sorted(groups)]

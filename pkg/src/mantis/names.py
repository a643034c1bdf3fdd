"""Domain-name helpers: canonical form, validation, apex extraction and the bundled lists."""
from __future__ import annotations

import ipaddress
import re
from functools import lru_cache
from importlib import resources
from pathlib import Path

_LABEL_RE = re.compile(r"^[a-z0-9_]([a-z0-9_-]{0,61}[a-z0-9_])?$")


def canonical(name: str) -> str:
    return name.strip().lower().rstrip(".")


def is_valid_name(name: str) -> bool:
    if not name or len(name) > 253:
        return False
    labels = name.split(".")
    if len(labels) < 2:
        return False
    return all(_LABEL_RE.match(label) for label in labels)


def is_ipv4(text: str) -> bool:
    try:
        ipaddress.IPv4Address(text)
    except ValueError:
        return False
    return True


def subnet24(ip: str) -> str:
    a, b, c, _ = ip.split(".")
    return f"{a}.{b}.{c}.0/24"


def read_list(path: str | Path) -> list[str]:
    """Newline-delimited list; blank lines and ``//``/``#`` comments dropped."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith(("//", "#")):
                out.append(line.lower())
    return out


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("mantis") / "data" / name))


@lru_cache(maxsize=None)
def bundled_list(name: str) -> tuple[str, ...]:
    return tuple(read_list(bundled_path(name)))


class SuffixList:
    """Longest-match public-suffix lookup."""

    def __init__(self, suffixes):
        self.suffixes = frozenset(canonical(s) for s in suffixes)

    @classmethod
    def bundled(cls) -> "SuffixList":
        return _bundled_suffixes()

    @classmethod
    def from_file(cls, path) -> "SuffixList":
        return cls(read_list(path))

    def suffix(self, name: str) -> str:
        labels = name.split(".")
        for i in range(len(labels)):
            cand = ".".join(labels[i:])
            if cand in self.suffixes:
                return cand
        return labels[-1]

    def apex(self, name: str) -> str:
        suf = self.suffix(name)
        head = name[: -len(suf) - 1] if len(name) > len(suf) else ""
        if not head:
            return name
        return head.rsplit(".", 1)[-1] + "." + suf

    def split(self, name: str) -> tuple[list[str], str, str]:
        """Return (subdomain labels, registrable label, suffix)."""
        suf = self.suffix(name)
        head = name[: -len(suf) - 1] if len(name) > len(suf) else ""
        if not head:
            return [], "", suf
        parts = head.split(".")
        return parts[:-1], parts[-1], suf


@lru_cache(maxsize=1)
def _bundled_suffixes() -> SuffixList:
    return SuffixList(bundled_list("public_suffix.dat"))


def apex_of(name: str) -> str:
    return _bundled_suffixes().apex(name)

"""Language taxonomy, linguistic groups and English-centric directions."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

from .errors import EnglishUngrouped, ParseError, UnknownLanguage, ValidationError

ENGLISH = "en"
RESOURCE_LEVELS = ("High", "Mid", "Low")
_CODE_RE = re.compile(r"^[a-z][a-z0-9]*$")


class Direction(enum.Enum):
    INTO_ENGLISH = "xx-en"
    FROM_ENGLISH = "en-xx"

    @property
    def label(self) -> str:
        return "XX->En" if self is Direction.INTO_ENGLISH else "En->XX"


@dataclass(frozen=True)
class LanguageInfo:
    code: str
    script: str
    family: str
    subgroup: str
    resource: str
    group_id: int | None

    def __post_init__(self):
        if not _CODE_RE.match(self.code):
            raise ValidationError(f"bad language code {self.code!r}")
        if self.resource not in RESOURCE_LEVELS:
            raise ValidationError(f"{self.code}: resource must be one of {RESOURCE_LEVELS}")
        if self.code == ENGLISH:
            if self.group_id is not None:
                raise ValidationError("English must be ungrouped")
        elif not isinstance(self.group_id, int) or self.group_id < 1:
            raise ValidationError(f"{self.code}: group must be a positive integer")


@dataclass(frozen=True)
class TranslationTask:
    src: str
    dst: str

    def __post_init__(self):
        if self.src == self.dst:
            raise ValidationError(f"degenerate task {self.src}-{self.dst}")
        if (self.src == ENGLISH) == (self.dst == ENGLISH):
            raise ValidationError(f"task {self.src}-{self.dst} is not English-centric")

    @classmethod
    def parse(cls, text: str) -> "TranslationTask":
        parts = text.strip().split("-")
        if len(parts) != 2:
            raise ValidationError(f"task must look like 'de-en', got {text!r}")
        return cls(parts[0], parts[1])

    @property
    def direction(self) -> Direction:
        return direction_of(self)

    @property
    def language(self) -> str:
        """The non-English side."""
        return self.src if self.dst == ENGLISH else self.dst

    def __str__(self):
        return f"{self.src}-{self.dst}"


def direction_of(task: TranslationTask) -> Direction:
    return Direction.INTO_ENGLISH if task.dst == ENGLISH else Direction.FROM_ENGLISH


@dataclass(frozen=True)
class Registry:
    """Immutable language table. ``en`` is present and belongs to no group."""

    languages: Mapping[str, LanguageInfo]
    english_code: str = field(default=ENGLISH)

    def __post_init__(self):
        object.__setattr__(self, "languages", MappingProxyType(dict(self.languages)))
        if ENGLISH not in self.languages:
            raise ValidationError("registry is missing 'en'")
        if not self.codes():
            raise ValidationError("registry has no non-English languages")
        ids = sorted(self.group_ids())
        if ids != list(range(1, len(ids) + 1)):
            raise ValidationError(f"group ids must be 1..N with every group nonempty, got {ids}")

    @classmethod
    def from_languages(cls, infos: Iterable[LanguageInfo]) -> "Registry":
        table: dict[str, LanguageInfo] = {}
        for info in infos:
            if info.code in table:
                raise ValidationError(f"duplicate language code {info.code!r}")
            table[info.code] = info
        return cls(table)

    def codes(self) -> list[str]:
        """Non-English codes in registry order."""
        return [c for c in self.languages if c != ENGLISH]

    def group_ids(self) -> list[int]:
        return sorted({info.group_id for info in self.languages.values() if info.group_id is not None})

    def members(self, group_id: int) -> list[str]:
        return [c for c, info in self.languages.items() if info.group_id == group_id]

    def group_sizes(self) -> list[int]:
        return [len(self.members(g)) for g in self.group_ids()]

    @property
    def n_languages(self) -> int:
        return len(self.codes())

    @property
    def n_groups(self) -> int:
        return len(self.group_ids())

    def tasks(self, direction: Direction | None = None, codes: Iterable[str] | None = None) -> list[TranslationTask]:
        """English-centric tasks, XX->En first, in registry order."""
        codes = self.codes() if codes is None else list(codes)
        out = []
        if direction in (None, Direction.INTO_ENGLISH):
            out += [TranslationTask(c, ENGLISH) for c in codes]
        if direction in (None, Direction.FROM_ENGLISH):
            out += [TranslationTask(ENGLISH, c) for c in codes]
        return out

    def to_json(self) -> dict:
        rows = []
        for info in self.languages.values():
            rows.append({
                "code": info.code,
                "script": info.script,
                "family": info.family,
                "subgroup": info.subgroup,
                "resource": info.resource,
                "group": info.group_id,
            })
        return {"languages": rows}


def group_of(reg: Registry, code: str) -> int:
    if code == ENGLISH:
        raise EnglishUngrouped("English belongs to every group and has no group id")
    try:
        return reg.languages[code].group_id
    except KeyError:
        raise UnknownLanguage(f"unknown language {code!r}") from None


_ROW_KEYS = {"code", "script", "family", "subgroup", "resource", "group"}


def registry_from_json(obj) -> Registry:
    if not isinstance(obj, dict) or set(obj) != {"languages"}:
        raise ValidationError("registry JSON must be an object with exactly the key 'languages'")
    rows = obj["languages"]
    if not isinstance(rows, list):
        raise ValidationError("'languages' must be a list")
    infos = []
    for row in rows:
        if not isinstance(row, dict):
            raise ValidationError("language entries must be objects")
        unknown = set(row) - _ROW_KEYS
        if unknown:
            raise ValidationError(f"unknown keys in language entry: {sorted(unknown)}")
        missing = (_ROW_KEYS - {"group"}) - set(row)
        if missing:
            raise ValidationError(f"language entry missing keys: {sorted(missing)}")
        infos.append(LanguageInfo(
            code=row["code"],
            script=row["script"],
            family=row["family"],
            subgroup=row["subgroup"],
            resource=row["resource"],
            group_id=row.get("group"),
        ))
    return Registry.from_languages(infos)


def load_registry(path) -> Registry:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return registry_from_json(obj)


def save_registry(reg: Registry, path) -> None:
    Path(path).write_text(json.dumps(reg.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


# code, script, family, subgroup, resource
_BUILTIN = {
    None: [("en", "Latin", "Indo-European", "Germanic", "High")],
    1: [
        ("af", "Latin", "Indo-European", "Germanic", "Mid"),
        ("da", "Latin", "Indo-European", "Germanic", "Mid"),
        ("nl", "Latin", "Indo-European", "Germanic", "High"),
        ("de", "Latin", "Indo-European", "Germanic", "High"),
        ("is", "Latin", "Indo-European", "Germanic", "Low"),
        ("no", "Latin", "Indo-European", "Germanic", "Low"),
        ("sv", "Latin", "Indo-European", "Germanic", "High"),
    ],
    2: [
        ("ca", "Latin", "Indo-European", "Italic", "High"),
        ("gl", "Latin", "Indo-European", "Italic", "Mid"),
        ("it", "Latin", "Indo-European", "Italic", "High"),
        ("pt", "Latin", "Indo-European", "Italic", "High"),
        ("ro", "Latin", "Indo-European", "Italic", "Mid"),
        ("es", "Latin", "Indo-European", "Italic", "High"),
    ],
    3: [
        ("bg", "Cyrillic", "Indo-European", "Balto-Slavic", "Mid"),
        ("mk", "Cyrillic", "Indo-European", "Balto-Slavic", "Low"),
        ("ru", "Cyrillic", "Indo-European", "Balto-Slavic", "High"),
        ("sr", "Cyrillic", "Indo-European", "Balto-Slavic", "High"),
        ("uk", "Cyrillic", "Indo-European", "Balto-Slavic", "Mid"),
    ],
    4: [
        ("fr", "Latin", "Indo-European", "Italic", "High"),
        ("id", "Latin", "Austronesian", "Malayo-Polynesian", "Mid"),
        ("mg", "Latin", "Austronesian", "Malayo-Polynesian", "Low"),
        ("ms", "Latin", "Austronesian", "Malayo-Polynesian", "Mid"),
        ("th", "Thai", "Tai-Kadai", "Kam-Tai", "Mid"),
        ("vi", "Latin", "Austronesian", "Vietic", "High"),
    ],
    5: [
        ("cs", "Latin", "Indo-European", "Balto-Slavic", "Mid"),
        ("el", "Greek", "Indo-European", "Graeco-Phrygian", "Mid"),
        ("hu", "Latin", "Uralic", "Finnic", "High"),
        ("lv", "Latin", "Indo-European", "Balto-Slavic", "Mid"),
        ("lt", "Latin", "Indo-European", "Balto-Slavic", "Mid"),
        ("pl", "Latin", "Indo-European", "Balto-Slavic", "High"),
    ],
    6: [
        ("zh", "Han", "Sino-Tibetan", "Sinitic", "High"),
        ("et", "Latin", "Uralic", "Finnic", "Mid"),
        ("fi", "Latin", "Uralic", "Finnic", "High"),
        ("ka", "Georgian", "Kartvelian", "Georgian-Zan", "Mid"),
        ("ja", "Japanese", "Japonic", "Japanesic", "High"),
        ("ko", "Hangul", "Koreanic", "Korean", "High"),
    ],
    7: [
        ("gu", "Gujarati", "Indo-European", "Indo-Aryan", "Low"),
        ("hi", "Devanagari", "Indo-European", "Indo-Aryan", "High"),
        ("mr", "Devanagari", "Indo-European", "Indo-Aryan", "Low"),
        ("ne", "Devanagari", "Indo-European", "Indo-Aryan", "Low"),
        ("ur", "Arabic", "Indo-European", "Indo-Aryan", "Mid"),
    ],
    8: [
        ("ar", "Arabic", "Afro-Asiatic", "Semitic", "High"),
        ("az", "Arabic/Latin", "Turkic", "Common Turkic", "Low"),
        ("he", "Hebrew", "Afro-Asiatic", "Semitic", "Mid"),
        ("kk", "Cyrillic", "Turkic", "Common Turkic", "Mid"),
        ("ky", "Cyrillic", "Turkic", "Common Turkic", "Low"),
        ("fa", "Arabic", "Indo-European", "Iranian", "High"),
        ("tr", "Latin", "Turkic", "Common Turkic", "High"),
        ("uz", "Latin", "Turkic", "Common Turkic", "Low"),
    ],
}

_builtin_cache: Registry | None = None


def builtin_registry() -> Registry:
    """The 50-language, eight-group table (English plus 49 grouped languages)."""
    global _builtin_cache
    if _builtin_cache is None:
        infos = [
            LanguageInfo(code, script, family, subgroup, resource, group)
            for group, rows in _BUILTIN.items()
            for code, script, family, subgroup, resource in rows
        ]
        _builtin_cache = Registry.from_languages(infos)
    return _builtin_cache

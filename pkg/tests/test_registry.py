import json

import pytest

from datforge.errors import EnglishUngrouped, ParseError, UnknownLanguage, ValidationError
from datforge.registry import (
    Direction, LanguageInfo, Registry, TranslationTask, builtin_registry, direction_of, group_of, load_registry,
    registry_from_json, save_registry,
)


def test_builtin_counts():
    reg = builtin_registry()
    assert len(reg.languages) == 50
    assert reg.n_languages == 49
    assert reg.n_groups == 8
    assert reg.group_sizes() == [7, 6, 5, 6, 6, 6, 5, 8]


@pytest.mark.parametrize("code,group,resource", [("de", 1, "High"), ("zh", 6, "High"), ("az", 8, "Low"),
                                                  ("is", 1, "Low"), ("ne", 7, "Low")])
def test_builtin_spot_checks(code, group, resource):
    info = builtin_registry().languages[code]
    assert (info.group_id, info.resource) == (group, resource)


def test_group_members_follow_table_order():
    reg = builtin_registry()
    assert reg.members(1) == ["af", "da", "nl", "de", "is", "no", "sv"]
    assert reg.members(7) == ["gu", "hi", "mr", "ne", "ur"]


def test_direction_and_parse():
    t = TranslationTask.parse("de-en")
    assert direction_of(t) is Direction.INTO_ENGLISH
    assert t.language == "de"
    assert str(TranslationTask("en", "zh")) == "en-zh"
    assert TranslationTask("en", "zh").direction is Direction.FROM_ENGLISH


@pytest.mark.parametrize("text", ["de-fr", "en-en", "de", "de-en-x"])
def test_non_english_centric_rejected(text):
    with pytest.raises(ValidationError):
        TranslationTask.parse(text)


def test_group_of_errors():
    reg = builtin_registry()
    assert group_of(reg, "zh") == 6
    with pytest.raises(EnglishUngrouped):
        group_of(reg, "en")
    with pytest.raises(UnknownLanguage):
        group_of(reg, "tlh")


def test_tasks_enumeration():
    reg = builtin_registry()
    tasks = reg.tasks()
    assert len(tasks) == 98
    assert tasks[0].direction is Direction.INTO_ENGLISH
    assert len(reg.tasks(Direction.FROM_ENGLISH, ["de", "fr"])) == 2


def test_json_round_trip(tmp_path):
    reg = builtin_registry()
    path = tmp_path / "reg.json"
    save_registry(reg, path)
    again = load_registry(path)
    assert again.to_json() == reg.to_json()


def test_bad_json_is_parse_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_registry(path)


def test_strict_schema():
    obj = builtin_registry().to_json()
    obj["languages"][1]["extra"] = 1
    with pytest.raises(ValidationError):
        registry_from_json(obj)


def test_duplicates_and_gaps_rejected():
    en = LanguageInfo("en", "Latin", "Indo-European", "Germanic", "High", None)
    de = LanguageInfo("de", "Latin", "Indo-European", "Germanic", "High", 1)
    with pytest.raises(ValidationError):
        Registry.from_languages([en, de, de])
    fr = LanguageInfo("fr", "Latin", "Indo-European", "Romance", "High", 3)
    with pytest.raises(ValidationError):
        Registry.from_languages([en, de, fr])  # group 2 empty
    with pytest.raises(ValidationError):
        Registry.from_languages([de])  # no English


def test_english_must_be_ungrouped():
    with pytest.raises(ValidationError):
        LanguageInfo("en", "Latin", "x", "y", "High", 1)


def test_registry_json_is_stable():
    a = json.dumps(builtin_registry().to_json(), sort_keys=True)
    assert a == json.dumps(builtin_registry().to_json(), sort_keys=True)

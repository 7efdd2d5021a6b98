import json
from pathlib import Path

import jsonschema
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polymerlab.config import (
    ConfigError,
    RunConfig,
    load_config,
    load_schema,
    validate_dict,
    validate_file,
)

CONFIGS = sorted((Path(__file__).resolve().parents[1] / "configs").rglob("*.json"))

BASE = {
    "environment": {"family": "LogNormal", "params": {"beta": 0.5}, "seed": "3"},
    "d": 2,
    "nGrid": [4, 8],
    "replicas": 10,
}


def with_(**changes):
    data = json.loads(json.dumps(BASE))
    data.update(changes)
    return data


def test_schema_is_valid_draft_2020_12():
    jsonschema.Draft202012Validator.check_schema(load_schema())


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.name)
def test_shipped_configs_validate(path):
    assert validate_file(path) == []
    cfg = load_config(path)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_minimal_config_valid():
    assert validate_dict(BASE) == []


def test_zero_replicas_names_field():
    diags = validate_dict(with_(replicas=0))
    assert len(diags) == 1 and diags[0].field == "replicas"


def test_g_out_of_range_cites_requirement():
    diags = validate_dict(with_(gFamily=[{"kind": "constant", "value": 2.0}]))
    assert len(diags) == 1
    assert diags[0].field == "gFamily[0]"
    assert "[0, 1]" in diags[0].message and "contraction" in diags[0].message


def test_unparseable_file_single_diagnostic(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{ nope")
    diags = validate_file(p)
    assert len(diags) == 1 and diags[0].field == "$"


def test_missing_file_raises(tmp_path):
    with pytest.raises(OSError):
        validate_file(tmp_path / "absent.json")


@pytest.mark.parametrize(
    "changes,field",
    [
        ({"nGrid": []}, "nGrid"),
        ({"mGrid": []}, "mGrid"),
        ({"d": 0}, "d"),
        ({"format": "xml"}, "format"),
        ({"bogus": 1}, "bogus"),
        ({"environment": {"family": "LogNormal", "params": {"beta": -1.0}}}, "environment.params"),
        ({"environment": {"family": "Gamma"}}, "environment.family"),
        ({"phiFamily": [{"kind": "nope"}]}, "phiFamily[0]"),
        ({"events": [{"pattern": [[1]]}]}, "events[0].pattern"),
        ({"events": [{"pattern": [[1, 0], [0, 1]]}]}, "events[0].pattern"),
        ({"contraction": {"m": 9, "n": 3}}, "contraction.m"),
        ({"fkg": {"pairN": 2, "pairM": 3}}, "fkg.pairM"),
        ({"checks": ["survival"]}, "replicas"),
        ({"tolerances": {"unknownTol": 1}}, "tolerances.unknownTol"),
    ],
)
def test_each_problem_names_its_field(changes, field):
    diags = validate_dict(with_(**changes))
    assert diags, changes
    assert field in [d.field for d in diags]


def test_load_config_raises_with_diagnostics(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(with_(replicas=0)))
    with pytest.raises(ConfigError) as err:
        load_config(p)
    assert err.value.diagnostics[0].field == "replicas"


def test_overrides():
    cfg = RunConfig.from_dict(BASE).with_overrides(seed=2**64 - 1, threads=3, out="x", fmt="csv")
    assert cfg.seed == 2**64 - 1 and cfg.threads == 3 and cfg.output_dir == "x" and cfg.format == "csv"
    assert validate_dict(cfg.to_dict()) == []


@given(
    st.sampled_from(["Constant", "TwoPoint", "LogNormal", "ParetoTail"]),
    st.integers(1, 3),
    st.lists(st.integers(1, 500), min_size=1, max_size=5),
    st.integers(1, 10_000),
    st.integers(0, 2**64 - 1),
    st.one_of(st.none(), st.floats(0.5, 10)),
    st.sampled_from(["json", "csv"]),
    st.lists(st.integers(0, 40), min_size=1, max_size=4),
)
def test_round_trip_lossless(family, d, grid, replicas, seed, trunc, fmt, mgrid):
    params = {"Constant": {}, "TwoPoint": {"a": 0.5, "b": 1.5, "p": 0.5}, "LogNormal": {"beta": 0.3}, "ParetoTail": {"alpha": 1.5}}
    data = {
        "environment": {"family": family, "params": params[family], "seed": str(seed)},
        "d": d,
        "nGrid": grid,
        "replicas": replicas,
        "truncation": trunc,
        "format": fmt,
        "mGrid": mgrid,
        "checks": ["oracle"],
    }
    assert validate_dict(data) == []
    cfg = RunConfig.from_dict(data)
    again = RunConfig.from_dict(json.loads(cfg.to_json()))
    assert again == cfg
    assert again.to_json() == cfg.to_json()

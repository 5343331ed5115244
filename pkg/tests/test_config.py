import json

import pytest

from e2mc.config import (
    REFERENCE_SETTINGS, PRESETS, RunConfig, from_dict, load_document, load_run_config, merge,
    validate,
)
from e2mc.criteria import Addon, Base
from e2mc.errors import ConfigError


def test_default_snapshot_roundtrips():
    cfg = RunConfig()
    doc = json.loads(cfg.to_json())
    validate(doc)
    assert from_dict(doc).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate_and_roundtrip(name):
    cfg = load_run_config(preset=name)
    assert from_dict(json.loads(cfg.to_json())).to_json() == cfg.to_json()


@pytest.mark.parametrize("doc,path", [
    ({"criterion": {"bogus": 1}}, "$.criterion.bogus"),
    ({"nonsense": {}}, "$.nonsense"),
    ({"train": {"batch_size": "big"}}, "$.train.batch_size"),
    ({"criterion": {"base": "simclr"}}, "$.criterion.base"),
    ({"sweep": {"betas": [0, "x"]}}, "$.sweep.betas[1]"),
])
def test_schema_errors_carry_paths(doc, path):
    with pytest.raises(ConfigError) as info:
        validate(doc)
    assert info.value.path == path
    assert str(info.value).startswith(path + ":")


def test_semantic_errors_become_config_errors():
    with pytest.raises(ConfigError):
        from_dict({"criterion": {"vicreg": {"eta": 0.0}}})
    with pytest.raises(ConfigError) as info:
        from_dict({"criterion": {"base": "swav", "addon": "e2mc", "transform": "sigmoid"}})
    assert info.value.path == "$.criterion.transform"


def test_reference_presets_verbatim():
    c = load_run_config(preset="vicreg-e2mc").train.criterion
    assert (c.base, c.addon, c.beta, c.gamma) == (Base.VICREG, Addon.E2MC, 1000.0, 100.0)
    assert (c.vicreg.lam, c.vicreg.mu, c.vicreg.nu) == (25.0, 25.0, 1.0)
    c = load_run_config(preset="swav-e2mc").train.criterion
    assert (c.beta, c.gamma, c.swav.tau) == (1.0, 25.0, 0.1)
    c = load_run_config(preset="simsiam-e2mc").train.criterion
    assert (c.beta, c.gamma) == (0.001, 0.01)
    assert load_run_config(preset="swav-auh").train.criterion.auh.t == 2.0
    assert load_run_config(preset="swav-mmcr").train.criterion.mmcr.n_views == 8
    assert load_run_config(preset="swav-vcreg").train.criterion.vcreg.nu == 0.001
    cont = load_run_config(preset="swav-e2mc").cont
    assert (cont.epochs, cont.lr_factor) == (10, 0.01)
    assert REFERENCE_SETTINGS["vicreg"]["continued"]["learning_rate"] == 0.003


def test_file_overlays_preset(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"criterion": {"gamma": 5.0}, "train": {"epochs": 3}}))
    cfg = load_run_config(p, preset="vicreg-e2mc", seed=9)
    assert cfg.train.criterion.beta == 1000.0 and cfg.train.criterion.gamma == 5.0
    assert cfg.train.epochs == 3
    assert cfg.train.seed == cfg.train.dataset.seed == 9


def test_bad_documents(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_document(p)
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_document(p)
    with pytest.raises(ConfigError):
        load_document(preset="nope")


def test_merge_is_recursive_and_pure():
    a = {"x": {"y": 1, "z": 2}}
    out = merge(a, {"x": {"z": 3}})
    assert out == {"x": {"y": 1, "z": 3}} and a == {"x": {"y": 1, "z": 2}}

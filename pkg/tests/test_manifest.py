import json

import pytest

from dvapfn.errors import ConfigError
from dvapfn.schemas import RunManifest, TrainConfig
from dvapfn.services.manifest import (
    apply_overrides,
    dump_flat,
    finalize_manifest,
    format_value,
    load_flat,
    load_manifest,
    new_manifest,
    parse_flat,
    parse_value,
    run_directory,
    verify_manifest,
    write_manifest,
)
from dvapfn.services.presets import train_config
from dvapfn.services.priors import robustness_prior_config


# ==================== Values ====================

@pytest.mark.parametrize(
    "text,expected",
    [
        ("3", 3),
        ("0.5", 0.5),
        ("1e-4", 1e-4),
        ("true", True),
        ("False", False),
        ("none", None),
        ("null", None),
        ("DVA", "DVA"),
        ("0.9,1.1", [0.9, 1.1]),
        ("7,", [7]),
        (",", []),
    ],
)
def test_parse_value(text, expected):
    assert parse_value(text) == expected


def test_format_value_reads_back():
    for value in (True, None, 0.1, 3, "rbf_fixed", [5], [0.9, 1.1], []):
        assert parse_value(format_value(value)) == value


# ==================== Flat files ====================

def test_parse_flat_nests_dotted_keys():
    text = "# comment\n\nepochs=3\nmodel.attention.kind = VA\nprior.output_shift_range=0.9,1.1\nepochs=4\n"
    tree = parse_flat(text)
    assert tree == {
        "epochs": 4,
        "model": {"attention": {"kind": "VA"}},
        "prior": {"output_shift_range": [0.9, 1.1]},
    }


def test_numeric_sections_become_lists():
    tree = parse_flat("prior.mixture.1.lengthscale=0.2\nprior.mixture.0.lengthscale=0.6\n")
    assert tree == {"prior": {"mixture": [{"lengthscale": 0.6}, {"lengthscale": 0.2}]}}


def test_bad_line_reports_its_number():
    with pytest.raises(ConfigError, match="line 3"):
        parse_flat("epochs=1\n# ok\nno equals sign\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_flat("model..width=4\n")
    with pytest.raises(ConfigError, match="line 2"):
        parse_flat("model=4\nmodel.width=4\n")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_flat(tmp_path / "absent.txt")


@pytest.mark.parametrize("backbone", ["transformer", "cnn"])
def test_train_config_survives_flat_text(backbone):
    cfg = train_config("power", backbone=backbone, attention="LinearDVA")
    tree = cfg.model_dump(mode="json")
    assert parse_flat(dump_flat(tree)) == tree
    assert TrainConfig.parse(parse_flat(dump_flat(tree))) == cfg


def test_mixture_prior_survives_flat_text():
    prior = robustness_prior_config("all", train_config("1d").prior)
    cfg = train_config("1d").model_copy(update={"prior": prior})
    tree = cfg.model_dump(mode="json")
    assert len(tree["prior"]["mixture"]) == 3
    assert TrainConfig.parse(parse_flat(dump_flat(tree))) == cfg


# ==================== Overrides ====================

def test_overrides_apply_in_order():
    tree = {"epochs": 2, "model": {"width": 4}}
    merged = apply_overrides(tree, ["epochs=5", "model.width=8", "epochs=6"])
    assert merged == {"epochs": 6, "model": {"width": 8}}
    assert tree == {"epochs": 2, "model": {"width": 4}}


def test_override_reaches_into_a_list_of_sections():
    tree = {"prior": {"mixture": [{"lengthscale": 0.6}, {"lengthscale": 0.1}]}}
    merged = apply_overrides(tree, ["prior.mixture.1.lengthscale=0.2"])
    assert merged["prior"]["mixture"] == [{"lengthscale": 0.6}, {"lengthscale": 0.2}]


def test_malformed_override():
    with pytest.raises(ConfigError):
        apply_overrides({}, ["epochs"])
    with pytest.raises(ConfigError):
        apply_overrides({"epochs": 2}, ["epochs.inner=1"])


def test_overrides_feed_validation():
    tree = train_config("1d").model_dump(mode="json")
    with pytest.raises(ConfigError):
        TrainConfig.parse(apply_overrides(tree, ["model.attention.kind=Softmax"]))


# ==================== Manifests ====================

def _run_with_outputs(tmp_path):
    run_dir = run_directory("train", 3, tmp_path / "run")
    manifest = new_manifest("train", {"epochs": 1, "seed": 3}, 3, ["epochs=1"])
    write_manifest(run_dir, manifest)
    (run_dir / "train_log.csv").write_text("epoch,val_nll\n0,1.5\n")
    (run_dir / "timing.csv").write_text("epoch,wall_seconds\n0,0.25\n")
    (run_dir / "variant-00").mkdir()
    (run_dir / "variant-00" / "timing.csv").write_text("epoch,wall_seconds\n0,0.5\n")
    return run_dir, finalize_manifest(run_dir, manifest)


def test_finalize_hashes_everything_but_timing(tmp_path):
    run_dir, manifest = _run_with_outputs(tmp_path)
    assert set(manifest.artifacts) == {"train_log.csv"}
    assert load_manifest(run_dir) == manifest
    assert verify_manifest(run_dir) == []


def test_timing_changes_do_not_break_verification(tmp_path):
    run_dir, _ = _run_with_outputs(tmp_path)
    (run_dir / "timing.csv").write_text("epoch,wall_seconds\n0,9.75\n")
    assert verify_manifest(run_dir) == []


def test_tampering_is_detected(tmp_path):
    run_dir, _ = _run_with_outputs(tmp_path)
    (run_dir / "train_log.csv").write_text("epoch,val_nll\n0,1.4\n")
    assert verify_manifest(run_dir) == ["train_log.csv"]
    (run_dir / "train_log.csv").unlink()
    assert verify_manifest(run_dir) == ["train_log.csv"]


def test_manifest_is_plain_json(tmp_path):
    run_dir, manifest = _run_with_outputs(tmp_path)
    payload = json.loads((run_dir / "manifest.json").read_text())
    assert payload["subcommand"] == "train"
    assert payload["overrides"] == ["epochs=1"]
    assert RunManifest.model_validate(payload) == manifest


def test_unreadable_manifest(tmp_path):
    with pytest.raises(ConfigError):
        load_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_manifest(tmp_path / "manifest.json")


def test_default_run_directory_lives_under_runs_dir(runs_dir):
    path = run_directory("gen-prior", 7)
    assert path.parent == runs_dir
    assert path.name.startswith("gen-prior-7-") and path.name.endswith("Z")
    assert path.is_dir()

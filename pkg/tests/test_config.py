import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rkhsmeta.config import OUTPUT_DIR_ENV, ConfigError, RunConfig, default_run
from rkhsmeta.tasks import BlobSpec


def test_json_roundtrip_keeps_infinite_time():
    run = default_run("blob-classification", "maml", seed=3)
    text = run.to_json()
    assert '"inf"' in text
    back = RunConfig.from_json(text)
    assert back == run
    assert math.isinf(back.t_grid[-1])


@given(st.integers(0, 2**31), st.sampled_from(["meta-rkhs-1", "meta-rkhs-2", "maml", "fomaml", "reptile"]),
       st.integers(0, 5000))
def test_roundtrip_property(seed, algorithm, iters):
    run = default_run("sine-regression", algorithm, seed=seed, meta_iterations=iters)
    assert RunConfig.from_dict(json.loads(run.to_json())) == run


def test_hash_ignores_output_dir_and_workers():
    run = default_run()
    assert run.with_overrides(output_dir="elsewhere", workers=4).config_hash == run.config_hash
    assert run.with_overrides(seed=1).config_hash != run.config_hash
    assert len(run.config_hash) == 16


def test_per_algorithm_and_task_defaults():
    assert default_run(algorithm="meta-rkhs-2").meta.meta_lr == 0.01
    assert default_run(algorithm="maml").meta.meta_lr == 1e-3
    blobs = default_run("blob-classification", "maml")
    assert isinstance(blobs.tasks, BlobSpec) and blobs.loss_kind == "cross_entropy"
    assert default_run().loss_kind == "squared"


def test_algorithm_override_swaps_default_meta_lr_only():
    run = default_run(algorithm="meta-rkhs-2")
    assert run.with_overrides(algorithm="reptile").meta.meta_lr == 1e-3
    custom = RunConfig.from_dict({"algorithm": "meta-rkhs-2", "meta": {"meta_lr": 0.05}})
    assert custom.with_overrides(algorithm="maml").meta.meta_lr == 0.05


def test_effective_test_lr():
    run = default_run()
    assert run.effective_test_lr == run.meta.inner_lr
    assert run.with_overrides(test_lr=0.2).effective_test_lr == 0.2


@pytest.mark.parametrize("payload, path", [
    ({"algorithm": "sgd-net"}, "algorithm"),
    ({"experiment": "mnist"}, "experiment"),
    ({"bogus": 1}, "bogus"),
    ({"meta": {"inner_lr": -1}}, "meta.inner_lr"),
    ({"meta": {"nope": 1}}, "meta.nope"),
    ({"tasks": {"kind": "omniglot"}}, "tasks"),
    ({"schema_version": 99}, "schema_version"),
    ({"meta_iterations": -1}, "meta_iterations"),
    ({"epsilons": [0.0, math.inf]}, "epsilons"),
    ({"workers": 0}, "workers"),
])
def test_errors_name_the_field(payload, path):
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(payload)
    assert info.value.path == path


def test_invalid_json():
    with pytest.raises(ConfigError):
        RunConfig.from_json("{not json")
    with pytest.raises(ConfigError):
        RunConfig.from_json("[1, 2]")


def test_output_dir_env_override(monkeypatch):
    run = default_run(output_dir="from-config")
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    assert run.resolved_output_dir() == "from-config"
    monkeypatch.setenv(OUTPUT_DIR_ENV, "from-env")
    assert run.resolved_output_dir() == "from-env"


def test_load_from_file(tmp_path):
    run = default_run(seed=9)
    path = tmp_path / "run.json"
    path.write_text(run.to_json())
    assert RunConfig.load(path) == run

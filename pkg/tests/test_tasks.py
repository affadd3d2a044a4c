import json
import math

import numpy as np
import pytest

from rkhsmeta.tasks import BlobSpec, SineSpec, Task, sample_task, spec_from_dict, spec_to_dict


def test_sine_task_shapes_and_law():
    t = sample_task(SineSpec(), 0)
    assert t.support_x.shape == (10, 1) and t.query_y.shape == (10, 1)
    amp, phase = t.meta["amplitude"], t.meta["phase"]
    assert 0.1 <= amp <= 5.0 and 0 <= phase <= math.pi
    x, y = t.combined
    np.testing.assert_allclose(y, amp * np.sin(x + phase))
    assert np.all((x >= -5) & (x <= 5))


def test_sampling_is_keyed_and_deterministic():
    a = sample_task(SineSpec(), (3, 0, 7))
    b = sample_task(SineSpec(), (3, 0, 7))
    c = sample_task(SineSpec(), (3, 0, 8))
    np.testing.assert_array_equal(a.support_x, b.support_x)
    assert not np.array_equal(a.support_x, c.support_x)


def test_sine_noise():
    t = sample_task(SineSpec(noise=0.5, n_support=200, n_query=0), 1)
    resid = t.support_y - t.meta["amplitude"] * np.sin(t.support_x + t.meta["phase"])
    assert 0.3 < resid.std() < 0.7


def test_blob_task_layout():
    spec = BlobSpec(way=5, shot=1, query_shot=5, input_dim=8)
    t = sample_task(spec, 0)
    assert t.support_x.shape == (5, 8) and t.query_x.shape == (25, 8)
    np.testing.assert_array_equal(t.support_y, np.arange(5))
    assert np.bincount(t.query_y).tolist() == [5] * 5
    centers = np.asarray(t.meta["centers"])
    # well separated: every point is nearest to its own center
    d = ((t.query_x[:, None, :] - centers[None]) ** 2).sum(-1)
    np.testing.assert_array_equal(d.argmin(1), t.query_y)


def test_task_validation_rejects_nonfinite():
    with pytest.raises(ValueError):
        Task(np.array([[np.nan]]), np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)))


@pytest.mark.parametrize("spec", [SineSpec(), BlobSpec(way=3)])
def test_task_json_roundtrip(spec):
    t = sample_task(spec, 4)
    back = Task.from_dict(json.loads(json.dumps(t.to_dict())))
    for name in ("support_x", "support_y", "query_x", "query_y"):
        np.testing.assert_array_equal(getattr(back, name), getattr(t, name))
    assert back.support_y.dtype == t.support_y.dtype


@pytest.mark.parametrize("spec", [SineSpec(amplitude=(1.0, 2.0)), BlobSpec(way=7, spread=0.5)])
def test_spec_roundtrip(spec):
    assert spec_from_dict(json.loads(json.dumps(spec_to_dict(spec)))) == spec


def test_spec_validation():
    with pytest.raises(ValueError):
        SineSpec(amplitude=(2.0, 1.0))
    with pytest.raises(ValueError):
        SineSpec(noise=-1)
    with pytest.raises(ValueError):
        BlobSpec(way=1)
    with pytest.raises(ValueError):
        spec_from_dict({"kind": "omniglot"})
    with pytest.raises(TypeError):
        sample_task(object(), 0)


def test_swapped():
    t = sample_task(SineSpec(n_support=3, n_query=4), 0)
    s = t.swapped()
    assert s.support_x.shape == (4, 1) and s.query_x.shape == (3, 1)

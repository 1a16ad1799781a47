import json

import numpy as np
import pytest

from refed.config import ConfigError
from refed.data import dumps_dataset, load_dataset
from refed.probe import branch_domain_probes, domain_probe, linear_probe
from refed.refed import RefedModel
from refed.synth import DomainShift, GeneratorConfig, class_curves, default_profiles, generate, write_synthetic

from conftest import tiny_generator


def test_same_seed_same_bytes():
    a = generate(tiny_generator(seed=9))
    b = generate(tiny_generator(seed=9))
    for x, y in zip(a, b):
        assert dumps_dataset(x) == dumps_dataset(y)
    c = generate(tiny_generator(seed=10))
    assert dumps_dataset(c[0]) != dumps_dataset(a[0])


def test_shapes_labels_and_domains(tiny_pair):
    source, target = tiny_pair
    for ds, dom in ((source, 0), (target, 1)):
        assert ds.features.shape[1:] == (8, 2)
        assert set(ds.domains.tolist()) == {dom}
        assert set(ds.labels.tolist()) == {0, 1, 2}
        assert ds.features.dtype == np.float32


def test_polygon_ids_unique_across_domains(tiny_pair):
    source, target = tiny_pair
    s, t = set(source.polygon_ids.tolist()), set(target.polygon_ids.tolist())
    assert not s & t
    assert len(s) == len(t) == 3 * 8


def test_polygons_are_single_class(tiny_pair):
    for ds in tiny_pair:
        for pid in np.unique(ds.polygon_ids):
            assert len(np.unique(ds.labels[ds.polygon_ids == pid])) == 1


def test_pixel_count_floor():
    source, _ = generate(tiny_generator(pixels_mean=0.5, pixels_min=3))
    _, counts = np.unique(source.polygon_ids, return_counts=True)
    assert counts.min() >= 3


def test_noise_free_pixels_follow_curves():
    cfg = tiny_generator(sigma_poly=0.0, sigma_pix=0.0)
    source, target = generate(cfg)
    prof = cfg.resolved().profiles
    tc, sc = class_curves(prof, 8), class_curves(prof, 8, cfg.shift)
    np.testing.assert_allclose(target.features, tc[target.labels], atol=1e-6)
    np.testing.assert_allclose(source.features, sc[source.labels], atol=1e-6)


def test_zero_shift_gives_identical_curves():
    prof = default_profiles(3, 10, 2)
    np.testing.assert_array_equal(class_curves(prof, 10), class_curves(prof, 10, DomainShift(0, 1, 0)))


def test_default_profiles_deterministic():
    assert default_profiles(5, 24, 4, 3) == default_profiles(5, 24, 4, 3)
    assert default_profiles(5, 24, 4, 3) != default_profiles(5, 24, 4, 4)


@pytest.mark.parametrize("bad", [
    dict(n_classes=0), dict(pixels_min=0), dict(sigma_pix=-1.0), dict(shift=DomainShift(dt=8.0)),
    dict(shift=DomainShift(scale=float("nan"))),
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        generate(tiny_generator(**bad))


def test_unknown_config_key():
    with pytest.raises(ConfigError):
        GeneratorConfig.from_dict({"n_class": 3})


def test_write_synthetic_sidecar_reproduces(tmp_path):
    cfg = tiny_generator(seed=4)
    paths = write_synthetic(cfg, tmp_path / "a")
    sidecar = json.loads(open(paths["sidecar"]).read())
    again = write_synthetic(GeneratorConfig.from_dict(sidecar), tmp_path / "b")
    for name in ("source", "target"):
        assert open(paths[name], "rb").read() == open(again[name], "rb").read()
    assert load_dataset(paths["target"]).n_classes == 3


def test_domain_probe_detects_default_shift(default_pair):
    assert domain_probe(*default_pair).test_accuracy >= 90.0


def test_domain_probe_at_chance_without_shift():
    source, target = generate(GeneratorConfig(shift=DomainShift(0.0, 1.0, 0.0)))
    assert domain_probe(source, target).test_accuracy <= 55.0


def test_linear_probe_learns_separable_data():
    r = np.random.default_rng(0)
    y = np.repeat([0, 1], 50)
    x = r.standard_normal((100, 3)) + 4 * y[:, None]
    res = linear_probe(x, y, np.arange(100))
    assert res.test_accuracy == 100.0 and res.n_test + res.n_train == 100


def test_branch_probes_cover_both_branches(tiny_pair):
    model = RefedModel(8, 2, 3, seed=0).eval()
    res = branch_domain_probes(model, *tiny_pair, level=2, steps=20)
    assert set(res) == {"spe", "inv"}
    assert all(0 <= r.test_accuracy <= 100 for r in res.values())

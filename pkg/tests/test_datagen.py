import numpy as np
import pytest

from oelab.data.modalities import ModalitySpec, default_registry
from oelab.data.scenes import (
    Scene,
    SceneConfig,
    make_dataset,
    make_scene,
    patch_mode,
    render_map,
)
from oelab.data.tasks import (
    patch_seg_labels,
    scene_class_labels,
    split_indices,
    temporal_class_labels,
)


@pytest.fixture(scope="module")
def registry():
    return default_registry()


def test_registry_shapes(registry):
    s2 = registry["sentinel2"]
    assert s2.num_bands == 12
    assert sorted(s2.bandsets_v1) == ["10m", "20m", "60m"]
    assert len(s2.bandsets_v1["10m"]) == 4
    assert len(s2.bandsets_v1["20m"]) == 6
    assert len(s2.bandsets_v1["60m"]) == 2
    assert registry["landsat"].num_bands == 11
    assert registry["sentinel1"].num_bands == 2
    assert registry["sentinel1"].dropout_exempt
    maps = [m for m in registry.values() if m.kind == "map"]
    assert len(maps) == 6
    assert all(m.decode_only for m in maps)
    assert sorted(m.num_classes for m in maps) == [2, 2, 2, 2, 8, 8]


def test_bandsets_v1_partition_each_sensor(registry):
    for spec in registry.values():
        if spec.kind != "raster":
            continue
        groups = spec.bandsets(grouping="v1")
        covered = sorted(i for idxs in groups.values() for i in idxs)
        assert covered == list(range(spec.num_bands))


def test_invalid_partition_rejected():
    with pytest.raises(ValueError):
        ModalitySpec(
            name="bad",
            kind="raster",
            bands=("a", "b", "c"),
            temporal=True,
            bandsets_v1={"x": (0, 1), "y": (1, 2)},  # overlapping
        )


def test_scene_shapes_and_dtypes(registry):
    cfg = SceneConfig()
    s = make_scene(3, cfg, registry)
    for name, spec in registry.items():
        if spec.kind == "map":
            assert s.maps[name].shape == (32, 32)
            assert s.maps[name].dtype == np.int8
            assert s.maps[name].min() >= 0
            assert s.maps[name].max() < spec.num_classes
        else:
            t = cfg.timesteps if spec.temporal else 1
            assert s.rasters[name].shape == (t, 32, 32, spec.num_bands)
            assert s.rasters[name].dtype == np.float32


def test_scene_determinism_bitwise(registry):
    a = make_scene(11, SceneConfig(), registry)
    b = make_scene(11, SceneConfig(), registry)
    for name in a.rasters:
        np.testing.assert_array_equal(a.rasters[name], b.rasters[name])
    for name in a.maps:
        np.testing.assert_array_equal(a.maps[name], b.maps[name])


def test_different_seeds_differ(registry):
    a = make_scene(11, SceneConfig(), registry)
    b = make_scene(12, SceneConfig(), registry)
    assert not np.array_equal(a.rasters["sentinel2"], b.rasters["sentinel2"])


def test_scene_class_is_pixel_majority(registry):
    for seed in range(12):
        s = make_scene(seed, SceneConfig(), registry)
        counts = np.bincount(s.class_map.reshape(-1), minlength=4)
        assert counts.argmax() == s.scene_class


def test_dataset_balance(registry):
    scenes = make_dataset(32, root_seed=0, registry=registry)
    sc = np.bincount(scene_class_labels(scenes), minlength=4)
    tc = np.bincount(temporal_class_labels(scenes), minlength=4)
    np.testing.assert_array_equal(sc, [8, 8, 8, 8])
    np.testing.assert_array_equal(tc, [8, 8, 8, 8])


def test_patch_mode_tie_breaks_to_smallest():
    cm = np.array([[0, 1], [1, 0]], dtype=np.int8)
    assert patch_mode(cm, 2)[0, 0] == 0
    cm2 = np.array([[2, 2], [1, 1]], dtype=np.int8)
    assert patch_mode(cm2, 2)[0, 0] == 1


def test_patch_seg_labels_shape(registry):
    scenes = make_dataset(3, registry=registry)
    seg = patch_seg_labels(scenes, patch=8)
    assert seg.shape == (3, 4, 4)
    assert seg.max() < 4


def test_render_map_is_deterministic_relabel(registry):
    cfg = SceneConfig()
    s = make_scene(5, cfg, registry)
    for name, spec in registry.items():
        if spec.kind != "map":
            continue
        again = render_map(cfg, spec, s.class_map, s.detail_bit)
        np.testing.assert_array_equal(s.maps[name], again)
        if spec.num_classes >= 8:
            # fine maps separate the detail bit: at least 5 labels in use
            assert len(np.unique(s.maps[name])) >= 5


def test_band_statistics_are_centered(registry):
    scenes = make_dataset(16, registry=registry)
    x = np.concatenate([s.rasters["sentinel2"].reshape(-1) for s in scenes])
    assert abs(float(x.mean())) < 0.5
    assert 0.3 < float(x.std()) < 3.0


def test_split_indices_partition():
    tr, va, te = split_indices(50, seed=3)
    allidx = np.sort(np.concatenate([tr, va, te]))
    np.testing.assert_array_equal(allidx, np.arange(50))
    assert len(tr) == 30 and len(va) == 10 and len(te) == 10


def test_split_indices_rejects_bad_fractions():
    with pytest.raises(ValueError):
        split_indices(10, fractions=(0.5, 0.2, 0.2))


def test_temporal_classes_have_distinct_frequencies(registry):
    # same scene seed, different temporal class: rasters differ through the
    # seasonal term only, and the two cubes must not coincide
    cfg = SceneConfig()
    a = make_scene(9, cfg, registry, scene_class=1, temporal_class=0)
    b = make_scene(9, cfg, registry, scene_class=1, temporal_class=2)
    assert not np.array_equal(a.rasters["sentinel2"], b.rasters["sentinel2"])
    np.testing.assert_array_equal(a.class_map, b.class_map)

from oelab.data.modalities import ModalitySpec, default_registry
from oelab.data.scenes import Scene, SceneConfig, make_dataset, make_scene
from oelab.data.tasks import (
    patch_seg_labels,
    scene_class_labels,
    split_indices,
    temporal_class_labels,
)

__all__ = [
    "ModalitySpec",
    "default_registry",
    "Scene",
    "SceneConfig",
    "make_scene",
    "make_dataset",
    "scene_class_labels",
    "temporal_class_labels",
    "patch_seg_labels",
    "split_indices",
]

import math

import numpy as np
import pytest

import multiclip as mc


def test_contrastive_reference_values():
    assert mc.contrastive_loss(np.eye(2), np.eye(2), tau=1.0) == pytest.approx(math.log1p(math.exp(-1.0)), abs=1e-12)
    uniform = np.full((4, 8), 1.0 / math.sqrt(8.0))
    assert mc.contrastive_loss(uniform, uniform) == pytest.approx(math.log(4.0))
    assert mc.cosine_alignment_loss(np.eye(2), -np.eye(2)) == pytest.approx(2.0)


def test_bad_input_raises_library_error():
    with pytest.raises(mc.Error):
        mc.contrastive_loss(np.eye(2), np.eye(3))


def test_metrics():
    one = np.ones(3)
    assert mc.box_iou(np.zeros(3), one, np.zeros(3), one) == pytest.approx(1.0)
    assert mc.box_iou(np.zeros(3), one, np.array([0.5, 0.0, 0.0]), one) == pytest.approx(1.0 / 3.0)
    assert mc.em_at_1("  Two  Chairs", ["two chairs"]) == 1
    assert mc.bleu("a red box", ["a red box"], 1) == pytest.approx(1.0)
    assert mc.rouge_l("a red box", ["a red box"]) == pytest.approx(1.0)
    cands = ["a red box on the floor", "two blue chairs near a table"]
    score, per_item = mc.cider(cands, [[c] for c in cands])
    assert score == pytest.approx(10.0)
    assert per_item == [pytest.approx(10.0), pytest.approx(10.0)]


def test_dataset_render_and_embed(tmp_path):
    mc.generate_dataset(1, 2, tmp_path, "train")
    scenes = mc.load_scenes(tmp_path, "train")
    assert len(scenes) == 2
    s = scenes[0]
    assert s["points"].shape[1] == 3
    assert s["points"].shape == s["colors"].shape
    assert s["objects"] and s["captions"]

    views = mc.render_views(s["points"], s["colors"], num_views=5, size=64)
    assert len(views) == 5
    assert views[0].shape == (64, 64, 3)
    assert 0.0 <= views[0].min() and views[0].max() <= 1.0

    z = mc.embed_scene(s["points"], s["colors"], num_points=256)
    assert np.linalg.norm(z) == pytest.approx(1.0)
    order = np.random.default_rng(0).permutation(len(s["points"]))
    z2 = mc.embed_scene(s["points"][order], s["colors"][order], num_points=256)
    np.testing.assert_allclose(z, z2, atol=1e-9)

    with pytest.raises(mc.Error):
        mc.load_scenes(tmp_path, "val")


def test_config_normalization():
    text = mc.normalize_config('{"pretrain": {"iterations": 7}}')
    assert '"iterations": 7' in text
    with pytest.raises(mc.Error):
        mc.normalize_config('{"pretrain": {"iteratons": 7}}')

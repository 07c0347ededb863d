"""Smoke tests for the Python module against the C++ core."""

import math
import os

import numpy as np
import pytest

import ipdfer


def test_render_determinism_and_range():
    a = ipdfer.render(identity_id=0, yaw_deg=0.0, expression_id=0)
    b = ipdfer.render(identity_id=0, yaw_deg=0.0, expression_id=0)
    assert a.shape == (1, 32, 32)
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_render_frontal_mirror_symmetry():
    img = ipdfer.render(identity_id=2, yaw_deg=0.0, expression_id=1)[0]
    assert np.array_equal(img, img[:, ::-1])


def test_render_rejects_bad_factors():
    with pytest.raises(Exception):
        ipdfer.render(identity_id=0, yaw_deg=60.0, expression_id=0)
    with pytest.raises(Exception):
        ipdfer.render(identity_id=0, yaw_deg=0.0, expression_id=9)


def test_pose_buckets():
    assert ipdfer.pose_bucket(5.0) == 0
    assert ipdfer.pose_bucket(15.0) == 1
    assert ipdfer.pose_bucket(45.0) == 4
    assert ipdfer.pose_bucket(10.0) == 1
    with pytest.raises(Exception):
        ipdfer.pose_bucket(-1.0)


def test_loss_values():
    assert ipdfer.loss_confusion(np.zeros((1, 5))) == pytest.approx(math.log(5.0))
    assert ipdfer.loss_ce(np.zeros((1, 4)), [0]) == pytest.approx(math.log(4.0))
    assert ipdfer.loss_cos(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])) == pytest.approx(0.0)
    assert ipdfer.loss_cos(np.array([[1.0, 0.0]]), np.array([[-2.0, 0.0]])) == pytest.approx(1.0)
    g_prime, g_total = ipdfer.assemble_generator_loss(1, 1, 1, 1, c=1, cos=1, confusion=1)
    assert g_prime == pytest.approx(11.002)
    assert g_total == pytest.approx(13.502)


def test_compose_matches_numpy_and_is_order_invariant():
    rng = np.random.default_rng(0)
    a, b, c = rng.normal(size=(3, 1, 8))
    assert np.allclose(ipdfer.compose(a, b, c), a + b + c)
    assert np.array_equal(ipdfer.compose(a, b, c), ipdfer.compose(c, b, a))


def test_dataset_pipeline(tmp_path):
    path = str(tmp_path / "ds.ipds")
    n = ipdfer.build_dataset(path, n_identities=4, yaws=[0.0, 25.0], k_expressions=4, n_folds=2,
                             height=16, width=16, seed=3)
    assert n == 4 * 2 * 4
    ds = ipdfer.load_dataset(path)
    assert ds["images"].shape == (32, 1, 16, 16)
    assert ds["meta"]["k_expressions"] == 4
    # labels are consistent with the factors
    for yaw, y_p in zip(ds["yaw_deg"], ds["y_p"]):
        assert y_p == ipdfer.pose_bucket(yaw)
    # person-independent folds
    for fold in (0, 1):
        train_ids = set(ds["identity_id"][ds["fold"] != fold])
        test_ids = set(ds["identity_id"][ds["fold"] == fold])
        assert not (train_ids & test_ids)


def test_micro_training_run(tmp_path):
    path = str(tmp_path / "ds.ipds")
    ipdfer.build_dataset(path, n_identities=4, yaws=[0.0, 25.0], k_expressions=4, n_folds=2,
                         height=16, width=16, seed=3)
    id_ckpt = str(tmp_path / "e_id.ipck")
    acc = ipdfer.pretrain_identity_encoder(path, id_ckpt, epochs=4, seed=3,
                                           feature_dim=16, widths=[4, 8, 12])
    assert 0.0 <= acc <= 1.0
    out = str(tmp_path / "run")
    last = ipdfer.train(path, out, mode="ipd", id_checkpoint=id_ckpt, epochs=1, batch_size=8,
                        seed=3, feature_dim=16, widths=[4, 8, 12])
    assert "g_total" in last
    ckpt = os.path.join(out, "ckpt_epoch_001.ipck")
    assert os.path.exists(ckpt)

    rep = ipdfer.evaluate(ckpt, path, split="test")
    assert rep["n"] == 16
    assert set(rep["subsets"]) == {"all", "yaw>10", "yaw>20", "yaw>30", "yaw>40"}
    assert "disentanglement_score" in rep

    n_panels = ipdfer.synthesize(ckpt, path, str(tmp_path / "panels"), count=2)
    assert n_panels == 2

    emb = str(tmp_path / "emb.tsv")
    rows = ipdfer.export_embeddings(ckpt, path, emb, split="test")
    assert rows == 16
    assert sum(1 for line in open(emb) if not line.startswith("#")) == 16

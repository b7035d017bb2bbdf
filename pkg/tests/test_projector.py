import json

import numpy as np
import pytest

from seqvec import corpus, projector, trainer
from seqvec.errors import ConfigError, DataError

from _oracles import pca_top2_svd
from conftest import make_record


class TestFitPca2:
    def test_collinear_points_first_component_along_line(self):
        t = np.linspace(-2, 2, 9)
        direction = np.array([1.0, 2.0, -1.0]) / np.linalg.norm([1.0, 2.0, -1.0])
        x = np.array([3.0, 0.0, 1.0]) + t[:, None] * direction
        proj = projector.fit_pca2(x)
        cosine = abs(float(proj.components[0] @ direction))
        assert cosine == pytest.approx(1.0, abs=1e-9)
        assert proj.explained[0] == pytest.approx(1.0, abs=1e-9)
        assert proj.explained[1] == pytest.approx(0.0, abs=1e-9)

    def test_symmetric_cross_recovers_axes(self):
        x = np.array([[2.0, 0.0], [-2.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        proj = projector.fit_pca2(x)
        np.testing.assert_allclose(np.abs(proj.components[0]), [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(np.abs(proj.components[1]), [0.0, 1.0], atol=1e-12)
        assert proj.explained[0] > proj.explained[1]

    def test_matches_svd_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(100, 12)) @ np.diag(np.linspace(3, 0.1, 12))
        proj = projector.fit_pca2(x)
        comps, expl = pca_top2_svd(x)
        for i in range(2):
            assert np.abs(proj.components[i] - comps[i]).max() < 1e-6
        np.testing.assert_allclose(proj.explained, expl, atol=1e-6)

    def test_components_orthonormal(self):
        rng = np.random.default_rng(6)
        proj = projector.fit_pca2(rng.normal(size=(40, 7)))
        gram = proj.components @ proj.components.T
        np.testing.assert_allclose(gram, np.eye(2), atol=1e-6)

    def test_variance_fractions_ordered_and_bounded(self):
        rng = np.random.default_rng(7)
        proj = projector.fit_pca2(rng.normal(size=(50, 5)))
        assert 0.0 <= proj.explained[1] <= proj.explained[0] <= 1.0

    def test_sign_convention(self):
        rng = np.random.default_rng(8)
        proj = projector.fit_pca2(rng.normal(size=(30, 6)))
        for comp in proj.components:
            assert comp[int(np.argmax(np.abs(comp)))] > 0

    @pytest.mark.parametrize("x,err", [
        (np.zeros((2, 5)), "at least 3"),
        (np.zeros((10, 1)), "at least 2"),
        (np.ones((10, 4)), "rank 0"),
    ])
    def test_degenerate_inputs(self, x, err):
        with pytest.raises(DataError, match=err):
            projector.fit_pca2(x)

    def test_projection_roundtrip_json(self, tmp_path):
        rng = np.random.default_rng(9)
        proj = projector.fit_pca2(rng.normal(size=(20, 4)))
        path = tmp_path / "proj.json"
        projector.save_projection(proj, path, fingerprint="fp")
        loaded = projector.load_projection(path)
        np.testing.assert_array_equal(loaded.mean, proj.mean)
        np.testing.assert_array_equal(loaded.components, proj.components)
        assert json.loads(path.read_text())["fingerprint"] == "fp"


@pytest.fixture(scope="module")
def traj_setup():
    records = [
        make_record(f"r{i}", [(d, f"dx:c{(i * 3 + d) % 6}") for d in range(30)])
        for i in range(10)
    ]
    vocab = corpus.build_vocab(records, min_count=1)
    cfg = trainer.TrainConfig(mode="dm", objective="hs", k=5, window=2,
                              epochs=2, min_count=1, seed=4)
    model = trainer.train(records, vocab, cfg)
    proj = projector.fit_pca2(model.doc_vectors)
    return records, vocab, model, proj


class TestTrajectory:
    def test_single_checkpoint_is_projected_inferred_truncation(self, traj_setup):
        records, vocab, model, proj = traj_setup
        from seqvec import inference

        rec = records[0]
        points = projector.trajectory(model, rec, [15], proj, vocab,
                                      infer_epochs=3, seed=6)
        assert len(points) == 1
        from seqvec.kernels import document_seed

        enc = corpus.encode(corpus.truncate(rec, 15), vocab)
        vec = inference.infer(model, enc, 3,
                              seed=document_seed(6, f"trajectory:{rec.record_id}", 15)).vector
        expected = proj.project(vec[None, :])[0]
        assert (points[0].x, points[0].y) == (pytest.approx(expected[0]),
                                              pytest.approx(expected[1]))
        assert points[0].day == 15

    def test_out_of_order_checkpoints_rejected(self, traj_setup):
        records, vocab, model, proj = traj_setup
        with pytest.raises(ConfigError):
            projector.trajectory(model, records[0], [20, 10], proj, vocab)

    def test_empty_checkpoints_skipped_and_counted(self, traj_setup):
        records, vocab, model, proj = traj_setup
        # day 0 truncation is empty; later checkpoints survive
        points = projector.trajectory(model, records[1], [0, 10, 20], proj, vocab,
                                      infer_epochs=2, seed=1)
        assert [p.day for p in points] == [10, 20]

    def test_all_empty_rejected(self, traj_setup):
        records, vocab, model, proj = traj_setup
        with pytest.raises(DataError):
            projector.trajectory(model, records[2], [0], proj, vocab)

    def test_marker_flags_checkpoint_nearest_event_day(self, traj_setup):
        records, vocab, model, proj = traj_setup
        points = projector.trajectory(model, records[3], [5, 10, 20, 29], proj,
                                      vocab, event_day=18, infer_epochs=2, seed=2)
        assert [p.marker for p in points] == [False, False, True, False]

    def test_marker_tie_prefers_earlier_day(self, traj_setup):
        records, vocab, model, proj = traj_setup
        points = projector.trajectory(model, records[3], [10, 20], proj,
                                      vocab, event_day=15, infer_epochs=2, seed=2)
        assert [p.marker for p in points] == [True, False]

    def test_tsv_export(self, traj_setup, tmp_path):
        records, vocab, model, proj = traj_setup
        points = projector.trajectory(model, records[4], [10, 20], proj, vocab,
                                      event_day=12, infer_epochs=2, seed=3)
        path = tmp_path / "traj.tsv"
        projector.write_trajectory_tsv(points, path, fingerprint="fp")
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# seqvec-fingerprint")
        assert lines[1] == "day\tpc1\tpc2\tmarker"
        assert len(lines) == 2 + len(points)
        day, x, y, marker = lines[2].split("\t")
        assert int(day) == 10 and marker in ("0", "1")

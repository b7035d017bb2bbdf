import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqvec import corpus, evalkit, trainer
from seqvec.errors import ConfigError, DataError, FingerprintError

from _oracles import enet_grid_objective_min, pairwise_auc
from conftest import make_record, make_vocab


def make_instance(rid, label, dx_count, history, cutoff=1000):
    events = [(d, "dx:a") for d in range(dx_count)]
    events += [(history - 1, "lab:x")]
    rec = make_record(rid, events)
    return evalkit.CohortInstance(rid, label, cutoff, rec, input_end=cutoff)


class TestTaskSpec:
    def test_presets_exist(self):
        for name in ("dx-onset", "med-start", "procedure", "null"):
            task = evalkit.task_preset(name, 30)
            assert task.horizon_days == 30
        assert evalkit.task_preset("procedure", 1).match is False

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            evalkit.task_preset("lottery", 30)

    def test_horizon_positive(self):
        with pytest.raises(ConfigError):
            evalkit.TaskSpec("t", 0)

    def test_paper_horizon_grid(self):
        assert evalkit.HORIZONS == (1, 30, 91, 182, 365)


class TestBuildCohort:
    def _records(self):
        pos = make_record("p1", [(d, "dx:b") for d in range(0, 480, 2)]
                          + [(500, "dx:t.s0.l0"), (520, "dx:t.s0.l0")])
        neg = make_record("n1", [(d, "dx:b") for d in range(0, 900, 2)])
        return [pos, neg], {"p1": True, "n1": False}, {"p1": 500}

    def test_horizon_one_input_ends_day_499(self):
        records, labels, event_day = self._records()
        task = evalkit.TaskSpec("t", 1, cutoff_code_prefix="dx:t",
                                min_dx_events=1, min_history_days=1)
        pos, neg = evalkit.build_cohort(records, labels, event_day, task)
        assert pos[0].cutoff_day == 500
        assert pos[0].input_end == 499
        assert all(e.day < 499 for e in pos[0].record.events)

    def test_label_event_cutoff_used_when_no_prefix(self):
        records, labels, event_day = self._records()
        task = evalkit.TaskSpec("t", 1, cutoff_code_prefix=None,
                                min_dx_events=1, min_history_days=1)
        pos, _ = evalkit.build_cohort(records, labels, event_day, task)
        assert pos[0].cutoff_day == 500

    def test_negative_cutoff_is_corpus_end(self):
        records, labels, event_day = self._records()
        task = evalkit.TaskSpec("t", 10, cutoff_code_prefix="dx:t",
                                min_dx_events=1, min_history_days=1)
        _, neg = evalkit.build_cohort(records, labels, event_day, task)
        assert neg[0].cutoff_day == 898 + 1  # last event day + 1

    def test_long_horizon_excludes_short_history(self):
        # onset at day 200 with a 365-day horizon leaves no pre-cutoff input
        rec = make_record("p1", [(d, "dx:b") for d in range(0, 200)] + [(200, "dx:t.s0")])
        neg = make_record("n1", [(d, "dx:b") for d in range(0, 900, 2)])
        labels = {"p1": True, "n1": False}
        task = evalkit.TaskSpec("t", 365, cutoff_code_prefix="dx:t",
                                min_dx_events=1, min_history_days=1)
        with pytest.raises(DataError, match="no usable positive"):
            evalkit.build_cohort([rec, neg], labels, {}, task)

    def test_min_history_rule(self):
        # 24-month analog: input spanning fewer days than required is excluded
        records, labels, event_day = self._records()
        task = evalkit.TaskSpec("t", 1, cutoff_code_prefix="dx:t",
                                min_dx_events=1, min_history_days=730)
        with pytest.raises(DataError):
            evalkit.build_cohort(records, labels, event_day, task)

    def test_min_dx_rule(self):
        records, labels, event_day = self._records()
        task = evalkit.TaskSpec("t", 1, cutoff_code_prefix="dx:t",
                                min_dx_events=1000, min_history_days=1)
        with pytest.raises(DataError):
            evalkit.build_cohort(records, labels, event_day, task)

    def test_selection_prefix_pins_cutoff_for_both_classes(self):
        pos = make_record("p1", [(d, "dx:b") for d in range(300)] + [(300, "dx:proc")])
        neg = make_record("n1", [(d, "dx:b") for d in range(400)] + [(350, "dx:proc")])
        out = make_record("n2", [(d, "dx:b") for d in range(400)])
        labels = {"p1": True, "n1": False, "n2": False}
        task = evalkit.TaskSpec("t", 10, selection_code_prefix="dx:proc",
                                min_dx_events=1, min_history_days=1)
        positives, negatives = evalkit.build_cohort([pos, neg, out], labels, {}, task)
        assert positives[0].cutoff_day == 300
        assert negatives[0].cutoff_day == 350
        assert len(negatives) == 1  # n2 lacks the selection code

    def test_counts_match_independent_recount(self, small_cohort):
        task = evalkit.task_preset("dx-onset", 30, min_history_days=100, min_dx_events=5)
        pos, neg = evalkit.build_cohort(
            small_cohort.records, small_cohort.labels, small_cohort.event_day, task)
        # recount with independent, direct logic
        n_pos = 0
        for rec in small_cohort.records:
            if not small_cohort.labels[rec.record_id]:
                continue
            marker_days = [e.day for e in rec.events if e.code.startswith("dx:f9.s0.l0")]
            if not marker_days:
                continue
            end = min(marker_days) - 30
            if end <= 0:
                continue
            kept = [e for e in rec.events if e.day < end]
            if sum(1 for e in kept if e.channel == "diagnosis") < 5:
                continue
            if not kept or kept[-1].day - kept[0].day + 1 < 100:
                continue
            n_pos += 1
        assert len(pos) == n_pos


class TestMatching:
    def test_identical_pools_zero_smd(self):
        pos = [make_instance(f"p{i}", 1, 10 + i, 100 + i) for i in range(5)]
        neg = [make_instance(f"n{i}", 0, 10 + i, 100 + i) for i in range(5)]
        matched, report = evalkit.match_negatives(pos, neg)
        assert report.smd_after["dx_count"] == 0.0
        assert report.smd_after["history_days"] == 0.0

    def test_picks_nearest(self):
        pos = [make_instance("p", 1, 50, 100)]
        neg = [make_instance("n_far", 0, 500, 900), make_instance("n_near", 0, 50, 100)]
        matched, _ = evalkit.match_negatives(pos, neg)
        assert matched[0].record_id == "n_near"

    def test_without_replacement(self):
        pos = [make_instance(f"p{i}", 1, 10, 100) for i in range(6)]
        neg = [make_instance(f"n{i}", 0, 10 + i, 100 + i) for i in range(9)]
        matched, _ = evalkit.match_negatives(pos, neg)
        ids = [m.record_id for m in matched]
        assert len(set(ids)) == len(ids)

    def test_pool_exhausted(self):
        pos = [make_instance(f"p{i}", 1, 10, 100) for i in range(3)]
        neg = [make_instance("n0", 0, 10, 100)]
        with pytest.raises(DataError):
            evalkit.match_negatives(pos, neg)

    def test_imbalanced_pool_smd_below_threshold(self):
        # synthetic imbalanced pools with a deep negative pool: SMD < 0.1
        rng = np.random.default_rng(0)
        pos = [make_instance(f"p{i}", 1, int(rng.integers(20, 80)),
                             int(rng.integers(200, 600))) for i in range(60)]
        neg = [make_instance(f"n{i}", 0, int(rng.integers(5, 150)),
                             int(rng.integers(50, 1000))) for i in range(600)]
        matched, report = evalkit.match_negatives(pos, neg)
        assert report.smd_after["dx_count"] < 0.1
        assert report.smd_after["history_days"] < 0.1
        assert max(report.smd_before.values()) > max(report.smd_after.values())


class TestSplit:
    def _instances(self, n_pos, n_neg):
        pos = [make_instance(f"p{i}", 1, 10, 100) for i in range(n_pos)]
        neg = [make_instance(f"n{i}", 0, 10, 100) for i in range(n_neg)]
        return pos + neg

    def test_exact_100_100(self):
        parts = evalkit.split(self._instances(100, 100), seed=4)
        by = lambda group, lab: sum(1 for i in group if i.label == lab)
        assert by(parts.train, 1) == 75 and by(parts.train, 0) == 75
        assert by(parts.test, 1) == 20 and by(parts.test, 0) == 20
        assert by(parts.validation, 1) == 5 and by(parts.validation, 0) == 5

    def test_same_seed_identical(self):
        a = evalkit.split(self._instances(40, 60), seed=9)
        b = evalkit.split(self._instances(40, 60), seed=9)
        assert a.manifest() == b.manifest()

    def test_proportions_within_one_on_skew(self):
        parts = evalkit.split(self._instances(13, 87), seed=1)
        for group, ratio in ((parts.train, 0.75), (parts.test, 0.20),
                             (parts.validation, 0.05)):
            n_pos = sum(1 for i in group if i.label == 1)
            assert abs(n_pos - 13 * ratio) <= 1
            n_neg = sum(1 for i in group if i.label == 0)
            assert abs(n_neg - 87 * ratio) <= 1

    def test_small_class_rejected(self):
        with pytest.raises(DataError):
            evalkit.split(self._instances(2, 50), seed=0)

    def test_bad_ratios(self):
        with pytest.raises(ConfigError):
            evalkit.split(self._instances(5, 5), ratios=(0.5, 0.2, 0.2), seed=0)

    def test_no_overlap_and_total_preserved(self):
        inst = self._instances(10, 20)
        parts = evalkit.split(inst, seed=3)
        ids = parts.manifest()
        all_ids = ids["train"] + ids["test"] + ids["validation"]
        assert len(all_ids) == 30 and len(set(all_ids)) == 30


class TestBowFeatures:
    def test_grouped_counts(self):
        vocab = make_vocab({"dx:f1.a": 5, "dx:f1.b": 4, "dx:f2.a": 3}, group_depth=1)
        rec = make_record("r", [(0, "dx:f1.a"), (1, "dx:f1.b"), (2, "dx:f2.a")])
        vec = evalkit.bow_features(rec, vocab)
        assert dict(zip(vocab.groups, vec)) == {"dx:f1": 2.0, "dx:f2": 1.0}

    def test_empty_record_zero_vector(self):
        vocab = make_vocab({"dx:f1.a": 5}, group_depth=1)
        vec = evalkit.bow_features(make_record("r", []), vocab)
        assert not vec.any()

    def test_oov_events_ignored(self):
        vocab = make_vocab({"dx:f1.a": 5}, group_depth=1)
        rec = make_record("r", [(0, "dx:f9.z"), (1, "dx:f1.a")])
        vec = evalkit.bow_features(rec, vocab)
        assert vec.sum() == 1.0

    def test_zero_total_columns_dropped_matches_recount(self, small_cohort, small_vocab):
        task = evalkit.task_preset("dx-onset", 30, min_history_days=100, min_dx_events=5)
        pos, neg = evalkit.build_cohort(
            small_cohort.records, small_cohort.labels, small_cohort.event_day, task)
        instances = pos + neg
        X, names = evalkit.bow_matrix(instances, small_vocab)
        assert (X.sum(axis=0) > 0).all()
        full = np.stack([evalkit.bow_features(i.record, small_vocab) for i in instances])
        assert len(names) == int((full.sum(axis=0) > 0).sum())
        assert X.sum() == full.sum()


class TestElasticNet:
    def test_separable_toy_perfect_training_auc(self):
        X = np.array([[0.0], [1.0]])
        y = np.array([0, 1])
        model = evalkit.fit_elastic_net(X, y, lambdas=(0.0,), alphas=(0.5,),
                                        folds=1, seed=0)
        scores = model.decision(X)
        assert evalkit.auc(scores, y) == 1.0

    def test_huge_penalty_gives_prevalence(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(60, 4))
        y = (rng.random(60) < 0.3).astype(int)
        model = evalkit.fit_elastic_net(X, y, lambdas=(1e6,), alphas=(0.5,),
                                        folds=2, seed=0)
        assert not model.weights.any()
        probs = model.predict_proba(X)
        assert np.allclose(probs, probs[0])
        assert probs[0] == pytest.approx(y.mean(), abs=1e-3)

    def test_objective_within_1e4_of_grid_oracle(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(20, 3))
        y = (X @ np.array([1.0, -0.5, 0.2]) + 0.3 * rng.normal(size=20) > 0).astype(int)
        lam, alpha = 0.05, 0.5
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        Xs = (X - mean) / std
        y_pm = np.where(y > 0, 1.0, -1.0)
        model = evalkit.fit_elastic_net(X, y, lambdas=(lam,), alphas=(alpha,),
                                        folds=2, seed=0, fit_intercept=False)
        mine = evalkit.elastic_net_objective(Xs, y_pm, model.weights, 0.0, lam, alpha)
        oracle_val, _ = enet_grid_objective_min(Xs, y_pm, lam, alpha, None)
        assert abs(mine - oracle_val) < 1e-4

    def test_l1_norm_monotone_in_lambda(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(80, 6))
        w_true = np.array([2.0, -1.0, 0.5, 0.0, 0.0, 0.0])
        y = (X @ w_true + 0.5 * rng.normal(size=80) > 0).astype(int)
        lambdas = [1e-4, 1e-3, 1e-2, 1e-1, 1.0]
        norms = []
        for lam in lambdas:
            model = evalkit.fit_elastic_net(X, y, lambdas=(lam,), alphas=(0.5,),
                                            folds=2, seed=0)
            norms.append(np.abs(model.weights).sum())
        for a, b in zip(norms, norms[1:]):
            assert b <= a + 1e-6

    def test_cv_grid_recorded_and_best_chosen(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(100, 5))
        y = (X[:, 0] > 0).astype(int)
        model = evalkit.fit_elastic_net(X, y, lambdas=(1e-3, 1e-1), alphas=(0.2, 0.8),
                                        folds=3, seed=1)
        assert len(model.cv_table) == 4
        best = max(model.cv_table, key=lambda r: r["mean_val_auc"])
        assert (model.lam, model.alpha) == (best["lambda"], best["alpha"])

    def test_single_class_rejected(self):
        X = np.zeros((10, 2))
        with pytest.raises(DataError):
            evalkit.fit_elastic_net(X, np.ones(10), folds=2, seed=0)

    def test_nonfinite_rejected(self):
        X = np.zeros((10, 2))
        X[0, 0] = np.nan
        y = np.arange(10) % 2
        from seqvec.errors import NumericsError

        with pytest.raises(NumericsError):
            evalkit.fit_elastic_net(X, y, folds=2, seed=0)

    def test_too_few_per_class_for_folds(self):
        X = np.random.default_rng(1).normal(size=(6, 2))
        y = np.array([1, 0, 0, 0, 0, 0])
        with pytest.raises(ConfigError):
            evalkit.fit_elastic_net(X, y, folds=3, seed=0)


class TestAuc:
    def test_perfect_separation(self):
        assert evalkit.auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_all_ties_half(self):
        assert evalkit.auc([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5

    def test_matches_pairwise_oracle_exactly(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(4, 40))
            labels = rng.integers(0, 2, n)
            if labels.sum() in (0, n):
                labels[0] = 1 - labels[0]
            scores = rng.integers(0, 6, n) / 4.0  # coarse grid forces ties
            assert evalkit.auc(scores, labels) == pairwise_auc(scores, labels)

    def test_single_class_rejected(self):
        with pytest.raises(DataError):
            evalkit.auc([0.1, 0.2], [1, 1])

    @given(st.data())
    @settings(max_examples=40, deadline=None)
    def test_invariant_under_monotone_transforms(self, data):
        n = data.draw(st.integers(min_value=4, max_value=25))
        scores = np.array(data.draw(st.lists(
            st.integers(min_value=0, max_value=12), min_size=n, max_size=n))) / 8.0
        labels = np.array(data.draw(st.lists(
            st.integers(min_value=0, max_value=1), min_size=n, max_size=n)))
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        base = evalkit.auc(scores, labels)
        # random strictly monotone map: cumulative positive steps per unique value
        uniq = np.unique(scores)
        steps = np.array(data.draw(st.lists(
            st.integers(min_value=1, max_value=9),
            min_size=len(uniq), max_size=len(uniq))), dtype=np.float64)
        mapped_values = np.cumsum(steps)
        mapping = dict(zip(uniq, mapped_values))
        transformed = np.array([mapping[s] for s in scores])
        assert evalkit.auc(transformed, labels) == base


class TestCalibration:
    def test_perfectly_calibrated_degenerate(self):
        bins, mse = evalkit.calibration([0.0, 0.0, 1.0, 1.0], [0, 0, 1, 1], 10)
        assert mse == 0.0

    def test_constant_half_on_balanced(self):
        bins, mse = evalkit.calibration([0.5] * 10, [1, 0] * 5, 10)
        assert len(bins) == 1
        assert mse == 0.0

    def test_hand_built_three_bins(self):
        # manual recount: bin [0, 1/3): preds (0.1, 0.2) obs (0, 1);
        # bin [1/3, 2/3): preds (0.4,) obs (1,); bin [2/3, 1]: preds (0.9, 0.8) obs (1, 0)
        scores = [0.1, 0.2, 0.4, 0.9, 0.8]
        labels = [0, 1, 1, 1, 0]
        bins, mse = evalkit.calibration(scores, labels, n_bins=3)
        assert len(bins) == 3
        expected = ((0.15, 0.5), (0.4, 1.0), (0.85, 0.5))
        for b, (mp, obs) in zip(bins, expected):
            assert b["mean_predicted"] == pytest.approx(mp)
            assert b["observed_rate"] == pytest.approx(obs)
        hand_mse = ((0.15 - 0.5) ** 2 + (0.4 - 1.0) ** 2 + (0.85 - 0.5) ** 2) / 3
        assert mse == pytest.approx(hand_mse)

    def test_bin_count_validated(self):
        with pytest.raises(ConfigError):
            evalkit.calibration([0.5], [1], n_bins=1)


class TestRunTask:
    @pytest.fixture(scope="class")
    def task_setup(self, small_cohort, small_vocab):
        cfg = trainer.TrainConfig(mode="dm", objective="ns", k=12, window=5,
                                  epochs=4, min_count=30, seed=7)
        model = trainer.train(small_cohort.records, small_vocab, cfg)
        task = evalkit.task_preset("dx-onset", 30, min_history_days=100,
                                   min_dx_events=5)
        options = evalkit.EvalOptions(
            vocab=small_vocab, seed=11, infer_epochs=4, folds=3,
            lambdas=(1e-3, 1e-1), alphas=(0.5,), fingerprint="fp-test")
        return small_cohort, model, task, options

    def test_report_structure_and_determinism(self, task_setup):
        cohort, model, task, options = task_setup
        r1 = evalkit.run_task(cohort.records, cohort.labels, cohort.event_day,
                              task, model, options)
        r2 = evalkit.run_task(cohort.records, cohort.labels, cohort.event_day,
                              task, model, options)
        assert r1.report_json() == r2.report_json()
        rep = r1.report
        assert rep["fingerprint"] == "fp-test"
        assert set(rep["representations"]) == {"embedded", "bow"}
        for m in rep["representations"].values():
            assert 0.0 <= m["auc_test"] <= 1.0
            assert m["calibration_mse"] >= 0.0
        manifest = rep["split_manifest"]
        total = sum(len(v) for v in manifest.values())
        assert total == rep["counts"]["positives"] + rep["counts"]["negatives"]

    def test_vocab_fingerprint_mismatch_refused(self, task_setup):
        cohort, model, task, options = task_setup
        other_vocab = corpus.build_vocab(cohort.records, min_count=31)
        bad = evalkit.EvalOptions(vocab=other_vocab, seed=1, infer_epochs=1,
                                  folds=2, lambdas=(1e-2,), alphas=(0.5,))
        with pytest.raises(FingerprintError):
            evalkit.run_task(cohort.records, cohort.labels, cohort.event_day,
                             task, model, bad)

    def test_representations_share_identical_inputs(self, task_setup):
        cohort, model, task, options = task_setup
        result = evalkit.run_task(cohort.records, cohort.labels, cohort.event_day,
                                  task, model, options)
        for inst in result.instances[:10]:
            h1 = inst.input_hash()
            bow = evalkit.bow_features(inst.record, options.vocab)
            h2 = inst.input_hash()
            enc = corpus.encode(inst.record, options.vocab)
            h3 = inst.input_hash()
            assert h1 == h2 == h3

    def test_exports_align(self, task_setup, tmp_path):
        cohort, model, task, options = task_setup
        result = evalkit.run_task(cohort.records, cohort.labels, cohort.event_day,
                                  task, model, options)
        assert result.bow_X.shape[0] == len(result.instances)
        assert result.emb_X.shape == (len(result.instances), model.k)
        evalkit.write_sparse_tsv(result.bow_X, tmp_path / "bow.tsv", "fp")
        rows = [l.split("\t") for l in (tmp_path / "bow.tsv").read_text().splitlines()
                if not l.startswith("#")]
        total = sum(float(v) for _, _, v in rows)
        assert total == pytest.approx(result.bow_X.sum())

import json
import math

import numpy as np
import pytest

import hypothesis.strategies as st
from hypothesis import assume, given

from otce.data import Dataset, Manifest, ManifestEntry, load_manifest
from otce.evaluation import (
    EvalRecord,
    ExperimentConfig,
    dumps_report,
    fusion_weights,
    pearson,
    pearson_arrays,
    run_experiment,
    select_best,
    selection_accuracy,
    split_auxiliary,
    subsample_per_class,
)
from otce.synth import SynthConfig, generate_suite

# sqrt(3)/2: closed-form r for scores (1, 2, 3) against accuracies (0.1, 0.1, 0.4)
R_THREE_POINTS = 0.8660254037844386


def records(scores, accs):
    return [EvalRecord(f"p{i}", s, a) for i, (s, a) in enumerate(zip(scores, accs))]


finite = st.floats(-1e3, 1e3, allow_nan=False)
vectors = st.integers(3, 20).flatmap(
    lambda n: st.tuples(st.lists(finite, min_size=n, max_size=n), st.lists(st.floats(0, 1), min_size=n, max_size=n))
)


@pytest.fixture(scope="module")
def small_suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("suite")
    base = SynthConfig(seed=4, n_source=60, n_target=60, d=8)
    suite = generate_suite(base, 24, out_dir=out)
    return suite, load_manifest(suite.manifest_path)


class TestPearson:
    def test_identity(self):
        assert pearson(records([0.1, 0.5, 0.3], [0.1, 0.5, 0.3])) == pytest.approx(1.0)

    def test_negation(self):
        assert pearson(records([-0.1, -0.5, -0.3], [0.1, 0.5, 0.3])) == pytest.approx(-1.0)

    def test_three_points(self):
        assert pearson(records([1, 2, 3], [0.1, 0.1, 0.4])) == pytest.approx(R_THREE_POINTS, abs=1e-12)

    def test_zero_variance(self):
        with pytest.raises(ValueError, match="undefined correlation"):
            pearson(records([1, 1, 1], [0.1, 0.2, 0.3]))
        with pytest.raises(ValueError, match="undefined correlation"):
            pearson(records([1, 2, 3], [0.5, 0.5, 0.5]))

    def test_too_few(self):
        with pytest.raises(ValueError):
            pearson(records([1], [0.5]))

    def test_record_invariants(self):
        with pytest.raises(ValueError):
            EvalRecord("x", math.nan, 0.5)
        with pytest.raises(ValueError):
            EvalRecord("x", 1.0, 1.5)

    @given(vectors, st.floats(0.01, 100), st.floats(-100, 100))
    def test_positive_affine_invariance_and_sign_flip(self, xy, scale, shift):
        x, y = np.array(xy[0]), np.array(xy[1])
        assume(x.std() > 1e-6 * (1 + np.abs(x).max()) and y.std() > 1e-6)
        r = pearson_arrays(x, y)
        assert pearson_arrays(scale * x + shift, y) == pytest.approx(r, abs=1e-9)
        assert pearson_arrays(-x, y) == pytest.approx(-r, abs=1e-12)
        assert -1.0 <= r <= 1.0


class TestSelection:
    def test_aligned(self):
        groups = [("t0", [("a", 0.1, 0.2), ("b", 0.9, 0.8)]), ("t1", [("a", 3.0, 0.9), ("b", 1.0, 0.1)])]
        assert selection_accuracy(groups) == 1.0

    def test_anti_ordered(self):
        groups = [("t0", [("a", 0.9, 0.2), ("b", 0.1, 0.8)]), ("t1", [("a", 0.0, 0.9), ("b", 1.0, 0.1)])]
        assert selection_accuracy(groups) == 0.0

    def test_three_of_four(self):
        good = [("a", 1.0, 0.9), ("b", 0.0, 0.1)]
        bad = [("a", 0.0, 0.9), ("b", 1.0, 0.1)]
        groups = [("t0", good), ("t1", good), ("t2", bad), ("t3", good)]
        assert selection_accuracy(groups) == 0.75

    def test_ties_break_to_lowest_source_id(self):
        # both scores tie -> "a"; accuracies tie -> "a"
        assert select_best([("b", 1.0, 0.5), ("a", 1.0, 0.5)]) == ("a", "a")
        # score tie picks "a", accuracy winner is "b": not a success
        assert selection_accuracy([("t", [("b", 1.0, 0.9), ("a", 1.0, 0.5)])]) == 0.0

    def test_empty_group(self):
        with pytest.raises(ValueError, match="empty group"):
            selection_accuracy([("t", [])])

    def test_needs_two_sources(self):
        with pytest.raises(ValueError, match="at least 2"):
            selection_accuracy([("t", [("a", 1.0, 0.5)])])

    @given(
        st.lists(
            st.lists(st.tuples(st.integers(-50, 50), st.floats(0, 1)), min_size=2, max_size=5),
            min_size=1,
            max_size=6,
        )
    )
    def test_increasing_transform_invariance(self, raw):
        # integer scores keep the exact transform free of new ties
        groups = [
            (f"t{g}", [(f"s{i}", s, a) for i, (s, a) in enumerate(rows)]) for g, rows in enumerate(raw)
        ]
        moved = [(t, [(sid, 3.0 * s + 0.5, a) for sid, s, a in src]) for t, src in groups]
        assert selection_accuracy(moved) == selection_accuracy(groups)


class TestFusion:
    def test_equal_scores(self):
        np.testing.assert_allclose(fusion_weights([2.0, 2.0, 2.0, 2.0], 0.3), 0.25)

    def test_log_three(self):
        np.testing.assert_allclose(fusion_weights([0.0, math.log(3)]), [0.25, 0.75], atol=1e-15)

    def test_high_temperature(self):
        w = fusion_weights([0.0, 5.0, -3.0, 12.0], 1e6)
        assert np.abs(w - 0.25).max() < 1e-3

    def test_extreme_scores_stay_finite(self):
        w = fusion_weights([1e308, -1e308, 0.0])
        np.testing.assert_array_equal(w, [1.0, 0.0, 0.0])

    @pytest.mark.parametrize("scores", [[math.nan, 1.0], [math.inf], []])
    def test_rejects(self, scores):
        with pytest.raises(ValueError):
            fusion_weights(scores)

    def test_rejects_temperature(self):
        with pytest.raises(ValueError):
            fusion_weights([1.0], 0.0)

    @given(st.lists(finite, min_size=1, max_size=12), st.floats(0.05, 50), st.floats(-100, 100))
    def test_sum_and_shift_invariance(self, scores, temperature, shift):
        w = fusion_weights(scores, temperature)
        assert abs(w.sum() - 1.0) <= 1e-12
        assert np.all((w >= 0) & (w <= 1))
        np.testing.assert_allclose(fusion_weights(np.array(scores) + shift, temperature), w, atol=1e-12)


class TestSplit:
    def test_sorted_disjoint_and_seeded(self):
        ids = [f"p{i:02d}" for i in range(30)]
        aux, test = split_auxiliary(ids, 0.1, 7)
        assert len(aux) == 3 and len(test) == 27
        assert aux == sorted(aux) and test == sorted(test)
        assert not set(aux) & set(test)
        assert split_auxiliary(list(reversed(ids)), 0.1, 7) == (aux, test)
        assert split_auxiliary(ids, 0.1, 8) != (aux, test)

    def test_fraction_rounding(self):
        aux, _ = split_auxiliary([str(i) for i in range(50)], 0.1, 0)
        assert len(aux) == 5

    def test_zero_fraction(self):
        aux, test = split_auxiliary(["a", "b", "c"], 0.0, 0)
        assert aux == [] and test == ["a", "b", "c"]

    def test_too_few(self):
        with pytest.raises(ValueError, match="too few"):
            split_auxiliary(["a", "b", "c", "d"], 0.1, 0)


class TestRunExperiment:
    def test_planted_suite(self, small_suite):
        _, manifest = small_suite
        report = run_experiment(manifest, ExperimentConfig(aux_fraction=0.25, seed=1))
        assert report["ok"]
        assert report["correlations"]["otce"] >= 0.95
        assert report["model"]["lambda1"] < 0 and report["model"]["lambda2"] < 0
        assert not set(report["auxiliary_ids"]) & set(report["test_ids"])
        assert [p["pair_id"] for p in report["test"]] == report["test_ids"]

    def test_deterministic(self, small_suite):
        _, manifest = small_suite
        cfg = ExperimentConfig(seed=3, metrics=("otce", "otnce", "leep", "nce", "hscore"))
        assert dumps_report(run_experiment(manifest, cfg)) == dumps_report(run_experiment(manifest, cfg))

    def test_threads_do_not_change_results(self, small_suite):
        _, manifest = small_suite
        a = run_experiment(manifest, ExperimentConfig(seed=2))
        b = run_experiment(manifest, ExperimentConfig(seed=2, threads=3))
        assert dumps_report(a) == dumps_report(b)

    def test_zero_auxiliary_uses_default_coefficients(self, small_suite):
        suite, manifest = small_suite
        report = run_experiment(manifest, ExperimentConfig(aux_fraction=0.0))
        assert report["auxiliary_ids"] == []
        assert report["model"]["lambda1"] == -0.5 and report["model"]["b"] == 0.0
        assert report["model"]["n_auxiliary"] == 0
        scores = np.array([p["scores"]["otce"] for p in report["test"]])
        wd = np.array([p["w_d"] for p in report["test"]])
        wt = np.array([p["w_t"] for p in report["test"]])
        plain = -((wd - wd.mean()) / wd.std() + (wt - wt.mean()) / wt.std())
        assert list(np.argsort(scores, kind="stable")) == list(np.argsort(plain, kind="stable"))

    def test_missing_predictions_reported(self, small_suite):
        suite, manifest = small_suite
        stripped = Manifest(
            tuple(
                ManifestEntry(e.pair_id, e.source_path, e.target_path, e.transfer_accuracy)
                for e in manifest
            )
        )
        report = run_experiment(stripped, ExperimentConfig(metrics=("otce", "leep")))
        assert not report["ok"]
        assert report["correlations"]["leep"] is None
        assert "prediction" in report["errors"]["leep"]
        assert report["correlations"]["otce"] is not None

    def test_no_ground_truth(self, small_suite):
        _, manifest = small_suite
        bare = Manifest(tuple(ManifestEntry(e.pair_id, e.source_path, e.target_path) for e in manifest))
        with pytest.raises(ValueError, match="no ground truth"):
            run_experiment(bare, ExperimentConfig())

    def test_report_is_json(self, small_suite):
        _, manifest = small_suite
        doc = json.loads(dumps_report(run_experiment(manifest, ExperimentConfig(seed=5))))
        assert doc["format"] == "otce-report" and doc["version"] == 1
        assert list(doc)[:4] == ["format", "version", "ok", "config"]

    def test_pooled_standardization_flag(self, small_suite):
        _, manifest = small_suite
        report = run_experiment(manifest, ExperimentConfig(standardize="pooled", seed=1))
        wd = [e["w_d"] for e in report["auxiliary"]] + [p["w_d"] for p in report["test"]]
        assert report["model"]["mean_wd"] == pytest.approx(np.mean(wd), rel=1e-12)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig(aux_fraction=1.0)
        with pytest.raises(ValueError):
            ExperimentConfig(metrics=("otce", "nope"))
        with pytest.raises(ValueError):
            ExperimentConfig(standardize="test")


class TestSubsample:
    def test_caps_each_class(self):
        ds = Dataset(np.arange(20.0)[:, None], np.array([0] * 12 + [1] * 5 + [2] * 3), 3)
        sub = subsample_per_class(ds, 4, seed=1)
        assert list(np.bincount(sub.labels)) == [4, 4, 3]
        assert np.all(np.diff(sub.features[:, 0]) > 0)
        assert subsample_per_class(ds, 4, seed=1).equals(sub)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            subsample_per_class(Dataset([[0.0]], [0], 1), 0)

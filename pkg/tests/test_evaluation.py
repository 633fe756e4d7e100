import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turbuq import dataset as ds
from turbuq import evaluation as ev
from turbuq.forest import ForestHyperparameters

GOLDEN = Path(__file__).parent / "golden"

# scenario layout and RMSE row of the reference publication
PUBLISHED_RMSE = [0.098, 0.010, 0.133, 0.029, 0.095, 0.028, 0.041, 0.051, 0.014, 0.013]
CH, HILL, HILL_AB, HILL_C, WAVY, CD = (
    "channel", "hill", "hill-2800-10595", "hill-5600", "wavy", "convdiv",
)
PUBLISHED_ROLES = {
    "I": {CH: "train", HILL: "train", WAVY: "train", CD: "test"},
    "Ia": {CH: "train", HILL: "train", WAVY: "train", CD: "both"},
    "II": {CH: "train", HILL: "train", WAVY: "test", CD: "train"},
    "IIa": {CH: "train", HILL: "train", WAVY: "both", CD: "train"},
    "III": {CH: "train", HILL: "test", WAVY: "train", CD: "train"},
    "IIIa": {CH: "train", HILL: "both", WAVY: "train", CD: "train"},
    "IIIb": {CH: "train", HILL_AB: "train", HILL_C: "test", WAVY: "train", CD: "train"},
    "IIII": {CH: "test", HILL: "train", WAVY: "train", CD: "train"},
    "IIIIa": {CH: "both", HILL: "train", WAVY: "train", CD: "train"},
    "V": {CH: "both", HILL: "both", WAVY: "both", CD: "both"},
}


def stub_report(name, roles, value):
    return ev.EvaluationReport(name, value, 0.2, None, roles, {"case": []}, [], [], {})


@pytest.fixture(scope="module")
def synthetic_sets():
    out = {}
    for kind in ds.SYNTHETIC_KINDS:
        case = ds.generate_synthetic_case(kind, n_points=120, seed=11)
        out[kind] = ds.labeled_dataset(case)
    return out


def with_role(d, role):
    return ds.LabeledDataset(d.point_id, d.features, d.targets, d.position, d.case_name, role)


def small_hp(**kw):
    base = dict(n_trees=8, max_depth=8, min_samples_split=4, max_split_features=7, seed=3)
    base.update(kw)
    return ForestHyperparameters(**base)


class TestMetrics:
    def test_rmse_examples(self):
        assert ev.rmse([0.3, 0.4], [0.3, 0.4]) == 0.0
        assert ev.rmse([0, 0], [1, 1]) == 1.0
        assert ev.rmse([0.1, 0.3, 0.5], [0.2, 0.2, 0.2]) == pytest.approx(0.19148542155126763, rel=1e-14)

    def test_rmse_errors(self):
        with pytest.raises(ValueError):
            ev.rmse([1, 2], [1])
        with pytest.raises(ValueError):
            ev.rmse([], [])

    def test_pearson_examples(self):
        a = np.array([1.0, 2.0, 3.0, 4.0])
        assert ev.pearson(a, 2 * a + 1) == pytest.approx(1.0, abs=1e-15)
        assert ev.pearson(a, -a) == pytest.approx(-1.0, abs=1e-15)
        assert ev.pearson(a, [1, 2, 3, 5]) == pytest.approx(0.9827076298239907, rel=1e-14)

    def test_pearson_constant(self):
        with pytest.raises(ev.ConstantInputError):
            ev.pearson([1, 2, 3], [4, 4, 4])
        with pytest.raises(ValueError):
            ev.pearson([1], [2])

    @settings(max_examples=100)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.floats(-100, 100))
    def test_pearson_affine_invariance(self, seed, slope, shift):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(2, 30))
        r = ev.pearson(a, b)
        assert abs(ev.pearson(slope * a + shift, b) - r) < 1e-12
        assert abs(ev.pearson(a, slope * b + shift) - r) < 1e-12
        assert -1.0 <= r <= 1.0


class TestTable:
    def test_single_report(self):
        rows = ev.scenario_table([stub_report("I", {"a": "train", "b": "test"}, 0.1234)])
        assert rows == [["case", "I"], ["a", "x"], ["b", "(o)"], ["RMSE", "0.123"]]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ev.scenario_table([])

    def test_ten_scenarios_golden(self):
        reports = [stub_report(n, r, v) for (n, r), v in zip(PUBLISHED_ROLES.items(), PUBLISHED_RMSE)]
        rows = ev.scenario_table(reports, case_order=[CH, HILL, HILL_AB, HILL_C, WAVY, CD])
        assert len(rows[0]) == 11
        assert ev.render_table_csv(rows) == (GOLDEN / "published_scenarios.csv").read_text()
        assert ev.render_table_text(rows) == (GOLDEN / "published_scenarios.txt").read_text()


class TestRun:
    def test_scenario_one_analogue(self, synthetic_sets):
        sets = [with_role(d, "test" if k == "convdiv-like" else "train") for k, d in synthetic_sets.items()]
        rep = ev.run_datasets("I", sets, small_hp(), importance_repeats=2)
        assert 0 <= rep.rmse < rep.baseline_rmse
        assert rep.pearson_r is not None and -1 <= rep.pearson_r <= 1
        assert len(rep.points["p_pred"]) == 120
        assert len(rep.importance) == 56 and len(rep.kde_features) == 5
        assert rep.kde_features == [n for n, _ in rep.importance[:5]]
        assert all(0 <= d <= 1 for d in rep.points["d_kde"])
        assert rep.roles["convdiv-like"] == "test"

    def test_memorization(self, synthetic_sets):
        d = with_role(synthetic_sets["hill-like"], "both")
        hp = ForestHyperparameters(n_trees=2, max_depth=60, min_samples_split=2,
                                   max_split_features=56, bootstrap=False)
        rep = ev.run_datasets("mem", [d], hp, kde_features=["q1", "q2"], importance_repeats=1)
        assert rep.rmse < 1e-12

    def test_report_roundtrip(self, synthetic_sets):
        sets = [with_role(synthetic_sets["channel-like"], "train"), with_role(synthetic_sets["wavy-like"], "test")]
        rep = ev.run_datasets("rt", sets, small_hp(n_trees=3), kde_features=["q8", "q3"], importance_repeats=1)
        back = ev.EvaluationReport.from_json(rep.to_json())
        assert back.to_json() == rep.to_json()
        assert back.rmse == rep.rmse and back.points == rep.points
        assert "runtime" not in json.loads(rep.to_json(include_runtime=False))

    def test_run_scenario_files(self, tmp_path):
        cases = []
        for kind, role in (("channel-like", "train"), ("hill-like", "train"), ("wavy-like", "test")):
            paths = ds.write_case(ds.generate_synthetic_case(kind, 60, seed=2), tmp_path / "data")
            cases.append({"name": kind, "rans": f"data/{Path(paths['rans']).name}",
                          "hifi": f"data/{Path(paths['hifi']).name}", "role": role})
        cfg_d = {"scenario": "S", "seed": 5, "hyperparameters": {"n_trees": 4, "max_depth": 6},
                 "kde_features": ["q8", "q3", "q7", "q2", "q1"], "importance_repeats": 2, "cases": cases}
        (tmp_path / "s.json").write_text(json.dumps(cfg_d))
        cfg = ev.ScenarioConfig.from_json(tmp_path / "s.json")
        assert cfg.hyperparameters.seed == 5
        a = ev.run_scenario(cfg)
        b = ev.run_scenario(cfg, threads=4)
        assert a.to_json(include_runtime=False) == b.to_json(include_runtime=False)
        paths = ev.write_report(a, tmp_path / "out")
        lines = Path(paths["points:wavy-like"]).read_text().splitlines()
        assert lines[0] == "point_id,x,y,p_true,p_pred,abs_error,d_kde"
        assert len(lines) == 61

    def test_scenario_errors_carry_context(self, tmp_path):
        cfg = ev.ScenarioConfig.from_dict({"scenario": "Z", "cases": [
            {"name": "a", "rans": "missing.csv", "hifi": "h.csv", "role": "train"},
            {"name": "b", "rans": "missing.csv", "hifi": "h.csv", "role": "test"},
        ]}, base_dir=tmp_path)
        with pytest.raises(ev.DataError, match="scenario Z, case a"):
            ev.run_scenario(cfg)

    @pytest.mark.parametrize("cases", [
        [{"name": "a", "rans": "r", "hifi": "h", "role": "test"}],
        [{"name": "a", "rans": "r", "hifi": "h", "role": "train"}],
        [{"name": "a", "rans": "r", "hifi": "h", "role": "maybe"}],
        [{"name": "a", "rans": "r", "hifi": "h", "role": "train"}, {"name": "a", "rans": "r", "hifi": "h", "role": "test"}],
    ])
    def test_config_validation(self, cases):
        with pytest.raises(ValueError):
            ev.ScenarioConfig.from_dict({"scenario": "bad", "cases": cases})


class TestGridSearch:
    def test_single_point(self, synthetic_sets):
        cases = [synthetic_sets["channel-like"], synthetic_sets["hill-like"]]
        best, results = ev.loco_grid_search(cases, {"n_trees": [3], "max_depth": [4]})
        assert (best.n_trees, best.max_depth) == (3, 4)
        assert len(results) == 1 and len(results[0].fold_rmse) == 2

    def test_depth_one_underfits(self, synthetic_sets):
        cases = list(synthetic_sets.values())[:3]
        grid = {"n_trees": [5], "max_depth": [1, 10], "min_samples_split": [2]}
        best, results = ev.loco_grid_search(cases, grid, seed=1)
        assert best.max_depth == 10
        by_depth = {r.hyperparameters.max_depth: r.mean_rmse for r in results}
        assert by_depth[10] < by_depth[1]
        again, _ = ev.loco_grid_search(cases, grid, seed=1)
        assert again == best

    def test_ties_prefer_small_models(self, synthetic_sets):
        # constant targets make every setting perfect
        cases = [ds.LabeledDataset(d.point_id, d.features, np.full(len(d), 0.3), d.position)
                 for d in list(synthetic_sets.values())[:2]]
        best, _ = ev.loco_grid_search(cases, {"n_trees": [4, 2], "max_depth": [5, 3]})
        assert (best.n_trees, best.max_depth) == (2, 3)

    def test_errors(self, synthetic_sets):
        with pytest.raises(ValueError):
            ev.loco_grid_search([synthetic_sets["hill-like"]], {"n_trees": [2]})
        with pytest.raises(ValueError):
            ev.loco_grid_search(list(synthetic_sets.values()), {"n_trees": []})

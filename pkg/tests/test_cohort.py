import numpy as np
import pytest

from smc.cohort import (
    VANCOMYCIN_DEMOGRAPHICS,
    DemographicsTable,
    PooledCohort,
    build_cohort_densities,
    impute_missing,
    most_likely_model,
    read_cohort_csv,
    rejection_subsample,
    write_cohort_csv,
)
from smc.core import Dataset
from smc.density import BinaryDim, ContinuousDim

from conftest import two_population_cohort
from oracles import scratch_subsample


def make(seed=0):
    raw, x, origin, oracle = two_population_cohort(seed)
    table = DemographicsTable.from_json(raw)
    return table, PooledCohort(Dataset(x), origin), oracle


class TestTable:
    def test_json_round_trip(self):
        t = VANCOMYCIN_DEMOGRAPHICS
        assert DemographicsTable.from_json(t.to_json()) == t

    def test_list_and_bare_number_cells(self):
        t = DemographicsTable.from_json({
            "covariates": [{"name": "a", "type": "continuous"}, {"name": "s", "type": "binary"}],
            "models": {"m": {"a": [1.0, 2.0], "s": 0.3}},
        })
        assert t.rows["m"]["a"] == ContinuousDim(1.0, 2.0)
        assert t.rows["m"]["s"] == BinaryDim(0.3)

    def test_unknown_covariate(self):
        with pytest.raises(ValueError, match="unknown covariate"):
            DemographicsTable.from_json({"covariates": [{"name": "a", "type": "binary"}],
                                         "models": {"m": {"b": 0.5}}})

    def test_malformed(self):
        with pytest.raises(ValueError):
            DemographicsTable.from_json({"models": {}})

    def test_impute_averages(self):
        t = impute_missing(VANCOMYCIN_DEMOGRAPHICS)
        bmi = [c for m, c in ((m, VANCOMYCIN_DEMOGRAPHICS.rows[m]["bmi"]) for m in t.model_ids)
               if c is not None]
        filled = t.rows["thomson2009"]["bmi"]
        assert filled.mean == pytest.approx(np.mean([c.mean for c in bmi]))
        assert filled.std == pytest.approx(np.mean([c.std for c in bmi]))
        assert not t.has_missing()

    def test_densities_need_complete_table(self):
        with pytest.raises(ValueError, match="impute"):
            build_cohort_densities(VANCOMYCIN_DEMOGRAPHICS)
        assert len(build_cohort_densities(impute_missing(VANCOMYCIN_DEMOGRAPHICS))) == 6


class TestSubsample:
    def test_matches_scratch_oracle(self):
        table, cohort, oracle = make()
        kept = rejection_subsample(cohort, build_cohort_densities(table))
        mask = scratch_subsample(cohort.instances.features, cohort.origin, oracle)
        np.testing.assert_array_equal(kept.instances.features, cohort.instances.features[mask])
        np.testing.assert_array_equal(kept.origin, cohort.origin[mask])

    def test_idempotent(self):
        table, cohort, _ = make(1)
        dens = build_cohort_densities(table)
        once = rejection_subsample(cohort, dens)
        twice = rejection_subsample(once, dens)
        np.testing.assert_array_equal(once.instances.features, twice.instances.features)

    def test_single_model_keeps_everything(self):
        t = DemographicsTable.from_json({"covariates": [{"name": "a", "type": "continuous"}],
                                         "models": {"m": {"a": [0.0, 1.0]}}})
        cohort = PooledCohort(Dataset(np.arange(5.0)), np.zeros(5, dtype=int))
        kept = rejection_subsample(cohort, build_cohort_densities(t))
        assert len(kept) == 5

    def test_empty_cohort(self):
        table, _, _ = make()
        empty = PooledCohort(Dataset(np.zeros((0, 2))), np.zeros(0, dtype=int))
        assert len(rejection_subsample(empty, build_cohort_densities(table))) == 0

    def test_origin_out_of_range(self):
        table, cohort, _ = make()
        bad = PooledCohort(cohort.instances, np.full(len(cohort), 5))
        with pytest.raises(ValueError, match="range"):
            rejection_subsample(bad, build_cohort_densities(table))

    def test_ties_go_to_lowest_index(self):
        t = DemographicsTable.from_json({"covariates": [{"name": "a", "type": "continuous"}],
                                         "models": {"m": {"a": [0.0, 1.0]}, "n": {"a": [0.0, 1.0]}}})
        assert most_likely_model(build_cohort_densities(t), np.array([[0.3]])).tolist() == [0]


class TestCsv:
    def test_round_trip_and_ids(self, tmp_path):
        table, cohort, _ = make()
        write_cohort_csv(tmp_path / "c.csv", cohort, table.names)
        back, names = read_cohort_csv(tmp_path / "c.csv")
        assert names == ["age", "male"]
        np.testing.assert_array_equal(back.instances.features, cohort.instances.features)
        (tmp_path / "i.csv").write_text("age,male,__origin__\n31.0,1,young\n59,0,old\n")
        by_id, _ = read_cohort_csv(tmp_path / "i.csv", table.model_ids)
        assert by_id.origin.tolist() == [0, 1]

    def test_line_numbered_errors(self, tmp_path):
        (tmp_path / "b.csv").write_text("age,male,__origin__\n31.0,1,0\n31.0,x,0\n")
        with pytest.raises(ValueError, match=":3:"):
            read_cohort_csv(tmp_path / "b.csv")

    def test_missing_origin_column(self, tmp_path):
        (tmp_path / "b.csv").write_text("age,male\n31.0,1\n")
        with pytest.raises(ValueError, match="__origin__"):
            read_cohort_csv(tmp_path / "b.csv")

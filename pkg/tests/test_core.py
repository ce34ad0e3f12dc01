import filecmp

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from postsum.core import (DataError, Dataset, PosteriorDraws, PredictiveLocations,
                          SummaryLossConfig, load_crime, load_dataset, load_dataset_artifact,
                          load_draws, load_locations, posterior_mean_fit, save_dataset,
                          save_draws, save_locations)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestDataset:
    def test_shapes_and_names(self):
        d = Dataset(np.zeros((3, 2)), [1.0, 2.0, 3.0], ["a", "b"])
        assert (d.n, d.p) == (3, 2)
        assert d.column_index("b") == 1
        with pytest.raises(DataError):
            d.column_index("c")

    @pytest.mark.parametrize("X,y,names", [
        (np.zeros((3, 2)), [1.0, 2.0], ["a", "b"]),
        (np.zeros((3, 2)), [1.0, 2.0, 3.0], ["a"]),
        (np.zeros((3, 2)), [1.0, 2.0, 3.0], ["a", "a"]),
        (np.array([[0.0, np.nan]] * 3), [1.0, 2.0, 3.0], ["a", "b"]),
        (np.zeros((1, 2)), [1.0], ["a", "b"]),
    ])
    def test_rejects_malformed(self, X, y, names):
        with pytest.raises(DataError):
            Dataset(X, y, names)

    def test_arrays_are_read_only(self):
        d = Dataset(np.zeros((3, 1)), [1.0, 2.0, 3.0], ["a"])
        with pytest.raises(ValueError):
            d.X[0, 0] = 1.0

    def test_original_scale_roundtrip(self, tmp_path):
        p = _write(tmp_path, "a,b,y\n1,10,1\n2,30,2\n4,20,5\n")
        d = load_dataset(p, "y", standardize=True)
        np.testing.assert_allclose(d.original_X(), [[1, 10], [2, 30], [4, 20]])


class TestLoadDataset:
    def test_log_then_standardize(self, tmp_path):
        p = _write(tmp_path, "a,b,y\n1,10,1\n2,30,2\n4,20,5\n")
        d = load_dataset(p, "y", log_columns=["a"], standardize=True)
        la = np.log([1.0, 2.0, 4.0])
        np.testing.assert_allclose(d.X[:, 0], (la - la.mean()) / la.std(ddof=1))
        np.testing.assert_allclose(d.X.std(axis=0, ddof=1), 1.0)
        assert d.response_standardization is not None
        np.testing.assert_allclose(d.y.mean(), 0.0, atol=1e-15)

    def test_response_may_be_logged(self, tmp_path):
        p = _write(tmp_path, "a,y\n1,1\n2,2\n3,4\n")
        d = load_dataset(p, "y", log_columns=["y"])
        assert d.response_transform == "log"
        np.testing.assert_allclose(d.y, np.log([1, 2, 4]))

    @pytest.mark.parametrize("text,kwargs,match", [
        ("a,y\n1,2\n3,4\n", {"response_column": "z"}, "response column"),
        ("a,y\n1,2\nx,4\n", {"response_column": "y"}, "non-numeric"),
        ("a,y\n1,2\n1,4\n", {"response_column": "y", "standardize": True}, "zero-variance"),
        ("a,y\n0,2\n1,4\n", {"response_column": "y", "log_columns": ["a"]}, "non-positive"),
        ("a,y\n1,2\n1\n", {"response_column": "y"}, "expected 2 fields"),
    ])
    def test_errors(self, tmp_path, text, kwargs, match):
        p = _write(tmp_path, text)
        with pytest.raises(DataError, match=match):
            load_dataset(p, **kwargs)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path / "nope.csv", "y")


class TestCrime:
    def test_shape_and_columns(self):
        d = load_crime()
        assert (d.n, d.p) == (47, 15)
        assert d.column_names[:4] == ("M", "So", "Ed", "Po1")
        assert "So" not in d.log_columns
        assert len(np.unique(d.X[:, 1])) == 2

    def test_standardized(self):
        d = load_crime()
        np.testing.assert_allclose(d.X.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(d.X.std(axis=0, ddof=1), 1.0)

    def test_unstandardized_is_logged(self):
        d = load_crime(standardize=False)
        # log of the 1960 per-capita police spending is a few units
        assert 3.0 < d.X[:, d.column_index("Po1")].mean() < 5.0


class TestPosteriorDraws:
    def test_single_draw_warns(self):
        with pytest.warns(UserWarning, match="M < 2"):
            d = PosteriorDraws(np.zeros((1, 3)), [1.0])
        with pytest.warns(UserWarning):
            np.testing.assert_array_equal(posterior_mean_fit(d), 0.0)

    @pytest.mark.parametrize("f,s", [
        (np.zeros((2, 3)), [1.0]),
        (np.zeros((2, 3)), [1.0, 0.0]),
        (np.array([[0.0, np.inf, 0.0]] * 2), [1.0, 1.0]),
    ])
    def test_rejects(self, f, s):
        with pytest.raises(DataError):
            PosteriorDraws(f, s)

    def test_location_check(self):
        d = PosteriorDraws(np.zeros((2, 3)), [1.0, 1.0])
        with pytest.raises(DataError):
            d.check_locations(PredictiveLocations(np.zeros((4, 1))))

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 6)),
                      elements=st.floats(-1e6, 1e6)),
           st.randoms(use_true_random=False))
    def test_mean_fit_invariant_to_draw_order(self, F, r):
        perm = list(range(F.shape[0]))
        r.shuffle(perm)
        a = posterior_mean_fit(PosteriorDraws(F, np.ones(F.shape[0])))
        b = posterior_mean_fit(PosteriorDraws(F[perm], np.ones(F.shape[0])))
        np.testing.assert_array_equal(a, b)


class TestLocations:
    def test_weights_validated(self):
        with pytest.raises(DataError):
            PredictiveLocations(np.zeros((3, 1)), weights=[1.0, -1.0, 1.0])
        with pytest.raises(DataError):
            PredictiveLocations(np.zeros((3, 1)), weights=[0.0, 0.0, 0.0])
        with pytest.raises(DataError):
            PredictiveLocations(np.zeros((3, 1)), origin="elsewhere")

    def test_default_names(self):
        assert PredictiveLocations(np.zeros((2, 2))).names() == ("x1", "x2")


class TestLossConfig:
    def test_only_squared_error(self):
        SummaryLossConfig(penalty="adaptive-l1")
        with pytest.raises(DataError):
            SummaryLossConfig(discrepancy="absolute")


class TestArtifacts:
    def test_draws_roundtrip_exact(self, tmp_path, rng):
        F = rng.standard_normal((5, 7))
        d = PosteriorDraws(F, rng.uniform(0.1, 1, 5), model_tag="gp", seed=4,
                           meta={"hyperparameters": {"tau2": 1.0}})
        save_draws(d, tmp_path / "a", column_names=["u", "v"])
        back = load_draws(tmp_path / "a")
        np.testing.assert_array_equal(back.f_draws, F)
        np.testing.assert_array_equal(back.sigma2_draws, d.sigma2_draws)
        assert back.model_tag == "gp" and back.seed == 4
        assert back.meta["hyperparameters"] == {"tau2": 1.0}

    def test_draws_bytes_deterministic(self, tmp_path, rng):
        d = PosteriorDraws(rng.standard_normal((3, 4)), [1.0, 2.0, 3.0])
        save_draws(d, tmp_path / "a")
        save_draws(d, tmp_path / "b")
        for name in ("f_draws.csv", "sigma2_draws.csv", "meta.json"):
            assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)

    def test_schema_version_checked(self, tmp_path):
        d = PosteriorDraws(np.zeros((2, 2)), [1.0, 1.0])
        save_draws(d, tmp_path)
        meta = (tmp_path / "meta.json").read_text().replace('"schema_version": 1', '"schema_version": 99')
        (tmp_path / "meta.json").write_text(meta)
        with pytest.raises(DataError, match="schema"):
            load_draws(tmp_path)

    def test_shape_mismatch_detected(self, tmp_path):
        save_draws(PosteriorDraws(np.zeros((2, 2)), [1.0, 1.0]), tmp_path)
        np.savetxt(tmp_path / "f_draws.csv", np.zeros((3, 2)), delimiter=",")
        with pytest.raises(DataError):
            load_draws(tmp_path)

    def test_dataset_roundtrip(self, tmp_path):
        d = load_crime()
        save_dataset(d, tmp_path)
        back = load_dataset_artifact(tmp_path)
        np.testing.assert_array_equal(back.X, d.X)
        np.testing.assert_array_equal(back.y, d.y)
        assert back.standardization == d.standardization
        assert back.column_names == d.column_names

    def test_locations_roundtrip(self, tmp_path, rng):
        loc = PredictiveLocations(rng.standard_normal((4, 2)), weights=[1, 2, 3, 4],
                                  origin="synthetic", column_names=["a", "b"])
        save_locations(loc, tmp_path)
        back = load_locations(tmp_path)
        np.testing.assert_array_equal(back.X_tilde, loc.X_tilde)
        np.testing.assert_array_equal(back.weights, loc.weights)
        assert back.origin == "synthetic"

import numpy as np
import pytest

from treeval import Dataset, load_csv, save_csv
from treeval.dataset import (
    MissingResponseError,
    NonNumericCellError,
    TooFewRowsError,
)


def write_csv(path, text):
    path.write_text(text)
    return path


class TestLoadCsv:
    def test_small_csv(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "a,b,y\n1,2,3\n4,5,6\n7,8,9\n10,11,12\n")
        d = load_csv(p, "y")
        assert (d.n, d.p) == (4, 2)
        assert d.feature_names == ("a", "b")
        np.testing.assert_array_equal(d.y, [3, 6, 9, 12])

    def test_blank_cell_names_location(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "a,y\n1,2\n,4\n")
        with pytest.raises(NonNumericCellError) as exc:
            load_csv(p, "y")
        assert exc.value.row == 2
        assert exc.value.column == "a"

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_csv(tmp_path / "nope.csv", "y")

    def test_missing_response(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "a,b\n1,2\n3,4\n")
        with pytest.raises(MissingResponseError):
            load_csv(p, "z")

    def test_too_few_rows(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "a,y\n1,2\n")
        with pytest.raises(TooFewRowsError):
            load_csv(p, "y")

    def test_round_trip_bit_identical(self, tmp_path, rng):
        X = rng.standard_normal((1000, 4))
        y = rng.standard_normal(1000)
        d = Dataset.from_arrays(X, y)
        out = tmp_path / "rt.csv"
        save_csv(d, out, response_col="resp")
        d2 = load_csv(out, "resp")
        np.testing.assert_array_equal(d.X, d2.X)
        np.testing.assert_array_equal(d.y, d2.y)
        assert (out.parent / (out.name + ".meta.json")).exists()


class TestOrderStatistic:
    @pytest.fixture
    def d(self):
        X = np.array([[3.0, 1.0], [1.0, 2.0], [2.0, 0.5]])
        return Dataset.from_arrays(X, np.zeros(3))

    def test_sorted_minimum(self, d):
        assert d.order_statistic(0, 1) == 1.0

    def test_second(self, d):
        assert d.order_statistic(0, 2) == 2.0

    def test_out_of_range(self, d):
        with pytest.raises(IndexError):
            d.order_statistic(0, 3)
        with pytest.raises(IndexError):
            d.order_statistic(2, 1)
        with pytest.raises(IndexError):
            d.order_statistic(0, 0)

    def test_matches_full_sort(self, rng):
        X = rng.standard_normal((40, 3))
        d = Dataset.from_arrays(X, np.zeros(40))
        for j in range(3):
            ref = np.sort(X[:, j])
            for s in range(1, 40):
                assert d.order_statistic(j, s) == ref[s - 1]

    def test_nondecreasing_in_rank(self, rng):
        X = rng.integers(0, 5, size=(30, 2)).astype(float)  # ties on purpose
        d = Dataset.from_arrays(X, np.zeros(30))
        for j in range(2):
            vals = [d.order_statistic(j, s) for s in range(1, 30)]
            assert all(a <= b for a, b in zip(vals, vals[1:]))

    def test_halfspace_membership_matches_rank(self, rng):
        X = rng.standard_normal((25, 2))
        d = Dataset.from_arrays(X, np.zeros(25))
        j = 1
        ranks = np.empty(25, dtype=int)
        ranks[d.sort_idx[j]] = np.arange(1, 26)
        for s in (1, 7, 24):
            thr = d.order_statistic(j, s)
            inside = X[:, j] <= thr
            np.testing.assert_array_equal(inside, ranks <= s)


class TestValidation:
    def test_rejects_nan(self):
        X = np.array([[1.0], [np.nan]])
        with pytest.raises(ValueError):
            Dataset.from_arrays(X, np.zeros(2))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError):
            Dataset.from_arrays(np.zeros((3, 2)), np.zeros(4))

    def test_checksum_stable(self, rng):
        X = rng.standard_normal((10, 2))
        y = rng.standard_normal(10)
        assert Dataset.from_arrays(X, y).checksum() == Dataset.from_arrays(X, y).checksum()

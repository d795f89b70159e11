import numpy as np
import pytest
from scipy import stats

from kfptools.compiler import ScaledModel
from kfptools.data import (
    Dataset,
    DatasetFormatError,
    NoiseSpec,
    dataset_from_csv,
    dataset_to_csv,
    evenly_spaced_times,
    gen_dataset,
    read_dataset,
    write_dataset,
)
from kfptools.simulate import solve_exact


def irr():
    return ScaledModel(("X1", "X2"), [[0, 0], [0.6, 0]], [0.25, 0.4], {0}, [0.35, 0.3])


class TestNoiseSpec:
    @pytest.mark.parametrize("kwargs", [{"relative_sd": -0.1}, {"relative_sd": float("nan")},
                                        {"replicates": 0}, {"replicates": 2.5}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            NoiseSpec(**kwargs)


class TestGenerate:
    def test_zero_noise_is_truth(self):
        d = gen_dataset(irr(), 5, 30.0, NoiseSpec(0.0, 3, 1))
        truth = solve_exact(irr(), d.times).values
        assert np.array_equal(d.measurements, np.repeat(truth[:, :, None], 3, axis=2))

    def test_shape(self):
        d = gen_dataset(irr(), 3, 30.0, NoiseSpec(0.05, 3, 1))
        assert d.measurements.shape == (3, 2, 3)

    def test_times_exclude_zero_and_end_at_t_max(self):
        np.testing.assert_allclose(evenly_spaced_times(4, 20.0), [5, 10, 15, 20])
        d = gen_dataset(irr(), 10, None, NoiseSpec())
        assert d.times[0] > 0 and d.times[-1] == pytest.approx(10 / 0.3)
        with pytest.raises(ValueError):
            evenly_spaced_times(0, 1.0)
        with pytest.raises(ValueError):
            evenly_spaced_times(3, 0.0)

    def test_invalid_noise_argument(self):
        with pytest.raises(TypeError):
            gen_dataset(irr(), 3, 10.0, noise=0.05)

    def test_mean_within_three_standard_errors(self):
        d = gen_dataset(irr(), 10, 30.0, NoiseSpec(0.025, 1000, 42))
        truth = solve_exact(irr(), d.times).values
        se = 0.025 * truth / np.sqrt(1000)
        z = (d.measurements.mean(axis=2) - truth) / se
        # three standard errors is a 0.27% false-alarm rate per cell; hold the
        # same rate across all 20 cells
        limit = stats.norm.isf(0.0027 / 2 / z.size)
        assert np.abs(z).max() <= limit
        assert abs(z.mean()) <= 3 / np.sqrt(z.size)

    def test_noise_calibration(self):
        n = 10_000
        d = gen_dataset(irr(), 10, 30.0, NoiseSpec(0.05, n, 7))
        truth = solve_exact(irr(), d.times).values
        sd = d.measurements.std(axis=2, ddof=1)
        mask = truth >= 0.1
        rel = np.abs(sd[mask] / (0.05 * truth[mask]) - 1)
        assert rel.max() <= 0.05
        # two-sided 99.9% chi-squared band for the sample variance at n = 1e4
        lo, hi = stats.chi2.ppf([0.0005, 0.9995], n - 1) / (n - 1)
        ratio = (sd[mask] / (0.05 * truth[mask])) ** 2
        assert np.all((ratio > lo * 0.98) & (ratio < hi * 1.02))

    def test_deterministic(self):
        a = gen_dataset(irr(), 5, 30.0, NoiseSpec(0.1, 3, 99))
        b = gen_dataset(irr(), 5, 30.0, NoiseSpec(0.1, 3, 99))
        assert a.measurements.tobytes() == b.measurements.tobytes()
        c = gen_dataset(irr(), 5, 30.0, NoiseSpec(0.1, 3, 100))
        assert not np.array_equal(a.measurements, c.measurements)

    def test_values_not_clipped(self):
        m = ScaledModel(("A",), [[0]], [0.05], {0}, [1.0])
        d = gen_dataset(m, 10, 50.0, NoiseSpec(0.5, 50, 3))
        assert d.measurements.min() < 0


class TestCsv:
    def test_round_trip(self, tmp_path):
        d = gen_dataset(irr(), 5, 30.0, NoiseSpec(0.1, 3, 5))
        path = tmp_path / "d.csv"
        write_dataset(d, path)
        back = read_dataset(path)
        assert back == d
        assert back.measurements.tobytes() == d.measurements.tobytes()

    def test_header(self):
        d = gen_dataset(irr(), 1, 3.0, NoiseSpec(0.1, 2, 5))
        lines = dataset_to_csv(d).splitlines()
        assert lines[0] == "time,node,replicate,value"
        assert [ln.split(",")[1:3] for ln in lines[1:]] == [
            ["X1", "1"], ["X1", "2"], ["X2", "1"], ["X2", "2"]]

    def test_missing_cell_names_row(self):
        text = "time,node,replicate,value\n1,A,1,0.5\n1,A,2,\n"
        with pytest.raises(DatasetFormatError, match="row 3"):
            dataset_from_csv(text)

    def test_inconsistent_replicates(self):
        text = ("time,node,replicate,value\n1,A,1,0.5\n1,A,2,0.4\n"
                "1,B,1,0.9\n")
        with pytest.raises(DatasetFormatError, match="replicates"):
            dataset_from_csv(text)

    @pytest.mark.parametrize("text", ["", "t,n,r,v\n1,A,1,0.5\n",
                                      "time,node,replicate,value\n1,A,x,0.5\n",
                                      "time,node,replicate,value\n1,A,1,abc\n",
                                      "time,node,replicate,value\n1,A,1\n",
                                      "time,node,replicate,value\n"])
    def test_malformed(self, text):
        with pytest.raises(DatasetFormatError):
            dataset_from_csv(text)

    def test_negative_value_accepted_and_flagged(self):
        text = "time,node,replicate,value\n1,A,1,-0.01\n2,A,1,0.3\n"
        d = dataset_from_csv(text)
        assert d.measurements[0, 0, 0] == -0.01
        assert any("negative" in f for f in d.flags)

    def test_node_order_from_pathway(self):
        text = "time,node,replicate,value\n1,B,1,0.5\n1,A,1,0.4\n"
        d = dataset_from_csv(text, nodes=("A", "B"))
        assert d.nodes == ("A", "B")
        np.testing.assert_array_equal(d.measurements[0, :, 0], [0.4, 0.5])
        with pytest.raises(DatasetFormatError, match="unknown"):
            dataset_from_csv(text, nodes=("A",))


def test_restrict_keeps_selected_times():
    d = gen_dataset(irr(), 4, 20.0, NoiseSpec(0.1, 2, 1))
    r = d.restrict(d.times > 10)
    np.testing.assert_array_equal(r.times, [15, 20])
    assert r.measurements.shape == (2, 2, 2)
    assert isinstance(r, Dataset)

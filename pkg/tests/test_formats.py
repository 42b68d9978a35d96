import numpy as np
import pytest

from palslab import FormatError, Histogram, read_histogram, write_histogram
from palslab.formats import read_report, write_report


def make_histogram():
    return Histogram(
        channel_width=0.5,
        counts=np.array([3, 0, 12, 7]),
        live_time=120.0,
        metadata={"seed": "42", "scenario.mode": "standard_qed"},
    )


class TestHistogramFormat:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "h.hist"
        original = make_histogram()
        write_histogram(path, original)
        loaded = read_histogram(path)
        np.testing.assert_array_equal(loaded.counts, original.counts)
        assert loaded.channel_width == original.channel_width
        assert loaded.live_time == original.live_time
        assert loaded.metadata["seed"] == "42"
        assert loaded.metadata["scenario.mode"] == "standard_qed"

    def test_write_is_deterministic(self, tmp_path):
        a, b = tmp_path / "a.hist", tmp_path / "b.hist"
        write_histogram(a, make_histogram())
        write_histogram(b, make_histogram())
        assert a.read_bytes() == b.read_bytes()

    @pytest.mark.parametrize(
        "missing", ["channel_width_ns", "n_channels", "live_time_s", "seed"]
    )
    def test_missing_required_key_rejected(self, tmp_path, missing):
        path = tmp_path / "h.hist"
        write_histogram(path, make_histogram())
        lines = [
            line
            for line in path.read_text().splitlines()
            if not line.startswith(f"# {missing}=")
        ]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError, match=missing):
            read_histogram(path)

    def test_truncated_body_rejected(self, tmp_path):
        path = tmp_path / "h.hist"
        write_histogram(path, make_histogram())
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-2]) + "\n")
        with pytest.raises(FormatError):
            read_histogram(path)

    def test_non_sequential_indices_rejected(self, tmp_path):
        path = tmp_path / "h.hist"
        write_histogram(path, make_histogram())
        text = path.read_text().replace("\n2 12\n", "\n5 12\n")
        path.write_text(text)
        with pytest.raises(FormatError):
            read_histogram(path)

    def test_negative_count_rejected(self, tmp_path):
        path = tmp_path / "h.hist"
        write_histogram(path, make_histogram())
        path.write_text(path.read_text().replace("\n2 12\n", "\n2 -12\n"))
        with pytest.raises(FormatError):
            read_histogram(path)


class TestReportFormat:
    def test_round_trip_with_table(self, tmp_path):
        path = tmp_path / "r.txt"
        entries = {"converged": True, "deviance": 123.456, "label": "fit"}
        table = (["n", "power"], [(1000, 0.25), (10000, 0.75)])
        write_report(path, entries, tables={"power_curve": table}, comments=["x=y"])
        loaded, tables = read_report(path)
        assert loaded["converged"] == "true"
        assert float(loaded["deviance"]) == 123.456
        assert loaded["label"] == "fit"
        columns, rows = tables["power_curve"]
        assert columns == ["n", "power"]
        assert rows == [[1000.0, 0.25], [10000.0, 0.75]]

    def test_float_values_round_trip_exactly(self, tmp_path):
        path = tmp_path / "r.txt"
        value = 7.039979e00 / 3.0
        write_report(path, {"x": value})
        loaded, _ = read_report(path)
        assert float(loaded["x"]) == value

    def test_stray_data_row_rejected(self, tmp_path):
        path = tmp_path / "r.txt"
        path.write_text("# pals-report v1\n1 2 3\n")
        with pytest.raises(FormatError):
            read_report(path)

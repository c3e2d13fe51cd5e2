# tests/test_imu_csv.py
import numpy as np
import pytest

from infra.errors import ImuCsvError
from utils.imu_csv import COLUMNS, read_imu_csv, read_imu_frame, summarize_stream, write_imu_csv
from utils.imu_model import RawImuMeasurement

HEADER = ",".join(COLUMNS)


def write_rows(path, stamps, extra_rows=()):
    lines = [HEADER]
    lines += [f"{ns},0.01,-0.02,0.03,0.1,0.2,9.81" for ns in stamps]
    lines += list(extra_rows)
    path.write_text("\n".join(lines) + "\n")
    return path


def test_summary_of_clean_stream(tmp_path):
    path = write_rows(tmp_path / "imu.csv", np.arange(1000) * 5_000_000)
    summary = summarize_stream(read_imu_frame(path))
    assert summary.count == 1000
    assert summary.rate_hz == pytest.approx(200.0)
    assert summary.duration_s == pytest.approx(999 * 0.005)
    assert summary.gaps == []


def test_gap_is_reported_with_line_of_preceding_sample(tmp_path):
    stamps = np.arange(1000) * 5_000_000
    stamps[500:] += 500_000_000
    summary = summarize_stream(read_imu_frame(write_rows(tmp_path / "imu.csv", stamps)))
    assert len(summary.gaps) == 1
    line, t_start, gap = summary.gaps[0]
    assert line == 501
    assert t_start == pytest.approx(499 * 0.005)
    assert gap == pytest.approx(0.505)
    assert summary.as_dict()["gap_count"] == 1


def test_non_monotone_timestamp_reports_line(tmp_path):
    path = write_rows(tmp_path / "imu.csv", [0, 5_000_000, 10_000_000, 7_000_000])
    with pytest.raises(ImuCsvError) as excinfo:
        read_imu_frame(path)
    assert excinfo.value.line_number == 5
    assert str(excinfo.value).startswith("line 5: ")


def test_duplicate_timestamp_is_rejected(tmp_path):
    path = write_rows(tmp_path / "imu.csv", [0, 5_000_000, 5_000_000])
    with pytest.raises(ImuCsvError) as excinfo:
        read_imu_frame(path)
    assert excinfo.value.line_number == 4


def test_non_numeric_value_reports_line(tmp_path):
    path = tmp_path / "imu.csv"
    path.write_text(f"{HEADER}\n0,0,0,0,0,0,9.81\n5000000,abc,0,0,0,0,9.81\n")
    with pytest.raises(ImuCsvError) as excinfo:
        read_imu_frame(path)
    assert excinfo.value.line_number == 3
    assert excinfo.value.exit_code == 2


def test_row_with_extra_field_reports_line(tmp_path):
    path = write_rows(tmp_path / "imu.csv", [0, 5_000_000], extra_rows=["10000000,0,0,0,0,0,9.81,7"])
    with pytest.raises(ImuCsvError) as excinfo:
        read_imu_frame(path)
    assert excinfo.value.line_number == 4


def test_wrong_column_count(tmp_path):
    path = tmp_path / "imu.csv"
    path.write_text("timestamp_ns,wx,wy\n0,0,0\n")
    with pytest.raises(ImuCsvError) as excinfo:
        read_imu_frame(path)
    assert excinfo.value.line_number == 1


def test_missing_file(tmp_path):
    with pytest.raises(ImuCsvError):
        read_imu_frame(tmp_path / "absent.csv")


def test_written_stream_reads_back(tmp_path):
    ms = [RawImuMeasurement(k * 0.005, [0.1 * k, 0.0, -0.3], [1.0 / 3.0, 0.0, 9.81]) for k in range(10)]
    out = read_imu_csv(write_imu_csv(tmp_path / "imu.csv", ms))
    assert [m.t for m in out] == pytest.approx([m.t for m in ms], abs=1e-9)
    np.testing.assert_array_equal(np.array([m.accel for m in out]), np.array([m.accel for m in ms]))

import pytest

from fedex.charts import nice_ticks, render_chart


def write_csv(path, rows, header="slot,global_loss,eval_accuracy"):
    path.write_text(header + "\n" + "".join(",".join(map(str, r)) + "\n" for r in rows))
    return path


def test_two_runs_two_polylines(tmp_path):
    a = write_csv(tmp_path / "sync_minmax.csv", [(0, 2.0, 0.1), (10, 1.0, 0.5), (20, 0.5, 0.7)])
    b = write_csv(tmp_path / "async_sws.csv", [(0, 2.0, 0.1), (10, 0.8, 0.6)])
    out = render_chart([a, b], "global_loss", tmp_path / "c.svg")
    svg = out.read_text()
    assert svg.count("<polyline") == 2
    assert ">sync_minmax</text>" in svg and ">async_sws</text>" in svg
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert ">global_loss</text>" in svg and ">slot</text>" in svg


def test_single_point_is_a_marker(tmp_path):
    a = write_csv(tmp_path / "one.csv", [(5, 1.0, 0.3)])
    svg = render_chart([a], "eval_accuracy", tmp_path / "c.svg").read_text()
    assert "<circle" in svg and "<polyline" not in svg


def test_deterministic_bytes(tmp_path):
    a = write_csv(tmp_path / "r.csv", [(0, 2.0, 0.1), (7, 1.3, 0.4), (13, 0.9, 0.45)])
    one = render_chart([a], "global_loss", tmp_path / "1.svg").read_bytes()
    two = render_chart([a], "global_loss", tmp_path / "2.svg").read_bytes()
    assert one == two


def test_missing_column(tmp_path):
    a = write_csv(tmp_path / "r.csv", [(0, 2.0, 0.1)])
    with pytest.raises(ValueError, match="missing column 'max_staleness'"):
        render_chart([a], "max_staleness", tmp_path / "c.svg")


def test_empty_csv(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    with pytest.raises(ValueError, match="empty CSV"):
        render_chart([empty], "global_loss", tmp_path / "c.svg")
    header_only = write_csv(tmp_path / "h.csv", [])
    with pytest.raises(ValueError, match="empty CSV"):
        render_chart([header_only], "global_loss", tmp_path / "c.svg")
    with pytest.raises(ValueError):
        render_chart([], "global_loss", tmp_path / "c.svg")


def test_nan_values_skipped(tmp_path):
    a = write_csv(tmp_path / "r.csv", [(0, 1.0, "nan"), (1, 0.5, "nan")])
    with pytest.raises(ValueError, match="no finite values"):
        render_chart([a], "eval_accuracy", tmp_path / "c.svg")
    svg = render_chart([a], "global_loss", tmp_path / "c.svg").read_text()
    assert "<polyline" in svg


def test_nice_ticks_cover_range():
    t = nice_ticks(0.13, 0.92)
    assert t[0] <= 0.13 and t[-1] >= 0.92
    assert len(nice_ticks(3.0, 3.0)) >= 2

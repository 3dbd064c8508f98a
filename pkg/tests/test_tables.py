import numpy as np
import pytest

from hiercause.tables import SampleTable, from_columns, load_table, save_csv, save_table


@pytest.fixture
def table():
    rng = np.random.default_rng(0)
    return from_columns({"a": rng.standard_normal((20, 2)),
                         "b": rng.standard_normal((20, 3))})


def test_from_columns_layout(table):
    assert table.slices == {"a": (0, 2), "b": (2, 3)}
    assert table.n_samples == 20
    assert table.get("b").shape == (20, 3)


def test_select_concatenates_in_order(table):
    sel = table.select(["b", "a"])
    np.testing.assert_array_equal(sel[:, :3], table.get("b"))
    np.testing.assert_array_equal(sel[:, 3:], table.get("a"))


def test_rejects_overlap_and_gaps():
    data = np.zeros((3, 4))
    with pytest.raises(ValueError, match="overlap"):
        SampleTable(data, {"a": (0, 2), "b": (1, 3)})
    with pytest.raises(ValueError, match="cover"):
        SampleTable(data, {"a": (0, 2)})


def test_rejects_nonfinite():
    data = np.zeros((2, 1))
    data[0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        SampleTable(data, {"a": (0, 1)})


def test_binary_roundtrip_is_bit_exact(tmp_path, table):
    save_table(table, tmp_path / "t")
    loaded = load_table(tmp_path / "t")
    assert loaded.slices == table.slices
    assert loaded.data.tobytes() == table.data.tobytes()


def test_csv_header_and_values(tmp_path, table):
    path = tmp_path / "t.csv"
    save_csv(table, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "a_0,a_1,b_0,b_1,b_2"
    first = np.array([float(v) for v in lines[1].split(",")])
    np.testing.assert_allclose(first[:2], table.get("a")[0], rtol=0, atol=0)

import numpy as np
import pytest

from arraybit.chunkstore import ArraySchema, load_store, write_raw
from arraybit.cli import main, parse_query_text
from arraybit.errors import InputError


@pytest.fixture
def schema():
    return ArraySchema((("d0", 64), ("d1", 64)), (("a", "float64"),), (8, 8))


def test_parse_mixed_query(schema):
    raw = parse_query_text("where a >= 30 and d0 in [50, 60] and d1 < 14", schema, "a")
    assert raw.attr_lo == 30.0 and raw.attr_hi is None
    assert raw.dims["d0"] == (50, 60)
    assert raw.dims["d1"] == (None, 13)


def test_parse_strict_attribute_bound(schema):
    raw = parse_query_text("a < 2.5", schema, "a")
    assert raw.attr_hi == np.nextafter(2.5, -np.inf)
    raw = parse_query_text("a > 2.5", schema, "a")
    assert raw.attr_lo == np.nextafter(2.5, np.inf)


def test_parse_membership_forms(schema):
    raw = parse_query_text("a in {1.5, 2.5}", schema, "a")
    assert raw.values == (1.5, 2.5)
    raw = parse_query_text("d1 in {2, 4}", schema, "a")
    assert raw.dim_values["d1"] == {2, 4}


def test_parse_equality_and_conjunction(schema):
    raw = parse_query_text("d0 = 7 and a == 1.25", schema, "a")
    assert raw.dims["d0"] == (7, 7)
    assert raw.attr_lo == raw.attr_hi == 1.25


def test_parse_rejects_junk(schema):
    with pytest.raises(InputError):
        parse_query_text("bogus >= 1", schema, "a")
    with pytest.raises(InputError):
        parse_query_text("a >= fast", schema, "a")
    with pytest.raises(InputError):
        parse_query_text("a like 3", schema, "a")


def _gen(tmp_path, shape="32x32", seed=3, threshold="0.00001"):
    head = tmp_path / "arr.json"
    rc = main([
        "gen", "--out", str(head), "--shape", shape, "--gaussians", "4",
        "--seed", str(seed), "--threshold", threshold, "--chunk", "8x8",
    ])
    assert rc == 0
    return head


def test_gen_build_query_estimate(tmp_path, capsys):
    head = _gen(tmp_path)
    idx = tmp_path / "arr.abix"
    rc = main(["build", "--data", str(head), "--index", str(idx),
               "--params", "bins=8", "fanout=16", "encoding=range"])
    assert rc == 0
    capsys.readouterr()

    rc = main(["query", "--index", str(idx), "--data", str(head), "--where", ""])
    assert rc == 0
    out = capsys.readouterr().out
    count = int(out.splitlines()[0].split()[1])
    store = load_store(head)
    assert count == store.nonempty_total()

    rc = main(["estimate", "--index", str(idx), "--levels", "0", "--where", "a >= 0"])
    assert rc == 0
    out = capsys.readouterr().out
    lo = int(out.splitlines()[0].split()[1])
    hi = int(out.splitlines()[1].split()[1])
    assert lo <= count <= hi


def test_query_expand_prints_cells(tmp_path, capsys):
    head = _gen(tmp_path, shape="8x8", threshold="0")
    idx = tmp_path / "arr.abix"
    main(["build", "--data", str(head), "--index", str(idx), "--params", "chunk=4x4"])
    capsys.readouterr()
    rc = main(["query", "--index", str(idx), "--data", str(head),
               "--where", "d0 = 2 and d1 in [1, 2]", "--expand"])
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    cells = [l for l in lines if l.count(",") == 2]
    assert len(cells) == 2
    assert cells[0].startswith("2,1,")


def test_append_then_query_equals_fresh_build(tmp_path, capsys):
    rng = np.random.default_rng(5)
    sch = ArraySchema((("d0", 8), ("d1", 8)), (("a", "float64"),), (4, 4))
    head = tmp_path / "grow.json"
    first = rng.random((8, 8))
    write_raw(head, sch, {"a": first})
    idx = tmp_path / "grow.abix"
    assert main(["build", "--data", str(head), "--index", str(idx)]) == 0

    second = rng.random((8, 8))
    write_raw(head, sch, {"a": second}, origin=(8, 0))
    assert main(["append", "--index", str(idx), "--data", str(head)]) == 0
    capsys.readouterr()

    assert main(["query", "--index", str(idx), "--data", str(head),
                 "--where", "d0 >= 6 and d0 <= 9"]) == 0
    appended_out = capsys.readouterr().out

    fresh_idx = tmp_path / "fresh.abix"
    assert main(["build", "--data", str(head), "--index", str(fresh_idx)]) == 0
    capsys.readouterr()
    assert main(["query", "--index", str(fresh_idx), "--data", str(head),
                 "--where", "d0 >= 6 and d0 <= 9"]) == 0
    fresh_out = capsys.readouterr().out
    assert appended_out.splitlines()[0] == fresh_out.splitlines()[0]
    count = int(fresh_out.splitlines()[0].split()[1])
    assert count == 4 * 8  # rows 6..9 over 8 columns, all non-empty


def test_bench_writes_csv_with_agreement(tmp_path):
    head = _gen(tmp_path, shape="32x32", threshold="0.0001")
    workload = tmp_path / "queries.txt"
    workload.write_text(
        "# two smoke queries\n"
        "where a >= 0.001 and d0 in [4, 27]\n"
        "d1 <= 15\n"
    )
    out = tmp_path / "report.csv"
    rc = main(["bench", "--data", str(head), "--workload", str(workload),
               "--out", str(out), "--repeat", "1", "--params", "bins=8", "fanout=16"])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "# arraybit-bench-v1"
    sizes = {l.split(",")[1]: int(l.split(",")[2]) for l in lines if l.startswith("# index_size")}
    assert sizes["arraybit"] > 0 and sizes["dimsatts"] > 0
    import csv as csvmod

    rows = list(csvmod.DictReader(l for l in lines if not l.startswith("#")))
    assert len(rows) == 6
    by_query = {}
    for row in rows:
        by_query.setdefault(row["query"], {})[row["engine"]] = int(row["result_count"])
    for counts in by_query.values():
        assert counts["arraybit"] == counts["fullscan"] == counts["dimsatts"]


def test_exit_codes(tmp_path):
    assert main(["query"]) == 1  # missing required args
    assert main(["query", "--index", str(tmp_path / "missing.abix")]) == 2
    head = _gen(tmp_path, shape="8x8")
    idx = tmp_path / "x.abix"
    assert main(["build", "--data", str(head), "--index", str(idx)]) == 0
    assert main(["query", "--index", str(idx), "--where", "nope > 3"]) == 1
    assert main(["nonsense"]) == 1

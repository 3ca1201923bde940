"""Tests for CSV/SVG I/O and the command-line front end.

CLI commands run in-process through ``main`` so exit codes and artifacts
can be asserted directly.
"""

import json

import numpy as np
import pytest

from bicoclust.cli import main, parse_config_file
from bicoclust.io import (
    InputError,
    heatmap_svg,
    matrix_csv_text,
    read_matrix_csv,
    write_matrix_csv,
)


def _write_csv(path, M):
    write_matrix_csv(path, np.asarray(M, dtype=float))
    return str(path)


def _block_data(n=16, p=12, noise=0.2, seed=0):
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, 2, n)
    cols = rng.integers(0, 2, p)
    means = np.array([[3.0, -2.0], [-3.0, 2.0]])
    X = means[rows][:, cols] + noise * rng.standard_normal((n, p))
    return X, rows, cols


# ----------------------------------------------------------------------
# CSV reading


def test_read_plain_matrix(tmp_path):
    path = _write_csv(tmp_path / "m.csv", [[1.5, 2.0], [3.0, 4.0]])
    mf = read_matrix_csv(path)
    assert mf.values.shape == (2, 2)
    assert mf.complete
    assert mf.header is None and mf.row_names is None


def test_read_header_and_row_names(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("id,geneA,geneB\ns1,1.0,2.0\ns2,3.0,NA\n")
    mf = read_matrix_csv(path)
    assert mf.header == ["geneA", "geneB"]
    assert mf.row_names == ["s1", "s2"]
    assert mf.values.shape == (2, 2)
    assert not mf.mask[1, 1] and mf.mask.sum() == 3
    assert mf.column_name(1) == "geneB"


def test_read_missing_tokens(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("1.0,NA,3.0\n4.0,,na\n")
    mf = read_matrix_csv(path)
    assert mf.mask.tolist() == [[True, False, True], [True, False, False]]


def test_read_parse_error_reports_position(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("1.0,2.0\n3.0,oops\n")
    with pytest.raises(InputError, match="line 2, column 2"):
        read_matrix_csv(path)


def test_read_ragged_rows_rejected(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("1.0,2.0\n3.0\n")
    with pytest.raises(InputError, match="line 2"):
        read_matrix_csv(path)


def test_read_empty_file_rejected(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("")
    with pytest.raises(InputError, match="no data"):
        read_matrix_csv(path)


def test_matrix_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(7)
    M = rng.standard_normal((9, 5)) * np.exp(rng.uniform(-12, 12, (9, 5)))
    path = _write_csv(tmp_path / "m.csv", M)
    back = read_matrix_csv(path)
    assert np.array_equal(back.values, M)


# ----------------------------------------------------------------------
# heatmap


def test_heatmap_structure():
    U = np.array([[1.0, 1.0, -2.0], [1.0, 1.0, -2.0], [0.5, 0.5, 2.0]])
    svg = heatmap_svg(U, np.array([0, 0, 1]), np.array([0, 0, 1]))
    assert svg.startswith("<svg ")
    # one rect per cell plus the outer border
    assert svg.count("<rect") == U.size + 1
    # one boundary between the two row groups, one between column groups
    assert svg.count("<line") == 2
    assert heatmap_svg(U, np.array([0, 0, 1]), np.array([0, 0, 1])) == svg


def test_heatmap_rejects_bad_labels():
    with pytest.raises(ValueError):
        heatmap_svg(np.zeros((3, 2)), np.zeros(2, int), np.zeros(2, int))


# ----------------------------------------------------------------------
# config files


def test_parse_config_file(tmp_path):
    path = tmp_path / "conf.txt"
    path.write_text("gamma = 2.5\nk_row=4  # normalized key\n\n# comment\n"
                    "ADAPTIVE = true\n")
    conf = parse_config_file(path)
    assert conf == {"gamma": "2.5", "k-row": "4", "adaptive": "true"}


def test_parse_config_rejects_bad_line(tmp_path):
    path = tmp_path / "conf.txt"
    path.write_text("gamma 2.5\n")
    with pytest.raises(InputError, match="line 1"):
        parse_config_file(path)


# ----------------------------------------------------------------------
# fit command


def test_fit_gamma_zero_identity(tmp_path):
    X, _, _ = _block_data()
    inp = _write_csv(tmp_path / "x.csv", X)
    out = tmp_path / "out"
    assert main(["fit", inp, "--out", str(out), "--gamma", "0",
                 "--quiet"]) == 0
    U = read_matrix_csv(out / "U.csv").values
    assert np.array_equal(U, X)
    w = np.loadtxt(out / "weights.csv")
    np.testing.assert_allclose(w, 1.0 / X.shape[1], atol=1e-15)


def test_fit_writes_all_artifacts(tmp_path):
    X, _, _ = _block_data()
    inp = _write_csv(tmp_path / "x.csv", X)
    out = tmp_path / "out"
    assert main(["fit", inp, "--out", str(out), "--gamma", "0.5",
                 "--k-row", "4", "--k-col", "4", "--quiet"]) == 0
    for name in ("U.csv", "weights.csv", "row_labels.csv", "col_labels.csv",
                 "diagnostics.json", "heatmap.svg"):
        assert (out / name).exists(), name
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["gamma"] == 0.5
    assert diag["converged"] in (True, False)
    assert len(diag["objective_trace"]) == diag["iterations"] + 2
    labels = [int(line) for line in
              (out / "row_labels.csv").read_text().splitlines()]
    assert len(labels) == X.shape[0]


def test_fit_recovers_noiseless_blocks(tmp_path):
    X, rows_true, cols_true = _block_data(noise=0.0)
    inp = _write_csv(tmp_path / "x.csv", X)
    out = tmp_path / "out"
    assert main(["fit", inp, "--out", str(out), "--gamma", "0.5",
                 "--k-row", "4", "--k-col", "4", "--quiet"]) == 0
    rows = np.loadtxt(out / "row_labels.csv", dtype=int)
    cols = np.loadtxt(out / "col_labels.csv", dtype=int)
    assert np.array_equal(rows_true[:, None] == rows_true[None, :],
                          rows[:, None] == rows[None, :])
    assert np.array_equal(cols_true[:, None] == cols_true[None, :],
                          cols[:, None] == cols[None, :])


def test_fit_rerun_is_byte_identical(tmp_path):
    X, _, _ = _block_data(seed=3)
    inp = _write_csv(tmp_path / "x.csv", X)
    before = open(inp, "rb").read()
    out1, out2 = tmp_path / "a", tmp_path / "b"
    args = [inp, "--gamma", "0.8", "--k-row", "4", "--k-col", "4", "--quiet"]
    assert main(["fit", *args, "--out", str(out1)]) == 0
    assert main(["fit", *args, "--out", str(out2)]) == 0
    for name in ("U.csv", "weights.csv", "row_labels.csv", "col_labels.csv",
                 "diagnostics.json", "heatmap.svg"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name
    assert open(inp, "rb").read() == before  # inputs are never touched


def test_fit_rejects_missing_values(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("1.0,2.0,3.0\n4.0,NA,6.0\n7.0,8.0,9.0\n")
    assert main(["fit", str(path), "--out", str(tmp_path / "o"),
                 "--quiet"]) == 1


def test_fit_parse_failure_exits_1(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("1.0,2.0\n3.0,bad\n")
    assert main(["fit", str(path), "--out", str(tmp_path / "o"),
                 "--quiet"]) == 1


def test_fit_missing_file_exits_1(tmp_path):
    assert main(["fit", str(tmp_path / "none.csv"), "--out",
                 str(tmp_path / "o"), "--quiet"]) == 1


def test_fit_iteration_cap_exits_2(tmp_path):
    X, _, _ = _block_data(noise=0.4, seed=5)
    inp = _write_csv(tmp_path / "x.csv", X)
    code = main(["fit", inp, "--out", str(tmp_path / "o"), "--gamma", "2.0",
                 "--k-row", "4", "--k-col", "4", "--max-iter", "1",
                 "--tol", "1e-10", "--quiet"])
    assert code == 2


def test_bad_flag_exits_1(capsys):
    assert main(["fit", "x.csv", "--no-such-flag"]) == 1
    assert "error" in capsys.readouterr().err


def test_fit_stdout_echoes_u(tmp_path, capsys):
    X, _, _ = _block_data()
    inp = _write_csv(tmp_path / "x.csv", X)
    out = tmp_path / "o"
    assert main(["fit", inp, "--out", str(out), "--gamma", "0", "--stdout",
                 "--quiet"]) == 0
    assert capsys.readouterr().out == (out / "U.csv").read_text()


def test_flags_override_config(tmp_path):
    X, _, _ = _block_data()
    inp = _write_csv(tmp_path / "x.csv", X)
    conf = tmp_path / "conf.txt"
    conf.write_text("gamma = 0.8\n")
    out = tmp_path / "o"
    assert main(["fit", inp, "--out", str(out), "--config", str(conf),
                 "--gamma", "0", "--quiet"]) == 0
    assert np.array_equal(read_matrix_csv(out / "U.csv").values, X)


def test_threads_env_fallback(tmp_path, monkeypatch):
    X, _, _ = _block_data()
    inp = _write_csv(tmp_path / "x.csv", X)
    monkeypatch.setenv("BICOCLUST_THREADS", "not-a-number")
    assert main(["fit", inp, "--out", str(tmp_path / "o"), "--gamma", "0",
                 "--quiet"]) == 1
    monkeypatch.setenv("BICOCLUST_THREADS", "2")
    assert main(["fit", inp, "--out", str(tmp_path / "o"), "--gamma", "0",
                 "--quiet"]) == 0


# ----------------------------------------------------------------------
# impute command


def test_impute_complete_input_passthrough(tmp_path):
    X, _, _ = _block_data()
    inp = _write_csv(tmp_path / "x.csv", X)
    out = tmp_path / "o"
    assert main(["impute", inp, "--out", str(out), "--quiet"]) == 0
    assert (out / "completed.csv").read_text() == matrix_csv_text(X)
    diag = json.loads((out / "impute_diag.json").read_text())
    assert diag["missing_entries"] == 0


def test_impute_fills_and_keeps_observed(tmp_path):
    X, _, _ = _block_data(seed=2)
    text = matrix_csv_text(X).splitlines()
    cells = [line.split(",") for line in text]
    cells[1][2] = "NA"
    cells[5][0] = ""
    inp = tmp_path / "x.csv"
    inp.write_text("\n".join(",".join(c) for c in cells) + "\n")
    out = tmp_path / "o"
    assert main(["impute", str(inp), "--out", str(out), "--gamma", "0.8",
                 "--k-row", "4", "--k-col", "4", "--quiet"]) == 0
    done = read_matrix_csv(out / "completed.csv")
    assert done.complete
    mask = np.ones_like(X, dtype=bool)
    mask[1, 2] = mask[5, 0] = False
    assert np.array_equal(done.values[mask], X[mask])
    diag = json.loads((out / "impute_diag.json").read_text())
    assert diag["missing_entries"] == 2
    assert diag["mm_iterations"] >= 1


def test_impute_constant_column_shrinks_to_constant(tmp_path):
    X, _, _ = _block_data(seed=4)
    X[:, 3] = 4.2
    cells = [line.split(",") for line in matrix_csv_text(X).splitlines()]
    cells[6][3] = "NA"
    inp = tmp_path / "x.csv"
    inp.write_text("\n".join(",".join(c) for c in cells) + "\n")
    out = tmp_path / "o"
    assert main(["impute", str(inp), "--out", str(out), "--gamma", "1000",
                 "--k-row", "4", "--k-col", "4", "--tol", "1e-5",
                 "--quiet"]) == 0
    done = read_matrix_csv(out / "completed.csv").values
    assert done[6, 3] == pytest.approx(4.2, abs=1e-2)


def test_impute_all_missing_column_names_it(tmp_path, caplog):
    path = tmp_path / "x.csv"
    path.write_text("a,b,c\n1.0,NA,3.0\n4.0,na,6.0\n7.0,,9.0\n")
    with caplog.at_level("ERROR", logger="bicoclust.cli"):
        assert main(["impute", str(path), "--out", str(tmp_path / "o"),
                     "--quiet"]) == 1
    assert any("column b" in rec.message for rec in caplog.records)


# ----------------------------------------------------------------------
# tune command


def test_tune_singleton_grids_match_fit(tmp_path):
    X, _, _ = _block_data(seed=6)
    inp = _write_csv(tmp_path / "x.csv", X)
    conf = tmp_path / "conf.txt"
    conf.write_text("gamma-grid = 2.0\nlambda-grid = 0.001\n")
    tdir, fdir = tmp_path / "t", tmp_path / "f"
    assert main(["tune", inp, "--out", str(tdir), "--config", str(conf),
                 "--k-row", "4", "--k-col", "4", "--seed", "1",
                 "--quiet"]) == 0
    assert main(["fit", inp, "--out", str(fdir), "--gamma", "2.0",
                 "--lambda", "0.001", "--k-row", "4", "--k-col", "4",
                 "--quiet"]) == 0
    assert (tdir / "U.csv").read_bytes() == (fdir / "U.csv").read_bytes()
    assert (tdir / "weights.csv").read_bytes() == \
        (fdir / "weights.csv").read_bytes()
    # path files document the (singleton) grids
    assert len((tdir / "gamma_path.csv").read_text().splitlines()) == 2
    assert len((tdir / "lambda_path.csv").read_text().splitlines()) == 2
    model = json.loads((tdir / "model.json").read_text())
    assert model["gamma"] == 2.0 and model["lambda"] == 0.001


def test_tune_gamma_path_matches_grid(tmp_path):
    X, _, _ = _block_data(seed=7)
    inp = _write_csv(tmp_path / "x.csv", X)
    conf = tmp_path / "conf.txt"
    conf.write_text("gamma-grid = 0.1, 1.0, 5.0\nlambda-grid = 0\n")
    out = tmp_path / "o"
    assert main(["tune", inp, "--out", str(out), "--config", str(conf),
                 "--k-row", "4", "--k-col", "4", "--quiet"]) == 0
    lines = (out / "gamma_path.csv").read_text().splitlines()
    assert lines[0] == "gamma,holdout_sse,converged"
    assert len(lines) == 4
    assert [float(line.split(",")[0]) for line in lines[1:]] == [0.1, 1.0, 5.0]


# ----------------------------------------------------------------------
# sim command


def test_sim_tiny_outputs_and_determinism(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["sim", "1", "--scale", "tiny", "--out", str(out1),
                 "--quiet"]) == 0
    assert main(["sim", "1", "--scale", "tiny", "--out", str(out2),
                 "--quiet"]) == 0
    assert (out1 / "results.csv").read_bytes() == \
        (out2 / "results.csv").read_bytes()
    assert (out1 / "summary.csv").read_bytes() == \
        (out2 / "summary.csv").read_bytes()


def test_sim_summary_recomputes_from_results(tmp_path):
    import csv as csv_mod
    out = tmp_path / "o"
    assert main(["sim", "theorem1", "--scale", "tiny", "--out", str(out),
                 "--quiet"]) == 0
    with open(out / "results.csv", newline="") as fh:
        results = list(csv_mod.DictReader(fh))
    with open(out / "summary.csv", newline="") as fh:
        summary = list(csv_mod.DictReader(fh))
    groups = {}
    for r in results:
        groups.setdefault(r["metric"], []).append(float(r["value"]))
    for row in summary:
        vals = np.array(groups[row["metric"]])
        assert float(row["mean"]) == pytest.approx(vals.mean(), rel=1e-12)
        expect_se = vals.std(ddof=1) / np.sqrt(vals.size) if vals.size > 1 \
            else 0.0
        assert float(row["se"]) == pytest.approx(expect_se, rel=1e-12)
        assert int(row["replicates"]) == vals.size

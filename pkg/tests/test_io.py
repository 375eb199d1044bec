"""File formats: dense CSV, MatrixMarket coordinate, fit round trips."""

import json

import numpy as np
import pytest

from devmf import io as dio
from devmf.canonicalize import canonicalize, center_fit
from devmf.engine import DataMatrix, ModelSpec, dmf_fit
from devmf.families import get_family, get_link
from devmf.io import ParseError, read_fit, read_matrix, write_fit, write_matrix


class TestDenseCsv:
    def test_small_matrix(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("1,2\n3,4\n")
        data = read_matrix(path)
        assert np.array_equal(data.x, [[1.0, 2.0], [3.0, 4.0]])

    def test_ragged_row_names_line(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("1,2\n3\n")
        with pytest.raises(ParseError, match="line 2"):
            read_matrix(path)

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("1,2\n3,abc\n")
        with pytest.raises(ParseError, match="line 2"):
            read_matrix(path)

    def test_write_read_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(7, 5)) * np.pi
        path = tmp_path / "x.csv"
        write_matrix(path, x)
        back = read_matrix(path)
        assert np.array_equal(back.x, x)  # repr floats survive exactly

    def test_deterministic_bytes(self, tmp_path):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 3))
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_matrix(p1, x)
        write_matrix(p2, x)
        assert p1.read_bytes() == p2.read_bytes()


class TestMatrixMarket:
    HEADER = "%%MatrixMarket matrix coordinate real general\n"

    def test_implicit_zeros(self, tmp_path):
        path = tmp_path / "m.mtx"
        path.write_text(self.HEADER + "2 2 3\n1 1 5\n1 2 -1.5\n2 2 2\n")
        data = read_matrix(path, fmt="matrixmarket")
        assert np.array_equal(data.x, [[5.0, -1.5], [0.0, 2.0]])
        assert np.all(data.w == 1.0)

    def test_missing_as_holdout(self, tmp_path):
        path = tmp_path / "m.mtx"
        path.write_text(self.HEADER + "2 2 3\n1 1 5\n1 2 -1.5\n2 2 2\n")
        data = read_matrix(path, fmt="matrixmarket", missing_as_holdout=True)
        assert data.w[1, 0] == 0.0
        assert data.w.sum() == 3.0

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "m.mtx"
        path.write_text("junk\n2 2 1\n1 1 5\n")
        with pytest.raises(ParseError, match="line 1"):
            read_matrix(path, fmt="matrixmarket")

    def test_bad_entry_line(self, tmp_path):
        path = tmp_path / "m.mtx"
        path.write_text(self.HEADER + "2 2 1\n1 oops 5\n")
        with pytest.raises(ParseError, match="line 3"):
            read_matrix(path, fmt="matrixmarket")

    def test_out_of_range_index(self, tmp_path):
        path = tmp_path / "m.mtx"
        path.write_text(self.HEADER + "2 2 1\n3 1 5\n")
        with pytest.raises(ParseError, match="out of range"):
            read_matrix(path, fmt="matrixmarket")


def _small_fit(seed=0, center=False):
    rng = np.random.default_rng(seed)
    x = rng.poisson(3.0, size=(12, 6)).astype(float) + 1.0
    family, link = get_family("poisson"), get_link("log")
    raw = dmf_fit(DataMatrix(x), ModelSpec(family, link, 2, seed=11))
    fit = center_fit(raw) if center else canonicalize(raw)
    return fit, family, link


class TestFitRoundTrip:
    def test_eta_reproduced(self, tmp_path):
        fit, family, link = _small_fit()
        write_fit(tmp_path, fit, family, link, {"rel_tol": 1e-6, "seed": 11})
        bundle = read_fit(tmp_path)
        assert np.max(np.abs(bundle.fit.eta - fit.eta)) < 1e-12
        assert bundle.family.name == "poisson"
        assert bundle.link.name == "log"
        assert bundle.meta["rel_tol"] == 1e-6
        assert bundle.meta["seed"] == 11

    def test_descending_d_written(self, tmp_path):
        fit, family, link = _small_fit(seed=1)
        write_fit(tmp_path, fit, family, link)
        d = [float(v) for v in (tmp_path / "d.csv").read_text().split()]
        assert d == sorted(d, reverse=True)

    def test_centered_round_trip(self, tmp_path):
        fit, family, link = _small_fit(seed=2, center=True)
        write_fit(tmp_path, fit, family, link)
        bundle = read_fit(tmp_path)
        assert np.max(np.abs(bundle.fit.eta - fit.eta)) < 1e-12
        assert bundle.meta["centered"] is True

    def test_metadata_is_sorted_json(self, tmp_path):
        fit, family, link = _small_fit(seed=3)
        write_fit(tmp_path, fit, family, link)
        meta = json.loads((tmp_path / "meta.json").read_text())
        assert meta["family"] == "poisson"
        assert meta["converged"] in (True, False)
        assert isinstance(meta["deviance_trace"], list)

    def test_missing_dir_message(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="fit"):
            read_fit(tmp_path / "nope")

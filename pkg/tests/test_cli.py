import csv
import json
import os
from fractions import Fraction

import pytest

from venetian import io as vio
from venetian.cli import EXIT_CONFIG, EXIT_CONSTRUCTION, EXIT_OK, EXIT_VERIFICATION, main
from venetian.errors import ConfigError, ManifestIncomplete

SMALL = """\
# small planar run
d = 2
t = 0
option = capacity
lines = 1,0
depth = 6
growth = 1
partition_tail = 0
ball_samples = 20
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(root, SMALL)
    out = str(root / "run")
    assert main(["construct", "--config", cfg, "--out", out]) == EXIT_OK
    return out


class TestConfig:
    def test_round_trip(self):
        cfg = vio.parse_config(SMALL)
        again = vio.parse_config(cfg.to_text())
        assert again.canonical() == cfg.canonical()
        assert again.config_hash() == cfg.config_hash()

    def test_values(self):
        cfg = vio.parse_config(SMALL)
        assert cfg.d == 2 and cfg.t == 0 and cfg.lines == [(1, 0)]
        assert cfg.stage_count == 6 and cfg.growth == 1

    def test_several_lines(self):
        cfg = vio.parse_config(SMALL.replace("lines = 1,0", "lines = 1,0 ; (0,1)"))
        assert cfg.lines == [(1, 0), (0, 1)]
        assert cfg.period == 8

    def test_hash_ignores_output_dir(self):
        a = vio.parse_config(SMALL + "out = a\n")
        b = vio.parse_config(SMALL + "out = b\n")
        assert a.config_hash() == b.config_hash()

    @pytest.mark.parametrize("text", [
        SMALL.replace("option = capacity", "option = measure_zero"),
        SMALL.replace("t = 0", "t = 1"),
        SMALL.replace("lines = 1,0", "lines = 1,0,0"),
        SMALL + "cycles = 1\n",
        SMALL + "colour = red\n",
        SMALL + "d = 3\n",
        SMALL.replace("t = 0", "t = x"),
        SMALL.replace("growth = 1", "growth = 1/2"),
    ])
    def test_rejected(self, text):
        with pytest.raises(ConfigError):
            vio.parse_config(text)

    def test_exit_code_for_bad_config(self, tmp_path):
        bad = SMALL.replace("option = capacity", "option = measure_zero")
        assert main(["construct", "--config", write_cfg(tmp_path, bad), "--out", str(tmp_path / "o")]) \
            == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(["construct", "--config", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG


class TestConstruct:
    def test_outputs(self, built):
        manifest = json.loads(open(os.path.join(built, "manifest.json")).read())
        for entry in manifest["files"].values():
            assert vio.sha256_file(os.path.join(built, entry["path"])) == entry["sha256"]
        assert all(c["verdict"] == "certified" for c in manifest["certificates"])
        with open(os.path.join(built, "ledger.csv")) as fh:
            rows = list(csv.DictReader(fh))
        assert [int(r["k"]) for r in rows] == list(range(1, 7))
        assert [int(r["count"]) for r in rows] == [r["count"] for r in manifest["ledger"]]

    def test_reload_matches(self, built):
        cfg, ledger, manifest = vio.load_run(built)
        assert ledger.depth == 6
        assert [st.count for st in ledger.stages[1:]] == [r["count"] for r in manifest["ledger"]]
        assert ledger.stage(6).pieces[0].mass == Fraction(1, ledger.stage(6).count)

    def test_rerun_is_byte_identical(self, built, tmp_path):
        cfg = write_cfg(tmp_path, SMALL)
        again = str(tmp_path / "again")
        assert main(["construct", "--config", cfg, "--out", again]) == EXIT_OK
        for name in ("ledger.csv", "pieces.jsonl", "manifest.json"):
            with open(os.path.join(built, name), "rb") as a, open(os.path.join(again, name), "rb") as b:
                assert a.read() == b.read(), name

    def test_piece_cap(self, tmp_path):
        cfg = write_cfg(tmp_path, SMALL + "max_pieces = 10\n")
        assert main(["construct", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONSTRUCTION

    def test_greedy_piece_cap(self, tmp_path):
        cfg = write_cfg(tmp_path, SMALL + "max_pieces = 10\nstrategy = greedy\n")
        assert main(["construct", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONSTRUCTION


class TestAnalyze:
    def test_recursion(self, built, tmp_path):
        rep = str(tmp_path / "rep")
        assert main(["analyze", "--out", built, "--checks", "recursion", "--report-dir", rep]) == EXIT_OK
        verdicts = json.loads(open(os.path.join(rep, "verdicts.json")).read())
        assert verdicts["verdict"] is True
        assert verdicts["checks"]["recursion"]["verdict"] is True
        assert os.path.exists(os.path.join(rep, "recursion.csv"))

    def test_unknown_check(self, built):
        assert main(["analyze", "--out", built, "--checks", "colour"]) == EXIT_CONFIG

    def test_reports_are_reproducible(self, built, tmp_path):
        for name in ("a", "b"):
            assert main(["analyze", "--out", built, "--checks", "wk,boxdim",
                         "--report-dir", str(tmp_path / name)]) in (EXIT_OK, EXIT_VERIFICATION)
        for name in ("verdicts.json", "wk.csv", "boxdim.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_corrupted_ledger(self, built, tmp_path):
        import shutil
        copy = str(tmp_path / "copy")
        shutil.copytree(built, copy)
        with open(os.path.join(copy, "ledger.csv"), "a") as fh:
            fh.write("7,0,1,1,1,0.0,1,1\n")
        with pytest.raises(ManifestIncomplete):
            vio.load_run(copy)
        assert main(["analyze", "--out", copy, "--checks", "recursion"]) == EXIT_CONSTRUCTION

    def test_missing_run(self, tmp_path):
        assert main(["analyze", "--out", str(tmp_path / "none"), "--checks", "recursion"]) == EXIT_CONSTRUCTION


class TestPlanesAndExport:
    def test_dual(self, built, tmp_path):
        rep = str(tmp_path / "dual")
        assert main(["planes", "--out", built, "--mode", "dual", "--verticals", "0;1",
                     "--report-dir", rep]) == EXIT_OK
        assert os.path.exists(os.path.join(rep, "sections.csv"))
        assert os.path.exists(os.path.join(rep, "hyperplanes.json"))

    def test_dimension_needs_s(self, built):
        assert main(["planes", "--out", built, "--mode", "dimension", "--plane-dim", "4"]) == EXIT_CONFIG

    def test_export(self, built, tmp_path):
        rep = str(tmp_path / "exp")
        assert main(["export", "--out", built, "--stage", "3", "--report-dir", rep]) == EXIT_OK
        _, ledger, _ = vio.load_run(built)
        with open(os.path.join(rep, "stage_3.jsonl")) as fh:
            recs = [json.loads(line) for line in fh]
        assert len(recs) == ledger.stage(3).count
        assert {r["stage"] for r in recs} == {3}
        with open(os.path.join(rep, "stage_3_projections.csv")) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == ledger.stage(3).count
        assert set(rows[0]) == {"global_id", "line_index", "lo", "hi"}

    def test_export_out_of_range(self, built):
        assert main(["export", "--out", built, "--stage", "99"]) == EXIT_CONFIG

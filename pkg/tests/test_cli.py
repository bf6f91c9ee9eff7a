"""Command-line interface: every subcommand plus the exit-code contract."""

import json
import os

import numpy as np
import pytest

from pcfold import cli, cloudio, metrics

TINY_CONFIG = """\
# small model for fast tests
n_input = 48
k = 8
d = 8
heads = 4
n_sparse = 32
ratio = 4
steps = 2
kappa = 4
c_enc = 16
c_coarse = 16
c_expand = 8
sparse_width = 16
epochs = 2
batch_size = 4
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Generated dataset + one trained tiny checkpoint, shared read-only."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_CONFIG)
    datadir = root / "data"
    assert cli.main(["gen-data", "--out", str(datadir), "--count", "4",
                     "--seed", "1", "--budget", "128", "--partial", "48"]) == 0
    ckpt = root / "model.ckpt"
    assert cli.main(["train", "--data", str(datadir), "--config", str(cfg),
                     "--out", str(ckpt)]) == 0
    return {"root": root, "config": cfg, "data": datadir, "ckpt": ckpt}


class TestGenData:
    def test_file_count_and_manifest(self, tmp_path):
        out = tmp_path / "d"
        assert cli.main(["gen-data", "--out", str(out), "--count", "5",
                         "--seed", "0", "--budget", "128", "--partial", "40"]) == 0
        clouds = sorted(f for f in os.listdir(out) if f.endswith(".xyz"))
        assert len(clouds) == 10
        manifest = json.loads((out / "manifest.json").read_text())
        listed = [e["partial"] for e in manifest["files"]] + [e["complete"] for e in manifest["files"]]
        assert sorted(listed) == clouds
        assert len(set(listed)) == 10

    def test_seed_determinism_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            cli.main(["gen-data", "--out", str(out), "--count", "3",
                      "--seed", "7", "--budget", "128", "--partial", "40"])
        for name in os.listdir(a):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


class TestTrain:
    def test_log_rows_match_epochs(self, workspace):
        log = workspace["root"] / "model_log.csv"
        lines = log.read_text().splitlines()
        assert lines[0] == "epoch,lr,coarse_cd,dense_cd"
        assert len(lines) == 1 + 2  # header + epochs

    def test_lr_column_shows_decay_steps(self, tmp_path, workspace):
        cfg = tmp_path / "decay.cfg"
        cfg.write_text(TINY_CONFIG.replace("epochs = 2", "epochs = 11") + "decay_every = 5\n")
        out = tmp_path / "m.ckpt"
        assert cli.main(["train", "--data", str(workspace["data"]),
                         "--config", str(cfg), "--out", str(out)]) == 0
        rows = [l.split(",") for l in (tmp_path / "m_log.csv").read_text().splitlines()[1:]]
        lrs = [float(r[1]) for r in rows]
        assert lrs[0] == 1e-3 and lrs[4] == 1e-3 * 0.7 and lrs[10] == 1e-3 * 0.49

    def test_checkpoint_reloads_consistently(self, workspace):
        from pcfold import checkpoint, train as train_mod
        from pcfold.config import PipelineConfig
        params, blob = checkpoint.load_checkpoint(workspace["ckpt"])
        pcfg = PipelineConfig(**blob["pipeline"])
        pairs = cli._load_dataset(str(workspace["data"]))
        a = train_mod.evaluate_dense_cd(pairs, params, pcfg)
        b = train_mod.evaluate_dense_cd(pairs, params, pcfg)
        assert abs(a[1] - b[1]) < 1e-9

    def test_missing_data_dir_exits_2(self, tmp_path, workspace):
        assert cli.main(["train", "--data", str(tmp_path / "nope"),
                         "--config", str(workspace["config"]),
                         "--out", str(tmp_path / "x.ckpt")]) == 2

    def test_config_error_reports_line(self, tmp_path, workspace, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("k = 8\nwat\n")
        assert cli.main(["train", "--data", str(workspace["data"]),
                         "--config", str(bad), "--out", str(tmp_path / "x.ckpt")]) == 2
        assert "line 2" in capsys.readouterr().err


class TestComplete:
    def test_output_count_and_determinism(self, workspace, tmp_path):
        inp = workspace["data"] / "partial_0000.xyz"
        out1, out2 = tmp_path / "c1.xyz", tmp_path / "c2.xyz"
        for out in (out1, out2):
            assert cli.main(["complete", "--input", str(inp),
                             "--checkpoint", str(workspace["ckpt"]), "--out", str(out)]) == 0
        assert len(out1.read_text().splitlines()) == 32 * 4  # N_d = r * N_s
        assert out1.read_bytes() == out2.read_bytes()

    def test_dump_intermediate_writes_step_files(self, workspace, tmp_path):
        inp = workspace["data"] / "partial_0000.xyz"
        steps = tmp_path / "steps"
        assert cli.main(["complete", "--input", str(inp),
                         "--checkpoint", str(workspace["ckpt"]),
                         "--out", str(tmp_path / "c.xyz"),
                         "--dump-intermediate", str(steps)]) == 0
        assert sorted(os.listdir(steps)) == ["step_00.xyz", "step_01.xyz", "step_02.xyz"]

    def test_missing_checkpoint_exits_2(self, workspace, tmp_path):
        assert cli.main(["complete", "--input", str(workspace["data"] / "partial_0000.xyz"),
                         "--checkpoint", str(tmp_path / "no.ckpt"),
                         "--out", str(tmp_path / "c.xyz")]) == 2


class TestEval:
    def _dirs(self, tmp_path, n=3):
        rng = np.random.default_rng(0)
        pred, gt = tmp_path / "pred", tmp_path / "gt"
        pred.mkdir(), gt.mkdir()
        for i in range(n):
            pts = rng.uniform(-0.5, 0.5, size=(40, 3)).astype(np.float32)
            cloudio.write_xyz(pred / f"s{i}.xyz", pts)
            cloudio.write_xyz(gt / f"s{i}.xyz", pts)
        return pred, gt

    def test_perfect_predictions(self, tmp_path, capsys):
        pred, gt = self._dirs(tmp_path)
        out = tmp_path / "report"
        assert cli.main(["eval", "--pred", str(pred), "--gt", str(gt),
                         "--out", str(out)]) == 0
        report = metrics.report_from_csv((out / "report.csv").read_text())
        for rec in report.records:
            assert rec.cd_x1e4 == 0.0 and rec.fscore == 1.0
        agg = json.loads((out / "aggregate.json").read_text())
        assert agg["aggregate"]["cd_x1e4"] == 0.0

    def test_csv_columns_documented_order(self, tmp_path):
        pred, gt = self._dirs(tmp_path)
        out = tmp_path / "report"
        cli.main(["eval", "--pred", str(pred), "--gt", str(gt), "--out", str(out)])
        lines = (out / "report.csv").read_text().splitlines()
        assert lines[1].split(",") == metrics.CSV_COLUMNS

    def test_missing_gt_exits_2(self, tmp_path, capsys):
        pred, gt = self._dirs(tmp_path)
        (gt / "s1.xyz").unlink()
        assert cli.main(["eval", "--pred", str(pred), "--gt", str(gt),
                         "--out", str(tmp_path / "r")]) == 2
        assert "s1" in capsys.readouterr().err

    def test_no_gt_mode(self, tmp_path):
        rng = np.random.default_rng(1)
        pred, refs, inputs = tmp_path / "pred", tmp_path / "refs", tmp_path / "inputs"
        for d in (pred, refs, inputs):
            d.mkdir()
        for i in range(2):
            cloudio.write_xyz(inputs / f"s{i}.xyz", rng.uniform(size=(30, 3)))
            cloudio.write_xyz(pred / f"s{i}.xyz", rng.uniform(size=(300, 3)))
        cloudio.write_xyz(refs / "r0.xyz", rng.uniform(size=(50, 3)))
        out = tmp_path / "report"
        assert cli.main(["eval", "--pred", str(pred), "--no-gt", "--refs", str(refs),
                         "--inputs", str(inputs), "--out", str(out)]) == 0
        report = metrics.report_from_csv((out / "report.csv").read_text())
        assert report.records[0].fidelity is not None
        assert report.records[1].consistency is not None


class TestGradcheck:
    def test_default_suite_exits_0(self, capsys):
        assert cli.main(["gradcheck", "--seed", "0", "--samples", "1"]) == 0
        out = capsys.readouterr().out
        # every parameter group is listed
        for group in ("encoder1", "fsnet", "decoder", "sparse_enc", "expansion", "offset"):
            assert group in out

    def test_corrupted_gradient_exits_1(self):
        assert cli.main(["gradcheck", "--seed", "0", "--samples", "1", "--corrupt"]) == 1


class TestInspect:
    def test_heatmap_and_patch_outputs(self, workspace, tmp_path):
        inp = workspace["data"] / "partial_0000.xyz"
        out = tmp_path / "inspect"
        assert cli.main(["inspect", "--checkpoint", str(workspace["ckpt"]),
                         "--input", str(inp), "--heatmap-channel", "1",
                         "--patch", "0,0,4,4", "--out", str(out)]) == 0
        n_input = len(cloudio.read_xyz(inp))
        csv_lines = (out / "heatmap_ch1.csv").read_text().splitlines()
        assert len(csv_lines) == 1 + n_input
        pgm = (out / "heatmap_ch1.pgm").read_text().splitlines()
        side = int(np.ceil(np.sqrt(n_input)))
        assert pgm[1] == f"{side} {side}"
        patch = cloudio.read_xyz(out / "patch.xyz")
        assert patch.shape == (16, 3)  # the full 4x4 coarse grid

    def test_bad_channel_exits_2(self, workspace, tmp_path):
        assert cli.main(["inspect", "--checkpoint", str(workspace["ckpt"]),
                         "--input", str(workspace["data"] / "partial_0000.xyz"),
                         "--heatmap-channel", "99", "--out", str(tmp_path / "i")]) == 2

    def test_bad_patch_window_exits_2(self, workspace, tmp_path):
        assert cli.main(["inspect", "--checkpoint", str(workspace["ckpt"]),
                         "--input", str(workspace["data"] / "partial_0000.xyz"),
                         "--patch", "0,0,99,99", "--out", str(tmp_path / "i")]) == 2

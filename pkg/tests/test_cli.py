import csv
import json

import numpy as np
import pytest

from rganet.cli import main
from rganet.data import SynthSpec, load_mask, save_mask, synth_dataset
from rganet.train import NumericalError, load_train_config, parse_train_config, train

TRAIN_CFG = """\
# tiny desk run
model.scales = 2
model.k = 4
model.ess_sizes = 1,1
model.input_size = 16x24
model.expansion = 2
loss.kind = focal
optim.lr = 3e-3
train.epochs = {epochs}
train.batch_size = 2
train.seed = 0
train.checkpoint_every = 2
data.synth.count = 2
data.synth.height = 16
data.synth.width = 24
data.synth.seed = 4
output.dir = run
"""


@pytest.fixture
def trained(tmp_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text(TRAIN_CFG.format(epochs=4))
    assert main(["train", str(cfg)]) == 0
    return tmp_path / "run"


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestTrain:
    def test_outputs(self, trained):
        assert (trained / "model.rgan").exists()
        assert (trained / "epoch_0002.rgan").exists() and (trained / "epoch_0004.rgan").exists()
        rows = read_csv(trained / "train_log.csv")
        assert [r["epoch"] for r in rows] == ["1", "2", "3", "4"]
        assert set(rows[0]) == {"epoch", "loss", "jaccard", "precision", "recall"}

    def test_same_seed_same_curve(self, tmp_path):
        cfg = parse_train_config(TRAIN_CFG.format(epochs=3), tmp_path)
        _, h1 = train(cfg)
        _, h2 = train(cfg)
        assert [r["loss"] for r in h1] == [r["loss"] for r in h2]

    def test_bad_alphas_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(TRAIN_CFG.format(epochs=1) + "loss.alphas = 0.3,0.3,0.3\n")
        assert main(["train", str(cfg)]) == 1
        assert "sum to 1" in capsys.readouterr().err
        assert not (tmp_path / "run").exists()

    def test_unknown_section(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(TRAIN_CFG.format(epochs=1) + "trainer.x = 1\n")
        assert main(["train", str(cfg)]) == 1

    def test_missing_config_file(self, tmp_path):
        assert main(["train", str(tmp_path / "nope.cfg")]) == 2

    def test_missing_train_dir(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("model.scales = 2\nmodel.ess_sizes = 1,1\nmodel.input_size = 16x24\ndata.train_dir = nowhere\n")
        assert main(["train", str(cfg)]) == 2

    def test_non_finite_loss_aborts(self, tmp_path, monkeypatch):
        import rganet.train as tr
        cfg = parse_train_config(TRAIN_CFG.format(epochs=2), tmp_path)

        real = tr.loss_fn

        def nan_loss(probs, target, lc):
            out = real(lc)(probs, target, lc)
            out.data = np.asarray(np.nan, out.data.dtype)
            return out

        monkeypatch.setattr(tr, "loss_fn", lambda lc: nan_loss)
        with pytest.raises(NumericalError, match="epoch 1"):
            train(cfg)

    def test_numerical_error_exit_code(self, tmp_path, monkeypatch):
        import rganet.cli as cli

        def boom(cfg):
            raise NumericalError("loss is nan")

        monkeypatch.setattr(cli, "run_training", boom)
        cfg = tmp_path / "t.cfg"
        cfg.write_text(TRAIN_CFG.format(epochs=1))
        assert main(["train", str(cfg)]) == 3

    def test_train_dir_config(self, tmp_path):
        synth_dataset(SynthSpec(count=2, height=16, width=24), 0, tmp_path / "data")
        text = TRAIN_CFG.format(epochs=1).replace("data.synth", "#").replace("output.dir = run", "data.train_dir = data")
        cfg = tmp_path / "d.cfg"
        cfg.write_text(text)
        loaded = load_train_config(cfg)
        assert loaded.train_dir == (tmp_path / "data").resolve() and loaded.synth is None
        assert main(["train", str(cfg)]) == 0


class TestInfer:
    def test_mask_and_probs(self, trained, tmp_path):
        img = tmp_path / "data" / "images" / "synth_0000.png"
        synth_dataset(SynthSpec(count=1, height=16, width=24), 4, tmp_path / "data")
        out = tmp_path / "pred.png"
        assert main(["infer", str(trained / "model.rgan"), str(img), str(out), "--probs"]) == 0
        mask = load_mask(out)
        assert mask.shape == (16, 24) and set(np.unique(mask)) <= {0, 1, 2}
        probs = [load_mask(tmp_path / f"pred_prob{c}.png").astype(int) for c in range(3)]
        assert np.abs(sum(probs) - 255).max() <= 2

    def test_deterministic(self, trained, tmp_path):
        synth_dataset(SynthSpec(count=1, height=16, width=24), 4, tmp_path / "data")
        img = tmp_path / "data" / "images" / "synth_0000.png"
        main(["infer", str(trained / "model.rgan"), str(img), str(tmp_path / "a.png")])
        main(["infer", str(trained / "model.rgan"), str(img), str(tmp_path / "b.png")])
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()

    def test_size_mismatch(self, trained, tmp_path, capsys):
        synth_dataset(SynthSpec(count=1, height=32, width=32), 0, tmp_path / "big")
        rc = main(["infer", str(trained / "model.rgan"), str(tmp_path / "big/images/synth_0000.png"), str(tmp_path / "o.png")])
        assert rc == 2
        assert "16x24" in capsys.readouterr().err


class TestEval:
    @pytest.fixture
    def masks(self, tmp_path):
        synth_dataset(SynthSpec(count=3), 2, tmp_path / "gt")
        return tmp_path / "gt"

    def test_self_comparison(self, masks, tmp_path):
        out = tmp_path / "scores.csv"
        assert main(["eval", str(masks), str(masks), "--out", str(out), "--jsonl", str(tmp_path / "s.jsonl")]) == 0
        rows = read_csv(out)
        assert list(rows[0]) == ["filename", "accuracy", "precision", "recall", "jaccard", "dice", "mcc", "fbeta", "mgrid"]
        assert [r["filename"] for r in rows][-1] == "mean" and len(rows) == 4
        for col in ("accuracy", "precision", "recall", "jaccard", "dice", "mcc", "fbeta", "mgrid"):
            assert float(rows[-1][col]) == pytest.approx(1.0, abs=1e-9)
        records = [json.loads(line) for line in (tmp_path / "s.jsonl").read_text().splitlines()]
        assert records[-1]["filename"] == "mean" and len(records) == 4

    def test_no_evidence_policy(self, tmp_path):
        for d in ("p", "g"):
            (tmp_path / d).mkdir()
            save_mask(tmp_path / d / "empty.png", np.zeros((24, 24), np.uint8))
            m = np.zeros((24, 24), np.uint8)
            m[:12, :12] = 2
            save_mask(tmp_path / d / "full.png", m)
        save_mask(tmp_path / "p" / "full.png", np.zeros((24, 24), np.uint8))
        for policy, expected in (("skip", 0.0), ("one", 0.5)):
            out = tmp_path / f"{policy}.csv"
            main(["eval", str(tmp_path / "p"), str(tmp_path / "g"), "--out", str(out), "--mgrid-empty", policy])
            rows = read_csv(out)
            assert rows[0]["filename"] == "empty.png" and rows[0]["mgrid"] == ""
            assert float(rows[-1]["mgrid"]) == pytest.approx(expected)

    def test_split_prediction_pair(self, tmp_path):
        from test_metrics import two_object_masks
        gt, a, b = two_object_masks()
        for d, m in (("gt", gt), ("a", a), ("b", b)):
            (tmp_path / d).mkdir()
            save_mask(tmp_path / d / "x.png", m)
        scores = {}
        for d in ("a", "b"):
            main(["eval", str(tmp_path / d), str(tmp_path / "gt"), "--out", str(tmp_path / f"{d}.csv")])
            scores[d] = read_csv(tmp_path / f"{d}.csv")[0]
        assert scores["a"]["dice"] == scores["b"]["dice"]
        assert float(scores["b"]["mgrid"]) > float(scores["a"]["mgrid"])

    def test_invalid_regulator(self, masks, capsys):
        assert main(["eval", str(masks), str(masks), "--cm", "0.4", "--fm", "0.5"]) == 1
        assert "C_m" in capsys.readouterr().err

    def test_unmatched_files_skipped(self, masks, tmp_path, caplog):
        pred = tmp_path / "pred"
        pred.mkdir()
        m = load_mask(masks / "masks" / "synth_0000.png")
        save_mask(pred / "synth_0000.png", m)
        save_mask(pred / "stray.png", m)
        out = tmp_path / "o.csv"
        assert main(["eval", str(pred), str(masks), "--out", str(out)]) == 0
        assert [r["filename"] for r in read_csv(out)] == ["synth_0000.png", "mean"]
        assert "stray.png" in caplog.text

    def test_no_matches(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        assert main(["eval", str(tmp_path / "a"), str(tmp_path / "b")]) == 2

    def test_dump_regulator(self, tmp_path):
        out = tmp_path / "reg.csv"
        assert main(["eval", "--dump-regulator", str(out)]) == 0
        rows = read_csv(out)
        assert len(rows) == 1001 and list(rows[0]) == ["f", "gamma"]
        assert float(rows[500]["gamma"]) == pytest.approx(0.525)

    def test_missing_dirs_is_usage_error(self):
        assert main(["eval"]) == 1


class TestReportAndSynth:
    def test_report_checkpoint_csv(self, trained, capsys):
        assert main(["report", str(trained / "model.rgan"), "--csv"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "module,params,flops"
        rows = [line.split(",") for line in lines[1:]]
        assert rows[-1][0] == "total"
        assert int(rows[-1][1]) == sum(int(r[1]) for r in rows[:-1])
        assert int(rows[-1][2]) == sum(int(r[2]) for r in rows[:-1])

    def test_report_overrides(self, capsys):
        assert main(["report", "--set", "scales=2", "--set", "ess_sizes=1,1", "--set", "input_size=32x32"]) == 0
        assert "RGANet2" in capsys.readouterr().out

    def test_report_bad_override(self):
        assert main(["report", "--set", "scales"]) == 1
        assert main(["report", "--set", "scales=3"]) == 1

    def test_synth(self, tmp_path):
        assert main(["synth", str(tmp_path / "s"), "--count", "2", "--size", "20x30", "--seed", "3"]) == 0
        masks = sorted((tmp_path / "s" / "masks").glob("*.png"))
        assert len(masks) == 2 and load_mask(masks[0]).shape == (20, 30)

    def test_usage_errors(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1
        with pytest.raises(SystemExit) as exc:
            main(["synth", "x", "--size", "big"])
        assert exc.value.code == 1

    def test_help_documents_columns(self, capsys):
        with pytest.raises(SystemExit):
            main(["eval", "--help"])
        assert "filename,accuracy,precision,recall,jaccard,dice,mcc,fbeta,mgrid" in capsys.readouterr().out

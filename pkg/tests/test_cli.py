"""End-to-end CLI: subcommand pipeline, exit codes, idempotence, parity."""

import numpy as np
import pytest

from scgi_reid.cli import main
from scgi_reid.nn import load_container, save_container, strip_parameters

TINY_TRAIN_SETS = [
    "--set", "model.dim=16", "--set", "model.word_dim=16", "--set", "model.heads=2",
    "--set", "model.image_blocks=1", "--set", "model.text_blocks=1",
    "--set", "cff.blocks=1", "--set", "cff.heads=2",
    "--set", "train.epochs=2", "--set", "train.steps_per_epoch=2",
    "--set", "train.p_ids=4", "--set", "train.k_per=2",
    "--set", "train.warmup_epochs=1",
]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    path = root / "data"
    code = main(["synth-data", "--ids", "6", "--per-id", "4", "--cams", "2",
                 "--seed", "9", "--out", str(path)])
    assert code == 0
    return path


@pytest.fixture(scope="module")
def checkpoint(data_dir, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "model.ckpt"
    code = main(["train", "--data", str(data_dir), "--out", str(path)] + TINY_TRAIN_SETS)
    assert code == 0
    return path


class TestHelp:
    @pytest.mark.parametrize("command", [
        [], ["synth-data"], ["caption"], ["train"], ["eval"], ["ablate"], ["inspect"],
    ])
    def test_help_exits_zero(self, command, capsys):
        with pytest.raises(SystemExit) as exc:
            main(command + ["--help"])
        assert exc.value.code == 0
        capsys.readouterr()

    def test_unknown_flag_exits_two(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["synth-data", "--bogus"])
        assert exc.value.code == 2
        capsys.readouterr()


class TestSynthData:
    def test_writes_all_artifacts(self, data_dir):
        for name in ("manifest.tsv", "captions.tsv", "images.bin", "vocab.txt", "domains.txt"):
            assert (data_dir / name).exists()

    def test_idempotent_given_same_seed(self, data_dir, tmp_path):
        other = tmp_path / "again"
        assert main(["synth-data", "--ids", "6", "--per-id", "4", "--cams", "2",
                     "--seed", "9", "--out", str(other)]) == 0
        for name in ("manifest.tsv", "captions.tsv", "images.bin", "vocab.txt"):
            assert (data_dir / name).read_bytes() == (other / name).read_bytes()


class TestCaption:
    def test_rewrites_captions_deterministically(self, data_dir, tmp_path):
        out1 = tmp_path / "caps1.tsv"
        out2 = tmp_path / "caps2.tsv"
        base = ["caption", "--manifest", str(data_dir / "manifest.tsv"),
                "--corrupt-p", "0.5", "--seed", "4"]
        assert main(base + ["--out", str(out1)]) == 0
        assert main(base + ["--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_zero_corruption_matches_bundled_captions(self, data_dir, tmp_path):
        out = tmp_path / "caps.tsv"
        assert main(["caption", "--manifest", str(data_dir / "manifest.tsv"),
                     "--corrupt-p", "0", "--out", str(out)]) == 0
        assert out.read_bytes() == (data_dir / "captions.tsv").read_bytes()

    def test_missing_manifest_exits_one(self, tmp_path, capsys):
        code = main(["caption", "--manifest", str(tmp_path / "nope.tsv"),
                     "--out", str(tmp_path / "o.tsv")])
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestTrainEval:
    def test_train_writes_checkpoint_runlog_and_figure(self, checkpoint):
        assert checkpoint.exists()
        assert checkpoint.with_suffix(".runlog.tsv").exists()
        assert checkpoint.with_suffix(".loss.png").exists()

    def test_eval_writes_report_and_figure(self, checkpoint, data_dir, tmp_path):
        report = tmp_path / "report.txt"
        ranked = tmp_path / "ranked.tsv"
        code = main(["eval", "--checkpoint", str(checkpoint), "--data", str(data_dir),
                     "--report", str(report), "--dump-ranked", str(ranked)])
        assert code == 0
        text = report.read_text()
        assert text.startswith("retrieval-report v1")
        assert "map=" in text and "cmc10=" in text
        assert (tmp_path / "report.txt.png").exists()
        header = ranked.read_text().splitlines()[0]
        assert header == "query_id\trank\tgallery_id\trelevant"

    def test_eval_is_idempotent(self, checkpoint, data_dir, tmp_path):
        r1, r2 = tmp_path / "r1.txt", tmp_path / "r2.txt"
        for r in (r1, r2):
            assert main(["eval", "--checkpoint", str(checkpoint), "--data", str(data_dir),
                         "--report", str(r)]) == 0
        assert r1.read_bytes() == r2.read_bytes()

    def test_eval_identical_after_stripping_cgi(self, checkpoint, data_dir, tmp_path):
        arrays, meta = load_container(checkpoint)
        stripped_path = tmp_path / "stripped.ckpt"
        save_container(stripped_path, strip_parameters(arrays, ("cgi.",)), meta=meta)
        full_report = tmp_path / "full.txt"
        stripped_report = tmp_path / "stripped.txt"
        assert main(["eval", "--checkpoint", str(checkpoint), "--data", str(data_dir),
                     "--report", str(full_report)]) == 0
        assert main(["eval", "--checkpoint", str(stripped_path), "--data", str(data_dir),
                     "--report", str(stripped_report)]) == 0
        full_lines = full_report.read_text().splitlines()
        stripped_lines = stripped_report.read_text().splitlines()
        # identical except the checkpoint hash line
        for a, b in zip(full_lines, stripped_lines):
            if a.startswith("checkpoint_hash="):
                continue
            assert a == b

    def test_train_is_deterministic_across_processes(self, data_dir, tmp_path):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        for out in (a, b):
            assert main(["train", "--data", str(data_dir), "--out", str(out)]
                        + TINY_TRAIN_SETS) == 0
        assert a.read_bytes() == b.read_bytes()
        assert a.with_suffix(".runlog.tsv").read_bytes() == b.with_suffix(".runlog.tsv").read_bytes()

    def test_missing_checkpoint_exits_one(self, data_dir, tmp_path, capsys):
        code = main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"),
                     "--data", str(data_dir), "--report", str(tmp_path / "r.txt")])
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestInspect:
    def test_prints_groups_shapes_and_hash(self, checkpoint, capsys):
        assert main(["inspect", "--checkpoint", str(checkpoint)]) == 0
        out = capsys.readouterr().out
        assert "config_hash:" in out
        assert "base" in out and "new" in out
        assert "image_encoder.patch_embed.weight" in out
        assert "parameters: total=" in out


class TestAblateSmoke:
    def test_components_sweep_writes_table_and_figure(self, data_dir, tmp_path):
        out = tmp_path / "ablation"
        code = main(["ablate", "--data", str(data_dir), "--seeds", "1,2",
                     "--out", str(out)] + TINY_TRAIN_SETS)
        assert code == 0
        table = (out / "ablation_components.tsv").read_text().splitlines()
        assert table[0] == "arm\tseed\tmap\trank1"
        assert len(table) == 1 + 4 * 2  # four arms x two seeds
        assert (out / "ablation_components.png").exists()

    def test_corruption_sweep_writes_monotonicity_report(self, data_dir, tmp_path, capsys):
        out = tmp_path / "corruption"
        code = main(["ablate", "--data", str(data_dir), "--seeds", "1,2",
                     "--out", str(out), "--sweep", "corruption",
                     "--corrupt-ps", "0,0.5"] + TINY_TRAIN_SETS)
        assert code == 0
        stdout = capsys.readouterr().out
        assert "monotone" in stdout
        assert (out / "corruption.tsv").exists()
        assert (out / "corruption.png").exists()

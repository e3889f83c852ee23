import json
from pathlib import Path

import numpy as np
import pytest

from ganinpaint import cli
from ganinpaint.autodiff.tensor import make_result
from ganinpaint.data import load_image, sha256_file
from ganinpaint.gan import Gan, GanConfig, checkpoint_bytes, load_checkpoint
from ganinpaint.masks import load_mask

TINY = ["--latent-dim", "8", "--base-feature-maps", "4", "--batch-size", "8"]


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("gen-data", "--family", "toy_faces", "--count", 24, "--size", 16, "--seed", 7, "--out", root / "data") == 0
    assert run("train", "--data", root / "data", "--checkpoint", root / "c.bin", "--epochs", 2, *TINY) == 0
    return root


def without_wall_time(path):
    d = json.loads(Path(path).read_text())
    d.pop("wall_time_s")
    d["outputs"] = [Path(p).name for p in d["outputs"]]
    d["inputs"] = sorted(d["inputs"].values())
    for k in ("out", "checkpoint", "data", "images", "metrics"):
        d["config"].pop(k, None)
    return d


def test_gen_data_outputs_and_rerun(workspace, tmp_path):
    manifest = json.loads((workspace / "data" / "manifest.json").read_text())
    assert len(manifest["files"]) == 24
    assert run("gen-data", "--family", "toy_faces", "--count", 24, "--size", 16, "--seed", 7, "--out", tmp_path / "d") == 0
    assert json.loads((tmp_path / "d" / "manifest.json").read_text()) == manifest


def test_gen_data_invalid_family(tmp_path, capsys):
    assert run("gen-data", "--family", "cars", "--out", tmp_path / "d") == 2
    err = capsys.readouterr().err
    for family in ("toy_faces", "digits_grid", "blobs"):
        assert family in err


def test_train_metrics_and_manifest(workspace):
    lines = (workspace / "c.metrics.jsonl").read_text().splitlines()
    assert len(lines) == 2
    assert set(json.loads(lines[0])) == {"epoch", "d_loss", "g_loss", "d_accuracy", "wall_time_ms"}
    manifest = json.loads((workspace / "c.manifest.json").read_text())
    assert manifest["config"]["epochs"] == 2
    assert manifest["version"]
    assert str(workspace / "data" / "manifest.json") in manifest["inputs"]


def test_train_zero_epochs_is_initialization(workspace, tmp_path):
    assert run("train", "--data", workspace / "data", "--checkpoint", tmp_path / "z.bin", "--epochs", 0, *TINY) == 0
    cfg = GanConfig(latent_dim=8, base_feature_maps=4, batch_size=8, epochs=0, image_size=16, channels=1)
    assert (tmp_path / "z.bin").read_bytes() == checkpoint_bytes(Gan.initialize(cfg))
    assert (tmp_path / "z.metrics.jsonl").read_text() == ""


def test_resume_equals_uninterrupted(workspace, tmp_path):
    ckpt = tmp_path / "r.bin"
    assert run("train", "--data", workspace / "data", "--checkpoint", ckpt, "--epochs", 1, *TINY) == 0
    assert run("train", "--data", workspace / "data", "--checkpoint", ckpt, "--epochs", 2, "--resume", *TINY) == 0
    assert ckpt.read_bytes() == (workspace / "c.bin").read_bytes()
    assert len((tmp_path / "r.metrics.jsonl").read_text().splitlines()) == 2


def test_train_missing_dataset(tmp_path, capsys):
    assert run("train", "--data", tmp_path / "nope", "--checkpoint", tmp_path / "c.bin") == 2
    assert "manifest" in capsys.readouterr().err


def test_config_file_precedence(workspace, tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("# training defaults\nepochs = 1\nlatent_dim = 8\nbase_feature_maps = 4\nbatch_size = 12\n")
    out = tmp_path / "p.bin"
    assert run("train", "--data", workspace / "data", "--checkpoint", out, "--config", cfg, "--batch-size", 8) == 0
    gan = load_checkpoint(out)
    assert (gan.epoch, gan.config.batch_size, gan.config.latent_dim) == (1, 8, 8)
    (tmp_path / "bad.txt").write_text("no_such_option = 3\n")
    assert run("train", "--data", workspace / "data", "--checkpoint", out, "--config", tmp_path / "bad.txt") == 2


def test_make_mask(tmp_path):
    assert run("make-mask", "--family", "random", "--size", 16, "--seed", 2, "--out", tmp_path / "m.png") == 0
    assert int((load_mask(tmp_path / "m.png") == 0).sum()) == int(256 * 0.8)
    assert run("make-mask", "--family", "blob", "--out", tmp_path / "x.png") == 2


def inpaint(workspace, out, *extra):
    images = [workspace / "data" / "000000.png", workspace / "data" / "000001.png"]
    return run("inpaint", "--checkpoint", workspace / "c.bin", "--images", *images,
               "--iterations", 5, "--restarts", 2, "--out", out, *extra)


def test_inpaint_outputs_and_determinism(workspace, tmp_path):
    assert inpaint(workspace, tmp_path / "a", "--mode", "overlay") == 0
    assert inpaint(workspace, tmp_path / "b", "--mode", "overlay") == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(
        f"{s}_{kind}" for s in ("000000", "000001")
        for kind in ("corrupted.png", "mask.png", "generated.png", "overlay.png", "trajectory.jsonl", "manifest.json")
    )
    for name in names:
        if name.endswith(".png") or name.endswith(".jsonl"):
            assert sha256_file(tmp_path / "a" / name) == sha256_file(tmp_path / "b" / name)
    assert without_wall_time(tmp_path / "a" / "000000_manifest.json") == without_wall_time(
        tmp_path / "b" / "000000_manifest.json"
    )
    # overlay equals the input exactly on known pixels
    mask = load_mask(tmp_path / "a" / "000000_mask.png")
    y = load_image(tmp_path / "a" / "000000_corrupted.png")
    result = load_image(tmp_path / "a" / "000000_overlay.png")
    assert np.array_equal(result[:, mask == 1], y[:, mask == 1])
    manifest = json.loads((tmp_path / "a" / "000000_manifest.json").read_text())
    assert manifest["seeds"]["mode"] == "overlay"
    assert manifest["config"]["iterations"] == 5


def test_inpaint_no_prior(workspace, tmp_path):
    assert inpaint(workspace, tmp_path / "n", "--no-prior", "--mask-family", "half") == 0
    rows = [json.loads(x) for x in (tmp_path / "n" / "000001_trajectory.jsonl").read_text().splitlines()]
    assert len(rows) == 5
    assert all(r["prior"] == 0.0 for r in rows)
    assert (tmp_path / "n" / "000001_blend.png").is_file()


def test_inpaint_with_mask_file_and_dimension_mismatch(workspace, tmp_path, capsys):
    run("make-mask", "--family", "center", "--size", 16, "--out", tmp_path / "m.png")
    assert inpaint(workspace, tmp_path / "o", "--mask", tmp_path / "m.png") == 0
    run("gen-data", "--count", 1, "--size", 32, "--out", tmp_path / "big")
    code = run("inpaint", "--checkpoint", workspace / "c.bin", "--images", tmp_path / "big" / "000000.png",
               "--out", tmp_path / "x")
    assert code == 2
    err = capsys.readouterr().err
    assert "(1, 32, 32)" in err and "(1, 16, 16)" in err


def test_evaluate_report(workspace, tmp_path):
    args = ["evaluate", "--checkpoint", workspace / "c.bin", "--data", workspace / "data", "--limit", 3,
            "--iterations", 3, "--restarts", 1, "--families", "center", "random",
            "--methods", "ours_blend", "mean_fill", "nn_fill", "--train-data", workspace / "data"]
    assert run(*args, "--out", tmp_path / "r1.json") == 0
    assert run(*args, "--out", tmp_path / "r2.json") == 0
    r1 = json.loads((tmp_path / "r1.json").read_text())
    r2 = json.loads((tmp_path / "r2.json").read_text())
    assert r1["cells"] == r2["cells"]
    assert set(r1["cells"]) == {f"{m}/{f}" for m in ("ours_blend", "mean_fill", "nn_fill") for f in ("center", "random")}
    for cell in r1["cells"].values():
        assert len(cell["psnr"]) == 3
        assert cell["aggregate"]["psnr"] == pytest.approx(sum(cell["psnr"]) / 3, abs=1e-12)


def test_grad_check_passes(capsys):
    assert run("grad-check", "--points", 3) == 0
    out = capsys.readouterr().out
    for name in list(cli.GRAD_CHECK_CASES) + ["total_loss(z)"]:
        assert name in out


def _broken_square(rng):
    x = rng.normal(size=(3, 4))

    def builder(t):
        sq = make_result(t.data ** 2, (t,), lambda g: (3.0 * t.data * g,), "broken_square")
        return sq.sum()

    return [(builder, x)]


def test_grad_check_flags_broken_op(monkeypatch, capsys):
    cases = {"relu": cli.GRAD_CHECK_CASES["relu"], "broken_square": _broken_square}
    monkeypatch.setattr(cli, "GRAD_CHECK_CASES", cases)
    assert run("grad-check", "--points", 2) == 1
    captured = capsys.readouterr()
    assert "broken_square" in captured.err
    assert "FAIL" in captured.out

"""Command-line interface: subcommand chaining, exit codes, determinism."""

import json
from pathlib import Path

import numpy as np
import pytest

from ssgdit.cli import build_parser, run
from ssgdit.image import Image, save_png


def invoke(argv):
    return run(argv)


@pytest.fixture
def gray_png(tmp_path, rng):
    path = tmp_path / "gray.png"
    save_png(Image(np.full((48, 48, 1), 0.5)), path)
    return path


def synth_args(tmp_path, out="feat.ssgf", image_size="48x48"):
    return [
        "synth-features", "--seed", "7", "--grid", "16x16", "--dim", "8",
        "--center", "0.3,0.6", "--image-size", image_size,
        "--out", str(tmp_path / out),
    ]


def test_synth_then_prompt_succeeds(tmp_path, gray_png):
    assert invoke(synth_args(tmp_path)) == 0
    out = tmp_path / "prompt.png"
    code = invoke([
        "prompt", "--image", str(gray_png), "--features", str(tmp_path / "feat.ssgf"),
        "--out", str(out),
    ])
    assert code == 0
    assert out.exists()
    from ssgdit.image import load_png

    img = load_png(out)
    assert (img.h, img.w) == (48, 48)


def test_prompt_dimension_mismatch_diagnostic(tmp_path, gray_png, capsys):
    assert invoke(synth_args(tmp_path, image_size="32x32")) == 0
    code = invoke([
        "prompt", "--image", str(gray_png), "--features", str(tmp_path / "feat.ssgf"),
        "--out", str(tmp_path / "p.png"),
    ])
    assert code == 1
    err = capsys.readouterr().err
    assert "32x32" in err and "48x48" in err


def test_missing_feature_file_is_io_error(tmp_path, gray_png):
    code = invoke([
        "prompt", "--image", str(gray_png), "--features", str(tmp_path / "nope.ssgf"),
        "--out", str(tmp_path / "p.png"),
    ])
    assert code == 2


def test_corrupt_feature_file_is_io_error(tmp_path, gray_png):
    bad = tmp_path / "bad.ssgf"
    bad.write_bytes(b"XXXX" + b"\x00" * 40)
    code = invoke([
        "prompt", "--image", str(gray_png), "--features", str(bad),
        "--out", str(tmp_path / "p.png"),
    ])
    assert code == 2


def test_reruns_byte_identical(tmp_path, gray_png):
    invoke(synth_args(tmp_path, out="a.ssgf"))
    invoke(synth_args(tmp_path, out="b.ssgf"))
    assert (tmp_path / "a.ssgf").read_bytes() == (tmp_path / "b.ssgf").read_bytes()

    args = [
        "prompt", "--image", str(gray_png), "--features", str(tmp_path / "a.ssgf"),
        "--dump-intermediates", str(tmp_path / "dump"),
    ]
    invoke(args + ["--out", str(tmp_path / "p1.png")])
    first = (tmp_path / "dump" / "fused.f32").read_bytes()
    invoke(args + ["--out", str(tmp_path / "p2.png")])
    assert (tmp_path / "p1.png").read_bytes() == (tmp_path / "p2.png").read_bytes()
    assert (tmp_path / "dump" / "fused.f32").read_bytes() == first
    assert (tmp_path / "dump" / "m_attn.png").exists()


def test_unknown_flag_exits_one(tmp_path):
    assert invoke(["synth-features", "--bogus", "1", "--out", str(tmp_path / "x.ssgf")]) == 1


def test_bad_center_format_exits_one(tmp_path):
    assert invoke([
        "synth-features", "--center", "0.5", "--out", str(tmp_path / "x.ssgf"),
    ]) == 1


def test_help_lists_every_flag(capsys):
    parser = build_parser()
    expected = {
        "synth-features": ["--seed", "--grid", "--dim", "--center", "--image-size", "--out", "--config"],
        "prompt": ["--image", "--features", "--out", "--gamma", "--no-pool", "--blur-sigma",
                   "--eps", "--branches", "--dump-intermediates", "--config"],
        "train": ["--phase", "--seed", "--steps", "--batch", "--lr", "--dataset-size",
                  "--out", "--init", "--report", "--config"],
        "sample": ["--ckpt", "--caption-id", "--seed", "--out", "--config"],
        "gradcheck": ["--seed", "--config"],
    }
    for command, flags in expected.items():
        with pytest.raises(SystemExit) as exc:
            parser.parse_args([command, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for flag in flags:
            assert flag in text, f"{command} help is missing {flag}"


def test_config_file_defaults_and_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 9, "dim": 4}))
    out = tmp_path / "f.ssgf"
    code = invoke(["synth-features", "--config", str(cfg), "--seed", "11",
                   "--grid", "4x4", "--image-size", "8x8", "--out", str(out)])
    assert code == 0
    err = capsys.readouterr().err
    resolved = json.loads(err.split("config[synth-features]: ", 1)[1])
    assert resolved["seed"] == 11  # explicit flag wins
    assert resolved["dim"] == 4  # file fills the rest


def test_config_file_unknown_key_rejected(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"wat": 1}))
    assert invoke(["synth-features", "--config", str(cfg), "--out", str(tmp_path / "f.ssgf")]) == 1


def test_train_adapter_requires_init(tmp_path):
    code = invoke(["train", "--phase", "adapter", "--steps", "2",
                   "--out", str(tmp_path / "m.ssgm")])
    assert code == 1


def test_train_and_sample_smoke(tmp_path):
    ckpt = tmp_path / "backbone.ssgm"
    code = invoke(["train", "--phase", "backbone", "--seed", "1", "--steps", "3",
                   "--batch", "2", "--dataset-size", "4", "--out", str(ckpt)])
    assert code == 0
    assert ckpt.exists()
    assert (tmp_path / "backbone.ssgm.train.csv").exists()

    ckpt2 = tmp_path / "adapter.ssgm"
    code = invoke(["train", "--phase", "adapter", "--seed", "1", "--steps", "3",
                   "--batch", "2", "--dataset-size", "4", "--init", str(ckpt),
                   "--out", str(ckpt2)])
    assert code == 0

    out_dir = tmp_path / "samples"
    code = invoke(["sample", "--ckpt", str(ckpt2), "--caption-id", "4",
                   "--seed", "0", "--out", str(out_dir)])
    assert code == 0
    frames = sorted(out_dir.glob("frame*.png"))
    assert len(frames) == 4
    latent = np.fromfile(out_dir / "latent.f32", dtype="<f4")
    assert latent.size == 4 * 8 * 8 * 4

    # byte-identical re-run
    out_dir2 = tmp_path / "samples2"
    invoke(["sample", "--ckpt", str(ckpt2), "--caption-id", "4",
            "--seed", "0", "--out", str(out_dir2)])
    assert (out_dir2 / "latent.f32").read_bytes() == (out_dir / "latent.f32").read_bytes()


def test_sample_caption_out_of_range(tmp_path):
    ckpt = tmp_path / "m.ssgm"
    invoke(["train", "--phase", "backbone", "--seed", "1", "--steps", "2",
            "--batch", "2", "--dataset-size", "4", "--out", str(ckpt)])
    assert invoke(["sample", "--ckpt", str(ckpt), "--caption-id", "99",
                   "--seed", "0", "--out", str(tmp_path / "s")]) == 1

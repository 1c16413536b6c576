import hashlib

import numpy as np
import pytest

from deepkriging.cli import UsageError, main, parse_config_text
from deepkriging.image_io import read_image, write_image

TINY = "# tiny network\nK = 1\nfeature_depth = 8\nunits = 1\nbatch_size = 2\n"


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return p


def test_config_parsing():
    cfg = parse_config_text("iterations = 5  # five\n\nscales = 2, 3\nstrict = yes\n")
    assert cfg == {"iterations": 5, "scales": (2, 3), "strict": True}
    with pytest.raises(UsageError):
        parse_config_text("colour = red\n")
    with pytest.raises(UsageError):
        parse_config_text("iterations = many\n")


def test_degrade_and_bicubic_constant(tmp_path):
    write_image(tmp_path / "c.pgm", np.full((30, 30), 120.0))
    assert main(["degrade", str(tmp_path / "c.pgm"), str(tmp_path / "d.pgm"), "--scale", "3"]) == 0
    assert np.all(read_image(tmp_path / "d.pgm") == 120)
    assert read_image(tmp_path / "d_hr.pgm").shape == (30, 30)
    assert main(["sr", str(tmp_path / "c.pgm"), str(tmp_path / "s.pgm"), "--method", "bicubic", "--scale", "2"]) == 0
    assert np.all(read_image(tmp_path / "s.pgm") == 120)


def test_colour_sr(tmp_path, rng):
    write_image(tmp_path / "c.png", rng.integers(0, 256, (12, 12, 3)).astype(float))
    assert main(["sr", str(tmp_path / "c.png"), str(tmp_path / "o.png"), "--method", "krige", "--scale", "2"]) == 0
    assert read_image(tmp_path / "o.png").shape == (24, 24, 3)


def test_train_zero_iterations_then_deep(tmp_path, desk_dir, tiny_cfg, capsys):
    out = tmp_path / "run"
    assert main(["train", "--data", str(desk_dir), "--config", str(tiny_cfg), "--out", str(out),
                 "--iterations", "0", "--strict"]) == 0
    ckpt = out / "checkpoint_000000.dkrg"
    assert ckpt.exists() and "checkpoint:" in capsys.readouterr().out

    ramp = np.add.outer(np.arange(16.0), np.arange(16.0)) * 5
    write_image(tmp_path / "r.pgm", ramp)
    hashes = []
    for name in ("a.pgm", "b.pgm"):
        assert main(["sr", str(tmp_path / "r.pgm"), str(tmp_path / name), "--method", "deep", "--scale", "2",
                     "--checkpoint", str(ckpt), "--variance-out", str(tmp_path / ("v" + name))]) == 0
        hashes.append(hashlib.sha256((tmp_path / name).read_bytes()).hexdigest())
    assert hashes[0] == hashes[1]
    assert (tmp_path / "va.pgm.txt").exists()


def test_strict_train_reproducible(tmp_path, desk_dir, tiny_cfg):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--data", str(desk_dir), "--config", str(tiny_cfg), "--out", str(out),
                     "--iterations", "3", "--checkpoint-every", "2", "--strict"]) == 0
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert runs[0] == runs[1]
    assert set(runs[0]) == {"checkpoint_000002.dkrg", "checkpoint_000003.dkrg", "train_log.csv"}


def test_eval_identity(tmp_path, desk_dir):
    csv = tmp_path / "e.csv"
    assert main(["eval", "--hr-dir", str(desk_dir), "--method", "identity", "--scale", "3", "--out-csv", str(csv)]) == 0
    rows = csv.read_text().splitlines()
    assert all(r.endswith("inf,1.000000") for r in rows[1:])


@pytest.mark.parametrize("argv", [
    ["sr", "missing.png", "o.png", "--method", "bicubic", "--scale", "3"],
    ["sr", "missing.png", "o.png", "--method", "deep", "--scale", "3"],
    ["eval", "--hr-dir", "/nonexistent", "--method", "bicubic", "--scale", "3"],
    ["train", "--data", "/nonexistent", "--out", "/tmp/x"],
])
def test_input_errors_exit_2(argv):
    assert main(argv) == 2


def test_bad_usage_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["sr", "--scale", "5"])
    assert exc.value.code == 2


def test_unknown_config_key(tmp_path, desk_dir):
    bad = tmp_path / "bad.cfg"
    bad.write_text("bogus = 1\n")
    assert main(["train", "--data", str(desk_dir), "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "network end-to-end" in out

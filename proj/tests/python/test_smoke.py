import numpy as np
import pytest

import fddlab


def test_selftest_passes():
    ok, text = fddlab.selftest()
    assert ok, text
    assert "FAIL" not in text
    assert "PASS" in text


@pytest.mark.parametrize("T", [8, 128, 1000])
def test_zero_terminal_schedule(T):
    s = fddlab.make_schedule(T)
    assert s.T == T
    assert s.alpha_bar[0] == 1.0
    assert s.alpha_bar[T] == 0.0
    snr = [s.snr(t) for t in range(1, T + 1)]
    assert all(a > b for a, b in zip(snr, snr[1:]))


def test_kbin_draws_are_valid_and_seeded():
    for seed in range(50):
        steps = fddlab.kbin_timesteps(3, 999, seed)
        assert len(steps) == 3
        assert fddlab.kbin_valid(steps, 999)
    assert fddlab.kbin_timesteps(3, 999, 7) == fddlab.kbin_timesteps(3, 999, 7)


def test_scene_fdt1_round_trip(tmp_path):
    video, caption = fddlab.random_scene(3)
    assert video.shape == (4, 3, 16, 16)
    assert video.dtype == np.float32
    assert video.min() >= -1.0 and video.max() <= 1.0
    assert caption
    path = tmp_path / "clip.fdt"
    fddlab.write_fdt1(str(path), video)
    back = fddlab.read_fdt1(str(path))
    assert np.array_equal(back, video)
    assert fddlab.psnr(video, back) == 99.0


def test_psnr_closed_form():
    a = np.zeros((1, 3, 4, 4), np.float32)
    b = np.full((1, 3, 4, 4), 0.5, np.float32)
    assert fddlab.psnr(a, b) == pytest.approx(10 * np.log10(4 / 0.25), abs=1e-6)
    with pytest.raises(ValueError):
        fddlab.psnr(a, np.zeros((1, 3, 4, 5), np.float32))


def test_config_errors_and_hash(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("fdd.k = 4\n")
    assert "fdd.k = 4" in fddlab.resolved_config(str(cfg))
    assert fddlab.config_hash(str(cfg)) != fddlab.config_hash()
    assert fddlab.config_hash(seed=1) != fddlab.config_hash(seed=2)
    cfg.write_text("# ok\nfdd.kk = 4\n")
    with pytest.raises(fddlab.ConfigError, match="line 2"):
        fddlab.config_hash(str(cfg))
    with pytest.raises(fddlab.MissingDependency):
        fddlab.config_hash(str(tmp_path / "absent.cfg"))


def test_missing_prerequisites(tmp_path):
    with pytest.raises(fddlab.MissingDependency, match="data"):
        fddlab.pretrain_backbone(str(tmp_path))
    with pytest.raises(fddlab.MissingDependency):
        fddlab.evaluate(str(tmp_path), "full")


def test_tiny_data_generation(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(
        "data.n_backbone = 8\ndata.n_edit = 8\ndata.n_video = 8\ndata.n_fdd = 8\ndata.n_eval = 8\n"
    )
    log = fddlab.gen_data(str(tmp_path / "out"), str(cfg), seed=5)
    assert (tmp_path / "out" / "data").is_dir()
    assert (tmp_path / "out" / "data" / "config.hash").read_text().strip() == fddlab.config_hash(str(cfg), seed=5)
    assert isinstance(log, str)

import numpy as np
import pytest

from vitslim.errors import ContractError, ExportError
from vitslim.images import decode_pnm
from vitslim.inference import select_survivors
from vitslim.lifemap import export_lifemap, read_lives_csv, stage_layers
from vitslim.schedule import SlimSchedule


def pgm(path):
    return decode_pnm(open(path, "rb").read())[:, :, 0]


def test_uniform_full_life(tmp_path):
    sched = SlimSchedule.build(16, 6, 1.0, (2, 3, 4))
    files = export_lifemap(np.full(16, 6.0), sched, tmp_path / "u", t_base=2)
    assert (pgm(tmp_path / "u_heatmap.pgm") == 255).all()
    masks = [f for f in files if "_stage" in f]
    assert len(masks) == 3 and all((pgm(m) == 255).all() for m in masks)


def test_single_long_lived_patch(tmp_path):
    sched = SlimSchedule.build(16, 6, 0.1, (2, 3, 4))
    assert sched.n[-1] == 1
    tau = np.full(16, 2.0)
    tau[9] = 6.0
    export_lifemap(tau, sched, tmp_path / "s", t_base=2)
    final = pgm(tmp_path / "s_stage3.pgm")
    assert (final == 255).sum() == 1 and final.reshape(-1)[9] == 255
    expected = select_survivors(tau, sched).mask(stage_layers(sched)[-1], 16)
    np.testing.assert_array_equal(final.reshape(-1) == 255, expected)


def test_csv_round_trip(tmp_path, rng):
    sched = SlimSchedule.build(16, 6, 0.7, (2, 3, 4))
    tau = rng.uniform(2, 6, size=16)
    export_lifemap(tau, sched, tmp_path / "r", t_base=2)
    assert np.abs(read_lives_csv(tmp_path / "r_lives.csv") - tau).max() <= 1e-6


def test_heatmap_scaling_and_nesting(tmp_path):
    sched = SlimSchedule.build(4, 6, 0.5, (2, 4))
    export_lifemap([0.0, 2.0, 4.0, 9.0], sched, tmp_path / "h", t_base=2)
    assert pgm(tmp_path / "h_heatmap.pgm").reshape(-1).tolist() == [0, 0, 128, 255]
    s1, s2 = pgm(tmp_path / "h_stage1.pgm"), pgm(tmp_path / "h_stage2.pgm")
    assert ((s2 == 255) <= (s1 == 255)).all()


def test_figure_written(tmp_path, rng):
    sched = SlimSchedule.build(16, 6, 0.7, (2, 3, 4))
    files = export_lifemap(rng.uniform(2, 6, size=16), sched, tmp_path / "f", t_base=2, figure=True)
    png = tmp_path / "f_lifemap.png"
    assert str(png) in files and png.read_bytes()[:4] == b"\x89PNG"


def test_errors(tmp_path):
    sched = SlimSchedule.build(16, 6, 0.7, (2, 3, 4))
    with pytest.raises(ContractError):
        export_lifemap(np.zeros(5), sched, tmp_path / "x", t_base=2)
    with pytest.raises(ExportError, match="nodir"):
        export_lifemap(np.zeros(16), sched, tmp_path / "nodir" / "x", t_base=2)

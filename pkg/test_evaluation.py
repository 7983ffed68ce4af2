"""DSC / ASSD against brute-force oracles, reports and figures."""

import itertools

import numpy as np
import pandas as pd
import pytest
from PIL import Image

from dataio.volumes import LabelMask, Volume
from evaluation.figures import plot_subject_bars, plot_validation_curves, save_overlay
from evaluation.metrics import ASSD_SENTINEL, assd_metric, dsc_metric, surface_voxels
from evaluation.report import build_report, compare_reports, write_comparison


def _mask(shape=(5, 5, 5)):
    return np.zeros(shape, dtype=np.uint8)


def brute_force_assd(pred, gt):
    """All-pairs surface distances, surface = foreground with a 6-neighbour outside the object."""
    def surface(m):
        points = []
        for idx in zip(*np.nonzero(m)):
            for axis, step in itertools.product(range(3), (-1, 1)):
                n = list(idx)
                n[axis] += step
                if not 0 <= n[axis] < m.shape[axis] or not m[tuple(n)]:
                    points.append(idx)
                    break
        return np.array(points, dtype=float)

    sp, sg = surface(pred), surface(gt)
    if len(sp) == 0 or len(sg) == 0:
        return ASSD_SENTINEL
    d = np.sqrt(((sp[:, None, :] - sg[None, :, :]) ** 2).sum(axis=2))
    return (d.min(axis=1).mean() + d.min(axis=0).mean()) / 2.0


# =========================
# DSC
# =========================

def test_dsc_identity_disjoint_and_hand_count():
    a = _mask()
    a[0:2, 0:2, 0:2] = 1
    b = _mask()
    b[0:2, 0:2, 1:3] = 1
    far = _mask()
    far[3:5, 3:5, 3:5] = 1

    assert dsc_metric(a, a, 1) == 1.0
    assert dsc_metric(a, far, 1) == 0.0
    assert dsc_metric(a, b, 1) == pytest.approx(0.5)
    assert dsc_metric(a, b, 1) == dsc_metric(b, a, 1)


def test_dsc_both_empty_and_unknown_class():
    assert dsc_metric(_mask(), _mask(), 2) == 1.0
    with pytest.raises(ValueError):
        dsc_metric(LabelMask(_mask()), LabelMask(_mask()), 5)
    with pytest.raises(ValueError):
        dsc_metric(_mask(), _mask((4, 5, 5)), 1)


# =========================
# ASSD
# =========================

def test_assd_identity_and_sentinel():
    a = _mask()
    a[1:4, 1:4, 1:4] = 1
    assert assd_metric(a, a, 1) == 0.0
    assert assd_metric(_mask(), a, 1) == ASSD_SENTINEL
    assert assd_metric(a, _mask(), 1) == ASSD_SENTINEL


def test_assd_unit_offset():
    a, b = _mask(), _mask()
    a[2, 2, 2] = 1
    b[2, 2, 3] = 1
    assert assd_metric(a, b, 1) == pytest.approx(1.0, abs=1e-9)
    assert assd_metric(a, b, 1) == pytest.approx(brute_force_assd(a == 1, b == 1), abs=1e-9)


def test_assd_matches_brute_force_on_random_masks():
    rng = np.random.default_rng(0)
    for _ in range(200):
        shape = tuple(int(s) for s in rng.integers(1, 6, size=3))
        pred = (rng.random(shape) < 0.4).astype(np.uint8)
        gt = (rng.random(shape) < 0.4).astype(np.uint8)
        expected = brute_force_assd(pred == 1, gt == 1)
        assert assd_metric(pred, gt, 1) == pytest.approx(expected, abs=1e-9)


def test_assd_symmetric_and_translation_invariant():
    a, b = _mask((9, 9, 9)), _mask((9, 9, 9))
    a[2:5, 2:5, 2:4] = 1
    b[3:5, 2:6, 2:5] = 1
    value = assd_metric(a, b, 1)
    assert value == pytest.approx(assd_metric(b, a, 1), abs=1e-12)
    shifted = assd_metric(np.roll(a, (1, 2, 1), axis=(0, 1, 2)), np.roll(b, (1, 2, 1), axis=(0, 1, 2)), 1)
    assert shifted == pytest.approx(value, abs=1e-12)


def test_surface_uses_six_connectivity():
    cube = np.ones((3, 3, 3), dtype=bool)
    surface = surface_voxels(cube)
    # every voxel touches the border except the centre
    assert surface.sum() == 26 and not surface[1, 1, 1]


# =========================
# Reports
# =========================

def _subject(seed, perfect=False):
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, 5, size=(4, 8, 8)).astype(np.uint8)
    pred = gt.copy() if perfect else np.where(rng.random(gt.shape) < 0.2, 0, gt).astype(np.uint8)
    return LabelMask(pred), LabelMask(gt)


def test_single_perfect_subject_report():
    pred, gt = _subject(0, perfect=True)
    report = build_report([pred], [gt])
    assert all(v == 1.0 for v in report.dsc.values())
    assert all(v == 0.0 for v in report.assd.values())
    assert list(report.to_frame().columns) == ["liver", "right kidney", "left kidney", "spleen", "mean"]


def test_means_recompute_from_class_columns():
    pairs = [_subject(s) for s in range(3)]
    report = build_report([p for p, _ in pairs], [g for _, g in pairs], metadata={"digest": "abc"})
    frame = report.to_frame()
    for metric in ("DSC", "ASSD"):
        row = frame.loc[metric]
        assert row["mean"] == pytest.approx(row.drop("mean").mean(), abs=1e-9)
    assert report.mean_dsc == pytest.approx(frame.loc["DSC", "mean"], abs=1e-12)
    assert len(report.per_subject) == 6
    assert report.metadata["digest"] == "abc"


def test_report_validation():
    pred, gt = _subject(0)
    with pytest.raises(ValueError):
        build_report([pred, pred], [gt])
    with pytest.raises(ValueError):
        build_report([], [])


def test_report_files_and_comparison(tmp_path):
    pairs = [_subject(s) for s in range(2)]
    good = build_report([g for _, g in pairs], [g for _, g in pairs])
    worse = build_report([p for p, _ in pairs], [g for _, g in pairs])

    path = good.to_csv(tmp_path / "report.csv")
    assert pd.read_csv(path, index_col="metric").loc["DSC", "mean"] == pytest.approx(1.0)
    assert (tmp_path / "report_per_subject.csv").exists()
    assert "liver" in good.to_text_table()

    table = compare_reports({"U3": good, "W/o adaptation": worse})
    assert list(table.index) == ["U3", "W/o adaptation"]
    assert table.loc["U3", "DSC mean"] >= table.loc["W/o adaptation", "DSC mean"]
    write_comparison({"U3": good}, tmp_path, stem="cmp")
    assert (tmp_path / "cmp.csv").exists() and (tmp_path / "cmp.txt").exists()


# =========================
# Figures
# =========================

def test_validation_curves_written(tmp_path):
    history = [{"epoch": e, "stage": 1 + (e >= 2), "u1": 0.1 * e, "u2_sc": 0.2, "u3": 0.15 * e} for e in range(4)]
    path = plot_validation_curves(history, stage_t=2, path=tmp_path / "curves")
    assert path.exists()
    frame = pd.read_csv(tmp_path / "curves.csv")
    assert list(frame.columns) == ["epoch", "u1", "u2_sc", "u3"]
    with pytest.raises(ValueError):
        plot_validation_curves([{"epoch": 0}], 1, tmp_path / "empty")


def test_subject_bars_and_overlay(tmp_path):
    pairs = [_subject(s) for s in range(2)]
    report = build_report([p for p, _ in pairs], [g for _, g in pairs])
    plot_subject_bars({"U3": report, "U1": report}, tmp_path / "bars")
    assert pd.read_csv(tmp_path / "bars.csv").shape == (2, 3)

    volume = Volume(np.random.default_rng(0).random((4, 8, 8)))
    path = save_overlay(volume, [pairs[0][1], pairs[0][0]], tmp_path / "overlay.png")
    with Image.open(path) as image:
        assert image.size == (3 * 8, 8)
    with pytest.raises(ValueError):
        save_overlay(volume, [pairs[0][1]], tmp_path / "bad.png", slice_index=9)

import numpy as np
import pytest

from boxloss.geometry import Box, iou, overlap_geometry
from boxloss.losses import LossKind, PushConfig, loss_eval
from boxloss.oracle import (OracleError, fd_gradient, grad_check_suite, raster_iou,
                            reference_loss, sample_configuration)


@pytest.mark.parametrize("kind", list(LossKind))
def test_reference_loss_matches_analytic_value(kind):
    rng = np.random.default_rng(3)
    for i in range(200):
        cat = ("overlapping", "contained", "disjoint")[i % 3]
        pred, gt, second = sample_configuration(rng, cat, kind.is_push)
        cfg = PushConfig(0.7)
        assert reference_loss(kind, pred, gt, second, cfg) == pytest.approx(
            loss_eval(kind, pred, gt, second, cfg).value, abs=1e-12)


def test_fd_stationary_point():
    g = fd_gradient(LossKind.IOU, Box(0, 0, 4, 4), Box(0, 0, 4, 4))
    assert max(abs(c) for c in g) < 1e-6


def test_fd_matches_analytic_deciou_fixture():
    pred, gt = Box(0, 0, 2, 2), Box(1, 1, 3, 3)
    np.testing.assert_allclose(fd_gradient(LossKind.DECIOU, pred, gt, h=1e-5),
                               loss_eval(LossKind.DECIOU, pred, gt).grad, rtol=1e-4)


def test_fd_plateau_is_zero():
    assert fd_gradient(LossKind.IOU, Box(0, 0, 1, 1), Box(5, 5, 6, 6)) == (0.0, 0.0, 0.0, 0.0)


def test_fd_names_failing_coordinate():
    with pytest.raises(OracleError, match="perturbing x1"):
        fd_gradient(LossKind.IOU, Box(0, 0, 1e-6, 1), Box(0, 0, 1, 1), h=1e-5)


def test_fd_rejects_bad_step():
    with pytest.raises(ValueError):
        fd_gradient(LossKind.IOU, Box(0, 0, 1, 1), Box(0, 0, 1, 1), h=0.0)


class TestRaster:
    def test_half_unit_grid(self):
        # 4 cells in the intersection, 28 in the union at 2 cells per unit
        assert raster_iou(Box(0, 0, 2, 2), Box(1, 1, 3, 3), 2) == 1 / 7

    def test_identical(self):
        assert raster_iou(Box(0, 0, 3, 2), Box(0, 0, 3, 2), 1) == 1.0

    def test_disjoint(self):
        assert raster_iou(Box(0, 0, 1, 1), Box(5, 5, 6, 6), 4) == 0.0

    def test_rejects_bad_resolution(self):
        with pytest.raises(ValueError):
            raster_iou(Box(0, 0, 1, 1), Box(0, 0, 1, 1), 0)

    def test_error_within_perimeter_bound(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            boxes = []
            for _ in range(2):
                x = np.sort(rng.uniform(0, 20, 2))
                y = np.sort(rng.uniform(0, 20, 2))
                boxes.append(Box(x[0], y[0], x[1], y[1]))
            a, b = boxes
            g = overlap_geometry(a, b)
            perimeters = 2 * (a.width + a.height + b.width + b.height)
            for n in (10, 50):
                bound = 2 * perimeters / (n * g.union)
                assert abs(raster_iou(a, b, n) - g.iou) <= bound

    def test_converges_with_resolution(self):
        a, b = Box(0.13, 0.27, 3.71, 2.9), Box(1.05, 0.61, 4.4, 3.33)
        errors = [abs(raster_iou(a, b, n) - iou(a, b)) for n in (10, 100, 1000)]
        assert errors[2] < errors[0]
        assert errors[2] < 1e-3


class TestGradCheckSuite:
    def test_deterministic(self):
        a = grad_check_suite(LossKind.DECIOU, samples=200, seed=4)
        b = grad_check_suite(LossKind.DECIOU, samples=200, seed=4)
        assert a == b

    def test_counts(self):
        r = grad_check_suite(LossKind.GIOU, samples=400, seed=1)
        assert r.samples == r.checked + r.skipped_near_clamp
        assert r.samples > r.skipped_near_clamp > 0  # touching cases are always skipped
        assert r.passed

    def test_zero_tolerance_fails(self):
        assert not grad_check_suite(LossKind.IOU, samples=200, seed=0, tolerance=0.0).passed

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            grad_check_suite(LossKind.IOU, samples=0)

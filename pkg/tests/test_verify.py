import numpy as np
import pytest
import torch

from pama.verify import (GradCheckError, bin_centered_chroma_image,
                         grad_check, hard_histogram_oracle, remd_oracle,
                         remd_well_separated, self_similarity_oracle)


def test_remd_oracle_hand_values():
    e1, e2 = [1.0, 0.0], [0.0, 1.0]
    assert abs(remd_oracle([e1], [e2]) - 1.0) < 1e-9
    assert remd_oracle([e1, e2], [e1, e2]) < 1e-7


def test_self_similarity_oracle_identical():
    pts = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    assert self_similarity_oracle(pts, pts) < 1e-12


def test_hard_histogram_oracle_gray_image():
    img = np.full((3, 4, 4), 0.5)
    h = hard_histogram_oracle(img, bins=9)
    assert abs(h.sum() - 1.0) < 1e-12
    # equal channels put every projection at (u, v) = (0, 0), the center bin
    for k in range(3):
        assert h[k, 4, 4] == pytest.approx(1.0 / 3.0)


def test_bin_centered_image_hits_centers():
    rng = np.random.default_rng(3)
    img = bin_centered_chroma_image(rng, bins=9, size=6)
    h = hard_histogram_oracle(img, bins=9)
    # all mass must land in exactly two cells per projection (or one if the
    # tint degenerates to gray), each holding a multiple of half a column
    nonzero = np.count_nonzero(h)
    assert nonzero <= 6
    assert abs(h.sum() - 1.0) < 1e-12


def test_bin_centered_image_needs_odd_bins():
    with pytest.raises(AssertionError):
        bin_centered_chroma_image(np.random.default_rng(0), bins=8, size=4)


def test_grad_check_quadratic():
    report = grad_check(lambda x: (x ** 2).sum(),
                        [torch.arange(4, dtype=torch.float64)],
                        name="quadratic")
    assert report.passed
    assert report.max_rel_error < 1e-8
    assert report.as_dict()["operation"] == "quadratic"


def test_grad_check_detects_wrong_gradient():
    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return (x ** 2).sum()

        @staticmethod
        def backward(ctx, g):
            return g * 0.5 * torch.ones(3, dtype=torch.float64)  # wrong on purpose

    report = grad_check(lambda x: Wrong.apply(x),
                        [torch.ones(3, dtype=torch.float64)], name="wrong")
    assert not report.passed


def test_grad_check_rejects_bad_step():
    with pytest.raises(ValueError):
        grad_check(lambda x: x.sum(), [torch.ones(2)], step=0.0)


def test_grad_check_constant_function():
    report = grad_check(lambda x: (x * 0).sum(), [torch.ones(3)],
                        name="constant")
    assert report.passed and report.max_rel_error == 0.0


def test_grad_check_nonfinite_gradient():
    with pytest.raises(GradCheckError):
        grad_check(lambda x: torch.log(x).sum(),
                   [torch.zeros(2, dtype=torch.float64)], name="log_at_zero")


def test_grad_check_coordinate_subsampling():
    report = grad_check(lambda x: (x ** 3).sum(),
                        [torch.linspace(0.5, 2.0, 50, dtype=torch.float64)],
                        max_coords_per_input=5,
                        rng=np.random.default_rng(0))
    assert report.passed


def test_remd_well_separated():
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert remd_well_separated(x, np.array([[1.0, 0.1]]))
    # duplicate style points tie every row minimum
    assert not remd_well_separated(x, np.array([[1.0, 1.0], [1.0, 1.0]]))
    # symmetric cost ties the outer max of the two one-sided means
    assert not remd_well_separated(x, x + 0.3)

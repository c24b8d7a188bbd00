"""Independent numpy oracles and a finite-difference gradient checker.

Everything here is deliberately loop-based and shares no code with the
production losses; it exists so the test suite can compare two routes.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch

from .losses import HIST_INTENSITY_FLOOR, HIST_RANGE


def _cos_dist(x, y, eps=1e-8) -> float:
    nx = math.sqrt(sum(v * v for v in x))
    ny = math.sqrt(sum(v * v for v in y))
    dot = sum(a * b for a, b in zip(x, y))
    return 1.0 - dot / ((nx + eps) * (ny + eps))


def remd_oracle(x_set, y_set) -> float:
    """Relaxed earth mover distance by exhaustive double loops.

    x_set, y_set: sequences of vectors (rows are points).
    """
    x_set = [list(map(float, v)) for v in np.asarray(x_set)]
    y_set = [list(map(float, v)) for v in np.asarray(y_set)]
    assert len(x_set) <= 64 and len(y_set) <= 64
    row_minima = []
    for xv in x_set:
        row_minima.append(min(_cos_dist(xv, yv) for yv in y_set))
    col_minima = []
    for yv in y_set:
        col_minima.append(min(_cos_dist(xv, yv) for xv in x_set))
    return max(sum(row_minima) / len(row_minima),
               sum(col_minima) / len(col_minima))


def self_similarity_oracle(c_set, cs_set) -> float:
    """Self-similarity loss by explicit elementwise construction of both
    row-normalized self-distance matrices."""
    c_set = [list(map(float, v)) for v in np.asarray(c_set)]
    cs_set = [list(map(float, v)) for v in np.asarray(cs_set)]
    assert len(c_set) == len(cs_set)
    n = len(c_set)

    def normalized_matrix(points):
        raw = [[_cos_dist(points[i], points[j]) for j in range(n)]
               for i in range(n)]
        out = []
        for i in range(n):
            row_sum = sum(raw[i]) + 1e-8
            out.append([raw[i][j] / row_sum for j in range(n)])
        return out

    mc = normalized_matrix(c_set)
    mcs = normalized_matrix(cs_set)
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += abs(mc[i][j] - mcs[i][j])
    return total / n


def hard_histogram_oracle(image, bins: int) -> np.ndarray:
    """Nearest-bin count histogram in the same log-chroma coordinates as
    the differentiable histogram; (3, bins, bins), normalized to sum 1."""
    arr = np.asarray(image, dtype=np.float64).reshape(3, -1)
    arr = np.log(np.clip(arr, HIST_INTENSITY_FLOOR, None))
    centers = np.linspace(-HIST_RANGE, HIST_RANGE, bins)
    hist = np.zeros((3, bins, bins))
    n_pix = arr.shape[1]
    for k in range(3):
        for p in range(n_pix):
            u = arr[k, p] - arr[(k + 1) % 3, p]
            v = arr[k, p] - arr[(k + 2) % 3, p]
            iu = int(np.argmin(np.abs(centers - u)))
            iv = int(np.argmin(np.abs(centers - v)))
            hist[k, iu, iv] += 1.0
    return hist / hist.sum()


# ---------------------------------------------------------------------------
# central-difference gradient checking


@dataclass
class GradCheckReport:
    operation: str
    max_rel_error: float
    step: float
    shapes: tuple
    threshold: float
    passed: bool

    def as_dict(self):
        return asdict(self)


class GradCheckError(RuntimeError):
    pass


def grad_check(fn, inputs, *, name="op", step=1e-4, threshold=1e-4,
               max_coords_per_input=None, rng=None,
               zero_tol=1e-10) -> GradCheckReport:
    """Compare autograd gradients of scalar fn(*inputs) against central
    finite differences, coordinate by coordinate.

    Relative error per coordinate uses max(|analytic|, |numeric|, 1e-12)
    as denominator; the report carries the maximum over all checked
    coordinates.  Inputs must be float64 tensors.  When an input has many
    coordinates, `max_coords_per_input` samples a random subset.

    Coordinates where both sides sit below `zero_tol` count as exact: a
    structurally-zero gradient leaves autograd roundoff residue around
    1e-16 that the 1e-12 denominator floor would misread as error.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    if rng is None:
        rng = np.random.default_rng(0)
    # leaves must be contiguous: the finite-difference loop pokes values
    # through reshape(-1), which silently copies otherwise
    leaves = [t.detach().double().contiguous().clone().requires_grad_(True)
              for t in inputs]
    out = fn(*leaves)
    grads = torch.autograd.grad(out, leaves, allow_unused=True)
    max_rel = 0.0
    for leaf, grad in zip(leaves, grads):
        if grad is None:
            grad = torch.zeros_like(leaf)
        if not torch.isfinite(grad).all():
            bad = torch.nonzero(~torch.isfinite(grad))[0].tolist()
            raise GradCheckError(
                f"{name}: non-finite analytic gradient at coordinate {bad}")
        flat = leaf.detach().reshape(-1)
        n = flat.numel()
        coords = range(n)
        if max_coords_per_input is not None and n > max_coords_per_input:
            coords = rng.choice(n, size=max_coords_per_input, replace=False)
        gflat = grad.reshape(-1)
        for idx in coords:
            idx = int(idx)
            orig = float(flat[idx])
            with torch.no_grad():
                flat[idx] = orig + step
                f_plus = float(fn(*leaves))
                flat[idx] = orig - step
                f_minus = float(fn(*leaves))
                flat[idx] = orig
            numeric = (f_plus - f_minus) / (2 * step)
            analytic = float(gflat[idx])
            if max(abs(analytic), abs(numeric)) < zero_tol:
                continue
            denom = max(abs(analytic), abs(numeric), 1e-12)
            max_rel = max(max_rel, abs(analytic - numeric) / denom)
    return GradCheckReport(
        operation=name, max_rel_error=max_rel, step=step,
        shapes=tuple(tuple(t.shape) for t in inputs),
        threshold=threshold, passed=max_rel < threshold)


def bin_centered_chroma_image(rng, bins: int, size: int) -> np.ndarray:
    """Two-color (3, size, size) image whose log-chroma coordinates sit
    exactly on histogram bin centers (needs an odd bin count so 0 is a
    center); used for soft-vs-hard histogram convergence checks."""
    assert bins % 2 == 1, "bin-centered colors need an odd bin count"
    centers = np.linspace(-HIST_RANGE, HIST_RANGE, bins)
    t = float(centers[int(rng.integers(bins // 2, bins - 1))])
    gray = np.array([0.3, 0.3, 0.3])
    tinted = np.array([0.3, 0.3, 0.3 * np.exp(-t)])
    img = np.empty((3, size, size))
    img[:, :, : size // 2] = gray[:, None, None]
    img[:, :, size // 2:] = tinted[:, None, None]
    return img


def remd_well_separated(x, y, margin=1e-3) -> bool:
    """True when every row/column of the cosine cost matrix has its two
    smallest entries separated by `margin` (REMD differentiable there)."""
    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y, dtype=np.float64)
    cost = np.array([[_cos_dist(xv, yv) for yv in ys] for xv in xs])

    def rows_ok(mat):
        for row in mat:
            if len(row) >= 2:
                s = np.sort(row)
                if s[1] - s[0] < margin:
                    return False
        return True

    # the outer max over the two one-sided means must not tie either,
    # otherwise finite differences straddle the branch switch
    side_x = float(np.mean(cost.min(axis=1)))
    side_y = float(np.mean(cost.min(axis=0)))
    if abs(side_x - side_y) < margin:
        return False
    return rows_ok(cost) and rows_ok(cost.T)

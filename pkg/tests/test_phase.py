import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperribbon import ConfigError, DatasetSpec, TrainConfig, analytic_pca, hyper_ribbon_dim, synthesize_dataset
from hyperribbon.phase import (
    FAILED,
    RATIO_PRESETS,
    PhaseGrid,
    PhaseGridSpec,
    contour_lines,
    default_T_values,
    extract_isosurface,
    modal_dimension,
    sweep,
)

SMALL = dict(T_values=(1, 10, 100, 1000), c_values=(0.1, 0.3, 0.6), ratio_values=(0.33, 4.38), n=20, d=40)


@pytest.fixture(scope="module")
def medium_grid():
    spec = PhaseGridSpec(T_values=tuple(default_T_values(10)), c_values=tuple(np.linspace(0.1, 1.0, 8)),
                         ratio_values=(0.33, 1.32, 4.38), n=30, d=60)
    return sweep(spec)


def test_default_axes():
    spec = PhaseGridSpec()
    assert spec.shape == (20, 20, 10)
    assert spec.T_values[0] == 1 and spec.T_values[-1] == 10 ** 4
    assert spec.ratio_values[0] == pytest.approx(0.1) and spec.ratio_values[-1] == pytest.approx(10.0)
    assert RATIO_PRESETS == {"high": 4.38, "mid": 1.32, "low": 0.33}


def test_single_cell_first_step_ignores_target_scale():
    dims = set()
    for ratio in (0.1, 1.0, 10.0):
        grid = sweep(PhaseGridSpec(T_values=(1,), c_values=(0.3,), ratio_values=(ratio,), n=20, d=40))
        dims.add(int(grid.dims[0, 0, 0]))
    ds = synthesize_dataset(DatasetSpec(n=20, d=40, c=0.3, sigma_star_sq=1.0, sigma_w_sq=1.0, seed=0))
    assert dims == {int(hyper_ribbon_dim(ds.eigvals, 0.95))}


def test_dims_in_range_and_deterministic(medium_grid):
    assert medium_grid.dims.shape == (10, 8, 3)
    ok = medium_grid.valid
    assert np.all((medium_grid.dims[ok] >= 0) & (medium_grid.dims[ok] <= 30))
    again = sweep(medium_grid.spec, threads=3)
    np.testing.assert_array_equal(again.dims, medium_grid.dims)
    assert again.to_rows() == medium_grid.to_rows()


def test_target_scale_trend(medium_grid):
    hi = medium_grid.slice_for_ratio(4.38)
    lo = medium_grid.slice_for_ratio(0.33)
    assert np.mean(hi <= lo) >= 0.9
    mid = medium_grid.slice_for_ratio(1.32)
    assert np.mean((hi <= mid) & (mid <= lo)) >= 0.9


def test_short_training_on_sloppy_data_is_low_dimensional(medium_grid):
    # large c and small T
    T_small = [a for a, T in enumerate(medium_grid.spec.T_values) if T <= 10]
    c_large = [b for b, c in enumerate(medium_grid.spec.c_values) if c >= 0.5]
    block = medium_grid.dims[np.ix_(T_small, c_large, range(3))]
    # small relative to n = 30
    assert np.mean(block <= 30 // 5) >= 0.9
    assert np.mean(block) < np.mean(medium_grid.dims[:, c_large, :])


def test_high_ratio_is_mostly_low_dimensional(medium_grid):
    assert modal_dimension(medium_grid.slice_for_ratio(4.38)) <= 3


@settings(max_examples=15)
@given(st.floats(0.5, 1.0), st.floats(0.5, 1.0))
def test_threshold_monotone(t1, t2):
    lo, hi = sorted((t1, t2))
    a = sweep(PhaseGridSpec(**SMALL, threshold=lo)).dims
    b = sweep(PhaseGridSpec(**SMALL, threshold=hi)).dims
    assert np.all(a <= b)


def test_full_threshold_counts_nonzero_eigenvalues():
    grid = sweep(PhaseGridSpec(**SMALL, threshold=1.0))
    for a, T in enumerate(SMALL["T_values"]):
        for b, c in enumerate(SMALL["c_values"]):
            for k, r in enumerate(SMALL["ratio_values"]):
                ds = synthesize_dataset(DatasetSpec(n=20, d=40, c=c, sigma_star_sq=r * r, sigma_w_sq=1.0, seed=0))
                lam = analytic_pca(ds, TrainConfig(alpha=1.0, T=T), keep_matrix=False).lambda_P
                assert grid.dims[a, b, k] == hyper_ribbon_dim(lam, 1.0) == np.count_nonzero(lam)


def test_failed_cells_are_recorded():
    # c = 0.02 with n = 20 is not sloppier than a flat spectrum
    grid = sweep(PhaseGridSpec(T_values=(1, 10), c_values=(0.02, 0.3), ratio_values=(1.0,), n=20, d=40))
    assert np.all(grid.dims[:, 0, 0] == FAILED)
    assert np.all(grid.dims[:, 1, 0] >= 1)
    assert set(grid.errors) == {(0, 0, 0), (1, 0, 0)}
    rows = grid.to_rows()
    assert rows[0][3] == FAILED and rows[0][4]


def test_spec_validation():
    with pytest.raises(ConfigError, match="empty"):
        PhaseGridSpec(T_values=())
    with pytest.raises(ConfigError, match="increasing"):
        PhaseGridSpec(c_values=(0.3, 0.2))
    with pytest.raises(ConfigError):
        PhaseGridSpec(threshold=0.0)
    with pytest.raises(ConfigError):
        PhaseGridSpec(ratio_values=(-1.0, 1.0))
    with pytest.raises(ConfigError):
        PhaseGridSpec(T_values=(0, 5))
    with pytest.raises(ConfigError, match="unknown"):
        PhaseGridSpec.from_dict({"bogus": 1})
    spec = PhaseGridSpec(**SMALL)
    assert PhaseGridSpec.from_dict(spec.to_dict()) == spec


# ---------------------------------------------------------------- contours

def _grid(dims, T=None, c=None):
    dims = np.asarray(dims, dtype=np.int64)[:, :, None]
    nT, nc = dims.shape[:2]
    T = T or tuple(10 ** k for k in range(nT))
    c = c or tuple(np.linspace(0.1, 1.0, nc))
    return PhaseGrid(dims=dims, spec=PhaseGridSpec(T_values=T, c_values=c, ratio_values=(1.0,)))


def test_uniform_grid_has_no_contours():
    out = extract_isosurface(_grid(np.full((4, 5), 5)), 3)
    assert out == {1.0: []}


def test_level_above_maximum_is_empty():
    assert extract_isosurface(_grid(np.arange(12).reshape(4, 3) % 3), 10) == {1.0: []}


def test_level_must_be_positive():
    with pytest.raises(ConfigError):
        extract_isosurface(_grid(np.ones((2, 2))), 0)


def test_half_plane_split_gives_one_straight_line():
    dims = np.zeros((5, 4), dtype=int)
    dims[3:, :] = 7  # large T half; level 3.5 sits midway
    out = extract_isosurface(_grid(dims), 3)[1.0]
    assert len(out) == 1
    xs = {round(x, 12) for x, _ in out[0]}
    ys = sorted(y for _, y in out[0])
    # halfway between log10 T = 2 and 3
    assert xs == {2.5}
    assert ys[0] == pytest.approx(0.1) and ys[-1] == pytest.approx(1.0)


def test_failed_cells_are_skipped():
    dims = np.zeros((5, 4), dtype=int)
    dims[3:, :] = 6
    dims[:, 0] = FAILED
    out = extract_isosurface(_grid(dims), 3)[1.0]
    assert len(out) == 1
    assert min(y for _, y in out[0]) == pytest.approx(0.4)


def test_contour_axis_mapping():
    field = np.array([[0.0, 1.0], [0.0, 1.0]])
    lines = contour_lines(field, 0.5, [1.0, 100.0], [0.0, 2.0], log_x=True)
    assert len(lines) == 1
    assert sorted(lines[0]) == [(1.0, 0.0), (1.0, 2.0)]




def test_contours_nested_across_ratios(medium_grid):
    # region {dims <= 3} grows with the target scale
    sizes = [np.sum(medium_grid.slice_for_ratio(r)[medium_grid.slice_for_ratio(r) != FAILED] <= 3)
             for r in (0.33, 1.32, 4.38)]
    assert sizes == sorted(sizes)
    low = medium_grid.slice_for_ratio(0.33) <= 3
    high = medium_grid.slice_for_ratio(4.38) <= 3
    assert np.mean(~low | high) >= 0.9
    contours = extract_isosurface(medium_grid, 3)
    assert set(contours) == {0.33, 1.32, 4.38}
    for lines in contours.values():
        for line in lines:
            for x, y in line:
                assert 0.0 <= x <= 4.0 and 0.1 - 1e-12 <= y <= 1.0 + 1e-12


def test_modal_dimension_ignores_failures():
    assert modal_dimension(np.array([FAILED, FAILED, FAILED, 2, 2, 3])) == 2
    with pytest.raises(ConfigError):
        modal_dimension(np.array([FAILED]))

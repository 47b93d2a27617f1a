import json

import numpy as np
import pytest

from bmef.dataset import (
    FunctionalDataset,
    from_mapping,
    load_dataset,
    load_dataset_dir,
    save_dataset,
    stack_by_basis_index,
)
from bmef.errors import ConditionIndexError, IntegrityError, ShapeError

T, F = 3, 2


def small(observed=((0, 1), (1,)), seed=0):
    rng = np.random.default_rng(seed)
    responses = {(i, j): rng.standard_normal(T * F) for i, conds in enumerate(observed) for j in conds}
    X = np.column_stack([np.ones(len(observed)), rng.standard_normal(len(observed))])
    return from_mapping([f"id{i}" for i in range(len(observed))], X, np.linspace(0, 1, T), np.linspace(0, 1, F),
                        responses, n_conditions=2)


def write_files(tmp_path, rows, cov_rows, grid=None):
    r = tmp_path / "responses.csv"
    c = tmp_path / "covariates.csv"
    r.write_text("subject_id,condition," + ",".join(f"v{k + 1}" for k in range(T * F)) + "\n"
                 + "\n".join(rows) + "\n")
    c.write_text("subject_id,x1\n" + "\n".join(cov_rows) + "\n")
    return r, c, grid or {"time": list(np.linspace(0, 1, T)), "freq": list(np.linspace(0, 1, F))}


def row(sid, cond, val=0.0, n=T * F):
    return ",".join([sid, str(cond)] + [repr(val + k) for k in range(n)])


def test_pair_count_with_missing_condition():
    ds = small()
    assert ds.n_pairs == 3
    assert [list(o) for o in ds.observed] == [[0, 1], [1]]
    assert ds.condition_counts.tolist() == [2, 1]


def test_complete_design_has_nJ_pairs():
    ds = small(observed=((0, 1), (0, 1), (0, 1)))
    assert ds.n_pairs == 6


def test_design_matrix_block_structure():
    ds = small()
    np.testing.assert_array_equal(ds.design, [[1, 0], [1, 0], [0, 1]])
    np.testing.assert_array_equal(ds.design.T @ ds.design, np.diag([2, 1]))
    assert np.all(ds.design.sum(axis=1) == 1)


def test_stacking_order_matches_naive_loop():
    ds = small(observed=((1,), (0, 1), (0,)))
    K = 4
    rng = np.random.default_rng(1)
    projected = {(int(i), int(j)): rng.standard_normal(K) for i, j in ds.pairs}
    for l in range(K):
        y_l, Z = stack_by_basis_index(ds, projected, l)
        expected = []
        for i in range(ds.n_subjects):
            for j in sorted(ds.observed[i]):
                expected.append(projected[(i, int(j))][l])
        np.testing.assert_array_equal(y_l, expected)
        np.testing.assert_array_equal(Z, ds.design)
    arr = np.array([projected[(int(i), int(j))] for i, j in ds.pairs])
    np.testing.assert_array_equal(stack_by_basis_index(ds, arr, 2)[0], arr[:, 2])


def test_surface_is_time_fastest():
    ds = small()
    y = ds.response(0, 1)
    S = ds.surface(0, 1)
    assert S.shape == (T, F)
    assert S[2, 1] == y[2 + T * 1]


def test_round_trip_is_bit_exact(tmp_path):
    ds = small(seed=7)
    save_dataset(ds, tmp_path)
    back = load_dataset_dir(tmp_path)
    assert back.subject_ids == ds.subject_ids
    assert back.covariate_names == ds.covariate_names
    assert back.n_conditions == ds.n_conditions
    np.testing.assert_array_equal(back.pairs, ds.pairs)
    assert np.array_equal(back.responses, ds.responses)
    assert np.array_equal(back.covariates, ds.covariates)
    assert np.array_equal(back.time_grid, ds.time_grid)
    assert np.array_equal(back.freq_grid, ds.freq_grid)


def test_load_from_files_with_grid_file(tmp_path):
    r, c, grid = write_files(tmp_path, [row("b", 2), row("a", 1), row("a", 2)], ["a,1.0", "b,1.0"])
    gpath = tmp_path / "grid.json"
    gpath.write_text(json.dumps(grid))
    ds = load_dataset(r, c, gpath)
    assert ds.subject_ids == ["a", "b"]
    assert ds.pairs.tolist() == [[0, 0], [0, 1], [1, 1]]


def test_duplicate_identical_rows_are_deduplicated(tmp_path):
    r, c, grid = write_files(tmp_path, [row("a", 1), row("a", 1), row("a", 2)], ["a,1.0"])
    assert load_dataset(r, c, grid).n_pairs == 2


def test_conflicting_duplicates_rejected(tmp_path):
    r, c, grid = write_files(tmp_path, [row("a", 1), row("a", 1, 5.0)], ["a,1.0"])
    with pytest.raises(IntegrityError):
        load_dataset(r, c, grid)


def test_missing_covariate_row(tmp_path):
    r, c, grid = write_files(tmp_path, [row("a", 1), row("ghost", 1)], ["a,1.0"])
    with pytest.raises(IntegrityError):
        load_dataset(r, c, grid)


def test_wrong_response_length(tmp_path):
    r, c, grid = write_files(tmp_path, [row("a", 1, n=T * F - 1)], ["a,1.0"])
    with pytest.raises(ShapeError):
        load_dataset(r, c, grid)


@pytest.mark.parametrize("cond", [0, 3])
def test_condition_out_of_range(tmp_path, cond):
    r, c, grid = write_files(tmp_path, [row("a", 1), row("a", cond)], ["a,1.0"])
    with pytest.raises(ConditionIndexError):
        load_dataset(r, c, grid, n_conditions=2)
    assert issubclass(ConditionIndexError, IndexError)


def test_unobserved_condition_rejected():
    with pytest.raises(IntegrityError):
        from_mapping(["a"], [[1.0]], np.linspace(0, 1, T), np.linspace(0, 1, F), {(0, 0): np.zeros(T * F)},
                     n_conditions=2)


def test_non_finite_response_rejected():
    with pytest.raises(IntegrityError):
        FunctionalDataset(["a"], [[1.0]], np.linspace(0, 1, T), np.linspace(0, 1, F), 1, [[0, 0]],
                          np.full((1, T * F), np.nan))


def test_unsorted_pairs_rejected():
    with pytest.raises(IntegrityError):
        FunctionalDataset(["a", "b"], [[1.0], [1.0]], np.linspace(0, 1, T), np.linspace(0, 1, F), 1,
                          [[1, 0], [0, 0]], np.zeros((2, T * F)))

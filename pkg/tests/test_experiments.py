import numpy as np
import pytest

from models.config import QuantizerConfig, SinkhornConfig, TrainConfig
from processing.experiments import (
    NORMALIZE_SCALE_EXPONENTS,
    ablation_grid,
    consistency,
    dynamics2d,
    normalize_study,
    separated_pairs,
    sinkhorn_study,
)
from utils.data_utils import gen_synthetic_images


def test_dynamics_transport_keeps_codes_alive():
    results = [dynamics2d(seed, steps=200) for seed in range(10)]
    optvq = [result.runs["optvq"].usage for result in results]
    nearest = [result.runs["nearest"].usage for result in results]
    assert all(o >= 23 and o > n for o, n in zip(optvq, nearest)), (optvq, nearest)
    assert np.median(optvq) == 25
    assert np.median(nearest) < 25
    payload = results[0].to_dict()
    assert len(payload["trajectories"]["optvq"]) == 201
    assert len(payload["trajectories"]["optvq"][0]) == 25
    assert len(payload["points"]) == 100


def test_dynamics_is_deterministic():
    a = dynamics2d(3, steps=20).to_dict()
    b = dynamics2d(3, steps=20).to_dict()
    assert a == b


def test_separated_pairs_geometry():
    features, codes = separated_pairs(0)
    assert features.shape == codes.shape == (16, 2)
    nearest = np.linalg.norm(features[:, None] - codes[None], axis=2).min(axis=1)
    assert np.all(nearest <= 0.5)


@pytest.mark.parametrize("seed", range(5))
def test_consistency_cases(seed):
    separated, mismatched = consistency(seed, SinkhornConfig())
    assert separated.name == "separated_pairs"
    assert separated.agreement == 1.0
    assert separated.optvq_coverage == separated.codes == 16
    assert mismatched.optvq_coverage >= 16
    assert mismatched.optvq_coverage >= mismatched.nn_coverage + 10
    assert mismatched.agreement < 1.0


def test_sinkhorn_study_rows():
    rows = sinkhorn_study(0, trials=100, max_iters=10)
    assert [row.iteration for row in rows] == list(range(1, 11))
    assert all(row.median_residual <= row.max_residual for row in rows)
    medians = [row.median_residual for row in rows]
    assert all(later <= earlier for earlier, later in zip(medians[1:], medians[2:])), medians
    assert medians[-1] < medians[1] / 5


def test_sinkhorn_study_high_temperature_settles_by_fifth_iteration():
    rows = sinkhorn_study(0, trials=100, max_iters=5, epsilon=0.5)
    assert rows[4].max_residual < 1e-3


def test_normalize_study_flags():
    rows = normalize_study(0, size=16, dim=4, bins=10)
    assert len(rows) == 2 * len(NORMALIZE_SCALE_EXPONENTS)
    for row in rows:
        assert sum(row.histogram) == 16 * 16
        assert len(row.bin_edges) == 11
        if row.normalized:
            assert row.cost_min == 0.0
            assert row.cost_std == pytest.approx(1.0, abs=1e-9)
            assert row.plan_finite
            assert not row.underflow_row
            assert row.argmax_matches_unit_scale
    raw_large = [row for row in rows if not row.normalized and row.scale_exponent == 3]
    assert raw_large[0].underflow_row


@pytest.mark.slow
def test_ablation_grid_cells():
    base = TrainConfig(
        quantizer=QuantizerConfig(heads=1), patch_size=8, hidden_dim=8, batch_size=8, epochs=1, seed=4
    )
    train_set = gen_synthetic_images(8, seed=0)
    val_set = gen_synthetic_images(4, seed=1, split="val")
    cells = ablation_grid(base, train_set, val_set, latent_dims=(2, 4), codebook_sizes=(4, 8))
    assert len(cells) == 8
    assert {(c.latent_dim, c.codebook_size) for c in cells} == {(2, 4), (2, 8), (4, 4), (4, 8)}
    seeds = {(c.latent_dim, c.codebook_size): c.seed for c in cells}
    assert seeds[(4, 8)] == 4 + 1000 + 1
    for cell in cells:
        row = cell.row()
        assert 0 < row["usage_frac"] <= 1
        assert np.isfinite(row["l_rec"])

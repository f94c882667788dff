"""Desk-scale studies: 2-D code dynamics, nn/transport consistency, Sinkhorn
convergence, cost-normalization robustness and the quantizer ablation grid."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from models.config import QuantizerConfig, SinkhornConfig, TrainConfig
from models.optim import OptimState, adam_step
from processing.numerics import matrix_stats, pairwise_sq_distances, seeded_rng
from processing.pipeline import EvalResult, TrainReport, evaluate, train
from processing.quantizer import (
    Codebook,
    assign,
    commitment_loss,
    nn_assign,
    optvq_assign,
    scatter_code_grads,
)
from processing.transport import normalize_cost, plan_argmax, sinkhorn, sinkhorn_converged, sinkhorn_init, sinkhorn_trace
from utils.data_utils import ImageDataset, mismatched_clouds

logger = logging.getLogger(__name__)

ABLATION_LATENT_DIMS = (8, 32)
ABLATION_CODEBOOK_SIZES = (128, 1024)
NORMALIZE_SCALE_EXPONENTS = tuple(range(-3, 4))


@dataclass
class DynamicsRun:
    kind: str
    usage: int
    trajectory: list[list[list[float]]]
    final_indices: list[int]


@dataclass
class DynamicsResult:
    steps: int
    codes: int
    points: list[list[float]]
    runs: dict[str, DynamicsRun]

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "codes": self.codes,
            "usage_nn": self.runs["nearest"].usage,
            "usage_optvq": self.runs["optvq"].usage,
            "points": self.points,
            "trajectories": {kind: run.trajectory for kind, run in self.runs.items()},
            "final_indices": {kind: run.final_indices for kind, run in self.runs.items()},
        }


def train_codes_2d(
    points: np.ndarray, codes: np.ndarray, cfg: QuantizerConfig, steps: int, lr: float
) -> DynamicsRun:
    """Move codes by the codebook half of the commitment loss; the data points stay fixed."""
    book = Codebook(codes.copy())
    optim = OptimState(lr=lr)
    trajectory = [book.codes.tolist()]
    for _ in range(steps):
        assignment = assign(points, book, cfg)
        z_q = book.codes[assignment.indices]
        _, _, grad_zq = commitment_loss(points, z_q, cfg.beta)
        grad = scatter_code_grads(book, assignment, grad_zq)
        book.codes = adam_step({"codes": book.codes}, {"codes": grad}, optim)["codes"]
        trajectory.append(book.codes.tolist())
    final = assign(points, book, cfg, record=False).indices
    return DynamicsRun(cfg.kind, int(len(np.unique(final))), trajectory, final.tolist())


def dynamics2d(
    seed: int,
    steps: int = 200,
    lr: float = 0.05,
    sinkhorn_cfg: SinkhornConfig | None = None,
    points: int = 100,
    codes: int = 25,
) -> DynamicsResult:
    data, code_cloud = mismatched_clouds(seed, points, codes)
    runs = {}
    for kind in ("nearest", "optvq"):
        cfg = QuantizerConfig(kind=kind, sinkhorn=sinkhorn_cfg or SinkhornConfig(), heads=1)
        runs[kind] = train_codes_2d(data.points, code_cloud.points, cfg, steps, lr)
        logger.info("dynamics2d seed=%d %s usage %d/%d", seed, kind, runs[kind].usage, codes)
    return DynamicsResult(steps, codes, data.points.tolist(), runs)


@dataclass
class ConsistencyCase:
    name: str
    nn_indices: list[int]
    optvq_indices: list[int]
    agreement: float
    nn_coverage: int
    optvq_coverage: int
    codes: int


def separated_pairs(seed: int, n: int = 16, spacing: float = 10.0, gap: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Codes on a grid; each feature sits within ``gap`` of exactly one code, in shuffled order."""
    rng = seeded_rng(seed)
    side = int(np.ceil(np.sqrt(n)))
    grid = np.array([(i // side, i % side) for i in range(n)], dtype=np.float64) * spacing
    codes = grid + rng.uniform(-gap, gap, size=grid.shape)
    direction = rng.standard_normal(size=grid.shape)
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    offsets = direction * rng.uniform(0.0, gap, size=(n, 1))
    features = codes[rng.permutation(n)] + offsets
    return features, codes


def _case(name: str, features: np.ndarray, codes: np.ndarray, optvq: np.ndarray) -> ConsistencyCase:
    nn = nn_assign(features, Codebook(codes), record=False).indices
    return ConsistencyCase(
        name=name,
        nn_indices=nn.tolist(),
        optvq_indices=optvq.tolist(),
        agreement=float(np.mean(nn == optvq)),
        nn_coverage=int(len(np.unique(nn))),
        optvq_coverage=int(len(np.unique(optvq))),
        codes=len(codes),
    )


def consistency(seed: int, sinkhorn_cfg: SinkhornConfig | None = None) -> list[ConsistencyCase]:
    cfg = sinkhorn_cfg or SinkhornConfig()
    features, codes = separated_pairs(seed)
    converged = sinkhorn_converged(pairwise_sq_distances(features, codes), epsilon=cfg.epsilon, tol=1e-10)
    overlapping = _case("separated_pairs", features, codes, converged.argmax())

    data, code_cloud = mismatched_clouds(seed)
    optvq = optvq_assign(data.points, Codebook(code_cloud.points), cfg, record=False).indices
    mismatched = _case("mismatched", data.points, code_cloud.points, optvq)
    return [overlapping, mismatched]


@dataclass
class ConvergenceRow:
    iteration: int
    median_residual: float
    max_residual: float


def random_problem(seed: int, points: int = 10, codes: int = 10, dim: int = 16) -> np.ndarray:
    rng = seeded_rng(seed)
    return pairwise_sq_distances(rng.standard_normal((points, dim)), rng.standard_normal((codes, dim)))


def sinkhorn_study(
    seed: int, trials: int = 100, max_iters: int = 10, epsilon: float = 10.0, size: int = 10, dim: int = 16
) -> list[ConvergenceRow]:
    cfg = SinkhornConfig(epsilon=epsilon, iterations=max_iters)
    traces = np.array([sinkhorn_trace(random_problem(seed + t, size, size, dim), cfg) for t in range(trials)])
    return [
        ConvergenceRow(t + 1, float(np.median(traces[:, t])), float(np.max(traces[:, t])))
        for t in range(max_iters)
    ]


@dataclass
class NormalizationRow:
    scale_exponent: int
    normalized: bool
    cost_min: float
    cost_std: float
    plan_finite: bool
    underflow_row: bool
    argmax_matches_unit_scale: bool
    histogram: list[int] = field(default_factory=list)
    bin_edges: list[float] = field(default_factory=list)


def normalize_study(
    seed: int, size: int = 64, dim: int = 8, epsilon: float = 10.0, iterations: int = 5, bins: int = 20
) -> list[NormalizationRow]:
    base = random_problem(seed, size, size, dim)
    reference = sinkhorn(base, SinkhornConfig(epsilon=epsilon, iterations=iterations)).argmax()
    rows = []
    for k in NORMALIZE_SCALE_EXPONENTS:
        D = base * 10.0**k
        for normalized in (True, False):
            cost = normalize_cost(D) if normalized else D
            _, std = matrix_stats(cost)
            A0 = sinkhorn_init(cost, epsilon).plan
            underflow = bool(np.any(np.all(A0 == 0.0, axis=1)))
            plan = sinkhorn(D, SinkhornConfig(epsilon=epsilon, iterations=iterations, normalize=normalized))
            counts, edges = np.histogram(cost, bins=bins)
            rows.append(
                NormalizationRow(
                    scale_exponent=k,
                    normalized=normalized,
                    cost_min=float(cost.min()),
                    cost_std=std,
                    plan_finite=bool(np.all(np.isfinite(plan.plan))),
                    underflow_row=underflow,
                    argmax_matches_unit_scale=bool(np.array_equal(plan_argmax(plan.plan), reference)),
                    histogram=counts.tolist(),
                    bin_edges=edges.tolist(),
                )
            )
    return rows


@dataclass
class AblationCell:
    latent_dim: int
    codebook_size: int
    quantizer: str
    seed: int
    result: EvalResult
    report: TrainReport

    def row(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "codebook_size": self.codebook_size,
            "quantizer": self.quantizer,
            "seed": self.seed,
            "l_rec": self.result.l_rec,
            "usage_frac": self.result.usage.fraction_used,
            "perplexity": self.result.usage.perplexity,
            "psnr": self.result.psnr,
        }


def ablation_grid(
    base: TrainConfig,
    train_set: ImageDataset,
    val_set: ImageDataset,
    latent_dims=ABLATION_LATENT_DIMS,
    codebook_sizes=ABLATION_CODEBOOK_SIZES,
) -> list[AblationCell]:
    """Train both quantizers on every (latent_dim, codebook_size) cell.

    Each cell gets its own derived seed, shared by the two quantizers.
    """
    cells = []
    for i, d in enumerate(latent_dims):
        for j, n in enumerate(codebook_sizes):
            seed = base.seed + 1000 * i + j
            for kind in ("nearest", "optvq"):
                qcfg = replace(base.quantizer, kind=kind, heads=1)
                config = replace(base, quantizer=qcfg, latent_dim=d, codebook_size=n, seed=seed)
                report = train(config, train_set)
                result = evaluate(report.state, qcfg, val_set, config.batch_size)
                logger.info(
                    "ablate d=%d n=%d %s: l_rec %.4f usage %.2f%%", d, n, kind, result.l_rec, 100 * result.usage.fraction_used
                )
                cells.append(AblationCell(d, n, kind, seed, result, report))
    return cells

"""
Leave-one-out ranking evaluation, ItemPop baseline and noise robustness probes
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from data.interactions import BinaryDataset
from data.splits import SplitSpec
from gradients import make_gaussian_noise, noise_grad
from model import (ModelParams, NoiseKind, NoiseSite, NoiseSpec, NoiseTensor, forward, profile_matrix,
                   rank_top_n, site_shape)
from utils.numerics import RngStream, scale_to_norm

logger = logging.getLogger("evaluation")

DEFAULT_NS = (5, 10)
REPORT_HEADER = ["metric", "n", "value", "users"]
CURVE_HEADER = ["site", "kind", "epsilon", "hr5", "ndcg5"]


@dataclass
class EvalReport:
    metrics: Dict[int, Tuple[float, float]]
    tested_user_count: int

    def hr(self, n: int = 5) -> float:
        return self.metrics[n][0]

    def ndcg(self, n: int = 5) -> float:
        return self.metrics[n][1]

    def rows(self) -> List[List[str]]:
        out = []
        for n in sorted(self.metrics):
            hr, ndcg = self.metrics[n]
            out.append(["hr", str(n), f"{hr:.6f}", str(self.tested_user_count)])
            out.append(["ndcg", str(n), f"{ndcg:.6f}", str(self.tested_user_count)])
        return out


@dataclass
class RobustnessCurve:
    site: str
    kind: str
    points: List[Tuple[float, float, float]] = field(default_factory=list)

    def at(self, epsilon: float) -> Tuple[float, float, float]:
        for point in self.points:
            if math.isclose(point[0], epsilon):
                return point
        raise KeyError(f"no point at epsilon={epsilon} on the {self.site}/{self.kind} curve")

    def relative_drop(self, epsilon: float) -> float:
        """Relative HR@5 loss at `epsilon` against the clean point."""
        clean = self.points[0][1]
        if clean == 0:
            return 0.0
        return (clean - self.at(epsilon)[1]) / clean

    def rows(self) -> List[List[str]]:
        return [[self.site, self.kind, f"{e:g}", f"{hr:.6f}", f"{nd:.6f}"] for e, hr, nd in self.points]


def hit(ranklist: Sequence[int], held_out: int) -> int:
    return 1 if held_out in ranklist else 0


def ndcg_at(ranklist: Sequence[int], held_out: int) -> float:
    if held_out not in ranklist:
        return 0.0
    position = list(ranklist).index(held_out) + 1
    return 1.0 / math.log2(position + 1)


def _rank_metrics(split: SplitSpec, users: Sequence[int], score_rows: np.ndarray, ns: Sequence[int]):
    """Per-user (hit, ndcg) sums at every n for one block of users."""
    sums = {n: [0.0, 0.0] for n in ns}
    deepest = max(ns)
    for row, user in enumerate(users):
        held = split.held_out[user]
        ranked = rank_top_n(score_rows[row], split.candidates(user), deepest)
        for n in ns:
            top = ranked[:n]
            sums[n][0] += hit(top, held)
            sums[n][1] += ndcg_at(top, held)
    return sums


def _evaluate_blocks(split: SplitSpec, scorer: Callable[[np.ndarray], np.ndarray],
                     ns: Sequence[int], batch_users: int) -> EvalReport:
    ns = sorted(set(int(n) for n in ns))
    users = np.array(split.tested_users, dtype=np.int64)
    totals = {n: [0.0, 0.0] for n in ns}
    for start in range(0, len(users), batch_users):
        block = users[start:start + batch_users]
        sums = _rank_metrics(split, block, scorer(block), ns)
        for n in ns:
            totals[n][0] += sums[n][0]
            totals[n][1] += sums[n][1]
    count = len(users)
    metrics = {n: ((totals[n][0] / count, totals[n][1] / count) if count else (0.0, 0.0)) for n in ns}
    return EvalReport(metrics, count)


def evaluate(params: ModelParams, dataset: BinaryDataset, split: SplitSpec, ns: Sequence[int] = DEFAULT_NS,
             noise: Optional[NoiseTensor] = None, profiles: Optional[List[np.ndarray]] = None,
             batch_users: int = 512) -> EvalReport:
    """HR@N / NDCG@N over tested users, scoring each user's training vector.

    Candidates are ranked on the logits; the decoder activation is monotone.
    """
    profiles = split.train_positives if profiles is None else profiles

    def scorer(block):
        Y = profile_matrix(profiles, block, dataset.item_count)
        return forward(params, block, Y, noise).logits

    return _evaluate_blocks(split, scorer, ns, batch_users)


def item_popularity(dataset: BinaryDataset, split: SplitSpec) -> np.ndarray:
    counts = np.zeros(dataset.item_count)
    for items in split.train_positives:
        counts[items] += 1
    return counts


def itempop(dataset: BinaryDataset, split: SplitSpec, ns: Sequence[int] = DEFAULT_NS) -> EvalReport:
    """Non-personalized baseline: score = training interaction count."""
    counts = item_popularity(dataset, split)
    report = _evaluate_blocks(split, lambda block: np.broadcast_to(counts, (len(block), len(counts))), ns, 4096)
    n = min(report.metrics)
    logger.info(f"ItemPop: HR@{n}={report.hr(n):.4f} NDCG@{n}={report.ndcg(n):.4f} over {report.tested_user_count} users")
    return report


def probe_noise_direction(params: ModelParams, dataset: BinaryDataset, split: SplitSpec, site,
                         batch_users: int = 512) -> np.ndarray:
    """Loss gradient at `site` summed over every tested user's full reconstruction."""
    users = np.array(split.tested_users, dtype=np.int64)
    total = np.zeros(site_shape(params, site))
    for start in range(0, len(users), batch_users):
        block = users[start:start + batch_users]
        Y = profile_matrix(split.train_positives, block, dataset.item_count)
        g = noise_grad(params, block, Y, site)
        total += g
    return total


def noise_impact_probe(params: ModelParams, dataset: BinaryDataset, split: SplitSpec,
                       sites: Iterable[str], kinds: Iterable[str], eps_grid: Sequence[float],
                       trials: int, rng: RngStream, ns: Sequence[int] = DEFAULT_NS,
                       batch_users: int = 512) -> List[RobustnessCurve]:
    """Evaluate the trained model with one noise site perturbed at each level of eps_grid."""
    eps_grid = sorted(set(float(e) for e in eps_grid) | {0.0})
    clean = evaluate(params, dataset, split, ns, batch_users=batch_users)
    logger.info(f"Clean model: HR@5={clean.hr(5):.4f} NDCG@5={clean.ndcg(5):.4f}")

    curves = []
    for site_pos, site in enumerate(sites):
        site = NoiseSite(site)
        for kind in kinds:
            kind = NoiseKind(kind)
            curve = RobustnessCurve(site.value, kind.value, [(0.0, clean.hr(5), clean.ndcg(5))])
            if kind is NoiseKind.ADVERSARIAL:
                direction = probe_noise_direction(params, dataset, split, site, batch_users)
                for eps in eps_grid[1:]:
                    noise = NoiseTensor(NoiseSpec(site, kind, eps), scale_to_norm(direction, eps))
                    report = evaluate(params, dataset, split, ns, noise, batch_users=batch_users)
                    curve.points.append((eps, report.hr(5), report.ndcg(5)))
            else:
                for eps in eps_grid[1:]:
                    hr = nd = 0.0
                    for trial in range(trials):
                        trial_rng = rng.child(site_pos * 100003 + trial)
                        noise = make_gaussian_noise(params, site, eps, trial_rng)
                        report = evaluate(params, dataset, split, ns, noise, batch_users=batch_users)
                        hr += report.hr(5)
                        nd += report.ndcg(5)
                    curve.points.append((eps, hr / trials, nd / trials))
            last = curve.points[-1]
            logger.info(
                f"{site.value}/{kind.value}: HR@5 {clean.hr(5):.4f} -> {last[1]:.4f} at epsilon={last[0]:g}"
            )
            curves.append(curve)
    return curves


def robustness_sweep(params: ModelParams, dataset: BinaryDataset, split: SplitSpec,
                     site=NoiseSite.DECODER_WEIGHTS, eps_grid: Sequence[float] = (0, 0.5, 1, 2, 4, 8, 15),
                     ns: Sequence[int] = DEFAULT_NS, batch_users: int = 512) -> RobustnessCurve:
    """Adversarial-noise degradation curve at one site (decoder weights by default)."""
    curves = noise_impact_probe(params, dataset, split, [site], [NoiseKind.ADVERSARIAL], eps_grid,
                                trials=1, rng=RngStream(0), ns=ns, batch_users=batch_users)
    return curves[0]


def write_report_csv(report: EvalReport, path) -> Path:
    return _write_csv(path, REPORT_HEADER, report.rows())


def write_curves_csv(curves: Sequence[RobustnessCurve], path) -> Path:
    rows = [row for curve in curves for row in curve.rows()]
    return _write_csv(path, CURVE_HEADER, rows)


def _write_csv(path, header: List[str], rows: List[List[str]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return path

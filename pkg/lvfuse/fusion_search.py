"""
Two-stage view-combination search and the first-layer kernel sweep.

Stage one scores every pair of candidate views by MRMSE and keeps the union of the four best
pairs. Stage two scores every 3-view subset of that union plus the union itself and keeps the
minimum. Evaluators are either lookup tables (fixtures) or real train/validate runs.
"""

from __future__ import annotations

import itertools
import logging
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

import localize as loc
import trainer as tr
import views as vw
from data_model import Study
from evaluation import mrmse
from nn.vgg import VGGConfig, build_vgg
from services.tables import read_table, write_rows

log = logging.getLogger(__name__)

CANDIDATE_VIEWS: tuple[vw.ViewRole, ...] = (
    vw.ViewRole.CH2,
    vw.ViewRole.CH4,
    vw.ViewRole.TOP,
    vw.ViewRole.MID,
    vw.ViewRole.BOTTOM,
)
TOP_PAIRS = 4
STAGE_TWO_SIZE = 3

Evaluator = Callable[[tuple[vw.ViewRole, ...]], tuple[float, float]]


@dataclass(frozen=True)
class ComboScore:
    views: tuple[vw.ViewRole, ...]
    rmse_edv: float
    rmse_esv: float

    @property
    def mrmse(self) -> float:
        return mrmse(self.rmse_edv, self.rmse_esv)

    @property
    def label(self) -> str:
        return "+".join(v.value for v in self.views)


def _order(view: vw.ViewRole) -> int:
    try:
        return CANDIDATE_VIEWS.index(view)
    except ValueError:
        raise ValueError(f"view {view.value!r} is not a fusion candidate") from None


def canonical(views: Iterable[vw.ViewRole]) -> tuple[vw.ViewRole, ...]:
    return tuple(sorted(set(views), key=_order))


def rank_key(score: ComboScore) -> tuple[float, tuple[int, ...]]:
    return score.mrmse, tuple(_order(v) for v in score.views)


def score_combinations(
    evaluator: Evaluator, combos: Sequence[tuple[vw.ViewRole, ...]], threads: int = 1
) -> list[ComboScore]:
    def one(combo: tuple[vw.ViewRole, ...]) -> ComboScore:
        edv, esv = evaluator(combo)
        log.debug("fusion_search: %s edv=%.3f esv=%.3f", "+".join(v.value for v in combo), edv, esv)
        return ComboScore(combo, float(edv), float(esv))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(one, combos))


def pairwise_view_search(
    evaluator: Evaluator,
    candidates: Sequence[vw.ViewRole] = CANDIDATE_VIEWS,
    threads: int = 1,
) -> tuple[list[ComboScore], tuple[vw.ViewRole, ...]]:
    """Four best pairs (ties by view order) and the union of their members."""
    views = canonical(candidates)
    if len(views) < 2:
        raise ValueError("pairwise search needs at least two candidate views")
    pairs = list(itertools.combinations(views, 2))
    ranked = sorted(score_combinations(evaluator, pairs, threads), key=rank_key)
    top = ranked[:TOP_PAIRS]
    optimal = canonical(v for s in top for v in s.views)
    log.info(
        "fusion_search: top pairs %s -> optimal set %s",
        ", ".join(f"{s.label}={s.mrmse:.3f}" for s in top),
        "+".join(v.value for v in optimal),
    )
    return top, optimal


def stage_two_combinations(optimal_set: Sequence[vw.ViewRole]) -> list[tuple[vw.ViewRole, ...]]:
    views = canonical(optimal_set)
    if len(views) <= STAGE_TWO_SIZE:
        return [views]
    combos = list(itertools.combinations(views, STAGE_TWO_SIZE))
    combos.append(views)
    return combos


def optimal_set_search(evaluator: Evaluator, optimal_set: Sequence[vw.ViewRole], threads: int = 1) -> ComboScore:
    scores = score_combinations(evaluator, stage_two_combinations(optimal_set), threads)
    best = min(scores, key=rank_key)
    log.info("fusion_search: best combination %s mrmse=%.3f", best.label, best.mrmse)
    return best


# --- evaluators ------------------------------------------------------------------------------------


def parse_combo(text: str) -> tuple[vw.ViewRole, ...]:
    return canonical(vw.parse_view_set(text.replace("+", ",")))


def load_fixture_evaluator(path: Path) -> Evaluator:
    """Lookup evaluator over a `views,rmse_edv,rmse_esv` table; view order within a row is irrelevant."""
    frame = read_table(Path(path), ("views", "rmse_edv", "rmse_esv"))
    table: dict[frozenset[vw.ViewRole], tuple[float, float]] = {}
    for row in frame.itertuples(index=False):
        key = frozenset(parse_combo(str(row.views)))
        if key in table:
            raise ValueError(f"{path}: duplicate fixture row for {row.views}")
        table[key] = (float(row.rmse_edv), float(row.rmse_esv))

    def evaluate(views: tuple[vw.ViewRole, ...]) -> tuple[float, float]:
        try:
            return table[frozenset(views)]
        except KeyError:
            raise ValueError(f"fixture {path} has no entry for {'+'.join(v.value for v in views)}") from None

    return evaluate


class TrainingEvaluator:
    """Scores a view combination by training one EDV and one ESV model and reading their best validation RMSE."""

    def __init__(
        self,
        studies: Sequence[Study],
        bank: loc.AtlasBank,
        vgg_config: VGGConfig,
        train_config: tr.TrainConfig,
        loc_config: loc.LocalizationConfig | None = None,
        val_fraction: float = 0.2,
        threads: int = 1,
    ) -> None:
        self.vgg_config = vgg_config
        self.train_config = train_config
        self.studies = [s for s in studies if s.truth is not None]
        self.localized = vw.localize_all(self.studies, bank, loc_config, threads)
        self.train_idx, self.val_idx = tr.split_indices(len(self.studies), val_fraction, train_config.seed)

    def _dataset(self, views: tuple[vw.ViewRole, ...], phase: vw.Phase, idx: np.ndarray) -> tr.Dataset:
        samples = []
        for i in idx:
            study = self.studies[int(i)]
            if vw.unusable_reason(study, views) is not None:
                continue
            sample = vw.sample_for(study, self.localized[study.study_id], views, phase, self.vgg_config.input_hw)
            if sample is not None:
                samples.append(sample)
        return tr.Dataset.from_samples(samples)

    def __call__(self, views: tuple[vw.ViewRole, ...]) -> tuple[float, float]:
        net_cfg = self.vgg_config.model_copy(update={"input_channels": len(views)})
        out: list[float] = []
        for phase, target in ((vw.Phase.ED, "edv"), (vw.Phase.ES, "esv")):
            cfg = self.train_config.model_copy(update={"target": target})
            result = tr.train(
                self._dataset(views, phase, self.train_idx),
                self._dataset(views, phase, self.val_idx),
                build_vgg(net_cfg, seed=cfg.seed),
                cfg,
            )
            out.append(result.best.validation_loss)
        return out[0], out[1]


# --- kernel sweep ----------------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelScore:
    kernel_size: int
    rmse_edv: float
    rmse_esv: float

    @property
    def mrmse(self) -> float:
        return mrmse(self.rmse_edv, self.rmse_esv)


def kernel_sweep(
    evaluator_factory: Callable[[int], Evaluator],
    kernel_sizes: Sequence[int],
    views: Sequence[vw.ViewRole],
) -> list[KernelScore]:
    combo = tuple(views)
    out: list[KernelScore] = []
    for k in kernel_sizes:
        edv, esv = evaluator_factory(k)(combo)
        out.append(KernelScore(k, float(edv), float(esv)))
        log.info("fusion_search: kernel=%d edv=%.3f esv=%.3f", k, edv, esv)
    return out


def write_scores(path: Path, scores: Sequence[ComboScore]) -> None:
    write_rows(path, ("views", "rmse_edv", "rmse_esv", "mrmse"), [(s.label, s.rmse_edv, s.rmse_esv, s.mrmse) for s in scores])


def write_kernel_scores(path: Path, scores: Sequence[KernelScore]) -> None:
    write_rows(
        path, ("kernel", "rmse_edv", "rmse_esv", "mrmse"), [(s.kernel_size, s.rmse_edv, s.rmse_esv, s.mrmse) for s in scores]
    )

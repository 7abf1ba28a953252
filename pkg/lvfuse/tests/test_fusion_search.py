from __future__ import annotations

from pathlib import Path

import pandas as pd
import pytest

import fusion_search as fs
import views as vw

FIXTURES = Path(__file__).parent / "fixtures"
R = vw.ViewRole


@pytest.fixture
def pair_evaluator():
    return fs.load_fixture_evaluator(FIXTURES / "pair_scores.csv")


@pytest.fixture
def combination_evaluator():
    return fs.load_fixture_evaluator(FIXTURES / "combination_scores.csv")


def test_pairwise_search_keeps_four_best_pairs(pair_evaluator):
    top, optimal = fs.pairwise_view_search(pair_evaluator)
    assert [s.views for s in top] == [(R.CH2, R.TOP), (R.TOP, R.MID), (R.CH2, R.MID), (R.CH2, R.CH4)]
    assert [s.mrmse for s in top] == pytest.approx([8.2, 8.3, 8.6, 8.7])
    assert optimal == (R.CH2, R.CH4, R.TOP, R.MID)


def test_stage_two_picks_best_combination(pair_evaluator, combination_evaluator):
    _, optimal = fs.pairwise_view_search(pair_evaluator)
    best = fs.optimal_set_search(combination_evaluator, optimal)
    assert set(best.views) == {R.TOP, R.MID, R.CH2}
    assert (best.rmse_edv, best.rmse_esv) == (8.1, 6.9)
    assert best.mrmse == pytest.approx(7.5)


def test_stage_two_combinations():
    combos = fs.stage_two_combinations([R.MID, R.TOP, R.CH4, R.CH2])
    assert len(combos) == 5
    assert combos[-1] == (R.CH2, R.CH4, R.TOP, R.MID)
    assert all(len(c) == 3 for c in combos[:-1])
    assert fs.stage_two_combinations([R.TOP, R.MID]) == [(R.TOP, R.MID)]
    assert fs.stage_two_combinations([R.TOP, R.MID, R.CH2]) == [(R.CH2, R.TOP, R.MID)]


def test_ties_break_on_view_order():
    _, optimal = fs.pairwise_view_search(lambda views: (5.0, 5.0))
    # first four pairs in candidate order: 2ch with each of 4ch, top, mid, bottom
    assert optimal == fs.CANDIDATE_VIEWS


def test_every_pair_is_scored_once():
    seen: list[tuple[vw.ViewRole, ...]] = []

    def record(views):
        seen.append(views)
        return 1.0, 2.0

    fs.pairwise_view_search(record, threads=3)
    assert sorted(seen) == sorted(set(seen))
    assert len(seen) == 10


def test_search_needs_two_candidates():
    with pytest.raises(ValueError, match="at least two"):
        fs.pairwise_view_search(lambda v: (1.0, 1.0), candidates=[R.TOP])
    with pytest.raises(ValueError, match="not a fusion candidate"):
        fs.canonical([R.BASE, R.TOP])


def test_fixture_evaluator_ignores_view_order(combination_evaluator):
    assert combination_evaluator((R.CH2, R.TOP, R.MID)) == (8.1, 6.9)
    assert combination_evaluator((R.MID, R.CH2, R.TOP)) == (8.1, 6.9)
    with pytest.raises(ValueError, match="no entry"):
        combination_evaluator((R.BOTTOM, R.MID))


def test_fixture_evaluator_rejects_duplicates(tmp_path):
    path = tmp_path / "dup.csv"
    path.write_text("views,rmse_edv,rmse_esv\ntop+mid,1,1\nmid+top,2,2\n")
    with pytest.raises(ValueError, match="duplicate"):
        fs.load_fixture_evaluator(path)


def test_kernel_sweep_and_tables(tmp_path):
    def factory(kernel):
        return lambda views: (float(kernel), float(kernel) + 1.0)

    scores = fs.kernel_sweep(factory, [3, 7, 19], vw.PRIMARY_VIEW_SET)
    assert [s.kernel_size for s in scores] == [3, 7, 19]
    assert scores[2].mrmse == pytest.approx(19.5)
    fs.write_kernel_scores(tmp_path / "kernels.csv", scores)
    table = pd.read_csv(tmp_path / "kernels.csv")
    assert list(table.columns) == ["kernel", "rmse_edv", "rmse_esv", "mrmse"]
    assert table["mrmse"].tolist() == pytest.approx([3.5, 7.5, 19.5])


def test_write_scores_labels(tmp_path, pair_evaluator):
    top, _ = fs.pairwise_view_search(pair_evaluator)
    fs.write_scores(tmp_path / "pairs.csv", top)
    lines = (tmp_path / "pairs.csv").read_text().splitlines()
    assert lines[0] == "views,rmse_edv,rmse_esv,mrmse"
    assert lines[1] == "2ch+top,8.200000,8.200000,8.200000"


def test_training_evaluator_trains_one_model_per_volume(make_study, monkeypatch):
    import localize as loc
    import trainer as tr
    from nn.vgg import VGGConfig

    studies = [make_study(f"s{i}", truth=(100.0 + 5 * i, 40.0 + i), seed=i) for i in range(6)]
    studies.append(make_study("unlabelled", truth=None))

    def fake_localize_all(items, bank, loc_config=None, threads=1):
        return {
            s.study_id: loc.StudyLocalization(
                study_id=s.study_id,
                sax_center=(16.0, 16.0),
                sax_frames=s.sax.frames,
                lax_centers={},
                lax_frames={},
                ed_index=0,
                es_index=2,
                roi_size=16,
            )
            for s in items
        }

    monkeypatch.setattr(vw, "localize_all", fake_localize_all)
    evaluator = fs.TrainingEvaluator(
        studies,
        None,
        VGGConfig(input_hw=32, channel_scale=1 / 16, depth=14, first_kernel_size=3),
        tr.TrainConfig(epochs=1, batch_size=2, augment=False, learning_rate=1e-3),
        val_fraction=0.34,
    )
    assert len(evaluator.studies) == 6
    assert len(evaluator.val_idx) == 2
    edv, esv = evaluator((R.TOP, R.MID))
    assert edv > 0 and esv > 0
    assert (edv, esv) == evaluator((R.TOP, R.MID))

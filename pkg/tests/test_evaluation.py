"""Harness semantics: threat models, protocol structure, and report emission."""

import json

import numpy as np
import pytest

from auxblocks import evaluation, models
from auxblocks.adv_training import ATConfig
from auxblocks.attacks import AttackConfig
from auxblocks.evaluation import (EvalReport, EvalRow, ThreatModel, adaptive_eval,
                                  block_position_study, emit_report, epsilon_sweep,
                                  loss_ratio_experiment, read_report_csv, static_eval)

from conftest import small_aux_spec


class TestThreatModel:
    def test_factories_match_invariants(self):
        assert ThreatModel.static() == ThreatModel("static", True, False)
        assert ThreatModel.adaptive() == ThreatModel("adaptive", True, True)
        assert ThreatModel.black_box() == ThreatModel("black_box", False, False)

    def test_inconsistent_flags_rejected(self):
        with pytest.raises(ValueError, match="knowledge"):
            ThreatModel("static", True, True)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            ThreatModel("gray_box", True, False)


@pytest.fixture(scope="module")
def static_report(plain_model, aux_model, blobs_test):
    return static_eval({"NA": plain_model, "AuxBlock": aux_model}, plain_model,
                       blobs_test, attack_names=("clean", "pgd"), n=60, seed=0,
                       pgd_config=AttackConfig(family="pgd", epsilon=0.2,
                                               step_size=0.05, iterations=3))


class TestStaticEval:

    def test_clean_rows_match_direct_accuracy(self, static_report, plain_model, blobs_test):
        report = static_report
        from auxblocks import ensemble
        rng = np.random.default_rng(0)
        subset = blobs_test.sample(60, rng)
        clean_na = [r for r in report.rows
                    if r.defense == "NA" and r.attack == "clean"][0]
        assert clean_na.accuracy == pytest.approx(
            ensemble.accuracy(plain_model, subset.images, subset.labels, "public"))

    def test_row_structure(self, static_report):
        report = static_report
        assert all(r.threat == "static" for r in report.rows)
        assert all(0.0 <= r.accuracy <= 1.0 for r in report.rows)
        defenses = {r.defense for r in report.rows}
        assert defenses == {"NA", "AuxBlock"}
        aux_modes = {r.mode for r in report.rows if r.defense == "AuxBlock"}
        assert aux_modes == {"vote", "score", "private_vote", "private_score"}

    def test_disagreement_rate_reported(self, static_report):
        report = static_report
        assert "disagreement_rate:clean" in report.metadata

    def test_attacks_come_from_undefended_only(self, plain_model, aux_model, blobs_test):
        """Swapping the defense model must not change the NA rows: the
        adversarials are crafted against the undefended backbone alone."""
        other_aux = models.build_model(small_aux_spec(), seed=31)
        r1 = static_eval({"NA": plain_model, "AuxBlock": aux_model}, plain_model,
                         blobs_test, attack_names=("pgd",), n=40, seed=3)
        r2 = static_eval({"NA": plain_model, "AuxBlock": other_aux}, plain_model,
                         blobs_test, attack_names=("pgd",), n=40, seed=3)
        na1 = [r for r in r1.rows if r.defense == "NA"]
        na2 = [r for r in r2.rows if r.defense == "NA"]
        assert [r.accuracy for r in na1] == [r.accuracy for r in na2]

    def test_reproducible_rows(self, plain_model, aux_model, blobs_test):
        kwargs = dict(attack_names=("pgd",), n=40, seed=9)
        r1 = static_eval({"NA": plain_model}, plain_model, blobs_test, **kwargs)
        r2 = static_eval({"NA": plain_model}, plain_model, blobs_test, **kwargs)
        assert [vars(a) for a in r1.rows] == [vars(b) for b in r2.rows]


class TestAdaptiveEval:
    def test_m0_aux_collapses_to_na(self, plain_model, blobs_test):
        report = adaptive_eval({"NA": plain_model, "AuxBlock": plain_model}, blobs_test,
                               n=40, seed=1,
                               adp_config=AttackConfig(family="adp_pgd", epsilon=0.2,
                                                       step_size=0.05, iterations=3,
                                                       random_start=False))
        by_defense = {r.defense: r.accuracy for r in report.rows}
        assert by_defense["NA"] == pytest.approx(by_defense["AuxBlock"])

    def test_per_head_accuracies_in_metadata(self, aux_model, blobs_test):
        report = adaptive_eval({"AuxBlock": aux_model}, blobs_test, n=30, seed=2)
        heads = report.metadata["per_head_accuracy"]["AuxBlock"]
        assert len(heads) == aux_model.num_aux + 1

    def test_at_start_point_used(self, plain_model, blobs_test):
        """AT rows use x + defense-perturbation as the attack start; threat rows
        still appear with the adaptive tag."""
        report = adaptive_eval({"AdversarialTraining": plain_model}, blobs_test, n=20,
                               seed=3, at_inner=ATConfig(epsilon=0.1, step_size=0.02,
                                                         iterations=2))
        assert all(r.threat == "adaptive" for r in report.rows)


class TestSweep:
    def test_zero_point_equals_clean_exactly(self, aux_model, blobs_test):
        from auxblocks import ensemble
        curve = epsilon_sweep(aux_model, "adp_pgd", [0.0, 0.1], blobs_test, n=40,
                              mode="vote", iterations=2, seed=5)
        rng = np.random.default_rng(5)
        subset = blobs_test.sample(40, rng)
        clean = ensemble.accuracy(aux_model, subset.images, subset.labels, "vote")
        assert curve[0] == (0.0, clean)

    def test_empty_grid_errors(self, aux_model, blobs_test):
        with pytest.raises(ValueError, match="empty"):
            epsilon_sweep(aux_model, "adp_pgd", [], blobs_test)

    def test_unsorted_grid_errors(self, aux_model, blobs_test):
        with pytest.raises(ValueError, match="sorted"):
            epsilon_sweep(aux_model, "adp_pgd", [0.3, 0.1], blobs_test)

    def test_large_epsilon_collapses_trained_model(self, aux_model, blobs_test):
        curve = epsilon_sweep(aux_model, "adp_pgd", [0.0, 0.6], blobs_test, n=50,
                              mode="vote", iterations=5, seed=6)
        assert curve[1][1] <= curve[0][1]


class TestLossRatio:
    def test_zero_epsilon_no_init_is_clean_baseline(self, aux_model, blobs_test):
        from auxblocks import ensemble
        from auxblocks.evaluation import _per_example_ce
        series = loss_ratio_experiment(aux_model, blobs_test, [0.0], seed=1, n=40,
                                       rand_init_scale=0.0)
        subset = blobs_test.sample(40, np.random.default_rng(1))
        logits = ensemble.predict_logits(aux_model, subset.images)
        losses = np.stack([_per_example_ce(z, subset.labels) for z in logits])
        l0 = losses[0]
        l_avg = (losses.sum(axis=0) - l0) / 2
        expected = float(np.median(l_avg / np.maximum(l0, 1e-12)))
        assert series["block0"][0] == (0.0, pytest.approx(expected))

    def test_trained_model_targeted_block_suffers_most(self, aux_model, blobs_test):
        series = loss_ratio_experiment(aux_model, blobs_test, [0.15], seed=1, n=60)
        assert series["pooled"][0][1] < 1.0

    def test_pooled_series_present_and_per_block_keys(self, aux_model, blobs_test):
        series = loss_ratio_experiment(aux_model, blobs_test, [0.0, 0.05], seed=1, n=20)
        assert set(series) == {"block0", "block1", "block2", "pooled"}
        assert all(len(curve) == 2 for curve in series.values())

    def test_requires_aux_heads(self, plain_model, blobs_test):
        with pytest.raises(ValueError, match="aux"):
            loss_ratio_experiment(plain_model, blobs_test, [0.1])


class TestPositionStudy:
    def test_structure(self, aux_model, blobs_test):
        accs = block_position_study(aux_model, blobs_test, n=40, seed=0,
                                    epsilon=0.1, step_size=0.05, iterations=2)
        assert set(accs) == {"block0", "block1", "public"}
        assert all(0.0 <= v <= 1.0 for v in accs.values())


class TestEmit:
    @pytest.fixture
    def report(self):
        rows = [EvalRow("mnist", "NA", "pgd", "static", "public", 0.1 + 0.2, 100, 7, "abc"),
                EvalRow("mnist", "AuxBlock", "pgd", "static", "vote", 1 / 3, 100, 7, "abc")]
        return EvalReport(rows=rows, sweeps={"adp:vote": [(0.0, 0.975), (0.3, 0.41)]},
                          ratios={"block0": [(0.1, 0.8)]}, metadata={"seed": 7})

    def test_same_report_twice_byte_identical(self, report, tmp_path):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        emit_report(report, d1, formats=("csv", "json", "svg"))
        emit_report(report, d2, formats=("csv", "json", "svg"))
        for name in ("report.csv", "report.json", "report_sweeps.svg", "report_ratios.svg"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_empty_report_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="empty"):
            emit_report(EvalReport(), tmp_path)

    def test_csv_roundtrips_through_json_losslessly(self, report, tmp_path):
        emit_report(report, tmp_path, formats=("csv", "json"))
        csv_rows = read_report_csv(tmp_path / "report.csv")
        json_rows = EvalReport.from_dict(
            json.loads((tmp_path / "report.json").read_text())).rows
        assert csv_rows == json_rows
        assert csv_rows[0].accuracy == 0.1 + 0.2  # exact float round trip

    def test_unknown_format_rejected(self, report, tmp_path):
        with pytest.raises(ValueError, match="format"):
            emit_report(report, tmp_path, formats=("yaml",))

    def test_merge_combines_everything(self, report):
        extra = EvalReport(rows=[EvalRow("x", "NA", "clean", "static", "public",
                                         1.0, 5, 0, "z")],
                           sweeps={"other": [(0.0, 1.0)]}, metadata={"k": 1})
        merged = report.merge(extra)
        assert len(merged.rows) == 3
        assert set(merged.sweeps) == {"adp:vote", "other"}
        assert merged.metadata["k"] == 1 and merged.metadata["seed"] == 7

    def test_report_dict_roundtrip(self, report):
        back = EvalReport.from_dict(report.to_dict())
        assert back.rows == report.rows
        assert back.sweeps == report.sweeps
        assert back.ratios == report.ratios

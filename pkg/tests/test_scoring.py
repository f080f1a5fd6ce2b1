import csv
import random

import pytest

import oracles
import synth
from alertpipe import scoring
from alertpipe.model import (
    PHASES,
    Alert,
    AttackPhaseWindow,
    PhaseName,
    ScenarioLabels,
    SourceIds,
    TestWindow,
    detector,
)
from alertpipe.scoring import (
    PhaseObservation,
    ScoreRow,
    alert_rate,
    count_in_interval,
    detection_matrix,
    detection_score,
    format_score,
    rank_detectors,
    render_rate,
    robustness_score,
    robustness_term,
    score_detectors,
)

P = PhaseName


def alert(ts, det, scenario="s0", i=[0]):
    i[0] += 1
    return Alert(f"a{i[0]}", float(ts), SourceIds.WAZUH, detector(det), det, "h", scenario=scenario)


def labs(name, phases, test=(0, 1_000)):
    return ScenarioLabels(name, tuple(AttackPhaseWindow(p, s, e) for p, s, e in phases), 0.0, 100_000.0, TestWindow(*test))


class TestRates:
    def test_alert_rate_per_minute(self):
        assert alert_rate(30, 600) == 3.0
        with pytest.raises(ValueError):
            alert_rate(1, 0)

    def test_render_rate(self):
        assert render_rate(0) == "" and render_rate(0.004) == ">0" and render_rate(1.234) == "1.23"

    def test_count_in_interval_half_open(self):
        xs = [alert(t, "W-Aut-Sud") for t in (10, 20, 30)] + [alert(15, "S-Flw-Nmp")]
        assert count_in_interval(xs, detector("W-Aut-Sud"), (10, 30)) == 2


class TestRobustness:
    def test_no_test_alerts_is_one(self):
        assert robustness_term(PhaseObservation(5, 0, 60, 18_000)) == 1.0

    def test_clamped_at_zero(self):
        assert robustness_term(PhaseObservation(1, 100, 600, 600)) == 0.0

    def test_silent_scenarios_excluded_from_mean(self):
        obs = [PhaseObservation(0, 4, 60, 600), PhaseObservation(2, 0, 60, 600)]
        assert robustness_score(obs) == 1.0
        assert robustness_score([PhaseObservation(0, 0, 60, 600)]) == 0.0

    def test_equal_rates_give_zero(self):
        assert robustness_term(PhaseObservation(10, 100, 60, 600)) == 0.0

    def test_scale_invariance(self):
        rng = random.Random(1)
        for _ in range(200):
            n_a, n_t = rng.randint(1, 50), rng.randint(0, 50)
            da, dt, k = rng.uniform(1, 5_000), rng.uniform(1, 20_000), rng.choice([0.5, 3.0, 60.0])
            a = robustness_term(PhaseObservation(n_a, n_t, da, dt))
            b = robustness_term(PhaseObservation(n_a, n_t, da * k, dt * k))
            assert a == pytest.approx(b, abs=1e-12)

    def test_nonpositive_duration_rejected(self):
        with pytest.raises(ValueError):
            PhaseObservation(1, 0, 0.0, 10.0)


class TestDetectionScore:
    def test_consistency_weighting_and_max_over_phases(self):
        labels = {
            "a": labs("a", [(P.SERVICE_SCANS, 2_000, 3_000), (P.DIRB_SCAN, 3_000, 4_000)]),
            "b": labs("b", [(P.SERVICE_SCANS, 2_000, 3_000)]),
        }
        xs = [alert(2_500, "W-Acc-400", "a"), alert(3_500, "W-Acc-400", "a")]
        row = score_detectors(xs, labels)[0]
        # service scans: robust 1.0 in 1 of 2 scenarios; dirb: 1 of 1
        assert row.detection_score == 1.0 and row.best_phase is P.DIRB_SCAN
        m = detection_matrix(xs, labels)
        assert m.cell(detector("W-Acc-400"), P.SERVICE_SCANS) == 1
        assert m.phase_occurrences[P.SERVICE_SCANS] == 2 and m.phase_occurrences[P.NETWORK_SCANS] == 0
        assert detection_score({P.SERVICE_SCANS: 1.0}, m, detector("W-Acc-400")) == 0.5

    def test_alert_in_overlapping_windows_counts_for_each(self):
        labels = {"a": labs("a", [(P.SERVICE_SCANS, 2_000, 3_000), (P.DATA_EXFILTRATION, 1_500, 9_000)])}
        xs = [alert(2_500, "A-Dns-Frq", "a")]
        row = score_detectors(xs, labels)[0]
        assert row.phase_counts[P.SERVICE_SCANS] == 1 and row.phase_counts[P.DATA_EXFILTRATION] == 1

    def test_false_positive_column(self):
        labels = {"a": labs("a", [(P.SERVICE_SCANS, 2_000, 3_000)]), "b": labs("b", [(P.SERVICE_SCANS, 2_000, 3_000)])}
        xs = [alert(10, "W-Sys-Cav", "a"), alert(20, "W-Sys-Cav", "b"), alert(2_100, "W-Sys-Cav", "b")]
        row = score_detectors(xs, labels)[0]
        assert row.false_positives == 2

    def test_alerts_of_unlabelled_scenarios_ignored(self):
        labels = {"a": labs("a", [(P.SERVICE_SCANS, 2_000, 3_000)])}
        assert score_detectors([alert(2_100, "W-Aut-Sud", "zzz")], labels) == []

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_oracle(self, seed):
        c = synth.random_corpus(seed, max_alerts=300)
        want = oracles.scores(c.alerts, c.labels)
        got = {r.detector.rendered: r for r in score_detectors(c.alerts, c.labels)}
        assert set(got) == set(want)
        for d, (rob, s) in want.items():
            assert got[d].detection_score == s
            assert dict(got[d].robustness) == rob


def reference_score_rows(fixtures):
    with open(fixtures / "detector_scores.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def row_from_reference(r):
    best = max(PHASES, key=lambda p: int(r[p.value] or 0))
    rob = float(r["robustness"])
    return ScoreRow(detector(r["detector"]), {best: rob}, float(r["detection_score"]), best,
                    {p: int(r[p.value] or 0) for p in PHASES}, int(r["false_positives"] or 0))


class TestRanking:
    def test_order_and_ties(self, fixtures):
        rows = [row_from_reference(r) for r in reference_score_rows(fixtures)]
        random.Random(0).shuffle(rows)
        ranked = rank_detectors(rows)
        names = [r.detector.rendered for r in ranked]
        scores = [r.detection_score for r in ranked]
        assert scores == sorted(scores, reverse=True)
        top = [r.detector.rendered for r in ranked if r.detection_score == 1.0]
        assert "W-All-Mul3" in top and top == sorted(top)
        assert names[-1] == "A-Dns-Ent"
        assert names.index("A-Mon-Avg") < names.index("A-Mon-Rng") < names.index("W-All-Evt")

    def test_ties_on_score_broken_by_robustness(self):
        a = ScoreRow(detector("W-Sys-Fai"), {P.PASSWORD_CRACKING: 0.5}, 0.3, P.PASSWORD_CRACKING, {}, 0)
        b = ScoreRow(detector("W-Mai-Inv"), {P.PASSWORD_CRACKING: 0.8}, 0.3, P.PASSWORD_CRACKING, {}, 0)
        assert [r.detector.rendered for r in rank_detectors([a, b])] == ["W-Mai-Inv", "W-Sys-Fai"]

    def test_zero_scores_dropped(self):
        z = ScoreRow(detector("W-Sys-Fai"), {}, 0.0, None, {}, 3)
        assert rank_detectors([z]) == []


class TestCsv:
    def test_format_score(self):
        assert [format_score(v) for v in (0.8057, 1.0, 0.7142, 0.0, 0.875)] == ["0.81", "1.0", "0.71", "0.0", "0.88"]

    def test_score_csv_round_trip_keeps_exact_values(self, tmp_path):
        c = synth.random_corpus(11, max_alerts=300)
        ranked = rank_detectors(score_detectors(c.alerts, c.labels))
        p = tmp_path / "scores.csv"
        p.write_text(scoring.score_csv(ranked))
        back = scoring.read_score_csv(p)
        assert back == {r.detector: r.detection_score for r in ranked}

    def test_read_score_csv_rejects_other_tables(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            scoring.read_score_csv(p)

    def test_rate_table_pools_over_scenarios(self):
        labels = {
            "a": labs("a", [(P.SERVICE_SCANS, 2_000, 2_060)], test=(0, 600)),
            "b": labs("b", [(P.SERVICE_SCANS, 2_000, 2_120)], test=(0, 1_200)),
        }
        xs = [alert(2_001, "S-Flw-Nmp", "a")] * 3 + [alert(100, "S-Flw-Nmp", "b")]
        t = scoring.tally(xs, labels)
        table = scoring.rate_table(t, labels)
        assert table.rate(detector("S-Flw-Nmp"), "service_scans") == pytest.approx(1.0)
        assert table.rate(detector("S-Flw-Nmp"), "normal") == pytest.approx(1 / 30)
        lines = scoring.rate_csv(table).splitlines()
        assert lines[0].split(",")[-1] == "normal" and lines[1].startswith("S-Flw-Nmp,")

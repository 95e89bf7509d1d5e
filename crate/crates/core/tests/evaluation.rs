use std::collections::BTreeSet;

use advrep::dsp::{ChunkRecord, FeatureStore, Label, SpeakerInfo, UtteranceInfo};
use advrep::evaluation::*;
use advrep::numerics::{substream, Tensor};
use advrep::training::Regime;
use proptest::prelude::*;
use rand::Rng as _;

/// Pairwise definition of the AUC.
fn auc_oracle(scores: &[f64], pos: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if pos[i] && !pos[j] {
                den += 1.0;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

#[test]
fn auc_matches_pairwise_oracle_exactly() {
    let mut rng = substream(0, "auc");
    for case in 0..1000 {
        let n = rng.random_range(2..40);
        // Coarse scores force plenty of ties.
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
        let mut pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        pos[0] = true;
        pos[1] = false;
        assert_eq!(roc_auc_binary(&scores, &pos).unwrap(), auc_oracle(&scores, &pos), "case {case}");
    }
}

#[test]
fn auc_edge_cases() {
    assert_eq!(roc_auc_binary(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
    assert_eq!(roc_auc_binary(&[0.9, 0.1], &[false, true]).unwrap(), 0.0);
    assert_eq!(roc_auc_binary(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
    assert!(roc_auc_binary(&[0.5, 0.5], &[true, true]).is_err());
    assert!(roc_auc_binary(&[f64::NAN, 0.5], &[true, false]).is_err());
}

#[test]
fn accuracy_and_soft_vote_by_hand() {
    assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 1, 1, 0]).unwrap(), 50.0);
    assert!(accuracy(&[], &[]).is_err());
    // Means (0.5, 0.5): tie goes to class 0.
    assert_eq!(soft_vote(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap(), (0, 0.5));
    // Means (0.4, 0.6).
    let (c, s) = soft_vote(&[vec![0.7, 0.3], vec![0.2, 0.8], vec![0.3, 0.7]]).unwrap();
    assert_eq!(c, 1);
    approx::assert_relative_eq!(s, 0.6, epsilon = 1e-12);
    assert!(soft_vote(&[]).is_err());
}

#[test]
fn multiclass_auc_is_macro_one_vs_rest() {
    let scores = vec![vec![0.8, 0.1, 0.1], vec![0.2, 0.7, 0.1], vec![0.3, 0.3, 0.4], vec![0.5, 0.4, 0.1]];
    let labels = [0, 1, 2, 1];
    let mut want = 0.0;
    for k in 0..3 {
        let s: Vec<f64> = scores.iter().map(|r| r[k]).collect();
        let p: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        want += auc_oracle(&s, &p) / 3.0;
    }
    approx::assert_relative_eq!(multiclass_auc(&scores, &labels).unwrap(), want, epsilon = 1e-12);
}

#[test]
fn population_std_and_format() {
    let (m, s) = aggregate_seeds(&[60.0, 70.0, 80.0]).unwrap();
    assert_eq!(m, 70.0);
    approx::assert_relative_eq!(s, (200.0f64 / 3.0).sqrt(), epsilon = 1e-12);
    assert_eq!(format_mean_std(66.2, 1.1666), "66.20 ± 1.17");
}

fn speakers(n_nt: usize, n_pd: usize) -> Vec<(String, Label)> {
    (0..n_nt)
        .map(|i| (format!("nt{i:03}"), Label::Neurotypical))
        .chain((0..n_pd).map(|i| (format!("pd{i:03}"), Label::Pathological)))
        .collect()
}

#[test]
fn fold_plans_are_valid_for_many_seeds() {
    for seed in 0..100 {
        for (nt, pd, k) in [(10, 10, 5), (7, 9, 4), (10, 10, 10), (3, 2, 2)] {
            let spk = speakers(nt, pd);
            let plan = make_folds(&spk, k, seed).unwrap();
            plan.validate(&spk).unwrap();
            for i in 0..k {
                let s = plan.split(i).unwrap();
                let t: BTreeSet<_> = s.test.iter().collect();
                let d: BTreeSet<_> = s.dev.iter().collect();
                let r: BTreeSet<_> = s.train.iter().collect();
                assert!(t.is_disjoint(&d) && t.is_disjoint(&r) && d.is_disjoint(&r));
                assert_eq!(t.len() + d.len() + r.len(), nt + pd);
            }
        }
    }
    assert_eq!(make_folds(&speakers(10, 10), 5, 3).unwrap(), make_folds(&speakers(10, 10), 5, 3).unwrap());
    assert_ne!(make_folds(&speakers(10, 10), 5, 3).unwrap(), make_folds(&speakers(10, 10), 5, 4).unwrap());
}

#[test]
fn fold_plan_rejects_too_few_speakers() {
    assert!(make_folds(&speakers(4, 5), 5, 0).is_err());
    assert!(make_folds(&speakers(4, 5), 1, 0).is_err());
}

#[test]
fn tampered_plan_fails_validation() {
    let spk = speakers(10, 10);
    let mut plan = make_folds(&spk, 5, 0).unwrap();
    let moved = plan.folds[0].pop().unwrap();
    plan.folds[1].push(moved);
    assert!(plan.validate(&spk).is_err());
}

fn store(utts_per_speaker: &[usize]) -> FeatureStore {
    let mut s = FeatureStore::default();
    for (i, &n) in utts_per_speaker.iter().enumerate() {
        s.speakers.push(SpeakerInfo {
            id: format!("nt{i:03}"),
            label: Label::Neurotypical,
        });
        for u in 0..n {
            s.utterances.push(UtteranceInfo {
                id: format!("u{u:02}"),
                speaker: i,
            });
            s.chunks.push(ChunkRecord {
                speaker: i,
                label: Label::Neurotypical,
                utterance: s.utterances.len() - 1,
                chunk_index: 0,
                values: Tensor::zeros(vec![1, 1]),
            });
        }
    }
    s
}

#[test]
fn probe_split_partitions_each_speaker() {
    let st = store(&[6, 10, 3, 2, 5]);
    let ids: Vec<String> = st.speakers.iter().map(|s| s.id.clone()).collect();
    for seed in 0..50 {
        let p = make_probe_split(&st, &ids, seed, "probe.0").unwrap();
        p.validate(&st).unwrap();
        // The two-utterance speaker is not enrolled.
        assert_eq!(p.speakers.len(), 4);
        assert_eq!(p.class_of(&st, 3), None);
        let count = |part: &[usize], spk: usize| part.iter().filter(|&&u| st.utterances[u].speaker == spk).count();
        // (train, dev, test) per speaker: round(0.2 n) for dev and test, at least one.
        for (spk, want) in [(0, (4, 1, 1)), (1, (6, 2, 2)), (2, (1, 1, 1)), (4, (3, 1, 1))] {
            assert_eq!((count(&p.train, spk), count(&p.dev, spk), count(&p.test, spk)), want);
        }
    }
}

fn vote(id: &str, label: Label, predicted: usize, score: f64) -> SpeakerVote {
    SpeakerVote {
        speaker: id.into(),
        label,
        predicted,
        score,
    }
}

fn cell(regime: Regime, fold: usize, seed: usize, votes: Vec<SpeakerVote>, probe: f64) -> CellResult {
    let (pd_acc, pd_auc) = vote_metrics(&votes).unwrap();
    CellResult {
        key: CellKey { regime, fold, seed },
        test_votes: votes,
        dev_votes: Vec::new(),
        pd_acc,
        pd_auc,
        dev_pd_acc: 0.0,
        probe_acc: probe,
        probe_auc: 0.5,
        probe_speakers: 4,
        best_epoch: 1,
        epochs: 2,
        seen_speakers: Vec::new(),
    }
}

#[test]
fn results_pool_votes_per_seed_and_format_aggregates() {
    let nt = Label::Neurotypical;
    let pd = Label::Pathological;
    let cells = vec![
        cell(Regime::Baseline, 0, 0, vec![vote("a", nt, 0, 0.2), vote("b", pd, 1, 0.9)], 40.0),
        cell(Regime::Baseline, 1, 0, vec![vote("c", nt, 1, 0.6), vote("d", pd, 1, 0.7)], 60.0),
        cell(Regime::Baseline, 0, 1, vec![vote("a", nt, 0, 0.1), vote("b", pd, 1, 0.8)], 50.0),
        cell(Regime::Baseline, 1, 1, vec![vote("c", nt, 0, 0.3), vote("d", pd, 1, 0.9)], 70.0),
    ];
    let t = ResultTable::build(cells).unwrap();
    // Seed 0 pools 4 speakers, 3 correct; seed 1 gets all 4.
    assert_eq!(t.seeds[0].pd_acc, 75.0);
    assert_eq!(t.seeds[1].pd_acc, 100.0);
    assert_eq!(t.seeds[0].probe_acc, 50.0);
    let a = t.aggregate(Regime::Baseline).unwrap();
    assert_eq!(a.pd_acc, (87.5, 12.5));
    let csv = t.to_csv();
    assert_eq!(csv.lines().next().unwrap(), RESULT_COLUMNS.join(","));
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("baseline,all,all,87.50 ± 12.50,"), "{last}");
    assert_eq!(csv.lines().count(), 1 + 4 + 2 + 1);
}

#[test]
fn grid_selection_prefers_smaller_on_tie() {
    let row = |value, dev_pd_acc| GridRow {
        value,
        dev_pd_acc,
        cells: 1,
    };
    let rows = vec![row(0.07, 70.0), row(0.03, 70.0), row(0.01, 60.0), row(0.05, 65.0)];
    assert_eq!(select_best(&rows).unwrap(), (0.03, true));
    assert_eq!(select_best(&[row(0.01, 1.0), row(0.03, 2.0)]).unwrap(), (0.03, false));
    assert_eq!(GRID.len(), 4);
}

#[test]
fn grid_search_rejects_fusion() {
    let st = FeatureStore::default();
    let plan = FoldPlan {
        seed: 0,
        folds: vec![Vec::new(); 2],
    };
    let err = grid_search(&st, &plan, Regime::Fusion, &GRID, &ProtocolConfig::default(), 1).unwrap_err();
    assert!(err.to_string().contains("fusion"));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn leakage_audit_flags_test_speakers() {
    assert!(audit_leakage(&["a".into(), "b".into()], &["c".into()]).is_ok());
    assert!(audit_leakage(&["a".into(), "c".into()], &["c".into()]).is_err());
}

#[test]
fn run_seeds_are_distinct_and_stable() {
    let cfg = ProtocolConfig::default();
    let seeds: BTreeSet<u64> = (0..5).map(|i| cfg.run_seed(i)).collect();
    assert_eq!(seeds.len(), 5);
    assert_eq!(cfg.run_seed(2), ProtocolConfig::default().run_seed(2));
}

#[test]
fn worker_pool_keeps_job_order() {
    let jobs: Vec<u32> = (0..20).collect();
    let out = run_pool(&jobs, 3, |&j| Ok(j * 2)).unwrap();
    assert_eq!(out, jobs.iter().map(|j| j * 2).collect::<Vec<_>>());
    assert!(run_pool(&jobs, 2, |&j| if j == 7 { Err(advrep::Error::input("x")) } else { Ok(j) }).is_err());
}

proptest! {
    #[test]
    fn auc_is_rank_invariant(scores in prop::collection::vec(-5.0f64..5.0, 4..30), flips in prop::collection::vec(any::<bool>(), 30)) {
        let n = scores.len();
        let mut pos: Vec<bool> = flips[..n].to_vec();
        pos[0] = true;
        pos[1] = false;
        let a = roc_auc_binary(&scores, &pos).unwrap();
        let shifted: Vec<f64> = scores.iter().map(|s| 3.0 * s + 1.0).collect();
        prop_assert_eq!(a, roc_auc_binary(&shifted, &pos).unwrap());
        let flipped: Vec<bool> = pos.iter().map(|p| !p).collect();
        prop_assert!((a + roc_auc_binary(&scores, &flipped).unwrap() - 1.0).abs() < 1e-12);
    }
}

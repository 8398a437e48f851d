use diffsumm::evaluate::{average_ranks, fscore, fscore_protocol, kendall_tau, spearman_rho, FScoreMode};
use diffsumm::summarize::{knapsack_select, shot_scores, summarize_video, ShotSegmentation};
use diffsumm::RawScores;
use proptest::prelude::*;

/// Best total value, and the lexicographically first optimal subset
/// (earlier shots preferred).
fn brute_force(values: &[f64], lengths: &[usize], budget: usize) -> (f64, Vec<bool>) {
    let n = values.len();
    let mut best = f64::NEG_INFINITY;
    let mut choice = vec![false; n];
    // Enumerate in an order where earlier shots are set first, so the first
    // maximum found is the preferred one.
    for code in (0u32..(1 << n)).rev() {
        let pick: Vec<bool> = (0..n).map(|i| code & (1 << (n - 1 - i)) != 0).collect();
        let len: usize = (0..n).filter(|&i| pick[i]).map(|i| lengths[i]).sum();
        if len > budget {
            continue;
        }
        let v: f64 = (0..n).filter(|&i| pick[i]).map(|i| values[i]).sum();
        if v > best + 1e-9 {
            best = v;
            choice = pick;
        }
    }
    (best, choice)
}

fn pairwise_tau_b(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let (mut c, mut d, mut ta, mut tb) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let x = (a[i] - a[j]).partial_cmp(&0.0).unwrap() as i64;
            let y = (b[i] - b[j]).partial_cmp(&0.0).unwrap() as i64;
            if x == 0 && y == 0 {
                continue;
            }
            if x == 0 {
                ta += 1;
            } else if y == 0 {
                tb += 1;
            } else if x == y {
                c += 1;
            } else {
                d += 1;
            }
        }
    }
    let denom = (((c + d + ta) * (c + d + tb)) as f64).sqrt();
    if denom == 0.0 {
        f64::NAN
    } else {
        (c - d) as f64 / denom
    }
}

fn knapsack_case() -> impl Strategy<Value = (Vec<f64>, Vec<usize>, usize)> {
    (1usize..=15).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(1usize..20, n),
            0usize..80,
        )
    })
}

fn tied_vector(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u8..5).prop_map(f64::from), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn knapsack_is_optimal((values, lengths, budget) in knapsack_case()) {
        let sel = knapsack_select(&values, &lengths, budget).unwrap();
        let (best, _) = brute_force(&values, &lengths, budget);
        let used: usize = sel.selected_indices().iter().map(|&i| lengths[i]).sum();
        prop_assert!(used <= budget);
        prop_assert!((sel.total_value - best).abs() < 1e-9, "{} vs {}", sel.total_value, best);
    }

    #[test]
    fn knapsack_tie_break_prefers_earlier(
        values in prop::collection::vec((0u8..4).prop_map(f64::from), 1..=12),
        budget in 0usize..30,
        seed in any::<u64>(),
    ) {
        let lengths: Vec<usize> = (0..values.len()).map(|i| 1 + ((seed >> (i % 60)) as usize % 6)).collect();
        let sel = knapsack_select(&values, &lengths, budget).unwrap();
        let (best, choice) = brute_force(&values, &lengths, budget);
        prop_assert_eq!(sel.total_value, best);
        prop_assert_eq!(sel.selected, choice);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn tau_b_matches_pair_count(
        (a, b) in (2usize..=200).prop_flat_map(|n| (tied_vector(n), prop::collection::vec(-1.0f64..1.0, n))),
        tie_second in any::<bool>(),
    ) {
        let b: Vec<f64> = if tie_second { b.iter().map(|v| (v * 3.0).round()).collect() } else { b };
        let fast = kendall_tau(&a, &b).unwrap();
        let slow = pairwise_tau_b(&a, &b);
        if slow.is_nan() {
            prop_assert!(fast.is_nan());
        } else {
            prop_assert!((fast - slow).abs() < 1e-12, "{} vs {}", fast, slow);
        }
    }

    #[test]
    fn correlations_ignore_monotone_transforms(a in prop::collection::vec(-5.0f64..5.0, 3..60), b in prop::collection::vec(-5.0f64..5.0, 3..60)) {
        let n = a.len().min(b.len());
        let (a, b) = (&a[..n], &b[..n]);
        let a2: Vec<f64> = a.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
        let b2: Vec<f64> = b.iter().map(|v| v * v * v).collect();
        let (t1, t2) = (kendall_tau(a, b).unwrap(), kendall_tau(&a2, &b2).unwrap());
        let (r1, r2) = (spearman_rho(a, b).unwrap(), spearman_rho(&a2, &b2).unwrap());
        prop_assert!((t1 - t2).abs() < 1e-12 || (t1.is_nan() && t2.is_nan()));
        prop_assert!((r1 - r2).abs() < 1e-12 || (r1.is_nan() && r2.is_nan()));
    }

    #[test]
    fn fscore_symmetric(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..100)) {
        let (p, u): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let a = fscore(&p, &u).unwrap();
        let b = fscore(&u, &p).unwrap();
        prop_assert_eq!(a.f1, b.f1);
        prop_assert_eq!(a.precision, b.recall);
    }

    #[test]
    fn ranks_sum_is_fixed(v in tied_vector(50)) {
        let r = average_ranks(&v);
        prop_assert!((r.iter().sum::<f64>() - 50.0 * 51.0 / 2.0).abs() < 1e-9);
    }
}

#[test]
fn fscore_hand_cases() {
    let f = fscore(&[true, true, false, false], &[true, false, true, false]).unwrap();
    assert_eq!((f.precision, f.recall, f.f1), (0.5, 0.5, 0.5));
    let f = fscore(&[true, false, true], &[true, false, true]).unwrap();
    assert_eq!(f.f1, 1.0);
    let f = fscore(&[false; 4], &[true, false, true, false]).unwrap();
    assert_eq!((f.precision, f.recall, f.f1), (0.0, 0.0, 0.0));
    let f = fscore(&[true, true, true, true], &[true, false, false, false]).unwrap();
    assert_eq!((f.precision, f.recall), (0.25, 1.0));
    assert_eq!(f.f1, 0.4);
    assert!(fscore(&[true], &[true, false]).is_err());

    let pred = [true, true, false, false];
    let users = vec![vec![true, false, true, false], vec![true, true, false, false]];
    assert_eq!(fscore_protocol(&pred, &users, FScoreMode::Max).unwrap(), 1.0);
    assert_eq!(fscore_protocol(&pred, &users, FScoreMode::Avg).unwrap(), 0.75);
    assert!(fscore_protocol(&pred, &[], FScoreMode::Avg).is_err());
}

#[test]
fn correlation_hand_cases() {
    assert_eq!(kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap(), 1.0);
    assert_eq!(kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
    let t = kendall_tau(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    assert!((t - 0.912_870_929_175_277).abs() < 1e-12);
    let r = spearman_rho(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    assert!((r - 0.948_683_298_050_513_9).abs() < 1e-12);
    assert!(kendall_tau(&[1.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap().is_nan());
    assert!(spearman_rho(&[1.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap().is_nan());
    assert!(kendall_tau(&[1.0], &[1.0]).is_err());
    assert!(kendall_tau(&[1.0, 2.0], &[1.0]).is_err());
}

#[test]
fn budget_is_floor_of_fifteen_percent() {
    let seg = ShotSegmentation::from_lengths(&[10, 10, 10, 10, 6]).unwrap();
    let scores = RawScores::new((0..46).map(|i| if (20..30).contains(&i) { 0.9 } else { 0.1 }).collect()).unwrap();
    let sel = summarize_video(&scores, &seg, 0.15).unwrap();
    assert_eq!(sel.budget_frames, 6);
    // The 10-frame best shot does not fit; only the 6-frame one does.
    assert_eq!(sel.selected_indices(), vec![4]);
    assert_eq!(sel.frame_mask.iter().filter(|m| **m).count(), 6);

    let sel = summarize_video(&scores, &seg, 0.5).unwrap();
    assert_eq!(sel.budget_frames, 23);
    assert!(sel.selected[2]);

    assert!(summarize_video(&scores, &seg, 0.0).is_err());
    let other = ShotSegmentation::from_lengths(&[10, 10]).unwrap();
    assert!(shot_scores(&scores, &other).is_err());
}

#[test]
fn segmentation_must_partition() {
    assert!(ShotSegmentation::new(vec![[0, 3], [3, 5]], 5).is_ok());
    assert!(ShotSegmentation::new(vec![[0, 3], [4, 5]], 5).is_err());
    assert!(ShotSegmentation::new(vec![[0, 3], [2, 5]], 5).is_err());
    assert!(ShotSegmentation::new(vec![[0, 3]], 5).is_err());
    assert!(ShotSegmentation::new(vec![[0, 0], [0, 5]], 5).is_err());
}

#[test]
fn summary_dump_is_stable() {
    let seg = ShotSegmentation::from_lengths(&[2, 3, 2]).unwrap();
    let scores = RawScores::new(vec![0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    let sel = summarize_video(&scores, &seg, 0.5).unwrap();
    let dump = sel.dump("v1", &seg);
    assert!(dump.contains("v1"));
    assert_eq!(dump, sel.dump("v1", &seg));
}

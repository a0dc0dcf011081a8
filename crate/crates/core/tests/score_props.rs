use proptest::prelude::*;
use statrs::distribution::{Binomial, DiscreteCDF};
use stereo_core::domain::{Label, SocialDimension, Subgroup};
use stereo_core::tools::score::{binomial_upper_tail, score_labels};
use stereo_core::tools::{decide_verdict, DecisionRule, StereotypeScore, Verdict};

/// Independent count oracle: tally with a plain linear scan, pick the
/// highest count with the earliest taxonomy position.
fn oracle(labels: &[Label]) -> (Label, usize, bool) {
    let mut best = (Label::Unclassified, 0usize);
    let mut tied = false;
    for s in Subgroup::ALL {
        let c = labels.iter().filter(|l| **l == Label::Group(s)).count();
        if c == 0 {
            continue;
        }
        if c > best.1 {
            best = (Label::Group(s), c);
            tied = false;
        } else if c == best.1 {
            tied = true;
        }
    }
    (best.0, best.1, tied)
}

fn label_strategy() -> impl Strategy<Value = Label> {
    prop_oneof![
        1 => Just(Label::Unclassified),
        6 => proptest::sample::select(Subgroup::ALL.to_vec()).prop_map(Label::Group),
    ]
}

#[test]
fn matches_oracle_on_all_small_multisets() {
    // Alphabet: six subgroups drawn from across dimensions plus the marker.
    let alphabet: Vec<Label> = [
        Subgroup::Male,
        Subgroup::Female,
        Subgroup::African,
        Subgroup::Asian,
        Subgroup::Muslim,
        Subgroup::Jew,
    ]
    .into_iter()
    .map(Label::Group)
    .chain([Label::Unclassified])
    .collect();
    let mut checked = 0usize;
    for size in 1..=6usize {
        // Non-decreasing index sequences enumerate multisets exactly once.
        let mut idx = vec![0usize; size];
        loop {
            let labels: Vec<Label> = idx.iter().map(|&i| alphabet[i]).collect();
            let got = score_labels(&labels).unwrap();
            let (majority, n_majority, tied) = oracle(&labels);
            assert_eq!(got.n_total, size);
            assert_eq!((got.majority, got.n_majority, got.tied), (majority, n_majority, tied), "{labels:?}");
            assert_eq!(got.value, n_majority as f64 / size as f64);
            checked += 1;
            let Some(pos) = (0..size).rev().find(|&p| idx[p] < alphabet.len() - 1) else {
                break;
            };
            let v = idx[pos] + 1;
            for slot in &mut idx[pos..] {
                *slot = v;
            }
        }
    }
    // C(7+k-1, k) summed over k = 1..=6.
    assert_eq!(checked, 7 + 28 + 84 + 210 + 462 + 924);
}

#[test]
fn empty_batch_is_rejected() {
    assert!(score_labels(&[]).is_err());
}

#[test]
fn unclassified_only_batch_scores_zero() {
    let s = score_labels(&[Label::Unclassified; 4]).unwrap();
    assert_eq!(s.value, 0.0);
    assert_eq!(s.majority, Label::Unclassified);
    assert_eq!(s.n_total, 4);
}

#[test]
fn appendix_batch_with_none_image() {
    // Nine african images and one unclassifiable one.
    let mut labels = vec![Label::Group(Subgroup::African); 9];
    labels.insert(2, Label::Unclassified);
    let s = score_labels(&labels).unwrap();
    assert_eq!(s.value, 0.9);
    assert_eq!(s.majority, Label::Group(Subgroup::African));
}

#[test]
fn upper_tail_agrees_with_statrs() {
    for n in 1..=60u64 {
        for p in [0.5, 1.0 / 5.0, 1.0 / 6.0, 0.9] {
            let b = Binomial::new(p, n).unwrap();
            for k in 1..=n {
                let reference = b.sf(k - 1);
                let got = binomial_upper_tail(n as usize, k as usize, p);
                assert!((got - reference).abs() < 1e-9, "n={n} k={k} p={p}: {got} vs {reference}");
            }
        }
    }
}

#[test]
fn binomial_rule_examples() {
    let rule = DecisionRule::default();
    let african = Label::Group(Subgroup::African);
    // P(X >= 9 | n=10, p=0.2) is about 4e-6.
    let s = StereotypeScore::from_counts(african, 9, 10, false);
    assert_eq!(decide_verdict(&s, SocialDimension::Race, &rule), Verdict::Stereotyped);
    // 6/10 on gender: P(X >= 6 | p=0.5) = 0.377.
    let s = StereotypeScore::from_counts(Label::Group(Subgroup::Male), 6, 10, false);
    assert_eq!(decide_verdict(&s, SocialDimension::Gender, &rule), Verdict::NotStereotyped);
    let s = StereotypeScore::from_counts(african, 4, 4, false);
    assert_eq!(decide_verdict(&s, SocialDimension::Race, &rule), Verdict::Inconclusive);
}

#[test]
fn threshold_rule_bounds() {
    assert!(DecisionRule::fixed_threshold(0.5, 5).is_err());
    assert!(DecisionRule::fixed_threshold(1.01, 5).is_err());
    assert!(DecisionRule::fixed_threshold(0.8, 0).is_err());
    assert_eq!(DecisionRule::parse("threshold:0.8").unwrap(), DecisionRule::fixed_threshold(0.8, 5).unwrap());
    assert_eq!(DecisionRule::parse("binomial:0.01").unwrap(), DecisionRule::binomial(0.01, 5).unwrap());
    assert!(DecisionRule::parse("vibes:1").is_err());
}

proptest! {
    #[test]
    fn value_is_majority_share(labels in prop::collection::vec(label_strategy(), 1..40)) {
        let s = score_labels(&labels).unwrap();
        prop_assert!(s.n_majority <= s.n_total);
        prop_assert!((0.0..=1.0).contains(&s.value));
        prop_assert_eq!(s.value, s.n_majority as f64 / s.n_total as f64);
        let (majority, n, tied) = oracle(&labels);
        prop_assert_eq!((s.majority, s.n_majority, s.tied), (majority, n, tied));
    }

    #[test]
    fn permutation_invariant(labels in prop::collection::vec(label_strategy(), 1..30), seed in any::<u64>()) {
        let mut shuffled = labels.clone();
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        prop_assert_eq!(score_labels(&labels).unwrap(), score_labels(&shuffled).unwrap());
    }

    #[test]
    fn adding_a_majority_image_never_lowers_the_score(labels in prop::collection::vec(label_strategy(), 1..30)) {
        let before = score_labels(&labels).unwrap();
        if let Label::Group(_) = before.majority {
            let mut more = labels.clone();
            more.push(before.majority);
            let after = score_labels(&more).unwrap();
            prop_assert!(after.value >= before.value);
            prop_assert_eq!(after.majority, before.majority);
        }
    }

    #[test]
    fn verdict_is_monotone_in_majority_count(n in 5usize..80, k in 0usize..80, dim in 0usize..3) {
        let k = k.min(n);
        let dimension = SocialDimension::ALL[dim];
        let g = Label::Group(dimension.subgroups()[0]);
        let rule = DecisionRule::default();
        let v = |k| decide_verdict(&StereotypeScore::from_counts(g, k, n, false), dimension, &rule);
        if v(k) == Verdict::Stereotyped && k < n {
            prop_assert_eq!(v(k + 1), Verdict::Stereotyped);
        }
    }
}

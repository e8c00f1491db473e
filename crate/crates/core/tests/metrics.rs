// SPDX-License-Identifier: MIT OR Apache-2.0

use proptest::prelude::*;
use sentlens::datasets::AnswerSpec;
use sentlens::metrics::*;

fn answers() -> AnswerSpec {
    AnswerSpec::new(vec![0, 1], vec![2, 3]).unwrap()
}

#[test]
fn logit_diff_examples() {
    assert_eq!(logit_diff(&[3.0, 1.0, 0.0, 2.0], &answers()).unwrap(), 1.0);
    assert_eq!(logit_diff(&[5.0; 4], &answers()).unwrap(), 0.0);
    let swapped = AnswerSpec::new(vec![2, 3], vec![0, 1]).unwrap();
    assert_eq!(logit_diff(&[3.0, 1.0, 0.0, 2.0], &swapped).unwrap(), -1.0);
    assert!(logit_diff(&[1.0, 2.0], &answers()).is_err());
}

#[test]
fn result_fields() {
    let r = MetricResult::paired(4.0, -2.0, 1.0);
    assert_eq!(r.recovery, Some(0.5));
    assert_eq!(r.change, Some(1.5));
    assert!(r.flip);
    assert_eq!(r.drop(), Some(1.5));
    assert_eq!(MetricResult::paired(4.0, -2.0, 4.0).recovery, Some(1.0));
    assert_eq!(MetricResult::paired(4.0, -2.0, -2.0).recovery, Some(0.0));
    assert_eq!(MetricResult::paired(1.0, 1.0, 2.0).recovery, None);
    let s = MetricResult::single(2.0, 1.0);
    assert!(!s.paired && !s.flip);
    assert_eq!(s.change, Some(-0.5));
    assert_eq!(s.drop(), Some(0.5));
    assert_eq!(MetricResult::single(0.0, 1.0).change, None);
}

#[test]
fn flip_rate_rules() {
    let same = [MetricResult::paired(2.0, -1.0, -1.0); 3];
    assert_eq!(logit_flip_rate(&same).unwrap().rate, 0.0);
    let all = [MetricResult::paired(2.0, -1.0, 0.5), MetricResult::single(1.0, -3.0)];
    assert_eq!(logit_flip_rate(&all).unwrap().rate, 1.0);
    let mixed = [
        MetricResult::paired(2.0, 1.0, -1.0),
        MetricResult::paired(2.0, -1.0, 1.0),
    ];
    let f = logit_flip_rate(&mixed).unwrap();
    assert_eq!((f.rate, f.counted, f.excluded), (1.0, 1, 1));
    assert!(logit_flip_rate(&[]).is_err());
}

#[test]
fn accuracy_strict() {
    let a: &[f32] = &[2.0, 1.0];
    let b: &[f32] = &[1.0, 1.0];
    assert_eq!(accuracy(&[a, a], &[0], &[1]).unwrap(), 1.0);
    assert_eq!(accuracy(&[a, b], &[0], &[1]).unwrap(), 0.5);
    assert!(accuracy(&[], &[0], &[1]).is_err());
}

#[test]
fn summary_examples() {
    let one = [MetricResult::paired(3.0, -1.0, 1.0)];
    let s = summarize(&one).unwrap();
    assert_eq!(
        (s.count, s.mean_clean, s.mean_corrupted, s.mean_patched),
        (1, 3.0, -1.0, 1.0)
    );
    assert_eq!(s.mean_recovery, Some(0.5));
    let two = [MetricResult::paired(2.0, 0.0, 0.0), MetricResult::paired(2.0, 0.0, 2.0)];
    assert_eq!(summarize(&two).unwrap().mean_recovery, Some(0.5));
    let dup: Vec<_> = one.iter().chain(&one).copied().collect();
    let d = summarize(&dup).unwrap();
    assert_eq!(
        (d.mean_recovery, d.mean_change, d.flip.rate),
        (s.mean_recovery, s.mean_change, s.flip.rate)
    );
}

#[test]
fn results_csv_layout() {
    let mut buf = Vec::new();
    write_results(&mut buf, "r1", "patch", &[MetricResult::paired(1.0, -1.0, 0.5)]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), RESULT_COLUMNS.join(","));
    assert_eq!(lines.next().unwrap(), "r1,patch,0,1.0,-1.0,0.5,true");
    let mut empty = Vec::new();
    write_results(&mut empty, "r1", "patch", &[]).unwrap();
    assert_eq!(String::from_utf8(empty).unwrap().trim(), RESULT_COLUMNS.join(","));
}

proptest! {
    #[test]
    fn logit_diff_shift_invariant_and_linear(
        row in prop::collection::vec(-10.0f32..10.0, 4),
        c in -5.0f32..5.0,
        a in 0.1f32..3.0,
    ) {
        let base = logit_diff(&row, &answers()).unwrap();
        let shifted: Vec<f32> = row.iter().map(|v| v + c).collect();
        prop_assert!((logit_diff(&shifted, &answers()).unwrap() - base).abs() < 1e-4);
        let scaled: Vec<f32> = row.iter().map(|v| v * a).collect();
        prop_assert!((logit_diff(&scaled, &answers()).unwrap() - a * base).abs() < 1e-4);
    }

    #[test]
    fn flip_depends_only_on_signs(c in 0.1f32..10.0, k in 0.1f32..10.0, p in -10.0f32..10.0) {
        let a = MetricResult::paired(c, -k, p);
        let b = MetricResult::paired(c * 3.0, -k * 0.5, p * 2.0);
        prop_assert_eq!(a.flip, b.flip);
    }
}

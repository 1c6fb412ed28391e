use std::path::Path;

use nerlab::data::{parse_conll, ConllOptions};
use nerlab::eval::{per_tag_csv, score, MacroOver};

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn per_tag_csv_matches_hand_computed_fixture() {
    let opts = ConllOptions::default();
    let gold = parse_conll(fixture("per_tag_gold.conll"), &opts).unwrap();
    let pred = parse_conll(fixture("per_tag_pred.conll"), &opts).unwrap();
    let report = score(&gold, &pred, &MacroOver::Observed).unwrap();
    let expected = std::fs::read_to_string(fixture("per_tag_expected.csv")).unwrap();
    assert_eq!(per_tag_csv(&report), expected);

    assert_eq!((report.micro_counts.tp, report.micro_counts.fp, report.micro_counts.fn_), (3, 3, 3));
    assert!((report.micro.f1 - 0.5).abs() < 1e-12);
    assert!((report.macro_f1 - 1.4 / 3.0).abs() < 1e-12);
}

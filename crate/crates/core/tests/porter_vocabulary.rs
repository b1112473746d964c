//! Stems a word list whose expected outputs were produced by an independent
//! implementation of the reference algorithm.

use topic_kg::stem::porter_stem;

#[test]
fn reproduces_reference_outputs() {
    let fixture = include_str!("fixtures/porter_vocabulary.tsv");
    let mut mismatches = Vec::new();
    let mut n = 0;
    for line in fixture.lines() {
        let (word, expected) = line.split_once('\t').expect("two columns");
        n += 1;
        let got = porter_stem(word);
        if got != expected {
            mismatches.push(format!("{word}: expected {expected}, got {got}"));
        }
    }
    assert!(n > 5000);
    assert!(mismatches.is_empty(), "{} of {n} words differ:\n{}", mismatches.len(), mismatches.join("\n"));
}

use std::path::Path;

use hiro::corpus::{ingest, InputFormat};

#[test]
fn shipped_mini_fixture_counts() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/mini/reviews.jsonl");
    let c = ingest(&path, InputFormat::Jsonl).unwrap();
    assert_eq!(c.entities().len(), 3);
    assert_eq!(c.reviews().len(), 6);
    // Counted by hand: 2 + 3 | 2 + 1 | 3 + 2.
    let texts: Vec<&str> = c.sentences().iter().map(|s| s.text.as_str()).collect();
    assert_eq!(
        texts,
        [
            "Great pool.",
            "Rude staff.",
            "We met Dr. Lee at the bar!",
            "Was the pool open late?",
            "Yes.",
            "Breakfast starts at 7 a.m. daily.",
            "Coffee was cold.",
            "Lovely garden",
            "The room was clean...",
            "Very quiet.",
            "\"Best stay ever,\" said my wife.",
            "Parking costs 20 dollars vs. 15 elsewhere.",
            "Worth it!",
        ]
    );
    assert_eq!(c.sentences()[9].id.as_str(), "h3/r5/1");
}

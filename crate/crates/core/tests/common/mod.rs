//! Fixtures shared by the integration tests.

#![allow(dead_code)]

pub fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// (subj, verb, dobj, pobj) per fixture sentence, empty string = absent.
pub const EXPECTED: [[&str; 4]; 10] = [
    ["it", "told", "_ num _ mins", ""],
    ["i", "go", "", ""],
    ["we", "", "", ""],
    ["", "", "", ""],
    ["they", "", "", "this point"],
    ["people", "", "baseball", ""],
    ["two dogs", "pull", "opposite ends of a rope", "a rope"],
    ["a lady", "lays", "", "a beach"],
    ["people", "running", "", "the streets"],
    ["someone", "prepares", "food", "bowls"],
];

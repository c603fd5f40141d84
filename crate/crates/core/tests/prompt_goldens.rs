//! Prompt builders against checked-in golden bytes.
//!
//! Regenerate with `UPDATE_GOLDENS=1 cargo test -p capengine-core --test prompt_goldens`.

mod common;

use std::collections::HashSet;

use common::golden_cases::{golden_cases, golden_dir};

#[test]
fn prompts_match_goldens() {
    let dir = golden_dir();
    let update = std::env::var_os("UPDATE_GOLDENS").is_some();
    let mut failures = Vec::new();
    for case in golden_cases() {
        let path = dir.join(format!("{}__{}.txt", case.builder, case.name));
        if update {
            std::fs::create_dir_all(&dir).unwrap();
            std::fs::write(&path, &case.text).unwrap();
            continue;
        }
        let expected = std::fs::read(&path)
            .unwrap_or_else(|e| panic!("missing golden file {}: {e}", path.display()));
        if expected != case.text.as_bytes() {
            failures.push(path.display().to_string());
        }
    }
    assert!(failures.is_empty(), "golden mismatch: {failures:?}");
}

#[test]
fn every_builder_has_three_cases() {
    let cases = golden_cases();
    for builder in ["refiner", "cot_caption", "chat_system", "paragraph"] {
        let n = cases.iter().filter(|c| c.builder == builder).count();
        assert!(n >= 3, "{builder} has {n} golden cases");
    }
    let names: HashSet<(&str, &str)> = cases.iter().map(|c| (c.builder, c.name)).collect();
    assert_eq!(names.len(), cases.len());
}

#[test]
fn no_unresolved_placeholders() {
    let re = |s: &str| {
        // `{word}` with an identifier inside is a leftover template slot.
        s.match_indices('{').any(|(i, _)| {
            let rest = &s[i + 1..];
            rest.find('}').is_some_and(|j| {
                let inner = &rest[..j];
                !inner.is_empty() && inner.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
            })
        })
    };
    for case in golden_cases() {
        assert!(!re(&case.text), "{}__{} has a placeholder", case.builder, case.name);
        assert!(!case.text.is_empty());
    }
}

#[test]
fn builders_are_deterministic() {
    let a: Vec<String> = golden_cases().into_iter().map(|c| c.text).collect();
    let b: Vec<String> = golden_cases().into_iter().map(|c| c.text).collect();
    assert_eq!(a, b);
}

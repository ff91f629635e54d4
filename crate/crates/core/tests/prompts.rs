use std::collections::BTreeMap;
use std::path::PathBuf;

use momentkit::instruct::{fill_prompt, Arity, TaskKind, PLACEHOLDERS, SOURCE_CLIP_MARKER};
use momentkit::Error;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/prompts")
}

fn bindings() -> BTreeMap<String, String> {
    let text = std::fs::read_to_string(golden_dir().join("bindings.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Fills each template from the shared bindings and compares it byte for
/// byte with the independently produced golden file.
#[test]
fn filled_templates_match_goldens() {
    let all = bindings();
    for task in TaskKind::ALL {
        let template = task.template();
        let used: BTreeMap<String, String> = template
            .placeholders()
            .into_iter()
            .map(|p| (p.to_string(), all[p].clone()))
            .collect();
        let filled = fill_prompt(&template, &used).unwrap();
        let golden = std::fs::read_to_string(golden_dir().join(format!("{task}.txt"))).unwrap();
        assert_eq!(filled, golden, "{task}");
    }
}

#[test]
fn every_template_validates_and_uses_known_placeholders() {
    for task in TaskKind::ALL {
        let template = task.template();
        template.validate().unwrap();
        let names = template.placeholders();
        assert!(!names.is_empty(), "{task} has no placeholders");
        for name in names {
            assert!(PLACEHOLDERS.contains(&name), "{task} uses {name}");
        }
    }
}

#[test]
fn arity_matches_the_placeholders() {
    for task in TaskKind::ALL {
        let template = task.template();
        let names = template.placeholders();
        match task.arity() {
            Arity::CrossSegment => assert!(
                names.contains(&"instance_class") || names.contains(&"target_clip_content"),
                "{task}"
            ),
            Arity::SingleSegment => assert!(!names.contains(&"target_clip_content"), "{task}"),
        }
    }
}

#[test]
fn missing_bindings_are_named() {
    let template = TaskKind::InstanceQa.template();
    let mut b = BTreeMap::new();
    b.insert("instance_class".to_string(), "dog".to_string());
    match fill_prompt(&template, &b) {
        Err(Error::Template { missing }) => {
            assert_eq!(missing, vec!["segment_caption".to_string()])
        }
        other => panic!("expected a template error, got {other:?}"),
    }
}

#[test]
fn substituted_text_is_not_rescanned() {
    let template = TaskKind::DirectLocalization.template();
    let mut b = BTreeMap::new();
    b.insert(
        "content".to_string(),
        "{content} and {descriptions}".to_string(),
    );
    let filled = fill_prompt(&template, &b).unwrap();
    assert!(filled.ends_with("{content} and {descriptions}"));
}

#[test]
fn filled_prompts_keep_only_the_literal_marker() {
    let all = bindings();
    for task in TaskKind::ALL {
        let filled = fill_prompt(&task.template(), &all).unwrap();
        let stripped = filled.replace(SOURCE_CLIP_MARKER, "");
        // The binding text itself carries one brace pair by design.
        let stripped = stripped.replace("{splashing}", "");
        assert!(
            !stripped.contains('{') && !stripped.contains('}'),
            "{task}: {stripped}"
        );
    }
}

#[test]
fn task_names_round_trip() {
    for task in TaskKind::ALL {
        assert_eq!(task.name().parse::<TaskKind>().unwrap(), task);
        assert_eq!(serde_json::to_string(&task).unwrap(), format!("\"{task}\""));
    }
    assert!("segment-qa".parse::<TaskKind>().is_err());
}

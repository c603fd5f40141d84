//! Prompt builder inputs frozen by files in `tests/golden/prompts/`.
//! Shared with the acceptance suite.

use capengine_core::backends::OcrLine;
use capengine_core::geometry::{BoxRegion, ImageDims};
use capengine_core::paragraph::DenseCaption;
use capengine_core::prompts::*;

pub struct GoldenCase {
    pub builder: &'static str,
    pub name: &'static str,
    pub text: String,
}

fn case(builder: &'static str, name: &'static str, p: PromptText) -> GoldenCase {
    GoldenCase { builder, name, text: p.as_str().to_string() }
}

fn regions() -> Vec<DenseCaption> {
    vec![
        DenseCaption::new("m1", BoxRegion::new(0, 0, 49, 49), 2500, "a brown dog lying on grass"),
        DenseCaption::new("m2", BoxRegion::new(50, 0, 99, 49), 2500, "a red frisbee"),
        DenseCaption::new("m3", BoxRegion::new(0, 50, 99, 99), 5000, "green lawn"),
    ]
}

fn ocr(text: &str, conf: f64) -> OcrLine {
    OcrLine { text: text.into(), region: BoxRegion::new(3, 4, 40, 12), confidence: conf }
}

pub fn golden_cases() -> Vec<GoldenCase> {
    let raw = "a dog on grass";
    let dims = ImageDims::new(640, 480).unwrap();
    let r = regions();
    vec![
        case("refiner", "defaults", build_refiner_prompt(raw, &LanguageControls::default()).unwrap()),
        case(
            "refiner",
            "positive_len10",
            build_refiner_prompt(
                raw,
                &LanguageControls { sentiment: Sentiment::Positive, length: Some(10), ..Default::default() },
            )
            .unwrap(),
        ),
        case(
            "refiner",
            "zh_imagination",
            build_refiner_prompt(
                raw,
                &LanguageControls {
                    language: "zh".into(),
                    factuality: Factuality::Imagination,
                    ..Default::default()
                },
            )
            .unwrap(),
        ),
        case(
            "refiner",
            "all_controls",
            build_refiner_prompt(
                raw,
                &LanguageControls {
                    sentiment: Sentiment::Negative,
                    length: Some(5),
                    language: "French".into(),
                    factuality: Factuality::Imagination,
                },
            )
            .unwrap(),
        ),
        case("cot_category", "defaults", build_cot_category_prompt()),
        case("cot_caption", "dog", build_cot_caption_prompt("Dog").unwrap()),
        case("cot_caption", "padded_cat", build_cot_caption_prompt("  cat ").unwrap()),
        case("cot_caption", "traffic_light", build_cot_caption_prompt("Traffic Light").unwrap()),
        case("chat_system", "vqa", build_chat_system_prompt("a red mug on a desk", dims, &["vqa"]).unwrap()),
        case("chat_system", "no_tools", build_chat_system_prompt("a red mug on a desk", dims, &[]).unwrap()),
        case(
            "chat_system",
            "two_tools",
            build_chat_system_prompt("a cat", ImageDims::new(100, 100).unwrap(), &["vqa", "ocr"]).unwrap(),
        ),
        case("paragraph", "regions_ocr", build_paragraph_prompt(&r[..2], &[ocr("EXIT", 0.9)]).unwrap()),
        case("paragraph", "no_ocr", build_paragraph_prompt(&r, &[]).unwrap()),
        case(
            "paragraph",
            "multi_ocr",
            build_paragraph_prompt(&r[2..], &[ocr("OPEN", 0.8), ocr("24 HOURS", 0.5)]).unwrap(),
        ),
        case(
            "paragraph",
            "styled_defaults",
            build_paragraph_prompt_styled(&r[..1], &[], &LanguageControls::default()).unwrap(),
        ),
        case(
            "paragraph",
            "styled_positive",
            build_paragraph_prompt_styled(
                &r[..1],
                &[],
                &LanguageControls { sentiment: Sentiment::Positive, length: Some(60), ..Default::default() },
            )
            .unwrap(),
        ),
    ]
}

pub fn golden_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/prompts")
}

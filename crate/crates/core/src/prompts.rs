//! Text prompts for the captioner and the refiner.
//!
//! Every template here is frozen by golden files under `tests/golden/prompts/`
//! and published in `docs/prompts.md`. Changing a byte breaks both.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::OcrLine;
use crate::geometry::ImageDims;
use crate::paragraph::DenseCaption;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("prompt text is empty")]
    Empty,
    #[error("category is empty")]
    EmptyCategory,
    #[error("paragraph prompt needs at least one region")]
    NoRegions,
    #[error("invalid language control: {0}")]
    InvalidControls(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive,
    Negative,
    #[default]
    Neutral,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Factuality {
    #[default]
    Factual,
    Imagination,
}

pub const DEFAULT_LANGUAGE: &str = "en";

fn default_language() -> String {
    DEFAULT_LANGUAGE.to_string()
}

/// Caption style requested by the user.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct LanguageControls {
    pub sentiment: Sentiment,
    /// Word budget; `None` leaves the length unconstrained.
    pub length: Option<u32>,
    pub language: String,
    pub factuality: Factuality,
}

impl Default for LanguageControls {
    fn default() -> Self {
        Self {
            sentiment: Sentiment::default(),
            length: None,
            language: default_language(),
            factuality: Factuality::default(),
        }
    }
}

impl LanguageControls {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.length == Some(0) {
            return Err(PromptError::InvalidControls("length must be at least 1".into()));
        }
        if self.language.is_empty() || !self.language.is_ascii() {
            return Err(PromptError::InvalidControls(format!(
                "language tag must be non-empty ASCII, got {:?}",
                self.language
            )));
        }
        Ok(())
    }

    /// Directive clauses in fixed order: sentiment, factuality, length, language.
    fn directives(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self.sentiment {
            Sentiment::Positive => out.push("has a positive sentiment".to_string()),
            Sentiment::Negative => out.push("has a negative sentiment".to_string()),
            Sentiment::Neutral => {}
        }
        if self.factuality == Factuality::Imagination {
            out.push("adds imaginative flourish".to_string());
        }
        if let Some(n) = self.length {
            out.push(format!("uses at most {n} words"));
        }
        if self.language != DEFAULT_LANGUAGE {
            out.push(format!("is written in language \"{}\"", self.language));
        }
        if out.is_empty() {
            out.push("keeps a neutral, factual tone".to_string());
        }
        out
    }
}

/// Non-empty prompt text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PromptText(String);

impl PromptText {
    pub fn new(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        if text.is_empty() {
            return Err(PromptError::Empty);
        }
        Ok(Self(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for PromptText {
    type Error = PromptError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<PromptText> for String {
    fn from(p: PromptText) -> Self {
        p.0
    }
}

impl std::fmt::Display for PromptText {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub const COT_CATEGORY_PROMPT: &str =
    "Question: What is the name of the object in this image? Answer:";

pub const PARAGRAPH_INSTRUCTION: &str = "Summarize the regions and scene text above into one coherent paragraph describing the whole image. Do not invent objects.";

pub fn build_refiner_prompt(
    raw_caption: &str,
    controls: &LanguageControls,
) -> Result<PromptText, PromptError> {
    if raw_caption.is_empty() {
        return Err(PromptError::Empty);
    }
    let directives = controls.directives().join(", ");
    PromptText::new(format!(
        "Revise the following image caption so that it {directives}. Reply with only the revised caption.\nCaption: {raw_caption}"
    ))
}

pub fn build_cot_category_prompt() -> PromptText {
    PromptText(COT_CATEGORY_PROMPT.to_string())
}

pub fn build_cot_caption_prompt(category: &str) -> Result<PromptText, PromptError> {
    let category = category.trim().to_lowercase();
    if category.is_empty() {
        return Err(PromptError::EmptyCategory);
    }
    PromptText::new(format!(
        "Question: Describe the {category} in this image in one sentence. Answer:"
    ))
}

/// Short description shown to the chat model for a known tool name.
pub fn tool_description(name: &str) -> &'static str {
    match name {
        "vqa" => "answers a question about the selected object's image region",
        _ => "no description available",
    }
}

pub fn build_chat_system_prompt(
    object_caption: &str,
    image_dims: ImageDims,
    tool_names: &[&str],
) -> Result<PromptText, PromptError> {
    if object_caption.is_empty() {
        return Err(PromptError::Empty);
    }
    let tools = if tool_names.is_empty() {
        "none".to_string()
    } else {
        tool_names
            .iter()
            .map(|name| format!("- {name}: {}", tool_description(name)))
            .collect::<Vec<_>>()
            .join("\n")
    };
    PromptText::new(format!(
        "You are chatting with a user about one object they selected in an image of {w}x{h} pixels.\n\
         Object description: {object_caption}\n\
         Tools:\n\
         {tools}\n\
         To use a tool, reply with exactly two lines:\n\
         Action: <tool>\n\
         Action Input: <text>\n\
         The tool result is returned to you as a line starting with \"Observation:\".\n\
         When you can answer the user, reply with:\n\
         Final Answer: <text>",
        w = image_dims.width,
        h = image_dims.height,
    ))
}

pub fn build_paragraph_prompt(
    dense: &[DenseCaption],
    ocr: &[OcrLine],
) -> Result<PromptText, PromptError> {
    if dense.is_empty() {
        return Err(PromptError::NoRegions);
    }
    let mut lines: Vec<String> = dense
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let b = d.bbox;
            format!(
                "Region {} [{},{},{},{}]: {}",
                i + 1,
                b.x0,
                b.y0,
                b.x1,
                b.y1,
                d.caption
            )
        })
        .collect();
    if !ocr.is_empty() {
        let quoted: Vec<String> = ocr.iter().map(|l| format!("\"{}\"", l.text)).collect();
        lines.push(format!("Scene text: {}", quoted.join("; ")));
    }
    lines.push(PARAGRAPH_INSTRUCTION.to_string());
    PromptText::new(lines.join("\n"))
}

/// Paragraph prompt with a trailing style line. Identical to
/// [`build_paragraph_prompt`] when `controls` are all defaults.
pub fn build_paragraph_prompt_styled(
    dense: &[DenseCaption],
    ocr: &[OcrLine],
    controls: &LanguageControls,
) -> Result<PromptText, PromptError> {
    let base = build_paragraph_prompt(dense, ocr)?;
    if *controls == LanguageControls::default() {
        return Ok(base);
    }
    PromptText::new(format!(
        "{base}\nWrite the paragraph so that it {}.",
        controls.directives().join(", ")
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxRegion;

    const REVISE: &str = "Revise the following image caption so that it ";

    #[test]
    fn refiner_default_directive() {
        let p = build_refiner_prompt("a dog on grass", &LanguageControls::default()).unwrap();
        assert_eq!(
            p.as_str(),
            "Revise the following image caption so that it keeps a neutral, factual tone. Reply with only the revised caption.\nCaption: a dog on grass"
        );
    }

    #[test]
    fn refiner_sentiment_and_length() {
        let c = LanguageControls {
            sentiment: Sentiment::Positive,
            length: Some(10),
            ..Default::default()
        };
        let p = build_refiner_prompt("a dog on grass", &c).unwrap();
        assert!(p
            .as_str()
            .starts_with(&format!("{REVISE}has a positive sentiment, uses at most 10 words.")));
    }

    #[test]
    fn refiner_language_and_imagination() {
        let c = LanguageControls {
            language: "zh".into(),
            factuality: Factuality::Imagination,
            ..Default::default()
        };
        let p = build_refiner_prompt("a dog on grass", &c).unwrap();
        assert!(p.as_str().starts_with(&format!(
            "{REVISE}adds imaginative flourish, is written in language \"zh\"."
        )));
    }

    #[test]
    fn refiner_rejects_empty_caption() {
        assert!(build_refiner_prompt("", &LanguageControls::default()).is_err());
    }

    #[test]
    fn controls_validation() {
        assert!(LanguageControls::default().validate().is_ok());
        let zero = LanguageControls { length: Some(0), ..Default::default() };
        assert!(zero.validate().is_err());
        let blank = LanguageControls { language: String::new(), ..Default::default() };
        assert!(blank.validate().is_err());
        let c: LanguageControls = serde_json::from_str(r#"{"sentiment":"negative"}"#).unwrap();
        assert_eq!(c.language, "en");
        assert_eq!(c.sentiment, Sentiment::Negative);
    }

    #[test]
    fn cot_prompts() {
        assert_eq!(build_cot_category_prompt().as_str(), COT_CATEGORY_PROMPT);
        assert_eq!(build_cot_category_prompt(), build_cot_category_prompt());
        assert_eq!(
            build_cot_caption_prompt("Dog").unwrap().as_str(),
            "Question: Describe the dog in this image in one sentence. Answer:"
        );
        assert!(build_cot_caption_prompt("  cat ")
            .unwrap()
            .as_str()
            .contains("Describe the cat in"));
        assert_eq!(build_cot_caption_prompt(""), Err(PromptError::EmptyCategory));
        assert_eq!(build_cot_caption_prompt("   "), Err(PromptError::EmptyCategory));
    }

    #[test]
    fn chat_prompt_tools() {
        let d = ImageDims::new(640, 480).unwrap();
        let p = build_chat_system_prompt("a red mug", d, &["vqa"]).unwrap();
        assert_eq!(p.as_str().matches("a red mug").count(), 1);
        assert!(p.as_str().contains("640x480"));
        assert!(p.as_str().contains("- vqa: "));
        let none = build_chat_system_prompt("a red mug", d, &[]).unwrap();
        assert!(none.as_str().contains("Tools:\nnone\n"));
        assert!(none.as_str().contains("Action Input: <text>"));
        assert!(none.as_str().contains("Final Answer: <text>"));
    }

    #[test]
    fn paragraph_sections() {
        let dense = vec![
            DenseCaption::new("r1", BoxRegion::new(0, 0, 9, 9), 100, "a cat"),
            DenseCaption::new("r2", BoxRegion::new(10, 0, 14, 4), 25, "a hat"),
        ];
        let ocr = vec![OcrLine {
            text: "EXIT".into(),
            region: BoxRegion::new(1, 1, 2, 2),
            confidence: 0.9,
        }];
        let p = build_paragraph_prompt(&dense, &ocr).unwrap();
        assert_eq!(
            p.as_str(),
            format!(
                "Region 1 [0,0,9,9]: a cat\nRegion 2 [10,0,14,4]: a hat\nScene text: \"EXIT\"\n{PARAGRAPH_INSTRUCTION}"
            )
        );
        let p = build_paragraph_prompt(&dense, &[]).unwrap();
        assert!(!p.as_str().contains("Scene text"));
        assert_eq!(build_paragraph_prompt(&[], &ocr), Err(PromptError::NoRegions));

        let plain = build_paragraph_prompt_styled(&dense, &[], &LanguageControls::default()).unwrap();
        assert_eq!(plain, p);
        let zh = LanguageControls { language: "zh".into(), ..Default::default() };
        let styled = build_paragraph_prompt_styled(&dense, &[], &zh).unwrap();
        assert!(styled
            .as_str()
            .ends_with("Do not invent objects.\nWrite the paragraph so that it is written in language \"zh\"."));
    }
}

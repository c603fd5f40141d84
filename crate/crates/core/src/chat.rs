//! Object-centric chat: a bounded tool-calling loop around the refiner LLM.
//!
//! The model either answers (`Final Answer: ...`) or asks a registered tool a
//! question (`Action: <tool>` then `Action Input: <text>` within two lines).
//! Tool answers are fed back as `Observation: ...` lines until the model
//! answers or the per-turn tool budget runs out.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, Backends};
use crate::error::{Error, Result};
use crate::geometry::{crop_image, crop_window, mask_bbox, rle_decode, ImageDims, RleMask, DEFAULT_MARGIN_RATIO};
use crate::prompts::{build_chat_system_prompt, PromptText};

pub const DEFAULT_MAX_TOOL_CALLS: usize = 3;
pub const VQA_TOOL: &str = "vqa";
pub const NO_ANSWER_REPLY: &str = "Sorry, I could not find an answer about this object.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    pub input: String,
    pub output: String,
}

impl ToolCall {
    /// Transcript form, also stored as the tool message text.
    pub fn transcript(&self) -> String {
        format!(
            "Action: {}\nAction Input: {}\nObservation: {}",
            self.tool, self.input, self.output
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    pub id: String,
    pub image_id: String,
    pub image_dims: ImageDims,
    pub mask: RleMask,
    pub seed_caption: String,
    pub system_prompt: PromptText,
    pub messages: Vec<ChatMessage>,
    #[serde(skip)]
    pub busy: bool,
}

impl ChatSession {
    /// Full prompt for the next model call.
    pub fn transcript(&self, pending_user: &str, pending_tools: &[ToolCall]) -> String {
        let mut out = String::from(self.system_prompt.as_str());
        out.push('\n');
        for m in &self.messages {
            out.push('\n');
            match m.role {
                Role::User => out.push_str(&format!("User: {}", m.text)),
                Role::Assistant => out.push_str(&format!("Assistant: {}", m.text)),
                Role::Tool => out.push_str(&m.text),
            }
        }
        out.push_str(&format!("\nUser: {pending_user}"));
        for call in pending_tools {
            out.push('\n');
            out.push_str(&call.transcript());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Tool { tool: String, input: String },
    FinalAnswer(String),
}

/// Reads a model response. Never fails: text without a recognised directive
/// is taken as the final answer.
pub fn parse_action(llm_output: &str) -> Action {
    let lines: Vec<&str> = llm_output.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        let line = line.trim_start();
        if let Some(rest) = line.strip_prefix("Final Answer:") {
            let mut answer = rest.trim().to_string();
            for tail in &lines[i + 1..] {
                answer.push('\n');
                answer.push_str(tail);
            }
            return Action::FinalAnswer(answer.trim().to_string());
        }
        if let Some(tool) = line.strip_prefix("Action:") {
            let input = lines[i + 1..]
                .iter()
                .take(2)
                .find_map(|l| l.trim_start().strip_prefix("Action Input:"))
                .map(str::trim);
            if let Some(input) = input.filter(|s| !s.is_empty()) {
                return Action::Tool {
                    tool: tool.trim().to_string(),
                    input: input.to_string(),
                };
            }
        }
    }
    Action::FinalAnswer(llm_output.trim().to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatConfig {
    pub max_tool_calls: usize,
    pub margin_ratio: f64,
    pub tools: Vec<String>,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            max_tool_calls: DEFAULT_MAX_TOOL_CALLS,
            margin_ratio: DEFAULT_MARGIN_RATIO,
            tools: vec![VQA_TOOL.to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub reply: String,
    pub tool_calls: Vec<ToolCall>,
}

#[derive(Clone)]
pub struct ChatEngine {
    backends: Backends,
    config: ChatConfig,
}

impl ChatEngine {
    pub fn new(backends: Backends, config: ChatConfig) -> Self {
        Self { backends, config }
    }

    pub fn config(&self) -> &ChatConfig {
        &self.config
    }

    pub fn start_session(
        &self,
        id: impl Into<String>,
        image_id: impl Into<String>,
        image_dims: ImageDims,
        mask: RleMask,
        seed_caption: &str,
    ) -> Result<ChatSession> {
        if seed_caption.trim().is_empty() {
            return Err(Error::InvalidInput("seed caption is empty".into()));
        }
        if mask.dims() != image_dims {
            return Err(Error::InvalidInput(format!(
                "mask is {} but image is {image_dims}",
                mask.dims()
            )));
        }
        let tools: Vec<&str> = self.config.tools.iter().map(String::as_str).collect();
        let system_prompt = build_chat_system_prompt(seed_caption, image_dims, &tools)?;
        Ok(ChatSession {
            id: id.into(),
            image_id: image_id.into(),
            image_dims,
            mask,
            seed_caption: seed_caption.to_string(),
            system_prompt,
            messages: Vec::new(),
            busy: false,
        })
    }

    /// Runs one user turn. The session is only updated when the turn succeeds.
    pub fn chat_turn(
        &self,
        session: &mut ChatSession,
        image: &RgbImage,
        user_msg: &str,
    ) -> Result<TurnOutcome> {
        if session.busy {
            return Err(Error::SessionBusy);
        }
        let user_msg = user_msg.trim();
        if user_msg.is_empty() {
            return Err(Error::InvalidInput("message is empty".into()));
        }
        session.busy = true;
        let outcome = self.run_turn(session, image, user_msg);
        session.busy = false;

        let outcome = outcome?;
        session.messages.push(ChatMessage { role: Role::User, text: user_msg.to_string() });
        for call in &outcome.tool_calls {
            session.messages.push(ChatMessage { role: Role::Tool, text: call.transcript() });
        }
        session
            .messages
            .push(ChatMessage { role: Role::Assistant, text: outcome.reply.clone() });
        Ok(outcome)
    }

    fn run_turn(&self, session: &ChatSession, image: &RgbImage, user_msg: &str) -> Result<TurnOutcome> {
        if ImageDims::of(image)? != session.image_dims {
            return Err(Error::InvalidInput("image does not match the session".into()));
        }
        let mask = rle_decode(&session.mask)?;
        let window = crop_window(mask_bbox(&mask)?, self.config.margin_ratio, session.image_dims);
        let crop = crop_image(image, window)?;

        let mut calls: Vec<ToolCall> = Vec::new();
        while calls.len() < self.config.max_tool_calls {
            let prompt = PromptText::new(session.transcript(user_msg, &calls))?;
            let output = match self.backends.refiner.refine(&prompt) {
                Ok(text) => text,
                // A refusal is still an answer to show the user.
                Err(BackendError::Refusal(text)) => text,
                Err(e) => return Err(e.into()),
            };
            match parse_action(&output) {
                Action::Tool { tool, input } if self.config.tools.contains(&tool) => {
                    let answer = self.backends.vqa.vqa(&crop, &input)?;
                    calls.push(ToolCall { tool, input, output: answer });
                }
                Action::Tool { .. } => return Ok(final_reply(output.trim(), calls)),
                Action::FinalAnswer(text) => return Ok(final_reply(&text, calls)),
            }
        }
        let reply = calls
            .last()
            .map(|c| c.output.clone())
            .unwrap_or_else(|| NO_ANSWER_REPLY.to_string());
        Ok(TurnOutcome { reply, tool_calls: calls })
    }
}

fn final_reply(text: &str, calls: Vec<ToolCall>) -> TurnOutcome {
    let reply = if text.is_empty() { NO_ANSWER_REPLY } else { text };
    TurnOutcome { reply: reply.to_string(), tool_calls: calls }
}

use std::path::PathBuf;

use capengine_core::geometry::{BoxRegion, LabeledPoint, PointLabel, Trajectory, VisualControl};
use capengine_core::prompts::{Factuality, LanguageControls, Sentiment};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "capengine", version, about = "Controllable image captioning from the command line")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Caption one object selected by points, a box or a trajectory.
    Caption(CaptionArgs),
    /// Caption every region and summarize the image in one paragraph.
    Paragraph(ParagraphArgs),
    /// Chat about one object; reads one message per stdin line.
    Chat(ChatArgs),
    /// Run the HTTP service until interrupted.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Structured,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Use the deterministic offline mock backends.
    #[arg(long, conflicts_with = "config")]
    pub mock: bool,
    /// Service config file describing the backends (key = value).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ControlArgs {
    /// Point prompt `X,Y` (positive) or `X,Y,0` (negative); repeatable.
    #[arg(long, value_name = "X,Y[,L]", value_parser = parse_point, action = ArgAction::Append)]
    pub point: Vec<LabeledPoint>,
    /// Box prompt `X0,Y0,X1,Y1`.
    #[arg(long = "box", value_name = "X0,Y0,X1,Y1", value_parser = parse_box)]
    pub region: Option<BoxRegion>,
    /// Trajectory `X1,Y1;X2,Y2;...`.
    #[arg(long, value_name = "X1,Y1;X2,Y2;...", value_parser = parse_trajectory)]
    pub traj: Option<Trajectory>,
}

impl ControlArgs {
    pub fn control(&self) -> VisualControl {
        if let Some(b) = self.region {
            VisualControl::Box(b)
        } else if let Some(t) = &self.traj {
            VisualControl::Trajectory(t.clone())
        } else {
            VisualControl::Points(self.point.clone())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SentimentArg {
    Positive,
    Negative,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FactualityArg {
    Factual,
    Imagination,
}

#[derive(Debug, Args)]
pub struct LanguageArgs {
    #[arg(long, value_enum, default_value_t = SentimentArg::Neutral)]
    pub sentiment: SentimentArg,
    /// Word budget for the caption.
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u32).range(1..))]
    pub length: Option<u32>,
    /// Output language tag.
    #[arg(long, value_name = "TAG", default_value = "en")]
    pub lang: String,
    #[arg(long, value_enum, default_value_t = FactualityArg::Factual)]
    pub factuality: FactualityArg,
}

impl LanguageArgs {
    pub fn controls(&self) -> LanguageControls {
        LanguageControls {
            sentiment: match self.sentiment {
                SentimentArg::Positive => Sentiment::Positive,
                SentimentArg::Negative => Sentiment::Negative,
                SentimentArg::Neutral => Sentiment::Neutral,
            },
            length: self.length,
            language: self.lang.clone(),
            factuality: match self.factuality {
                FactualityArg::Factual => Factuality::Factual,
                FactualityArg::Imagination => Factuality::Imagination,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    #[arg(long, value_name = "PATH")]
    pub image: PathBuf,
    #[command(flatten)]
    pub control: ControlArgs,
    #[command(flatten)]
    pub language: LanguageArgs,
    /// Caption the crop directly instead of naming the category first.
    #[arg(long)]
    pub no_cot: bool,
    /// Skip the style refinement step.
    #[arg(long)]
    pub no_refine: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ParagraphArgs {
    #[arg(long, value_name = "PATH")]
    pub image: PathBuf,
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    pub max_regions: Option<u64>,
    /// Name each region's category before captioning it.
    #[arg(long)]
    pub cot: bool,
    /// OCR fixture (`text<TAB>x0,y0,x1,y1<TAB>conf` per line) for the mock OCR.
    #[arg(long, value_name = "FILE")]
    pub ocr: Option<PathBuf>,
    #[command(flatten)]
    pub language: LanguageArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    #[arg(long, value_name = "PATH")]
    pub image: PathBuf,
    #[command(flatten)]
    pub control: ControlArgs,
    /// Refiner script: one response per line, replayed in order.
    #[arg(long, value_name = "FILE")]
    pub script: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
}

fn ints(s: &str, sep: char, n: usize) -> Result<Vec<i32>, String> {
    let parts: Vec<&str> = s.split(sep).map(str::trim).collect();
    if parts.len() != n {
        return Err(format!("expected {n} integers separated by '{sep}'"));
    }
    parts.iter().map(|p| p.parse::<i32>().map_err(|e| format!("`{p}`: {e}"))).collect()
}

pub fn parse_point(s: &str) -> Result<LabeledPoint, String> {
    let v = ints(s, ',', 2).or_else(|_| ints(s, ',', 3))?;
    let label = match v.get(2) {
        None | Some(1) => PointLabel::Positive,
        Some(0) => PointLabel::Negative,
        Some(l) => return Err(format!("label must be 0 or 1, got {l}")),
    };
    Ok(LabeledPoint { x: v[0], y: v[1], label })
}

pub fn parse_box(s: &str) -> Result<BoxRegion, String> {
    let v = ints(s, ',', 4)?;
    Ok(BoxRegion::new(v[0], v[1], v[2], v[3]))
}

pub fn parse_trajectory(s: &str) -> Result<Trajectory, String> {
    let points = s
        .split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| ints(p, ',', 2).map(|v| (v[0], v[1])))
        .collect::<Result<Vec<_>, _>>()?;
    if points.is_empty() {
        return Err("trajectory needs at least one point".into());
    }
    Ok(Trajectory::new(points))
}

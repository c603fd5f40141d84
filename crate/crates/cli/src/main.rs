//! `capengine`: caption, paragraph and chat from the command line, plus the
//! `serve` entry point for the HTTP service.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 backend failure,
//! 1 anything else (e.g. the listen address is taken).

mod args;

use std::io::{BufRead, Write};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use args::{BackendArgs, CaptionArgs, ChatArgs, Cli, Command, Format, ParagraphArgs, ServeArgs};
use capengine_core::backends::{BackendError, Backends, MockOcr, ScriptedRefiner};
use capengine_core::chat::{ChatEngine, ToolCall};
use capengine_core::paragraph::ParagraphEngine;
use capengine_core::pipeline::{render_result, CaptionRequest, Pipeline, Verbosity};
use capengine_service::store::content_id;
use capengine_service::{Service, ServiceConfig};
use clap::Parser;
use image::RgbImage;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<capengine_core::Error> for CliError {
    fn from(e: capengine_core::Error) -> Self {
        use capengine_core::Error as E;
        match e {
            E::Backend(BackendError::Config(m)) => CliError::Usage(m),
            E::Backend(_) | E::NoCandidates => CliError::Backend(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let result = match cli.command {
        Command::Caption(a) => caption(&a, &mut stdout.lock()),
        Command::Paragraph(a) => paragraph(&a, &mut stdout.lock()),
        Command::Chat(a) => chat(&a, &mut std::io::stdin().lock(), &mut stdout.lock()),
        Command::Serve(a) => serve(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("capengine: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_image(path: &Path) -> CliResult<(String, RgbImage)> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Usage(format!("cannot read image {}: {e}", path.display())))?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| CliError::Usage(format!("cannot decode image {}: {e}", path.display())))?;
    Ok((content_id(&bytes), img.to_rgb8()))
}

fn setup(args: &BackendArgs) -> CliResult<(ServiceConfig, Backends)> {
    if args.mock {
        return Ok((ServiceConfig::new("."), Backends::mock()));
    }
    let Some(path) = &args.config else {
        return Err(CliError::Usage("choose backends with --mock or --config PATH".into()));
    };
    let cfg = ServiceConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))?;
    let backends = Backends::from_configs(&cfg.backends).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((cfg, backends))
}

fn write_out(out: &mut dyn Write, text: &str) -> CliResult<()> {
    writeln!(out, "{text}").map_err(|e| CliError::Runtime(format!("cannot write output: {e}")))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output serializes")
}

fn caption(args: &CaptionArgs, out: &mut dyn Write) -> CliResult<()> {
    let (cfg, backends) = setup(&args.backend)?;
    let (_, image) = load_image(&args.image)?;
    let req = CaptionRequest {
        control: args.control.control(),
        controls: args.language.controls(),
        use_cot: !args.no_cot,
        refine: !args.no_refine,
    };
    let result = Pipeline::new(backends, cfg.pipeline_config()).caption_object(&image, &req)?;
    let verbosity = match args.backend.format {
        Format::Text => Verbosity::Low,
        Format::Structured => Verbosity::High,
    };
    write_out(out, &render_result(&result, verbosity))
}

fn paragraph(args: &ParagraphArgs, out: &mut dyn Write) -> CliResult<()> {
    let (cfg, mut backends) = setup(&args.backend)?;
    if let Some(path) = &args.ocr {
        backends.ocr = Arc::new(MockOcr::from_file(path).map_err(|e| CliError::Usage(e.to_string()))?);
    }
    let (_, image) = load_image(&args.image)?;
    let mut opts = cfg.paragraph_options();
    if let Some(n) = args.max_regions {
        opts.max_regions = n as usize;
    }
    opts.use_cot = args.cot;
    let engine = ParagraphEngine::new(Pipeline::new(backends, cfg.pipeline_config()));
    let result = engine.caption_everything(&image, &args.language.controls(), &opts)?;
    match args.backend.format {
        Format::Text => write_out(out, &result.paragraph),
        Format::Structured => write_out(out, &to_json(&result)),
    }
}

#[derive(Debug, Serialize)]
struct ChatTurn {
    message: String,
    reply: String,
    tool_calls: Vec<ToolCall>,
}

/// Structured chat output: the whole session as one record.
#[derive(Debug, Serialize)]
struct ChatRecord {
    session_id: String,
    image_id: String,
    seed_caption: String,
    turns: Vec<ChatTurn>,
}

fn chat(args: &ChatArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> CliResult<()> {
    let (cfg, mut backends) = setup(&args.backend)?;
    if let Some(path) = &args.script {
        let script = ScriptedRefiner::from_file(path).map_err(|e| CliError::Usage(e.to_string()))?;
        let markers = cfg.backend(capengine_core::backends::BackendKind::Refiner).refusal_markers.clone();
        backends.refiner = Arc::new(script.with_refusal_markers(markers));
    }
    let (image_id, image) = load_image(&args.image)?;

    // The session is seeded with the unrefined caption of the selection.
    let seed_req = CaptionRequest { refine: false, ..CaptionRequest::new(args.control.control()) };
    let seeded = Pipeline::new(backends.clone(), cfg.pipeline_config()).caption_object(&image, &seed_req)?;
    let engine = ChatEngine::new(backends, cfg.chat_config());
    let mut session =
        engine.start_session("s1", &image_id, seeded.mask.dims(), seeded.mask.clone(), &seeded.raw_caption)?;

    let mut record = ChatRecord {
        session_id: session.id.clone(),
        image_id,
        seed_caption: seeded.raw_caption,
        turns: Vec::new(),
    };
    for line in input.lines() {
        let line = line.map_err(|e| CliError::Runtime(format!("cannot read stdin: {e}")))?;
        let message = line.trim();
        if message.is_empty() {
            continue;
        }
        let outcome = engine.chat_turn(&mut session, &image, message)?;
        if args.backend.format == Format::Text {
            write_out(out, &outcome.reply)?;
            out.flush().ok();
        }
        record.turns.push(ChatTurn {
            message: message.to_string(),
            reply: outcome.reply,
            tool_calls: outcome.tool_calls,
        });
    }
    if args.backend.format == Format::Structured {
        write_out(out, &to_json(&record))?;
    }
    Ok(())
}

fn serve(args: &ServeArgs) -> CliResult<()> {
    let cfg = ServiceConfig::load(&args.config).map_err(|e| CliError::Usage(e.to_string()))?;
    let service = Service::open(cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_ansi(false).with_target(false).init();

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(async move {
        let addr = service.config().listen;
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Runtime(format!("cannot listen on {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        eprintln!("capengine: listening on {local}");
        service
            .serve(listener, shutdown_signal())
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        eprintln!("capengine: shut down");
        Ok(())
    })
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("install SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

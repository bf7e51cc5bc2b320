//! `videomemory` command line: plan, generate, inspect memory, evaluate and
//! prepare benchmark suites. Exit codes: 0 success, 1 operational failure,
//! 2 usage error.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use videomemory::agents::{storyboard_plan, AgentError, BannedTerms, LlmMatcher, PromptSet};
use videomemory::backends::{BackendSpec, Backends, ConfigFile, MatcherKind, Profile};
use videomemory::bench;
use videomemory::domain::{parse_storyboard, EntityCategory, Synopsis};
use videomemory::eval::{
    evaluate_suite, load_run_outputs, serve, validate_suite_layout, Embedder, MockEmbedder,
    SidecarEmbedder,
};
use videomemory::memory::{load_checked, ExactMatcher, MemoryBank, SemanticMatcher};
use videomemory::pipeline::{
    resume, run, run_storyboard, PipelineError, RunConfig, RunManifest, ShotStatus, MANIFEST_FILE,
};

#[derive(Parser)]
#[command(name = "videomemory", version, about = "Script to multi-shot video with an entity memory bank")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Backend profile from the configuration file.
    #[arg(long, global = true, default_value = "mock")]
    profile: String,
    /// Output root (overrides the configuration file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Increase log detail (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a synopsis into a storyboard document.
    Plan {
        synopsis: PathBuf,
        /// Storyboard path (default `<out>/storyboard.json`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the full pipeline on a synopsis (text) or storyboard (.json).
    Generate(GenerateArgs),
    /// Inspect a memory bank.
    Memory {
        /// Bank root (default: the configured memory root).
        #[arg(long)]
        root: Option<PathBuf>,
        #[command(subcommand)]
        action: MemoryAction,
    },
    /// Score run outputs against a benchmark suite.
    Eval {
        suite: PathBuf,
        /// Directory holding one run per case, named by case id.
        runs: PathBuf,
        /// `mock`, or a command line starting an embedder process.
        #[arg(long, default_value = "mock")]
        embedder: String,
        /// JSON report path; a Markdown table is written next to it.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Method label for the report row.
        #[arg(long, default_value = "videomemory")]
        method: String,
    },
    /// Benchmark suite helpers.
    Bench {
        #[command(subcommand)]
        action: BenchAction,
    },
    /// Serve the mock embedder over stdio.
    #[command(hide = true)]
    MockSidecar,
}

#[derive(Args)]
struct GenerateArgs {
    /// Synopsis text file, or a storyboard document ending in `.json`.
    input: Option<PathBuf>,
    /// Continue a halted run from its manifest.
    #[arg(long, conflicts_with = "input")]
    resume: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
    /// Regenerate every entity in every shot; store nothing.
    #[arg(long)]
    no_memory: bool,
    /// Bypass one bank (repeatable).
    #[arg(long, value_enum)]
    disable_bank: Vec<Bank>,
    /// Bank root (default `<run dir>/memory`).
    #[arg(long)]
    memory_root: Option<PathBuf>,
    /// Reuse an existing, non-empty bank root.
    #[arg(long)]
    warm_start: bool,
    /// Frames per shot for the mock video backend.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Bank {
    Char,
    Prop,
    Bg,
}

#[derive(Subcommand)]
enum MemoryAction {
    /// Keys and summaries per store.
    List,
    /// One entry and its image path.
    Show { key: String },
    /// Check every image against its recorded digest.
    Verify,
}

#[derive(Subcommand)]
enum BenchAction {
    /// Create the subclass x shot-count directory grid with case templates.
    Scaffold {
        dir: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Write the story-generation prompt (`-` for stdout).
    EmitPrompt { output: PathBuf },
    /// Write a storyboard and mock text script that replay one case offline.
    MockFixture { case: PathBuf, dir: PathBuf },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

fn fail(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MockSidecar => {
            let stdin = io::stdin().lock();
            serve(&MockEmbedder, stdin, io::stdout().lock()).map_err(fail)
        }
        Command::Bench { ref action } => cmd_bench(action),
        _ => {
            let ctx = Context::load(&cli)?;
            match cli.command {
                Command::Plan { synopsis, output } => ctx.cmd_plan(&synopsis, output),
                Command::Generate(args) => ctx.cmd_generate(args),
                Command::Memory { root, action } => ctx.cmd_memory(root, action),
                Command::Eval {
                    suite,
                    runs,
                    embedder,
                    report,
                    method,
                } => ctx.cmd_eval(&suite, &runs, &embedder, report, &method),
                Command::Bench { .. } | Command::MockSidecar => unreachable!(),
            }
        }
    }
}

/// Configuration after applying flags over the file.
struct Context {
    file: ConfigFile,
    profile_name: String,
    profile: Profile,
    out: PathBuf,
    prompts: PromptSet,
    banned: BannedTerms,
}

impl Context {
    fn load(cli: &Cli) -> Result<Self> {
        let file = match &cli.config {
            Some(path) if !path.exists() => {
                return Err(CliError::Usage(format!("config file {} not found", path.display())))
            }
            Some(path) => ConfigFile::load(path).map_err(fail)?,
            None => ConfigFile::default(),
        };
        let profile = file.profile(&cli.profile).map_err(|e| CliError::Usage(e.to_string()))?;
        let out = cli
            .out
            .clone()
            .or_else(|| file.output_root.clone())
            .unwrap_or_else(|| PathBuf::from("runs"));
        let prompts = match &file.prompts_dir {
            Some(dir) => PromptSet::with_overrides(dir).map_err(fail)?,
            None => PromptSet::default(),
        };
        let banned = match &file.banned_terms {
            Some(path) => BannedTerms::load(path).map_err(|e| fail(format!("{}: {e}", path.display())))?,
            None => BannedTerms::default(),
        };
        Ok(Self {
            profile_name: cli.profile.clone(),
            file,
            profile,
            out,
            prompts,
            banned,
        })
    }

    fn backends(&self) -> Result<Backends> {
        self.profile.build().map_err(fail)
    }

    fn cmd_plan(&self, synopsis: &Path, output: Option<PathBuf>) -> Result<()> {
        let synopsis = read_synopsis(synopsis)?;
        let backends = self.backends()?;
        let outcome = storyboard_plan(&synopsis, backends.text.as_ref(), &self.prompts).map_err(|e| {
            if let AgentError::Planning { last_response, .. } = &e {
                log::error!("last planner response:\n{last_response}");
            }
            fail(e)
        })?;
        let path = output.unwrap_or_else(|| self.out.join("storyboard.json"));
        write_file(&path, &(outcome.storyboard.to_json() + "\n"))?;
        println!(
            "planned {} shot(s) in {} attempt(s): {}",
            outcome.storyboard.shots.len(),
            outcome.attempts,
            path.display()
        );
        Ok(())
    }

    fn run_config(&self, args: &GenerateArgs) -> RunConfig {
        let mut cfg = RunConfig::new(&self.out);
        cfg.run_id = args.run_id.clone();
        cfg.memory_root = args.memory_root.clone().or_else(|| self.file.memory_root.clone());
        cfg.warm_start = args.warm_start;
        cfg.memory.ablation_no_memory = args.no_memory;
        for bank in &args.disable_bank {
            match bank {
                Bank::Char => cfg.memory.enable_character_bank = false,
                Bank::Prop => cfg.memory.enable_prop_bank = false,
                Bank::Bg => cfg.memory.enable_background_bank = false,
            }
        }
        cfg.profile = self.profile_name.clone();
        cfg.echo = Some(serde_json::json!({
            "profile": self.profile_name,
            "backends": self.profile,
            "prompts_dir": self.file.prompts_dir,
            "banned_terms": self.file.banned_terms,
        }));
        cfg.prompts = self.prompts.clone();
        cfg.banned = self.banned.clone();
        cfg
    }

    fn cmd_generate(mut self, args: GenerateArgs) -> Result<()> {
        if let Some(frames) = args.frames {
            match &mut self.profile.video {
                BackendSpec::Mock { frames: f, .. } => *f = Some(frames),
                BackendSpec::Http(_) => {
                    return Err(CliError::Usage("--frames only applies to the mock video backend".into()))
                }
            }
        }
        let cfg = self.run_config(&args);
        let backends = self.backends()?;
        let exact = ExactMatcher;
        let llm;
        let matcher: &dyn SemanticMatcher = match self.profile.matcher {
            MatcherKind::Exact => &exact,
            MatcherKind::Llm => {
                llm = LlmMatcher::new(backends.text.as_ref(), self.prompts.clone());
                &llm
            }
        };

        let (result, manifest_path) = if let Some(manifest) = &args.resume {
            if !manifest.exists() {
                return Err(CliError::Usage(format!("manifest {} not found", manifest.display())));
            }
            (resume(manifest, &cfg, &backends, matcher), manifest.clone())
        } else {
            let Some(input) = &args.input else {
                return Err(CliError::Usage("generate needs an input file or --resume".into()));
            };
            if !input.is_file() {
                return Err(CliError::Usage(format!("input {} not found", input.display())));
            }
            let result = if input.extension().is_some_and(|e| e == "json") {
                let text = fs::read_to_string(input).map_err(fail)?;
                let board = parse_storyboard(&text).map_err(fail)?;
                run_storyboard(&board, &cfg, &backends, matcher)
            } else {
                run(&read_synopsis(input)?, &cfg, &backends, matcher)
            };
            let path = match &result {
                Ok(m) => self.out.join(&m.run_id).join(MANIFEST_FILE),
                Err(PipelineError::ShotFailed { manifest, .. }) => {
                    self.out.join(&manifest.run_id).join(MANIFEST_FILE)
                }
                Err(_) => PathBuf::new(),
            };
            (result, path)
        };

        match result {
            Ok(manifest) => {
                print_progress(&manifest);
                println!("manifest: {}", manifest_path.display());
                Ok(())
            }
            Err(PipelineError::ShotFailed { manifest, shot, message }) => {
                print_progress(&manifest);
                println!("manifest: {}", manifest_path.display());
                Err(fail(format!(
                    "shot {shot} failed: {message}; fix the cause and rerun with --resume {}",
                    manifest_path.display()
                )))
            }
            Err(e) => Err(fail(e)),
        }
    }

    fn memory_root(&self, root: Option<PathBuf>) -> Result<PathBuf> {
        root.or_else(|| self.file.memory_root.clone())
            .ok_or_else(|| CliError::Usage("no bank root: pass --root or set memory_root".into()))
    }

    fn cmd_memory(&self, root: Option<PathBuf>, action: MemoryAction) -> Result<()> {
        let root = self.memory_root(root)?;
        if !root.is_dir() {
            return Err(fail(format!("bank root {} does not exist", root.display())));
        }
        match action {
            MemoryAction::List => {
                let bank = MemoryBank::load(&root).map_err(fail)?;
                for category in EntityCategory::ALL {
                    let mut entries: Vec<_> = bank.store(category).values().collect();
                    entries.sort_by_key(|e| e.sequence);
                    println!("{} ({})", category.store_name(), entries.len());
                    for e in entries {
                        println!(
                            "  {}  shot {}  {}",
                            e.key, e.created_at_shot, e.entity.state.summary
                        );
                    }
                }
                Ok(())
            }
            MemoryAction::Show { key } => {
                let bank = MemoryBank::load(&root).map_err(fail)?;
                let entry = bank.find(&key).ok_or_else(|| fail(format!("key {key:?} not found")))?;
                println!("key: {}", entry.key);
                println!("name: {}", entry.entity.name);
                println!("category: {}", entry.entity.category);
                println!("summary: {}", entry.entity.state.summary);
                for (k, v) in &entry.entity.state.attributes {
                    println!("attribute {k}: {v}");
                }
                println!("created at shot: {}", entry.created_at_shot);
                println!("sequence: {}", entry.sequence);
                println!("image: {}", entry.reference.path.display());
                println!("digest: {}", entry.reference.digest);
                Ok(())
            }
            MemoryAction::Verify => {
                let (bank, problems) = load_checked(&root).map_err(fail)?;
                if problems.is_empty() {
                    println!("ok: {} entries verified", bank.len());
                    return Ok(());
                }
                for p in &problems {
                    println!("{}/{}: {}", p.store, p.key, p.reason);
                }
                Err(fail(format!("{} problem(s) in bank {}", problems.len(), root.display())))
            }
        }
    }

    fn cmd_eval(
        &self,
        suite_dir: &Path,
        runs: &Path,
        embedder_spec: &str,
        report: Option<PathBuf>,
        method: &str,
    ) -> Result<()> {
        if !suite_dir.is_dir() {
            return Err(CliError::Usage(format!("suite {} not found", suite_dir.display())));
        }
        let suite = validate_suite_layout(suite_dir).map_err(fail)?;
        let embedder: Box<dyn Embedder> = if embedder_spec == "mock" {
            Box::new(MockEmbedder)
        } else {
            let mut words = embedder_spec.split_whitespace().map(str::to_string);
            let program = words
                .next()
                .ok_or_else(|| CliError::Usage("empty --embedder command".into()))?;
            let args: Vec<String> = words.collect();
            Box::new(SidecarEmbedder::spawn(&program, &args).map_err(fail)?)
        };
        let outputs = load_run_outputs(runs, &suite);
        let report_data = evaluate_suite(&suite, &outputs, embedder.as_ref(), method).map_err(fail)?;
        let json_path = report.unwrap_or_else(|| self.out.join("report.json"));
        write_file(&json_path, &report_data.to_json())?;
        let markdown = report_data.to_markdown();
        write_file(&json_path.with_extension("md"), &markdown)?;
        print!("{markdown}");
        println!("report: {}", json_path.display());
        Ok(())
    }
}

fn cmd_bench(action: &BenchAction) -> Result<()> {
    match action {
        BenchAction::Scaffold { dir, force } => {
            let cells = bench::scaffold(dir, *force).map_err(fail)?;
            println!("scaffolded {} cells under {}", cells.len(), dir.display());
            Ok(())
        }
        BenchAction::EmitPrompt { output } if output.as_os_str() == "-" => {
            print!("{}", bench::GENERATION_PROMPT);
            Ok(())
        }
        BenchAction::EmitPrompt { output } => {
            bench::emit_prompt(output).map_err(fail)?;
            println!("prompt: {}", output.display());
            Ok(())
        }
        BenchAction::MockFixture { case, dir } => {
            let text = fs::read_to_string(case)
                .map_err(|e| CliError::Usage(format!("{}: {e}", case.display())))?;
            let case: videomemory::eval::BenchmarkCase = serde_json::from_str(&text).map_err(fail)?;
            let problems = case.problems();
            if !problems.is_empty() {
                return Err(fail(problems.join("; ")));
            }
            let fixture = bench::mock_fixture(&case);
            write_file(&dir.join("storyboard.json"), &(fixture.storyboard.to_json() + "\n"))?;
            write_file(&dir.join("script.json"), &fixture.script_json())?;
            println!("fixture: {}", dir.display());
            Ok(())
        }
    }
}

fn read_synopsis(path: &Path) -> Result<Synopsis> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("synopsis {} not found", path.display())));
    }
    let text = fs::read_to_string(path).map_err(fail)?;
    Synopsis::new(text.trim(), None).map_err(fail)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(fail)?;
    }
    fs::write(path, text).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn print_progress(manifest: &RunManifest) {
    for shot in &manifest.shots {
        let status = match shot.status {
            ShotStatus::Done => "done",
            ShotStatus::Failed => "failed",
            ShotStatus::Pending => "pending",
        };
        match &shot.error {
            Some(e) => println!("shot {}: {status} ({e})", shot.index),
            None => println!("shot {}: {status}", shot.index),
        }
    }
}

//! tlscope: passive TLS traffic analysis pipeline.
//!
//! Subcommands wire the library end to end: pcap extraction, model
//! training with cross-validation, per-flow classification, windowed
//! family attribution, client fingerprinting, prevalence reporting, and
//! synthetic corpus generation. Errors go to standard error as JSON;
//! exit codes are 0 (success), 1 (I/O), 2 (data/validation).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use tlscope::assemble::{assemble_flows, detect_tls, DEFAULT_IDLE_TIMEOUT_SECS};
use tlscope::attribution::{
    attribute_flow, attribute_window, family_profiles, flow_id, similarity_matrix,
    windows_by_host, DEFAULT_WINDOW_SECS,
};
use tlscope::features::{parse_views, views_to_string, FeatureDictionary, MarkovConfig, ViewSet};
use tlscope::flow::FlowRecord;
use tlscope::learn::{
    collect_labels, cross_validate, default_lambda_grid, train_on_flows, CvConfig, LearnError,
    LinearModel, Objective, TrainConfig,
};
use tlscope::pcap::parse_pcap;
use tlscope::report::{port_table, prevalence, render, similarity_csv};
use tlscope::synth::{enterprise_like, generate, malware_like, ClassProfile};
use tlscope::tls::fingerprint::{fingerprint_client, is_schannel_xp, FingerprintDb, XpConfig};
use tlscope::tls::parse_handshake;
use tlscope::tls::registry::CodeRegistry;

const EXIT_IO: i32 = 1;
const EXIT_DATA: i32 = 2;

struct AppError {
    exit: i32,
    kind: &'static str,
    message: String,
}

impl AppError {
    fn io(message: impl Into<String>) -> Self {
        AppError { exit: EXIT_IO, kind: "io", message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        AppError { exit: EXIT_DATA, kind: "data", message: message.into() }
    }
}

impl From<LearnError> for AppError {
    fn from(e: LearnError) -> Self {
        AppError::data(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "tlscope", version, about = "Passive TLS traffic analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract flow records from pcap files into JSON Lines.
    Extract {
        /// Input pcap files; each produces one .jsonl next to it or
        /// under --out-dir.
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Flow idle timeout in seconds.
        #[arg(long, default_value_t = DEFAULT_IDLE_TIMEOUT_SECS)]
        idle_timeout: f64,
    },
    /// Train an L1 logistic model on labeled flow JSONL.
    Train {
        input: PathBuf,
        /// Model output path.
        #[arg(long, short)]
        out: PathBuf,
        /// Evaluation report output path (default: <out>.eval.json).
        #[arg(long)]
        eval_out: Option<PathBuf>,
        /// Data views, e.g. meta+splt+bd+tls+ss.
        #[arg(long)]
        views: Option<String>,
        /// Single L1 strength; overrides --lambda-grid.
        #[arg(long)]
        lambda: Option<f64>,
        /// Comma-separated L1 strengths to select among by CV.
        #[arg(long)]
        lambda_grid: Option<String>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Print a 4-row data-view ablation instead of the eval JSON.
        #[arg(long)]
        ablate: bool,
    },
    /// Classify flows with a trained model; one verdict per line.
    Classify {
        model: PathBuf,
        input: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Attribute flows to families by windowed majority vote.
    Attribute {
        model: PathBuf,
        input: PathBuf,
        #[arg(long)]
        window_secs: Option<f64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Match client hello parameters against a fingerprint database.
    Fingerprint {
        input: PathBuf,
        /// Fingerprint database (JSON array of labeled parameter lists).
        #[arg(long)]
        fingerprints: Option<PathBuf>,
        /// Windows XP SChannel ciphersuite-list config (JSON).
        #[arg(long)]
        xp_config: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Prevalence tables, port table, and family similarity matrix.
    Report {
        input: PathBuf,
        /// Ciphersuite/extension registry JSON.
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Generate a seeded synthetic corpus (pcap + labeled JSONL).
    Synth {
        /// Output path prefix; writes <out>.pcap and <out>.jsonl.
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n_flows: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Class profile JSON (array); defaults to the bundled
        /// enterprise-like and malware-like profiles.
        #[arg(long)]
        profiles: Option<PathBuf>,
    },
}

/// Defaults file pointed at by TLSCOPE_CONFIG; flags override.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDefaults {
    views: Option<String>,
    folds: Option<usize>,
    seed: Option<u64>,
    window_secs: Option<f64>,
    registry: Option<PathBuf>,
    fingerprints: Option<PathBuf>,
    xp_config: Option<PathBuf>,
    lambda: Option<f64>,
    lambda_grid: Option<String>,
}

fn load_defaults() -> Result<FileDefaults, AppError> {
    match std::env::var_os("TLSCOPE_CONFIG") {
        None => Ok(FileDefaults::default()),
        Some(path) => {
            let raw = fs::read_to_string(&path)
                .map_err(|e| AppError::io(format!("TLSCOPE_CONFIG {path:?}: {e}")))?;
            serde_json::from_str(&raw)
                .map_err(|e| AppError::data(format!("TLSCOPE_CONFIG {path:?}: {e}")))
        }
    }
}

fn read_flows(path: &Path) -> Result<Vec<FlowRecord>, AppError> {
    let raw = fs::read_to_string(path).map_err(|e| AppError::io(format!("{path:?}: {e}")))?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| AppError::data(format!("{path:?} line {}: {e}", i + 1)))
        })
        .collect()
}

fn write_output(out: Option<&Path>, content: &str) -> Result<(), AppError> {
    match out {
        Some(path) => {
            fs::write(path, content).map_err(|e| AppError::io(format!("{path:?}: {e}")))
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn load_model(path: &Path) -> Result<LinearModel, AppError> {
    let raw = fs::read_to_string(path).map_err(|e| AppError::io(format!("{path:?}: {e}")))?;
    LinearModel::from_json(&raw).map_err(|e| AppError::data(format!("{path:?}: {e}")))
}

/// Content hash identifying the training corpus; keeps reruns on
/// identical inputs byte-identical.
fn corpus_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn dimension_diag(model: &LinearModel, e: LearnError) -> AppError {
    match e {
        LearnError::DimensionMismatch { expected, got } => AppError::data(format!(
            "feature dimension mismatch: model expects {expected} dims over views {} but flow yields {got}",
            views_to_string(&model.views)
        )),
        other => other.into(),
    }
}

fn extract_one(path: &Path, out_dir: Option<&Path>, idle_timeout: f64) -> Result<String, AppError> {
    let bytes = fs::read(path).map_err(|e| AppError::io(format!("{path:?}: {e}")))?;
    let (packets, tally) =
        parse_pcap(&bytes).map_err(|e| AppError::data(format!("{path:?}: {e}")))?;
    let flows = assemble_flows(&packets, idle_timeout);
    let mut lines = String::new();
    let mut tls_count = 0u64;
    for af in &flows {
        let mut rec = af.record.clone();
        if detect_tls(af) {
            rec.tls = parse_handshake(af).ok();
            tls_count += u64::from(rec.tls.is_some());
        }
        lines.push_str(&rec.canonical_json());
        lines.push('\n');
    }
    let out_path = match out_dir {
        Some(dir) => dir.join(Path::new(path.file_stem().unwrap_or_default()).with_extension("jsonl")),
        None => path.with_extension("jsonl"),
    };
    fs::write(&out_path, &lines).map_err(|e| AppError::io(format!("{out_path:?}: {e}")))?;
    Ok(format!(
        "{}: {} packets, {} flows, {} tls, {} skipped",
        path.display(),
        packets.len(),
        flows.len(),
        tls_count,
        tally.skipped()
    ))
}

fn cmd_extract(
    inputs: &[PathBuf],
    out_dir: Option<&Path>,
    idle_timeout: f64,
) -> Result<(), AppError> {
    if inputs.is_empty() {
        return Err(AppError::data("no input pcap files given".to_string()));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| AppError::io(format!("{dir:?}: {e}")))?;
    }
    // File-level parallelism; each input succeeds or fails on its own.
    let results: Vec<Result<String, AppError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = inputs
            .iter()
            .map(|p| scope.spawn(move || extract_one(p, out_dir, idle_timeout)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("extract worker")).collect()
    });
    let mut worst = 0;
    for result in results {
        match result {
            Ok(summary) => eprintln!("{summary}"),
            Err(e) => {
                emit_error(&e);
                worst = worst.max(e.exit);
            }
        }
    }
    if worst != 0 {
        std::process::exit(worst);
    }
    Ok(())
}

fn parse_grid(
    lambda: Option<f64>,
    lambda_grid: Option<&str>,
) -> Result<Vec<f64>, AppError> {
    if let Some(l) = lambda {
        if !(l.is_finite() && l >= 0.0) {
            return Err(AppError::data(format!("bad lambda {l}")));
        }
        return Ok(vec![l]);
    }
    match lambda_grid {
        None => Ok(default_lambda_grid()),
        Some(spec) => spec
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| AppError::data(format!("bad lambda grid entry {s:?}: {e}")))
            })
            .collect(),
    }
}

const ABLATION_ROWS: [&str; 4] = [
    "meta+splt+bd+tls+ss",
    "meta+splt+bd+tls",
    "tls",
    "meta+splt+bd",
];

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    input: &Path,
    out: &Path,
    eval_out: Option<&Path>,
    views_spec: &str,
    grid: Vec<f64>,
    folds: usize,
    seed: u64,
    ablate: bool,
) -> Result<(), AppError> {
    let raw = fs::read(input).map_err(|e| AppError::io(format!("{input:?}: {e}")))?;
    let corpus = corpus_id(&raw);
    let flows = read_flows(input)?;
    let labels = collect_labels(&flows)?;
    if labels.len() < 2 {
        return Err(LearnError::SingleClassData.into());
    }
    let objective = if labels.len() == 2 { Objective::Binary } else { Objective::Multinomial };
    let views = parse_views(views_spec).map_err(|e| AppError::data(e.to_string()))?;

    let run_cv = |views: &ViewSet| -> Result<_, AppError> {
        let cfg = CvConfig::new(folds, grid.clone(), seed, objective, views.clone());
        Ok(cross_validate(&flows, &cfg)?)
    };

    let eval = run_cv(&views)?;
    if ablate {
        for row_spec in ABLATION_ROWS {
            let row_views = parse_views(row_spec).expect("fixed view specs parse");
            let row = if row_views == views { eval.clone() } else { run_cv(&row_views)? };
            let fdr = row
                .accuracy_at_fdr
                .values()
                .next()
                .map_or("-".to_string(), |v| format!("{v:.4}"));
            println!(
                "{:<22} accuracy={:.4} accuracy@fdr={}",
                views_to_string(&row_views),
                row.total_accuracy,
                fdr
            );
        }
    } else {
        println!("{}", serde_json::to_string_pretty(&eval).expect("eval serializes"));
    }

    let train_cfg = TrainConfig {
        lambda: eval.chosen_lambda,
        objective,
        seed,
        ..TrainConfig::default()
    };
    let model = train_on_flows(&flows, &views, &MarkovConfig::default(), &train_cfg, &corpus)?;
    fs::write(out, model.to_json()).map_err(|e| AppError::io(format!("{out:?}: {e}")))?;
    let eval_path = eval_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("eval.json"));
    let eval_json = serde_json::to_string_pretty(&eval).expect("eval serializes");
    fs::write(&eval_path, eval_json).map_err(|e| AppError::io(format!("{eval_path:?}: {e}")))?;
    eprintln!(
        "trained {} on {} flows ({} classes), lambda={}, model {}",
        views_to_string(&views),
        flows.len(),
        labels.len(),
        eval.chosen_lambda,
        out.display()
    );
    Ok(())
}

fn cmd_classify(model_path: &Path, input: &Path, out: Option<&Path>) -> Result<(), AppError> {
    let model = load_model(model_path)?;
    let flows = read_flows(input)?;
    let mut lines = String::new();
    for f in &flows {
        let verdict = attribute_flow(&model, f).map_err(|e| match e {
            tlscope::attribution::AttributionError::Learn(le) => dimension_diag(&model, le),
            other => AppError::data(other.to_string()),
        })?;
        lines.push_str(&serde_json::to_string(&verdict).expect("verdict serializes"));
        lines.push('\n');
    }
    write_output(out, &lines)
}

fn cmd_attribute(
    model_path: &Path,
    input: &Path,
    window_secs: f64,
    out: Option<&Path>,
) -> Result<(), AppError> {
    if !(window_secs.is_finite() && window_secs > 0.0) {
        return Err(AppError::data(format!("bad window seconds {window_secs}")));
    }
    let model = load_model(model_path)?;
    let flows = read_flows(input)?;
    let mut lines = String::new();
    for (host, start, members) in windows_by_host(&flows, window_secs) {
        let verdict = attribute_window(&model, &members, &host, start).map_err(|e| match e {
            tlscope::attribution::AttributionError::Learn(le) => dimension_diag(&model, le),
            other => AppError::data(other.to_string()),
        })?;
        lines.push_str(&serde_json::to_string(&verdict).expect("verdict serializes"));
        lines.push('\n');
    }
    write_output(out, &lines)
}

fn cmd_fingerprint(
    input: &Path,
    db_path: Option<&Path>,
    xp_path: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), AppError> {
    let db = match db_path {
        None => FingerprintDb::new(Vec::new()),
        Some(p) => {
            let raw = fs::read_to_string(p).map_err(|e| AppError::io(format!("{p:?}: {e}")))?;
            FingerprintDb::from_json(&raw).map_err(|e| AppError::data(format!("{p:?}: {e}")))?
        }
    };
    let xp = match xp_path {
        None => XpConfig::default(),
        Some(p) => {
            let raw = fs::read_to_string(p).map_err(|e| AppError::io(format!("{p:?}: {e}")))?;
            XpConfig::from_json(&raw).map_err(|e| AppError::data(format!("{p:?}: {e}")))?
        }
    };
    let flows = read_flows(input)?;
    let mut lines = String::new();
    let mut matched = 0u64;
    let mut xp_hits = 0u64;
    for f in &flows {
        let Some(tls) = f.tls.as_ref() else { continue };
        let client = fingerprint_client(tls, &db);
        let schannel_xp =
            is_schannel_xp(tls, &xp).map_err(|e| AppError::data(e.to_string()))?;
        matched += u64::from(client.is_some());
        xp_hits += u64::from(schannel_xp);
        let row = serde_json::json!({
            "id": flow_id(f),
            "client": client,
            "xp_schannel": schannel_xp,
        });
        lines.push_str(&row.to_string());
        lines.push('\n');
    }
    write_output(out, &lines)?;
    eprintln!("{matched} fingerprint matches, {xp_hits} XP SChannel offers");
    Ok(())
}

fn cmd_report(input: &Path, registry_path: Option<&Path>, out: Option<&Path>) -> Result<(), AppError> {
    let registry = match registry_path {
        None => CodeRegistry::default(),
        Some(p) => {
            let raw = fs::read_to_string(p).map_err(|e| AppError::io(format!("{p:?}: {e}")))?;
            CodeRegistry::from_json(&raw).map_err(|e| AppError::data(format!("{p:?}: {e}")))?
        }
    };
    let flows = read_flows(input)?;
    let mut text = render(&prevalence(&flows, &registry), &port_table(&flows));
    let dict = FeatureDictionary::fit_flows(flows.iter(), "report");
    let profiles = family_profiles(&flows, &dict);
    if profiles.len() >= 2 {
        let labels: Vec<String> = profiles.iter().map(|p| p.family.clone()).collect();
        let matrix =
            similarity_matrix(&profiles, 1.0).map_err(|e| AppError::data(e.to_string()))?;
        text.push_str("\n== family similarity (CSV) ==\n");
        text.push_str(&similarity_csv(&labels, &matrix));
    }
    write_output(out, &text)
}

fn cmd_synth(
    out: &Path,
    n_flows: usize,
    seed: u64,
    profiles_path: Option<&Path>,
) -> Result<(), AppError> {
    if n_flows == 0 {
        return Err(AppError::data("n-flows must be at least 1".to_string()));
    }
    let profiles: Vec<ClassProfile> = match profiles_path {
        None => vec![enterprise_like(), malware_like()],
        Some(p) => {
            let raw = fs::read_to_string(p).map_err(|e| AppError::io(format!("{p:?}: {e}")))?;
            serde_json::from_str(&raw).map_err(|e| AppError::data(format!("{p:?}: {e}")))?
        }
    };
    let corpus = generate(&profiles, n_flows, seed).map_err(|e| AppError::data(e.to_string()))?;
    let pcap_path = out.with_extension("pcap");
    let jsonl_path = out.with_extension("jsonl");
    fs::write(&pcap_path, corpus.to_pcap())
        .map_err(|e| AppError::io(format!("{pcap_path:?}: {e}")))?;
    let mut lines = String::new();
    for f in &corpus.flows {
        lines.push_str(&f.canonical_json());
        lines.push('\n');
    }
    fs::write(&jsonl_path, lines).map_err(|e| AppError::io(format!("{jsonl_path:?}: {e}")))?;
    eprintln!(
        "wrote {} flows ({} packets) to {} and {}",
        corpus.flows.len(),
        corpus.packets.len(),
        pcap_path.display(),
        jsonl_path.display()
    );
    Ok(())
}

fn emit_error(e: &AppError) {
    let payload = serde_json::json!({ "error": e.kind, "message": e.message });
    let mut stderr = std::io::stderr();
    let _ = writeln!(stderr, "{payload}");
}

fn run(cli: Cli, defaults: FileDefaults) -> Result<(), AppError> {
    match cli.command {
        Command::Extract { inputs, out_dir, idle_timeout } => {
            cmd_extract(&inputs, out_dir.as_deref(), idle_timeout)
        }
        Command::Train { input, out, eval_out, views, lambda, lambda_grid, folds, seed, ablate } => {
            let views_spec = views
                .or(defaults.views)
                .unwrap_or_else(|| "meta+splt+bd+tls+ss".to_string());
            let grid = parse_grid(
                lambda.or(defaults.lambda),
                lambda_grid.as_deref().or(defaults.lambda_grid.as_deref()),
            )?;
            let folds = folds.or(defaults.folds).unwrap_or(10);
            let seed = seed.or(defaults.seed).unwrap_or(0);
            cmd_train(&input, &out, eval_out.as_deref(), &views_spec, grid, folds, seed, ablate)
        }
        Command::Classify { model, input, out } => cmd_classify(&model, &input, out.as_deref()),
        Command::Attribute { model, input, window_secs, out } => {
            let window = window_secs
                .or(defaults.window_secs)
                .unwrap_or(DEFAULT_WINDOW_SECS);
            cmd_attribute(&model, &input, window, out.as_deref())
        }
        Command::Fingerprint { input, fingerprints, xp_config, out } => cmd_fingerprint(
            &input,
            fingerprints.as_deref().or(defaults.fingerprints.as_deref()),
            xp_config.as_deref().or(defaults.xp_config.as_deref()),
            out.as_deref(),
        ),
        Command::Report { input, registry, out } => cmd_report(
            &input,
            registry.as_deref().or(defaults.registry.as_deref()),
            out.as_deref(),
        ),
        Command::Synth { out, n_flows, seed, profiles } => {
            let seed = seed.or(defaults.seed).unwrap_or(0);
            cmd_synth(&out, n_flows, seed, profiles.as_deref())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let defaults = match load_defaults() {
        Ok(d) => d,
        Err(e) => {
            emit_error(&e);
            std::process::exit(e.exit);
        }
    };
    if let Err(e) = run(cli, defaults) {
        emit_error(&e);
        std::process::exit(e.exit);
    }
}

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use defer_core::baselines::Policy;
use defer_core::deferral::{DeferralModel, TrainingConfig};
use defer_core::evaluation::{
    cascade_cost, cascade_latency, evaluate_mask, evaluate_system, render_table, CostModel, SystemReport,
};
use defer_core::features::Lexicon;
use defer_core::ingestion::{
    consensus_filter, group_split, load_consensus_pairs, load_dataset, load_label_space, save_dataset,
    stratified_split, DatasetManifest, SplitFractions,
};
use defer_core::metrics::Objective;
use defer_core::pipeline::{train_router, TrainMode, TrainReport};
use defer_core::service::{serve, shutdown_signal, ExpertClient, ExpertClientConfig, RouterService};
use defer_core::synthetic::{generate, hedge_lexicon, SyntheticConfig};
use defer_core::{seed, Error, LabelSpace};

use crate::{
    Cli, Command, ConsensusArgs, CostArgs, CostArgsCommon, DataArgs, EvalArgs, Format, Mode, OutputArgs, PolicyArg,
    ServeArgs, SplitArgs, SynthArgs, TrainArgs, TOKEN_ENV,
};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Consensus(a) => consensus(a),
        Command::Cost(a) => cost(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Split(a) => split(a),
        Command::Synth(a) => synth(a),
    }
}

fn load(data: &DataArgs) -> Result<DatasetManifest> {
    let labels = data
        .labels
        .as_deref()
        .map(|p| load_label_space(p).with_context(|| format!("reading label space {}", p.display())))
        .transpose()?;
    load_dataset(&data.dataset, labels.as_ref()).with_context(|| format!("loading {}", data.dataset.display()))
}

fn emit<T: Serialize>(report: &T, table: String, output: &OutputArgs) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    if let Some(path) = &output.out {
        std::fs::write(path, format!("{json}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    let text = match output.format {
        Format::Table => table,
        Format::Json => json + "\n",
    };
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn cost_model(c: &CostArgsCommon) -> Result<CostModel> {
    let cm = CostModel {
        base_cost: c.cost_base,
        expert_cost: c.cost_expert,
        base_latency_ms: c.lat_base_ms,
        expert_latency_ms: c.lat_expert_ms,
    };
    cm.validate()?;
    Ok(cm)
}

/// Adds a hint to the failures an operator can fix by changing the data.
fn explain(e: Error) -> anyhow::Error {
    let hint = match &e {
        Error::DegenerateLabels(_) => {
            Some("the error predictor needs both correct and incorrect base predictions in the training data")
        }
        Error::MissingExpert { .. } => Some("threshold tuning needs an expert_pred on every training record"),
        _ => None,
    };
    match hint {
        Some(h) => anyhow::Error::new(e).context(h),
        None => e.into(),
    }
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    model_path: String,
    #[serde(flatten)]
    report: &'a TrainReport,
}

fn train(args: TrainArgs) -> Result<()> {
    let data = load(&args.data)?;
    let lexicon = match &args.lexicon {
        Some(p) => Lexicon::from_path(p).with_context(|| format!("reading lexicon {}", p.display()))?,
        None => Lexicon::default(),
    };
    let config = TrainingConfig { max_iterations: args.max_iter, seed: args.seed, ..TrainingConfig::with_c(args.c)? };
    let objective = Objective::for_labels(args.objective.into(), &data.label_space)?;
    let mode = match args.mode {
        Mode::Kfold => TrainMode::KFold { k: args.k },
        Mode::SingleFit => TrainMode::SingleFit,
    };
    let out = train_router(&data.records, &data.label_space, &lexicon, &config, mode, objective).map_err(explain)?;
    out.model.save(&args.model).with_context(|| format!("writing model {}", args.model.display()))?;

    let r = &out.report;
    let mut t = String::new();
    let _ = writeln!(t, "mode             {}", r.mode);
    let _ = writeln!(t, "records          {}", r.n);
    let _ = writeln!(t, "base error rate  {:.4}", r.base_error_rate);
    let _ = writeln!(t, "threshold        {:.6}", r.threshold.threshold);
    let _ = writeln!(t, "{:<16} {:.4} (base-only {:.4})", r.routed.objective, r.routed.f1, r.base_only.f1);
    let _ = writeln!(t, "deferral rate    {:.1}%", r.threshold.deferral_rate * 100.0);
    let _ = writeln!(t, "error precision  {:.4}", r.error_precision);
    let _ = writeln!(t, "error recall     {:.4}", r.error_recall);
    let _ = writeln!(t, "converged        {}", if r.converged { "yes" } else { "no" });
    let _ = writeln!(t, "model            {}", args.model.display());
    let _ = writeln!(t);
    let width = r.coefficients.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("intercept".len());
    let _ = writeln!(t, "{:<width$}  {:>9}", "feature", "weight");
    for (name, w) in &r.coefficients {
        let _ = writeln!(t, "{name:<width$}  {w:>+9.4}");
    }
    let _ = writeln!(t, "{:<width$}  {:>+9.4}", "intercept", r.intercept);
    emit(&TrainOutput { model_path: args.model.display().to_string(), report: r }, t, &args.output)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub objective: String,
    pub n: usize,
    pub threshold: Option<f64>,
    pub cost_model: CostModel,
    pub rows: Vec<SystemReport>,
}

fn eval(args: EvalArgs) -> Result<()> {
    let data = load(&args.data)?;
    let objective = Objective::for_labels(args.objective.into(), &data.label_space)?;
    let cm = cost_model(&args.cost)?;
    let model = args
        .model
        .as_deref()
        .map(|p| DeferralModel::load(p).with_context(|| format!("loading model {}", p.display())))
        .transpose()?;
    if let Some(m) = &model {
        if m.label_space.class_names() != data.label_space.class_names() {
            bail!(
                "model labels {:?} differ from dataset labels {:?}",
                m.label_space.class_names(),
                data.label_space.class_names()
            );
        }
    }

    let all = [
        PolicyArg::BaseOnly,
        PolicyArg::ExpertOnly,
        PolicyArg::Random,
        PolicyArg::Fixed,
        PolicyArg::Learned,
        PolicyArg::Oracle,
    ];
    let wanted: Vec<PolicyArg> = if args.policies.is_empty() {
        all.into_iter().filter(|p| model.is_some() || !matches!(p, PolicyArg::Learned | PolicyArg::Random)).collect()
    } else {
        all.into_iter().filter(|p| args.policies.contains(p)).collect()
    };
    let needs_model = wanted.iter().any(|p| matches!(p, PolicyArg::Learned | PolicyArg::Random));
    let learned = match (&model, needs_model) {
        (Some(m), true) => {
            let mask = Policy::Learned(Arc::new(m.clone())).defer_mask(&data.records)?;
            Some(evaluate_mask(&data.records, &mask, objective, &cm, "learned").map_err(explain)?)
        }
        (None, true) => bail!("the learned and random rows need --model (random matches the learned deferral rate)"),
        _ => None,
    };

    let mut rows = Vec::new();
    for p in wanted {
        match p {
            PolicyArg::BaseOnly => rows.push(evaluate_system(&data.records, &Policy::Never, objective, &cm)?),
            PolicyArg::ExpertOnly => {
                rows.push(evaluate_system(&data.records, &Policy::Always, objective, &cm).map_err(explain)?)
            }
            PolicyArg::Random => {
                let rate = learned.as_ref().map_or(0.0, |l| l.deferral_rate);
                let policy = Policy::Random { rate, seed: seed::derive_seed(args.seed, seed::STREAM_RANDOM_BASELINE) };
                rows.push(evaluate_system(&data.records, &policy, objective, &cm).map_err(explain)?);
            }
            PolicyArg::Fixed => {
                for &theta in &args.theta_grid {
                    rows.push(
                        evaluate_system(&data.records, &Policy::FixedThreshold(theta), objective, &cm)
                            .map_err(explain)?,
                    );
                }
            }
            PolicyArg::Learned => rows.extend(learned.clone()),
            PolicyArg::Oracle => rows.push(evaluate_system(&data.records, &Policy::Oracle, objective, &cm)?),
        }
    }
    let report = EvalReport {
        objective: objective.name().to_string(),
        n: data.records.len(),
        threshold: model.as_ref().map(|m| m.threshold),
        cost_model: cm,
        rows,
    };
    let mut table = format!("{} on {} records", report.objective, report.n);
    if let Some(t) = report.threshold {
        let _ = write!(table, ", learned τ = {t:.6}");
    }
    table.push_str("\n\n");
    table.push_str(&render_table(&report.rows));
    emit(&report, table, &args.output)
}

#[derive(Serialize)]
struct ConsensusReport {
    total: usize,
    kept: usize,
    agreement_rate: f64,
    records_written: Option<usize>,
    missing_from_dataset: usize,
}

fn consensus(args: ConsensusArgs) -> Result<()> {
    let dataset = args
        .dataset
        .as_deref()
        .map(|p| {
            let labels = args.labels.as_deref().map(load_label_space).transpose()?;
            load_dataset(p, labels.as_ref()).with_context(|| format!("loading {}", p.display()))
        })
        .transpose()?;
    let labels: LabelSpace = match (&args.labels, &dataset) {
        (_, Some(d)) => d.label_space.clone(),
        (Some(p), None) => load_label_space(p).with_context(|| format!("reading label space {}", p.display()))?,
        (None, None) => bail!("pass --labels or --dataset so pair labels can be resolved"),
    };
    let pairs = load_consensus_pairs(&args.pairs, &labels)
        .with_context(|| format!("loading pairs {}", args.pairs.display()))?;
    let result = consensus_filter(&pairs)?;

    let mut written = None;
    let mut missing = 0;
    if let Some(path) = &args.kept {
        match &dataset {
            Some(d) => {
                let agreed: HashMap<&str, usize> = result.kept.iter().map(|(id, l)| (id.as_str(), *l)).collect();
                let records: Vec<_> = d
                    .records
                    .iter()
                    .filter_map(|r| {
                        agreed.get(r.id.as_str()).map(|&gold| defer_core::PredictionRecord { gold, ..r.clone() })
                    })
                    .collect();
                missing = result.kept.len() - records.len();
                written = Some(records.len());
                let manifest = DatasetManifest { label_space: labels.clone(), records, provenance: String::new() };
                save_dataset(path, &manifest).with_context(|| format!("writing {}", path.display()))?;
            }
            None => {
                let mut out = std::io::BufWriter::new(
                    std::fs::File::create(path).with_context(|| format!("writing {}", path.display()))?,
                );
                for (id, l) in &result.kept {
                    let line = serde_json::json!({ "id": id, "label": labels.name(*l) });
                    writeln!(out, "{line}")?;
                }
                out.flush()?;
                written = Some(result.kept.len());
            }
        }
    }
    let report = ConsensusReport {
        total: result.total,
        kept: result.kept.len(),
        agreement_rate: result.agreement_rate,
        records_written: written,
        missing_from_dataset: missing,
    };
    let mut table = format!("agreement  {}/{} = {:.2}%\n", report.kept, report.total, report.agreement_rate * 100.0);
    if let Some(n) = written {
        let _ = writeln!(table, "written    {n}");
    }
    if missing > 0 {
        let _ = writeln!(table, "missing    {missing} agreed ids not found in the dataset");
    }
    emit(&report, table, &args.output)
}

#[derive(Debug, Serialize)]
struct CostRow {
    source: String,
    rate: f64,
    relative_cost: f64,
    avg_latency_ms: f64,
}

fn cost(args: CostArgs) -> Result<()> {
    let cm = cost_model(&args.cost)?;
    let mut points: Vec<(String, f64)> = args.rates.iter().map(|&r| ("grid".to_string(), r)).collect();
    if let Some(p) = &args.from_report {
        let raw = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let report: EvalReport =
            serde_json::from_str(&raw).with_context(|| format!("{} is not an eval report", p.display()))?;
        points.extend(report.rows.into_iter().map(|r| (r.policy, r.deferral_rate)));
    }
    if let Some((_, r)) = points.iter().find(|(_, r)| !(0.0..=1.0).contains(r)) {
        bail!("deferral rate {r} outside [0, 1]");
    }
    let rows: Vec<CostRow> = points
        .into_iter()
        .map(|(source, rate)| CostRow {
            source,
            rate,
            relative_cost: cascade_cost(rate, &cm),
            avg_latency_ms: cascade_latency(rate, &cm),
        })
        .collect();
    let width = rows.iter().map(|r| r.source.chars().count()).max().unwrap_or(0).max(6);
    let mut t = format!("{:>7}  {:>7}  {:>10}  Source\n", "LLM%", "Cost", "Latency");
    for r in &rows {
        let _ = writeln!(
            t,
            "{:>6.1}%  {:>6.1}x  {:>8.1}ms  {:<width$}",
            r.rate * 100.0,
            r.relative_cost,
            r.avg_latency_ms,
            r.source
        );
    }
    emit(&rows, t.lines().map(str::trim_end).collect::<Vec<_>>().join("\n") + "\n", &args.output)
}

fn serve_cmd(args: ServeArgs) -> Result<()> {
    let model = DeferralModel::load(&args.model).with_context(|| format!("loading model {}", args.model.display()))?;
    let expert = match &args.expert_url {
        Some(url) => {
            let config = ExpertClientConfig {
                timeout_ms: args.expert_timeout_ms,
                auth_token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
                ..ExpertClientConfig::new(url.clone())
            };
            Some(ExpertClient::new(config)?)
        }
        None => {
            tracing::warn!("no expert endpoint configured; deferrals will fall back to the base model");
            None
        }
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener =
            tokio::net::TcpListener::bind(args.listen).await.with_context(|| format!("binding {}", args.listen))?;
        let addr = listener.local_addr()?;
        eprintln!("listening on http://{addr}");
        tracing::info!(%addr, threshold = model.threshold, "router ready");
        serve(listener, Arc::new(RouterService::new(Some(model), expert)), shutdown_signal()).await?;
        tracing::info!("shut down");
        Ok(())
    })
}

#[derive(Serialize)]
struct SplitReport {
    method: &'static str,
    sizes: [usize; 3],
    files: Vec<String>,
    warnings: Vec<String>,
}

fn split(args: SplitArgs) -> Result<()> {
    let data = load(&args.data)?;
    if args.fractions.len() != 3 {
        bail!("--fractions takes three comma-separated values, got {}", args.fractions.len());
    }
    let f = SplitFractions::new(args.fractions[0], args.fractions[1], args.fractions[2])?;
    let stream = seed::derive_seed(args.seed, seed::STREAM_SPLIT);
    let (method, split) = if args.by_group {
        ("group", group_split(&data.records, f, stream)?)
    } else {
        ("stratified", stratified_split(&data.records, f, stream)?)
    };
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut files = Vec::new();
    for (name, records) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        let path = args.out_dir.join(format!("{name}.jsonl"));
        let manifest = DatasetManifest {
            label_space: data.label_space.clone(),
            records: records.clone(),
            provenance: String::new(),
        };
        save_dataset(&path, &manifest).with_context(|| format!("writing {}", path.display()))?;
        files.push(path.display().to_string());
    }
    for w in &split.warnings {
        tracing::warn!("{w}");
    }
    let report = SplitReport { method, sizes: split.sizes(), files, warnings: split.warnings };
    let table = format!(
        "{} split: train {} / val {} / test {}\n",
        report.method, report.sizes[0], report.sizes[1], report.sizes[2]
    );
    emit(&report, table, &OutputArgs { format: args.format, out: None })
}

fn synth(args: SynthArgs) -> Result<()> {
    let data = generate(&SyntheticConfig { n: args.n, seed: args.seed, ..Default::default() });
    let manifest = DatasetManifest { label_space: data.labels, records: data.records, provenance: String::new() };
    save_dataset(&args.out, &manifest).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(p) = &args.lexicon_out {
        write_json(p, &hedge_lexicon())?;
    }
    eprintln!("wrote {} records to {}", manifest.records.len(), args.out.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, format!("{json}\n")).with_context(|| format!("writing {}", path.display()))
}

//! Subcommand implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use precondgen::corpus::{
    read_jsonl, read_sentences, synth_corpus, write_jsonl, AnnotatedSentence, InfillingInstance,
    JsonlError, RelationKind, SyntheticCorpusSpec,
};
use precondgen::decode::DecodeConfig;
use precondgen::experiment::{
    candidate_sets, distinct_kept_triggers, run_strategy, test_targets, train_models,
    GenerateConfig, TrainConfig, TrainedModels,
};
use precondgen::lm::NGramConfig;
use precondgen::metrics::{
    diversity_report, markdown_table, DiversityReport, ReportConfig, SelfBleuMode,
};
use precondgen::pipeline::{
    CountEmbedder, GenerationMode, PostConfig, RankerConfig, RunRecord, Strategy, ThresholdRule,
};

use crate::args::{
    Command, CompareArgs, DecodeArgs, EvaluateArgs, GenerateArgs, ModeArg, ReportArgs, SelfBleuArg,
    StrategyArg, SynthArgs, TrainArgs,
};
use crate::fsutil::{build_dir_atomic, write_atomic, OutputLock};
use crate::{CmdResult, Failure, Status};

const MAX_LISTED: usize = 10;

pub fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train(&a),
        Command::Generate(a) => generate(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Compare(a) => compare(&a),
    }
}

fn jsonl_bytes<T: Serialize>(records: &[T]) -> CmdResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

fn require_exists(path: &Path, flag: &str) -> CmdResult {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::config(format!(
            "--{flag}: {} does not exist",
            path.display()
        )))
    }
}

fn list_bad(what: &Path, errors: &[String]) -> Failure {
    let mut msg = format!("{} invalid record(s) in {}:", errors.len(), what.display());
    for e in errors.iter().take(MAX_LISTED) {
        msg.push_str("\n  ");
        msg.push_str(e);
    }
    if errors.len() > MAX_LISTED {
        msg.push_str(&format!("\n  ... and {} more", errors.len() - MAX_LISTED));
    }
    Failure::data(msg)
}

fn load_corpus(path: &Path, flag: &str) -> CmdResult<Vec<AnnotatedSentence>> {
    require_exists(path, flag)?;
    read_sentences(path).map_err(|errs| {
        if let [JsonlError::Io(e)] = errs.as_slice() {
            return Failure::config(format!("--{flag}: cannot read {}: {e}", path.display()));
        }
        let msgs: Vec<String> = errs.iter().map(ToString::to_string).collect();
        list_bad(path, &msgs)
    })
}

fn synth(a: &SynthArgs) -> CmdResult {
    let spec = SyntheticCorpusSpec {
        num_target_types: a.targets,
        preconditions_per_target: a.preconditions,
        templates_per_pair: a.templates,
        vocab_size: a.vocab_size,
        seed: a.seed,
    };
    spec.validate().map_err(Failure::config)?;
    let records = synth_corpus(&spec).map_err(Failure::config)?;
    let _lock = OutputLock::acquire(&a.out)?;
    match &a.pretrain_out {
        Some(p) => {
            let _plock = OutputLock::acquire(p)?;
            let (temporal, main): (Vec<_>, Vec<_>) = records
                .into_iter()
                .partition(|r| r.kind == RelationKind::TemporalBefore);
            write_atomic(&a.out, &jsonl_bytes(&main)?)?;
            write_atomic(p, &jsonl_bytes(&temporal)?)?;
            eprintln!(
                "synth: {} records, {} pretraining records",
                main.len(),
                temporal.len()
            );
        }
        None => {
            write_atomic(&a.out, &jsonl_bytes(&records)?)?;
            eprintln!("synth: {} records", records.len());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    seed: u64,
    corpus_records: usize,
    pretrain_records: usize,
    config: &'a TrainConfig<f64>,
}

fn train(a: &TrainArgs) -> CmdResult {
    let config = TrainConfig {
        generator: NGramConfig {
            order: a.order,
            add_k: a.add_k,
            copy_bias: a.gamma,
            pretrain_weight: a.pretrain_weight,
            output_only: !a.count_prompt,
        },
        sampler_add_k: a.sampler_add_k,
        windows: a
            .windows
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
        ranker: RankerConfig {
            epochs: a.epochs,
            learning_rate: a.learning_rate,
            l2: a.l2,
        },
    };
    config
        .validate()
        .map_err(|e| Failure::config(e.to_string()))?;

    let mut records = load_corpus(&a.corpus, "corpus")?;
    let corpus_records = records.len();
    let mut pretrain_records = 0;
    if let Some(p) = &a.pretrain {
        if p.exists() {
            let mut extra = load_corpus(p, "pretrain")?;
            for r in &mut extra {
                r.kind = RelationKind::TemporalBefore;
            }
            pretrain_records = extra.len();
            records.extend(extra);
        } else if a.pretrain_weight > 0.0 {
            return Err(Failure::config(format!(
                "--pretrain: {} does not exist (use --pretrain-weight 0 to train without it)",
                p.display()
            )));
        }
    }
    pretrain_records += records
        .iter()
        .take(corpus_records)
        .filter(|r| r.kind == RelationKind::TemporalBefore)
        .count();

    let _lock = OutputLock::acquire(&a.out)?;
    let models = train_models(&records, &config)?;
    build_dir_atomic(&a.out, |dir| {
        models.save(dir)?;
        let rec = TrainRecord {
            seed: a.seed,
            corpus_records,
            pretrain_records,
            config: &config,
        };
        write_atomic(&dir.join("train.json"), &json_bytes(&rec))
    })?;
    eprintln!(
        "train: {} records ({} pretraining), samplers for windows {:?}",
        records.len(),
        pretrain_records,
        config.windows
    );
    Ok(())
}

fn threshold(s: &str) -> CmdResult<ThresholdRule<f64>> {
    match s {
        "mean+std" => Ok(ThresholdRule::MeanPlusStd),
        "off" => Ok(ThresholdRule::Disabled),
        v => v
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite())
            .map(ThresholdRule::Fixed)
            .ok_or_else(|| {
                Failure::config(format!(
                    "--threshold: expected mean+std, off or a number, got {v:?}"
                ))
            }),
    }
}

fn generate_config(a: &DecodeArgs) -> CmdResult<GenerateConfig<f64>> {
    let decode = DecodeConfig {
        max_len: a.max_len,
        beam_width: a.beam_k,
        nucleus_p: a.nucleus_p,
        penalty: a.lambda,
        seed: a.seed,
        length_norm_alpha: a.length_norm_alpha,
    };
    decode
        .validate()
        .map_err(|e| Failure::config(e.to_string()))?;
    for (flag, v) in [
        ("n-triggers", a.n_triggers),
        ("top-k", a.top_k),
        ("rps-iterations", a.rps_iterations),
    ] {
        if v == 0 {
            return Err(Failure::config(format!("--{flag} must be at least 1")));
        }
    }
    Ok(GenerateConfig {
        decode,
        num_triggers: a.n_triggers,
        rps_iterations: a.rps_iterations,
        post: PostConfig {
            threshold: threshold(&a.threshold)?,
            top_k: a.top_k,
        },
        mode: match a.generation_mode {
            ModeArg::Nucleus => GenerationMode::Nucleus,
            ModeArg::Beam => GenerationMode::Beam,
        },
        seed: a.seed,
    })
}

fn strategy_of(s: StrategyArg) -> Strategy {
    match s {
        StrategyArg::Beam => Strategy::Beam,
        StrategyArg::Rps => Strategy::Rps,
        StrategyArg::RpsPost => Strategy::RpsPost,
        StrategyArg::Dip => Strategy::Dip,
    }
}

fn run_file_name(strategy: Strategy, window: Option<usize>) -> String {
    match window {
        Some(w) => format!("{}-w{w}.jsonl", strategy.name()),
        None => format!("{}.jsonl", strategy.name()),
    }
}

/// Everything a generation run needs, loaded once.
struct Session {
    models: TrainedModels<f64>,
    embedder: CountEmbedder<f64>,
    targets: Vec<(String, InfillingInstance)>,
    config: GenerateConfig<f64>,
    pool: rayon::ThreadPool,
}

impl Session {
    fn open(a: &DecodeArgs) -> CmdResult<Self> {
        let config = generate_config(a)?;
        require_exists(&a.models, "models")?;
        let models = TrainedModels::<f64>::load(&a.models)?;
        let embedder = models.embedder()?;
        let corpus = load_corpus(&a.corpus, "corpus")?;
        let targets = test_targets(&corpus)?;
        if targets.is_empty() {
            return Err(Failure::data(format!(
                "{} has no test-split targets",
                a.corpus.display()
            )));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(a.threads)
            .build()
            .map_err(|e| Failure::new(Status::Internal, e))?;
        Ok(Session {
            models,
            embedder,
            targets,
            config,
            pool,
        })
    }

    fn run(&self, strategy: Strategy, window: usize) -> CmdResult<Vec<RunRecord>> {
        if strategy == Strategy::Dip && !self.models.samplers.contains_key(&window) {
            return Err(Failure::config(format!(
                "--window {window}: no sampler trained for this window (trained: {:?})",
                self.models.samplers.keys().collect::<Vec<_>>()
            )));
        }
        let records = self.pool.install(|| {
            self.targets
                .par_iter()
                .map(|(id, inst)| {
                    run_strategy(
                        &self.models,
                        &self.embedder,
                        strategy,
                        window,
                        id,
                        inst,
                        &self.config,
                    )
                })
                .collect::<Result<Vec<_>, _>>()
        })?;
        Ok(records)
    }
}

fn generate(a: &GenerateArgs) -> CmdResult {
    let _lock = OutputLock::acquire(&a.out)?;
    let session = Session::open(&a.decode)?;
    let strategy = strategy_of(a.strategy);
    let records = session.run(strategy, a.window)?;
    let window = (strategy == Strategy::Dip).then_some(a.window);
    let path = a.out.join(run_file_name(strategy, window));
    write_atomic(&path, &jsonl_bytes(&records)?)?;
    eprintln!("generate: {} records -> {}", records.len(), path.display());
    Ok(())
}

type GroupKey = (Strategy, Option<usize>);

fn run_files(paths: &[PathBuf]) -> CmdResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        require_exists(p, "runs")?;
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()?;
            entries.retain(|e| e.extension().is_some_and(|x| x == "jsonl"));
            entries.sort();
            out.extend(entries);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Failure::config("--runs: no run-record files found"));
    }
    Ok(out)
}

fn read_runs(files: &[PathBuf]) -> CmdResult<BTreeMap<GroupKey, Vec<RunRecord>>> {
    let mut groups: BTreeMap<GroupKey, Vec<RunRecord>> = BTreeMap::new();
    let mut bad = Vec::new();
    for f in files {
        let file = fs::File::open(f)?;
        for rec in read_jsonl::<RunRecord, _>(BufReader::new(file))? {
            match rec {
                Ok(r) => groups.entry((r.strategy, r.window)).or_default().push(r),
                Err(e) => bad.push(format!("{}: {e}", f.display())),
            }
        }
    }
    for ((s, w), recs) in &groups {
        let mut seen = BTreeSet::new();
        for r in recs {
            if !seen.insert(r.id.as_str()) {
                bad.push(format!(
                    "duplicate record for target {} under {}",
                    r.id,
                    label(*s, *w, false)
                ));
            }
        }
    }
    if !bad.is_empty() {
        return Err(list_bad(Path::new("run records"), &bad));
    }
    Ok(groups)
}

fn window_label(w: Option<usize>) -> String {
    match w {
        Some(0) | None => "trigger only".to_owned(),
        Some(w) => format!("±{w} tokens"),
    }
}

fn label(strategy: Strategy, window: Option<usize>, ablation: bool) -> String {
    match strategy {
        Strategy::Beam => "Beam".to_owned(),
        Strategy::Rps => "RPS".to_owned(),
        Strategy::RpsPost => "RPS+Post-proc".to_owned(),
        Strategy::Dip if ablation => format!("DiP ({})", window_label(window)),
        Strategy::Dip => "DiP".to_owned(),
    }
}

#[derive(Serialize)]
struct ReportRow {
    label: String,
    strategy: Strategy,
    window: Option<usize>,
    mean_candidates: f64,
    mean_distinct_triggers: f64,
    report: DiversityReport<f64>,
}

#[derive(Serialize)]
struct ReportFile {
    rows: Vec<ReportRow>,
}

fn report_config(a: &ReportArgs) -> ReportConfig<f64> {
    ReportConfig {
        self_bleu_mode: match a.self_bleu_mode {
            SelfBleuArg::Pairwise => SelfBleuMode::Pairwise,
            SelfBleuArg::VsRest => SelfBleuMode::VsRest,
        },
        allow_ragged: a.allow_ragged,
        ..ReportConfig::default()
    }
}

fn build_report(
    groups: &BTreeMap<GroupKey, Vec<RunRecord>>,
    embedder: &CountEmbedder<f64>,
    a: &ReportArgs,
) -> CmdResult<(Vec<u8>, Vec<u8>)> {
    let cfg = report_config(a);
    let mut rows = Vec::new();
    for (&(strategy, window), recs) in groups {
        let report = diversity_report(&candidate_sets(recs), embedder, &cfg).map_err(|e| {
            Failure::new(
                Status::EvalInput,
                anyhow::anyhow!(
                    "{}: {e}{}",
                    label(strategy, window, true),
                    if cfg.allow_ragged {
                        ""
                    } else {
                        " (pass --allow-ragged to score anyway)"
                    }
                ),
            )
        })?;
        let n = recs.len() as f64;
        rows.push(ReportRow {
            label: label(strategy, window, false),
            strategy,
            window,
            mean_candidates: recs.iter().map(|r| r.kept_texts().len()).sum::<usize>() as f64 / n,
            mean_distinct_triggers: recs.iter().map(distinct_kept_triggers).sum::<usize>() as f64
                / n,
            report,
        });
    }
    let dip_windows: Vec<usize> = rows
        .iter()
        .filter(|r| r.strategy == Strategy::Dip)
        .filter_map(|r| r.window)
        .collect();
    let main_dip = dip_windows.first().copied();

    let mut md = String::from("## Diversity\n\n");
    let main: Vec<(String, &DiversityReport<f64>)> = rows
        .iter()
        .filter(|r| r.strategy != Strategy::Dip || r.window == main_dip)
        .map(|r| {
            let l = if r.strategy == Strategy::Dip && dip_windows.len() > 1 {
                format!("DiP ({})", window_label(r.window))
            } else {
                r.label.clone()
            };
            (l, &r.report)
        })
        .collect();
    md.push_str(&markdown_table(&main));
    if dip_windows.len() > 1 {
        md.push_str("\n## Sampler context\n\n");
        let ablation: Vec<(String, &DiversityReport<f64>)> = rows
            .iter()
            .filter(|r| r.strategy == Strategy::Dip)
            .map(|r| (capitalize(&window_label(r.window)), &r.report))
            .collect();
        md.push_str(&markdown_table(&ablation));
    }
    for r in &mut rows {
        if r.strategy == Strategy::Dip && dip_windows.len() > 1 {
            r.label = label(r.strategy, r.window, true);
        }
    }
    Ok((json_bytes(&ReportFile { rows }), md.into_bytes()))
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn write_report(out: &Path, json: &[u8], md: &[u8]) -> CmdResult {
    write_atomic(&out.join("report.json"), json)?;
    write_atomic(&out.join("table.md"), md)
}

fn evaluate(a: &EvaluateArgs) -> CmdResult {
    let _lock = OutputLock::acquire(&a.out)?;
    let files = run_files(&a.runs)?;
    require_exists(&a.models, "models")?;
    let groups = read_runs(&files)?;
    let models = TrainedModels::<f64>::load(&a.models)?;
    let (json, md) = build_report(&groups, &models.embedder()?, &a.report)?;
    write_report(&a.out, &json, &md)?;
    print!("{}", String::from_utf8_lossy(&md));
    Ok(())
}

fn compare(a: &CompareArgs) -> CmdResult {
    let _lock = OutputLock::acquire(&a.out)?;
    let session = Session::open(&a.decode)?;
    let mut groups: BTreeMap<GroupKey, Vec<RunRecord>> = BTreeMap::new();
    for strategy in [Strategy::Beam, Strategy::Rps, Strategy::RpsPost] {
        groups.insert((strategy, None), session.run(strategy, 0)?);
    }
    let windows: Vec<usize> = session.models.samplers.keys().copied().collect();
    for w in windows {
        groups.insert((Strategy::Dip, Some(w)), session.run(Strategy::Dip, w)?);
    }
    for ((s, w), recs) in &groups {
        write_atomic(
            &a.out.join("runs").join(run_file_name(*s, *w)),
            &jsonl_bytes(recs)?,
        )?;
    }
    let (json, md) = build_report(&groups, &session.embedder, &a.report)?;
    write_report(&a.out, &json, &md)?;
    print!("{}", String::from_utf8_lossy(&md));
    Ok(())
}

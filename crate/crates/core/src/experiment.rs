//! End-to-end experiment plumbing: model training from an annotated corpus,
//! on-disk model sets, test targets and per-target strategy runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    assign_splits, build_infilling_instance, build_trigger_pair, AnnotatedSentence,
    InfillingInstance, RelationKind, Split, SAMPLER_WINDOWS,
};
use crate::decode::{rng_for, DecodeConfig};
use crate::lm::{load, persist, train_ngram, AnyModel, LmError, NGramConfig, NGramModel};
use crate::pipeline::{
    run_beam, run_dip, run_rps, run_rps_plus_post, train_ranker, CountEmbedder, DipConfig,
    DipModels, GenerationMode, PipelineError, PostConfig, RankerConfig, RankerModel, RpsConfig,
    RunRecord, SamplerConfig, Strategy,
};
use crate::scalar::Scalar;
use crate::vocab::Vocab;

const TRAIN_MANIFEST: &str = "models.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig<T> {
    /// Generator settings; the infilling baseline uses the same settings with
    /// the copy bias switched off.
    pub generator: NGramConfig<T>,
    pub sampler_add_k: T,
    pub windows: Vec<usize>,
    pub ranker: RankerConfig<T>,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            generator: NGramConfig {
                output_only: true,
                ..NGramConfig::default()
            },
            sampler_add_k: T::from_f64_lossy(0.1),
            windows: SAMPLER_WINDOWS.to_vec(),
            ranker: RankerConfig::default(),
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.generator.validate()?;
        if self.windows.is_empty() {
            return Err(PipelineError::Config(
                "at least one sampler window is required".into(),
            ));
        }
        if let Some(w) = self.windows.iter().find(|w| !SAMPLER_WINDOWS.contains(w)) {
            return Err(PipelineError::Config(format!(
                "sampler window {w} is not one of 0, 3, 5"
            )));
        }
        if !(self.sampler_add_k >= T::zero()) || !self.sampler_add_k.is_finite() {
            return Err(PipelineError::Config(
                "sampler_add_k must be a finite non-negative number".into(),
            ));
        }
        Ok(())
    }

    /// Sampler order: long enough that the context reaches back to the
    /// target trigger past `<sep>` and the right-hand window.
    pub fn sampler_order(window: usize) -> usize {
        window + 3
    }
}

/// Every model an experiment needs.
#[derive(Debug, Clone)]
pub struct TrainedModels<T> {
    pub samplers: BTreeMap<usize, NGramModel<T>>,
    /// Control-code generator used by DiP.
    pub generator: NGramModel<T>,
    /// Plain infilling model used by the beam and RPS baselines.
    pub infill: NGramModel<T>,
    pub ranker: RankerModel<T>,
}

fn is_gold(r: &AnnotatedSentence) -> bool {
    r.label.is_none() && r.precondition.is_some()
}

/// Trains all models on the train split of `records`. Temporal-before records
/// from the train split act as the pretraining corpus.
pub fn train_models<T: Scalar>(
    records: &[AnnotatedSentence],
    config: &TrainConfig<T>,
) -> Result<TrainedModels<T>, PipelineError> {
    config.validate()?;
    for r in records {
        r.validate()?;
    }
    let splits = assign_splits(records);
    let train: Vec<&AnnotatedSentence> = records
        .iter()
        .zip(&splits)
        .filter(|(_, s)| **s == Split::Train)
        .map(|(r, _)| r)
        .collect();
    let finetune: Vec<&AnnotatedSentence> = train
        .iter()
        .copied()
        .filter(|r| r.kind == RelationKind::Precondition && is_gold(r))
        .collect();
    let pretrain: Vec<&AnnotatedSentence> = train
        .iter()
        .copied()
        .filter(|r| r.kind == RelationKind::TemporalBefore && is_gold(r))
        .collect();
    if finetune.is_empty() {
        return Err(PipelineError::Training(
            "train split holds no precondition records".into(),
        ));
    }

    // Closed vocabulary over every token type in the corpus, so inference on
    // held-out targets never meets an unknown word.
    let vocab = Vocab::from_sequences(records.iter().map(|r| r.tokens.as_slice()));

    let seqs = |rs: &[&AnnotatedSentence], code: bool| -> Result<Vec<Vec<String>>, PipelineError> {
        rs.iter()
            .map(|r| Ok(build_infilling_instance(r, code)?.training_sequence()))
            .collect()
    };
    let generator = train_ngram(
        vocab.clone(),
        &seqs(&pretrain, true)?,
        &seqs(&finetune, true)?,
        config.generator,
    )?;
    let infill_cfg = NGramConfig {
        copy_bias: T::zero(),
        ..config.generator
    };
    let infill = train_ngram(
        vocab.clone(),
        &seqs(&pretrain, false)?,
        &seqs(&finetune, false)?,
        infill_cfg,
    )?;

    let mut samplers = BTreeMap::new();
    for &w in &config.windows {
        let pairs = |rs: &[&AnnotatedSentence]| -> Result<Vec<Vec<String>>, PipelineError> {
            rs.iter()
                .map(|r| Ok(build_trigger_pair(r, w)?.training_sequence()))
                .collect()
        };
        let cfg = NGramConfig {
            order: TrainConfig::<T>::sampler_order(w),
            add_k: config.sampler_add_k,
            copy_bias: T::zero(),
            pretrain_weight: config.generator.pretrain_weight,
            output_only: config.generator.output_only,
        };
        samplers.insert(
            w,
            train_ngram(vocab.clone(), &pairs(&pretrain)?, &pairs(&finetune)?, cfg)?,
        );
    }

    let labelled: Vec<AnnotatedSentence> = train
        .iter()
        .filter(|r| r.label.is_some())
        .map(|r| (*r).clone())
        .collect();
    let ranker = train_ranker(&labelled, &config.ranker)?;
    Ok(TrainedModels {
        samplers,
        generator,
        infill,
        ranker,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ModelSetManifest {
    windows: Vec<usize>,
    scalar: String,
}

fn sampler_dir(dir: &Path, w: usize) -> PathBuf {
    dir.join(format!("sampler_w{w}"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| {
        PipelineError::Lm(LmError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl<T: Scalar> TrainedModels<T> {
    /// Writes `sampler_w{w}/`, `generator/`, `infill/`, `ranker/` and an
    /// index file under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (w, m) in &self.samplers {
            persist(&AnyModel::NGram(m.clone()), &sampler_dir(dir, *w))?;
        }
        persist(
            &AnyModel::NGram(self.generator.clone()),
            &dir.join("generator"),
        )?;
        persist(&AnyModel::NGram(self.infill.clone()), &dir.join("infill"))?;
        self.ranker.save(&dir.join("ranker"))?;
        let manifest = ModelSetManifest {
            windows: self.samplers.keys().copied().collect(),
            scalar: T::NAME.to_owned(),
        };
        let path = dir.join(TRAIN_MANIFEST);
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, body + "\n").map_err(io_err(&path))
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(TRAIN_MANIFEST);
        let body = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: ModelSetManifest = serde_json::from_str(&body).map_err(|e| {
            PipelineError::Lm(LmError::Format {
                path: path.clone(),
                message: e.to_string(),
            })
        })?;
        let ngram = |sub: PathBuf| -> Result<NGramModel<T>, PipelineError> {
            match load::<T>(&sub)? {
                AnyModel::NGram(m) => Ok(m),
                AnyModel::Table(_) => Err(PipelineError::Lm(LmError::Format {
                    path: sub,
                    message: "expected an n-gram model".into(),
                })),
            }
        };
        let mut samplers = BTreeMap::new();
        for w in manifest.windows {
            samplers.insert(w, ngram(sampler_dir(dir, w))?);
        }
        Ok(TrainedModels {
            samplers,
            generator: ngram(dir.join("generator"))?,
            infill: ngram(dir.join("infill"))?,
            ranker: RankerModel::load(&dir.join("ranker"))?,
        })
    }

    pub fn embedder(&self) -> Result<CountEmbedder<T>, PipelineError> {
        CountEmbedder::from_ngram(&self.generator)
    }
}

/// Inference instances for the test-split precondition records, in corpus
/// order.
pub fn test_targets(
    records: &[AnnotatedSentence],
) -> Result<Vec<(String, InfillingInstance)>, PipelineError> {
    let splits = assign_splits(records);
    records
        .iter()
        .zip(&splits)
        .filter(|(r, s)| **s == Split::Test && r.kind == RelationKind::Precondition && is_gold(r))
        .map(|(r, _)| {
            Ok((
                r.id.clone(),
                build_infilling_instance(r, false)?.for_inference(),
            ))
        })
        .collect()
}

/// Decoding settings shared by all strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig<T> {
    pub decode: DecodeConfig<T>,
    pub num_triggers: usize,
    pub rps_iterations: usize,
    pub post: PostConfig<T>,
    pub mode: GenerationMode,
    pub seed: u64,
}

impl<T: Scalar> Default for GenerateConfig<T> {
    fn default() -> Self {
        GenerateConfig {
            decode: DecodeConfig::default(),
            num_triggers: SamplerConfig::default().num_triggers,
            rps_iterations: RpsConfig::<T>::default().num_iterations,
            post: PostConfig::default(),
            mode: GenerationMode::Nucleus,
            seed: 0,
        }
    }
}

/// RNG label of one (strategy, window, target) run. Each run owns its stream,
/// so results do not depend on the order runs are executed in.
pub fn run_label(strategy: Strategy, window: Option<usize>, id: &str) -> String {
    match window {
        Some(w) => format!("{}-w{w}/{id}", strategy.name()),
        None => format!("{}/{id}", strategy.name()),
    }
}

/// Runs one strategy on one target. `window` selects the DiP sampler and is
/// ignored by the other strategies.
pub fn run_strategy<T: Scalar>(
    models: &TrainedModels<T>,
    embedder: &CountEmbedder<T>,
    strategy: Strategy,
    window: usize,
    id: &str,
    instance: &InfillingInstance,
    config: &GenerateConfig<T>,
) -> Result<RunRecord, PipelineError> {
    let window = (strategy == Strategy::Dip).then_some(window);
    let mut rng = rng_for(config.seed, &run_label(strategy, window, id));
    let decode = DecodeConfig {
        seed: config.seed,
        ..config.decode
    };
    let rps = RpsConfig {
        decode,
        num_iterations: config.rps_iterations,
    };
    let out = match strategy {
        Strategy::Beam => run_beam(&models.infill, instance, &decode)?,
        Strategy::Rps => run_rps(&models.infill, instance, &rps, &mut rng)?,
        Strategy::RpsPost => run_rps_plus_post(
            &models.infill,
            &models.ranker,
            embedder,
            instance,
            &rps,
            &config.post,
            &mut rng,
        )?,
        Strategy::Dip => {
            let w = window.expect("set for DiP");
            let sampler = models.samplers.get(&w).ok_or_else(|| {
                PipelineError::Config(format!("no sampler trained for window {w}"))
            })?;
            let dip = DipConfig {
                sampler: SamplerConfig {
                    window: w,
                    num_triggers: config.num_triggers,
                },
                decode,
                mode: config.mode,
                post: config.post,
            };
            let dm = DipModels {
                sampler,
                generator: &models.generator,
                scorer: &models.ranker,
                embedder,
            };
            run_dip(&dm, instance, &dip, &mut rng)?
        }
    };
    Ok(RunRecord::from_output(id, strategy, window, &out))
}

/// Distinct triggers among the kept candidates that actually contain their
/// trigger.
pub fn distinct_kept_triggers(record: &RunRecord) -> usize {
    record
        .candidates
        .iter()
        .filter(|c| c.kept && !c.trigger.is_empty() && c.text.contains(&c.trigger))
        .map(|c| c.trigger.as_str())
        .collect::<BTreeSet<_>>()
        .len()
}

/// Kept clauses of each record, keyed by target id, for the diversity report.
pub fn candidate_sets(records: &[RunRecord]) -> Vec<(String, Vec<Vec<String>>)> {
    records
        .iter()
        .map(|r| {
            (
                r.id.clone(),
                r.kept_texts().into_iter().map(<[String]>::to_vec).collect(),
            )
        })
        .collect()
}

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::corpus::SAMPLER_WINDOWS;
use crate::lm::{LmError, SequenceModel};
use crate::scalar::Scalar;
use crate::vocab::SEP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Context tokens kept on each side of the target trigger.
    pub window: usize,
    pub num_triggers: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            window: 0,
            num_triggers: 20,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !SAMPLER_WINDOWS.contains(&self.window) {
            return Err(PipelineError::Config(format!(
                "sampler window {} is not one of 0, 3, 5",
                self.window
            )));
        }
        if self.num_triggers == 0 {
            return Err(PipelineError::Config(
                "num_triggers must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Ranked trigger list from the event sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSample<T> {
    pub triggers: Vec<(String, T)>,
    /// Fewer than the requested number of triggers had non-zero probability.
    pub shortfall: bool,
}

impl<T> TriggerSample<T> {
    pub fn words(&self) -> Vec<String> {
        self.triggers.iter().map(|(w, _)| w.clone()).collect()
    }
}

/// Top `num_triggers` non-special tokens following `reduced_context <sep>`.
pub fn sample_triggers<T, M>(
    sampler: &M,
    reduced_context: &[String],
    config: &SamplerConfig,
) -> Result<TriggerSample<T>, PipelineError>
where
    T: Scalar,
    M: SequenceModel<T> + ?Sized,
{
    config.validate()?;
    let vocab = sampler.vocab();
    let mut prompt = vocab.encode(reduced_context).map_err(LmError::from)?;
    prompt.push(vocab.id(SEP).map_err(LmError::from)?);
    let dist = sampler.next_dist(&prompt)?;
    let triggers: Vec<(String, T)> = dist
        .ranked()
        .into_iter()
        .filter(|(t, _)| !t.is_special())
        .take(config.num_triggers)
        .map(|(t, p)| Ok((vocab.token(t)?.to_owned(), p)))
        .collect::<Result<_, crate::vocab::VocabError>>()
        .map_err(LmError::from)?;
    Ok(TriggerSample {
        shortfall: triggers.len() < config.num_triggers,
        triggers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{ExplicitTableModel, TableBuilder};

    fn fixture() -> ExplicitTableModel<f64> {
        TableBuilder::new(1)
            .entry(
                &["<sep>"],
                &[
                    ("took", 0.4),
                    ("lost", 0.3),
                    ("began", 0.2),
                    ("came", 0.05),
                    ("<eos>", 0.05),
                ],
            )
            .entry(&["rebuild"], &[("<sep>", 1.0)])
            .build()
            .unwrap()
    }

    fn ctx() -> Vec<String> {
        vec!["rebuild".into()]
    }

    #[test]
    fn top_two() {
        let cfg = SamplerConfig {
            window: 0,
            num_triggers: 2,
        };
        let s = sample_triggers(&fixture(), &ctx(), &cfg).unwrap();
        assert_eq!(s.words(), vec!["took", "lost"]);
        assert!(!s.shortfall);
    }

    #[test]
    fn large_n_returns_all_nonspecial_in_order() {
        let cfg = SamplerConfig {
            window: 0,
            num_triggers: 50,
        };
        let s = sample_triggers(&fixture(), &ctx(), &cfg).unwrap();
        assert_eq!(s.words(), vec!["took", "lost", "began", "came"]);
        assert!(s.shortfall);
        assert_eq!(s.triggers[0].1, 0.4);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SamplerConfig {
            window: 2,
            num_triggers: 5,
        };
        assert!(matches!(
            sample_triggers(&fixture(), &ctx(), &cfg),
            Err(PipelineError::Config(_))
        ));
    }
}

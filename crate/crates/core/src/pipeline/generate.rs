use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::candidate::{Candidate, Origin};
use crate::corpus::InfillingInstance;
use crate::decode::{beam_search, sample_continuation, DecodeConfig};
use crate::lm::{sequence_logprob, LmError, SequenceModel};
use crate::scalar::Scalar;
use crate::vocab::EOS_ID;

/// How the generator decodes one clause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    #[default]
    Nucleus,
    /// Best hypothesis of a beam search.
    Beam,
}

/// One clause for `instance` steered by the `<E> trigger` control code.
pub fn generate_candidate<T, M, R>(
    generator: &M,
    instance: &InfillingInstance,
    trigger: &str,
    config: &DecodeConfig<T>,
    mode: GenerationMode,
    rng: &mut R,
) -> Result<Candidate<T>, PipelineError>
where
    T: Scalar,
    M: SequenceModel<T> + ?Sized,
    R: Rng + ?Sized,
{
    if let Some(code) = instance.control_code() {
        return Err(PipelineError::Config(format!(
            "instance already carries control code {code:?}"
        )));
    }
    let vocab = generator.vocab();
    let prompt = vocab
        .encode(&instance.with_control_code(trigger).prompt())
        .map_err(LmError::from)?;
    let (tokens, ended, lm_logprob) = match mode {
        GenerationMode::Nucleus => {
            let s = sample_continuation(generator, &prompt, config, rng, None)?;
            let mut scored = s.tokens.clone();
            if s.ended {
                scored.push(EOS_ID);
            }
            let lp = sequence_logprob(generator, &prompt, &scored)?;
            (s.tokens, s.ended, lp)
        }
        GenerationMode::Beam => {
            let best = beam_search(generator, &prompt, config)?
                .into_iter()
                .next()
                .ok_or_else(|| PipelineError::Config("beam search returned nothing".into()))?;
            (best.tokens, best.ended, best.logprob)
        }
    };
    let text = vocab.decode(&tokens).map_err(LmError::from)?;
    Ok(Candidate::new(
        Origin::Dip,
        Some(trigger.to_owned()),
        text,
        lm_logprob,
        ended,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::rng_for;
    use crate::lm::{ExplicitTableModel, TableBuilder};

    fn forced() -> ExplicitTableModel<f64> {
        TableBuilder::new(1)
            .entry(&["<sep>"], &[("<pre>", 1.0)])
            .entry(&["<pre>"], &[("hired", 0.7), ("fired", 0.3)])
            .entry(&["hired"], &[("</pre>", 1.0)])
            .entry(&["fired"], &[("</pre>", 1.0)])
            .entry(&["</pre>"], &[("staff", 1.0)])
            .entry(&["staff"], &[("<eos>", 1.0)])
            .entry(&["x"], &[("<E>", 1.0)])
            .build()
            .unwrap()
    }

    fn instance() -> InfillingInstance {
        InfillingInstance {
            input_tokens: vec!["x".into()],
            output_tokens: vec![],
        }
    }

    #[test]
    fn beam_mode_copies_forced_path() {
        let c = generate_candidate(
            &forced(),
            &instance(),
            "hired",
            &DecodeConfig::default(),
            GenerationMode::Beam,
            &mut rng_for(0, "g"),
        )
        .unwrap();
        assert_eq!(c.text, vec!["<pre>", "hired", "</pre>", "staff"]);
        assert!(c.trigger_included() && !c.is_malformed());
        assert!((c.lm_logprob - 0.7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_seeded() {
        let run = |seed| {
            generate_candidate(
                &forced(),
                &instance(),
                "fired",
                &DecodeConfig::default(),
                GenerationMode::Nucleus,
                &mut rng_for(seed, "g"),
            )
            .unwrap()
        };
        assert_eq!(run(4), run(4));
        assert_eq!(run(4).trigger.as_deref(), Some("fired"));
    }

    #[test]
    fn refuses_existing_control_code() {
        let inst = instance().with_control_code("hired");
        assert!(generate_candidate(
            &forced(),
            &inst,
            "hired",
            &DecodeConfig::default(),
            GenerationMode::Beam,
            &mut rng_for(0, "g"),
        )
        .is_err());
    }
}

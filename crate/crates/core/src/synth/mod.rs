//! Synthetic speaker populations with a known covariance structure, plus
//! brute-force reference implementations in [`oracle`].
//!
//! Speaker means are drawn as `m_s ~ N(0, diag(between))` and utterances as
//! `x = m_s + ε` with `ε ~ N(0, diag(within))`. Normals come from Box–Muller
//! over a ChaCha8 stream seeded with the config seed, so a seed pins the
//! output bytes on every platform.

pub mod oracle;

use std::collections::BTreeSet;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::embeddings::{Embedding, EmbeddingSet};
use crate::error::{Error, Result};
use crate::eval::{Label, Trial, TrialList};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationConfig {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub dim: usize,
    /// Per-dimension variance of speaker means.
    pub between: Vec<f64>,
    /// Per-dimension variance of utterance noise.
    pub within: Vec<f64>,
    pub seed: u64,
    /// Rotate every vector by a seeded random orthogonal matrix.
    pub mixing: bool,
}

impl PopulationConfig {
    /// Variances `between_value` on the first `planted` dimensions and 0
    /// elsewhere, `within_value` everywhere.
    pub fn planted(
        n_speakers: usize,
        utts_per_speaker: usize,
        dim: usize,
        planted: usize,
        between_value: f64,
        within_value: f64,
        seed: u64,
    ) -> Self {
        let between = (0..dim)
            .map(|j| if j < planted { between_value } else { 0.0 })
            .collect();
        PopulationConfig {
            n_speakers,
            utts_per_speaker,
            dim,
            between,
            within: vec![within_value; dim],
            seed,
            mixing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0 || self.utts_per_speaker == 0 || self.dim == 0 {
            return Err(Error::Invalid(
                "n_speakers, utts_per_speaker and dim must all be at least 1".into(),
            ));
        }
        for (name, v) in [("between", &self.between), ("within", &self.within)] {
            if v.len() != self.dim {
                return Err(Error::Invalid(format!(
                    "{name} has {} entries, dim is {}",
                    v.len(),
                    self.dim
                )));
            }
            if v.iter().any(|&x| !x.is_finite() || x < 0.0) {
                return Err(Error::Invalid(format!("{name} variances must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Parses the flat `key=value` form:
    ///
    /// ```text
    /// n_speakers=40
    /// utts_per_speaker=20
    /// dim=32
    /// between=0.9x8,0.0x24
    /// within=0.1x32
    /// seed=7
    /// mixing=false
    /// ```
    ///
    /// `#` starts a comment. Variance lists are comma-separated
    /// `value` or `value x count` items.
    pub fn parse(text: &str) -> Result<Self> {
        let mut n_speakers = None;
        let mut utts = None;
        let mut dim = None;
        let mut between = None;
        let mut within = None;
        let mut seed = None;
        let mut mixing = false;
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |why: String| Error::Invalid(format!("config line {}: {why}", k + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let count = || value.parse::<usize>().map_err(|_| bad(format!("'{value}' is not a count")));
            match key {
                "n_speakers" => n_speakers = Some(count()?),
                "utts_per_speaker" => utts = Some(count()?),
                "dim" => dim = Some(count()?),
                "between" => between = Some(parse_run_length(value).map_err(|e| bad(e.to_string()))?),
                "within" => within = Some(parse_run_length(value).map_err(|e| bad(e.to_string()))?),
                "seed" => {
                    seed = Some(value.parse::<u64>().map_err(|_| bad(format!("'{value}' is not a u64 seed")))?)
                }
                "mixing" => {
                    mixing = value
                        .parse::<bool>()
                        .map_err(|_| bad(format!("'{value}' is not true/false")))?
                }
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }
        let missing = |k: &str| Error::Invalid(format!("config is missing '{k}'"));
        let config = PopulationConfig {
            n_speakers: n_speakers.ok_or_else(|| missing("n_speakers"))?,
            utts_per_speaker: utts.ok_or_else(|| missing("utts_per_speaker"))?,
            dim: dim.ok_or_else(|| missing("dim"))?,
            between: between.ok_or_else(|| missing("between"))?,
            within: within.ok_or_else(|| missing("within"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            mixing,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }
}

/// Expands `0.9x8,0.0x24` into 32 values.
pub fn parse_run_length(s: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for item in s.split(',') {
        let item = item.trim();
        let (value, count) = match item.rsplit_once('x') {
            Some((v, c)) => (
                v.trim(),
                c.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Invalid(format!("bad repeat count in '{item}'")))?,
            ),
            None => (item, 1),
        };
        let value = value
            .parse::<f64>()
            .map_err(|_| Error::Invalid(format!("bad value in '{item}'")))?;
        out.extend(std::iter::repeat_n(value, count));
    }
    Ok(out)
}

/// Standard normal draws by Box–Muller.
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        GaussianStream { rng, spare: None }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_index(&mut self, n: usize) -> usize {
        // Rejection sampling keeps the draw unbiased.
        let n64 = n as u64;
        let zone = u64::MAX - u64::MAX % n64;
        loop {
            let r = self.rng.next_u64();
            if r < zone {
                return (r % n64) as usize;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

const DATA_STREAM: u64 = 0;
const MIXING_STREAM: u64 = 1;
const TRIAL_STREAM: u64 = 2;

/// The orthogonal mixing matrix applied when `config.mixing` is set:
/// Gram–Schmidt on a seeded Gaussian matrix.
pub fn mixing_matrix(config: &PopulationConfig) -> Option<Matrix> {
    if !config.mixing {
        return None;
    }
    let d = config.dim;
    let mut g = GaussianStream::new(config.seed, MIXING_STREAM);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| g.standard_normal()).collect();
        for _ in 0..2 {
            for c in &cols {
                let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|a| *a /= n);
            cols.push(v);
        }
    }
    let mut q = Matrix::zeros(d, d);
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            q[(i, j)] = v;
        }
    }
    Some(q)
}

/// Draws a population. Speaker `k` is `spk<k>` and its utterance `u` is
/// `spk<k>_utt<u>` (both 0-based), listed speaker by speaker.
pub fn generate(config: &PopulationConfig) -> Result<EmbeddingSet> {
    config.validate()?;
    let d = config.dim;
    let between_sd: Vec<f64> = config.between.iter().map(|v| v.sqrt()).collect();
    let within_sd: Vec<f64> = config.within.iter().map(|v| v.sqrt()).collect();
    let mixing = mixing_matrix(config);
    let mut g = GaussianStream::new(config.seed, DATA_STREAM);
    let mut set = EmbeddingSet::new(d)?;
    for k in 0..config.n_speakers {
        let mean: Vec<f64> = between_sd.iter().map(|s| s * g.standard_normal()).collect();
        for u in 0..config.utts_per_speaker {
            let mut x: Vec<f64> = mean
                .iter()
                .zip(&within_sd)
                .map(|(m, s)| m + s * g.standard_normal())
                .collect();
            if let Some(q) = &mixing {
                x = q.mul_vec(&x)?;
            }
            set.push(Embedding {
                utt_id: format!("spk{k}_utt{u}"),
                spk_id: format!("spk{k}"),
                vector: x,
            })?;
        }
    }
    Ok(set)
}

/// Splits each speaker's utterances: the first `per_speaker` (in set order)
/// go to the enrollment side, the rest to the test side.
pub fn split_enrollment(set: &EmbeddingSet, per_speaker: usize) -> Result<(EmbeddingSet, EmbeddingSet)> {
    let mut enroll = EmbeddingSet::new(set.dim())?;
    let mut test = EmbeddingSet::new(set.dim())?;
    let mut seen: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for r in set {
        let n = seen.entry(r.spk_id.as_str()).or_insert(0);
        if *n < per_speaker {
            enroll.push(r.clone())?;
        } else {
            test.push(r.clone())?;
        }
        *n += 1;
    }
    Ok((enroll, test))
}

/// One target trial per test utterance against its own speaker, followed by
/// `n_nontarget` distinct seeded cross-speaker trials.
pub fn build_trials(test: &EmbeddingSet, n_nontarget: usize, seed: u64) -> Result<TrialList> {
    let speakers = test.speakers();
    let mut trials: Vec<Trial> = test
        .iter()
        .map(|r| Trial {
            enroll_spk: r.spk_id.clone(),
            test_utt: r.utt_id.clone(),
            label: Label::Target,
            line: 0,
        })
        .collect();
    let available = test.len() * speakers.len().saturating_sub(1);
    if n_nontarget > available {
        return Err(Error::Invalid(format!(
            "asked for {n_nontarget} nontarget trials but only {available} cross-speaker pairs exist"
        )));
    }
    let mut g = GaussianStream::new(seed, TRIAL_STREAM);
    let mut chosen = BTreeSet::new();
    while chosen.len() < n_nontarget {
        let spk = g.next_index(speakers.len());
        let utt = g.next_index(test.len());
        let rec = &test.records()[utt];
        if rec.spk_id == speakers[spk] || !chosen.insert((spk, utt)) {
            continue;
        }
        trials.push(Trial {
            enroll_spk: speakers[spk].to_string(),
            test_utt: rec.utt_id.clone(),
            label: Label::Nontarget,
            line: 0,
        });
    }
    for (k, t) in trials.iter_mut().enumerate() {
        t.line = k + 1;
    }
    Ok(TrialList { trials })
}

//! Speaker-verification scoring: enrollment models, cosine trials, pooled
//! equal error rate and subspace-size sweeps.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::space::VariabilitySpace;
use crate::subspace::{modify_batch, Direction, Family, ModifyOptions, SubspaceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Target,
    Nontarget,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Target => "target",
            Label::Nontarget => "nontarget",
        }
    }

    pub fn swapped(self) -> Label {
        match self {
            Label::Target => Label::Nontarget,
            Label::Nontarget => Label::Target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll_spk: String,
    pub test_utt: String,
    pub label: Label,
    /// 1-based line in the source file, used in error messages.
    pub line: usize,
}

/// Verification trials, one `<enroll_spk> <test_utt> <target|nontarget>`
/// per line in text form.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Parses the text form. Blank lines are skipped; errors carry the
    /// 1-based line number.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut trials = Vec::new();
        for (k, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("reading trials", e))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let bad = |message: String| Error::Trial { line: k + 1, message };
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", fields.len())));
            }
            let label = match fields[2] {
                "target" => Label::Target,
                "nontarget" => Label::Nontarget,
                other => return Err(bad(format!("unknown label '{other}'"))),
            };
            trials.push(Trial {
                enroll_spk: fields[0].to_string(),
                test_utt: fields[1].to_string(),
                label,
                line: k + 1,
            });
        }
        Ok(TrialList { trials })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(std::io::BufReader::new(f))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.trials {
            let _ = writeln!(out, "{} {} {}", t.enroll_spk, t.test_utt, t.label.as_str());
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Length-normalized mean of a speaker's embeddings.
pub fn build_enrollment(set: &EmbeddingSet, spk_id: &str) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; set.dim()];
    let mut count = 0;
    for r in set.iter().filter(|r| r.spk_id == spk_id) {
        sum.iter_mut().zip(&r.vector).for_each(|(s, v)| *s += v);
        count += 1;
    }
    if count == 0 {
        return Err(Error::UnknownSpeaker(spk_id.to_string()));
    }
    sum.iter_mut().for_each(|s| *s /= count as f64);
    let n = norm(&sum);
    if n <= ZERO_NORM {
        return Err(Error::Degenerate(format!(
            "enrollment mean of speaker '{spk_id}' is the zero vector"
        )));
    }
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(sum)
}

/// Enrollment models for every speaker in the set, keyed by speaker id.
pub fn build_enrollments(set: &EmbeddingSet) -> Result<HashMap<String, Vec<f64>>> {
    set.speakers()
        .into_iter()
        .map(|s| Ok((s.to_string(), build_enrollment(set, s)?)))
        .collect()
}

const ZERO_NORM: f64 = 1e-30;

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na <= ZERO_NORM || nb <= ZERO_NORM {
        return Err(Error::Degenerate("cosine of a zero vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredTrial {
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredTrials {
    pub scores: Vec<ScoredTrial>,
}

impl ScoredTrials {
    pub fn from_classes(targets: &[f64], nontargets: &[f64]) -> Self {
        let scores = targets
            .iter()
            .map(|&score| ScoredTrial {
                score,
                label: Label::Target,
            })
            .chain(nontargets.iter().map(|&score| ScoredTrial {
                score,
                label: Label::Nontarget,
            }))
            .collect();
        ScoredTrials { scores }
    }

    pub fn counts(&self) -> (usize, usize) {
        let t = self.scores.iter().filter(|s| s.label == Label::Target).count();
        (t, self.scores.len() - t)
    }

    pub fn with_swapped_labels(&self) -> Self {
        ScoredTrials {
            scores: self
                .scores
                .iter()
                .map(|s| ScoredTrial {
                    score: s.score,
                    label: s.label.swapped(),
                })
                .collect(),
        }
    }
}

/// Scores every trial as the cosine between the enrollment model and the
/// test embedding. Output order follows the trial list.
pub fn score_trials(
    enrollments: &HashMap<String, Vec<f64>>,
    test: &EmbeddingSet,
    trials: &TrialList,
) -> Result<ScoredTrials> {
    let scores = trials
        .trials
        .iter()
        .map(|t| {
            let line = t.line;
            let model = enrollments.get(&t.enroll_spk).ok_or_else(|| Error::Trial {
                line,
                message: format!("unknown enrollment speaker '{}'", t.enroll_spk),
            })?;
            let utt = test.get(&t.test_utt).ok_or_else(|| Error::Trial {
                line,
                message: format!("unknown test utterance '{}'", t.test_utt),
            })?;
            let score = cosine(model, &utt.vector).map_err(|e| Error::Trial {
                line,
                message: e.to_string(),
            })?;
            Ok(ScoredTrial {
                score,
                label: t.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoredTrials { scores })
}

/// Builds enrollment models from `enroll` for the speakers referenced by
/// `trials`, then scores them against `test`.
pub fn evaluate(enroll: &EmbeddingSet, test: &EmbeddingSet, trials: &TrialList) -> Result<EerResult> {
    let mut models = HashMap::new();
    for t in &trials.trials {
        if !models.contains_key(&t.enroll_spk) {
            let model = build_enrollment(enroll, &t.enroll_spk).map_err(|e| Error::Trial {
                line: t.line,
                message: e.to_string(),
            })?;
            models.insert(t.enroll_spk.clone(), model);
        }
    }
    compute_eer(&score_trials(&models, test, trials)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult {
    pub eer_percent: f64,
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

/// Pooled equal error rate.
///
/// A trial is accepted when its score is at least the threshold. Operating
/// points are taken at every distinct score plus one above all scores; the
/// EER is linearly interpolated between the two neighbouring points where
/// `FAR - FRR` changes sign.
pub fn compute_eer(scored: &ScoredTrials) -> Result<EerResult> {
    let (n_target, n_nontarget) = scored.counts();
    if n_target == 0 || n_nontarget == 0 {
        return Err(Error::Degenerate(format!(
            "EER needs both classes (got {n_target} target, {n_nontarget} nontarget trials)"
        )));
    }
    if scored.scores.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::NonFinite("trial score".into()));
    }
    let mut sorted: Vec<ScoredTrial> = scored.scores.clone();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));

    let (nt, nn) = (n_target as f64, n_nontarget as f64);
    // Counts strictly below the current threshold.
    let mut targets_below = 0usize;
    let mut nontargets_below = 0usize;
    let mut prev: Option<(f64, f64, f64)> = None; // (threshold, far, frr)
    let mut k = 0;
    loop {
        let threshold = sorted.get(k).map_or(f64::INFINITY, |s| s.score);
        let far = (n_nontarget - nontargets_below) as f64 / nn;
        let frr = targets_below as f64 / nt;
        let diff = far - frr;
        if diff <= 0.0 {
            let (eer, thr) = match prev {
                Some((p_thr, p_far, p_frr)) if diff < 0.0 => {
                    let p_diff = p_far - p_frr;
                    let alpha = p_diff / (p_diff - diff);
                    let thr = if threshold.is_finite() {
                        p_thr + alpha * (threshold - p_thr)
                    } else {
                        p_thr
                    };
                    (p_frr + alpha * (frr - p_frr), thr)
                }
                _ => (frr, threshold),
            };
            return Ok(EerResult {
                eer_percent: 100.0 * eer,
                threshold: thr,
                n_target,
                n_nontarget,
            });
        }
        prev = Some((threshold, far, frr));
        // Move past every trial tied at this threshold.
        while k < sorted.len() && sorted[k].score == threshold {
            match sorted[k].label {
                Label::Target => targets_below += 1,
                Label::Nontarget => nontargets_below += 1,
            }
            k += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub family: Family,
    pub start: usize,
    pub size: usize,
    pub direction: Direction,
    pub eer_percent: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_HEADER: &str = "family,start,size,direction,eer_percent,n_target,n_nontarget";

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.family,
                r.start,
                r.size,
                r.direction.symbol(),
                r.eer_percent,
                r.n_target,
                r.n_nontarget
            );
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(SWEEP_HEADER) {
            return Err(Error::Format(format!("sweep csv must start with '{SWEEP_HEADER}'")));
        }
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let bad = || Error::Format(format!("sweep csv line {}: '{line}'", k + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad());
            }
            rows.push(SweepRow {
                family: f[0].parse().map_err(|_| bad())?,
                start: f[1].parse().map_err(|_| bad())?,
                size: f[2].parse().map_err(|_| bad())?,
                direction: match f[3] {
                    "+" => Direction::Forward,
                    "-" => Direction::Backward,
                    _ => return Err(bad()),
                },
                eer_percent: f[4].parse().map_err(|_| bad())?,
                n_target: f[5].parse().map_err(|_| bad())?,
                n_nontarget: f[6].parse().map_err(|_| bad())?,
            });
        }
        Ok(SweepResult { rows })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SweepOptions {
    /// Keep the enrollment side unmodified and only modify test embeddings.
    pub clean_enroll: bool,
    pub modify: ModifyOptions,
}

/// The subspace of `family` with size `k` in a space of dimension `dim`.
pub fn family_spec(family: Family, turning: Option<usize>, dim: usize, k: usize) -> Result<SubspaceSpec> {
    match family {
        Family::Primary => Ok(SubspaceSpec::primary(k)),
        Family::Secondary => turning
            .map(|i| SubspaceSpec::secondary(i, k))
            .ok_or_else(|| Error::Invalid("the secondary family needs a turning dimension".into())),
        Family::Residual => Ok(SubspaceSpec::residual(dim, k)),
        Family::Custom => Err(Error::Invalid(
            "sweeps run over the primary, secondary or residual family".into(),
        )),
    }
}

/// For each size in `sizes`: modify both sides with the family's subspace,
/// rebuild enrollment models from the modified enrollment set, score the
/// trials and record the pooled EER.
///
/// Sizes are evaluated in parallel; rows come back in input order.
pub fn run_sweep(
    space: &VariabilitySpace,
    enroll: &EmbeddingSet,
    test: &EmbeddingSet,
    trials: &TrialList,
    family: Family,
    turning: Option<usize>,
    sizes: &[usize],
    options: SweepOptions,
) -> Result<SweepResult> {
    let specs = sizes
        .iter()
        .map(|&k| {
            let spec = family_spec(family, turning, space.dim(), k)?;
            spec.resolve(space.dim())
                .map_err(|e| Error::Invalid(format!("size K={k}: {e}")))?;
            Ok(spec)
        })
        .collect::<Result<Vec<_>>>()?;

    let rows = specs
        .par_iter()
        .map(|spec| {
            let with_k = |e: Error| match e {
                Error::Trial { line, message } => Error::Trial {
                    line,
                    message: format!("K={}: {message}", spec.size),
                },
                other => other,
            };
            let (test_mod, _) = modify_batch(space, test, spec, options.modify)?;
            let enroll_mod;
            let enroll_side = if options.clean_enroll {
                enroll
            } else {
                enroll_mod = modify_batch(space, enroll, spec, options.modify)?.0;
                &enroll_mod
            };
            let eer = evaluate(enroll_side, &test_mod, trials).map_err(with_k)?;
            Ok(SweepRow {
                family,
                start: spec.start,
                size: spec.size,
                direction: spec.direction,
                eer_percent: eer.eer_percent,
                n_target: eer.n_target,
                n_nontarget: eer.n_nontarget,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { rows })
}

/// Parses an inclusive `a:b:step` range.
pub fn parse_size_range(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Invalid(format!("bad size range '{s}', expected <first>:<last>:<step>"));
    let parts: Vec<usize> = s
        .split(':')
        .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    match parts[..] {
        [a, b, step] if step > 0 && a <= b => Ok((a..=b).step_by(step).collect()),
        [a] => Ok(vec![a]),
        _ => Err(bad()),
    }
}

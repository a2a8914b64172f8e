//! Synthetic model populations whose accuracies lie on a known logit-space plane.
//!
//! ID accuracies are drawn per group in logit space; the OOD logit is the
//! ground-truth plane plus an optional per-group offset plus Gaussian noise.
//! The random stream is ChaCha8 seeded from a `u64`, which is bit-identical
//! across platforms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::ModelRecord;
use crate::math::{expit, logit, LinearModel, DEFAULT_CLAMP_EPS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("invalid population spec: {0}")]
    Invalid(String),
}

/// Distribution of one model's ID accuracies, expressed in logit space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IdSampler {
    /// Independent uniform draws per coordinate over `[low_j, high_j]`.
    Box { low: Vec<f64>, high: Vec<f64> },
    /// A shared latent level `t ~ U[low, high]`; coordinate `j` is
    /// `t + offsets[j] + U[-jitter, jitter]`.
    Band {
        low: f64,
        high: f64,
        offsets: Vec<f64>,
        #[serde(default)]
        jitter: f64,
    },
}

impl IdSampler {
    fn dimension(&self) -> usize {
        match self {
            IdSampler::Box { low, .. } => low.len(),
            IdSampler::Band { offsets, .. } => offsets.len(),
        }
    }

    /// Per-coordinate `(min, max)` of the support.
    fn support(&self) -> Vec<(f64, f64)> {
        match self {
            IdSampler::Box { low, high } => low.iter().copied().zip(high.iter().copied()).collect(),
            IdSampler::Band {
                low,
                high,
                offsets,
                jitter,
            } => offsets
                .iter()
                .map(|o| (low + o - jitter, high + o + jitter))
                .collect(),
        }
    }

    fn validate(&self) -> Result<(), String> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo <= hi;
        match self {
            IdSampler::Box { low, high } => {
                if low.len() != high.len() {
                    return Err("box sampler bounds differ in length".into());
                }
                if !low.iter().zip(high).all(|(l, h)| ok(*l, *h)) {
                    return Err("box sampler needs finite bounds with low <= high".into());
                }
            }
            IdSampler::Band {
                low,
                high,
                offsets,
                jitter,
            } => {
                if !ok(*low, *high) || !jitter.is_finite() || *jitter < 0.0 {
                    return Err("band sampler needs finite low <= high and jitter >= 0".into());
                }
                if offsets.iter().any(|o| !o.is_finite()) {
                    return Err("band sampler offsets must be finite".into());
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
        match self {
            IdSampler::Box { low, high } => low.iter().zip(high).map(|(l, h)| uniform(*l, *h)).collect(),
            IdSampler::Band {
                low,
                high,
                offsets,
                jitter,
            } => {
                let t = uniform(*low, *high);
                offsets
                    .iter()
                    .map(|o| t + o + uniform(-jitter, *jitter))
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub label: String,
    /// Relative share of `n_models`.
    pub weight: f64,
    pub sampler: IdSampler,
    #[serde(default = "yes")]
    pub in_fit: bool,
    /// Added to the OOD logit of every member; 0 keeps the group on the plane.
    #[serde(default)]
    pub target_offset: f64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub truth: LinearModel,
    pub noise_sigma: f64,
    pub n_models: usize,
    pub groups: Vec<GroupSpec>,
    pub id_testsets: Vec<String>,
    pub ood_testset: String,
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub clamp_eps: f64,
}

fn default_eps() -> f64 {
    DEFAULT_CLAMP_EPS
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        let bad = |m: String| Err(SpecError::Invalid(m));
        let k = self.truth.dimension();
        if self.id_testsets.len() != k {
            return bad(format!("{} ID test sets for a {k}-dimensional plane", self.id_testsets.len()));
        }
        if self.id_testsets.contains(&self.ood_testset) {
            return bad(format!("`{}` is both ID and OOD", self.ood_testset));
        }
        if self.n_models < k + 1 {
            return bad(format!("n_models = {} but a {k}-dimensional fit needs at least {}", self.n_models, k + 1));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return bad("noise_sigma must be finite and >= 0".into());
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.1) {
            return bad("clamp_eps must lie in (0, 0.1)".into());
        }
        if self.groups.is_empty() {
            return bad("at least one group is required".into());
        }
        let limit = logit(1.0 - self.clamp_eps);
        let mut labels = std::collections::BTreeSet::new();
        for g in &self.groups {
            if !labels.insert(&g.label) {
                return bad(format!("duplicate group `{}`", g.label));
            }
            if !(g.weight.is_finite() && g.weight > 0.0) {
                return bad(format!("group `{}` needs a positive weight", g.label));
            }
            if !g.target_offset.is_finite() {
                return bad(format!("group `{}` has a non-finite target offset", g.label));
            }
            g.sampler
                .validate()
                .map_err(|m| SpecError::Invalid(format!("group `{}`: {m}", g.label)))?;
            if g.sampler.dimension() != k {
                return bad(format!("group `{}` samples {} ID accuracies, expected {k}", g.label, g.sampler.dimension()));
            }
            if g.sampler.support().iter().any(|(lo, hi)| *lo <= -limit || *hi >= limit) {
                return bad(format!("group `{}` samples logits outside (-{limit:.4}, {limit:.4})", g.label));
            }
        }
        Ok(())
    }

    /// Models per group by largest remainder, in group order.
    fn allocation(&self) -> Vec<usize> {
        let total: f64 = self.groups.iter().map(|g| g.weight).sum();
        let quotas: Vec<f64> = self
            .groups
            .iter()
            .map(|g| g.weight / total * self.n_models as f64)
            .collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let short = self.n_models - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        counts
    }
}

/// Draws a population. Models are named `<group>-<index>` and come out in
/// group order.
pub fn generate(spec: &PopulationSpec) -> Result<Vec<ModelRecord>, SpecError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| SpecError::Invalid(format!("noise: {e}")))?;
    let limit = logit(1.0 - spec.clamp_eps);

    let mut out = Vec::with_capacity(spec.n_models);
    for (group, count) in spec.groups.iter().zip(spec.allocation()) {
        for i in 0..count {
            let ids = group.sampler.sample(&mut rng);
            let eps = if spec.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            let plane = spec.truth.eval_logit(&ids).expect("dimension validated");
            let mut target = plane + group.target_offset + eps;
            if target.abs() > limit {
                log::warn!("synthetic OOD logit {target} clipped to ±{limit}");
                target = target.clamp(-limit, limit);
            }
            let mut record = ModelRecord::new(format!("{}-{i:04}", group.label), &group.label, group.in_fit);
            for (t, z) in spec.id_testsets.iter().zip(&ids) {
                record.accuracies.insert(t.clone(), expit(*z));
            }
            record.accuracies.insert(spec.ood_testset.clone(), expit(target));
            out.push(record);
        }
    }
    Ok(out)
}

pub const SCENARIO_ID_A: &str = "id-a";
pub const SCENARIO_ID_B: &str = "id-b";
pub const SCENARIO_OOD: &str = "ood";
pub const SCENARIO_GROUP_A: &str = "family-a";
pub const SCENARIO_GROUP_B: &str = "family-b";

/// Two families on one plane with mirrored ID profiles: `family-a` is
/// stronger on `id-a` than on `id-b`, `family-b` the reverse.
///
/// Fitting on either ID test set alone separates the families into two
/// parallel lines, so each single-ID view credits a different family with
/// positive effective robustness. The two-ID plane explains both.
pub fn contradiction_spec(seed: u64) -> PopulationSpec {
    let band = |offsets: [f64; 2]| IdSampler::Band {
        low: -1.0,
        high: 1.5,
        offsets: offsets.to_vec(),
        jitter: 0.15,
    };
    let group = |label: &str, offsets| GroupSpec {
        label: label.to_string(),
        weight: 1.0,
        sampler: band(offsets),
        in_fit: true,
        target_offset: 0.0,
    };
    PopulationSpec {
        truth: LinearModel::new(vec![0.5, 0.5], -0.3).expect("finite"),
        noise_sigma: 0.02,
        n_models: 100,
        groups: vec![group(SCENARIO_GROUP_A, [0.75, -0.75]), group(SCENARIO_GROUP_B, [-0.75, 0.75])],
        id_testsets: vec![SCENARIO_ID_A.into(), SCENARIO_ID_B.into()],
        ood_testset: SCENARIO_OOD.into(),
        seed,
        clamp_eps: DEFAULT_CLAMP_EPS,
    }
}

pub fn make_contradiction_scenario(seed: u64) -> Vec<ModelRecord> {
    generate(&contradiction_spec(seed)).expect("built-in scenario is valid")
}

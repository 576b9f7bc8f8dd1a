//! Synthetic design under test.
//!
//! Stands in for a real simulator: tests are fixed-width configurations, and
//! each coverage event is a conjunction of interval constraints on raw feature
//! values. Rare events are placed in low-density regions (tails of integer
//! ranges, rarely drawn categorical codes), so random ordering shows the usual
//! long tail on the way to closure.

use std::path::Path;

use rand::distributions::{Distribution, Uniform, WeightedIndex};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverage::CoverageRecord;
use crate::encoding::{FeatureDef, FeatureType, RawTest, RawValue, Schema, TestVector};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RarityTier {
    Common,
    Uncommon,
    Rare,
}

impl RarityTier {
    pub const ALL: [RarityTier; 3] = [RarityTier::Common, RarityTier::Uncommon, RarityTier::Rare];

    /// Target single-test hit probability band, inclusive.
    pub fn band(self) -> (f64, f64) {
        match self {
            RarityTier::Common => (0.3, 0.6),
            RarityTier::Uncommon => (0.01, 0.05),
            RarityTier::Rare => (0.0005, 0.005),
        }
    }

    fn conjunct_range(self, max_conjuncts: usize) -> (usize, usize) {
        let (lo, hi) = match self {
            RarityTier::Common => (1, 2),
            RarityTier::Uncommon => (1, 3),
            RarityTier::Rare => (2, 4),
        };
        (lo.min(max_conjuncts), hi.min(max_conjuncts))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierMix {
    pub common: f64,
    pub uncommon: f64,
    pub rare: f64,
}

impl TierMix {
    pub const DESK: TierMix = TierMix {
        common: 0.5,
        uncommon: 0.35,
        rare: 0.15,
    };

    fn validate(&self) -> Result<()> {
        let parts = [self.common, self.uncommon, self.rare];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "tier fractions {parts:?} must be in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }

    /// Event counts per tier for `n` events; rounding slack goes to the rare tier.
    fn counts(&self, n: usize) -> [usize; 3] {
        let common = ((self.common * n as f64).round() as usize).min(n);
        let uncommon = ((self.uncommon * n as f64).round() as usize).min(n - common);
        let rare = if self.rare > 0.0 { n - common - uncommon } else { 0 };
        // without a rare tier the slack goes to the largest remaining tier
        let (common, uncommon) = if rare == 0 && common + uncommon < n {
            if self.uncommon > self.common {
                (common, n - common)
            } else {
                (n - uncommon, uncommon)
            }
        } else {
            (common, uncommon)
        };
        [common, uncommon, rare]
    }
}

/// Per-feature value distribution of the pool generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureDist {
    /// Uniform over `0..=max`.
    UniformInt { max: i64 },
    /// Code `c` drawn with probability `probs[c]`.
    SkewedCategorical { probs: Vec<f64> },
}

impl FeatureDist {
    /// Probability that a drawn value lies in `lo..=hi`.
    pub fn interval_probability(&self, lo: i64, hi: i64) -> f64 {
        match self {
            FeatureDist::UniformInt { max } => {
                let lo = lo.max(0);
                let hi = hi.min(*max);
                if hi < lo {
                    0.0
                } else {
                    (hi - lo + 1) as f64 / (*max + 1) as f64
                }
            }
            FeatureDist::SkewedCategorical { probs } => {
                let lo = lo.max(0) as usize;
                let hi = (hi.max(-1) + 1) as usize;
                probs.get(lo..hi.min(probs.len())).map_or(0.0, |p| p.iter().sum())
            }
        }
    }

    fn max_value(&self) -> i64 {
        match self {
            FeatureDist::UniformInt { max } => *max,
            FeatureDist::SkewedCategorical { probs } => probs.len() as i64 - 1,
        }
    }
}

/// `lo <= value <= hi` on one raw feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conjunct {
    pub feature: usize,
    pub lo: i64,
    pub hi: i64,
}

impl Conjunct {
    #[inline]
    pub fn holds(&self, value: i64) -> bool {
        self.lo <= value && value <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPredicate {
    pub conjuncts: Vec<Conjunct>,
    pub tier: RarityTier,
    /// Exact single-test hit probability under the pool generator.
    pub probability: f64,
}

impl EventPredicate {
    #[inline]
    pub fn holds(&self, values: &[i64]) -> bool {
        self.conjuncts.iter().all(|c| c.holds(values[c.feature]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutConfig {
    pub seed: u64,
    pub num_features: usize,
    pub num_events: usize,
    pub tier_mix: TierMix,
    pub max_conjuncts: usize,
    pub categorical_fraction: f64,
    /// Every event must be hit at least once by this many tests drawn with
    /// [`SyntheticDut::reference_seed`].
    pub reference_pool_size: usize,
    pub redraw_budget: usize,
}

impl DutConfig {
    pub fn new(seed: u64, num_features: usize, num_events: usize, tier_mix: TierMix) -> Self {
        DutConfig {
            seed,
            num_features,
            num_events,
            tier_mix,
            max_conjuncts: 4,
            categorical_fraction: 0.5,
            reference_pool_size: 20_000,
            redraw_budget: 200,
        }
    }

    /// 64 features, 800 events, 50/35/15 tier mix.
    pub fn desk(seed: u64) -> Self {
        Self::new(seed, 64, 800, TierMix::DESK)
    }

    fn validate(&self) -> Result<()> {
        if self.num_features == 0 || self.num_events == 0 {
            return Err(Error::InvalidConfig(
                "a DUT needs at least one feature and one event".into(),
            ));
        }
        if self.max_conjuncts == 0 {
            return Err(Error::InvalidConfig("max_conjuncts must be >= 1".into()));
        }
        if self.reference_pool_size == 0 {
            return Err(Error::InvalidConfig("reference pool must be nonempty".into()));
        }
        if !(0.0..=1.0).contains(&self.categorical_fraction) {
            return Err(Error::InvalidConfig("categorical_fraction must be in [0, 1]".into()));
        }
        self.tier_mix.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DutRepr", into = "DutRepr")]
pub struct SyntheticDut {
    config: DutConfig,
    features: Vec<FeatureDist>,
    events: Vec<EventPredicate>,
    schema: Schema,
}

#[derive(Serialize, Deserialize)]
struct DutRepr {
    config: DutConfig,
    features: Vec<FeatureDist>,
    events: Vec<EventPredicate>,
}

impl TryFrom<DutRepr> for SyntheticDut {
    type Error = Error;

    fn try_from(r: DutRepr) -> Result<Self> {
        if r.features.len() != r.config.num_features || r.events.len() != r.config.num_events {
            return Err(Error::InvalidConfig("DUT description does not match its config".into()));
        }
        for e in &r.events {
            if e.conjuncts.is_empty() || e.conjuncts.iter().any(|c| c.feature >= r.features.len() || c.lo > c.hi) {
                return Err(Error::InvalidConfig("malformed event predicate".into()));
            }
        }
        let schema = schema_for(&r.features);
        Ok(SyntheticDut {
            config: r.config,
            features: r.features,
            events: r.events,
            schema,
        })
    }
}

impl From<SyntheticDut> for DutRepr {
    fn from(d: SyntheticDut) -> Self {
        DutRepr {
            config: d.config,
            features: d.features,
            events: d.events,
        }
    }
}

fn feature_name(i: usize) -> String {
    format!("f{i:03}")
}

fn token(code: usize) -> String {
    format!("v{code}")
}

fn schema_for(features: &[FeatureDist]) -> Schema {
    Schema {
        features: features
            .iter()
            .enumerate()
            .map(|(i, f)| FeatureDef {
                name: feature_name(i),
                kind: match f {
                    FeatureDist::UniformInt { .. } => FeatureType::Integer,
                    FeatureDist::SkewedCategorical { probs } => FeatureType::Categorical {
                        codes: (0..probs.len()).map(|c| (token(c), c as u32)).collect(),
                    },
                },
            })
            .collect(),
    }
}

fn draw_feature(rng: &mut ChaCha8Rng, categorical_fraction: f64) -> FeatureDist {
    if rng.gen_bool(categorical_fraction) {
        let k = rng.gen_range(4..=10);
        let ratio: f64 = rng.gen_range(0.3..0.6);
        let weights: Vec<f64> = (0..k).map(|c| ratio.powi(c)).collect();
        let total: f64 = weights.iter().sum();
        FeatureDist::SkewedCategorical {
            probs: weights.iter().map(|w| w / total).collect(),
        }
    } else {
        const MAXES: [i64; 6] = [7, 15, 31, 63, 127, 255];
        FeatureDist::UniformInt {
            max: *MAXES.choose(rng).expect("nonempty"),
        }
    }
}

/// Picks an interval on `dist` whose probability is close to `q`.
///
/// Common events may sit anywhere; rarer tiers are anchored in low-density
/// regions: either end of an integer range, or the tail of a skewed
/// categorical distribution.
fn draw_interval(dist: &FeatureDist, q: f64, tier: RarityTier, rng: &mut ChaCha8Rng) -> (i64, i64) {
    match dist {
        FeatureDist::UniformInt { max } => {
            let n = max + 1;
            let w = ((q * n as f64).round() as i64).clamp(1, n);
            match tier {
                RarityTier::Common => {
                    let lo = rng.gen_range(0..=n - w);
                    (lo, lo + w - 1)
                }
                _ if rng.gen_bool(0.5) => (0, w - 1),
                _ => (n - w, *max),
            }
        }
        FeatureDist::SkewedCategorical { probs } => {
            let k = probs.len() as i64;
            let closest = |candidates: &mut dyn Iterator<Item = (i64, i64)>| {
                candidates
                    .min_by(|a, b| {
                        let da = (dist.interval_probability(a.0, a.1).ln() - q.ln()).abs();
                        let db = (dist.interval_probability(b.0, b.1).ln() - q.ln()).abs();
                        da.total_cmp(&db)
                    })
                    .expect("nonempty candidates")
            };
            match tier {
                RarityTier::Common => closest(&mut (0..k).flat_map(|lo| (lo..k).map(move |hi| (lo, hi)))),
                _ => closest(&mut (1..k).map(|lo| (lo, k - 1))),
            }
        }
    }
}

fn draw_event(
    features: &[FeatureDist],
    tier: RarityTier,
    max_conjuncts: usize,
    rng: &mut ChaCha8Rng,
    budget: usize,
) -> Result<EventPredicate> {
    let (lo_band, hi_band) = tier.band();
    let (min_c, max_c) = tier.conjunct_range(max_conjuncts);
    let max_c = max_c.min(features.len());
    let min_c = min_c.min(max_c);
    for _ in 0..budget.max(1) * 10 {
        let target = (rng.gen_range(lo_band.ln()..=hi_band.ln())).exp();
        let m = rng.gen_range(min_c..=max_c);
        let per_conjunct = target.powf(1.0 / m as f64);
        let mut chosen = index::sample(rng, features.len(), m).into_vec();
        chosen.sort_unstable();
        let mut conjuncts = Vec::with_capacity(m);
        let mut p = 1.0;
        for f in chosen {
            let (lo, hi) = draw_interval(&features[f], per_conjunct, tier, rng);
            p *= features[f].interval_probability(lo, hi);
            conjuncts.push(Conjunct { feature: f, lo, hi });
        }
        if (lo_band..=hi_band).contains(&p) {
            return Ok(EventPredicate {
                conjuncts,
                tier,
                probability: p,
            });
        }
    }
    Err(Error::RedrawBudgetExhausted(format!(
        "no {tier:?} event in band {lo_band}..{hi_band} could be drawn"
    )))
}

impl SyntheticDut {
    /// Draws features and events, then re-draws any event the reference
    /// pool never hits.
    pub fn generate(config: DutConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from(derive_seed(config.seed, "dut", 0));
        let features: Vec<FeatureDist> = (0..config.num_features)
            .map(|_| draw_feature(&mut rng, config.categorical_fraction))
            .collect();

        let [c, u, r] = config.tier_mix.counts(config.num_events);
        let mut tiers: Vec<RarityTier> = std::iter::repeat_n(RarityTier::Common, c)
            .chain(std::iter::repeat_n(RarityTier::Uncommon, u))
            .chain(std::iter::repeat_n(RarityTier::Rare, r))
            .collect();
        tiers.shuffle(&mut rng);

        let events = tiers
            .iter()
            .map(|&t| draw_event(&features, t, config.max_conjuncts, &mut rng, config.redraw_budget))
            .collect::<Result<Vec<_>>>()?;

        let schema = schema_for(&features);
        let mut dut = SyntheticDut {
            config,
            features,
            events,
            schema,
        };

        let reference = dut.sample_values(dut.config.reference_pool_size, dut.reference_seed());
        let mut unhit = dut.unhit_events(&reference, 0..dut.events.len());
        let mut attempts = 0;
        while !unhit.is_empty() {
            attempts += 1;
            if attempts > dut.config.redraw_budget {
                return Err(Error::RedrawBudgetExhausted(format!(
                    "{} events still unhittable after {} re-draws",
                    unhit.len(),
                    dut.config.redraw_budget
                )));
            }
            for &e in &unhit {
                let tier = dut.events[e].tier;
                dut.events[e] = draw_event(
                    &dut.features,
                    tier,
                    dut.config.max_conjuncts,
                    &mut rng,
                    dut.config.redraw_budget,
                )?;
            }
            unhit = dut.unhit_events(&reference, unhit);
        }
        Ok(dut)
    }

    fn unhit_events(&self, reference: &[Vec<i64>], candidates: impl IntoIterator<Item = usize>) -> Vec<usize> {
        candidates
            .into_iter()
            .filter(|&e| !reference.iter().any(|v| self.events[e].holds(v)))
            .collect()
    }

    pub fn config(&self) -> &DutConfig {
        &self.config
    }

    pub fn features(&self) -> &[FeatureDist] {
        &self.features
    }

    pub fn events(&self) -> &[EventPredicate] {
        &self.events
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn num_events(&self) -> usize {
        self.events.len()
    }

    /// Seed of the pool every event is guaranteed to be hittable in.
    pub fn reference_seed(&self) -> u64 {
        derive_seed(self.config.seed, "reference-pool", 0)
    }

    fn sample_values(&self, n: usize, seed: u64) -> Vec<Vec<i64>> {
        let mut rng = rng_from(derive_seed(seed, "pool", 0));
        let samplers: Vec<Sampler> = self.features.iter().map(Sampler::new).collect();
        let mut rows: Vec<Vec<i64>> = (0..n)
            .map(|_| samplers.iter().map(|s| s.sample(&mut rng)).collect())
            .collect();
        rows.shuffle(&mut rng);
        rows
    }

    /// Draws `pool_size` tests; ids are `0..pool_size` in pool order.
    pub fn generate_pool(&self, pool_size: usize, seed: u64) -> Vec<RawTest> {
        let tokens: Vec<Option<Vec<String>>> = self
            .features
            .iter()
            .map(|f| match f {
                FeatureDist::UniformInt { .. } => None,
                FeatureDist::SkewedCategorical { probs } => Some((0..probs.len()).map(token).collect()),
            })
            .collect();
        self.sample_values(pool_size, seed)
            .into_iter()
            .enumerate()
            .map(|(id, row)| RawTest {
                test_id: id as u64,
                values: row
                    .into_iter()
                    .zip(&tokens)
                    .map(|(v, t)| match t {
                        None => RawValue::Int(v),
                        Some(t) => RawValue::Token(t[v as usize].clone()),
                    })
                    .collect(),
            })
            .collect()
    }

    /// The pool used to validate hittability; every event is hit in it.
    pub fn reference_pool(&self) -> Vec<RawTest> {
        self.generate_pool(self.config.reference_pool_size, self.reference_seed())
    }

    pub fn simulate(&self, test: &RawTest) -> Result<CoverageRecord> {
        let v = self.schema.encode(test)?;
        self.simulate_vector(&v)
    }

    /// Simulates an encoded (not standardized) test vector.
    pub fn simulate_vector(&self, v: &TestVector) -> Result<CoverageRecord> {
        if v.width() != self.num_features() {
            return Err(Error::SchemaMismatch {
                test_id: v.test_id,
                reason: format!("expected {} features, got {}", self.num_features(), v.width()),
            });
        }
        let mut values = Vec::with_capacity(v.width());
        for (x, f) in v.values.iter().zip(&self.features) {
            let iv = *x as i64;
            if iv as f64 != *x || iv < 0 || iv > f.max_value() {
                return Err(Error::SchemaMismatch {
                    test_id: v.test_id,
                    reason: format!("value {x} is outside the feature domain"),
                });
            }
            values.push(iv);
        }
        Ok(CoverageRecord::from_events(
            v.test_id,
            self.num_events(),
            self.events
                .iter()
                .enumerate()
                .filter(|(_, e)| e.holds(&values))
                .map(|(i, _)| i),
        ))
    }

    /// Simulates every vector; equal to calling [`Self::simulate_vector`] on each.
    pub fn simulate_all(&self, vs: &[TestVector]) -> Result<Vec<CoverageRecord>> {
        vs.par_iter().map(|v| self.simulate_vector(v)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

enum Sampler {
    Uniform(Uniform<i64>),
    Weighted(WeightedIndex<f64>),
}

impl Sampler {
    fn new(f: &FeatureDist) -> Self {
        match f {
            FeatureDist::UniformInt { max } => Sampler::Uniform(Uniform::new_inclusive(0, *max)),
            FeatureDist::SkewedCategorical { probs } => {
                Sampler::Weighted(WeightedIndex::new(probs).expect("positive categorical weights"))
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> i64 {
        match self {
            Sampler::Uniform(u) => u.sample(rng),
            Sampler::Weighted(w) => w.sample(rng) as i64,
        }
    }
}

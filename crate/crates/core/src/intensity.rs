//! Semantic-intensity query selection.
//!
//! Construct weights come from construct frequencies in the distortion
//! database; a line's intensity is the sum of the weights of the constructs
//! it contains. The number of query lines grows with function length and is
//! capped, and the selection first covers distinct construct kinds before
//! falling back to raw score order.

use std::str::FromStr;

use num_traits::Float;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pseudocode::{ConstructKind, ConstructSet, DecompiledFunction, Lexicon, SourceLine};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum IntensityError {
    #[error("invalid intensity parameters: {0}")]
    InvalidParams(String),
}

/// Controls how many query lines are drawn from a function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntensityParams {
    pub min_lines: usize,
    pub base_lines: usize,
    pub max_lines: usize,
    pub threshold: usize,
    pub step: usize,
}

impl Default for IntensityParams {
    fn default() -> Self {
        Self {
            min_lines: 5,
            base_lines: 5,
            max_lines: 10,
            threshold: 5,
            step: 9,
        }
    }
}

impl IntensityParams {
    pub fn validate(&self) -> Result<(), IntensityError> {
        let all_positive = [
            self.min_lines,
            self.base_lines,
            self.max_lines,
            self.threshold,
            self.step,
        ]
        .iter()
        .all(|&v| v > 0);
        if !all_positive {
            return Err(IntensityError::InvalidParams(
                "all parameters must be positive".into(),
            ));
        }
        if self.base_lines > self.max_lines {
            return Err(IntensityError::InvalidParams(format!(
                "base_lines ({}) exceeds max_lines ({})",
                self.base_lines, self.max_lines
            )));
        }
        Ok(())
    }
}

/// Number of query lines for a function of `total_lines` lines.
pub fn compute_k(total_lines: usize, params: &IntensityParams) -> usize {
    if total_lines <= params.min_lines {
        return total_lines.max(1);
    }
    let over = total_lines as i64 - params.threshold as i64;
    let k = params.base_lines as i64 + over.div_euclid(params.step.max(1) as i64);
    k.min(params.max_lines as i64).max(1) as usize
}

/// Per-construct weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeights<T> {
    weights: [T; 8],
}

impl<T: Float> FeatureWeights<T> {
    pub fn zero() -> Self {
        Self {
            weights: [T::zero(); 8],
        }
    }

    /// Builds weights from explicit values; negative or non-finite values are rejected.
    pub fn from_pairs(pairs: &[(ConstructKind, T)]) -> Option<Self> {
        let mut w = Self::zero();
        for &(k, v) in pairs {
            if !v.is_finite() || v < T::zero() {
                return None;
            }
            w.weights[k.index()] = v;
        }
        Some(w)
    }

    pub fn get(&self, kind: ConstructKind) -> T {
        self.weights[kind.index()]
    }

    pub fn sum(&self) -> T {
        self.weights.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.is_zero())
    }

    /// Sum of weights over the given constructs.
    pub fn score(&self, constructs: &ConstructSet) -> T {
        constructs
            .iter()
            .fold(T::zero(), |acc, &k| acc + self.get(k))
    }

    /// Construct kinds by descending weight; equal weights keep declaration order.
    pub fn kinds_by_weight(&self) -> Vec<ConstructKind> {
        let mut kinds = ConstructKind::ALL.to_vec();
        kinds.sort_by(|a, b| {
            self.get(*b)
                .partial_cmp(&self.get(*a))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(b))
        });
        kinds
    }

    pub fn iter(&self) -> impl Iterator<Item = (ConstructKind, T)> + '_ {
        ConstructKind::ALL.iter().map(move |&k| (k, self.get(k)))
    }
}

/// Raw construct occurrence counts over a set of lines.
pub fn construct_counts<'a, I>(lines: I, lexicon: &Lexicon) -> [usize; 8]
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts = [0usize; 8];
    for line in lines {
        for kind in lexicon.detect_constructs(line) {
            counts[kind.index()] += 1;
        }
    }
    counts
}

/// Frequency-normalized construct weights over database lines.
///
/// Each line contributes one occurrence per construct kind it contains. An
/// empty database (or one with no recognizable constructs) yields all-zero
/// weights.
pub fn derive_feature_weights<'a, T, I>(lines: I, lexicon: &Lexicon) -> FeatureWeights<T>
where
    T: Float,
    I: IntoIterator<Item = &'a str>,
{
    let counts = construct_counts(lines, lexicon);
    let total: usize = counts.iter().sum();
    if total == 0 {
        log::warn!("distortion database has no constructs; all feature weights are zero");
        return FeatureWeights::zero();
    }
    let total_t = T::from(total).expect("count fits in float");
    let mut w = FeatureWeights::zero();
    for (slot, &c) in w.weights.iter_mut().zip(&counts) {
        *slot = T::from(c).expect("count fits in float") / total_t;
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLine<T> {
    pub line: SourceLine,
    pub intensity: T,
}

pub fn score_lines<T: Float>(lines: &[SourceLine], weights: &FeatureWeights<T>) -> Vec<ScoredLine<T>> {
    lines
        .iter()
        .map(|l| ScoredLine {
            line: l.clone(),
            intensity: weights.score(&l.constructs),
        })
        .collect()
}

/// Top-k query lines of a whole function; k comes from [`compute_k`].
pub fn select_top_k<T: Float>(
    function: &DecompiledFunction,
    weights: &FeatureWeights<T>,
    params: &IntensityParams,
) -> Vec<ScoredLine<T>> {
    select_top_k_lines(&function.lines, weights, params)
}

/// Top-k selection over any run of lines (a whole function or a chunk).
pub fn select_top_k_lines<T: Float>(
    lines: &[SourceLine],
    weights: &FeatureWeights<T>,
    params: &IntensityParams,
) -> Vec<ScoredLine<T>> {
    let k = compute_k(lines.len(), params);
    select_diverse(lines, weights, k)
}

/// Diversity-first selection of up to `k` candidate lines.
///
/// Candidates are lines with positive intensity, ranked by intensity
/// (descending) then line index. Construct kinds are visited in descending
/// weight order; for each kind not yet covered by a selected line, the best
/// ranked candidate containing it is taken. Remaining slots are filled in
/// rank order.
pub fn select_diverse<T: Float>(
    lines: &[SourceLine],
    weights: &FeatureWeights<T>,
    k: usize,
) -> Vec<ScoredLine<T>> {
    let mut ranked: Vec<ScoredLine<T>> = score_lines(lines, weights)
        .into_iter()
        .filter(|s| s.intensity > T::zero())
        .collect();
    if ranked.is_empty() {
        log::warn!("no line has positive semantic intensity; nothing to retrieve");
        return Vec::new();
    }
    ranked.sort_by(|a, b| {
        b.intensity
            .partial_cmp(&a.intensity)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.line.index.cmp(&b.line.index))
    });

    let mut taken = vec![false; ranked.len()];
    let mut order = Vec::with_capacity(k.min(ranked.len()));
    let mut covered = ConstructSet::new();
    for kind in weights.kinds_by_weight() {
        if order.len() >= k {
            break;
        }
        if weights.get(kind) <= T::zero() || covered.contains(&kind) {
            continue;
        }
        if let Some(pos) = (0..ranked.len()).find(|&i| !taken[i] && ranked[i].line.constructs.contains(&kind)) {
            taken[pos] = true;
            covered.extend(ranked[pos].line.constructs.iter().copied());
            order.push(pos);
        }
    }
    for (i, t) in taken.iter_mut().enumerate() {
        if order.len() >= k {
            break;
        }
        if !*t {
            *t = true;
            order.push(i);
        }
    }
    order.into_iter().map(|i| ranked[i].clone()).collect()
}

/// Uniform sample of `k` lines without replacement, returned in line order.
pub fn select_random_k(lines: &[SourceLine], k: usize, seed: u64) -> Vec<SourceLine> {
    let k = k.min(lines.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, lines.len(), k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| lines[i].clone()).collect()
}

pub fn select_all(lines: &[SourceLine]) -> Vec<SourceLine> {
    lines.to_vec()
}

/// Query-line selection strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RetrievalMode {
    #[default]
    Intensity,
    /// Random lines, as many as the intensity strategy would pick.
    Random { seed: u64 },
    All,
}

impl RetrievalMode {
    pub fn select<T: Float>(
        &self,
        lines: &[SourceLine],
        weights: &FeatureWeights<T>,
        params: &IntensityParams,
    ) -> Vec<SourceLine> {
        match *self {
            RetrievalMode::Intensity => select_top_k_lines(lines, weights, params)
                .into_iter()
                .map(|s| s.line)
                .collect(),
            RetrievalMode::Random { seed } => {
                select_random_k(lines, compute_k(lines.len(), params), seed)
            }
            RetrievalMode::All => select_all(lines),
        }
    }
}

impl FromStr for RetrievalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "intensity" => Ok(RetrievalMode::Intensity),
            "random" => Ok(RetrievalMode::Random { seed: 0 }),
            "all" => Ok(RetrievalMode::All),
            other => Err(format!("unknown retrieval mode `{other}` (intensity|random|all)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudocode::parse_function;
    use proptest::prelude::*;
    use ConstructKind::*;

    fn default_params() -> IntensityParams {
        IntensityParams::default()
    }

    #[test]
    fn compute_k_examples() {
        assert_eq!(compute_k(4, &default_params()), 4);
        assert_eq!(compute_k(23, &default_params()), 7);
        assert_eq!(compute_k(150, &default_params()), 10);
        assert_eq!(compute_k(1, &default_params()), 1);
    }

    #[test]
    fn params_validation() {
        assert!(default_params().validate().is_ok());
        let bad = IntensityParams {
            base_lines: 11,
            ..default_params()
        };
        assert!(bad.validate().is_err());
        let zero_step = IntensityParams { step: 0, ..default_params() };
        assert!(zero_step.validate().is_err());
    }

    #[test]
    fn weights_from_frequencies() {
        // Assignment x2, Return x1, Loop x1
        let db = ["x = y;", "a = b;", "return 0;", "while ( x )"];
        let w: FeatureWeights<f64> = derive_feature_weights(db, &Lexicon::default());
        assert_eq!(w.get(Assignment), 0.5);
        assert_eq!(w.get(Return), 0.25);
        assert_eq!(w.get(Loop), 0.25);
        assert_eq!(w.get(FunctionCall), 0.0);
        assert!((w.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_database_gives_zero_weights() {
        let w: FeatureWeights<f64> = derive_feature_weights([], &Lexicon::default());
        assert!(w.is_zero());
    }

    #[test]
    fn single_kind_database() {
        let w: FeatureWeights<f32> = derive_feature_weights(["return 1;", "return v2;"], &Lexicon::default());
        assert_eq!(w.get(Return), 1.0);
        assert_eq!(w.sum(), 1.0);
    }

    fn uniform_weights() -> FeatureWeights<f64> {
        let pairs: Vec<_> = ConstructKind::ALL.iter().map(|&k| (k, 0.125)).collect();
        FeatureWeights::from_pairs(&pairs).unwrap()
    }

    #[test]
    fn fewer_candidates_than_k() {
        let f = parse_function("{\nx = 1;\n\nreturn x;\n}\nfoo();\n}").unwrap();
        let picked = select_diverse(&f.lines, &uniform_weights(), 5);
        assert_eq!(picked.len(), 3);
    }

    #[test]
    fn ties_prefer_earlier_lines() {
        let f = parse_function("a = b;\nc = d;").unwrap();
        let w = FeatureWeights::from_pairs(&[(Assignment, 1.0)]).unwrap();
        let picked = select_diverse(&f.lines, &w, 1);
        assert_eq!(picked[0].line.index, 1);
    }

    #[test]
    fn no_candidates_gives_empty_selection() {
        let f = parse_function("{\n}").unwrap();
        assert!(select_top_k(&f, &uniform_weights(), &default_params()).is_empty());
    }

    #[test]
    fn random_selection_is_reproducible() {
        let text: Vec<String> = (0..20).map(|i| format!("v{i} = {i};")).collect();
        let f = parse_function(&text.join("\n")).unwrap();
        let a = select_random_k(&f.lines, 6, 42);
        let b = select_random_k(&f.lines, 6, 42);
        assert_eq!(a, b);
        let idx: std::collections::BTreeSet<_> = a.iter().map(|l| l.index).collect();
        assert_eq!(idx.len(), 6);
        assert_eq!(select_random_k(&f.lines, 20, 7).len(), 20);
    }

    #[test]
    fn select_all_keeps_everything_in_order() {
        let f = parse_function("a = 1;\n\nreturn a;").unwrap();
        let all = select_all(&f.lines);
        assert_eq!(all.len(), 3);
        assert!(all[1].constructs.is_empty());
        assert_eq!(all.iter().map(|l| l.index).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn retrieval_mode_parsing() {
        assert_eq!("all".parse::<RetrievalMode>(), Ok(RetrievalMode::All));
        assert!("best".parse::<RetrievalMode>().is_err());
    }

    const LINE_POOL: &[&str] = &[
        "v1 = v2;", "return v1;", "foo(v3);", "if ( v4 )", "while ( v5 )", "int v6;",
        "v7 += 1;", "{", "}", "", "v8 = bar(v9) + 2;", "unsigned int v10 = 0;",
    ];

    fn arb_function() -> impl Strategy<Value = DecompiledFunction> {
        prop::collection::vec(prop::sample::select(LINE_POOL), 1..40)
            .prop_map(|ls| parse_function(&format!("x;\n{}", ls.join("\n"))).unwrap())
    }

    fn arb_weights() -> impl Strategy<Value = FeatureWeights<f64>> {
        prop::collection::vec(0u32..5, 8).prop_map(|v| {
            let pairs: Vec<_> = ConstructKind::ALL
                .iter()
                .zip(v)
                .map(|(&k, x)| (k, x as f64 / 7.0))
                .collect();
            FeatureWeights::from_pairs(&pairs).unwrap()
        })
    }

    proptest! {
        #[test]
        fn compute_k_is_monotone_and_capped(n in 1usize..600) {
            let p = default_params();
            prop_assert!(compute_k(n, &p) <= compute_k(n + 1, &p));
            if n > p.min_lines {
                prop_assert!(compute_k(n, &p) <= p.max_lines);
            }
            prop_assert!(compute_k(n, &p) >= 1);
        }

        #[test]
        fn intensity_is_sum_of_weights(f in arb_function(), w in arb_weights()) {
            for s in score_lines(&f.lines, &w) {
                let expected: f64 = s.line.constructs.iter().map(|&k| w.get(k)).sum();
                prop_assert!((s.intensity - expected).abs() < 1e-12);
            }
        }

        #[test]
        fn selection_is_a_duplicate_free_subset(f in arb_function(), w in arb_weights(), k in 1usize..12) {
            let picked = select_diverse(&f.lines, &w, k);
            let candidates = f.lines.iter().filter(|l| w.score(&l.constructs) > 0.0).count();
            prop_assert_eq!(picked.len(), k.min(candidates));
            let mut seen = std::collections::BTreeSet::new();
            for s in &picked {
                prop_assert!(s.intensity > 0.0);
                prop_assert!(seen.insert(s.line.index));
            }
            // after the diversity prefix, intensities never increase
            let kinds_with_weight = ConstructKind::ALL.iter().filter(|&&k| w.get(k) > 0.0).count();
            let prefix = kinds_with_weight.min(picked.len());
            for pair in picked[prefix..].windows(2) {
                prop_assert!(pair[0].intensity >= pair[1].intensity);
            }
        }
    }
}

//! Train/validation/test partitions for every evaluation regime: classic
//! leave-one-domain-out, classwise held-out domains, prior injection, and the
//! incremental domain-augmentation schedule.
//!
//! All constructors are pure functions of `(bundle labels, config, seed)` and
//! return index sets sorted ascending, so two runs produce identical splits.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetBundle;
use crate::error::{DgError, Result};
use crate::rng::{salt, Stream};

/// For each class, the domain whose samples are reserved for test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CwdgAssignment {
    /// `held_out[class_id] = domain_id`.
    pub held_out: Vec<usize>,
    /// Seed used when the assignment was sampled.
    pub seed: Option<u64>,
}

impl CwdgAssignment {
    pub fn new(held_out: Vec<usize>) -> Self {
        CwdgAssignment {
            held_out,
            seed: None,
        }
    }

    /// The constant assignment sending every class to `domain`.
    pub fn constant(class_count: usize, domain: usize) -> Self {
        CwdgAssignment::new(vec![domain; class_count])
    }

    /// Uniform draw over all `S^C` assignments (constant ones included).
    pub fn sample_uniform(class_count: usize, domain_count: usize, seed: u64) -> Self {
        let mut stream = Stream::from_parts(&[seed, salt::ASSIGNMENT]);
        CwdgAssignment {
            held_out: (0..class_count).map(|_| stream.below(domain_count)).collect(),
            seed: Some(seed),
        }
    }

    /// Named preset assignments for the 7-class, 4-domain configuration
    /// (domain order: photo-like 0, art-like 1, cartoon-like 2, sketch-like
    /// 3). `table7-1` through `table7-5`.
    pub fn preset(name: &str) -> Option<Self> {
        let held_out = match name {
            "table7-1" => vec![0, 0, 2, 3, 0, 1, 2],
            "table7-2" => vec![1, 2, 3, 0, 1, 0, 2],
            "table7-3" => vec![2, 1, 2, 1, 3, 2, 0],
            "table7-4" => vec![3, 0, 1, 3, 2, 1, 3],
            "table7-5" => vec![1, 2, 0, 1, 2, 0, 3],
            _ => return None,
        };
        Some(CwdgAssignment::new(held_out))
    }

    pub fn validate(&self, class_count: usize, domain_count: usize) -> Result<()> {
        if self.held_out.len() != class_count {
            return Err(DgError::Config(format!(
                "assignment covers {} classes, bundle has {class_count}",
                self.held_out.len()
            )));
        }
        if let Some(&bad) = self.held_out.iter().find(|&&d| d >= domain_count) {
            return Err(DgError::Config(format!(
                "assignment references domain {bad}, bundle has {domain_count}"
            )));
        }
        Ok(())
    }
}

/// Declarative description of which samples belong to train / val / test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Regime tag: `tdg`, `cwdg`, `prior-injection`, or `incremental-step-k`.
    pub regime: String,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    /// Checks the three index sets are pairwise disjoint and in range.
    pub fn validate(&self, bundle_len: usize) -> Result<()> {
        let mut seen = vec![false; bundle_len];
        for (name, set) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for &i in set.iter() {
                if i >= bundle_len {
                    return Err(DgError::Config(format!(
                        "{name} index {i} out of range for {bundle_len} samples"
                    )));
                }
                if seen[i] {
                    return Err(DgError::Config(format!(
                        "index {i} appears in more than one set"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| DgError::Parse {
            path: path.into(),
            message: e.to_string(),
        })?;
        fs::write(path, json).map_err(|e| DgError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DgError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| DgError::Parse {
            path: path.into(),
            message: e.to_string(),
        })
    }
}

fn check_domain(bundle: &DatasetBundle, domain: usize) -> Result<()> {
    if domain >= bundle.domain_count() {
        return Err(DgError::Config(format!(
            "domain {domain} out of range for {} domains",
            bundle.domain_count()
        )));
    }
    Ok(())
}

/// Leave-one-domain-out: test is the held-out domain, train is everything
/// else, validation is carved separately.
pub fn make_tdg_split(bundle: &DatasetBundle, test_domain: usize) -> Result<SplitSpec> {
    check_domain(bundle, test_domain)?;
    if bundle.domain_count() < 2 {
        return Err(DgError::Config(
            "leave-one-domain-out needs at least 2 domains".into(),
        ));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..bundle.len() {
        if bundle.domain_of(i) == test_domain {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    Ok(SplitSpec {
        regime: "tdg".into(),
        train,
        val: Vec::new(),
        test,
    })
}

/// Classwise split: for each class, the assigned domain's samples go to
/// test; everything else trains.
pub fn make_cwdg_split(bundle: &DatasetBundle, assignment: &CwdgAssignment) -> Result<SplitSpec> {
    assignment.validate(bundle.class_count(), bundle.domain_count())?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..bundle.len() {
        if bundle.domain_of(i) == assignment.held_out[bundle.class_of(i)] {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    Ok(SplitSpec {
        regime: "cwdg".into(),
        train,
        val: Vec::new(),
        test,
    })
}

/// Number of classwise assignments: `S^C`. Errors past `2^63`.
pub fn count_cwdg_assignments(domain_count: u64, class_count: u64) -> Result<u64> {
    if domain_count == 0 || class_count == 0 {
        return Err(DgError::Config(
            "assignment count needs at least one domain and one class".into(),
        ));
    }
    let mut total: u128 = 1;
    for _ in 0..class_count {
        total *= domain_count as u128;
        if total > 1u128 << 63 {
            return Err(DgError::Config(format!(
                "{domain_count}^{class_count} exceeds 2^63"
            )));
        }
    }
    Ok(total as u64)
}

/// Share of each injected cell that moves into train (the remainder stays
/// in the test domain so held-out accuracy on injected classes is
/// measurable).
pub const INJECTED_TRAIN_FRACTION: f64 = 0.5;

/// Single-source training with a classwise domain override: non-injected
/// classes train from `base_domain`; injected classes train from a fixed
/// leading share of their `injected_domain` cell. Test is the full injected
/// domain minus the exact train samples.
pub fn make_prior_injection_split(
    bundle: &DatasetBundle,
    base_domain: usize,
    injected: &BTreeSet<usize>,
    injected_domain: usize,
) -> Result<SplitSpec> {
    check_domain(bundle, base_domain)?;
    check_domain(bundle, injected_domain)?;
    if base_domain == injected_domain {
        return Err(DgError::Config(
            "base and injected domains must differ".into(),
        ));
    }
    if let Some(&bad) = injected.iter().find(|&&c| c >= bundle.class_count()) {
        return Err(DgError::Config(format!(
            "injected class {bad} out of range for {} classes",
            bundle.class_count()
        )));
    }

    let mut train = Vec::new();
    for c in 0..bundle.class_count() {
        if injected.contains(&c) {
            let cell = bundle.cell_indices(c, injected_domain);
            let take = (INJECTED_TRAIN_FRACTION * cell.len() as f64 + 0.5).floor() as usize;
            train.extend_from_slice(&cell[..take.min(cell.len())]);
        } else {
            train.extend(bundle.cell_indices(c, base_domain));
        }
    }
    train.sort_unstable();

    let test: Vec<usize> = bundle
        .domain_indices(injected_domain)
        .into_iter()
        .filter(|i| train.binary_search(i).is_err())
        .collect();

    Ok(SplitSpec {
        regime: "prior-injection".into(),
        train,
        val: Vec::new(),
        test,
    })
}

/// Round-half-up per-cell quotas, then adjust the largest cell so the total
/// is exact.
fn stratified_quotas(cell_sizes: &[usize], target: usize) -> Vec<usize> {
    let pool: usize = cell_sizes.iter().sum();
    debug_assert!(target <= pool);
    let mut quotas: Vec<usize> = cell_sizes
        .iter()
        .map(|&n| ((n as f64 * target as f64 / pool as f64) + 0.5).floor() as usize)
        .map(|q| q.min(target))
        .collect();
    for (q, &n) in quotas.iter_mut().zip(cell_sizes) {
        *q = (*q).min(n);
    }
    let mut total: i64 = quotas.iter().map(|&q| q as i64).sum();
    while total != target as i64 {
        // adjust the largest quota (first one on ties)
        let idx = (0..quotas.len())
            .max_by_key(|&i| (quotas[i], std::cmp::Reverse(i)))
            .expect("nonempty quotas");
        if total > target as i64 {
            quotas[idx] -= 1;
            total -= 1;
        } else if quotas[idx] < cell_sizes[idx] {
            quotas[idx] += 1;
            total += 1;
        } else {
            // largest is saturated; grow the largest unsaturated cell
            let idx = (0..quotas.len())
                .filter(|&i| quotas[i] < cell_sizes[i])
                .max_by_key(|&i| (quotas[i], std::cmp::Reverse(i)))
                .expect("target below pool size");
            quotas[idx] += 1;
            total += 1;
        }
    }
    quotas
}

/// Incremental domain augmentation: step `k` trains on `order[0..=k]`,
/// subsampled (stratified per class-and-domain, seeded) down to the size of
/// step 0's train pool; test is fixed to `test_domain` throughout.
pub fn make_incremental_schedule(
    bundle: &DatasetBundle,
    test_domain: usize,
    order: &[usize],
    seed: u64,
) -> Result<Vec<SplitSpec>> {
    check_domain(bundle, test_domain)?;
    if order.contains(&test_domain) {
        return Err(DgError::Config(format!(
            "order contains the test domain {test_domain}"
        )));
    }
    let expected: BTreeSet<usize> = (0..bundle.domain_count())
        .filter(|&d| d != test_domain)
        .collect();
    let got: BTreeSet<usize> = order.iter().copied().collect();
    if got != expected || order.len() != expected.len() {
        return Err(DgError::Config(format!(
            "order {order:?} is not a permutation of the non-test domains"
        )));
    }

    let test = bundle.domain_indices(test_domain);
    let target: usize = bundle.domain_indices(order[0]).len();

    let mut steps = Vec::with_capacity(order.len());
    for k in 0..order.len() {
        // cells in (order position, class) order
        let mut cells: Vec<(usize, usize, Vec<usize>)> = Vec::new();
        for &d in &order[..=k] {
            for c in 0..bundle.class_count() {
                cells.push((c, d, bundle.cell_indices(c, d)));
            }
        }
        let sizes: Vec<usize> = cells.iter().map(|(_, _, v)| v.len()).collect();
        let quotas = stratified_quotas(&sizes, target);

        let mut train = Vec::with_capacity(target);
        for ((c, d, cell), &quota) in cells.iter().zip(&quotas) {
            if quota == cell.len() {
                train.extend_from_slice(cell);
            } else {
                let mut stream = Stream::from_parts(&[
                    seed,
                    salt::SUBSAMPLE,
                    k as u64,
                    *c as u64,
                    *d as u64,
                ]);
                for pos in stream.choose_sorted(cell.len(), quota) {
                    train.push(cell[pos]);
                }
            }
        }
        train.sort_unstable();
        steps.push(SplitSpec {
            regime: format!("incremental-step-{k}"),
            train,
            val: Vec::new(),
            test: test.clone(),
        });
    }
    Ok(steps)
}

/// Moves a stratified, seeded share of every `(class, domain)` train cell
/// into validation. Per-cell take is `round(fraction * n)`, half up.
pub fn carve_validation(
    split: &SplitSpec,
    bundle: &DatasetBundle,
    fraction: f64,
    seed: u64,
) -> Result<SplitSpec> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DgError::Config(format!(
            "validation fraction {fraction} outside (0, 1)"
        )));
    }
    // group train indices by cell
    let mut cells: std::collections::BTreeMap<(usize, usize), Vec<usize>> =
        std::collections::BTreeMap::new();
    for &i in &split.train {
        cells
            .entry((bundle.class_of(i), bundle.domain_of(i)))
            .or_default()
            .push(i);
    }

    let mut train = Vec::new();
    let mut val = split.val.clone();
    for ((class_id, domain_id), cell) in cells {
        let take = (fraction * cell.len() as f64 + 0.5).floor() as usize;
        if take >= cell.len() {
            return Err(DgError::Config(format!(
                "fraction {fraction} empties train cell ({class_id}, {domain_id})"
            )));
        }
        let mut stream = Stream::from_parts(&[
            seed,
            salt::CARVE,
            class_id as u64,
            domain_id as u64,
        ]);
        let chosen: BTreeSet<usize> = stream
            .choose_sorted(cell.len(), take)
            .into_iter()
            .map(|pos| cell[pos])
            .collect();
        for &i in &cell {
            if chosen.contains(&i) {
                val.push(i);
            } else {
                train.push(i);
            }
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(SplitSpec {
        regime: split.regime.clone(),
        train,
        val,
        test: split.test.clone(),
    })
}

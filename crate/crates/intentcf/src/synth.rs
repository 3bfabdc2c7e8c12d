//! Synthetic planted-structure dataset: two user/item blocks with
//! dense within-block interactions and no cross-block edges, split
//! into train and test. Block membership is the ground truth a
//! trained model must recover.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_users: usize,
    pub num_items: usize,
    /// Probability of each within-block (user, item) pair being an edge.
    pub density: f64,
    /// Fraction of generated edges held out as test.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_users: 40,
            num_items: 40,
            density: 0.8,
            test_fraction: 0.1,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_users < 2 || self.num_items < 2 {
            return Err(Error::Config(
                "synthetic dataset needs at least 2 users and 2 items".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::Config(format!(
                "density must lie in [0, 1], got {}",
                self.density
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!(
                "test_fraction must lie in [0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Generates the two-block dataset. Exactly
/// `round(test_fraction * |edges|)` edges go to test, never taking a
/// user's last train edge. Deterministic in the seed.
pub fn generate(spec: &SyntheticSpec) -> Result<(Vec<(u32, u32)>, Vec<(u32, u32)>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let users_per_block = spec.num_users / 2;
    let items_per_block = spec.num_items / 2;

    let mut edges = Vec::new();
    for u in 0..spec.num_users {
        let block = if u < users_per_block { 0 } else { 1 };
        let item_lo = block * items_per_block;
        let item_hi = if block == 0 {
            items_per_block
        } else {
            spec.num_items
        };
        for i in item_lo..item_hi {
            if rng.random_bool(spec.density) {
                edges.push((u as u32, i as u32));
            }
        }
    }
    if edges.is_empty() {
        return Err(Error::Config(
            "density too low: the generated graph has no edges".into(),
        ));
    }

    let mut train_degree = vec![0usize; spec.num_users];
    for &(u, _) in &edges {
        train_degree[u as usize] += 1;
    }
    let target_test = (spec.test_fraction * edges.len() as f64).round() as usize;
    edges.shuffle(&mut rng);

    let mut train = Vec::with_capacity(edges.len() - target_test);
    let mut test = Vec::with_capacity(target_test);
    for (u, i) in edges {
        if test.len() < target_test && train_degree[u as usize] > 1 {
            test.push((u, i));
            train_degree[u as usize] -= 1;
        } else {
            train.push((u, i));
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

fn render(edges: &[(u32, u32)], spec: &SyntheticSpec, which: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# synthetic two-block dataset ({which} split), {} users x {} items, \
         density {}, test_fraction {}, seed {}",
        spec.num_users, spec.num_items, spec.density, spec.test_fraction, spec.seed
    );
    for (u, i) in edges {
        let _ = writeln!(out, "{u} {i}");
    }
    out
}

/// Generates and writes the train/test interaction files.
pub fn write_dataset(spec: &SyntheticSpec, train_path: &Path, test_path: &Path) -> Result<()> {
    let (train, test) = generate(spec)?;
    std::fs::write(train_path, render(&train, spec, "train"))
        .map_err(|e| Error::io(train_path.display().to_string(), e))?;
    std::fs::write(test_path, render(&test, spec, "test"))
        .map_err(|e| Error::io(test_path.display().to_string(), e))?;
    Ok(())
}

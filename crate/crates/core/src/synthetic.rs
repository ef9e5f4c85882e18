//! Generators for small synthetic corpora with known structure.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Each user sees `prefix` random items and then alternates between two
/// items of their own until the sequence has `length` items. The next item
/// is always the one seen two steps earlier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopyTask {
    pub users: usize,
    pub items: usize,
    #[serde(default = "copy_length")]
    pub length: usize,
    #[serde(default = "copy_prefix")]
    pub prefix: usize,
    #[serde(default)]
    pub seed: u64,
}

fn copy_length() -> usize {
    20
}
fn copy_prefix() -> usize {
    5
}

impl CopyTask {
    pub fn new(users: usize, items: usize, seed: u64) -> Self {
        CopyTask { users, items, length: copy_length(), prefix: copy_prefix(), seed }
    }

    pub fn generate(&self) -> Result<Corpus> {
        if self.items < self.prefix + 2 || self.length < self.prefix + 2 || self.users == 0 {
            return Err(Error::Config(format!("copy task needs at least {} items and positions", self.prefix + 2)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let catalog: Vec<usize> = (0..self.items).collect();
        let seqs = (0..self.users)
            .map(|_| {
                let picked: Vec<usize> = catalog.choose_multiple(&mut rng, self.prefix + 2).copied().collect();
                let (prefix, pair) = picked.split_at(self.prefix);
                let mut s = prefix.to_vec();
                s.extend((0..self.length - self.prefix).map(|t| pair[t % 2]));
                s
            })
            .collect();
        Corpus::from_dense(self.items, seqs)
    }
}

/// The catalog is cut into categories of consecutive ids; each user walks
/// through `length` distinct items of one category, so the next item is
/// always in the category but never already seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExclusionTask {
    pub users: usize,
    #[serde(default = "exclusion_categories")]
    pub categories: usize,
    #[serde(default = "exclusion_category_size")]
    pub category_size: usize,
    #[serde(default = "exclusion_length")]
    pub length: usize,
    #[serde(default)]
    pub seed: u64,
}

fn exclusion_categories() -> usize {
    20
}
fn exclusion_category_size() -> usize {
    10
}
fn exclusion_length() -> usize {
    8
}

impl ExclusionTask {
    pub fn new(users: usize, seed: u64) -> Self {
        ExclusionTask {
            users,
            categories: exclusion_categories(),
            category_size: exclusion_category_size(),
            length: exclusion_length(),
            seed,
        }
    }

    pub fn item_count(&self) -> usize {
        self.categories * self.category_size
    }

    pub fn category_of(&self, item: usize) -> usize {
        item / self.category_size
    }

    pub fn generate(&self) -> Result<Corpus> {
        if self.length > self.category_size || self.length < 2 || self.categories == 0 || self.users == 0 {
            return Err(Error::Config(format!(
                "exclusion task: length {} must be in 2..={} and sizes positive",
                self.length, self.category_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let seqs = (0..self.users)
            .map(|_| {
                let c = rng.random_range(0..self.categories);
                let mut members: Vec<usize> = (c * self.category_size..(c + 1) * self.category_size).collect();
                members.shuffle(&mut rng);
                members.truncate(self.length);
                members
            })
            .collect();
        Corpus::from_dense(self.item_count(), seqs)
    }
}

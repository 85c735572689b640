//! Version-pure training batches with fixed-size dynamic label spaces.
//!
//! Each batch carries its own label space: the deduplicated gold codes of its
//! notes plus negatives drawn uniformly without replacement from every other code
//! of the same version, shuffled together to exactly `|L|` entries.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CodeKey, CodeRegistry, Document, Version};
use crate::error::{Error, Result};

pub const DEFAULT_LABEL_SPACE_SIZE: usize = 8192;
pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub codes: Vec<CodeKey>,
    pub pos_count: usize,
    pub neg_count: usize,
}

impl LabelSpace {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// A fixed label space over the given codes, e.g. a whole stratum at evaluation time.
    pub fn fixed(codes: Vec<CodeKey>) -> Self {
        Self {
            pos_count: codes.len(),
            neg_count: 0,
            codes,
        }
    }

    /// `targets[i][j]` is true iff code `j` is gold for document `i`.
    pub fn targets(&self, documents: &[&Document]) -> Array2<bool> {
        Array2::from_shape_fn((documents.len(), self.codes.len()), |(i, j)| {
            let key = &self.codes[j];
            key.version == documents[i].version && documents[i].codes.contains(&key.code_id)
        })
    }
}

/// All codes of each version, the pool negatives are drawn from.
#[derive(Clone, Debug, Default)]
pub struct CodePools {
    pools: BTreeMap<Version, Vec<CodeKey>>,
}

impl CodePools {
    pub fn from_registry(registry: &CodeRegistry) -> Self {
        let mut pools: BTreeMap<Version, Vec<CodeKey>> = BTreeMap::new();
        for e in registry.entries() {
            pools.entry(e.version.clone()).or_default().push(e.key());
        }
        Self { pools }
    }

    pub fn get(&self, version: &Version) -> &[CodeKey] {
        self.pools.get(version).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Builds the label space of one version-pure batch.
///
/// If the pool holds fewer than `size` codes, the space shrinks to the whole pool
/// (with a warning) instead of failing.
pub fn build_label_space(
    documents: &[&Document],
    pool: &[CodeKey],
    size: usize,
    rng: &mut impl Rng,
) -> Result<LabelSpace> {
    let Some(first) = documents.first() else {
        return Err(Error::Empty("label space for an empty batch".into()));
    };
    let version = &first.version;
    if let Some(d) = documents.iter().find(|d| &d.version != version) {
        return Err(Error::Config(format!(
            "batch mixes versions {version} and {} (doc {})",
            d.version, d.doc_id
        )));
    }
    let positives: BTreeSet<CodeKey> = documents.iter().flat_map(|d| d.gold_keys()).collect();
    if positives.len() > size {
        return Err(Error::LabelSpaceOverflow {
            positives: positives.len(),
            capacity: size,
        });
    }
    let pool_set: BTreeSet<&CodeKey> = pool.iter().collect();
    if let Some(missing) = positives.iter().find(|k| !pool_set.contains(k)) {
        return Err(Error::MissingDescriptions(vec![missing.to_string()]));
    }
    let eligible: Vec<&CodeKey> = pool.iter().filter(|k| !positives.contains(*k)).collect();
    let wanted = size - positives.len();
    if eligible.len() < wanted {
        log::debug!(
            "code pool for {version} has {} codes, fewer than |L| = {size}; using the whole pool",
            pool.len()
        );
    }
    let n_neg = wanted.min(eligible.len());
    let pos_count = positives.len();
    let mut codes: Vec<CodeKey> = positives.into_iter().collect();
    codes.extend(index::sample(rng, eligible.len(), n_neg).into_iter().map(|i| eligible[i].clone()));
    codes.shuffle(rng);
    Ok(LabelSpace {
        codes,
        pos_count,
        neg_count: n_neg,
    })
}

#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub documents: Vec<&'a Document>,
    pub label_space: LabelSpace,
    pub targets: Array2<bool>,
}

/// Groups documents by version, shuffles and chunks each group, then shuffles the
/// batch order globally. The last partial batch of each version is kept.
pub fn plan_epoch<'a>(documents: &[&'a Document], batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<&'a Document>> {
    let batch_size = batch_size.max(1);
    let mut groups: BTreeMap<&Version, Vec<&'a Document>> = BTreeMap::new();
    for d in documents {
        groups.entry(&d.version).or_default().push(*d);
    }
    let mut batches = Vec::new();
    for (_, mut docs) in groups {
        docs.shuffle(rng);
        batches.extend(docs.chunks(batch_size).map(<[_]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

/// Lazily materializes the batches of one epoch, sampling each label space on demand.
pub struct EpochBatches<'a, 'r, R: Rng> {
    plan: std::vec::IntoIter<Vec<&'a Document>>,
    pools: &'a CodePools,
    size: usize,
    rng: &'r mut R,
}

impl<R: Rng> EpochBatches<'_, '_, R> {
    pub fn remaining(&self) -> usize {
        self.plan.len()
    }
}

impl<'a, R: Rng> Iterator for EpochBatches<'a, '_, R> {
    type Item = Result<Batch<'a>>;

    fn next(&mut self) -> Option<Self::Item> {
        let documents = self.plan.next()?;
        let pool = self.pools.get(&documents[0].version);
        Some(build_label_space(&documents, pool, self.size, self.rng).map(|label_space| Batch {
            targets: label_space.targets(&documents),
            documents,
            label_space,
        }))
    }
}

pub fn epoch_batches<'a, 'r, R: Rng>(
    documents: &[&'a Document],
    pools: &'a CodePools,
    batch_size: usize,
    label_space_size: usize,
    rng: &'r mut R,
) -> EpochBatches<'a, 'r, R> {
    let plan = plan_epoch(documents, batch_size, rng);
    EpochBatches {
        plan: plan.into_iter(),
        pools,
        size: label_space_size,
        rng,
    }
}

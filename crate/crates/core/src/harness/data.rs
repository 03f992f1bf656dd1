use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::phantom::{Manifest, Split};
use crate::rvol;
use crate::volume::{Mask, Volume};

/// A cohort loaded from its manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    volumes: BTreeMap<String, BTreeMap<String, Volume>>,
    masks: BTreeMap<String, Mask>,
}

impl Dataset {
    /// Loads every listed volume and mask; fails on a missing modality.
    pub fn load(manifest_path: &Path) -> Result<Dataset> {
        let manifest = Manifest::load(manifest_path)?;
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let mut volumes = BTreeMap::new();
        let mut masks = BTreeMap::new();
        for entry in &manifest.subjects {
            let mut per = BTreeMap::new();
            for modality in &manifest.modalities {
                let rel = entry.volumes.get(modality).ok_or_else(|| Error::MissingModality {
                    subject: entry.id.clone(),
                    modality: modality.clone(),
                })?;
                per.insert(modality.clone(), rvol::read_volume(&root.join(rel))?);
            }
            volumes.insert(entry.id.clone(), per);
            masks.insert(entry.id.clone(), rvol::read_mask(&root.join(&entry.mask))?);
        }
        Ok(Dataset {
            root,
            manifest,
            volumes,
            masks,
        })
    }

    pub fn ids(&self, split: Split) -> Vec<String> {
        self.manifest.ids(split)
    }

    pub fn volume(&self, id: &str, modality: &str) -> Result<&Volume> {
        self.volumes
            .get(id)
            .and_then(|m| m.get(modality))
            .ok_or_else(|| Error::MissingModality {
                subject: id.to_string(),
                modality: modality.to_string(),
            })
    }

    pub fn volumes(&self, id: &str) -> Result<&BTreeMap<String, Volume>> {
        self.volumes
            .get(id)
            .ok_or_else(|| Error::Config(format!("unknown subject {id}")))
    }

    pub fn mask(&self, id: &str) -> Result<&Mask> {
        self.masks
            .get(id)
            .ok_or_else(|| Error::Config(format!("unknown subject {id}")))
    }
}

/// `ceil(f * n)` subjects, at least one.
pub fn subset_size(fraction: f64, n: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::EmptySubset(fraction));
    }
    // Guard against 0.3 * 51 landing a hair above an integer.
    let k = ((fraction * n as f64) - 1e-9).ceil() as usize;
    if k == 0 {
        return Err(Error::EmptySubset(fraction));
    }
    Ok(k.min(n))
}

const SUBSET_STREAM: u64 = 0x5b5e_7000;
const DONOR_STREAM: u64 = 0xd0_4042;

fn permutation(pool: &[String], seed: u64, stream: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut p = pool.to_vec();
    p.shuffle(&mut rng);
    p
}

/// Training subset for `fraction`: a prefix of one seeded permutation, so
/// subsets for growing fractions are nested.
pub fn nested_subset(pool: &[String], fraction: f64, seed: u64) -> Result<Vec<String>> {
    let k = subset_size(fraction, pool.len())?;
    Ok(permutation(pool, seed, SUBSET_STREAM)[..k].to_vec())
}

/// The single prior-donor subject, drawn from the training pool.
pub fn pick_donor(pool: &[String], seed: u64) -> Result<String> {
    permutation(pool, seed, DONOR_STREAM)
        .into_iter()
        .next()
        .ok_or(Error::EmptyDataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn published_subset_sizes() {
        let sizes: Vec<usize> = [0.075, 0.15, 0.30, 0.50, 1.0]
            .iter()
            .map(|&f| subset_size(f, 51).unwrap())
            .collect();
        assert_eq!(sizes, [4, 8, 16, 26, 51]);
        assert!(matches!(subset_size(0.0, 51), Err(Error::EmptySubset(_))));
    }

    #[test]
    fn subsets_are_nested_and_deterministic() {
        let p = pool(51);
        let mut prev: Vec<String> = Vec::new();
        for f in [0.075, 0.15, 0.30, 0.50, 1.0] {
            let s = nested_subset(&p, f, 3).unwrap();
            assert!(prev.iter().all(|x| s.contains(x)));
            prev = s;
        }
        assert_eq!(nested_subset(&p, 1.0, 3).unwrap().len(), 51);
        assert_eq!(nested_subset(&p, 0.15, 3).unwrap(), nested_subset(&p, 0.15, 3).unwrap());
        assert_ne!(nested_subset(&p, 0.15, 3).unwrap(), nested_subset(&p, 0.15, 4).unwrap());
        assert!(p.contains(&pick_donor(&p, 3).unwrap()));
    }
}

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::freq::{crop_shape, disentangle, low_image, SplitConfig};
use crate::volume::{minmax_normalize, resize, Mask, Volume};

/// One subject's training or evaluation unit.
#[derive(Clone, Debug)]
pub struct ModalitySample {
    pub subject_id: String,
    pub target_id: String,
    /// Min-max normalized target volume.
    pub target_volume: Volume,
    pub mask: Mask,
    /// `(modality, low-frequency image)` pairs, target first.
    pub low_priors: Vec<(String, Volume)>,
}

impl ModalitySample {
    /// Normalizes `target`, then builds the prior list for `combo` from
    /// `donors`.
    pub fn new(
        subject_id: impl Into<String>,
        target_id: impl Into<String>,
        target: &Volume,
        mask: Mask,
        donors: &BTreeMap<String, Volume>,
        combo: &[String],
        split: SplitConfig,
    ) -> Result<Self> {
        let target_id = target_id.into();
        let target_volume = minmax_normalize(target)?;
        let low_priors = build_prior_list(&target_id, &target_volume, donors, combo, split)?;
        let sample = Self {
            subject_id: subject_id.into(),
            target_id,
            target_volume,
            mask,
            low_priors,
        };
        sample.validate(split)?;
        Ok(sample)
    }

    pub fn p(&self) -> usize {
        self.low_priors.len()
    }

    pub fn validate(&self, split: SplitConfig) -> Result<()> {
        if self.mask.shape() != self.target_volume.shape() {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} vs target {:?}",
                self.mask.shape(),
                self.target_volume.shape()
            )));
        }
        if self.low_priors.is_empty() {
            return Err(Error::ShapeMismatch("empty low-frequency prior list".into()));
        }
        let crop = crop_shape(self.target_volume.shape(), split.theta())?;
        for (name, prior) in &self.low_priors {
            if prior.shape() != crop.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "prior {name} has shape {:?}, crop shape is {crop:?}",
                    prior.shape()
                )));
            }
        }
        Ok(())
    }
}

/// `[target low, donor lows in combo order]`. Donors are resized to the
/// target shape and min-max normalized before splitting, so every entry has
/// the target's crop shape. Donor volumes need no annotation.
pub fn build_prior_list(
    target_id: &str,
    target: &Volume,
    donors: &BTreeMap<String, Volume>,
    combo: &[String],
    split: SplitConfig,
) -> Result<Vec<(String, Volume)>> {
    let mut list = vec![(
        target_id.to_string(),
        low_image(&disentangle(target, split)?),
    )];
    for modality in combo.iter().filter(|m| m.as_str() != target_id) {
        let donor = donors
            .get(modality)
            .ok_or_else(|| Error::MissingDonor(modality.clone()))?;
        let resized = resize(donor, target.shape())?;
        let normalized = minmax_normalize(&resized)?;
        list.push((modality.clone(), low_image(&disentangle(&normalized, split)?)));
    }
    Ok(list)
}

//! Frame-rate to sample-rate expansion.

use crate::dsp::features::ConditionFeatures;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Nearest-neighbour upsampling of features to `[feat_dim, n_frames·hop]`.
pub fn upsample_features(feat: &ConditionFeatures, hop: usize) -> Result<Tensor> {
    if hop == 0 {
        return Err(Error::invalid("upsample_features", "hop must be positive"));
    }
    let (n, d) = (feat.n_frames(), feat.feat_dim());
    let mut out = vec![0.0; d * n * hop];
    for j in 0..n {
        for (c, v) in feat.row(j).iter().enumerate() {
            out[c * n * hop + j * hop..c * n * hop + (j + 1) * hop].fill(*v);
        }
    }
    Tensor::new(vec![d, n * hop], out)
}

/// Sample-level voiced and unvoiced masks; complementary by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct VoicingMasks {
    pub voiced: Vec<f64>,
    pub unvoiced: Vec<f64>,
}

impl VoicingMasks {
    pub fn len(&self) -> usize {
        self.voiced.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voiced.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|v| **v > 0.0).count()
    }

    pub fn unvoiced_count(&self) -> usize {
        self.len() - self.voiced_count()
    }
}

/// Expands a frame-level V/UV flag by repetition. No learned layers touch
/// this path.
pub fn upsample_vuv(vuv: &[u8], hop: usize) -> Result<VoicingMasks> {
    if hop == 0 {
        return Err(Error::invalid("upsample_vuv", "hop must be positive"));
    }
    if let Some((i, v)) = vuv.iter().enumerate().find(|(_, v)| **v > 1) {
        return Err(Error::invalid("upsample_vuv", format!("frame {i} has V/UV value {v}")));
    }
    let voiced: Vec<f64> = vuv
        .iter()
        .flat_map(|&v| std::iter::repeat_n(f64::from(v), hop))
        .collect();
    let unvoiced = voiced.iter().map(|v| 1.0 - v).collect();
    Ok(VoicingMasks { voiced, unvoiced })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::features::hop_size;
    use proptest::prelude::*;

    fn feats(rows: &[&[f64]]) -> ConditionFeatures {
        let d = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ConditionFeatures::new(
            Tensor::new(vec![rows.len(), d], data).unwrap(),
            vec![0; rows.len()],
            5.0,
        )
        .unwrap()
    }

    #[test]
    fn repeats_each_frame() {
        let up = upsample_features(&feats(&[&[1.0], &[2.0]]), 3).unwrap();
        assert_eq!(up.shape(), &[1, 6]);
        assert_eq!(up.data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn single_frame_hop_one_is_identity() {
        let up = upsample_features(&feats(&[&[0.5, -2.0]]), 1).unwrap();
        assert_eq!(up.data(), &[0.5, -2.0]);
    }

    #[test]
    fn full_scale_rate_hop() {
        assert_eq!(hop_size(24_000, 5.0).unwrap(), 120);
    }

    #[test]
    fn vuv_masks() {
        let m = upsample_vuv(&[0, 1, 1, 0], 2).unwrap();
        assert_eq!(m.voiced, vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        let all = upsample_vuv(&[1, 1, 1], 4).unwrap();
        assert!(all.unvoiced.iter().all(|v| *v == 0.0));
        assert!(upsample_vuv(&[0, 2], 2).is_err());
    }

    proptest! {
        #[test]
        fn masks_are_complementary(vuv in prop::collection::vec(0u8..=1, 1..40), hop in 1usize..12) {
            let m = upsample_vuv(&vuv, hop).unwrap();
            prop_assert_eq!(m.len(), vuv.len() * hop);
            for (v, u) in m.voiced.iter().zip(&m.unvoiced) {
                prop_assert_eq!(v + u, 1.0);
            }
        }

        #[test]
        fn decimating_recovers_frames(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..20), hop in 1usize..9) {
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let f = feats(&refs);
            let up = upsample_features(&f, hop).unwrap();
            let t = f.n_frames() * hop;
            for (j, row) in rows.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    prop_assert_eq!(up.data()[c * t + j * hop], *v);
                }
            }
        }
    }
}

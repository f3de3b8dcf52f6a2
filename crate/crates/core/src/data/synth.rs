use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::{Dataset, FeatureSchema};
use crate::error::{FlekdError, Result};
use crate::rng::{rng_for, TAG_SYNTH};

/// CICIDS2019 attack classes, used as names when generating 7 classes.
pub const CICIDS2019_CLASSES: [&str; 7] =
    ["Portmap", "LDAP", "MSSQL", "NetBIOS", "Syn", "UDP", "UDPLag"];

/// Distance of each class mean from the origin, in units of the shared
/// noise standard deviation.
pub const DEFAULT_SEPARATION: f64 = 4.0;

/// The last few canonical columns stand in for the features that only the
/// newest flow schema records; class directions are drawn with extra
/// weight there, so dropping them costs accuracy.
pub const DEFAULT_TAIL_COLUMNS: usize = 3;
pub const DEFAULT_TAIL_GAIN: f64 = 3.0;

/// Shape of the generated class geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthGeometry {
    pub separation: f64,
    pub tail_columns: usize,
    /// Standard-deviation multiplier for tail coordinates when drawing the
    /// class directions.
    pub tail_gain: f64,
}

impl Default for SynthGeometry {
    fn default() -> Self {
        Self {
            separation: DEFAULT_SEPARATION,
            tail_columns: DEFAULT_TAIL_COLUMNS,
            tail_gain: DEFAULT_TAIL_GAIN,
        }
    }
}

pub fn default_class_names(num_classes: usize) -> Vec<String> {
    if num_classes == CICIDS2019_CLASSES.len() {
        CICIDS2019_CLASSES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..num_classes).map(|c| format!("class_{c}")).collect()
    }
}

/// Gaussian classes with identity covariance and means at
/// [`DEFAULT_SEPARATION`] along random orthonormal directions.
pub fn synth_generate(
    n_per_class: usize,
    num_classes: usize,
    canonical_dim: usize,
    seed: u64,
) -> Result<Dataset> {
    synth_generate_with(
        n_per_class,
        num_classes,
        canonical_dim,
        SynthGeometry::default(),
        seed,
    )
}

pub fn synth_generate_with(
    n_per_class: usize,
    num_classes: usize,
    canonical_dim: usize,
    geometry: SynthGeometry,
    seed: u64,
) -> Result<Dataset> {
    let SynthGeometry {
        separation,
        tail_columns,
        tail_gain,
    } = geometry;
    if n_per_class == 0 || num_classes == 0 || canonical_dim == 0 {
        return Err(FlekdError::invalid(
            "n_per_class, num_classes and canonical_dim must be positive",
        ));
    }
    if num_classes > canonical_dim {
        return Err(FlekdError::invalid(format!(
            "{num_classes} orthogonal class directions do not fit in {canonical_dim} dimensions"
        )));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(FlekdError::invalid("separation must be finite and non-negative"));
    }
    if !(tail_gain > 0.0 && tail_gain.is_finite()) {
        return Err(FlekdError::invalid("tail_gain must be positive"));
    }
    // A schema no wider than the tail has no tail.
    let tail_start = if tail_columns < canonical_dim {
        canonical_dim - tail_columns
    } else {
        canonical_dim
    };
    let mut rng = rng_for(seed, &[TAG_SYNTH]);

    // Gram-Schmidt over Gaussian draws.
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    while directions.len() < num_classes {
        let mut v: Vec<f64> = (0..canonical_dim)
            .map(|j| {
                let g: f64 = StandardNormal.sample(&mut rng);
                if j >= tail_start {
                    g * tail_gain
                } else {
                    g
                }
            })
            .collect();
        for u in &directions {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            directions.push(v);
        }
    }

    let n = n_per_class * num_classes;
    let mut features = Array2::zeros((n, canonical_dim));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let class = i % num_classes;
        labels.push(class);
        for (x, &u) in row.iter_mut().zip(&directions[class]) {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *x = separation * u + noise;
        }
    }
    Dataset::new(
        features,
        Some(labels),
        FeatureSchema::numbered(canonical_dim)?,
        default_class_names(num_classes),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_reproducible_and_balanced() {
        let a = synth_generate(100, 7, 82, 5).unwrap();
        let b = synth_generate(100, 7, 82, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_rows(), 700);
        assert_eq!(a.class_counts().unwrap(), vec![100; 7]);
        assert_eq!(a.class_names()[6], "UDPLag");
        assert_ne!(a, synth_generate(100, 7, 82, 6).unwrap());
    }

    #[test]
    fn class_means_sit_at_the_separation_radius() {
        let d = synth_generate(2000, 3, 10, 1).unwrap();
        let labels = d.labels().unwrap();
        for c in 0..3 {
            let rows: Vec<usize> = (0..d.n_rows()).filter(|&i| labels[i] == c).collect();
            let sub = d.subset(&rows).unwrap();
            let mean = sub.features().mean_axis(ndarray::Axis(0)).unwrap();
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            // Sample-mean noise adds about sqrt(10 / 2000) in quadrature.
            assert!((norm - DEFAULT_SEPARATION).abs() < 0.2, "class {c}: {norm}");
        }
    }

    #[test]
    fn tail_columns_carry_extra_signal() {
        let d = synth_generate(3000, 7, 82, 2).unwrap();
        let labels = d.labels().unwrap();
        let mut tail_share = 0.0;
        for c in 0..7 {
            let rows: Vec<usize> = (0..d.n_rows()).filter(|&i| labels[i] == c).collect();
            let mean = d.subset(&rows).unwrap().features().mean_axis(ndarray::Axis(0)).unwrap();
            let total: f64 = mean.iter().map(|v| v * v).sum();
            let tail: f64 = mean.iter().skip(79).map(|v| v * v).sum();
            tail_share += tail / total / 7.0;
        }
        // A uniform profile would give 3/82; gain 3 gives about 27/106.
        assert!(tail_share > 0.1, "{tail_share}");
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(synth_generate(0, 7, 82, 1).is_err());
        assert!(synth_generate(10, 9, 8, 1).is_err());
    }
}

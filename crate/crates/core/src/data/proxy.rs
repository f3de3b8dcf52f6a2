use rand::seq::SliceRandom;

use super::dataset::Dataset;
use crate::error::{FlekdError, Result};
use crate::rng::{rng_for, TAG_PROXY};

pub const DEFAULT_PROXY_SIZE: usize = 1260;

/// Server-side unlabeled proxy set and the rows left for everything else.
#[derive(Debug, Clone)]
pub struct ProxySample {
    pub proxy: Dataset,
    pub proxy_indices: Vec<usize>,
    pub remaining_indices: Vec<usize>,
}

/// Per-class proxy counts. Without a minority class the total is spread
/// evenly (remainder to the lowest classes). With one, every other class
/// gets `round(total / (C − 1 + 1/3))` and the minority takes what is left,
/// about a third as many.
pub fn proxy_class_counts(
    total: usize,
    num_classes: usize,
    minority: Option<usize>,
) -> Result<Vec<usize>> {
    if num_classes == 0 {
        return Err(FlekdError::invalid("proxy sampling needs at least one class"));
    }
    match minority {
        Some(m) if m >= num_classes => Err(FlekdError::invalid(format!(
            "minority class {m} out of range for {num_classes} classes"
        ))),
        Some(m) if num_classes > 1 => {
            let majors = num_classes - 1;
            let per = (total as f64 / (majors as f64 + 1.0 / 3.0)).round() as usize;
            let minority_count = total
                .checked_sub(per * majors)
                .filter(|&c| c > 0)
                .ok_or_else(|| {
                    FlekdError::invalid(format!("proxy total {total} too small for {num_classes} classes"))
                })?;
            Ok((0..num_classes)
                .map(|c| if c == m { minority_count } else { per })
                .collect())
        }
        _ => {
            let base = total / num_classes;
            let extra = total % num_classes;
            Ok((0..num_classes).map(|c| base + usize::from(c < extra)).collect())
        }
    }
}

/// Class-stratified uniform sample of the proxy set from the rows listed in
/// `pool`. Labels are stripped from the returned proxy; the sampled rows
/// are removed from the remaining pool.
pub(crate) fn sample_proxy_from(
    dataset: &Dataset,
    pool: &[usize],
    total: usize,
    minority_class: Option<usize>,
    seed: u64,
) -> Result<ProxySample> {
    let labels = dataset.require_labels("proxy sampling")?;
    let counts = proxy_class_counts(total, dataset.num_classes(), minority_class)?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    for &row in pool {
        by_class[labels[row]].push(row);
    }
    let mut rng = rng_for(seed, &[TAG_PROXY]);
    let mut chosen = Vec::with_capacity(total);
    for (class, rows) in by_class.iter_mut().enumerate() {
        let want = counts[class];
        if rows.len() < want {
            return Err(FlekdError::invalid(format!(
                "class `{}` has {} rows, proxy needs {want}",
                dataset.class_names()[class],
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        chosen.extend_from_slice(&rows[..want]);
    }
    chosen.sort_unstable();
    let mut taken = vec![false; dataset.n_rows()];
    chosen.iter().for_each(|&i| taken[i] = true);
    let remaining = pool.iter().copied().filter(|&i| !taken[i]).collect();
    Ok(ProxySample {
        proxy: dataset.subset(&chosen)?.without_labels(),
        proxy_indices: chosen,
        remaining_indices: remaining,
    })
}

pub fn sample_proxy(
    dataset: &Dataset,
    total: usize,
    minority_class: Option<usize>,
    seed: u64,
) -> Result<ProxySample> {
    let pool: Vec<usize> = (0..dataset.n_rows()).collect();
    sample_proxy_from(dataset, &pool, total, minority_class, seed)
}

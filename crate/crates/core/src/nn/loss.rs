use ndarray::{Array2, ArrayView1, Axis};

use super::mlp::Logits;
use crate::error::{FlekdError, Result};

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(FlekdError::invalid(format!(
            "temperature must be positive and finite, got {t}"
        )));
    }
    Ok(())
}

fn softmax_into(row: ArrayView1<'_, f64>, t: f64, out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(row.iter()) {
        *o = ((z - max) / t).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `exp(z_i / T) / Σ_j exp(z_j / T)`, shifted by the row max.
pub fn softmax_temp(logits_row: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if logits_row.is_empty() {
        return Err(FlekdError::invalid("softmax of an empty row"));
    }
    let mut out = vec![0.0; logits_row.len()];
    softmax_into(ArrayView1::from(logits_row), temperature, &mut out);
    Ok(out)
}

/// Row-wise temperature softmax of a whole logit matrix.
pub fn softmax_rows(logits: &Array2<f64>, temperature: f64) -> Result<Array2<f64>> {
    check_temperature(temperature)?;
    let mut out = Array2::zeros(logits.raw_dim());
    for (row, mut dst) in logits.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        softmax_into(row, temperature, dst.as_slice_mut().expect("owned row is contiguous"));
    }
    Ok(out)
}

/// Log-softmax of one row at temperature `t`.
fn log_softmax_into(row: ArrayView1<'_, f64>, t: f64, out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|&z| ((z - max) / t).exp()).sum::<f64>().ln();
    for (o, &z) in out.iter_mut().zip(row.iter()) {
        *o = (z - max) / t - lse;
    }
}

/// Mean cross-entropy against hard labels, with its gradient at the logits.
pub fn cross_entropy_loss(logits: &Logits, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let z = logits.values();
    let (n, c) = z.dim();
    if labels.len() != n {
        return Err(FlekdError::invalid(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(FlekdError::invalid("cross-entropy over an empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(FlekdError::invalid(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let scale = 1.0 / n as f64;
    let mut grad = Array2::zeros((n, c));
    let mut logp = vec![0.0; c];
    let mut loss = 0.0;
    for ((row, mut g), &y) in z.axis_iter(Axis(0)).zip(grad.axis_iter_mut(Axis(0))).zip(labels) {
        log_softmax_into(row, 1.0, &mut logp);
        loss -= logp[y];
        for (gj, &lp) in g.iter_mut().zip(logp.iter()) {
            *gj = lp.exp() * scale;
        }
        g[y] -= scale;
    }
    Ok((loss * scale, grad))
}

/// Mean over rows of `KL(p_teacher || p_student)` with both distributions
/// taken at temperature `t`. The teacher is a constant; no `T²` factor is
/// applied to the gradient.
pub fn kl_distill_loss(
    student: &Logits,
    teacher: &Logits,
    temperature: f64,
) -> Result<(f64, Array2<f64>)> {
    check_temperature(temperature)?;
    let (zs, zt) = (student.values(), teacher.values());
    if zs.dim() != zt.dim() {
        return Err(FlekdError::invalid(format!(
            "student logits {:?} and teacher logits {:?} differ in shape",
            zs.dim(),
            zt.dim()
        )));
    }
    let (n, c) = zs.dim();
    if n == 0 {
        return Err(FlekdError::invalid("distillation over an empty batch"));
    }
    let mut grad = Array2::zeros((n, c));
    let mut log_ps = vec![0.0; c];
    let mut log_pt = vec![0.0; c];
    let mut loss = 0.0;
    let scale = 1.0 / n as f64;
    for ((s_row, t_row), mut g) in zs
        .axis_iter(Axis(0))
        .zip(zt.axis_iter(Axis(0)))
        .zip(grad.axis_iter_mut(Axis(0)))
    {
        log_softmax_into(s_row, temperature, &mut log_ps);
        log_softmax_into(t_row, temperature, &mut log_pt);
        for j in 0..c {
            let pt = log_pt[j].exp();
            if pt > 0.0 {
                loss += pt * (log_pt[j] - log_ps[j]);
            }
            g[j] = (log_ps[j].exp() - pt) * scale / temperature;
        }
    }
    // Rounding can leave a tiny negative value when the distributions agree.
    Ok(((loss * scale).max(0.0), grad))
}

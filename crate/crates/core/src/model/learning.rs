use super::inference::InferenceCache;
use super::obs::ObsRef;
use super::Weights;
use crate::error::{Error, Result};

/// Activities of one sample entering a weight update. All items of a batch
/// must have been computed against the same incoming weights.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub s: &'a [f64],
    pub t: &'a [f64],
    pub y: ObsRef<'a>,
    /// Whether this item also trains the top layer `R`.
    pub update_r: bool,
}

/// Rows touched by an update. Rows not listed are bit-identical to before.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateSummary {
    pub w_rows: Vec<usize>,
    pub r_rows: Vec<usize>,
}

/// Relative change that rounds away in f64 (half an ulp).
const NEGLIGIBLE: f64 = f64::EPSILON / 4.0;

/// Single-sample Hebbian step with subtractive synaptic scaling:
/// `dW_cd = eps_w (s_c y_d - s_c W_cd)`, `dR_kc = eps_r (t_k s_c - t_k R_kc)`.
pub fn hebbian_update<'a>(
    weights: &mut Weights,
    s: &'a [f64],
    t: &'a [f64],
    y: ObsRef<'a>,
    update_r: bool,
    eps_w: f64,
    eps_r: f64,
) -> Result<UpdateSummary> {
    let item = BatchItem { s, t, y, update_r };
    minibatch_update(weights, &[item], eps_w, eps_r)
}

/// Mini-batch step: the per-item Hebbian changes are summed against the
/// incoming weights and applied once, then every touched row is rescaled to
/// its exact constraint (A for W, 1 for R).
///
/// Items are reduced in batch order, so the result is deterministic.
pub fn minibatch_update(
    weights: &mut Weights,
    batch: &[BatchItem],
    eps_w: f64,
    eps_r: f64,
) -> Result<UpdateSummary> {
    update(weights, batch, eps_w, eps_r, None)
}

/// [`minibatch_update`] that also carries `cache` along. `ln W` is advanced
/// by `ln(1 + dW/W)` instead of being recomputed, which avoids one logarithm
/// per weight for soft posteriors. Round-off accumulates slowly, so callers
/// should rebuild the cache from the weights now and then (the trainer does
/// so once per epoch).
pub fn minibatch_update_cached(
    weights: &mut Weights,
    cache: &mut InferenceCache,
    batch: &[BatchItem],
    eps_w: f64,
    eps_r: f64,
) -> Result<UpdateSummary> {
    let summary = update(weights, batch, eps_w, eps_r, Some(&mut *cache))?;
    if !summary.r_rows.is_empty() {
        cache.refresh_top(weights);
    }
    Ok(summary)
}

/// `ln(1 + x)` by its Taylor series; for |x| < 1e-2 the truncation error is
/// below 2e-19.
#[inline]
fn ln_1p_series(x: f64) -> f64 {
    x * (1.0
        - x * (1.0 / 2.0
            - x * (1.0 / 3.0
                - x * (1.0 / 4.0 - x * (1.0 / 5.0 - x * (1.0 / 6.0 - x * (1.0 / 7.0 - x / 8.0)))))))
}

/// `out_d += ln(1 + x_d) + shift`.
fn add_ln_1p(out: &mut [f64], x: &[f64], shift: f64) {
    let max = lanes(x, 0.0, |m, v| m.max(v.abs()), f64::max);
    if max < 1e-2 {
        for (o, &v) in out.iter_mut().zip(x) {
            *o += ln_1p_series(v) + shift;
        }
    } else {
        for (o, &v) in out.iter_mut().zip(x) {
            let l = if v.abs() < 1e-2 {
                ln_1p_series(v)
            } else {
                v.ln_1p()
            };
            *o += l + shift;
        }
    }
}

/// Reduction over eight interleaved accumulators, so the loop is not bound
/// by the latency of one dependency chain. The order is fixed.
#[inline]
pub(crate) fn lanes(
    v: &[f64],
    init: f64,
    step: impl Fn(f64, f64) -> f64,
    merge: impl Fn(f64, f64) -> f64,
) -> f64 {
    let mut acc = [init; 8];
    let chunks = v.chunks_exact(8);
    let rest = chunks.remainder();
    for chunk in chunks {
        for (a, &x) in acc.iter_mut().zip(chunk) {
            *a = step(*a, x);
        }
    }
    let mut out = acc.into_iter().fold(init, &merge);
    for &x in rest {
        out = step(out, x);
    }
    out
}

fn lane_sum(v: &[f64]) -> f64 {
    lanes(v, 0.0, |a, x| a + x, |a, b| a + b)
}

fn update(
    weights: &mut Weights,
    batch: &[BatchItem],
    eps_w: f64,
    eps_r: f64,
    mut cache: Option<&mut InferenceCache>,
) -> Result<UpdateSummary> {
    let (units, dim, classes) = (weights.units(), weights.input_dim(), weights.classes());
    let mut max_s: f64 = 0.0;
    let mut max_t: f64 = 0.0;
    let mut r_items = 0usize;
    for item in batch {
        if item.s.len() != units || item.t.len() != classes || item.y.dim() != dim {
            return Err(Error::Shape(format!(
                "batch item has |s|={}, |t|={}, |y|={}; weights are C={units}, K={classes}, D={dim}",
                item.s.len(),
                item.t.len(),
                item.y.dim()
            )));
        }
        max_s = item.s.iter().fold(max_s, |m, &v| m.max(v));
        if item.update_r {
            r_items += 1;
            max_t = item.t.iter().fold(max_t, |m, &v| m.max(v));
        }
    }
    let activity_w = batch.len() as f64 * max_s;
    if eps_w * activity_w >= 1.0 || eps_w < 0.0 {
        return Err(Error::RateTooLarge {
            rate: eps_w,
            activity: activity_w,
        });
    }
    let activity_r = r_items as f64 * max_t;
    if eps_r * activity_r >= 1.0 || eps_r < 0.0 {
        return Err(Error::RateTooLarge {
            rate: eps_r,
            activity: activity_r,
        });
    }

    let mut summary = UpdateSummary::default();
    let total = weights.total();

    // first layer
    if eps_w > 0.0 {
        let mut acc = vec![0.0; dim];
        let mut ratio = vec![0.0; dim];
        let single = match batch {
            [BatchItem {
                y: ObsRef::Dense(y),
                ..
            }] => y.as_slice(),
            _ => None,
        };
        let w = weights.w_mut();
        for c in 0..units {
            let mass: f64 = batch.iter().map(|item| item.s[c]).sum();
            if mass == 0.0 {
                continue;
            }
            let mut row = w.row_mut(c);
            let row = row.as_slice_mut().expect("W is row-major");
            // Since y_d <= A, no entry moves by more than eps*mass*(A/min_w + 1)
            // relative to itself. Below half an ulp the row would round back
            // to its old value, so it is left alone.
            let min_w = lanes(row, f64::INFINITY, f64::min, f64::min);
            if eps_w * mass * (total / min_w + 1.0) < NEGLIGIBLE {
                continue;
            }
            // sum_n s_nc y_n, as (gain, source) so a lone dense item is not copied
            let (gain, src) = match single {
                Some(y) => (mass, y),
                None => {
                    acc.fill(0.0);
                    for item in batch {
                        let sc = item.s[c];
                        if sc != 0.0 {
                            item.y.add_scaled_to(&mut acc, sc);
                        }
                    }
                    (1.0, &acc[..])
                }
            };
            if cache.is_some() {
                for ((wcd, &y), x) in row.iter_mut().zip(src).zip(ratio.iter_mut()) {
                    let delta = eps_w * (gain * y - mass * *wcd);
                    *x = delta / *wcd;
                    *wcd += delta;
                }
            } else {
                for (wcd, &y) in row.iter_mut().zip(src) {
                    *wcd += eps_w * (gain * y - mass * *wcd);
                }
            }
            let scale = total / lane_sum(row);
            row.iter_mut().for_each(|v| *v *= scale);
            if let Some(cache) = cache.as_deref_mut() {
                let log_scale = scale.ln();
                let mut log_row = cache.log_w.row_mut(c);
                let log_row = log_row.as_slice_mut().expect("cache is row-major");
                add_ln_1p(log_row, &ratio, log_scale);
                cache.log_w_sums[c] = lane_sum(log_row);
                cache.w_sums[c] = lane_sum(row);
            }
            summary.w_rows.push(c);
        }
    }

    // second layer
    if eps_r > 0.0 && r_items > 0 {
        let mut acc = vec![0.0; units];
        // R is updated against the incoming s, which does not depend on R's new value
        let r = weights.r_mut();
        for k in 0..classes {
            let mass: f64 = batch
                .iter()
                .filter(|item| item.update_r)
                .map(|item| item.t[k])
                .sum();
            if mass == 0.0 {
                continue;
            }
            acc.iter_mut().for_each(|a| *a = 0.0);
            for item in batch.iter().filter(|item| item.update_r) {
                let tk = item.t[k];
                if tk != 0.0 {
                    for (a, &sc) in acc.iter_mut().zip(item.s) {
                        *a += tk * sc;
                    }
                }
            }
            let mut row = r.row_mut(k);
            let mut sum = 0.0;
            for (rkc, &a) in row.iter_mut().zip(&acc) {
                *rkc += eps_r * (a - mass * *rkc);
                // clamp fp round-off; exact arithmetic keeps R non-negative
                if *rkc < 0.0 {
                    *rkc = 0.0;
                }
                sum += *rkc;
            }
            if sum > 0.0 {
                row.mapv_inplace(|v| v / sum);
            }
            summary.r_rows.push(k);
        }
    }
    Ok(summary)
}

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::obs::{ObsRef, Observations};
use super::{InferenceMode, LabelPrior, Weights};
use crate::error::{Error, Result};

/// Rows processed per matrix product when evaluating many samples.
const CHUNK: usize = 256;

/// One-hot prior for a labeled sample, uniform `1/K` otherwise.
pub fn label_to_prior(label: Option<usize>, classes: usize) -> Result<LabelPrior> {
    match label {
        Some(l) if l >= classes => Err(Error::LabelOutOfRange { label: l, classes }),
        Some(l) => {
            let mut u = vec![0.0; classes];
            u[l] = 1.0;
            Ok(LabelPrior(u))
        }
        None => Ok(LabelPrior(vec![1.0 / classes as f64; classes])),
    }
}

/// Middle-layer input `I_c = sum_d ln(W_cd) y_d + ln(sum_k u_k R_kc)`.
///
/// The top-down term is dropped in feedforward mode. A unit with zero
/// top-down mass gets `I_c = -inf` and drops out of the softmax.
pub fn middle_input(
    y: &[f64],
    prior: &LabelPrior,
    weights: &Weights,
    mode: InferenceMode,
) -> Result<Array1<f64>> {
    if y.len() != weights.input_dim() {
        return Err(Error::Shape(format!(
            "sample has {} entries, weights expect {}",
            y.len(),
            weights.input_dim()
        )));
    }
    if prior.0.len() != weights.classes() {
        return Err(Error::Shape(format!(
            "label prior has {} entries, expected {}",
            prior.0.len(),
            weights.classes()
        )));
    }
    let w = weights.w();
    let r = weights.r();
    let mut input = Array1::zeros(weights.units());
    for (c, row) in w.rows().into_iter().enumerate() {
        let mut acc = 0.0;
        for (d, (&wcd, &yd)) in row.iter().zip(y).enumerate() {
            if !(wcd > 0.0) {
                return Err(Error::NonPositiveWeight {
                    unit: c,
                    dim: d,
                    value: wcd,
                });
            }
            acc += wcd.ln() * yd;
        }
        if mode == InferenceMode::Recurrent {
            let mass: f64 = prior.0.iter().zip(r.column(c)).map(|(u, r)| u * r).sum();
            acc += ln_or_neg_inf(mass);
        }
        input[c] = acc;
    }
    Ok(input)
}

/// Softmax over middle-layer inputs, shifted by the maximum for stability.
pub fn middle_posterior(input: &[f64]) -> Result<Array1<f64>> {
    let mut s = Array1::from(input.to_vec());
    softmax_in_place(s.view_mut().into_slice().expect("contiguous"))?;
    Ok(s)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) -> Result<()> {
    let mut max = f64::NEG_INFINITY;
    for &x in v.iter() {
        if x.is_nan() {
            return Err(Error::InvalidInput("NaN in middle-layer input".into()));
        }
        if x > max {
            max = x;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::AllUnitsDead);
    }
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
    Ok(())
}

/// Top-layer activity: the label's one-hot vector, or for unlabeled data the
/// class posterior `t_k = sum_c R_kc / (sum_k' R_k'c) * s_c`.
pub fn top_posterior(s: &[f64], label: Option<usize>, r: &Array2<f64>) -> Result<Array1<f64>> {
    let classes = r.nrows();
    if s.len() != r.ncols() {
        return Err(Error::Shape(format!(
            "s has {} entries, R has {} columns",
            s.len(),
            r.ncols()
        )));
    }
    if let Some(l) = label {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        let mut t = Array1::zeros(classes);
        t[l] = 1.0;
        return Ok(t);
    }
    let mut t = Array1::zeros(classes);
    for (c, &sc) in s.iter().enumerate() {
        if sc == 0.0 {
            continue;
        }
        let col = r.column(c);
        let mass = col.sum();
        if mass <= 0.0 {
            return Err(Error::OrphanColumn(c));
        }
        for (tk, &rkc) in t.iter_mut().zip(col.iter()) {
            *tk += rkc / mass * sc;
        }
    }
    Ok(t)
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Best-versus-second-best: difference of the two largest entries.
pub fn bvsb(t: &[f64]) -> Result<f64> {
    if t.len() < 2 {
        return Err(Error::TooFewClasses);
    }
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &x in t {
        if x > first {
            second = first;
            first = x;
        } else if x > second {
            second = x;
        }
    }
    Ok(first - second)
}

/// Class posterior of an unlabeled sample and its MAP class.
pub fn classify(y: &[f64], weights: &Weights, mode: InferenceMode) -> Result<(Array1<f64>, usize)> {
    let prior = label_to_prior(None, weights.classes())?;
    let input = middle_input(y, &prior, weights, mode)?;
    let s = middle_posterior(input.as_slice().expect("contiguous"))?;
    let t = top_posterior(s.as_slice().expect("contiguous"), None, weights.r())?;
    let k = argmax(t.as_slice().expect("contiguous"));
    Ok((t, k))
}

/// Log-likelihood of a single sample under the hierarchical Poisson mixture.
pub fn sample_log_likelihood(y: &[f64], label: Option<usize>, weights: &Weights) -> Result<f64> {
    let obs = Observations::from_rows(&[y.to_vec()])?;
    log_likelihood(&obs, &[label], weights)
}

/// Data log-likelihood
/// `sum_n ln sum_c [prod_d Poisson(y_d; W_cd)] * sum_{k in l(n)} R_kc / K`,
/// with `ln Gamma(y + 1)` for the continuous inputs.
pub fn log_likelihood(
    obs: &Observations,
    labels: &[Option<usize>],
    weights: &Weights,
) -> Result<f64> {
    let cache = InferenceCache::new(weights)?;
    let gamma: Vec<f64> = obs.iter().map(|y| y.log_gamma_sum()).collect();
    cache.log_likelihood(obs, labels, &gamma)
}

fn ln_or_neg_inf(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn log_sum_exp(v: ArrayView1<f64>) -> f64 {
    let max = v.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Logarithms and column statistics of a weight state, reused across many
/// samples. Rows of `ln W` can be refreshed selectively after an update.
#[derive(Debug, Clone)]
pub struct InferenceCache {
    pub(crate) log_w: Array2<f64>,
    pub(crate) log_w_sums: Array1<f64>,
    pub(crate) w_sums: Array1<f64>,
    /// Row k < K: `ln R_kc`; row K: `ln(sum_k R_kc / K)`.
    top_down: Array2<f64>,
    /// `p(k|c) = R_kc / sum_k' R_k'c`.
    class_given_unit: Array2<f64>,
    orphan: Vec<bool>,
}

impl InferenceCache {
    pub fn new(weights: &Weights) -> Result<Self> {
        let (units, dim, classes) = (weights.units(), weights.input_dim(), weights.classes());
        let mut cache = Self {
            log_w: Array2::zeros((units, dim)),
            log_w_sums: Array1::zeros(units),
            w_sums: Array1::zeros(units),
            top_down: Array2::zeros((classes + 1, units)),
            class_given_unit: Array2::zeros((classes, units)),
            orphan: vec![false; units],
        };
        let all: Vec<usize> = (0..units).collect();
        cache.refresh_rows(weights, &all)?;
        cache.refresh_top(weights);
        Ok(cache)
    }

    /// Recomputes `ln W` for the given rows.
    pub fn refresh_rows(&mut self, weights: &Weights, rows: &[usize]) -> Result<()> {
        let w = weights.w();
        for &c in rows {
            let src = w.row(c);
            let mut dst = self.log_w.row_mut(c);
            let mut log_sum = 0.0;
            let mut sum = 0.0;
            for (d, (out, &v)) in dst.iter_mut().zip(src.iter()).enumerate() {
                if !(v > 0.0) {
                    return Err(Error::NonPositiveWeight {
                        unit: c,
                        dim: d,
                        value: v,
                    });
                }
                *out = v.ln();
                log_sum += *out;
                sum += v;
            }
            self.log_w_sums[c] = log_sum;
            self.w_sums[c] = sum;
        }
        Ok(())
    }

    /// Recomputes every quantity derived from R.
    pub fn refresh_top(&mut self, weights: &Weights) {
        let r = weights.r();
        let classes = r.nrows();
        let col_sums = r.sum_axis(Axis(0));
        for (c, &mass) in col_sums.iter().enumerate() {
            for k in 0..classes {
                self.top_down[[k, c]] = ln_or_neg_inf(r[[k, c]]);
                self.class_given_unit[[k, c]] = if mass > 0.0 { r[[k, c]] / mass } else { 0.0 };
            }
            self.top_down[[classes, c]] = ln_or_neg_inf(mass / classes as f64);
            self.orphan[c] = !(mass > 0.0);
        }
    }

    pub fn units(&self) -> usize {
        self.log_w.nrows()
    }

    pub fn classes(&self) -> usize {
        self.class_given_unit.nrows()
    }

    /// `ln(sum_k u_k R_kc)` for a one-hot or uniform label prior.
    pub fn top_down(&self, label: Option<usize>) -> ArrayView1<'_, f64> {
        self.top_down.row(label.unwrap_or(self.classes()))
    }

    /// `sum_d ln(W_cd) y_d` for every unit.
    pub fn bottom_up(&self, y: ObsRef) -> Array1<f64> {
        match y {
            ObsRef::Dense(v) => self.log_w.dot(&v),
            ObsRef::Sparse { .. } => Array1::from_iter(
                self.log_w
                    .rows()
                    .into_iter()
                    .zip(self.log_w_sums.iter())
                    .map(|(row, &sum)| y.dot(row, sum)),
            ),
        }
    }

    /// Bottom-up inputs for the selected samples, one row per sample.
    pub fn bottom_up_batch(&self, obs: &Observations, indices: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((indices.len(), self.units()));
        match obs {
            Observations::Dense(y) => {
                let batch = y.select(Axis(0), indices);
                general_mat_mul(1.0, &batch, &self.log_w.t(), 0.0, &mut out);
            }
            Observations::Sparse { .. } => {
                for (i, &n) in indices.iter().enumerate() {
                    out.row_mut(i).assign(&self.bottom_up(obs.get(n)));
                }
            }
        }
        out
    }

    /// Adds the top-down term to bottom-up inputs (recurrent mode only).
    pub fn add_top_down(&self, input: &mut [f64], label: Option<usize>, mode: InferenceMode) {
        if mode == InferenceMode::Recurrent {
            for (x, &td) in input.iter_mut().zip(self.top_down(label).iter()) {
                *x += td;
            }
        }
    }

    /// Middle-layer activity `s` for one sample.
    pub fn middle(
        &self,
        y: ObsRef,
        label: Option<usize>,
        mode: InferenceMode,
    ) -> Result<Array1<f64>> {
        let mut input = self.bottom_up(y);
        let slice = input.as_slice_mut().expect("contiguous");
        self.add_top_down(slice, label, mode);
        softmax_in_place(slice)?;
        Ok(input)
    }

    /// Top-layer activity for a middle-layer activity `s`.
    pub fn top(&self, s: &[f64], label: Option<usize>) -> Result<Array1<f64>> {
        let classes = self.classes();
        let mut t = Array1::zeros(classes);
        match label {
            Some(l) if l >= classes => return Err(Error::LabelOutOfRange { label: l, classes }),
            Some(l) => t[l] = 1.0,
            None => {
                for (c, &sc) in s.iter().enumerate() {
                    if sc == 0.0 {
                        continue;
                    }
                    if self.orphan[c] {
                        return Err(Error::OrphanColumn(c));
                    }
                    for (tk, &p) in t.iter_mut().zip(self.class_given_unit.column(c)) {
                        *tk += p * sc;
                    }
                }
            }
        }
        Ok(t)
    }

    /// Class posteriors (one row per sample) of unlabeled inference over a
    /// whole observation set.
    pub fn class_posteriors(&self, obs: &Observations, mode: InferenceMode) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((obs.len(), self.classes()));
        let all: Vec<usize> = (0..obs.len()).collect();
        for chunk in all.chunks(CHUNK) {
            let mut inputs = self.bottom_up_batch(obs, chunk);
            for (i, &n) in chunk.iter().enumerate() {
                let mut row = inputs.row_mut(i);
                let slice = row.as_slice_mut().expect("contiguous");
                self.add_top_down(slice, None, mode);
                softmax_in_place(slice)?;
                let t = self.top(slice, None)?;
                out.row_mut(n).assign(&t);
            }
        }
        Ok(out)
    }

    /// MAP classes of unlabeled inference over a whole observation set.
    pub fn predict(&self, obs: &Observations, mode: InferenceMode) -> Result<Vec<usize>> {
        let post = self.class_posteriors(obs, mode)?;
        Ok(post
            .rows()
            .into_iter()
            .map(|row| argmax(row.as_slice().expect("contiguous")))
            .collect())
    }

    /// Log-likelihood given precomputed `sum_d ln Gamma(y_d + 1)` per sample.
    pub fn log_likelihood(
        &self,
        obs: &Observations,
        labels: &[Option<usize>],
        gamma: &[f64],
    ) -> Result<f64> {
        if labels.len() != obs.len() || gamma.len() != obs.len() {
            return Err(Error::Shape(format!(
                "{} samples, {} labels, {} gamma terms",
                obs.len(),
                labels.len(),
                gamma.len()
            )));
        }
        let classes = self.classes();
        let ln_k = (classes as f64).ln();
        let all: Vec<usize> = (0..obs.len()).collect();
        let mut total = 0.0;
        for chunk in all.chunks(CHUNK) {
            let mut inputs = self.bottom_up_batch(obs, chunk);
            for (i, &n) in chunk.iter().enumerate() {
                let label = labels[n];
                if let Some(l) = label {
                    if l >= classes {
                        return Err(Error::LabelOutOfRange { label: l, classes });
                    }
                }
                let mut row = inputs.row_mut(i);
                let td = self.top_down(label);
                for ((x, &ws), &t) in row.iter_mut().zip(self.w_sums.iter()).zip(td.iter()) {
                    // top_down already carries -ln K for unlabeled rows
                    *x += t - ws;
                }
                let mut ll = log_sum_exp(row.view()) - gamma[n];
                if label.is_some() {
                    ll -= ln_k;
                }
                total += ll;
            }
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::normalize_input;
    use ndarray::array;

    fn toy() -> Weights {
        let w = array![[1.0, 2.0, 5.0], [3.0, 3.0, 2.0]];
        let r = array![[0.75, 0.25], [0.0, 1.0]];
        Weights::from_parts(w, r, 8.0).unwrap()
    }

    #[test]
    fn prior_shapes() {
        assert_eq!(
            label_to_prior(Some(2), 4).unwrap().0,
            vec![0.0, 0.0, 1.0, 0.0]
        );
        assert_eq!(label_to_prior(None, 4).unwrap().0, vec![0.25; 4]);
        let u = label_to_prior(Some(9), 10).unwrap();
        assert_eq!(u.0[9], 1.0);
        assert_eq!(u.0.iter().sum::<f64>(), 1.0);
        assert!(matches!(
            label_to_prior(Some(4), 4),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn symmetric_network_gives_equal_inputs() {
        let cfg = crate::model::ModelConfig::new(3, 4, 2, 9.0).unwrap();
        let weights = Weights::uniform(&cfg).unwrap();
        let y = [2.0, 3.0, 4.0];
        let u = label_to_prior(None, 2).unwrap();
        let input = middle_input(&y, &u, &weights, InferenceMode::Recurrent).unwrap();
        assert!(input.iter().all(|&x| x == input[0]));
    }

    #[test]
    fn zero_top_down_mass_kills_unit() {
        let weights = toy();
        let u = label_to_prior(Some(1), 2).unwrap();
        let y = [2.0, 3.0, 3.0];
        let rec = middle_input(&y, &u, &weights, InferenceMode::Recurrent).unwrap();
        assert_eq!(rec[0], f64::NEG_INFINITY);
        assert!(rec[1].is_finite());
        let ff = middle_input(&y, &u, &weights, InferenceMode::Feedforward).unwrap();
        assert!(ff[0].is_finite());
        let s = middle_posterior(rec.as_slice().unwrap()).unwrap();
        assert_eq!(s.to_vec(), vec![0.0, 1.0]);
    }

    #[test]
    fn softmax_cases() {
        let s = middle_posterior(&[0.0, 0.0, 0.0]).unwrap();
        for v in s.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(
            middle_posterior(&[f64::NEG_INFINITY, 0.0])
                .unwrap()
                .to_vec(),
            vec![0.0, 1.0]
        );
        assert!(matches!(
            middle_posterior(&[f64::NEG_INFINITY; 2]),
            Err(Error::AllUnitsDead)
        ));
    }

    #[test]
    fn softmax_without_overflow() {
        // 1/(1+e) and e/(1+e), 30 digits via mpmath
        let s = middle_posterior(&[1000.0, 1001.0]).unwrap();
        assert!((s[0] - 0.268_941_421_369_995_1).abs() < 1e-15);
        assert!((s[1] - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn top_posterior_cases() {
        let r = array![[0.2, 0.3, 0.5], [0.2, 0.3, 0.5], [0.2, 0.3, 0.5]];
        let t = top_posterior(&[0.1, 0.6, 0.3], None, &r).unwrap();
        for v in t.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let t = top_posterior(&[0.1, 0.6, 0.3], Some(1), &r).unwrap();
        assert_eq!(t.to_vec(), vec![0.0, 1.0, 0.0]);

        let r = array![[0.5, 0.5, 0.0], [0.5, 0.0, 0.5]];
        assert!(top_posterior(
            &[0.5, 0.5, 0.0],
            None,
            &array![[0.5, 0.5, 0.0], [1.0, 0.0, 0.0]]
        )
        .is_ok());
        let r_orphan = array![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert!(matches!(
            top_posterior(&[0.5, 0.5, 0.0], None, &r_orphan),
            Err(Error::OrphanColumn(1))
        ));
        // brute-force sum over c of p(k|c) s_c
        let s = [0.2, 0.3, 0.5];
        let t = top_posterior(&s, None, &r).unwrap();
        let mut expected = [0.0; 2];
        for c in 0..3 {
            let col: f64 = (0..2).map(|k| r[[k, c]]).sum();
            for k in 0..2 {
                expected[k] += r[[k, c]] / col * s[c];
            }
        }
        assert!((t[0] - expected[0]).abs() < 1e-15 && (t[1] - expected[1]).abs() < 1e-15);
    }

    #[test]
    fn bvsb_cases() {
        assert!((bvsb(&[0.9, 0.1]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(bvsb(&[0.25; 4]).unwrap(), 0.0);
        assert!((bvsb(&[0.5, 0.3, 0.2]).unwrap() - 0.2).abs() < 1e-15);
        assert!((bvsb(&[0.2, 0.5, 0.3]).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(bvsb(&[1.0]), Err(Error::TooFewClasses)));
    }

    #[test]
    fn classify_template_and_tie_break() {
        // four templates, one per class
        let raw = [
            [9.0, 1.0, 1.0, 1.0],
            [1.0, 9.0, 1.0, 1.0],
            [1.0, 1.0, 9.0, 1.0],
            [1.0, 1.0, 1.0, 9.0],
        ];
        let rows: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| normalize_input(r, 16.0).unwrap())
            .collect();
        let w = Array2::from_shape_fn((4, 4), |(c, d)| rows[c][d]);
        let r = Array2::from_shape_fn((4, 4), |(k, c)| if k == c { 1.0 } else { 0.0 });
        let weights = Weights::from_parts(w, r, 16.0).unwrap();
        for mode in [InferenceMode::Recurrent, InferenceMode::Feedforward] {
            let (_, k) = classify(&rows[3], &weights, mode).unwrap();
            assert_eq!(k, 3);
        }

        let cfg = crate::model::ModelConfig::new(4, 3, 3, 16.0).unwrap();
        let uniform = Weights::uniform(&cfg).unwrap();
        let (t, k) = classify(&rows[2], &uniform, InferenceMode::Recurrent).unwrap();
        assert_eq!(k, 0);
        for v in t.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_component_likelihood() {
        let y = vec![1.5, 2.5, 4.0];
        let w = Array2::from_shape_vec((1, 3), y.clone()).unwrap();
        let r = array![[1.0], [1.0], [1.0]];
        let weights = Weights::from_parts(w, r, 8.0).unwrap();
        let poisson: f64 = y
            .iter()
            .map(|&v: &f64| v * v.ln() - v - statrs::function::gamma::ln_gamma(v + 1.0))
            .sum();
        let labeled = sample_log_likelihood(&y, Some(1), &weights).unwrap();
        assert!((labeled - (poisson + (1.0f64 / 3.0).ln())).abs() < 1e-12);
        // without a label the class sum covers every k
        let unlabeled = sample_log_likelihood(&y, None, &weights).unwrap();
        assert!((unlabeled - poisson).abs() < 1e-12);
    }

    #[test]
    fn cache_matches_direct_path() {
        let weights = toy();
        let cache = InferenceCache::new(&weights).unwrap();
        let y = ndarray::array![2.5, 1.5, 4.0];
        for label in [None, Some(0), Some(1)] {
            let u = label_to_prior(label, 2).unwrap();
            for mode in [InferenceMode::Recurrent, InferenceMode::Feedforward] {
                let direct = middle_input(y.as_slice().unwrap(), &u, &weights, mode).unwrap();
                let s_direct = middle_posterior(direct.as_slice().unwrap()).unwrap();
                let s = cache.middle(ObsRef::Dense(y.view()), label, mode).unwrap();
                for (a, b) in s.iter().zip(s_direct.iter()) {
                    assert!((a - b).abs() < 1e-14);
                }
            }
        }
    }
}

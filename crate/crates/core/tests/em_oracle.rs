//! The batch EM oracle against ground truth and against the network code.

use nesi_core::data::{
    generate_synthetic, random_ground_truth, split_labels, visible_labels, Dataset, LabelsPerClass,
    SplitSpec,
};
use nesi_core::em::{e_step_k, log_likelihood, m_step, run_em, EmOptions, RUpdate};
use nesi_core::model::{self, ModelConfig, Weights};
use nesi_core::train::{init_weights, RInit, WInit};

const A: f64 = 64.0;

fn instance(seed: u64, n: usize) -> (Weights, Dataset, ModelConfig) {
    let model = ModelConfig::new(16, 4, 2, A).unwrap();
    let gt = random_ground_truth(&model, 1.0, seed).unwrap();
    let raw = generate_synthetic(&gt, n, seed + 50).unwrap().raw;
    (gt, Dataset::from_raw(raw, A).unwrap(), model)
}

/// Mean relative error of `w` against `gt` under the best row matching.
fn matched_error(w: &Weights, gt: &Weights) -> f64 {
    let c = gt.units();
    let err = |i: usize, j: usize| {
        let (a, b) = (w.w().row(i), gt.w().row(j));
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| ((x - y) / y).abs())
            .sum::<f64>()
            / a.len() as f64
    };
    // C is tiny, so try every permutation
    fn perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(n - 1) {
            for i in 0..n {
                let mut q = p.clone();
                q.insert(i, n - 1);
                out.push(q);
            }
        }
        out
    }
    perms(c)
        .into_iter()
        .map(|p| (0..c).map(|i| err(i, p[i])).sum::<f64>() / c as f64)
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn em_recovers_the_generating_fields() {
    let (gt, data, model) = instance(11, 2000);
    let samples = data.samples(None);
    let labels = vec![None; data.len()];
    let opts = EmOptions {
        max_iters: 500,
        tol: 1e-10,
        r_update: RUpdate::All,
    };
    // best of a few restarts, chosen by likelihood only
    let best = (0..5)
        .map(|seed| {
            let init = init_weights(
                &model,
                &data.obs,
                &labels,
                WInit::GlobalMean,
                RInit::Uniform,
                seed,
            )
            .unwrap();
            run_em(&samples, init, &opts).unwrap()
        })
        .max_by(|a, b| {
            a.loglik_history
                .last()
                .unwrap()
                .total_cmp(b.loglik_history.last().unwrap())
        })
        .unwrap();
    // inputs carry a background of 1 per pixel, so the fields the data can
    // reveal are the generating ones mapped through the same normalization
    let dim = gt.input_dim() as f64;
    let seen =
        Weights::from_parts(gt.w().mapv(|v| v * (A - dim) / A + 1.0), gt.r().clone(), A).unwrap();
    let err = matched_error(&best.weights, &seen);
    assert!(err < 0.05, "mean relative error {err}");
}

#[test]
fn converged_start_stops_after_one_iteration() {
    let (_, data, model) = instance(2, 500);
    let samples = data.samples(None);
    let init = init_weights(
        &model,
        &data.obs,
        &vec![None; data.len()],
        WInit::GlobalMean,
        RInit::Uniform,
        0,
    )
    .unwrap();
    let opts = EmOptions {
        max_iters: 2000,
        tol: 1e-8,
        r_update: RUpdate::All,
    };
    let first = run_em(&samples, init, &opts).unwrap();
    assert!(first.iteration > 1);
    let again = run_em(&samples, first.weights.clone(), &opts).unwrap();
    assert_eq!(again.iteration, 1);
    let gain = again.loglik_history[1] - again.loglik_history[0];
    assert!(gain.abs() < opts.tol * samples.len() as f64);
}

#[test]
fn restricted_r_update_ignores_unlabeled_samples() {
    let (_, data, model) = instance(4, 400);
    let mask = split_labels(
        &data.labels,
        2,
        &SplitSpec {
            per_class: LabelsPerClass::Count(5),
            seed: 1,
        },
    )
    .unwrap();
    let labels = visible_labels(&data.labels, &mask);
    let init = init_weights(
        &model,
        &data.obs,
        &labels,
        WInit::GlobalMean,
        RInit::Uniform,
        3,
    )
    .unwrap();
    let labeled: Vec<_> = data
        .samples(Some(&mask))
        .into_iter()
        .filter(|s| s.label.is_some())
        .collect();
    let all = data.samples(Some(&mask));
    let restricted = m_step(&all, &init, RUpdate::LabeledOnly).unwrap();
    let labeled_only = m_step(&labeled, &init, RUpdate::All).unwrap();
    for (a, b) in restricted
        .weights
        .r()
        .iter()
        .zip(labeled_only.weights.r().iter())
    {
        assert!((a - b).abs() < 1e-12);
    }
    let full = m_step(&all, &init, RUpdate::All).unwrap();
    assert!(full.weights.r() != restricted.weights.r());
}

#[test]
fn likelihoods_agree_between_implementations() {
    let (gt, data, _) = instance(6, 300);
    let mask = split_labels(
        &data.labels,
        2,
        &SplitSpec {
            per_class: LabelsPerClass::Count(30),
            seed: 2,
        },
    )
    .unwrap();
    let samples = data.samples(Some(&mask));
    let labels = visible_labels(&data.labels, &mask);
    let oracle = log_likelihood(&samples, &gt).unwrap();
    let network = model::log_likelihood(&data.obs, &labels, &gt).unwrap();
    assert!(
        (oracle - network).abs() <= 1e-9 * oracle.abs(),
        "{oracle} vs {network}"
    );
}

#[test]
fn class_posterior_of_a_unit_is_its_normalized_column() {
    let (gt, _, _) = instance(8, 10);
    for c in 0..gt.units() {
        let p = e_step_k(c, None, &gt).unwrap();
        let col = gt.r().column(c);
        let mass = col.sum();
        for (k, v) in p.iter().enumerate() {
            assert!((v - col[k] / mass).abs() < 1e-15);
        }
        assert_eq!(e_step_k(c, Some(1), &gt).unwrap(), vec![0.0, 1.0]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

/// Early stopping on a per-epoch likelihood history.
///
/// Every full window of `window` consecutive values gives a centered moving
/// average and a moving (population) standard deviation. Training stops once
/// some moving average falls below the largest earlier moving average by
/// more than its own moving standard deviation.
pub fn stopping_monitor(history: &[f64], window: usize) -> Decision {
    if window == 0 || history.len() < window {
        return Decision::Continue;
    }
    let w = window as f64;
    let mut best = f64::NEG_INFINITY;
    for win in history.windows(window) {
        let mean = win.iter().sum::<f64>() / w;
        let var = win.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w;
        if mean < best - var.sqrt() {
            return Decision::Stop;
        }
        best = best.max(mean);
    }
    Decision::Continue
}

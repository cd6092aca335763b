use super::{ChannelEstimate, Method, ToaResult};

/// Per channel, keeps the components with `|ĥ| ≥ γ·max|ĥ|` and reports the
/// earliest of them. The comparison is inclusive so that `γ = 1` still
/// returns the strongest component.
pub fn select_los(est: &ChannelEstimate, gamma: f64) -> ToaResult {
    let mut toas = Vec::with_capacity(est.components.len());
    let mut candidates = Vec::with_capacity(est.components.len());
    for comps in &est.components {
        let peak = comps.iter().map(|c| c.amplitude.abs()).fold(0.0, f64::max);
        let mut b: Vec<usize> = comps
            .iter()
            .filter(|c| c.amplitude.abs() >= gamma * peak)
            .map(|c| c.location)
            .collect();
        b.sort_unstable();
        toas.push(b.first().copied());
        candidates.push(b);
    }
    ToaResult {
        low_confidence: vec![false; toas.len()],
        toas,
        candidates,
        method: Method::Mca,
    }
}

//! Post-hoc auto-calibration against the unit gravity sphere.
//!
//! Rest segments are found as still 10-s windows; their per-axis means should
//! lie on the unit sphere. Gain and offset per axis are fitted by iterated
//! weighted least squares against the closest sphere point.

use super::{SignalError, UniformSignal};

#[derive(Debug, Clone)]
pub struct AutocalConfig {
    /// Rest-segment window length in seconds.
    pub window_s: f64,
    /// Per-axis std threshold for a window to count as rest, in g.
    pub still_std_g: f64,
    /// Minimum number of rest segments to attempt a fit.
    pub min_segments: usize,
    /// Per-axis sphere coverage: segment means must reach both below
    /// -coverage_g and above +coverage_g.
    pub coverage_g: f64,
    pub max_iterations: usize,
    /// Convergence tolerance on the residual change, in mg.
    pub tol_mg: f64,
    /// Minimum signal duration in hours.
    pub min_duration_h: f64,
}

impl Default for AutocalConfig {
    fn default() -> Self {
        Self {
            window_s: 10.0,
            still_std_g: 0.013,
            min_segments: 300,
            coverage_g: 0.3,
            max_iterations: 100,
            tol_mg: 0.001,
            min_duration_h: 12.0,
        }
    }
}

/// Fitted gain/offset with before/after unit-sphere residuals (mg).
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationParams {
    pub gain: [f64; 3],
    pub offset_g: [f64; 3],
    pub residual_before_mg: f64,
    pub residual_after_mg: f64,
    pub n_rest_segments: usize,
    /// Set when the fit was skipped (insufficient sphere coverage) and the
    /// identity transform was returned instead.
    pub fallback: bool,
}

impl CalibrationParams {
    pub fn identity(residual_mg: f64, n_rest_segments: usize, fallback: bool) -> Self {
        Self {
            gain: [1.0; 3],
            offset_g: [0.0; 3],
            residual_before_mg: residual_mg,
            residual_after_mg: residual_mg,
            n_rest_segments,
            fallback,
        }
    }
}

/// Mean residual from the unit sphere over segment means, in mg, under the
/// transform `a' = gain * a + offset`.
fn residual_mg(means: &[[f64; 3]], gain: &[f64; 3], offset: &[f64; 3]) -> f64 {
    let mut acc = 0.0;
    for m in means {
        let c = [
            gain[0] * m[0] + offset[0],
            gain[1] * m[1] + offset[1],
            gain[2] * m[2] + offset[2],
        ];
        let norm = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        acc += (norm - 1.0).abs();
    }
    acc / means.len() as f64 * 1000.0
}

/// Per-axis means of still, non-overlapping `window_s` windows.
pub(crate) fn rest_segment_means(sig: &UniformSignal, cfg: &AutocalConfig) -> Vec<[f64; 3]> {
    let w = (cfg.window_s * sig.rate).round() as usize;
    if w < 2 {
        return Vec::new();
    }
    let mut means = Vec::new();
    let axes = [&sig.x, &sig.y, &sig.z];
    let mut start = 0;
    while start + w <= sig.len() {
        let mut m = [0.0f64; 3];
        let mut still = true;
        for (ai, axis) in axes.iter().enumerate() {
            let win = &axis[start..start + w];
            let mean = win.iter().sum::<f64>() / w as f64;
            let var = win.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            if var.sqrt() >= cfg.still_std_g {
                still = false;
                break;
            }
            m[ai] = mean;
        }
        if still {
            means.push(m);
        }
        start += w;
    }
    means
}

fn covers_sphere(means: &[[f64; 3]], coverage_g: f64) -> bool {
    for axis in 0..3 {
        let lo = means.iter().any(|m| m[axis] < -coverage_g);
        let hi = means.iter().any(|m| m[axis] > coverage_g);
        if !(lo && hi) {
            return false;
        }
    }
    true
}

/// Fits gain/offset on rest segments and applies them to the whole signal.
///
/// Signals shorter than the configured minimum duration or with too few rest
/// segments are errors; insufficient sphere coverage falls back to the
/// identity transform with `fallback` set.
pub fn autocalibrate(
    sig: &UniformSignal,
    cfg: &AutocalConfig,
) -> Result<(UniformSignal, CalibrationParams), SignalError> {
    if sig.duration_s() < cfg.min_duration_h * 3600.0 {
        return Err(SignalError::NotEnoughStillData(format!(
            "signal duration {:.1} h below {} h",
            sig.duration_s() / 3600.0,
            cfg.min_duration_h
        )));
    }
    let means = rest_segment_means(sig, cfg);
    if means.len() < cfg.min_segments {
        return Err(SignalError::NotEnoughStillData(format!(
            "{} rest segments, need {}",
            means.len(),
            cfg.min_segments
        )));
    }
    let before = residual_mg(&means, &[1.0; 3], &[0.0; 3]);
    if !covers_sphere(&means, cfg.coverage_g) {
        return Ok((sig.clone(), CalibrationParams::identity(before, means.len(), true)));
    }

    let mut gain = [1.0f64; 3];
    let mut offset = [0.0f64; 3];
    let mut eps = before;
    for _ in 0..cfg.max_iterations {
        // Current calibrated segment means and their sphere projections.
        let mut weights = Vec::with_capacity(means.len());
        let mut targets = Vec::with_capacity(means.len());
        for m in &means {
            let c = [
                gain[0] * m[0] + offset[0],
                gain[1] * m[1] + offset[1],
                gain[2] * m[2] + offset[2],
            ];
            let norm = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            if norm < 1e-9 {
                return Err(SignalError::IllConditioned);
            }
            let res_mg = (norm - 1.0).abs() * 1000.0;
            weights.push(1.0 / res_mg.max(1.0));
            targets.push([c[0] / norm, c[1] / norm, c[2] / norm]);
        }
        // Per-axis weighted linear fit: target = gain * raw + offset.
        for axis in 0..3 {
            let (mut sw, mut swx, mut swxx, mut swy, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, m) in means.iter().enumerate() {
                let w = weights[i];
                let x = m[axis];
                let y = targets[i][axis];
                sw += w;
                swx += w * x;
                swxx += w * x * x;
                swy += w * y;
                swxy += w * x * y;
            }
            let det = sw * swxx - swx * swx;
            if det.abs() < 1e-12 {
                return Err(SignalError::IllConditioned);
            }
            gain[axis] = (sw * swxy - swx * swy) / det;
            offset[axis] = (swxx * swy - swx * swxy) / det;
        }
        let new_eps = residual_mg(&means, &gain, &offset);
        let done = (eps - new_eps).abs() < cfg.tol_mg;
        eps = new_eps;
        if done {
            break;
        }
    }

    if eps > before {
        // Never worsen the residual; keep the raw signal instead.
        return Ok((sig.clone(), CalibrationParams::identity(before, means.len(), true)));
    }

    let mut out = sig.clone();
    for i in 0..out.len() {
        out.x[i] = gain[0] * out.x[i] + offset[0];
        out.y[i] = gain[1] * out.y[i] + offset[1];
        out.z[i] = gain[2] * out.z[i] + offset[2];
    }
    let params = CalibrationParams {
        gain,
        offset_g: offset,
        residual_before_mg: before,
        residual_after_mg: eps,
        n_rest_segments: means.len(),
        fallback: false,
    };
    Ok((out, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// 13 h at 25 Hz: alternating rest poses spread over the sphere (with
    /// sensor noise) and short movement bursts.
    fn synthetic_signal(seed: u64, gain: [f64; 3], offset: [f64; 3], noise_g: f64) -> UniformSignal {
        let rate = 25.0;
        let n = (13.0 * 3600.0 * rate) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut z = vec![0.0; n];
        let seg = (30.0 * rate) as usize; // 30 s per pose
        let mut i = 0;
        while i < n {
            // Random orientation on the unit sphere.
            let gx: f64 = StandardNormal.sample(&mut rng);
            let gy: f64 = StandardNormal.sample(&mut rng);
            let gz: f64 = StandardNormal.sample(&mut rng);
            let norm = (gx * gx + gy * gy + gz * gz).sqrt().max(1e-9);
            let pose = [gx / norm, gy / norm, gz / norm];
            let end = (i + seg).min(n);
            for k in i..end {
                let nx: f64 = StandardNormal.sample(&mut rng);
                let ny: f64 = StandardNormal.sample(&mut rng);
                let nz: f64 = StandardNormal.sample(&mut rng);
                // Distort: observed = (true - offset) / gain, so that
                // gain*observed + offset recovers the true value.
                x[k] = (pose[0] + noise_g * nx - offset[0]) / gain[0];
                y[k] = (pose[1] + noise_g * ny - offset[1]) / gain[1];
                z[k] = (pose[2] + noise_g * nz - offset[2]) / gain[2];
            }
            i = end;
            // A couple seconds of movement between poses.
            let move_end = (i + (2.0 * rate) as usize).min(n);
            for k in i..move_end {
                x[k] = rng.gen_range(-1.0..1.0);
                y[k] = rng.gen_range(-1.0..1.0);
                z[k] = rng.gen_range(-1.0..1.0);
            }
            i = move_end;
        }
        let wear_mask = vec![true; n];
        UniformSignal { start_t: 0, rate, x, y, z, wear_mask }
    }

    #[test]
    fn calibrated_input_is_a_fixed_point() {
        let sig = synthetic_signal(1, [1.0; 3], [0.0; 3], 0.002);
        let (_, p) = autocalibrate(&sig, &AutocalConfig::default()).unwrap();
        for g in p.gain {
            assert!((g - 1.0).abs() < 0.005, "gain {g}");
        }
        for o in p.offset_g {
            assert!(o.abs() < 0.002, "offset {o}");
        }
        assert!(p.residual_after_mg <= p.residual_before_mg);
    }

    #[test]
    fn recovers_injected_miscalibration() {
        let gain = [1.05, 0.97, 1.02];
        let offset = [0.020, -0.015, 0.008];
        let sig = synthetic_signal(2, gain, offset, 0.002);
        let (_, p) = autocalibrate(&sig, &AutocalConfig::default()).unwrap();
        for a in 0..3 {
            assert!((p.gain[a] - gain[a]).abs() < 0.005, "gain[{a}] {} vs {}", p.gain[a], gain[a]);
            assert!((p.offset_g[a] - offset[a]).abs() < 0.003, "offset[{a}]");
        }
        assert!(p.residual_after_mg < 5.0, "residual {}", p.residual_after_mg);
        assert!(!p.fallback);
    }

    #[test]
    fn short_signal_is_rejected() {
        let mut sig = synthetic_signal(3, [1.0; 3], [0.0; 3], 0.002);
        let keep = (3600.0 * sig.rate) as usize;
        sig.x.truncate(keep);
        sig.y.truncate(keep);
        sig.z.truncate(keep);
        sig.wear_mask.truncate(keep);
        assert!(matches!(
            autocalibrate(&sig, &AutocalConfig::default()),
            Err(SignalError::NotEnoughStillData(_))
        ));
    }

    #[test]
    fn poor_sphere_coverage_falls_back_to_identity() {
        // All rest poses near +z: coverage check must fail.
        let rate = 25.0;
        let n = (13.0 * 3600.0 * rate) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..n).map(|_| 0.01 * rng.gen_range(-1.0..1.0f64)).collect();
        let y: Vec<f64> = (0..n).map(|_| 0.01 * rng.gen_range(-1.0..1.0f64)).collect();
        let z: Vec<f64> = (0..n).map(|_| 1.02 + 0.001 * rng.gen_range(-1.0..1.0f64)).collect();
        let sig = UniformSignal { start_t: 0, rate, x: x.clone(), y, z, wear_mask: vec![true; n] };
        let (out, p) = autocalibrate(&sig, &AutocalConfig::default()).unwrap();
        assert!(p.fallback);
        assert_eq!(p.gain, [1.0; 3]);
        assert_eq!(out.x, x);
        assert_eq!(p.residual_before_mg, p.residual_after_mg);
    }
}

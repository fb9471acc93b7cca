//! 4th-order Butterworth bandpass as cascaded second-order sections.
//!
//! Designed in the analog domain (order-4 lowpass prototype, lowpass->bandpass
//! transform, giving a 4th-order rolloff on each side of the band) and
//! discretized by the bilinear transform with frequency pre-warping.
//! Filtering is a single causal forward pass; section state is reset at every
//! wear/non-wear boundary.

use num_complex::Complex64;

use super::{SignalError, UniformSignal};

/// One second-order section, direct form II transposed.
/// y[n] = b0 x[n] + s1; s1 = b1 x[n] - a1 y[n] + s2; s2 = b2 x[n] - a2 y[n].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Sos {
    fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        let num = self.b[0] + self.b[1] * z1 + self.b[2] * z2;
        let den = Complex64::new(1.0, 0.0) + self.a[0] * z1 + self.a[1] * z2;
        num / den
    }
}

/// Designs the four SOS of a 4th-order Butterworth bandpass with passband
/// `[lo, hi]` Hz at sample rate `fs`. Unit gain at the (pre-warp corrected)
/// geometric center frequency.
pub fn design_bandpass_sos(lo: f64, hi: f64, fs: f64) -> Result<Vec<Sos>, SignalError> {
    let nyquist = fs / 2.0;
    if !(hi < nyquist) {
        return Err(SignalError::CutoffAboveNyquist { hi, nyquist });
    }
    assert!(lo > 0.0 && lo < hi, "cutoffs must satisfy 0 < lo < hi");

    let fs2 = 2.0 * fs;
    let w1 = fs2 * (std::f64::consts::PI * lo / fs).tan();
    let w2 = fs2 * (std::f64::consts::PI * hi / fs).tan();
    let bw = w2 - w1;
    let w0sq = w1 * w2;

    // Order-4 Butterworth lowpass prototype, upper-half-plane poles.
    const ORDER: usize = 4;
    let protos: Vec<Complex64> = (1..=ORDER / 2)
        .map(|k| {
            let theta = std::f64::consts::PI * (2 * k + ORDER - 1) as f64 / (2 * ORDER) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect();

    // Lowpass -> bandpass: s_lp = (s^2 + w0^2) / (B s) gives
    // s = (p B +- sqrt(p^2 B^2 - 4 w0^2)) / 2 for each prototype pole p.
    let mut analog_poles = Vec::with_capacity(ORDER);
    for proto in protos {
        let pb = proto * bw;
        let disc = (pb * pb - 4.0 * w0sq).sqrt();
        analog_poles.push((pb + disc) / 2.0);
        analog_poles.push((pb - disc) / 2.0);
    }

    // Bilinear transform; each analog pole with its conjugate forms one SOS.
    // The analog zeros (four at s=0, four at infinity) become z=1 and z=-1,
    // one of each per section: numerator (1 - z^-2).
    let mut sections = Vec::with_capacity(analog_poles.len());
    for sp in analog_poles {
        let zp = (fs2 + sp) / (fs2 - sp);
        let a1 = -2.0 * zp.re;
        let a2 = zp.norm_sqr();
        sections.push(Sos { b: [1.0, 0.0, -1.0], a: [a1, a2] });
    }

    // Normalize to unit gain at the digital center frequency.
    let f_center = fs / std::f64::consts::PI * (w0sq.sqrt() / fs2).atan();
    let omega = 2.0 * std::f64::consts::PI * f_center / fs;
    let gain: f64 = sections.iter().map(|s| s.response(omega).norm()).product();
    let per_section = (1.0 / gain).powf(1.0 / sections.len() as f64);
    for s in &mut sections {
        for b in &mut s.b {
            *b *= per_section;
        }
    }
    Ok(sections)
}

/// Magnitude of the SOS cascade at frequency `f` Hz.
pub fn sos_magnitude_response(sections: &[Sos], f: f64, fs: f64) -> f64 {
    let omega = 2.0 * std::f64::consts::PI * f / fs;
    sections.iter().map(|s| s.response(omega).norm()).product()
}

fn filter_axis(sections: &[Sos], data: &mut [f64], wear_mask: &[bool]) {
    let mut state: Vec<[f64; 2]> = vec![[0.0; 2]; sections.len()];
    let mut prev_wear = None;
    for i in 0..data.len() {
        let wear = wear_mask[i];
        if prev_wear.map_or(false, |p| p != wear) {
            for s in &mut state {
                *s = [0.0; 2];
            }
        }
        prev_wear = Some(wear);
        let mut v = data[i];
        for (sec, st) in sections.iter().zip(state.iter_mut()) {
            let y = sec.b[0] * v + st[0];
            st[0] = sec.b[1] * v - sec.a[0] * y + st[1];
            st[1] = sec.b[2] * v - sec.a[1] * y;
            v = y;
        }
        data[i] = v;
    }
}

/// Bandpass-filters all three axes causally, preserving the wear mask.
pub fn bandpass(sig: &UniformSignal, lo: f64, hi: f64) -> Result<UniformSignal, SignalError> {
    let sections = design_bandpass_sos(lo, hi, sig.rate)?;
    let mut out = sig.clone();
    filter_axis(&sections, &mut out.x, &sig.wear_mask);
    filter_axis(&sections, &mut out.y, &sig.wear_mask);
    filter_axis(&sections, &mut out.z, &sig.wear_mask);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine_signal(f: f64, fs: f64, secs: f64) -> UniformSignal {
        let n = (secs * fs) as usize;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin())
            .collect();
        UniformSignal {
            start_t: 0,
            rate: fs,
            y: x.clone(),
            z: x.clone(),
            x,
            wear_mask: vec![true; n],
        }
    }

    /// Steady-state amplitude over the last third of the signal.
    fn steady_amplitude(v: &[f64]) -> f64 {
        let tail = &v[v.len() * 2 / 3..];
        let power = tail.iter().map(|s| s * s).sum::<f64>() / tail.len() as f64;
        (2.0 * power).sqrt()
    }

    #[test]
    fn dc_is_rejected() {
        let n = 6000;
        let sig = UniformSignal {
            start_t: 0,
            rate: 100.0,
            x: vec![1.0; n],
            y: vec![1.0; n],
            z: vec![1.0; n],
            wear_mask: vec![true; n],
        };
        let out = bandpass(&sig, 0.8, 20.0).unwrap();
        let tail_max = out.x[n - 500..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(tail_max < 1e-3, "DC residue {tail_max}");
    }

    #[test]
    fn passband_sine_matches_analytic_response() {
        let fs = 100.0;
        let sections = design_bandpass_sos(0.8, 20.0, fs).unwrap();
        for f in [4.0, 10.0] {
            let sig = sine_signal(f, fs, 60.0);
            let out = bandpass(&sig, 0.8, 20.0).unwrap();
            let measured = steady_amplitude(&out.x);
            let analytic = sos_magnitude_response(&sections, f, fs);
            assert!(
                (measured - analytic).abs() / analytic < 0.01,
                "f={f}: measured {measured}, analytic {analytic}"
            );
        }
    }

    #[test]
    fn deep_stopband_sine_is_suppressed() {
        let fs = 100.0;
        let sig = sine_signal(0.1, fs, 300.0);
        let out = bandpass(&sig, 0.8, 20.0).unwrap();
        assert!(steady_amplitude(&out.x) < 0.01);
        let sections = design_bandpass_sos(0.8, 20.0, fs).unwrap();
        assert!(sos_magnitude_response(&sections, 0.1, fs) < 0.01);
    }

    #[test]
    fn cutoff_above_nyquist_is_an_error() {
        let sig = sine_signal(1.0, 30.0, 10.0);
        assert!(matches!(
            bandpass(&sig, 0.8, 20.0),
            Err(SignalError::CutoffAboveNyquist { .. })
        ));
    }

    #[test]
    fn filter_is_linear() {
        let fs = 100.0;
        let a = sine_signal(3.0, fs, 20.0);
        let b = sine_signal(7.3, fs, 20.0);
        let n = a.len();
        let combo = UniformSignal {
            start_t: 0,
            rate: fs,
            x: (0..n).map(|i| 2.5 * a.x[i] - 0.7 * b.x[i]).collect(),
            y: vec![0.0; n],
            z: vec![0.0; n],
            wear_mask: vec![true; n],
        };
        let fa = bandpass(&a, 0.8, 20.0).unwrap();
        let fb = bandpass(&b, 0.8, 20.0).unwrap();
        let fc = bandpass(&combo, 0.8, 20.0).unwrap();
        let scale = fc.x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-30);
        for i in 0..n {
            let expect = 2.5 * fa.x[i] - 0.7 * fb.x[i];
            assert!((fc.x[i] - expect).abs() / scale < 1e-9);
        }
    }

    #[test]
    fn state_resets_at_wear_boundary() {
        let fs = 100.0;
        let mut sig = sine_signal(4.0, fs, 20.0);
        let n = sig.len();
        for i in 0..n / 2 {
            sig.wear_mask[i] = false;
        }
        let out = bandpass(&sig, 0.8, 20.0).unwrap();
        // The second half must equal filtering it standalone from zero state.
        let half = UniformSignal {
            start_t: 0,
            rate: fs,
            x: sig.x[n / 2..].to_vec(),
            y: sig.y[n / 2..].to_vec(),
            z: sig.z[n / 2..].to_vec(),
            wear_mask: vec![true; n - n / 2],
        };
        let half_out = bandpass(&half, 0.8, 20.0).unwrap();
        for i in 0..half.len() {
            assert!((out.x[n / 2 + i] - half_out.x[i]).abs() < 1e-12);
        }
    }
}

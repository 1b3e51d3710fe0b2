//! Butterworth band-pass design (bilinear transform, second-order sections)
//! and forward-backward filtering with odd-extension padding and
//! steady-state initial conditions.

use num_complex::Complex64;
use std::f64::consts::PI;

/// One biquad, `b0 b1 b2 / 1 a1 a2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

/// Designs an order-`order` digital Butterworth band-pass (`2 * order` poles).
///
/// Caller guarantees `0 < low < high < fs / 2`.
pub fn butter_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> SosFilter {
    let fs2 = 2.0 * fs;
    let w1 = fs2 * (PI * low_hz / fs).tan();
    let w2 = fs2 * (PI * high_hz / fs).tan();
    let bw = w2 - w1;
    let w0sq = w1 * w2;

    let mut analog_poles = Vec::with_capacity(2 * order);
    for i in 0..order {
        let m = 2.0 * i as f64 - order as f64 + 1.0;
        let p = -Complex64::from_polar(1.0, PI * m / (2.0 * order as f64));
        let half = p * (bw / 2.0);
        let disc = (half * half - w0sq).sqrt();
        analog_poles.push(half + disc);
        analog_poles.push(half - disc);
    }

    // bilinear map; analog zeros at s = 0 map to z = 1, those at infinity to z = -1
    let mut gain = Complex64::new(bw.powi(order as i32) * fs2.powi(order as i32), 0.0);
    let mut poles = Vec::with_capacity(analog_poles.len());
    for p in &analog_poles {
        gain /= fs2 - p;
        poles.push((fs2 + p) / (fs2 - p));
    }

    let mut sections = Vec::with_capacity(order);
    let mut real: Vec<f64> = Vec::new();
    let tol = 1e-10;
    for p in &poles {
        if p.im > tol {
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [1.0, -2.0 * p.re, p.norm_sqr()],
            });
        } else if p.im.abs() <= tol {
            real.push(p.re);
        }
    }
    real.sort_by(|a, b| a.total_cmp(b));
    for pair in real.chunks(2) {
        let (p1, p2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -(p1 + p2), p1 * p2],
        });
    }
    let g = gain.re;
    for v in &mut sections[0].b {
        *v *= g;
    }
    SosFilter { sections }
}

impl SosFilter {
    /// Complex response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let zinv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / fs);
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
            let num = s.b[0] + zinv * (s.b[1] + zinv * s.b[2]);
            let den = s.a[0] + zinv * (s.a[1] + zinv * s.a[2]);
            acc * num / den
        })
    }

    fn pad_len(&self) -> usize {
        let n = self.sections.len();
        let trivial = self
            .sections
            .iter()
            .filter(|s| s.b[2] == 0.0)
            .count()
            .min(self.sections.iter().filter(|s| s.a[2] == 0.0).count());
        3 * (2 * n + 1 - trivial)
    }

    /// Steady-state states for a unit step, per section.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let dc = s.b.iter().sum::<f64>() / s.a.iter().sum::<f64>();
                let z1 = s.b[2] - s.a[2] * dc;
                let z0 = s.b[1] + z1 - s.a[1] * dc;
                let out = [scale * z0, scale * z1];
                scale *= dc;
                out
            })
            .collect()
    }

    fn run(&self, x: &mut [f64], init: f64) {
        for (s, zi) in self.sections.iter().zip(self.step_states()) {
            let (mut z0, mut z1) = (zi[0] * init, zi[1] * init);
            for v in x.iter_mut() {
                let xn = *v;
                let y = s.b[0] * xn + z0;
                z0 = s.b[1] * xn + z1 - s.a[1] * y;
                z1 = s.b[2] * xn - s.a[2] * y;
                *v = y;
            }
        }
    }

    /// Zero-phase forward-backward filtering.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = self.pad_len().min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let first = ext[0];
        self.run(&mut ext, first);
        ext.reverse();
        let first = ext[0];
        self.run(&mut ext, first);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

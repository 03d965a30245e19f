//! Rate coding of gray frames into binary spike trains.

use crate::error::{Error, Result};
use crate::numerics::{Grid2D, Rng};

/// Bit-packed spikes indexed by (sample, channel, row, col, step).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeTrainBatch {
    batch: usize,
    channels: usize,
    rows: usize,
    cols: usize,
    steps: usize,
    bits: Vec<u64>,
}

impl SpikeTrainBatch {
    pub fn zeros(batch: usize, channels: usize, rows: usize, cols: usize, steps: usize) -> Self {
        let n = batch * channels * rows * cols * steps;
        Self {
            batch,
            channels,
            rows,
            cols,
            steps,
            bits: vec![0; n.div_ceil(64)],
        }
    }

    /// (batch, channels, rows, cols, steps)
    pub fn shape(&self) -> (usize, usize, usize, usize, usize) {
        (self.batch, self.channels, self.rows, self.cols, self.steps)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Features per frame (channels x rows x cols).
    pub fn frame_len(&self) -> usize {
        self.channels * self.rows * self.cols
    }

    #[inline]
    fn index(&self, b: usize, c: usize, r: usize, col: usize, t: usize) -> usize {
        debug_assert!(b < self.batch && c < self.channels && r < self.rows && col < self.cols && t < self.steps);
        (((b * self.channels + c) * self.rows + r) * self.cols + col) * self.steps + t
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, r: usize, col: usize, t: usize) -> bool {
        let i = self.index(b, c, r, col, t);
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, r: usize, col: usize, t: usize, spike: bool) {
        let i = self.index(b, c, r, col, t);
        if spike {
            self.bits[i / 64] |= 1 << (i % 64);
        } else {
            self.bits[i / 64] &= !(1 << (i % 64));
        }
    }

    /// Total spikes of one pixel over all steps.
    pub fn count(&self, b: usize, c: usize, r: usize, col: usize) -> usize {
        (0..self.steps).filter(|&t| self.get(b, c, r, col, t)).count()
    }

    /// Unpack one frame of sample `b` at step `t`, channel-major.
    pub fn frame_into(&self, b: usize, t: usize, out: &mut [f64]) {
        assert_eq!(out.len(), self.frame_len());
        let per_pixel = self.steps;
        let base = b * self.frame_len();
        for (k, o) in out.iter_mut().enumerate() {
            let i = (base + k) * per_pixel + t;
            *o = (self.bits[i / 64] >> (i % 64) & 1) as f64;
        }
    }

    /// Dense `(batch * steps) x frame_len` matrix; row `b * steps + t`.
    pub fn to_matrix(&self) -> Vec<f64> {
        let f = self.frame_len();
        let mut out = vec![0.0; self.batch * self.steps * f];
        for b in 0..self.batch {
            for k in 0..f {
                let pix = (b * f + k) * self.steps;
                for t in 0..self.steps {
                    let i = pix + t;
                    if self.bits[i / 64] >> (i % 64) & 1 == 1 {
                        out[(b * self.steps + t) * f + k] = 1.0;
                    }
                }
            }
        }
        out
    }

    /// Indices of active features of sample `b` at step `t`.
    pub fn active(&self, b: usize, t: usize) -> Vec<usize> {
        let f = self.frame_len();
        (0..f)
            .filter(|&k| {
                let i = (b * f + k) * self.steps + t;
                self.bits[i / 64] >> (i % 64) & 1 == 1
            })
            .collect()
    }

    /// Single-sample view copied out of the batch.
    pub fn sample(&self, b: usize) -> SpikeTrainBatch {
        let mut out = SpikeTrainBatch::zeros(1, self.channels, self.rows, self.cols, self.steps);
        for c in 0..self.channels {
            for r in 0..self.rows {
                for col in 0..self.cols {
                    for t in 0..self.steps {
                        if self.get(b, c, r, col, t) {
                            out.set(0, c, r, col, t, true);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Encode one frame: at each step, pixel spikes iff a fresh uniform < intensity.
pub fn rate_encode(img: &Grid2D, steps: usize, rng: &mut Rng) -> Result<SpikeTrainBatch> {
    encode_batch(&[img], steps, rng)
}

/// Encode frames of identical size into one batch. Draws are taken sample by
/// sample, pixel by pixel, step by step.
pub fn encode_batch(images: &[&Grid2D], steps: usize, rng: &mut Rng) -> Result<SpikeTrainBatch> {
    let first = images.first().ok_or_else(|| Error::invalid("cannot encode an empty batch"))?;
    if steps == 0 {
        return Err(Error::invalid("spike trains need at least one step"));
    }
    let (rows, cols) = (first.rows(), first.cols());
    for img in images {
        if img.rows() != rows || img.cols() != cols {
            return Err(Error::invalid(format!(
                "inconsistent frame sizes in batch: {}x{} vs {rows}x{cols}",
                img.rows(),
                img.cols()
            )));
        }
        if let Some(&v) = img.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {v} outside [0, 1]")));
        }
    }
    let mut out = SpikeTrainBatch::zeros(images.len(), 1, rows, cols, steps);
    for (b, img) in images.iter().enumerate() {
        for r in 0..rows {
            for c in 0..cols {
                let p = img.get(r, c);
                for t in 0..steps {
                    if rng.uniform() < p {
                        out.set(b, 0, r, c, t, true);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};

    #[test]
    fn extremes() {
        let mut rng = Rng::new(1);
        let zero = rate_encode(&Grid2D::zeros(3, 3).unwrap(), 50, &mut rng).unwrap();
        assert!((0..3).all(|r| (0..3).all(|c| zero.count(0, 0, r, c) == 0)));
        let one = rate_encode(&Grid2D::filled(3, 3, 1.0).unwrap(), 50, &mut rng).unwrap();
        assert!((0..3).all(|r| (0..3).all(|c| one.count(0, 0, r, c) == 50)));
    }

    #[test]
    fn rejects_bad_input() {
        let mut rng = Rng::new(1);
        assert!(rate_encode(&Grid2D::filled(1, 1, 1.5).unwrap(), 5, &mut rng).is_err());
        assert!(rate_encode(&Grid2D::zeros(1, 1).unwrap(), 0, &mut rng).is_err());
        let a = Grid2D::zeros(2, 2).unwrap();
        let b = Grid2D::zeros(2, 3).unwrap();
        assert!(encode_batch(&[&a, &b], 5, &mut rng).is_err());
        assert!(encode_batch(&[], 5, &mut rng).is_err());
    }

    #[test]
    fn mean_count_at_half_intensity() {
        let img = Grid2D::filled(100, 100, 0.5).unwrap();
        let enc = rate_encode(&img, 30, &mut Rng::new(2)).unwrap();
        let total: usize = (0..100).flat_map(|r| (0..100).map(move |c| (r, c))).map(|(r, c)| enc.count(0, 0, r, c)).sum();
        let mean = total as f64 / 1e4;
        assert!((14.7..=15.3).contains(&mean), "mean {mean}");
    }

    #[test]
    fn counts_follow_binomial() {
        let steps = 30u64;
        let p = 0.3;
        let img = Grid2D::filled(100, 100, p).unwrap();
        let enc = rate_encode(&img, steps as usize, &mut Rng::new(3)).unwrap();
        let mut hist = vec![0usize; steps as usize + 1];
        for r in 0..100 {
            for c in 0..100 {
                hist[enc.count(0, 0, r, c)] += 1;
            }
        }
        let binom = Binomial::new(p, steps).unwrap();
        let n = 1e4;
        // Merge sparse tails so every bin expects at least 5.
        let mut bins: Vec<(f64, f64)> = Vec::new();
        let (mut obs, mut exp) = (0.0, 0.0);
        for (k, &h) in hist.iter().enumerate() {
            obs += h as f64;
            exp += n * binom.pmf(k as u64);
            if exp >= 5.0 {
                bins.push((obs, exp));
                obs = 0.0;
                exp = 0.0;
            }
        }
        if let Some(last) = bins.last_mut() {
            last.0 += obs;
            last.1 += exp;
        }
        let stat: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
        let crit = ChiSquared::new((bins.len() - 1) as f64).unwrap().inverse_cdf(0.999);
        assert!(stat < crit, "chi2 {stat} >= {crit}");
    }

    #[test]
    fn steps_are_uncorrelated() {
        let steps = 100_000;
        let enc = rate_encode(&Grid2D::filled(1, 1, 0.3).unwrap(), steps, &mut Rng::new(4)).unwrap();
        let xs: Vec<f64> = (0..steps).map(|t| enc.get(0, 0, 0, 0, t) as u8 as f64).collect();
        let mean = xs.iter().sum::<f64>() / steps as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / steps as f64;
        let cov = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (steps - 1) as f64;
        let rho = cov / var;
        let se = 1.0 / (steps as f64).sqrt();
        assert!(rho.abs() < 3.0 * se, "lag-1 autocorrelation {rho}");
    }

    #[test]
    fn batch_shape_determinism_and_freshness() {
        let mut src = Rng::new(5);
        let imgs: Vec<Grid2D> = (0..4)
            .map(|_| Grid2D::from_fn(20, 80, |_, _| src.uniform()).unwrap())
            .collect();
        let refs: Vec<&Grid2D> = imgs.iter().collect();
        let mut rng = Rng::new(6);
        let snapshot = rng.clone();
        let a = encode_batch(&refs, 30, &mut rng).unwrap();
        assert_eq!(a.shape(), (4, 1, 20, 80, 30));
        let again = encode_batch(&refs, 30, &mut snapshot.clone()).unwrap();
        assert_eq!(a, again);
        let next = encode_batch(&refs, 30, &mut rng).unwrap();
        assert_ne!(a, next);
    }

    #[test]
    fn matrix_and_frame_views_agree() {
        let img = Grid2D::filled(2, 3, 0.5).unwrap();
        let enc = encode_batch(&[&img, &img], 4, &mut Rng::new(8)).unwrap();
        let m = enc.to_matrix();
        let mut frame = vec![0.0; 6];
        for b in 0..2 {
            for t in 0..4 {
                enc.frame_into(b, t, &mut frame);
                assert_eq!(&m[(b * 4 + t) * 6..(b * 4 + t + 1) * 6], frame.as_slice());
                let act = enc.active(b, t);
                assert_eq!(act.len(), frame.iter().filter(|&&v| v == 1.0).count());
            }
        }
        assert_eq!(enc.sample(1).to_matrix(), m[24..].to_vec());
    }
}

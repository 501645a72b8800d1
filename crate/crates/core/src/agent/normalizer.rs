use crate::nn::NnError;

/// Running per-coordinate mean and standard deviation of policy inputs.
/// Normalized values are `clip((x − mean)/std, ±clip)`; `std` never drops
/// below `eps`. Before any data arrives the transform is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    width: usize,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    count: f64,
    eps: f64,
    clip: f64,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Normalizer {
    pub fn new(width: usize, eps: f64, clip: f64) -> Self {
        Self {
            width,
            sum: vec![0.0; width],
            sumsq: vec![0.0; width],
            count: 0.0,
            eps,
            clip,
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// Adds the rows of `x` (`rows × width`) to the statistics.
    pub fn update(&mut self, x: &[f64]) {
        assert_eq!(x.len() % self.width, 0, "normalizer input width");
        for row in x.chunks_exact(self.width) {
            for j in 0..self.width {
                self.sum[j] += row[j];
                self.sumsq[j] += row[j] * row[j];
            }
            self.count += 1.0;
        }
        self.refresh();
    }

    fn refresh(&mut self) {
        if self.count == 0.0 {
            return;
        }
        for j in 0..self.width {
            let m = self.sum[j] / self.count;
            let var = self.sumsq[j] / self.count - m * m;
            self.mean[j] = m;
            self.std[j] = var.max(self.eps * self.eps).sqrt();
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let w = self.width;
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let j = i % w;
                ((v - self.mean[j]) / self.std[j]).clamp(-self.clip, self.clip)
            })
            .collect()
    }

    /// Chain rule through [`Normalizer::normalize`]; clipped entries pass
    /// no gradient.
    pub fn backward(&self, x: &[f64], dz: &[f64]) -> Vec<f64> {
        let w = self.width;
        x.iter()
            .zip(dz)
            .enumerate()
            .map(|(i, (v, g))| {
                let j = i % w;
                let z = (v - self.mean[j]) / self.std[j];
                if z.abs() < self.clip {
                    g / self.std[j]
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// `[eps, clip, count, sum…, sumsq…]`.
    pub fn to_values(&self) -> Vec<f64> {
        let mut v = vec![self.eps, self.clip, self.count];
        v.extend_from_slice(&self.sum);
        v.extend_from_slice(&self.sumsq);
        v
    }

    pub fn from_values(width: usize, v: &[f64]) -> Result<Self, NnError> {
        if v.len() != 3 + 2 * width {
            return Err(NnError::LengthMismatch(3 + 2 * width, v.len()));
        }
        let mut n = Normalizer::new(width, v[0], v[1]);
        n.count = v[2];
        n.sum.copy_from_slice(&v[3..3 + width]);
        n.sumsq.copy_from_slice(&v[3 + width..]);
        n.refresh();
        Ok(n)
    }
}

/// Per-component running mean and variance (Welford, merged with Chan's rule).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStat {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl RunningStat {
    pub fn new(dim: usize) -> Self {
        RunningStat { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim());
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn merge(&mut self, other: &RunningStat) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for j in 0..self.dim() {
            let d = other.mean[j] - self.mean[j];
            self.mean[j] += d * nb / n;
            self.m2[j] += other.m2[j] + d * d * na * nb / n;
        }
        self.count += other.count;
    }

    /// Frozen snapshot used for a whole generation. With fewer than two
    /// samples the snapshot is the identity.
    pub fn normalizer(&self) -> Normalizer {
        if self.count < 2 {
            return Normalizer::identity(self.dim());
        }
        let n = self.count as f64;
        let inv_std = self.m2.iter().map(|s| 1.0 / (s / (n - 1.0)).sqrt().max(Normalizer::MIN_STD)).collect();
        Normalizer { mean: self.mean.clone(), inv_std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl Normalizer {
    pub const MIN_STD: f64 = 1e-2;

    pub fn identity(dim: usize) -> Self {
        Normalizer { mean: vec![0.0; dim], inv_std: vec![1.0; dim] }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.inv_std).map(|((v, m), s)| (v - m) * s).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_matches_sequential_push() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let mut all = RunningStat::new(2);
        xs.iter().for_each(|x| all.push(x));
        let mut a = RunningStat::new(2);
        let mut b = RunningStat::new(2);
        xs[..7].iter().for_each(|x| a.push(x));
        xs[7..].iter().for_each(|x| b.push(x));
        a.merge(&b);
        assert_eq!(a.count, 20);
        for j in 0..2 {
            assert!((a.mean[j] - all.mean[j]).abs() < 1e-12);
            assert!((a.m2[j] - all.m2[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_until_two_samples() {
        let mut s = RunningStat::new(2);
        s.push(&[3.0, 4.0]);
        assert_eq!(s.normalizer(), Normalizer::identity(2));
        s.push(&[5.0, 4.0]);
        let n = s.normalizer();
        assert_eq!(n.mean, vec![4.0, 4.0]);
        assert_eq!(n.inv_std[1], 1.0 / Normalizer::MIN_STD);
    }
}

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dag, EDGE_ABSENT};

const COSINE_S: f64 = 0.008;
const ALPHA_BAR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    BottomUp,
    TopDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Element {
    Node,
    Edge,
}

pub fn cosine_alpha_bar(t: usize, t_max: usize) -> Result<f64> {
    if t > t_max || t_max == 0 {
        return Err(Error::TimestepOutOfRange { t, max: t_max });
    }
    let f = |x: f64| (((x + COSINE_S) / (1.0 + COSINE_S)) * FRAC_PI_2).cos().powi(2);
    let v = f(t as f64 / t_max as f64) / f(0.0);
    Ok(v.clamp(ALPHA_BAR_FLOOR, 1.0))
}

/// `alpha * I + (1 - alpha) * 1 m`, row-major.
pub fn transition_matrix(alpha: f64, marginal: &[f64]) -> Vec<f64> {
    let k = marginal.len();
    let mut q = vec![0.0; k * k];
    for r in 0..k {
        for c in 0..k {
            q[r * k + c] = (1.0 - alpha) * marginal[c] + if r == c { alpha } else { 0.0 };
        }
    }
    q
}

/// Noise process with marginal-preserving transitions and the level-aware
/// local clock.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    t_max: usize,
    /// `alpha_bars[0] = 1`, then one entry per timestep.
    alpha_bars: Vec<f64>,
    m_x: Vec<f64>,
    m_e: Vec<f64>,
    beta: f64,
    mode: Mode,
    node_noise: bool,
}

fn check_marginal(m: &[f64], what: &'static str) -> Result<()> {
    if m.is_empty() {
        return Err(Error::EmptyDistribution(what));
    }
    if m.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::NonFinite(format!("{what} has invalid entries {m:?}")));
    }
    let s: f64 = m.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Unnormalized { sum: s });
    }
    Ok(())
}

impl NoiseModel {
    pub fn cosine(t_max: usize, m_x: Vec<f64>, m_e: Vec<f64>, beta: f64, mode: Mode) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::Config("T must be at least 1".into()));
        }
        let alpha_bars = (0..=t_max).map(|t| cosine_alpha_bar(t, t_max)).collect::<Result<Vec<_>>>()?;
        Self::build(alpha_bars, m_x, m_e, beta, mode)
    }

    /// Uses explicit per-step `alpha_1..alpha_T`.
    pub fn from_alphas(alphas: &[f64], m_x: Vec<f64>, m_e: Vec<f64>, beta: f64, mode: Mode) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Config("T must be at least 1".into()));
        }
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::Config(format!("alpha {a} outside (0, 1]")));
        }
        let mut alpha_bars = Vec::with_capacity(alphas.len() + 1);
        alpha_bars.push(1.0);
        for a in alphas {
            alpha_bars.push(alpha_bars.last().unwrap() * a);
        }
        Self::build(alpha_bars, m_x, m_e, beta, mode)
    }

    fn build(alpha_bars: Vec<f64>, m_x: Vec<f64>, m_e: Vec<f64>, beta: f64, mode: Mode) -> Result<Self> {
        check_marginal(&m_x, "node marginal")?;
        check_marginal(&m_e, "edge marginal")?;
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be a non-negative number, got {beta}")));
        }
        let t_max = alpha_bars.len() - 1;
        if beta >= t_max as f64 && beta > 0.0 {
            return Err(Error::DegenerateSchedule { offset: beta, t_max });
        }
        Ok(NoiseModel {
            t_max,
            alpha_bars,
            m_x,
            m_e,
            beta,
            mode,
            node_noise: true,
        })
    }

    /// Disables node-type corruption (node types then stay fixed).
    pub fn without_node_noise(mut self) -> Self {
        self.node_noise = false;
        self
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn node_noise(&self) -> bool {
        self.node_noise
    }

    pub fn marginal(&self, which: Element) -> &[f64] {
        match which {
            Element::Node => &self.m_x,
            Element::Edge => &self.m_e,
        }
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or(Error::TimestepOutOfRange { t, max: self.t_max })
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(Error::TimestepOutOfRange { t, max: self.t_max });
        }
        Ok(self.alpha_bar(t)? / self.alpha_bar(t - 1)?)
    }

    /// One-step matrix `Q^t`.
    pub fn step_transition(&self, t: usize, which: Element) -> Result<Vec<f64>> {
        Ok(transition_matrix(self.alpha(t)?, self.marginal(which)))
    }

    /// `Q^1 ... Q^t` in closed form.
    pub fn cumulative_transition(&self, t: usize, which: Element) -> Result<Vec<f64>> {
        Ok(transition_matrix(self.alpha_bar(t)?, self.marginal(which)))
    }

    /// `Q^{s+1} ... Q^t`, identity when `s == t`.
    pub fn multi_step_transition(&self, s: usize, t: usize, which: Element) -> Result<Vec<f64>> {
        if s > t {
            return Err(Error::NonMonotoneTimesteps { prev: s, cur: t });
        }
        let ratio = self.alpha_bar(t)? / self.alpha_bar(s)?;
        Ok(transition_matrix(ratio, self.marginal(which)))
    }

    /// Local timestep for an element at normalized level `l`.
    pub fn local_timestep(&self, t: usize, l: f64) -> Result<usize> {
        if t > self.t_max {
            return Err(Error::TimestepOutOfRange { t, max: self.t_max });
        }
        let depth = match self.mode {
            Mode::BottomUp => 1.0 - l,
            Mode::TopDown => l,
        };
        let offset = self.beta * depth;
        let big_t = self.t_max as f64;
        if offset >= big_t {
            return Err(Error::DegenerateSchedule {
                offset,
                t_max: self.t_max,
            });
        }
        let x = big_t / (big_t - offset) * (t as f64 - offset);
        Ok((x.clamp(0.0, big_t) + 0.5).floor() as usize)
    }

    /// Per-node local timesteps of a graph at global step `t`.
    pub fn node_timesteps(&self, dag: &Dag, t: usize) -> Result<Vec<usize>> {
        (0..dag.n()).map(|i| self.local_timestep(t, dag.normalized_level(i))).collect()
    }

    /// Samples `x^tau` for every node and edge of a clean graph. Edge `(i, j)`
    /// follows the clock of its parent `j`. Self-pairs stay absent.
    pub fn corrupt<R: Rng + ?Sized>(&self, clean: &Dag, t: usize, rng: &mut R) -> Result<Dag> {
        let n = clean.n();
        let taus = self.node_timesteps(clean, t)?;
        let mut nodes = clean.node_classes();
        if self.node_noise {
            for (i, x) in nodes.iter_mut().enumerate() {
                let ab = self.alpha_bar(taus[i])?;
                *x = sample_row(ab, *x, &self.m_x, rng);
            }
        }
        let mut edges = clean.edge_classes();
        for j in 0..n {
            let ab = self.alpha_bar(taus[j])?;
            for i in 0..n {
                if i != j {
                    let e = &mut edges[i * n + j];
                    *e = sample_row(ab, *e, &self.m_e, rng);
                }
            }
        }
        let noisy = Dag::from_classes(
            clean.node_categories(),
            clean.edge_categories(),
            &nodes,
            &edges,
            clean.levels().to_vec(),
        )?;
        debug_assert!((0..n).all(|i| noisy.edge_class(i, i) == EDGE_ABSENT));
        Ok(noisy)
    }
}

/// Draws from row `x` of `ab I + (1 - ab) 1 m`: keep with probability `ab`,
/// otherwise resample from the marginal.
fn sample_row<R: Rng + ?Sized>(ab: f64, x: usize, m: &[f64], rng: &mut R) -> usize {
    if ab >= 1.0 || rng.gen::<f64>() < ab {
        x
    } else {
        sample_categorical(m, rng)
    }
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let total: f64 = p.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (k, &w) in p.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    p.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aig::random_aig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn model(t_max: usize, beta: f64) -> NoiseModel {
        NoiseModel::cosine(t_max, vec![0.3, 0.5, 0.2], vec![0.8, 0.15, 0.05], beta, Mode::BottomUp).unwrap()
    }

    fn matmul(a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
        let mut c = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                c[i * k + j] = (0..k).map(|r| a[i * k + r] * b[r * k + j]).sum();
            }
        }
        c
    }

    #[test]
    fn cosine_endpoints_and_monotone() {
        assert_eq!(cosine_alpha_bar(0, 500).unwrap(), 1.0);
        assert!(cosine_alpha_bar(500, 500).unwrap() < 1e-4);
        assert!(cosine_alpha_bar(501, 500).is_err());
        let v: Vec<f64> = (0..=500).map(|t| cosine_alpha_bar(t, 500).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn transition_matrix_cases() {
        let m = [0.2, 0.3, 0.5];
        let id = transition_matrix(1.0, &m);
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(id[r * 3 + c], if r == c { 1.0 } else { 0.0 });
            }
        }
        let flat = transition_matrix(0.0, &m);
        assert_eq!(&flat[3..6], &m);
        let q = transition_matrix(0.25, &m);
        for (got, want) in q[..3].iter().zip([0.4, 0.225, 0.375]) {
            assert!((got - want).abs() < 1e-15);
        }
        for r in 0..3 {
            assert!((q[r * 3..r * 3 + 3].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_matches_product() {
        let nm = model(500, 32.0);
        let mut prod = transition_matrix(1.0, nm.marginal(Element::Edge));
        for t in 1..=500 {
            prod = matmul(&prod, &nm.step_transition(t, Element::Edge).unwrap(), 3);
            if t % 50 == 0 || t == 1 {
                let closed = nm.cumulative_transition(t, Element::Edge).unwrap();
                let err = closed.iter().zip(&prod).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err < 1e-10, "t = {t}: {err}");
            }
            let prev = nm.cumulative_transition(t - 1, Element::Edge).unwrap();
            let chained = matmul(&prev, &nm.step_transition(t, Element::Edge).unwrap(), 3);
            let closed = nm.cumulative_transition(t, Element::Edge).unwrap();
            assert!(chained.iter().zip(&closed).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        let last = nm.cumulative_transition(500, Element::Edge).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert!((last[r * 3 + c] - nm.marginal(Element::Edge)[c]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn local_timestep_cases() {
        let nm = model(500, 32.0);
        for t in 0..=500 {
            assert_eq!(nm.local_timestep(t, 1.0).unwrap(), t);
        }
        assert_eq!(nm.local_timestep(10, 0.0).unwrap(), 0);
        assert_eq!(nm.local_timestep(100, 0.0).unwrap(), 73);
        assert!(nm.local_timestep(501, 0.5).is_err());
        let top = NoiseModel::cosine(500, vec![1.0], vec![0.5, 0.5], 32.0, Mode::TopDown).unwrap();
        assert_eq!(top.local_timestep(100, 1.0).unwrap(), 73);
        assert_eq!(top.local_timestep(100, 0.0).unwrap(), 100);
        let flat = model(50, 0.0);
        for t in 0..=50 {
            assert_eq!(flat.local_timestep(t, 0.3).unwrap(), t);
        }
        assert!(NoiseModel::cosine(10, vec![1.0], vec![1.0], 10.0, Mode::BottomUp).is_err());
    }

    #[test]
    fn corrupt_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (aig, _) = random_aig(3, 1, 10, &mut rng).unwrap();
        let dag = aig.to_dag().unwrap();
        let nm = model(50, 16.0);
        assert_eq!(nm.corrupt(&dag, 0, &mut rng).unwrap(), dag);
        let fixed = nm.clone().without_node_noise();
        for t in [1, 25, 50] {
            let noisy = fixed.corrupt(&dag, t, &mut rng).unwrap();
            assert_eq!(noisy.node_classes(), dag.node_classes());
            assert_eq!(noisy.levels(), dag.levels());
        }
    }

    #[test]
    fn full_noise_matches_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (aig, _) = random_aig(3, 1, 10, &mut rng).unwrap();
        let dag = aig.to_dag().unwrap();
        let nm = model(50, 16.0).without_node_noise();
        let n = dag.n();
        let per_graph = n * (n - 1);
        let mut counts = [0usize; 3];
        let mut total = 0;
        while total < 100_000 {
            let noisy = nm.corrupt(&dag, 50, &mut rng).unwrap();
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        counts[noisy.edge_class(i, j)] += 1;
                    }
                }
            }
            total += per_graph;
        }
        // alpha_bar_T is 1e-8, so residual memory of the clean graph is negligible
        let stat: f64 = counts
            .iter()
            .zip(nm.marginal(Element::Edge))
            .map(|(&o, &p)| {
                let e = p * total as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let p = 1.0 - ChiSquared::new(2.0).unwrap().cdf(stat);
        assert!(p > 0.01, "chi-square p = {p}, counts {counts:?}");
    }
}

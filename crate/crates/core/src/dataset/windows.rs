use super::records::RecordStream;
use crate::error::{Error, Result};

/// Smallest standard deviation used for standardization.
pub const STD_FLOOR: f64 = 1e-6;

/// Discounted sum `sum_j gamma^j r_j`.
pub fn compute_return(rewards: &[f64], gamma: f64) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::domain("return of an empty reward sequence"));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::domain(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let mut discount = 1.0;
    let mut total = 0.0;
    for &r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    Ok(total)
}

/// `H` consecutive frames of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    pub start: u64,
    pub node: u32,
    pub x0: Vec<[f64; 4]>,
    pub xbar0: Vec<[f64; 4]>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub y: f64,
}

impl TrajectoryWindow {
    pub fn horizon(&self) -> usize {
        self.x0.len()
    }
}

/// All stride-1 windows of length `h`; streams shorter than `h` give none.
pub fn slice_windows(stream: &RecordStream, h: usize, gamma: f64) -> Result<Vec<TrajectoryWindow>> {
    if h == 0 {
        return Err(Error::domain("horizon must be >= 1"));
    }
    let recs = &stream.records;
    if recs.len() < h {
        return Ok(Vec::new());
    }
    (0..=recs.len() - h)
        .map(|s| {
            let w = &recs[s..s + h];
            let rewards: Vec<f64> = w.iter().map(|r| r.reward).collect();
            Ok(TrajectoryWindow {
                start: w[0].t,
                node: stream.node,
                x0: w.iter().map(|r| r.obs).collect(),
                xbar0: w.iter().map(|r| r.mf_obs).collect(),
                actions: w.iter().map(|r| r.action).collect(),
                y: compute_return(&rewards, gamma)?,
                rewards,
            })
        })
        .collect()
}

/// Standardization and label-scaling constants fitted on a training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub obs_mean: [f64; 4],
    pub obs_std: [f64; 4],
    pub mf_mean: [f64; 4],
    pub mf_std: [f64; 4],
    pub action_mean: f64,
    pub action_std: f64,
    pub return_min: f64,
    pub return_max: f64,
}

fn mean_std<'a>(rows: impl Iterator<Item = &'a [f64; 4]> + Clone) -> ([f64; 4], [f64; 4]) {
    let mut n = 0usize;
    let mut mean = [0.0; 4];
    for r in rows.clone() {
        n += 1;
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    let nf = n.max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut var = [0.0; 4];
    for r in rows {
        for j in 0..4 {
            var[j] += (r[j] - mean[j]).powi(2);
        }
    }
    (mean, var.map(|v| (v / nf).sqrt().max(STD_FLOOR)))
}

impl DatasetStats {
    /// Identity standardization and unit label range.
    pub fn identity() -> Self {
        DatasetStats {
            obs_mean: [0.0; 4],
            obs_std: [1.0; 4],
            mf_mean: [0.0; 4],
            mf_std: [1.0; 4],
            action_mean: 0.0,
            action_std: 1.0,
            return_min: 0.0,
            return_max: 1.0,
        }
    }

    /// Fits observation moments over every window row and the label range
    /// over the windows' returns.
    pub fn fit(windows: &[TrajectoryWindow]) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::domain("cannot fit statistics on an empty dataset"));
        }
        let (obs_mean, obs_std) = mean_std(windows.iter().flat_map(|w| &w.x0));
        let (mf_mean, mf_std) = mean_std(windows.iter().flat_map(|w| &w.xbar0));
        let actions = windows.iter().flat_map(|w| &w.actions);
        let n = windows.iter().map(|w| w.actions.len()).sum::<usize>().max(1) as f64;
        let action_mean = actions.clone().sum::<f64>() / n;
        let action_std = (actions.map(|a| (a - action_mean).powi(2)).sum::<f64>() / n)
            .sqrt()
            .max(STD_FLOOR);
        let (return_min, return_max) = windows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), w| (lo.min(w.y), hi.max(w.y)));
        Ok(DatasetStats {
            obs_mean,
            obs_std,
            mf_mean,
            mf_std,
            action_mean,
            action_std,
            return_min,
            return_max,
        })
    }

    /// All 20 constants in declaration order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(20);
        for a in [&self.obs_mean, &self.obs_std, &self.mf_mean, &self.mf_std] {
            v.extend_from_slice(a);
        }
        v.extend([self.action_mean, self.action_std, self.return_min, self.return_max]);
        v
    }

    /// Inverse of [`DatasetStats::to_vec`].
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 20 {
            return Err(Error::domain(format!("expected 20 statistics, found {}", v.len())));
        }
        let arr = |i: usize| -> [f64; 4] { std::array::from_fn(|j| v[i + j]) };
        Ok(DatasetStats {
            obs_mean: arr(0),
            obs_std: arr(4),
            mf_mean: arr(8),
            mf_std: arr(12),
            action_mean: v[16],
            action_std: v[17],
            return_min: v[18],
            return_max: v[19],
        })
    }

    pub fn standardize_obs(&self, o: &[f64; 4]) -> [f64; 4] {
        std::array::from_fn(|j| (o[j] - self.obs_mean[j]) / self.obs_std[j])
    }

    pub fn destandardize_obs(&self, z: &[f64]) -> [f64; 4] {
        std::array::from_fn(|j| z[j] * self.obs_std[j] + self.obs_mean[j])
    }

    pub fn standardize_mf(&self, o: &[f64; 4]) -> [f64; 4] {
        std::array::from_fn(|j| (o[j] - self.mf_mean[j]) / self.mf_std[j])
    }

    pub fn standardize_action(&self, a: f64) -> f64 {
        (a - self.action_mean) / self.action_std
    }

    pub fn destandardize_action(&self, z: f64) -> f64 {
        z * self.action_std + self.action_mean
    }

    /// Return scaled to `[0, 1]` over the fitted range.
    pub fn normalize_return(&self, y: f64) -> f64 {
        let span = self.return_max - self.return_min;
        if span > 0.0 {
            (y - self.return_min) / span
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::records::TransitionRecord;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn horner(rewards: &[f64], gamma: f64) -> f64 {
        rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
    }

    fn stream(len: usize, seed: u64) -> RecordStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RecordStream {
            scenario: "test".into(),
            seed,
            node: 3,
            records: (0..len)
                .map(|t| TransitionRecord {
                    t: t as u64,
                    node: 3,
                    obs: std::array::from_fn(|_| rng.random_range(0.0..50.0)),
                    mf_obs: std::array::from_fn(|_| rng.random_range(0.0..50.0)),
                    action: rng.random_range(0.0..10.0),
                    reward: -rng.random::<f64>(),
                })
                .collect(),
        }
    }

    #[test]
    fn return_examples() {
        assert_eq!(compute_return(&[-1.0, -1.0, -1.0], 1.0).unwrap(), -3.0);
        assert!((compute_return(&[-1.0, -1.0], 0.99).unwrap() + 1.99).abs() < 1e-15);
        assert!(compute_return(&[], 0.9).is_err());
        assert!(compute_return(&[1.0], 0.0).is_err());
    }

    #[test]
    fn return_matches_horner() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let r: Vec<f64> = (0..16).map(|_| rng.random_range(-5.0..0.0)).collect();
            assert!((compute_return(&r, 0.9).unwrap() - horner(&r, 0.9)).abs() < 1e-12);
        }
    }

    #[test]
    fn window_counts() {
        assert_eq!(slice_windows(&stream(8, 0), 8, 0.99).unwrap().len(), 1);
        assert_eq!(slice_windows(&stream(10, 0), 8, 0.99).unwrap().len(), 3);
        assert!(slice_windows(&stream(5, 0), 8, 0.99).unwrap().is_empty());
    }

    #[test]
    fn labels_match_raw_rewards() {
        let s = stream(100, 9);
        for w in slice_windows(&s, 8, 0.99).unwrap() {
            let start = w.start as usize;
            let raw: Vec<f64> = s.records[start..start + 8].iter().map(|r| r.reward).collect();
            assert!((w.y - horner(&raw, 0.99)).abs() < 1e-12);
            assert_eq!(w.x0[0], s.records[start].obs);
            assert_eq!(w.xbar0[7], s.records[start + 7].mf_obs);
        }
    }

    #[test]
    fn fitted_stats_standardize() {
        let windows = slice_windows(&stream(500, 1), 8, 0.99).unwrap();
        let stats = DatasetStats::fit(&windows).unwrap();
        let rows: Vec<[f64; 4]> = windows.iter().flat_map(|w| w.x0.iter().map(|o| stats.standardize_obs(o))).collect();
        let n = rows.len() as f64;
        for j in 0..4 {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() <= 1e-9, "mean {mean}");
            assert!((var.sqrt() - 1.0).abs() <= 1e-9);
        }
        for w in &windows {
            let y = stats.normalize_return(w.y);
            assert!((0.0..=1.0).contains(&y));
        }
    }

    proptest! {
        #[test]
        fn window_count_formula(len in 0usize..60, h in 1usize..20) {
            let got = slice_windows(&stream(len, 5), h, 0.95).unwrap().len();
            prop_assert_eq!(got, (len + 1).saturating_sub(h));
        }
    }
}

//! Episode-indexed target-distance schedule.
//!
//! Early episodes draw targets close to the swarm's starting position; the
//! distance bound approaches its final value exponentially as episodes
//! accumulate. The episode counter is shared between parallel environments so
//! the schedule advances once per episode start, whichever environment
//! starts it.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;

use crate::error::CoreError;
use crate::physics::{draw_disc, TargetSpec};
use crate::Result;

/// Growth schedule for the maximum target distance.
#[derive(Debug, Clone)]
pub struct CurriculumSchedule {
    /// Distance bound for episode 0, um.
    pub start_distance: f64,
    /// Asymptotic distance bound, um.
    pub final_distance: f64,
    /// Episode scale of the exponential approach.
    pub threshold_decay: f64,
    counter: Arc<AtomicU64>,
}

impl CurriculumSchedule {
    pub fn new(start_distance: f64, final_distance: f64, threshold_decay: f64) -> Result<Self> {
        if !(start_distance > 0.0 && start_distance <= final_distance) {
            return Err(CoreError::config(format!(
                "curriculum needs 0 < start <= final, got {start_distance}..{final_distance}"
            )));
        }
        if !(threshold_decay > 0.0) {
            return Err(CoreError::config(format!(
                "curriculum threshold decay must be > 0, got {threshold_decay}"
            )));
        }
        Ok(CurriculumSchedule {
            start_distance,
            final_distance,
            threshold_decay,
            counter: Arc::new(AtomicU64::new(0)),
        })
    }

    /// Distance bound for the given episode number.
    pub fn max_distance(&self, episode: u64) -> f64 {
        let span = self.final_distance - self.start_distance;
        self.final_distance - span * (-(episode as f64) / self.threshold_decay).exp()
    }

    /// Consumes and returns the next episode number. Clones of a schedule
    /// share the counter, so parallel environments advance it together.
    pub fn next_episode(&self) -> u64 {
        self.counter.fetch_add(1, Ordering::SeqCst)
    }

    /// Episodes started so far across all environments.
    pub fn episodes_started(&self) -> u64 {
        self.counter.load(Ordering::SeqCst)
    }

    /// Restores the shared counter (used when resuming from a checkpoint).
    pub fn set_episodes_started(&self, value: u64) {
        self.counter.store(value, Ordering::SeqCst);
    }
}

/// Starts an episode on the schedule and draws its target: center uniform in
/// area over the disc bounded by the current schedule distance, radius
/// uniform in `radius_range`.
pub fn sample_curriculum_target(
    schedule: &CurriculumSchedule,
    rng: &mut impl Rng,
    radius_range: (f64, f64),
) -> TargetSpec {
    let episode = schedule.next_episode();
    draw_disc(rng, schedule.max_distance(episode), radius_range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn starts_at_start_distance() {
        let s = CurriculumSchedule::new(20.0, 100.0, 1000.0).unwrap();
        assert_eq!(s.max_distance(0), 20.0);
    }

    #[test]
    fn approaches_final_distance() {
        let s = CurriculumSchedule::new(20.0, 100.0, 1000.0).unwrap();
        assert_relative_eq!(s.max_distance(10_000_000), 100.0, epsilon = 1e-9);
    }

    #[test]
    fn closed_form_at_one_decay_constant() {
        let s = CurriculumSchedule::new(20.0, 100.0, 1000.0).unwrap();
        let expected = 100.0 - 80.0 / std::f64::consts::E;
        assert_relative_eq!(s.max_distance(1000), expected, max_relative = 1e-12);
        assert_relative_eq!(s.max_distance(1000), 70.5696, epsilon = 1e-3);
    }

    #[test]
    fn monotone_when_growing_constant_when_flat() {
        let s = CurriculumSchedule::new(20.0, 100.0, 500.0).unwrap();
        let mut prev = s.max_distance(0);
        for e in 1..2000 {
            let d = s.max_distance(e);
            assert!(d > prev);
            assert!(d >= 20.0 && d < 100.0);
            prev = d;
        }
        let flat = CurriculumSchedule::new(50.0, 50.0, 500.0).unwrap();
        assert_eq!(flat.max_distance(0), 50.0);
        assert_eq!(flat.max_distance(12345), 50.0);
    }

    #[test]
    fn shared_counter_across_clones() {
        let s = CurriculumSchedule::new(20.0, 100.0, 1000.0).unwrap();
        let t = s.clone();
        assert_eq!(s.next_episode(), 0);
        assert_eq!(t.next_episode(), 1);
        assert_eq!(s.next_episode(), 2);
        assert_eq!(t.episodes_started(), 3);
    }

    #[test]
    fn samples_stay_within_bound() {
        let s = CurriculumSchedule::new(20.0, 100.0, 1000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let e = s.episodes_started();
            let bound = s.max_distance(e);
            let t = sample_curriculum_target(&s, &mut rng, (5.0, 20.0));
            assert!(t.center.norm() <= bound);
            assert!((5.0..=20.0).contains(&t.radius));
        }
    }

    /// Kolmogorov-Smirnov check of the uniform-disc distance law F(r) = r^2/d^2.
    #[test]
    fn disc_sampling_law() {
        let s = CurriculumSchedule::new(50.0, 50.0, 1000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let d = 50.0;
        let mut dist: Vec<f64> = (0..n)
            .map(|_| sample_curriculum_target(&s, &mut rng, (5.0, 20.0)).center.norm())
            .collect();
        dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks = 0.0f64;
        for (i, r) in dist.iter().enumerate() {
            let f = (r / d).powi(2);
            let emp_hi = (i + 1) as f64 / n as f64;
            let emp_lo = i as f64 / n as f64;
            ks = ks.max((emp_hi - f).abs()).max((f - emp_lo).abs());
        }
        // 1% significance critical value 1.63 / sqrt(n).
        assert!(ks < 1.63 / (n as f64).sqrt(), "KS statistic {ks} too large");
    }
}

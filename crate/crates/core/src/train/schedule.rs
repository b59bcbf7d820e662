use serde::{Deserialize, Serialize};

/// Cosine annealing with warm restarts, evaluated per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub initial: f64,
    /// Length of the first cycle in epochs.
    pub t0: usize,
    /// Cycle length multiplier after each restart.
    pub t_mult: usize,
    pub floor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 1e-3,
            t0: 5,
            t_mult: 1,
            floor: 1e-5,
        }
    }
}

impl LrSchedule {
    pub fn rate(&self, epoch: usize) -> f64 {
        let mut t = epoch;
        let mut len = self.t0.max(1);
        while t >= len {
            t -= len;
            len *= self.t_mult.max(1);
        }
        let phase = std::f64::consts::PI * t as f64 / len as f64;
        self.floor + (self.initial - self.floor) * (1.0 + phase.cos()) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restarts_every_cycle() {
        let s = LrSchedule::default();
        assert_eq!(s.rate(0), 1e-3);
        assert_eq!(s.rate(5), 1e-3);
        assert_eq!(s.rate(10), 1e-3);
        for e in 1..5 {
            assert!(s.rate(e) < s.rate(e - 1));
            assert!(s.rate(e) > s.floor);
            assert_eq!(s.rate(e), s.rate(e + 5));
        }
    }

    #[test]
    fn growing_cycles() {
        let s = LrSchedule {
            t_mult: 2,
            t0: 2,
            ..LrSchedule::default()
        };
        // cycles of length 2, 4, 8: restarts at 0, 2, 6, 14
        for e in [0, 2, 6, 14] {
            assert_eq!(s.rate(e), s.initial);
        }
        assert!(s.rate(5) < s.rate(4));
    }
}

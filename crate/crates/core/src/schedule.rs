//! Linear annealing schedules for the exploration coefficients.

/// Piecewise-linear schedule: interpolates from `start` to `end` over
/// `period` steps, clamped at `end` afterwards. Used both for the anti-ego
/// exploration coefficient lambda and for the baselines' epsilon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    pub period: u64,
}

impl LinearSchedule {
    pub fn new(start: f64, end: f64, period: u64) -> LinearSchedule {
        LinearSchedule { start, end, period }
    }

    pub fn at(&self, step: u64) -> f64 {
        if self.period == 0 {
            return self.end;
        }
        let frac = (step as f64 / self.period as f64).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

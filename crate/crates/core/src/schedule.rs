//! Bang-bang controls described by switching times.

use serde::{Deserialize, Serialize};

use crate::dde::{ControlSource, Side};
use crate::error::{Error, Result};
use crate::model::ControlVec;

/// One bang-bang control: `initial` on `[0, s_1]`, flipping at every
/// switch time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlArcs {
    /// 0 or 1.
    pub initial: u8,
    pub switches: Vec<f64>,
}

impl ControlArcs {
    pub fn new(initial: u8, switches: Vec<f64>) -> Self {
        Self { initial, switches }
    }

    /// 1 on `[0, t]`, 0 after.
    pub fn on_until(t: f64) -> Self {
        Self::new(1, vec![t])
    }

    /// Level at `t >= 0`. At a switch time the side picks the limit; the
    /// level at `t = 0` itself is the right limit.
    pub fn level(&self, t: f64, side: Side) -> f64 {
        let passed = match side {
            Side::Right => self.switches.iter().filter(|&&s| s <= t).count(),
            Side::Left => self.switches.iter().filter(|&&s| s < t).count(),
        };
        let passed = if t <= 0.0 {
            self.switches.iter().filter(|&&s| s <= 0.0).count()
        } else {
            passed
        };
        f64::from(self.initial ^ (passed % 2) as u8)
    }

    /// Measure of `{t in [0, t_f] : u = 1}`.
    pub fn on_time(&self, t_f: f64) -> f64 {
        let mut total = 0.0;
        let mut level = self.initial;
        let mut a = 0.0;
        for &s in self.switches.iter().chain(std::iter::once(&t_f)) {
            let b = s.clamp(0.0, t_f);
            if level == 1 {
                total += b - a;
            }
            level ^= 1;
            a = b;
        }
        total
    }
}

/// Bang-bang description of both controls on `[0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcSchedule {
    pub u1: ControlArcs,
    pub u2: ControlArcs,
    /// Control value for `t < 0`.
    #[serde(default)]
    pub history: ControlVec,
}

impl ArcSchedule {
    pub fn new(u1: ControlArcs, u2: ControlArcs) -> Self {
        Self {
            u1,
            u2,
            history: ControlVec::ZERO,
        }
    }

    /// Both controls at 1 until their single switch.
    pub fn one_switch(t1: f64, t2: f64) -> Self {
        Self::new(ControlArcs::on_until(t1), ControlArcs::on_until(t2))
    }

    pub fn validate(&self, t_f: f64) -> Result<()> {
        for (name, arcs) in [("u1", &self.u1), ("u2", &self.u2)] {
            if arcs.initial > 1 {
                return Err(Error::Domain(format!("{name}: initial level must be 0 or 1")));
            }
            if arcs.switches.iter().any(|s| !s.is_finite() || *s < 0.0 || *s > t_f) {
                return Err(Error::Domain(format!("{name}: switch times must lie in [0, {t_f}]")));
            }
            if arcs.switches.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Domain(format!("{name}: switch times must be strictly increasing")));
            }
        }
        if !self.history.is_admissible() {
            return Err(Error::Domain("control history outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn switch_count(&self) -> usize {
        self.u1.switches.len() + self.u2.switches.len()
    }

    /// Free parameters: `u1` switches followed by `u2` switches.
    pub fn times(&self) -> Vec<f64> {
        self.u1.switches.iter().chain(&self.u2.switches).copied().collect()
    }

    /// Same arc structure with new times in [`times`](Self::times) order.
    pub fn with_times(&self, times: &[f64]) -> Self {
        let k = self.u1.switches.len();
        let mut out = self.clone();
        out.u1.switches = times[..k].to_vec();
        out.u2.switches = times[k..].to_vec();
        out
    }

    /// All switch times merged in increasing order, with the permutation
    /// from merged position to [`times`](Self::times) index.
    pub fn sorted_times(&self) -> (Vec<f64>, Vec<usize>) {
        let t = self.times();
        let mut idx: Vec<usize> = (0..t.len()).collect();
        idx.sort_by(|&a, &b| t[a].total_cmp(&t[b]));
        (idx.iter().map(|&i| t[i]).collect(), idx)
    }

    /// Each time rounded to the nearest multiple of `h`.
    pub fn snapped(&self, h: f64) -> Self {
        let snap = |v: &Vec<f64>| -> Vec<f64> {
            let mut out: Vec<f64> = v.iter().map(|t| (t / h).round() * h).collect();
            out.dedup();
            out
        };
        let mut out = self.clone();
        out.u1.switches = snap(&self.u1.switches);
        out.u2.switches = snap(&self.u2.switches);
        out
    }

    /// `int_0^T (W1 u1 + W2 u2) dt`, exact for bang-bang controls under
    /// either objective kind since `u^2 = u`.
    pub fn control_cost(&self, t_f: f64, w1: f64, w2: f64) -> f64 {
        w1 * self.u1.on_time(t_f) + w2 * self.u2.on_time(t_f)
    }
}

impl ControlSource for ArcSchedule {
    fn eval(&self, t: f64, side: Side) -> ControlVec {
        if t < 0.0 {
            return self.history;
        }
        ControlVec::new(self.u1.level(t, side), self.u2.level(t, side))
    }

    fn breakpoints(&self) -> [Vec<f64>; 2] {
        let mut b1 = self.u1.switches.clone();
        let mut b2 = self.u2.switches.clone();
        // the history-to-schedule jump at t = 0 is a breakpoint too
        if self.history.u1 != self.u1.level(0.0, Side::Right) {
            b1.insert(0, 0.0);
        }
        if self.history.u2 != self.u2.level(0.0, Side::Right) {
            b2.insert(0, 0.0);
        }
        b1.dedup();
        b2.dedup();
        [b1, b2]
    }
}

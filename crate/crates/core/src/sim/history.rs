use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::InitialHistory;

/// State samples spanning at least `[t - h, t]`, backed by the initial history for `t <= 0`.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    phi: InitialHistory,
    h: f64,
    nodes: VecDeque<(f64, DVector<f64>)>,
}

impl HistoryBuffer {
    pub fn new(phi: InitialHistory, h: f64) -> Self {
        HistoryBuffer { phi, h, nodes: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn last(&self) -> Option<&(f64, DVector<f64>)> {
        self.nodes.back()
    }

    /// Time span currently covered by stored nodes.
    pub fn span(&self) -> f64 {
        match (self.nodes.front(), self.nodes.back()) {
            (Some(a), Some(b)) => b.0 - a.0,
            _ => 0.0,
        }
    }

    /// Appends a node; times must increase. Nodes older than needed are dropped.
    pub fn push(&mut self, t: f64, x: DVector<f64>) -> Result<()> {
        if let Some((last, _)) = self.nodes.back() {
            if t <= *last {
                return Err(Error::Model(format!("history times must increase: {t} after {last}")));
            }
        }
        self.nodes.push_back((t, x));
        // Keep one node at or before t - h so the window is always bracketed.
        while self.nodes.len() > 2 && self.nodes[1].0 <= t - self.h {
            self.nodes.pop_front();
        }
        Ok(())
    }

    /// State at `s`, which must not exceed the newest node.
    pub fn at(&self, s: f64) -> Result<DVector<f64>> {
        self.at_with_stage(s, None)
    }

    /// State at `s`; a `stage = (t, x)` beyond the newest node extends the buffer
    /// linearly for lookups that fall inside the current step.
    pub fn at_with_stage(&self, s: f64, stage: Option<(f64, &DVector<f64>)>) -> Result<DVector<f64>> {
        let Some((t_last, x_last)) = self.nodes.back() else {
            return self.phi.at(s);
        };
        if s > *t_last {
            return match stage {
                Some((ts, xs)) if s <= ts + 1e-12 * ts.abs().max(1.0) => {
                    if ts <= *t_last {
                        return Ok(x_last.clone());
                    }
                    let w = ((s - t_last) / (ts - t_last)).min(1.0);
                    Ok(x_last * (1.0 - w) + xs * w)
                }
                _ => Err(Error::Model(format!("delayed time {s} lies beyond the integrated state {t_last}"))),
            };
        }
        let (t_first, x_first) = self.nodes.front().expect("nonempty");
        if s < *t_first {
            if s <= 0.0 {
                if s < -self.h * (1.0 + 1e-12) - 1e-12 {
                    return Err(Error::Model(format!("delayed time {s} precedes the initial history")));
                }
                return self.phi.at(s);
            }
            // Pruned region; cannot happen while tau <= h.
            let _ = x_first;
            return Err(Error::Model(format!("delayed time {s} was discarded from the history")));
        }
        let i = self.nodes.partition_point(|(t, _)| *t < s);
        if i == 0 {
            return Ok(self.nodes[0].1.clone());
        }
        let (t1, x1) = &self.nodes[i];
        let (t0, x0) = &self.nodes[i - 1];
        let w = (s - t0) / (t1 - t0);
        Ok(x0 * (1.0 - w) + x1 * w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn interpolates_between_nodes() {
        let mut b = HistoryBuffer::new(InitialHistory::constant(&[1.0]), 1.0);
        b.push(0.0, v(1.0)).unwrap();
        b.push(0.5, v(2.0)).unwrap();
        assert_eq!(b.at(0.25).unwrap()[0], 1.5);
        assert_eq!(b.at(-0.7).unwrap()[0], 1.0);
        let xs = v(4.0);
        assert_eq!(b.at_with_stage(0.75, Some((1.0, &xs))).unwrap()[0], 3.0);
        assert!(b.at(0.75).is_err());
        assert!(b.at(-1.5).is_err());
    }

    #[test]
    fn keeps_window_of_length_h() {
        let mut b = HistoryBuffer::new(InitialHistory::zero(1), 0.3);
        for k in 0..100 {
            b.push(k as f64 * 0.01, v(k as f64)).unwrap();
        }
        assert!(b.span() >= 0.3);
        assert!(b.len() <= 32);
        assert!((b.at(0.99 - 0.3).unwrap()[0] - 69.0).abs() < 1e-9);
        assert!(b.push(0.5, v(0.0)).is_err());
    }
}

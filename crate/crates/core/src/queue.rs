//! Per-satellite computational backlog with cooperative offloading.
//!
//! Each satellite `i` holds one backlog `q[i][k]` per observed target `k`.
//! A step removes offloaded and locally processed work, clamps at zero, then
//! adds freshly sensed work. Offloaded work lands in the receiver's backlog
//! in the same step.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueueError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("negative or non-finite {what} at {index:?}: {value}")]
    BadValue { what: &'static str, index: (usize, usize, usize), value: f64 },
    #[error("a satellite cannot offload to itself (satellite {0})")]
    SelfOffload(usize),
    #[error("offload amount set without an active link {0} -> {1}")]
    InactiveLink(usize, usize),
}

/// Backlog `q[i][k]` of satellite `i` for target `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueState {
    q: Vec<Vec<f64>>,
}

impl QueueState {
    pub fn empty(satellites: usize, targets: usize) -> Self {
        Self { q: vec![vec![0.0; targets]; satellites] }
    }

    pub fn from_rows(q: Vec<Vec<f64>>) -> Result<Self, QueueError> {
        let width = q.first().map_or(0, Vec::len);
        for (i, row) in q.iter().enumerate() {
            if row.len() != width {
                return Err(QueueError::Shape(format!("row {i} has {} targets, expected {width}", row.len())));
            }
            for (k, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(QueueError::BadValue { what: "backlog", index: (i, k, 0), value: v });
                }
            }
        }
        Ok(Self { q })
    }

    pub fn satellites(&self) -> usize {
        self.q.len()
    }

    pub fn targets(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.q[i][k]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.q
    }

    /// Total backlog of satellite `i` across targets.
    pub fn load(&self, i: usize) -> f64 {
        self.q[i].iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.q.iter().flatten().sum()
    }
}

/// Offload links `a[i][j]` and amounts `y[i][j][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffloadDecision {
    pub link: Vec<Vec<bool>>,
    pub amount: Vec<Vec<Vec<f64>>>,
}

impl OffloadDecision {
    pub fn none(satellites: usize, targets: usize) -> Self {
        Self {
            link: vec![vec![false; satellites]; satellites],
            amount: vec![vec![vec![0.0; targets]; satellites]; satellites],
        }
    }

    pub fn set(&mut self, from: usize, to: usize, target: usize, amount: f64) {
        self.link[from][to] = true;
        self.amount[from][to][target] = amount;
    }

    fn validate(&self, m: usize, kk: usize) -> Result<(), QueueError> {
        if self.link.len() != m || self.amount.len() != m {
            return Err(QueueError::Shape(format!("offload decision is not {m}x{m}")));
        }
        for i in 0..m {
            if self.link[i].len() != m || self.amount[i].len() != m {
                return Err(QueueError::Shape(format!("offload row {i} is not length {m}")));
            }
            if self.link[i][i] {
                return Err(QueueError::SelfOffload(i));
            }
            for j in 0..m {
                if self.amount[i][j].len() != kk {
                    return Err(QueueError::Shape(format!("offload amount ({i},{j}) is not length {kk}")));
                }
                for (k, &y) in self.amount[i][j].iter().enumerate() {
                    if !(y.is_finite() && y >= 0.0) {
                        return Err(QueueError::BadValue { what: "offload amount", index: (i, j, k), value: y });
                    }
                    if y > 0.0 && !self.link[i][j] {
                        return Err(QueueError::InactiveLink(i, j));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Newly sensed work `s[i][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensedLoad {
    pub s: Vec<Vec<f64>>,
}

impl SensedLoad {
    pub fn zeros(satellites: usize, targets: usize) -> Self {
        Self { s: vec![vec![0.0; targets]; satellites] }
    }

    /// `s[i][k] = s0` when target `k` lies within `range` of satellite `i`.
    pub fn from_positions(satellites: &[[f64; 3]], targets: &[[f64; 3]], s0: f64, range: f64) -> Self {
        let s = satellites
            .iter()
            .map(|p| {
                targets
                    .iter()
                    .map(|t| {
                        let d = ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2) + (p[2] - t[2]).powi(2)).sqrt();
                        if d <= range {
                            s0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Self { s }
    }
}

/// Advances every backlog by one step.
///
/// `q'[i][k] = max(q[i][k] − Σⱼ a[i][j] y[i][j][k] − c_local, 0) + s[i][k] + Σⱼ a[j][i] y[j][i][k]`
pub fn update_queue(
    q: &QueueState,
    d: &OffloadDecision,
    s: &SensedLoad,
    c_local: f64,
) -> Result<QueueState, QueueError> {
    let m = q.satellites();
    let kk = q.targets();
    if !(c_local.is_finite() && c_local >= 0.0) {
        return Err(QueueError::BadValue { what: "local capacity", index: (0, 0, 0), value: c_local });
    }
    d.validate(m, kk)?;
    if s.s.len() != m || s.s.iter().any(|r| r.len() != kk) {
        return Err(QueueError::Shape(format!("sensed load is not {m}x{kk}")));
    }
    for (i, row) in s.s.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(QueueError::BadValue { what: "sensed load", index: (i, k, 0), value: v });
            }
        }
    }

    let mut next = vec![vec![0.0; kk]; m];
    for i in 0..m {
        for k in 0..kk {
            let out: f64 = (0..m).filter(|&j| d.link[i][j]).map(|j| d.amount[i][j][k]).sum();
            next[i][k] = (q.q[i][k] - out - c_local).max(0.0) + s.s[i][k];
        }
    }
    for i in 0..m {
        for j in 0..m {
            if d.link[i][j] {
                for k in 0..kk {
                    next[j][k] += d.amount[i][j][k];
                }
            }
        }
    }
    Ok(QueueState { q: next })
}

/// Outage penalty `−λ Σᵢₖ q[i][k]` added to the team reward.
pub fn backlog_penalty(q: &QueueState, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    -lambda * q.total()
}

/// Greedy offloading: each satellite sends half of its per-target excess
/// to the least-loaded eligible teammate. A receiver is eligible when its
/// total load is below `threshold` (or below the sender's load when no
/// threshold is configured).
pub fn greedy_offload(q: &QueueState, threshold: Option<f64>) -> OffloadDecision {
    let m = q.satellites();
    let kk = q.targets();
    let mut d = OffloadDecision::none(m, kk);
    for i in 0..m {
        let own = q.load(i);
        let limit = threshold.unwrap_or(own);
        let best = (0..m).filter(|&j| j != i && q.load(j) < limit).min_by(|&a, &b| q.load(a).total_cmp(&q.load(b)));
        if let Some(j) = best {
            let mut any = false;
            for k in 0..kk {
                let y = 0.5 * (q.q[i][k] - q.q[j][k]).max(0.0);
                if y > 0.0 {
                    d.amount[i][j][k] = y;
                    any = true;
                }
            }
            d.link[i][j] = any;
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(q: f64) -> QueueState {
        QueueState::from_rows(vec![vec![q], vec![0.0]]).unwrap()
    }

    #[test]
    fn partial_offload() {
        let mut d = OffloadDecision::none(2, 1);
        d.set(0, 1, 0, 4.0);
        let s = SensedLoad { s: vec![vec![2.0], vec![0.0]] };
        let n = update_queue(&single(10.0), &d, &s, 0.0).unwrap();
        assert_eq!(n.get(0, 0), 8.0);
        assert_eq!(n.get(1, 0), 4.0);
    }

    #[test]
    fn clamps_at_zero() {
        let mut d = OffloadDecision::none(2, 1);
        d.set(0, 1, 0, 5.0);
        let s = SensedLoad { s: vec![vec![1.0], vec![0.0]] };
        let n = update_queue(&single(3.0), &d, &s, 0.0).unwrap();
        assert_eq!(n.get(0, 0), 1.0);
    }

    #[test]
    fn no_links_no_sensing_is_identity() {
        let q = QueueState::from_rows(vec![vec![1.5, 2.0], vec![0.25, 7.0]]).unwrap();
        let n = update_queue(&q, &OffloadDecision::none(2, 2), &SensedLoad::zeros(2, 2), 0.0).unwrap();
        assert_eq!(n, q);
    }

    #[test]
    fn rejects_malformed_inputs() {
        let q = single(1.0);
        let mut d = OffloadDecision::none(2, 1);
        d.link[0][0] = true;
        assert_eq!(update_queue(&q, &d, &SensedLoad::zeros(2, 1), 0.0), Err(QueueError::SelfOffload(0)));
        let mut d = OffloadDecision::none(2, 1);
        d.amount[0][1][0] = 1.0;
        assert_eq!(update_queue(&q, &d, &SensedLoad::zeros(2, 1), 0.0), Err(QueueError::InactiveLink(0, 1)));
        let s = SensedLoad { s: vec![vec![-1.0], vec![0.0]] };
        assert!(update_queue(&q, &OffloadDecision::none(2, 1), &s, 0.0).is_err());
        assert!(update_queue(&q, &OffloadDecision::none(3, 1), &SensedLoad::zeros(2, 1), 0.0).is_err());
        assert!(QueueState::from_rows(vec![vec![-0.5]]).is_err());
    }

    #[test]
    fn penalty_values() {
        assert_eq!(backlog_penalty(&QueueState::empty(3, 1), 0.01), 0.0);
        let q = QueueState::from_rows(vec![vec![60.0], vec![40.0]]).unwrap();
        assert!((backlog_penalty(&q, 0.01) + 1.0).abs() < 1e-15);
        assert_eq!(backlog_penalty(&q, 0.0), 0.0);
    }

    #[test]
    fn greedy_sends_to_least_loaded() {
        let q = QueueState::from_rows(vec![vec![8.0], vec![2.0], vec![1.0]]).unwrap();
        let d = greedy_offload(&q, None);
        assert!(d.link[0][2]);
        assert_eq!(d.amount[0][2][0], 3.5);
        assert!(!d.link[2].iter().any(|&l| l));
    }

    #[test]
    fn sensing_range_gate() {
        let s = SensedLoad::from_positions(&[[0.0; 3], [200.0, 0.0, 0.0]], &[[50.0, 0.0, 0.0]], 1.0, 100.0);
        assert_eq!(s.s, vec![vec![1.0], vec![0.0]]);
    }

    fn queue_strategy() -> impl Strategy<Value = (QueueState, SensedLoad)> {
        (1usize..5, 1usize..3).prop_flat_map(|(m, kk)| {
            (
                proptest::collection::vec(proptest::collection::vec(0.0f64..20.0, kk), m),
                proptest::collection::vec(proptest::collection::vec(0.0f64..3.0, kk), m),
            )
                .prop_map(|(q, s)| (QueueState::from_rows(q).unwrap(), SensedLoad { s }))
        })
    }

    proptest! {
        #[test]
        fn backlogs_stay_non_negative((q, s) in queue_strategy(), c in 0.0f64..3.0) {
            let d = greedy_offload(&q, None);
            let n = update_queue(&q, &d, &s, c).unwrap();
            prop_assert!(n.rows().iter().flatten().all(|v| *v >= 0.0 && v.is_finite()));
        }

        #[test]
        fn conserves_work_without_clamping((q, s) in queue_strategy()) {
            let d = greedy_offload(&q, None);
            let n = update_queue(&q, &d, &s, 0.0).unwrap();
            let sensed: f64 = s.s.iter().flatten().sum();
            prop_assert!((n.total() - (q.total() + sensed)).abs() < 1e-9);
        }

        #[test]
        fn monotone_in_sensing((q, s) in queue_strategy(), bump in 0.0f64..5.0, c in 0.0f64..2.0) {
            let d = greedy_offload(&q, None);
            let base = update_queue(&q, &d, &s, c).unwrap();
            let mut more = s.clone();
            more.s[0][0] += bump;
            let bumped = update_queue(&q, &d, &more, c).unwrap();
            for (a, b) in base.rows().iter().flatten().zip(bumped.rows().iter().flatten()) {
                prop_assert!(b >= a);
            }
        }
    }
}

//! Processor-sharing server and an independent reference integrator.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Tag {
    finish: f64,
    task: u64,
}

impl Eq for Tag {}

impl Ord for Tag {
    fn cmp(&self, other: &Self) -> Ordering {
        self.finish
            .total_cmp(&other.finish)
            .then(self.task.cmp(&other.task))
    }
}

impl PartialOrd for Tag {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Egalitarian processor sharing via virtual time.
///
/// Virtual time advances at `mu / k` while `k` tasks are in service, which
/// is the rate at which each of them receives work. A task admitted at
/// virtual time `v` with work `w` finishes when virtual time reaches
/// `v + w`, so the next departure is always the smallest finish tag.
#[derive(Clone, Debug)]
pub struct PsQueue {
    mu: f64,
    virtual_time: f64,
    last: f64,
    tags: BinaryHeap<Reverse<Tag>>,
    /// Bumped on every state change; departure events carry the version they
    /// were scheduled under and are dropped if it no longer matches.
    pub version: u64,
    admitted: f64,
    served: f64,
}

impl PsQueue {
    pub fn new(mu: f64) -> Self {
        Self {
            mu,
            virtual_time: 0.0,
            last: 0.0,
            tags: BinaryHeap::new(),
            version: 0,
            admitted: 0.0,
            served: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    fn advance(&mut self, now: f64) {
        let k = self.tags.len();
        if k > 0 && now > self.last {
            let dv = (now - self.last) * self.mu / k as f64;
            self.virtual_time += dv;
            self.served += dv * k as f64;
        }
        self.last = now.max(self.last);
    }

    pub fn arrive(&mut self, now: f64, task: u64, work: f64) {
        self.advance(now);
        self.admitted += work;
        self.tags.push(Reverse(Tag {
            finish: self.virtual_time + work,
            task,
        }));
        self.version += 1;
    }

    /// Changes capacity from `now` on.
    pub fn set_mu(&mut self, now: f64, mu: f64) {
        self.advance(now);
        self.mu = mu;
        self.version += 1;
    }

    /// Time and task of the next departure if nothing else changes.
    pub fn next_departure(&self) -> Option<(f64, u64)> {
        let Reverse(t) = self.tags.peek()?;
        let k = self.tags.len() as f64;
        let dt = ((t.finish - self.virtual_time) * k / self.mu).max(0.0);
        Some((self.last + dt, t.task))
    }

    /// Removes the task with the smallest finish tag at time `now`.
    pub fn depart(&mut self, now: f64) -> u64 {
        self.advance(now);
        let Reverse(t) = self.tags.pop().expect("departure from empty queue");
        // absorb rounding so the departing task's residual counts as served
        self.served += (t.finish - self.virtual_time).max(0.0);
        self.virtual_time = self.virtual_time.max(t.finish);
        self.version += 1;
        t.task
    }

    /// Work admitted so far.
    pub fn admitted_work(&self) -> f64 {
        self.admitted
    }

    /// Work served up to the last state change.
    pub fn served_work(&self) -> f64 {
        self.served
    }

    /// Work still owed to tasks in service, as of the last state change.
    pub fn remaining_work(&self) -> f64 {
        self.tags
            .iter()
            .map(|Reverse(t)| (t.finish - self.virtual_time).max(0.0))
            .sum()
    }
}

/// Departure time of every task in an isolated processor-sharing queue,
/// replayed through [`PsQueue`]. `trace` is `(arrival time, work)` in
/// arrival order.
pub fn ps_departures(trace: &[(f64, f64)], mu: f64) -> Vec<f64> {
    let mut q = PsQueue::new(mu);
    let mut out = vec![f64::NAN; trace.len()];
    let mut next = 0;
    loop {
        let dep = q.next_departure();
        let arr = trace.get(next).map(|a| a.0);
        match (arr, dep) {
            (Some(a), Some((d, _))) if a <= d => {
                q.arrive(a, next as u64, trace[next].1);
                next += 1;
            }
            (Some(a), None) => {
                q.arrive(a, next as u64, trace[next].1);
                next += 1;
            }
            (_, Some((d, _))) => {
                let task = q.depart(d);
                out[task as usize] = d;
            }
            (None, None) => break,
        }
    }
    out
}

/// Departure times and mean sojourn from a direct remaining-work
/// integration: between events every active task loses `mu / k` work per
/// second.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub departures: Vec<f64>,
    pub mean_sojourn: f64,
}

pub fn queue_oracle(trace: &[(f64, f64)], mu: f64) -> OracleResult {
    let mut active: Vec<(usize, f64)> = Vec::new();
    let mut departures = vec![f64::NAN; trace.len()];
    let mut now = 0.0f64;
    let mut next = 0;
    while next < trace.len() || !active.is_empty() {
        let k = active.len() as f64;
        let to_finish = if active.is_empty() {
            f64::INFINITY
        } else {
            active.iter().map(|a| a.1).fold(f64::INFINITY, f64::min) * k / mu
        };
        let to_arrival = trace.get(next).map_or(f64::INFINITY, |a| a.0 - now);
        let dt = to_finish.min(to_arrival).max(0.0);
        if k > 0.0 {
            for a in &mut active {
                a.1 -= dt * mu / k;
            }
        }
        now += dt;
        if to_arrival <= to_finish {
            active.push((next, trace[next].1));
            now = trace[next].0;
            next += 1;
        } else {
            // every task within rounding of zero leaves together
            let min = active.iter().map(|a| a.1).fold(f64::INFINITY, f64::min);
            let tol = 1e-12 * (1.0 + now);
            active.retain(|&(id, rem)| {
                if rem <= min + tol {
                    departures[id] = now;
                    false
                } else {
                    true
                }
            });
        }
    }
    let mean_sojourn = if trace.is_empty() {
        0.0
    } else {
        departures
            .iter()
            .zip(trace)
            .map(|(d, a)| d - a.0)
            .sum::<f64>()
            / trace.len() as f64
    };
    OracleResult {
        departures,
        mean_sojourn,
    }
}

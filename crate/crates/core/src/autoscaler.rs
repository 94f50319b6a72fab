//! Horizontal autoscaler control law and a deterministic simulator of it
//! against offered-load traces.
//!
//! Utilization is modeled, not measured: `offered_rps / (ready * capacity)`.
//! New replicas count toward capacity only after a readiness delay, and
//! scale-downs follow the highest recommendation seen within the
//! stabilization window.

use std::collections::VecDeque;
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Utilization values above this are reported as this.
pub const UTILIZATION_REPORT_CAP: f64 = 1.5;

// absorbs float noise such as 2.4 / 0.6 = 4.000000000000001 or
// 0.66 / 0.6 = 1.1000000000000001 at the band edge
const EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HpaConfig {
    pub min_replicas: u32,
    pub max_replicas: u32,
    pub target_utilization: f64,
    pub sync_period_s: f64,
    pub tolerance: f64,
    pub scale_down_stabilization_s: f64,
}

impl Default for HpaConfig {
    fn default() -> Self {
        Self {
            min_replicas: 2,
            max_replicas: 10,
            target_utilization: 0.60,
            sync_period_s: 15.0,
            tolerance: 0.10,
            scale_down_stabilization_s: 300.0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HpaError {
    #[error("invalid autoscaler config: {0}")]
    Config(String),
    #[error("invalid load trace: {0}")]
    Trace(String),
}

impl HpaConfig {
    pub fn validate(&self) -> Result<(), HpaError> {
        let fail = |m: &str| Err(HpaError::Config(m.to_string()));
        if self.min_replicas == 0 {
            return fail("min_replicas must be at least 1");
        }
        if self.min_replicas > self.max_replicas {
            return fail("min_replicas must not exceed max_replicas");
        }
        if !(self.target_utilization > 0.0 && self.target_utilization <= 1.0) {
            return fail("target_utilization must be in (0, 1]");
        }
        if !(self.sync_period_s > 0.0 && self.sync_period_s.is_finite()) {
            return fail("sync_period_s must be positive");
        }
        if !(self.tolerance >= 0.0 && self.tolerance < 1.0) {
            return fail("tolerance must be in [0, 1)");
        }
        if !(self.scale_down_stabilization_s >= 0.0 && self.scale_down_stabilization_s.is_finite()) {
            return fail("scale_down_stabilization_s must be nonnegative");
        }
        Ok(())
    }

    fn clamp(&self, replicas: u32) -> u32 {
        replicas.clamp(self.min_replicas, self.max_replicas)
    }
}

/// The control law: hold inside the tolerance band, otherwise scale
/// proportionally to `observed / target` and clamp to the replica bounds.
pub fn desired_replicas(current: u32, observed_util: f64, cfg: &HpaConfig) -> u32 {
    let ratio = observed_util / cfg.target_utilization;
    if (ratio - 1.0).abs() <= cfg.tolerance + EPSILON {
        return current;
    }
    let raw = (current as f64 * ratio - EPSILON).ceil().max(0.0);
    let raw = if raw >= u32::MAX as f64 { u32::MAX } else { raw as u32 };
    cfg.clamp(raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaPoolModel {
    pub current_replicas: u32,
    pub per_replica_capacity_rps: f64,
    pub readiness_delay_s: f64,
}

impl ReplicaPoolModel {
    pub fn new(current_replicas: u32, per_replica_capacity_rps: f64) -> Self {
        Self {
            current_replicas,
            per_replica_capacity_rps,
            readiness_delay_s: 10.0,
        }
    }

    pub fn utilization(&self, replicas: u32, offered_rps: f64) -> f64 {
        offered_rps / (replicas as f64 * self.per_replica_capacity_rps)
    }
}

/// Step function of offered load: each point holds until the next.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadTrace {
    points: Vec<(f64, f64)>,
}

impl LoadTrace {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, HpaError> {
        if points.is_empty() {
            return Err(HpaError::Trace("trace is empty".into()));
        }
        for (i, &(t, r)) in points.iter().enumerate() {
            if !t.is_finite() || !r.is_finite() || r < 0.0 {
                return Err(HpaError::Trace(format!("point {i}: bad values ({t}, {r})")));
            }
            if i > 0 && t <= points[i - 1].0 {
                return Err(HpaError::Trace(format!("point {i}: times must strictly increase")));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn start(&self) -> f64 {
        self.points[0].0
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }

    /// Rate in effect at `t`; zero before the first point.
    pub fn rate_at(&self, t: f64) -> f64 {
        let idx = self.points.partition_point(|&(pt, _)| pt <= t);
        if idx == 0 {
            0.0
        } else {
            self.points[idx - 1].1
        }
    }

    /// Reads a `time_s,offered_rps` CSV with a header row.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, Box<dyn std::error::Error>> {
        #[derive(Deserialize)]
        struct Row {
            time_s: f64,
            offered_rps: f64,
        }
        let mut reader = csv::Reader::from_path(path)?;
        let points = reader
            .deserialize::<Row>()
            .map(|r| r.map(|r| (r.time_s, r.offered_rps)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(points)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Hold,
    ScaleUp,
    ScaleDown,
    /// A lower recommendation that the stabilization window overrode.
    ScaleDownDeferred,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Hold => "hold",
            Decision::ScaleUp => "scale_up",
            Decision::ScaleDown => "scale_down",
            Decision::ScaleDownDeferred => "scale_down_deferred",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Decision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hold" => Ok(Decision::Hold),
            "scale_up" => Ok(Decision::ScaleUp),
            "scale_down" => Ok(Decision::ScaleDown),
            "scale_down_deferred" => Ok(Decision::ScaleDownDeferred),
            other => Err(format!("unknown decision `{other}`")),
        }
    }
}

/// One controller sync. `replicas` and `utilization` are as observed,
/// before the decision takes effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub time_s: f64,
    pub offered_rps: f64,
    pub replicas: u32,
    pub utilization: f64,
    pub decision: Decision,
}

pub const TIMELINE_HEADER: &str = "time_s,offered_rps,replicas,utilization,decision";

/// Runs the controller every `sync_period_s` from the first trace point
/// through the last one.
pub fn simulate(
    trace: &LoadTrace,
    pool: &ReplicaPoolModel,
    cfg: &HpaConfig,
) -> Result<Vec<TimelineRow>, HpaError> {
    cfg.validate()?;
    if !(pool.per_replica_capacity_rps > 0.0) || !(pool.readiness_delay_s >= 0.0) {
        return Err(HpaError::Config("pool capacity must be positive".into()));
    }
    let mut ready = cfg.clamp(pool.current_replicas);
    // ready-at times of replicas that are starting up
    let mut starting: Vec<f64> = Vec::new();
    let mut history: VecDeque<(f64, u32)> = VecDeque::new();
    let mut timeline = Vec::new();

    for tick in 0u64.. {
        let now = trace.start() + tick as f64 * cfg.sync_period_s;
        if now > trace.end() {
            break;
        }
        let before = starting.len();
        starting.retain(|&at| at > now);
        ready += (before - starting.len()) as u32;

        let observed = ready;
        let offered = trace.rate_at(now);
        let util = pool.utilization(ready, offered);
        let recommendation = desired_replicas(ready, util, cfg);

        history.push_back((now, recommendation));
        while history
            .front()
            .is_some_and(|&(t, _)| t < now - cfg.scale_down_stabilization_s)
        {
            history.pop_front();
        }

        let scheduled = ready + starting.len() as u32;
        let decision = if recommendation > scheduled {
            let add = recommendation - scheduled;
            starting.extend(std::iter::repeat_n(now + pool.readiness_delay_s, add as usize));
            Decision::ScaleUp
        } else {
            let stabilized = history.iter().map(|&(_, r)| r).max().unwrap_or(recommendation);
            if stabilized < scheduled {
                let mut remove = scheduled - stabilized;
                // cancel replicas still starting before removing ready ones
                while remove > 0 && starting.pop().is_some() {
                    remove -= 1;
                }
                ready -= remove;
                Decision::ScaleDown
            } else if recommendation < scheduled {
                Decision::ScaleDownDeferred
            } else {
                Decision::Hold
            }
        };

        timeline.push(TimelineRow {
            time_s: now,
            offered_rps: offered,
            replicas: observed,
            utilization: util.min(UTILIZATION_REPORT_CAP),
            decision,
        });
    }
    Ok(timeline)
}

pub fn write_timeline<W: io::Write>(rows: &[TimelineRow], out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    if rows.is_empty() {
        writer.write_record(TIMELINE_HEADER.split(','))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_timeline<R: io::Read>(input: R) -> csv::Result<Vec<TimelineRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

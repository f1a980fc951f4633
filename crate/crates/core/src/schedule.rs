//! Capture-schedule analysis.
//!
//! A story posted at `p` is visible during the half-open window
//! `[p, p + lifetime)`. A session at time `t` observes it iff `t` falls in that
//! window. With sessions every `interval` seconds, coverage statistics are
//! periodic in the posting time, so one interval's worth of offsets (at 1 s
//! resolution) describes every posting time away from the plan's ends.

use serde::Serialize;
use thiserror::Error;

/// Upper bound on the number of sessions a plan may expand to.
pub const MAX_PLAN_SESSIONS: i64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("interval must be positive and no longer than the horizon (interval {interval_s}s, horizon {horizon_s}s)")]
    InvalidInterval { interval_s: i64, horizon_s: i64 },
    #[error("lifetime must be positive, got {0}s")]
    InvalidLifetime(i64),
    #[error("coverage analysis needs at least two sessions, plan has {0}")]
    PlanTooShort(usize),
    #[error("plan would contain {0} sessions (limit {MAX_PLAN_SESSIONS})")]
    PlanTooLarge(i64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SchedulePlan {
    pub anchor: i64,
    pub interval_s: i64,
    pub horizon_s: i64,
    pub sessions: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub interval_s: i64,
    pub lifetime_s: i64,
    pub min_observations: u64,
    pub max_observations: u64,
    /// lifetime − interval; negative when stories can fall between sessions.
    pub margin_s: i64,
    /// Every posting time is still observed if any one session is missed.
    pub single_miss_safe: bool,
    pub expected_observations: f64,
    pub semantics: &'static str,
}

const SEMANTICS: &str = "live window [posted, posted + lifetime) is half-open; \
statistics cover steady-state posting times at 1 s resolution, away from the first and last session";

/// Sessions at `anchor + k * interval_s` for every k with `k * interval_s <= horizon_s`.
pub fn plan_sessions(anchor: i64, interval_s: i64, horizon_s: i64) -> Result<SchedulePlan, ScheduleError> {
    if interval_s <= 0 || horizon_s < interval_s {
        return Err(ScheduleError::InvalidInterval {
            interval_s,
            horizon_s,
        });
    }
    let count = horizon_s / interval_s + 1;
    if count > MAX_PLAN_SESSIONS {
        return Err(ScheduleError::PlanTooLarge(count));
    }
    let sessions = (0..count)
        .map(|k| anchor.saturating_add(k * interval_s))
        .collect();
    Ok(SchedulePlan {
        anchor,
        interval_s,
        horizon_s,
        sessions,
    })
}

/// Session times that fall inside `[posting_time, posting_time + lifetime_s)`.
pub fn observing_sessions(posting_time: i64, lifetime_s: i64, plan: &SchedulePlan) -> Vec<i64> {
    if lifetime_s <= 0 {
        return Vec::new();
    }
    let end = posting_time.saturating_add(lifetime_s);
    let lo = plan.sessions.partition_point(|&t| t < posting_time);
    let hi = plan.sessions.partition_point(|&t| t < end);
    plan.sessions[lo..hi.max(lo)].to_vec()
}

/// Observations of a story whose next session is `offset` seconds after it
/// was posted, with sessions continuing indefinitely.
fn steady_state_count(offset: i64, interval_s: i64, lifetime_s: i64) -> u64 {
    if offset >= lifetime_s {
        0
    } else {
        ((lifetime_s - offset + interval_s - 1) / interval_s) as u64
    }
}

pub fn coverage_report(plan: &SchedulePlan, lifetime_s: i64) -> Result<CoverageReport, ScheduleError> {
    if plan.sessions.len() < 2 {
        return Err(ScheduleError::PlanTooShort(plan.sessions.len()));
    }
    if lifetime_s <= 0 {
        return Err(ScheduleError::InvalidLifetime(lifetime_s));
    }
    let interval = plan.interval_s;
    // the count is non-increasing in the offset to the next session, which
    // ranges over 0..interval
    let max_observations = steady_state_count(0, interval, lifetime_s);
    let min_observations = steady_state_count(interval - 1, interval, lifetime_s);
    Ok(CoverageReport {
        interval_s: interval,
        lifetime_s,
        min_observations,
        max_observations,
        margin_s: lifetime_s - interval,
        single_miss_safe: min_observations >= 2,
        expected_observations: expected_observations(plan, lifetime_s),
        semantics: SEMANTICS,
    })
}

/// Mean number of sessions observing a story posted at a uniformly random time.
pub fn expected_observations(plan: &SchedulePlan, lifetime_s: i64) -> f64 {
    lifetime_s as f64 / plan.interval_s as f64
}

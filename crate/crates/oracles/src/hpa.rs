/// Autoscaler parameters with rational target and tolerance.
#[derive(Debug, Clone, Copy)]
pub struct HpaParams {
    pub min: u32,
    pub max: u32,
    /// target utilization = target.0 / target.1
    pub target: (u64, u64),
    /// tolerance = tolerance.0 / tolerance.1
    pub tolerance: (u64, u64),
    pub sync: u64,
    pub readiness_delay: u64,
    pub stabilization: u64,
    pub capacity: u64,
    pub initial: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Hold,
    Up,
    Down,
    Deferred,
}

/// Steps second by second through an integer step trace, syncing every
/// `sync` seconds from the first point through the last.
/// Returns `(time, observed_ready_replicas, step)` per sync.
pub fn hpa_oracle(points: &[(u64, u64)], p: &HpaParams) -> Vec<(u64, u32, Step)> {
    let clamp = |r: u64| r.clamp(p.min as u64, p.max as u64) as u32;
    let start = points[0].0;
    let end = points[points.len() - 1].0;
    let mut ready = clamp(p.initial as u64);
    let mut starting: Vec<u64> = Vec::new();
    let mut recs: Vec<(u64, u32)> = Vec::new();
    let mut rows = Vec::new();
    for t in start..=end {
        if (t - start) % p.sync != 0 {
            continue;
        }
        let came_up = starting.iter().filter(|&&at| at <= t).count() as u32;
        starting.retain(|&at| at > t);
        ready += came_up;

        let rate = points.iter().rev().find(|&&(pt, _)| pt <= t).unwrap().1;
        // util / target = (rate * target.1) / (ready * capacity * target.0)
        let num = rate * p.target.1;
        let den = ready as u64 * p.capacity * p.target.0;
        let rec = if num.abs_diff(den) * p.tolerance.1 <= p.tolerance.0 * den {
            ready
        } else {
            clamp((ready as u64 * num).div_ceil(den))
        };
        recs.push((t, rec));
        recs.retain(|&(rt, _)| rt + p.stabilization >= t);

        let scheduled = ready + starting.len() as u32;
        let step = if rec > scheduled {
            for _ in 0..(rec - scheduled) {
                starting.push(t + p.readiness_delay);
            }
            Step::Up
        } else {
            let hold_at = recs.iter().map(|&(_, r)| r).max().unwrap();
            if hold_at < scheduled {
                let mut remove = scheduled - hold_at;
                starting.sort_unstable();
                while remove > 0 && !starting.is_empty() {
                    starting.pop();
                    remove -= 1;
                }
                rows.push((t, ready, Step::Down));
                ready -= remove;
                continue;
            } else if rec < scheduled {
                Step::Deferred
            } else {
                Step::Hold
            }
        };
        rows.push((t, ready, step));
    }
    rows
}

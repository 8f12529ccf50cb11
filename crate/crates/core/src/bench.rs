//! Response-time scaling experiment.
//!
//! Learners are added one group per phase. In every phase each active
//! learner sends `commands_per_learner` dial changes on a shared tick, and
//! every relay a learner receives becomes one latency sample (send instant
//! to receive instant, both on this process's monotonic clock).
//!
//! Reference values reported for an embedded hardware broker of the
//! 2000s, for orientation only and never asserted:
//!
//! | Active groups | Mean response time |
//! |---|---|
//! | 1 | 130 ms |
//! | 2 | 141 ms |
//! | 3 | 147 ms |
//! | 4 | 152 to 155 ms |
//!
//! Loopback runs land orders of magnitude lower. What carries over is the
//! shape: means stay finite and do not fall as groups are added.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use thiserror::Error;
use tokio::task::JoinSet;
use tokio::time::Instant;

use crate::client::{ClientError, ClientEvent, ConnectOptions, Session};
use crate::instrument::DialPosition;
use crate::protocol::{ControlParameter, GroupId, UserId};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub broker_host: String,
    pub broker_port: u16,
    pub total_learners: usize,
    pub group_size: usize,
    /// Fold the remainder into the last group instead of adding a short one.
    pub oversize_last_group: bool,
    pub commands_per_learner: usize,
    pub pace: Duration,
    pub phase_timeout: Duration,
    /// Also count each sender's own echo in the statistics.
    pub include_echo: bool,
    pub first_user_id: UserId,
    pub first_group_id: GroupId,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            broker_host: "127.0.0.1".into(),
            broker_port: crate::broker::DEFAULT_TCP_PORT,
            total_learners: 40,
            group_size: 3,
            oversize_last_group: true,
            commands_per_learner: 20,
            pace: Duration::from_millis(100),
            phase_timeout: Duration::from_secs(30),
            include_echo: false,
            first_user_id: 1000,
            first_group_id: 1,
            seed: 7,
        }
    }
}

impl ExperimentConfig {
    /// Member count of each group, in the order groups are added.
    pub fn group_sizes(&self) -> Vec<usize> {
        let size = self.group_size.max(1);
        let full = self.total_learners / size;
        let rest = self.total_learners % size;
        let mut sizes = vec![size; full];
        match (rest, sizes.last_mut()) {
            (0, _) => {}
            (r, Some(last)) if self.oversize_last_group => *last += r,
            (r, _) => sizes.push(r),
        }
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySample {
    pub phase: usize,
    pub group: GroupId,
    pub sender: UserId,
    pub receiver: UserId,
    pub echo: bool,
    pub response_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub count: usize,
}

/// Mean, median and nearest-rank 95th percentile. `None` when empty.
pub fn summarize(samples: &[f64]) -> Option<Summary> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Some(Summary {
        mean,
        median,
        p95: v[rank - 1],
        count: n,
    })
}

/// One CSV row. `group = None` aggregates every active group of the phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStats {
    pub phase: usize,
    pub n_learners: usize,
    pub group: Option<GroupId>,
    pub summary: Option<Summary>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub samples: Vec<LatencySample>,
    pub stats: Vec<GroupStats>,
    pub sent: usize,
    pub expected_deliveries: usize,
    pub received_deliveries: usize,
    pub phase_durations: Vec<Duration>,
}

impl ExperimentReport {
    pub fn loss(&self) -> usize {
        self.expected_deliveries - self.received_deliveries
    }

    pub fn echo_samples(&self) -> usize {
        self.samples.iter().filter(|s| s.echo).count()
    }

    pub fn peer_samples(&self) -> usize {
        self.samples.len() - self.echo_samples()
    }

    /// Aggregate mean per phase, in phase order.
    pub fn phase_means(&self) -> Vec<Option<f64>> {
        self.stats
            .iter()
            .filter(|s| s.group.is_none())
            .map(|s| s.summary.map(|x| x.mean))
            .collect()
    }

    /// Rank correlation of phase index against aggregate mean.
    pub fn trend(&self) -> Option<f64> {
        let means: Option<Vec<f64>> = self.phase_means().into_iter().collect();
        let means = means?;
        let idx: Vec<f64> = (1..=means.len()).map(|k| k as f64).collect();
        spearman(&idx, &means)
    }

    pub fn csv(&self) -> String {
        stats_csv(&self.stats)
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("PHASE_TIMEOUT: phase {phase} still missing {missing} deliveries after {timeout:?}")]
    PhaseTimeout {
        phase: usize,
        missing: usize,
        timeout: Duration,
    },
    #[error("learner {user}: {source}")]
    Client {
        user: UserId,
        #[source]
        source: ClientError,
    },
    #[error("writing results: {0}")]
    Io(#[from] io::Error),
}

/// Statistics for every (phase, group) pair plus one aggregate row per
/// phase. Groups not yet active get a row with no summary.
pub fn build_stats(
    samples: &[LatencySample],
    group_sizes: &[(GroupId, usize)],
    include_echo: bool,
) -> Vec<GroupStats> {
    let mut out = Vec::new();
    for phase in 1..=group_sizes.len() {
        let n_learners = group_sizes[..phase].iter().map(|g| g.1).sum();
        let in_phase: Vec<&LatencySample> = samples
            .iter()
            .filter(|s| s.phase == phase && (include_echo || !s.echo))
            .collect();
        for &(gid, _) in group_sizes {
            let v: Vec<f64> = in_phase
                .iter()
                .filter(|s| s.group == gid)
                .map(|s| s.response_ms)
                .collect();
            out.push(GroupStats {
                phase,
                n_learners,
                group: Some(gid),
                summary: summarize(&v),
            });
        }
        let all: Vec<f64> = in_phase.iter().map(|s| s.response_ms).collect();
        out.push(GroupStats {
            phase,
            n_learners,
            group: None,
            summary: summarize(&all),
        });
    }
    out
}

pub const CSV_HEADER: &str = "phase,n_learners,group,mean_ms,median_ms,p95_ms,samples";

pub fn stats_csv(stats: &[GroupStats]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in stats {
        let group = s.group.map_or("all".to_string(), |g| g.to_string());
        match s.summary {
            Some(x) => writeln!(
                out,
                "{},{},{},{:.3},{:.3},{:.3},{}",
                s.phase, s.n_learners, group, x.mean, x.median, x.p95, x.count
            ),
            None => writeln!(out, "{},{},{},,,,0", s.phase, s.n_learners, group),
        }
        .expect("write to string");
    }
    out
}

pub fn export_csv(stats: &[GroupStats], path: impl AsRef<std::path::Path>) -> io::Result<()> {
    std::fs::write(path, stats_csv(stats))
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with tied values sharing their average rank.
/// `None` when either series is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

struct Learner {
    session: Session,
    group: GroupId,
}

struct PhaseResult {
    learner: Learner,
    samples: Vec<LatencySample>,
    received: usize,
}

type SendLog = std::sync::Arc<std::sync::Mutex<HashMap<(UserId, usize), Instant>>>;

/// Drive one learner through one phase: send on every tick, record every
/// relayed control, stop once all expected deliveries are in.
async fn run_phase_learner(
    mut learner: Learner,
    phase: usize,
    start: Instant,
    cfg: ExperimentConfig,
    expected: usize,
    sends: SendLog,
    seed: u64,
) -> Result<PhaseResult, (Learner, usize, ClientError)> {
    let me = learner.session.user_id();
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut sent = 0;
    let mut per_origin: HashMap<UserId, usize> = HashMap::new();
    let mut samples = Vec::with_capacity(expected);
    let mut received = 0;
    let deadline = start + cfg.pace * cfg.commands_per_learner as u32 + cfg.phase_timeout;
    while received < expected || sent < cfg.commands_per_learner {
        let next_tick = start + cfg.pace * sent as u32;
        let sending = sent < cfg.commands_per_learner;
        tokio::select! {
            biased;
            _ = tokio::time::sleep_until(next_tick), if sending => {
                let ordinal = rng.random_range(0..DialPosition::COUNT);
                sends.lock().unwrap().insert((me, sent), Instant::now());
                if let Err(e) = learner.session.send_control(ControlParameter::set_dial(ordinal)).await {
                    return Err((learner, received, e));
                }
                sent += 1;
            }
            ev = learner.session.next_event() => match ev {
                Some(ClientEvent::StateChanged { origin, received_at, .. }) => {
                    let index = per_origin.entry(origin).or_default();
                    let sent_at = sends.lock().unwrap().get(&(origin, *index)).copied();
                    *index += 1;
                    received += 1;
                    if let Some(sent_at) = sent_at {
                        samples.push(LatencySample {
                            phase,
                            group: learner.group,
                            sender: origin,
                            receiver: me,
                            echo: origin == me,
                            response_ms: received_at.saturating_duration_since(sent_at).as_secs_f64() * 1e3,
                        });
                    }
                }
                Some(ClientEvent::ConnectionLost) | None => {
                    return Err((learner, received, ClientError::NotConnected));
                }
                Some(_) => {}
            },
            _ = tokio::time::sleep_until(deadline) => break,
        }
    }
    Ok(PhaseResult {
        learner,
        samples,
        received,
    })
}

/// Run the whole experiment against a reachable broker.
pub async fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, BenchError> {
    let sizes = cfg.group_sizes();
    let groups: Vec<(GroupId, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| (cfg.first_group_id + i as GroupId, n))
        .collect();
    let mut learners: Vec<Learner> = Vec::new();
    let mut samples = Vec::new();
    let mut next_user = cfg.first_user_id;
    let (mut sent, mut expected_total, mut received_total) = (0, 0, 0);
    let mut phase_durations = Vec::new();

    for (phase_idx, &(gid, n)) in groups.iter().enumerate() {
        let phase = phase_idx + 1;
        for _ in 0..n {
            let opts =
                ConnectOptions::new(cfg.broker_host.clone(), cfg.broker_port, next_user, gid)
                    .name(format!("bench-{next_user}"));
            let mut session =
                Session::connect(opts)
                    .await
                    .map_err(|source| BenchError::Client {
                        user: next_user,
                        source,
                    })?;
            next_user += 1;
            // roster noise from this join would otherwise land in the phase
            session.poll_events();
            learners.push(Learner {
                session,
                group: gid,
            });
        }
        // let roster updates for the new members settle everywhere
        tokio::time::sleep(Duration::from_millis(50)).await;
        for l in &mut learners {
            l.session.poll_events();
        }

        let size_of: HashMap<GroupId, usize> = groups[..phase].iter().copied().collect();
        let sends: SendLog = Default::default();
        let start = Instant::now() + Duration::from_millis(20);
        let phase_started = Instant::now();
        let mut tasks = JoinSet::new();
        for (i, l) in learners.drain(..).enumerate() {
            let expected = size_of[&l.group] * cfg.commands_per_learner;
            expected_total += expected;
            sent += cfg.commands_per_learner;
            let seed = cfg.seed ^ ((phase as u64) << 32) ^ i as u64;
            tasks.spawn(run_phase_learner(
                l,
                phase,
                start,
                cfg.clone(),
                expected,
                sends.clone(),
                seed,
            ));
        }
        let mut failure = None;
        let mut phase_missing = 0;
        while let Some(joined) = tasks.join_next().await {
            match joined.expect("learner task panicked") {
                Ok(r) => {
                    received_total += r.received;
                    let expected = size_of[&r.learner.group] * cfg.commands_per_learner;
                    phase_missing += expected - r.received;
                    samples.extend(r.samples);
                    learners.push(r.learner);
                }
                Err((l, received, source)) => {
                    received_total += received;
                    failure.get_or_insert(BenchError::Client {
                        user: l.session.user_id(),
                        source,
                    });
                    learners.push(l);
                }
            }
        }
        phase_durations.push(phase_started.elapsed());
        if let Some(e) = failure {
            return Err(e);
        }
        if phase_missing > 0 {
            return Err(BenchError::PhaseTimeout {
                phase,
                missing: phase_missing,
                timeout: cfg.phase_timeout,
            });
        }
        learners.sort_by_key(|l| l.session.user_id());
        tracing::info!(phase, learners = learners.len(), "phase complete");
    }
    for l in &mut learners {
        let _ = l.session.leave().await;
    }
    let stats = build_stats(&samples, &groups, cfg.include_echo);
    Ok(ExperimentReport {
        config: cfg.clone(),
        samples,
        stats,
        sent,
        expected_deliveries: expected_total,
        received_deliveries: received_total,
        phase_durations,
    })
}

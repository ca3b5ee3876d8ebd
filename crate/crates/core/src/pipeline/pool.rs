//! Supervised worker pool.
//!
//! Workers are threads that pull [`TaskEnvelope`]s from a shared channel and
//! send results back to the supervisor. A worker that fails a task (error or
//! panic) reports the failure and exits; the supervisor starts a fresh worker
//! in its place and requeues the task if the failure is transient and
//! retries remain. Results are stored by task id, so the outcome does not
//! depend on which worker ran what, or when.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, Sender};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::audit::AuditLog;
use crate::extract::EntityKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolPlan {
    pub worker_count: usize,
    pub per_worker_budget: u64,
    pub total_budget: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("resource budgets must be positive (total {total}, per worker {per_worker})")]
    ZeroBudget { total: u64, per_worker: u64 },
    #[error("max_workers must be at least 1")]
    ZeroWorkers,
}

/// `worker_count = max(1, min(max_workers, total / per_worker))`.
pub fn plan_pool(total_budget: u64, per_worker_budget: u64, max_workers: usize) -> Result<PoolPlan, PlanError> {
    if total_budget == 0 || per_worker_budget == 0 {
        return Err(PlanError::ZeroBudget {
            total: total_budget,
            per_worker: per_worker_budget,
        });
    }
    if max_workers == 0 {
        return Err(PlanError::ZeroWorkers);
    }
    let fit = usize::try_from(total_budget / per_worker_budget).unwrap_or(usize::MAX);
    Ok(PoolPlan {
        worker_count: fit.min(max_workers).max(1),
        per_worker_budget,
        total_budget,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Embed,
    Score,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Embed => "embed",
            Stage::Score => "score",
        }
    }
}

/// What hooks and the audit log may know about a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskInfo {
    pub task_id: u64,
    pub stage: Stage,
    /// Entity kind of a scoring task.
    pub kind: Option<EntityKind>,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskFailure {
    /// Worth retrying on a fresh worker (timeouts, provider errors, panics).
    #[error("transient: {0}")]
    Transient(String),
    /// Retrying cannot help (malformed payload).
    #[error("fatal: {0}")]
    Fatal(String),
}

impl TaskFailure {
    pub fn is_transient(&self) -> bool {
        matches!(self, TaskFailure::Transient(_))
    }

    fn class(&self) -> &'static str {
        match self {
            TaskFailure::Transient(_) => "transient",
            TaskFailure::Fatal(_) => "fatal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskResult<O> {
    Pending,
    Done(O),
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct TaskEnvelope<P, O> {
    pub task_id: u64,
    pub kind: Option<EntityKind>,
    pub payload: Arc<P>,
    pub attempt: u32,
    pub result: TaskResult<O>,
}

impl<P, O> TaskEnvelope<P, O> {
    pub fn new(task_id: u64, kind: Option<EntityKind>, payload: P) -> Self {
        TaskEnvelope {
            task_id,
            kind,
            payload: Arc::new(payload),
            attempt: 0,
            result: TaskResult::Pending,
        }
    }
}

/// Runs before every attempt, inside the worker. Returning an error or
/// panicking fails the attempt as if the task itself had.
pub trait TaskHook: Send + Sync {
    fn before_attempt(&self, info: &TaskInfo) -> Result<(), TaskFailure>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoHook;

impl TaskHook for NoHook {
    fn before_attempt(&self, _: &TaskInfo) -> Result<(), TaskFailure> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultMode {
    /// Fails the first attempt only.
    TransientOnce,
    /// Fails every attempt with a transient failure.
    Persistent,
    /// Fails with a non-retryable failure.
    Malformed,
    /// Panics on the first attempt.
    PanicOnce,
}

type Selector = Box<dyn Fn(&TaskInfo) -> bool + Send + Sync>;

/// Deterministic fault and scheduling-jitter injection.
pub struct FaultInjector {
    select: Selector,
    mode: FaultMode,
    jitter: Option<(u64, u64)>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl FaultInjector {
    pub fn new(mode: FaultMode, select: impl Fn(&TaskInfo) -> bool + Send + Sync + 'static) -> Self {
        FaultInjector {
            select: Box::new(select),
            mode,
            jitter: None,
        }
    }

    /// Selects roughly `percent`% of scoring tasks of `kind` by hashing task ids.
    pub fn score_fraction(mode: FaultMode, kind: EntityKind, percent: u64, seed: u64) -> Self {
        Self::new(mode, move |t| {
            t.stage == Stage::Score && t.kind == Some(kind) && splitmix64(seed ^ t.task_id) % 100 < percent
        })
    }

    /// Only sleeps: up to `max_micros` per attempt, derived from `seed`.
    pub fn jitter_only(seed: u64, max_micros: u64) -> Self {
        Self::new(FaultMode::TransientOnce, |_| false).with_jitter(seed, max_micros)
    }

    pub fn with_jitter(mut self, seed: u64, max_micros: u64) -> Self {
        self.jitter = Some((seed, max_micros.max(1)));
        self
    }

    pub fn selects(&self, info: &TaskInfo) -> bool {
        (self.select)(info)
    }
}

impl TaskHook for FaultInjector {
    fn before_attempt(&self, info: &TaskInfo) -> Result<(), TaskFailure> {
        if let Some((seed, max)) = self.jitter {
            let r = splitmix64(seed ^ (info.task_id << 8) ^ u64::from(info.attempt));
            thread::sleep(Duration::from_micros(r % max));
        }
        if !(self.select)(info) {
            return Ok(());
        }
        match self.mode {
            FaultMode::TransientOnce if info.attempt == 1 => Err(TaskFailure::Transient("injected timeout".into())),
            FaultMode::Persistent => Err(TaskFailure::Transient("injected provider failure".into())),
            FaultMode::Malformed => Err(TaskFailure::Fatal("malformed payload".into())),
            FaultMode::PanicOnce if info.attempt == 1 => panic!("injected worker crash"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisorStats {
    pub tasks: usize,
    pub retries: usize,
    pub failed: usize,
    pub workers_restarted: usize,
}

struct Job<P> {
    slot: usize,
    info: TaskInfo,
    payload: Arc<P>,
}

struct Report<O> {
    worker: usize,
    slot: usize,
    outcome: Result<O, TaskFailure>,
}

fn panic_message(e: &(dyn std::any::Any + Send)) -> String {
    e.downcast_ref::<&str>()
        .map(|s| (*s).to_string())
        .or_else(|| e.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".to_string())
}

fn worker_loop<P, O, F>(id: usize, jobs: Receiver<Job<P>>, results: Sender<Report<O>>, handler: &F, hook: &dyn TaskHook)
where
    F: Fn(&P) -> Result<O, TaskFailure> + Sync,
{
    for job in jobs.iter() {
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            hook.before_attempt(&job.info)?;
            handler(&job.payload)
        }))
        .unwrap_or_else(|e| Err(TaskFailure::Transient(format!("worker panicked: {}", panic_message(e.as_ref())))));
        let failed = outcome.is_err();
        if results
            .send(Report {
                worker: id,
                slot: job.slot,
                outcome,
            })
            .is_err()
        {
            return;
        }
        // A failed worker is retired; the supervisor starts a clean one.
        if failed {
            return;
        }
    }
}

/// Runs every envelope to completion on `workers` threads. Each task is
/// attempted at most `max_retries + 1` times.
pub fn run_supervised<P, O, F>(
    stage: Stage,
    tasks: Vec<TaskEnvelope<P, O>>,
    workers: usize,
    max_retries: u32,
    handler: F,
    hook: &dyn TaskHook,
    audit: &AuditLog,
) -> (Vec<TaskEnvelope<P, O>>, SupervisorStats)
where
    P: Send + Sync,
    O: Send,
    F: Fn(&P) -> Result<O, TaskFailure> + Sync,
{
    let mut tasks = tasks;
    let mut stats = SupervisorStats {
        tasks: tasks.len(),
        ..Default::default()
    };
    if tasks.is_empty() {
        return (tasks, stats);
    }
    let workers = workers.clamp(1, tasks.len());
    let (job_tx, job_rx) = unbounded::<Job<P>>();
    let (res_tx, res_rx) = unbounded::<Report<O>>();

    let info = |t: &TaskEnvelope<P, O>| TaskInfo {
        task_id: t.task_id,
        stage,
        kind: t.kind,
        attempt: t.attempt,
    };
    let dispatch = |job_tx: &Sender<Job<P>>, t: &mut TaskEnvelope<P, O>, slot: usize| {
        t.attempt += 1;
        let i = info(t);
        audit.event(
            "task_dispatched",
            json!({"stage": stage.name(), "task_id": i.task_id, "attempt": i.attempt}),
        );
        let _ = job_tx.send(Job {
            slot,
            info: i,
            payload: Arc::clone(&t.payload),
        });
    };

    thread::scope(|s| {
        let handler = &handler;
        let spawn = |id: usize| {
            let rx = job_rx.clone();
            let tx = res_tx.clone();
            s.spawn(move || worker_loop(id, rx, tx, handler, hook));
        };
        for id in 0..workers {
            spawn(id);
        }
        for slot in 0..tasks.len() {
            dispatch(&job_tx, &mut tasks[slot], slot);
        }

        let mut pending = tasks.len();
        while pending > 0 {
            let Ok(report) = res_rx.recv() else { break };
            let task = &mut tasks[report.slot];
            match report.outcome {
                Ok(value) => {
                    audit.event(
                        "task_completed",
                        json!({"stage": stage.name(), "task_id": task.task_id, "attempt": task.attempt}),
                    );
                    task.result = TaskResult::Done(value);
                    pending -= 1;
                }
                Err(failure) => {
                    spawn(report.worker);
                    stats.workers_restarted += 1;
                    if failure.is_transient() && task.attempt <= max_retries {
                        audit.event(
                            "task_retried",
                            json!({"stage": stage.name(), "task_id": task.task_id, "attempt": task.attempt, "failure": failure.class()}),
                        );
                        stats.retries += 1;
                        dispatch(&job_tx, task, report.slot);
                    } else {
                        audit.event(
                            "task_failed",
                            json!({"stage": stage.name(), "task_id": task.task_id, "attempt": task.attempt, "failure": failure.class()}),
                        );
                        task.result = TaskResult::Failed(failure.to_string());
                        stats.failed += 1;
                        pending -= 1;
                    }
                }
            }
        }
        // Closing the job channel lets idle workers exit.
        drop(job_tx);
    });
    (tasks, stats)
}

/// Outputs of finished tasks by task id.
pub fn collect_results<P, O>(tasks: Vec<TaskEnvelope<P, O>>) -> BTreeMap<u64, Result<O, String>> {
    tasks
        .into_iter()
        .map(|t| {
            let r = match t.result {
                TaskResult::Done(v) => Ok(v),
                TaskResult::Failed(e) => Err(e),
                TaskResult::Pending => Err("task never completed".to_string()),
            };
            (t.task_id, r)
        })
        .collect()
}

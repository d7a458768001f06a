//! The three synthesis stages wired together: routing, cycle assignment and
//! link scheduling.

use serde::Serialize;
use thiserror::Error;

use crate::icap::{
    build_assignment_problem, lower_bound, solve_assignment, Assignment, AssignmentProblem, IcapBudget,
    IcapError, IcapMode, DEFAULT_EXACT_THRESHOLD,
};
use crate::model::{Instance, Nanos};
use crate::routing::{all_pairs_shortest_paths, route_all, RouteTree, RoutingError, RoutingTable, ShortestPathRouting};
use crate::scheduler::{
    build_rcpsp, solve_makespan, solve_porosity, GapPolicy, RcpspInstance, SchedulerError, SolverBudget, TtSchedule,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("routing: {0}")]
    Routing(#[from] RoutingError),
    #[error("cycle assignment: {0}")]
    Assignment(#[from] IcapError),
    #[error("scheduling: {0}")]
    Scheduling(#[from] SchedulerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveChoice {
    Makespan,
    /// Defaults to blocks and gaps of one eighth of the integration cycle.
    Porosity { policy: Option<GapPolicy> },
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PipelineOptions {
    /// `None` picks exact up to `exact_threshold` messages.
    pub icap_mode: Option<IcapMode>,
    pub exact_threshold: usize,
    #[serde(skip)]
    pub icap_budget: IcapBudget,
    pub solver: SolverBudget,
    pub seed: u64,
    pub objective: ObjectiveChoice,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            icap_mode: None,
            exact_threshold: DEFAULT_EXACT_THRESHOLD,
            icap_budget: IcapBudget::default(),
            solver: SolverBudget::default(),
            seed: 0,
            objective: ObjectiveChoice::Makespan,
        }
    }
}

/// Everything computed before link scheduling.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub table: RoutingTable,
    pub trees: Vec<RouteTree>,
    pub problem: AssignmentProblem,
    pub assignment: Assignment,
    pub rcpsp: RcpspInstance,
}

impl Prepared {
    /// Assignment objective plus the sync window.
    pub fn lower_bound(&self, instance: &Instance) -> Nanos {
        lower_bound(&self.assignment, instance.config.sync_window_ns)
    }

    /// Number of message instances.
    pub fn instance_count(&self) -> usize {
        self.trees.iter().map(RouteTree::len).sum()
    }
}

pub fn route(instance: &Instance) -> Result<(RoutingTable, Vec<RouteTree>), PipelineError> {
    let table = all_pairs_shortest_paths(&instance.topology)?;
    let strategy = ShortestPathRouting { table: &table };
    let trees = route_all(&instance.topology, &instance.messages, &strategy)?;
    Ok((table, trees))
}

pub fn prepare(instance: &Instance, opts: &PipelineOptions) -> Result<Prepared, PipelineError> {
    let (table, trees) = route(instance)?;
    let problem = build_assignment_problem(instance, &trees)?;
    let mode = opts
        .icap_mode
        .unwrap_or_else(|| IcapMode::auto(instance.messages.len(), opts.exact_threshold));
    let assignment = solve_assignment(&problem, mode, opts.icap_budget);
    let rcpsp = build_rcpsp(instance, &trees, &problem, &assignment)?;
    Ok(Prepared { table, trees, problem, assignment, rcpsp })
}

pub fn schedule(instance: &Instance, prepared: &Prepared, opts: &PipelineOptions) -> Result<TtSchedule, PipelineError> {
    let schedule = match opts.objective {
        ObjectiveChoice::Makespan => solve_makespan(&prepared.rcpsp, opts.solver, opts.seed)?,
        ObjectiveChoice::Porosity { policy } => {
            let policy = policy.unwrap_or_else(|| GapPolicy::default_for(instance.config.integration_cycle_ns));
            solve_porosity(&prepared.rcpsp, policy, opts.solver, opts.seed)?
        }
    };
    Ok(schedule)
}

/// Porosity schedule under `base`, halving the reserved gap up to three
/// times while the allowed blocks cannot hold the traffic.
pub fn schedule_porosity_relaxed(
    prepared: &Prepared,
    base: GapPolicy,
    opts: &PipelineOptions,
) -> Result<(TtSchedule, GapPolicy), PipelineError> {
    let mut last = None;
    for k in 0..4 {
        let policy = GapPolicy { block_ns: base.block_ns, gap_ns: base.gap_ns >> k };
        match solve_porosity(&prepared.rcpsp, policy, opts.solver, opts.seed) {
            Ok(s) => return Ok((s, policy)),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt").into())
}

/// Route, assign and schedule in one go.
pub fn run(instance: &Instance, opts: &PipelineOptions) -> Result<(Prepared, TtSchedule), PipelineError> {
    let prepared = prepare(instance, opts)?;
    let schedule = schedule(instance, &prepared, opts)?;
    Ok((prepared, schedule))
}

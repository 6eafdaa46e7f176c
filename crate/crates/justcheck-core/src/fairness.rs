//! Fairness-aware analyses over a network's transition graph.
//!
//! The central question has the shape: does some fair run starve a given
//! location? Fairness is parametrised by a notion of task (components,
//! groups, instructions, synchronisations, actions, or the transitions
//! themselves) together with a strength. A strong notion demands that
//! tasks enabled again and again are eventually engaged; a weak one only
//! protects tasks that stay enabled without interruption. Justness and
//! progress are handled as special cases of their own.
//!
//! The engine answers by searching for a recurring set: the states and
//! transitions some ultimately periodic fair run repeats forever. A
//! brute-force enumerator over lasso-shaped runs double-checks the engine
//! on small systems.

use std::collections::BTreeSet;
use std::collections::HashMap;
use std::collections::HashSet;
use std::collections::VecDeque;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::semantics::{Action, Lts, NetState, Semantics, TermState};
use crate::syntax::{InstrId, Network, Thread};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Components,
    Groups,
    Instructions,
    Synchronizations,
    Actions,
    Transitions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FairnessSpec {
    Progress,
    Justness,
    Strong(TaskKind),
    Weak(TaskKind),
    Swi,
}

impl FairnessSpec {
    pub fn name(&self) -> &'static str {
        use FairnessSpec::*;
        use TaskKind::*;
        match self {
            Progress => "P",
            Justness => "J",
            Strong(Components) => "SC",
            Strong(Groups) => "SG",
            Strong(Instructions) => "SI",
            Strong(Synchronizations) => "SZ",
            Strong(Actions) => "SA",
            Strong(Transitions) => "ST",
            Weak(Components) => "WC",
            Weak(Groups) => "WG",
            Weak(Instructions) => "WI",
            Weak(Synchronizations) => "WZ",
            Weak(Actions) => "WA",
            Weak(Transitions) => "WT",
            Swi => "SWI",
        }
    }

    pub fn parse(s: &str) -> Option<FairnessSpec> {
        use FairnessSpec::*;
        use TaskKind::*;
        Some(match s.to_ascii_uppercase().as_str() {
            "P" => Progress,
            "J" => Justness,
            "SC" => Strong(Components),
            "SG" => Strong(Groups),
            "SI" => Strong(Instructions),
            "SZ" => Strong(Synchronizations),
            "SA" => Strong(Actions),
            "ST" => Strong(Transitions),
            "WC" => Weak(Components),
            "WG" => Weak(Groups),
            "WI" => Weak(Instructions),
            "WZ" => Weak(Synchronizations),
            "WA" => Weak(Actions),
            "WT" => Weak(Transitions),
            "SWI" => Swi,
            _ => return None,
        })
    }

    /// The eight notions the engine and the lasso enumerator are compared
    /// on, from weakest to strongest assumption.
    pub fn comparison_family() -> Vec<FairnessSpec> {
        use FairnessSpec::*;
        use TaskKind::*;
        vec![
            Progress,
            Weak(Transitions),
            Weak(Actions),
            Weak(Components),
            Justness,
            Strong(Actions),
            Strong(Components),
            Strong(Transitions),
        ]
    }
}

/// Identity of a task. Group and synchronisation members are kept sorted
/// so the set-valued tasks compare structurally.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum TaskId {
    Comp(String),
    Group(Vec<String>),
    Instr(InstrId),
    Sync(Vec<InstrId>),
    Act(Action),
    Trans(usize),
}

fn transition_tasks(lts: &Lts, tid: usize, kind: TaskKind) -> Vec<TaskId> {
    let t = &lts.transitions[tid];
    match kind {
        TaskKind::Components => t.comp.iter().map(|c| TaskId::Comp(c.clone())).collect(),
        TaskKind::Groups => {
            let mut g = t.comp.clone();
            g.sort();
            vec![TaskId::Group(g)]
        }
        TaskKind::Instructions => t.instr.iter().map(|i| TaskId::Instr(*i)).collect(),
        TaskKind::Synchronizations => {
            let mut z = t.instr.clone();
            z.sort();
            vec![TaskId::Sync(z)]
        }
        TaskKind::Actions => vec![TaskId::Act(t.action.clone())],
        TaskKind::Transitions => vec![TaskId::Trans(tid)],
    }
}

pub fn task_engaged(lts: &Lts, tid: usize, task: &TaskId, kind: TaskKind) -> bool {
    transition_tasks(lts, tid, kind).contains(task)
}

pub fn task_enabled(lts: &Lts, sid: usize, task: &TaskId, kind: TaskKind) -> bool {
    lts.outgoing[sid]
        .iter()
        .any(|&tid| task_engaged(lts, tid, task, kind))
}

fn enabled_tasks(lts: &Lts, sid: usize, kind: TaskKind) -> BTreeSet<TaskId> {
    lts.outgoing[sid]
        .iter()
        .flat_map(|&tid| transition_tasks(lts, tid, kind))
        .collect()
}

/// Instruction occurrences a state offers locally, whether or not a
/// partner is available: the branches of a top-level choice, a committed
/// send, or a top-level recursion binder.
fn requested_instructions(state: &NetState) -> BTreeSet<InstrId> {
    let mut out = BTreeSet::new();
    for term in state.values() {
        match term {
            TermState::Plain(Thread::Internal(bs)) => out.extend(bs.iter().map(|b| b.id)),
            TermState::Plain(Thread::External(bs)) => out.extend(bs.iter().map(|b| b.id)),
            TermState::Plain(Thread::Rec { id, .. }) => {
                out.insert(*id);
            }
            TermState::Committed { id, .. } => {
                out.insert(*id);
            }
            _ => {}
        }
    }
    out
}

/// States and transitions an ultimately periodic run can repeat forever:
/// the transition-induced subgraph is strongly connected and every state
/// is touched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecurringSet {
    pub states: Vec<usize>,
    pub transitions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Witness {
    Recurring(RecurringSet),
    DeadState(usize),
    Lasso { prefix: Vec<usize>, cycle: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub property: String,
    pub holds: bool,
    pub witness: Option<Witness>,
    pub per_location: Vec<(String, bool)>,
}

impl Verdict {
    fn plain(property: impl Into<String>, holds: bool, witness: Option<Witness>) -> Verdict {
        Verdict {
            property: property.into(),
            holds,
            witness,
            per_location: Vec::new(),
        }
    }
}

fn involves(lts: &Lts, tid: usize, avoid: Option<&str>) -> bool {
    match avoid {
        Some(loc) => lts.transitions[tid].involves(loc),
        None => false,
    }
}

fn internal_transitions(lts: &Lts, states: &BTreeSet<usize>, avoid: Option<&str>) -> Vec<usize> {
    let mut out = Vec::new();
    for &s in states {
        for &tid in &lts.outgoing[s] {
            let t = &lts.transitions[tid];
            if states.contains(&t.target) && !involves(lts, tid, avoid) {
                out.push(tid);
            }
        }
    }
    out
}

fn split_sccs(lts: &Lts, states: &BTreeSet<usize>, trans: &[usize]) -> Vec<BTreeSet<usize>> {
    let mut g = DiGraph::<usize, usize>::new();
    let mut idx = HashMap::new();
    for &s in states {
        idx.insert(s, g.add_node(s));
    }
    let mut has_edge: HashSet<usize> = HashSet::new();
    for &tid in trans {
        let t = &lts.transitions[tid];
        g.add_edge(idx[&t.source], idx[&t.target], tid);
        has_edge.insert(t.source);
    }
    tarjan_scc(&g)
        .into_iter()
        .map(|comp| comp.into_iter().map(|n| g[n]).collect::<BTreeSet<usize>>())
        .filter(|comp: &BTreeSet<usize>| {
            comp.len() > 1
                || comp
                    .iter()
                    .next()
                    .is_some_and(|&s| {
                        has_edge.contains(&s)
                            && trans.iter().any(|&tid| {
                                lts.transitions[tid].source == s
                                    && lts.transitions[tid].target == s
                            })
                    })
        })
        .collect()
}

fn comp_overlap(a: &[String], b: &[String]) -> bool {
    a.iter().any(|x| b.contains(x))
}

/// States of the candidate that the current transition set cannot
/// satisfy, per the side condition of `spec`. Empty means the candidate
/// is a valid recurring set.
fn unsatisfied_states(
    lts: &Lts,
    spec: FairnessSpec,
    states: &BTreeSet<usize>,
    trans: &[usize],
) -> BTreeSet<usize> {
    let mut bad = BTreeSet::new();
    match spec {
        FairnessSpec::Progress => {}
        FairnessSpec::Justness => {
            let touched: BTreeSet<&String> = trans
                .iter()
                .flat_map(|&tid| lts.transitions[tid].comp.iter())
                .collect();
            for &s in states {
                let ok = lts.outgoing[s].iter().all(|&tid| {
                    lts.transitions[tid]
                        .comp
                        .iter()
                        .any(|c| touched.contains(c))
                });
                if !ok {
                    bad.insert(s);
                }
            }
        }
        FairnessSpec::Strong(kind) => {
            let engaged: BTreeSet<TaskId> = trans
                .iter()
                .flat_map(|&tid| transition_tasks(lts, tid, kind))
                .collect();
            for &s in states {
                let ok = enabled_tasks(lts, s, kind)
                    .iter()
                    .all(|task| engaged.contains(task));
                if !ok {
                    bad.insert(s);
                }
            }
        }
        FairnessSpec::Weak(kind) => {
            let engaged: BTreeSet<TaskId> = trans
                .iter()
                .flat_map(|&tid| transition_tasks(lts, tid, kind))
                .collect();
            let mut iter = states.iter();
            let first = *iter.next().expect("candidate has states");
            let mut perpetual = enabled_tasks(lts, first, kind);
            for &s in iter {
                let here = enabled_tasks(lts, s, kind);
                perpetual.retain(|t| here.contains(t));
            }
            if !perpetual.iter().all(|task| engaged.contains(task)) {
                bad.extend(states.iter().copied());
            }
        }
        FairnessSpec::Swi => {
            let engaged: BTreeSet<InstrId> = trans
                .iter()
                .flat_map(|&tid| lts.transitions[tid].instr.iter().copied())
                .collect();
            let mut iter = states.iter();
            let first = *iter.next().expect("candidate has states");
            let mut requested = requested_instructions(&lts.states[first]);
            for &s in iter {
                let here = requested_instructions(&lts.states[s]);
                requested.retain(|i| here.contains(i));
            }
            let enabled: BTreeSet<InstrId> = states
                .iter()
                .flat_map(|&s| lts.outgoing[s].iter())
                .flat_map(|&tid| lts.transitions[tid].instr.iter().copied())
                .collect();
            let ok = requested
                .iter()
                .all(|i| !enabled.contains(i) || engaged.contains(i));
            if !ok {
                bad.extend(states.iter().copied());
            }
        }
    }
    bad
}

fn search_recurring(
    lts: &Lts,
    spec: FairnessSpec,
    avoid: Option<&str>,
    state_ok: &dyn Fn(usize) -> bool,
) -> Option<RecurringSet> {
    let allowed: BTreeSet<usize> = (0..lts.states.len()).filter(|&s| state_ok(s)).collect();
    let all_internal = internal_transitions(lts, &allowed, avoid);
    let mut worklist: VecDeque<BTreeSet<usize>> = split_sccs(lts, &allowed, &all_internal).into();

    while let Some(states) = worklist.pop_front() {
        let trans = internal_transitions(lts, &states, avoid);
        if trans.is_empty() {
            continue;
        }
        let bad = unsatisfied_states(lts, spec, &states, &trans);
        if bad.is_empty() {
            let rs = RecurringSet {
                states: states.iter().copied().collect(),
                transitions: trans,
            };
            debug_assert!(validate_recurring_set(lts, spec, avoid, &rs));
            return Some(rs);
        }
        match spec {
            // Shrinking the candidate can only add obligations for the
            // uniform notions, so their maximal candidates are decisive
            // and failing ones are dropped whole.
            FairnessSpec::Weak(_) | FairnessSpec::Swi | FairnessSpec::Progress => {}
            FairnessSpec::Justness | FairnessSpec::Strong(_) => {
                let remaining: BTreeSet<usize> =
                    states.difference(&bad).copied().collect();
                if !remaining.is_empty() {
                    let rem_trans = internal_transitions(lts, &remaining, avoid);
                    for comp in split_sccs(lts, &remaining, &rem_trans) {
                        worklist.push_back(comp);
                    }
                }
            }
        }
    }

    if spec == FairnessSpec::Swi {
        // Requests shrink with a growing candidate while enabledness
        // grows, so neither direction of pruning is conclusive; fall back
        // to exhaustive lasso search.
        if let Some((_, cycle)) = oracle_enumerate_lassos_filtered(lts, spec, avoid, 8, 12, state_ok) {
            let states: BTreeSet<usize> = cycle
                .iter()
                .map(|&tid| lts.transitions[tid].source)
                .collect();
            let mut trans: Vec<usize> = cycle.clone();
            trans.sort_unstable();
            trans.dedup();
            let rs = RecurringSet {
                states: states.into_iter().collect(),
                transitions: trans,
            };
            if validate_recurring_set(lts, spec, avoid, &rs) {
                return Some(rs);
            }
        }
    }
    None
}

/// A recurring set over which `avoid` (when given) never acts, meeting
/// the side condition of `spec`; a fair run can then repeat it forever.
pub fn find_violating_recurring_set(
    lts: &Lts,
    spec: FairnessSpec,
    avoid: Option<&str>,
) -> Option<RecurringSet> {
    search_recurring(lts, spec, avoid, &|_| true)
}

/// A closed walk from the set's smallest state traversing every one of
/// its transitions, if one exists within the step budget.
pub fn covering_cycle(lts: &Lts, set: &RecurringSet, bound: usize) -> Option<Vec<usize>> {
    let edges = &set.transitions;
    if edges.is_empty() || edges.len() > bound {
        return None;
    }
    let anchor = *set.states.iter().min()?;
    let full: u32 = (1u32 << edges.len()) - 1;
    let mut seen: HashSet<(usize, u32, usize)> = HashSet::new();
    let mut walk = Vec::new();
    fn go(
        lts: &Lts,
        edges: &[usize],
        anchor: usize,
        cur: usize,
        mask: u32,
        full: u32,
        walk: &mut Vec<usize>,
        bound: usize,
        seen: &mut HashSet<(usize, u32, usize)>,
    ) -> bool {
        if cur == anchor && mask == full && !walk.is_empty() {
            return true;
        }
        if walk.len() == bound || !seen.insert((cur, mask, walk.len())) {
            return false;
        }
        for (bit, &tid) in edges.iter().enumerate() {
            let t = &lts.transitions[tid];
            if t.source == cur {
                walk.push(tid);
                if go(lts, edges, anchor, t.target, mask | (1 << bit), full, walk, bound, seen) {
                    return true;
                }
                walk.pop();
            }
        }
        false
    }
    if go(lts, edges, anchor, anchor, 0, full, &mut walk, bound, &mut seen) {
        Some(walk)
    } else {
        None
    }
}

/// Realize a recurring set as a concrete printable run: a shortest path
/// from the initial state to the set's smallest state, then a closed
/// walk through all of the set's transitions.
pub fn recurring_to_lasso(lts: &Lts, set: &RecurringSet) -> (Vec<usize>, Vec<usize>) {
    let anchor = *set.states.iter().min().expect("nonempty recurring set");
    let mut back: Vec<Option<usize>> = vec![None; lts.states.len()];
    let mut dist = vec![usize::MAX; lts.states.len()];
    dist[lts.initial] = 0;
    let mut queue = VecDeque::from([lts.initial]);
    while let Some(sid) = queue.pop_front() {
        for &tid in &lts.outgoing[sid] {
            let nxt = lts.transitions[tid].target;
            if dist[nxt] == usize::MAX {
                dist[nxt] = dist[sid] + 1;
                back[nxt] = Some(tid);
                queue.push_back(nxt);
            }
        }
    }
    let mut prefix = Vec::new();
    let mut cur = anchor;
    while let Some(tid) = back[cur] {
        prefix.push(tid);
        cur = lts.transitions[tid].source;
    }
    prefix.reverse();
    // Any strongly connected edge set admits a covering closed walk; a
    // generous cap keeps the search finite.
    let cap = set.transitions.len() * (set.states.len() + 1) + set.states.len() + 1;
    let cycle = (set.transitions.len()..=cap)
        .find_map(|b| covering_cycle(lts, set, b))
        .expect("recurring set is strongly connected");
    (prefix, cycle)
}

/// Re-check a recurring set from first principles: shape, avoidance, and
/// the fairness side condition.
pub fn validate_recurring_set(
    lts: &Lts,
    spec: FairnessSpec,
    avoid: Option<&str>,
    rs: &RecurringSet,
) -> bool {
    let states: BTreeSet<usize> = rs.states.iter().copied().collect();
    if rs.transitions.is_empty() || states.is_empty() {
        return false;
    }
    for &tid in &rs.transitions {
        let t = &lts.transitions[tid];
        if !states.contains(&t.source) || !states.contains(&t.target) {
            return false;
        }
        if involves(lts, tid, avoid) {
            return false;
        }
    }
    if split_sccs(lts, &states, &rs.transitions)
        .first()
        .map(|c| c.len())
        != Some(states.len())
    {
        return false;
    }
    let touched: BTreeSet<usize> = rs
        .transitions
        .iter()
        .flat_map(|&tid| {
            [lts.transitions[tid].source, lts.transitions[tid].target]
        })
        .collect();
    if !states.iter().all(|s| touched.contains(s)) {
        return false;
    }
    unsatisfied_states(lts, spec, &states, &rs.transitions).is_empty()
}

/// Brute-force check: enumerate runs shaped prefix + repeated cycle and
/// test the fairness definition literally on them. The cycle may revisit
/// states. Obligations that justness incurs along the prefix are carried
/// forward and must be answered later in the prefix or by the cycle.
pub fn oracle_enumerate_lassos(
    lts: &Lts,
    spec: FairnessSpec,
    avoid: Option<&str>,
    prefix_bound: usize,
    cycle_bound: usize,
) -> Option<(Vec<usize>, Vec<usize>)> {
    oracle_enumerate_lassos_filtered(lts, spec, avoid, prefix_bound, cycle_bound, &|_| true)
}

/// The lasso enumeration with the recurring part confined to the given
/// states; prefixes may pass anywhere.
fn oracle_enumerate_lassos_filtered(
    lts: &Lts,
    spec: FairnessSpec,
    avoid: Option<&str>,
    prefix_bound: usize,
    cycle_bound: usize,
    state_ok: &dyn Fn(usize) -> bool,
) -> Option<(Vec<usize>, Vec<usize>)> {
    // Outstanding justness obligations are abstracted to the component
    // sets of the unanswered enabled transitions.
    type Outstanding = BTreeSet<Vec<String>>;
    let mut combos: HashMap<(usize, Outstanding), Vec<usize>> = HashMap::new();
    let mut frontier: VecDeque<(usize, Outstanding, Vec<usize>, usize)> =
        VecDeque::from([(lts.initial, Outstanding::new(), Vec::new(), 0)]);
    while let Some((sid, out, path, depth)) = frontier.pop_front() {
        let key = (sid, out.clone());
        if combos.contains_key(&key) {
            continue;
        }
        combos.insert(key, path.clone());
        if depth >= prefix_bound {
            continue;
        }
        for &tid in &lts.outgoing[sid] {
            let t = &lts.transitions[tid];
            let mut next_out = out.clone();
            if spec == FairnessSpec::Justness {
                for &u in &lts.outgoing[sid] {
                    let mut c = lts.transitions[u].comp.clone();
                    c.sort();
                    next_out.insert(c);
                }
                next_out.retain(|c| !comp_overlap(c, &t.comp));
            }
            let mut next_path = path.clone();
            next_path.push(tid);
            frontier.push_back((t.target, next_out, next_path, depth + 1));
        }
    }

    let allowed: BTreeSet<usize> = (0..lts.states.len()).filter(|&s| state_ok(s)).collect();
    let avoid_free = internal_transitions(lts, &allowed, avoid);
    let sccs = split_sccs(lts, &allowed, &avoid_free);
    let scc_of = |s: usize| sccs.iter().position(|c| c.contains(&s));

    for ((anchor, out), prefix) in &combos {
        let Some(scc) = scc_of(*anchor) else { continue };
        let members = &sccs[scc];
        // Distances back to the anchor, for pruning walks that cannot
        // close any more.
        let mut dist: HashMap<usize, usize> = HashMap::from([(*anchor, 0)]);
        let mut q = VecDeque::from([*anchor]);
        while let Some(s) = q.pop_front() {
            for &tid in &avoid_free {
                let t = &lts.transitions[tid];
                if t.target == s && members.contains(&t.source) && !dist.contains_key(&t.source) {
                    dist.insert(t.source, dist[&s] + 1);
                    q.push_back(t.source);
                }
            }
        }
        let mut walk: Vec<usize> = Vec::new();
        if let Some(cycle) = extend_walk(
            lts,
            spec,
            avoid,
            *anchor,
            *anchor,
            &mut walk,
            cycle_bound,
            &dist,
            members,
            out,
        ) {
            return Some((prefix.clone(), cycle));
        }
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn extend_walk(
    lts: &Lts,
    spec: FairnessSpec,
    avoid: Option<&str>,
    anchor: usize,
    cur: usize,
    walk: &mut Vec<usize>,
    budget: usize,
    dist: &HashMap<usize, usize>,
    members: &BTreeSet<usize>,
    outstanding: &BTreeSet<Vec<String>>,
) -> Option<Vec<usize>> {
    if cur == anchor && !walk.is_empty() && cycle_is_fair(lts, spec, walk, outstanding) {
        return Some(walk.clone());
    }
    for &tid in &lts.outgoing[cur] {
        let t = &lts.transitions[tid];
        // Walks are anchored at their smallest state to cut duplicates.
        if t.target < anchor || !members.contains(&t.target) || involves(lts, tid, avoid) {
            continue;
        }
        match dist.get(&t.target) {
            Some(&d) if walk.len() + 1 + d <= budget => {}
            _ => continue,
        }
        walk.push(tid);
        let found = extend_walk(
            lts, spec, avoid, anchor, t.target, walk, budget, dist, members, outstanding,
        );
        walk.pop();
        if found.is_some() {
            return found;
        }
    }
    None
}

/// The literal fairness check on the periodic part of a run, plus the
/// prefix obligations handed over for justness.
fn cycle_is_fair(
    lts: &Lts,
    spec: FairnessSpec,
    cycle: &[usize],
    outstanding: &BTreeSet<Vec<String>>,
) -> bool {
    let cycle_states: BTreeSet<usize> =
        cycle.iter().map(|&tid| lts.transitions[tid].source).collect();
    match spec {
        FairnessSpec::Progress => true,
        FairnessSpec::Justness => {
            let touched: BTreeSet<&String> = cycle
                .iter()
                .flat_map(|&tid| lts.transitions[tid].comp.iter())
                .collect();
            let settled = outstanding
                .iter()
                .all(|c| c.iter().any(|l| touched.contains(l)));
            settled
                && cycle_states.iter().all(|&s| {
                    lts.outgoing[s].iter().all(|&tid| {
                        lts.transitions[tid]
                            .comp
                            .iter()
                            .any(|c| touched.contains(c))
                    })
                })
        }
        FairnessSpec::Strong(kind) => {
            let engaged: BTreeSet<TaskId> = cycle
                .iter()
                .flat_map(|&tid| transition_tasks(lts, tid, kind))
                .collect();
            cycle_states
                .iter()
                .flat_map(|&s| enabled_tasks(lts, s, kind))
                .all(|task| engaged.contains(&task))
        }
        FairnessSpec::Weak(kind) => {
            let engaged: BTreeSet<TaskId> = cycle
                .iter()
                .flat_map(|&tid| transition_tasks(lts, tid, kind))
                .collect();
            let mut iter = cycle_states.iter();
            let first = *iter.next().expect("cycle has states");
            let mut perpetual = enabled_tasks(lts, first, kind);
            for &s in iter {
                let here = enabled_tasks(lts, s, kind);
                perpetual.retain(|t| here.contains(t));
            }
            perpetual.iter().all(|task| engaged.contains(task))
        }
        FairnessSpec::Swi => {
            let engaged: BTreeSet<InstrId> = cycle
                .iter()
                .flat_map(|&tid| lts.transitions[tid].instr.iter().copied())
                .collect();
            let mut iter = cycle_states.iter();
            let first = *iter.next().expect("cycle has states");
            let mut requested = requested_instructions(&lts.states[first]);
            for &s in iter {
                let here = requested_instructions(&lts.states[s]);
                requested.retain(|i| here.contains(i));
            }
            let enabled: BTreeSet<InstrId> = cycle_states
                .iter()
                .flat_map(|&s| lts.outgoing[s].iter())
                .flat_map(|&tid| lts.transitions[tid].instr.iter().copied())
                .collect();
            requested
                .iter()
                .all(|i| !enabled.contains(i) || engaged.contains(i))
        }
    }
}

fn liveness_name(lts: &Lts, spec: FairnessSpec) -> String {
    match lts.semantics {
        Semantics::Default => format!("L({})", spec.name()),
        Semantics::Reactive => format!("R({})", spec.name()),
    }
}

/// Lock-freedom under `spec`: on every fair run, every location either
/// reaches `end` or acts again and again.
pub fn check_liveness(lts: &Lts, spec: FairnessSpec) -> Verdict {
    let property = liveness_name(lts, spec);
    let mut witness = None;
    let mut per_location: Vec<(String, bool)> = Vec::new();
    for loc in &lts.locations {
        let mut ok = true;
        for sid in 0..lts.states.len() {
            if lts.is_terminal(sid) && !lts.states[sid][loc].is_end() {
                ok = false;
                if witness.is_none() {
                    witness = Some(Witness::DeadState(sid));
                }
                break;
            }
        }
        if ok {
            // The run must starve the location while it still has work
            // left, so only states where it has not reached `end` count.
            let found = search_recurring(lts, spec, Some(loc), &|sid| {
                !lts.states[sid][loc].is_end()
            });
            if let Some(rs) = found {
                ok = false;
                if witness.is_none() {
                    witness = Some(Witness::Recurring(rs));
                }
            }
        }
        per_location.push((loc.clone(), ok));
    }
    Verdict {
        property,
        holds: per_location.iter().all(|(_, ok)| *ok),
        witness,
        per_location,
    }
}

/// Every fair run is finite. Finite maximal runs count as fair for every
/// notion, since nothing is enabled past their last state.
pub fn check_terminates(lts: &Lts, spec: FairnessSpec) -> Verdict {
    let property = format!("terminates({})", spec.name());
    match find_violating_recurring_set(lts, spec, None) {
        Some(rs) => Verdict::plain(property, false, Some(Witness::Recurring(rs))),
        None => Verdict::plain(property, true, None),
    }
}

/// Every fair run is finite and ends with all locations at `end`.
pub fn check_terminates_successfully(lts: &Lts, spec: FairnessSpec) -> Verdict {
    let property = format!("terminates-successfully({})", spec.name());
    for sid in 0..lts.states.len() {
        if lts.is_terminal(sid) && !lts.is_successfully_terminated(sid) {
            return Verdict::plain(property, false, Some(Witness::DeadState(sid)));
        }
    }
    match find_violating_recurring_set(lts, spec, None) {
        Some(rs) => Verdict::plain(property, false, Some(Witness::Recurring(rs))),
        None => Verdict::plain(property, true, None),
    }
}

/// No reachable state is stuck short of success.
pub fn deadlock_free(lts: &Lts) -> Verdict {
    for sid in 0..lts.states.len() {
        if lts.is_terminal(sid) && !lts.is_successfully_terminated(sid) {
            return Verdict::plain("deadlock-free", false, Some(Witness::DeadState(sid)));
        }
    }
    Verdict::plain("deadlock-free", true, None)
}

/// From every reachable state, every location that has not reached `end`
/// can still be involved in some continuation of the run.
pub fn padovani_lockfree(lts: &Lts) -> Verdict {
    let mut per_location = Vec::new();
    let mut witness = None;
    for loc in &lts.locations {
        // States from which a transition involving the location is still
        // reachable, by walking the graph backwards.
        let mut can_act = vec![false; lts.states.len()];
        let mut q = VecDeque::new();
        for t in &lts.transitions {
            if t.involves(loc) && !can_act[t.source] {
                can_act[t.source] = true;
                q.push_back(t.source);
            }
        }
        while let Some(s) = q.pop_front() {
            for t in &lts.transitions {
                if t.target == s && !can_act[t.source] {
                    can_act[t.source] = true;
                    q.push_back(t.source);
                }
            }
        }
        let mut ok = true;
        for sid in 0..lts.states.len() {
            if !lts.states[sid][loc].is_end() && !can_act[sid] {
                ok = false;
                if witness.is_none() {
                    witness = Some(Witness::DeadState(sid));
                }
                break;
            }
        }
        per_location.push((loc.clone(), ok));
    }
    Verdict {
        property: "padovani-lock-free".into(),
        holds: per_location.iter().all(|(_, ok)| *ok),
        witness,
        per_location,
    }
}

/// No reachable state lets two synchronisations contend for the same
/// receiver, either from different senders or with different outcomes.
/// Meant for the default-semantics graph.
pub fn race_free(lts: &Lts) -> Verdict {
    for sid in 0..lts.states.len() {
        let comms: Vec<&crate::semantics::Transition> = lts
            .steps_from(sid)
            .filter(|t| !t.action.is_tau())
            .collect();
        for (i, a) in comms.iter().enumerate() {
            for b in &comms[i + 1..] {
                let (Action::Comm { sender: pa, receiver: ra, .. },
                     Action::Comm { sender: pb, receiver: rb, .. }) = (&a.action, &b.action)
                else {
                    continue;
                };
                if ra == rb && (pa != pb || a.target != b.target) {
                    return Verdict::plain("race-free", false, Some(Witness::DeadState(sid)));
                }
            }
        }
    }
    Verdict::plain("race-free", true, None)
}

/// Every external choice in the source mixes neither senders nor labels.
pub fn syntactic_race_free(net: &Network) -> bool {
    fn check(t: &Thread) -> bool {
        match t {
            Thread::End | Thread::Var(_) => true,
            Thread::Rec { body, .. } => check(body),
            Thread::Internal(bs) => bs.iter().all(|b| check(&b.cont)),
            Thread::External(bs) => {
                let same_source = bs.iter().all(|b| b.source == bs[0].source);
                let mut labels: Vec<&String> = bs.iter().map(|b| &b.label).collect();
                labels.sort();
                labels.dedup();
                same_source && labels.len() == bs.len() && bs.iter().all(|b| check(&b.cont))
            }
        }
    }
    net.locations.values().all(check)
}

#[derive(Debug, Clone)]
pub struct ClassRow {
    pub semantics: Semantics,
    pub fairness: &'static str,
    pub live: Verdict,
    pub terminates: Verdict,
    pub terminates_successfully: Verdict,
}

#[derive(Debug, Clone)]
pub struct ClassificationReport {
    pub network: String,
    pub rows: Vec<ClassRow>,
    pub deadlock_free: Option<Verdict>,
    pub race_free: Option<Verdict>,
    pub syntactically_race_free: bool,
    pub padovani: Option<Verdict>,
}

/// Batch driver: build the graphs once and evaluate the requested
/// fairness notions under each requested reading. The structural checks
/// ride along whenever the default reading is included.
pub fn classify(
    net: &Network,
    fairness: &[FairnessSpec],
    semantics: &[Semantics],
) -> Result<ClassificationReport, crate::semantics::SemanticsError> {
    let mut rows = Vec::new();
    let mut deadlock = None;
    let mut race = None;
    let mut padovani = None;
    for &sem in semantics {
        let lts = crate::semantics::build_lts(net, sem)?;
        for &spec in fairness {
            rows.push(ClassRow {
                semantics: sem,
                fairness: spec.name(),
                live: check_liveness(&lts, spec),
                terminates: check_terminates(&lts, spec),
                terminates_successfully: check_terminates_successfully(&lts, spec),
            });
        }
        if sem == Semantics::Default {
            deadlock = Some(deadlock_free(&lts));
            race = Some(race_free(&lts));
            padovani = Some(padovani_lockfree(&lts));
        }
    }
    Ok(ClassificationReport {
        network: net.name.clone(),
        rows,
        deadlock_free: deadlock,
        race_free: race,
        syntactically_race_free: syntactic_race_free(net),
        padovani,
    })
}

pub fn verdict_to_json(v: &Verdict) -> serde_json::Value {
    let witness = v.witness.as_ref().map(|w| match w {
        Witness::Recurring(rs) => serde_json::json!({
            "kind": "recurring-set",
            "states": rs.states,
            "transitions": rs.transitions,
        }),
        Witness::DeadState(sid) => serde_json::json!({
            "kind": "state",
            "state": sid,
        }),
        Witness::Lasso { prefix, cycle } => serde_json::json!({
            "kind": "lasso",
            "prefix": prefix,
            "cycle": cycle,
        }),
    });
    serde_json::json!({
        "property": v.property,
        "holds": v.holds,
        "witness": witness,
        "locations": v
            .per_location
            .iter()
            .map(|(l, ok)| serde_json::json!({ "location": l, "ok": ok }))
            .collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::build_lts;
    use crate::syntax::parse_network;

    fn lts(src: &str, sem: Semantics) -> Lts {
        build_lts(&parse_network(src).unwrap(), sem).unwrap()
    }

    const STARVER: &str = "net n {
        loc seller = rec X. buyer1?order1; X + buyer2?order2; X
        loc buyer1 = rec Y. seller!order1; Y
        loc buyer2 = rec Z. seller!order2; Z
    }";

    #[test]
    fn justness_permits_starving_one_buyer_but_strong_components_does_not() {
        let l = lts(STARVER, Semantics::Default);
        let just = find_violating_recurring_set(&l, FairnessSpec::Justness, Some("buyer1"));
        assert!(just.is_some());
        assert!(validate_recurring_set(
            &l,
            FairnessSpec::Justness,
            Some("buyer1"),
            just.as_ref().unwrap()
        ));
        assert!(find_violating_recurring_set(
            &l,
            FairnessSpec::Strong(TaskKind::Components),
            Some("buyer1")
        )
        .is_none());
        assert!(!check_liveness(&l, FairnessSpec::Justness).holds);
        assert!(check_liveness(&l, FairnessSpec::Strong(TaskKind::Components)).holds);
    }

    #[test]
    fn independent_pairs_are_live_under_justness_but_not_under_progress() {
        let l = lts(
            "net n {
                loc seller1 = rec X. buyer1?order; X
                loc buyer1 = rec Y. seller1!order; Y
                loc seller2 = rec Z. buyer2?order; Z
                loc buyer2 = rec W. seller2!order; W
            }",
            Semantics::Default,
        );
        assert!(check_liveness(&l, FairnessSpec::Justness).holds);
        let p = check_liveness(&l, FairnessSpec::Progress);
        assert!(!p.holds);
        let starved: Vec<_> = p
            .per_location
            .iter()
            .filter(|(_, ok)| !ok)
            .map(|(l, _)| l.as_str())
            .collect();
        assert_eq!(starved, ["seller1", "buyer1", "seller2", "buyer2"]);
    }

    #[test]
    fn negotiation_terminates_only_under_strong_transitions() {
        let l = lts(
            "net n {
                loc buyer = rec X. seller!talk; X (+) seller!buy; end
                loc seller = rec Y. buyer?talk; Y + buyer?buy; shipper!order; end
                loc shipper = seller?order; end
            }",
            Semantics::Default,
        );
        assert!(check_terminates_successfully(&l, FairnessSpec::Strong(TaskKind::Transitions)).holds);
        assert!(!check_terminates(&l, FairnessSpec::Strong(TaskKind::Components)).holds);
        assert!(check_liveness(&l, FairnessSpec::Strong(TaskKind::Transitions)).holds);
        assert!(!check_liveness(&l, FairnessSpec::Strong(TaskKind::Components)).holds);
        assert!(deadlock_free(&l).holds);
        assert!(padovani_lockfree(&l).holds);
    }

    #[test]
    fn livelock_starves_the_shipper_under_every_notion() {
        let l = lts(
            "net n {
                loc buyer = rec X. seller!buy; X
                loc seller = rec Y. buyer?buy; Y
                loc shipper = seller?order; end
            }",
            Semantics::Default,
        );
        assert!(deadlock_free(&l).holds);
        let pad = padovani_lockfree(&l);
        assert!(!pad.holds);
        assert!(pad.per_location.contains(&("shipper".into(), false)));
        assert!(!check_liveness(&l, FairnessSpec::Strong(TaskKind::Transitions)).holds);
    }

    #[test]
    fn committed_send_with_no_receiver_is_a_deadlock() {
        let l = lts(
            "net n { loc buyer = seller!buy; end (+) seller!order; end loc seller = buyer?buy; end }",
            Semantics::Default,
        );
        assert!(!deadlock_free(&l).holds);
        let r = lts(
            "net n { loc buyer = seller!buy; end (+) seller!order; end loc seller = buyer?buy; end }",
            Semantics::Reactive,
        );
        for spec in FairnessSpec::comparison_family() {
            assert!(check_liveness(&r, spec).holds, "{}", spec.name());
        }
    }

    #[test]
    fn plain_termination_can_leave_a_location_stuck() {
        let l = lts(
            "net n {
                loc seller = rec X. buyer1?order1; X + buyer2?order2; end
                loc buyer1 = rec Y. seller!order1; Y
                loc buyer2 = seller!order2; end
            }",
            Semantics::Default,
        );
        let sc = FairnessSpec::Strong(TaskKind::Components);
        assert!(check_terminates(&l, sc).holds);
        assert!(!check_terminates_successfully(&l, sc).holds);
        assert!(!check_liveness(&l, FairnessSpec::Strong(TaskKind::Transitions)).holds);
    }

    #[test]
    fn race_detection() {
        let mini = lts(
            "net n {
                loc buyer1 = seller!buy1; end
                loc buyer2 = seller!buy2; end
                loc seller = buyer1?buy1; buyer2?buy2; end + buyer2?buy2; buyer1?buy1; buyer1!order; end
            }",
            Semantics::Default,
        );
        assert!(!race_free(&mini).holds);
        assert!(!deadlock_free(&mini).holds);
        let pair = lts(
            "net n { loc p = q!a; end loc q = p?a; end }",
            Semantics::Default,
        );
        assert!(race_free(&pair).holds);
    }

    #[test]
    fn syntactic_races_are_about_the_source_text() {
        // seller can be offered order2 and extend at the same time, so the
        // mixed-source choice really does race.
        let mixed = parse_network(
            "net n {
                loc buyer = rec X. seller1!order1; X (+) seller2!order2; end
                loc seller1 = rec Y. buyer?order1; seller2!extend; Y + seller2?done; end
                loc seller2 = rec Z. seller1?extend; Z + buyer?order2; seller1!done; end
            }",
        )
        .unwrap();
        assert!(!syntactic_race_free(&mixed));
        let l = build_lts(&mixed, Semantics::Default).unwrap();
        assert!(!race_free(&l).holds);
        // Here the second source of r's choice can never actually fire, so
        // only the syntactic check complains.
        let harmless = parse_network(
            "net n {
                loc p = q!a; end
                loc q = p?a; r!b; end
                loc r = q?b; end + p?c; end
            }",
        )
        .unwrap();
        assert!(!syntactic_race_free(&harmless));
        let l = build_lts(&harmless, Semantics::Default).unwrap();
        assert!(race_free(&l).holds);
        let single_sourced = parse_network(
            "net n { loc p = q!a; end loc q = p?a; end }",
        )
        .unwrap();
        assert!(syntactic_race_free(&single_sourced));
    }

    #[test]
    fn oracle_agrees_with_engine_on_the_starver() {
        let l = lts(STARVER, Semantics::Default);
        for spec in FairnessSpec::comparison_family() {
            for avoid in ["buyer1", "buyer2", "seller"] {
                let engine = find_violating_recurring_set(&l, spec, Some(avoid)).is_some();
                let oracle = oracle_enumerate_lassos(&l, spec, Some(avoid), 8, 12).is_some();
                assert_eq!(engine, oracle, "{} avoid {}", spec.name(), avoid);
            }
        }
    }

    #[test]
    fn oracle_lasso_for_the_starved_buyer_is_a_well_formed_run() {
        let l = lts(STARVER, Semantics::Default);
        let (prefix, cycle) =
            oracle_enumerate_lassos(&l, FairnessSpec::Justness, Some("buyer1"), 8, 12).unwrap();
        assert!(!cycle.is_empty());
        let mut at = l.initial;
        for &tid in &prefix {
            assert_eq!(l.transitions[tid].source, at);
            at = l.transitions[tid].target;
        }
        let anchor = at;
        for &tid in &cycle {
            assert_eq!(l.transitions[tid].source, at);
            assert!(!l.transitions[tid].involves("buyer1"));
            at = l.transitions[tid].target;
        }
        assert_eq!(at, anchor);
    }

    #[test]
    fn single_location_network_is_live_under_everything() {
        let l = lts("net n { loc p = end }", Semantics::Default);
        for spec in FairnessSpec::comparison_family() {
            assert!(check_liveness(&l, spec).holds);
            assert!(check_terminates_successfully(&l, spec).holds);
        }
        assert!(deadlock_free(&l).holds);
        assert!(padovani_lockfree(&l).holds);
        assert!(race_free(&l).holds);
    }

    #[test]
    fn reactive_weak_transitions_misses_a_state_changing_handoff() {
        let l = lts(
            "net n {
                loc trader1 = rec X. trader2!order; trader2?order; X
                loc trader2 = rec Y. trader1?order; trader1!order; Y
                loc accountant = auditor!report; end
                loc auditor = accountant?report; end
            }",
            Semantics::Reactive,
        );
        assert_eq!(l.states.len(), 4);
        assert_eq!(l.transitions.len(), 6);
        assert!(check_liveness(&l, FairnessSpec::Justness).holds);
        assert!(!check_liveness(&l, FairnessSpec::Weak(TaskKind::Transitions)).holds);
    }

    #[test]
    fn swi_collapses_to_strong_components_here() {
        for src in [
            STARVER,
            "net n { loc p = q!a; end loc q = p?a; end }",
            "net n {
                loc buyer = rec X. seller!talk; X (+) seller!buy; end
                loc seller = rec Y. buyer?talk; Y + buyer?buy; shipper!order; end
                loc shipper = seller?order; end
            }",
        ] {
            let l = lts(src, Semantics::Default);
            let swi = check_liveness(&l, FairnessSpec::Swi);
            let sc = check_liveness(&l, FairnessSpec::Strong(TaskKind::Components));
            assert_eq!(swi.holds, sc.holds);
        }
    }

    #[test]
    fn a_witness_unrolls_into_a_walkable_lasso() {
        let l = lts(STARVER, Semantics::Default);
        let v = check_liveness(&l, FairnessSpec::Justness);
        assert!(!v.holds);
        let Some(Witness::Recurring(rs)) = &v.witness else {
            panic!("expected a recurring witness, got {:?}", v.witness);
        };
        let (prefix, cycle) = recurring_to_lasso(&l, rs);
        let mut cur = l.initial;
        for &tid in &prefix {
            assert_eq!(l.transitions[tid].source, cur);
            cur = l.transitions[tid].target;
        }
        let anchor = cur;
        assert_eq!(Some(&anchor), rs.states.iter().min());
        for &tid in &cycle {
            assert_eq!(l.transitions[tid].source, cur);
            cur = l.transitions[tid].target;
        }
        assert_eq!(cur, anchor);
        let walked: BTreeSet<usize> = cycle.iter().copied().collect();
        let wanted: BTreeSet<usize> = rs.transitions.iter().copied().collect();
        assert_eq!(walked, wanted);
    }

    #[test]
    fn classification_report_shape() {
        let net = parse_network(STARVER).unwrap();
        let report = classify(
            &net,
            &[FairnessSpec::Justness, FairnessSpec::Strong(TaskKind::Components)],
            &[Semantics::Default],
        )
        .unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.deadlock_free.as_ref().unwrap().holds);
        assert!(!report.syntactically_race_free);
        assert!(!report.race_free.as_ref().unwrap().holds);
        let empty = classify(&net, &[], &[]).unwrap();
        assert!(empty.rows.is_empty());
        assert!(empty.deadlock_free.is_none());
    }
}

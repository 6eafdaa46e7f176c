//! Transition systems for networks.
//!
//! Two operational readings are supported. Under the default one, a thread
//! first resolves an internal choice by a silent step, leaving it committed
//! to a single send, and a recursion unfolds by a silent step; the committed
//! send then synchronises with a matching receive branch of the addressee.
//! Under the reactive one there are no silent steps at all: recursion is
//! unfolded on the fly and every pair of a send branch and a matching
//! receive branch synchronises directly.
//!
//! Every transition records which locations took part and which instruction
//! occurrences it stems from, so fairness analyses can reason about
//! components and instructions without re-deriving them.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::collections::VecDeque;
use std::fmt;

use crate::syntax::{fmt_thread, subst, InstrId, Network, Thread};

/// A located term during execution: either an ordinary thread, or a send
/// the thread has committed to but not yet performed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TermState {
    Plain(Thread),
    Committed {
        target: String,
        label: String,
        id: InstrId,
        cont: Thread,
    },
}

impl TermState {
    pub fn is_end(&self) -> bool {
        matches!(self, TermState::Plain(Thread::End))
    }
}

impl fmt::Display for TermState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TermState::Plain(t) => write!(f, "{t}"),
            TermState::Committed { target, label, cont, .. } => {
                write!(f, "chosen {target}!{label}; ")?;
                fmt_thread(cont, true, f)
            }
        }
    }
}

/// Execution state of a network: one term per location. The sorted map
/// makes structural equality canonical, so permuting the parallel
/// composition in the source changes nothing.
pub type NetState = BTreeMap<String, TermState>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Semantics {
    Default,
    Reactive,
}

impl fmt::Display for Semantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Semantics::Default => write!(f, "default"),
            Semantics::Reactive => write!(f, "reactive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Tau,
    Comm {
        sender: String,
        label: String,
        receiver: String,
    },
}

impl Action {
    pub fn is_tau(&self) -> bool {
        matches!(self, Action::Tau)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Tau => write!(f, "tau"),
            Action::Comm { sender, label, receiver } => {
                write!(f, "{sender} -> {receiver}: {label}")
            }
        }
    }
}

/// One enabled move out of a state: the action, the successor, and the
/// locations and instruction occurrences it involves. Silent steps involve
/// one of each, synchronisations two.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub action: Action,
    pub target: NetState,
    pub comp: Vec<String>,
    pub instr: Vec<InstrId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub source: usize,
    pub action: Action,
    pub target: usize,
    pub comp: Vec<String>,
    pub instr: Vec<InstrId>,
}

impl Transition {
    pub fn involves(&self, loc: &str) -> bool {
        self.comp.iter().any(|c| c == loc)
    }
}

/// The reachable fragment of a network's transition graph. State 0 is the
/// initial state; `outgoing[s]` lists indices into `transitions`.
#[derive(Debug, Clone)]
pub struct Lts {
    pub semantics: Semantics,
    pub locations: Vec<String>,
    pub states: Vec<NetState>,
    pub initial: usize,
    pub transitions: Vec<Transition>,
    pub outgoing: Vec<Vec<usize>>,
}

impl Lts {
    pub fn is_terminal(&self, sid: usize) -> bool {
        self.outgoing[sid].is_empty()
    }

    /// All locations have reached `end`.
    pub fn is_successfully_terminated(&self, sid: usize) -> bool {
        self.states[sid].values().all(|t| t.is_end())
    }

    pub fn steps_from(&self, sid: usize) -> impl Iterator<Item = &Transition> {
        self.outgoing[sid].iter().map(|&ti| &self.transitions[ti])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SemanticsError {
    #[error("state space exceeds the cap of {cap} states")]
    StateCapExceeded { cap: usize },
}

pub fn initial_state(net: &Network) -> NetState {
    net.locations
        .iter()
        .map(|(loc, t)| (loc.clone(), TermState::Plain(t.clone())))
        .collect()
}

/// Strip top-level recursion, substituting as the unfolding rule does.
/// Validated threads have non-recursive bodies, so this takes at most a
/// couple of rounds.
fn head(t: &Thread) -> Thread {
    let mut cur = t.clone();
    while let Thread::Rec { var, body, .. } = &cur {
        let unfolded = subst(body, var, &cur);
        cur = unfolded;
    }
    cur
}

fn with(state: &NetState, changes: &[(&str, TermState)]) -> NetState {
    let mut next = state.clone();
    for (loc, term) in changes {
        next.insert((*loc).to_string(), term.clone());
    }
    next
}

fn default_steps(state: &NetState) -> Vec<Step> {
    let mut steps = Vec::new();
    for (loc, term) in state {
        match term {
            TermState::Plain(Thread::Internal(branches)) => {
                for b in branches {
                    let committed = TermState::Committed {
                        target: b.target.clone(),
                        label: b.label.clone(),
                        id: b.id,
                        cont: b.cont.clone(),
                    };
                    steps.push(Step {
                        action: Action::Tau,
                        target: with(state, &[(loc, committed)]),
                        comp: vec![loc.clone()],
                        instr: vec![b.id],
                    });
                }
            }
            TermState::Plain(t @ Thread::Rec { var, id, body }) => {
                let unfolded = subst(body, var, t);
                steps.push(Step {
                    action: Action::Tau,
                    target: with(state, &[(loc, TermState::Plain(unfolded))]),
                    comp: vec![loc.clone()],
                    instr: vec![*id],
                });
            }
            TermState::Committed { target, label, id, cont } => {
                if let Some(TermState::Plain(Thread::External(rbs))) = state.get(target) {
                    for rb in rbs {
                        if rb.source == *loc && rb.label == *label {
                            steps.push(Step {
                                action: Action::Comm {
                                    sender: loc.clone(),
                                    label: label.clone(),
                                    receiver: target.clone(),
                                },
                                target: with(
                                    state,
                                    &[
                                        (loc, TermState::Plain(cont.clone())),
                                        (target, TermState::Plain(rb.cont.clone())),
                                    ],
                                ),
                                comp: vec![loc.clone(), target.clone()],
                                instr: vec![*id, rb.id],
                            });
                        }
                    }
                }
            }
            _ => {}
        }
    }
    steps
}

fn reactive_steps(state: &NetState) -> Vec<Step> {
    let mut steps = Vec::new();
    for (loc, term) in state {
        let sends = match term {
            TermState::Plain(t) => match head(t) {
                Thread::Internal(branches) => branches,
                _ => continue,
            },
            TermState::Committed { target, label, id, cont } => vec![crate::syntax::SendBranch {
                target: target.clone(),
                label: label.clone(),
                id: *id,
                cont: cont.clone(),
            }],
        };
        for b in &sends {
            let Some(TermState::Plain(peer)) = state.get(&b.target) else {
                continue;
            };
            let Thread::External(rbs) = head(peer) else {
                continue;
            };
            for rb in &rbs {
                if rb.source == *loc && rb.label == b.label {
                    steps.push(Step {
                        action: Action::Comm {
                            sender: loc.clone(),
                            label: b.label.clone(),
                            receiver: b.target.clone(),
                        },
                        target: with(
                            state,
                            &[
                                (loc, TermState::Plain(b.cont.clone())),
                                (&b.target, TermState::Plain(rb.cont.clone())),
                            ],
                        ),
                        comp: vec![loc.clone(), b.target.clone()],
                        instr: vec![b.id, rb.id],
                    });
                }
            }
        }
    }
    steps
}

/// All moves enabled in `state`. Duplicate derivations of the same action
/// and successor (for instance two textually equal receive branches) are
/// merged, keeping the first derivation's bookkeeping.
pub fn enabled_transitions(state: &NetState, semantics: Semantics) -> Vec<Step> {
    let raw = match semantics {
        Semantics::Default => default_steps(state),
        Semantics::Reactive => reactive_steps(state),
    };
    let mut seen: Vec<(Action, NetState)> = Vec::new();
    let mut steps = Vec::new();
    for s in raw {
        let key = (s.action.clone(), s.target.clone());
        if !seen.contains(&key) {
            seen.push(key);
            steps.push(s);
        }
    }
    steps
}

pub const DEFAULT_STATE_CAP: usize = 100_000;

/// State cap for graph construction: the `JUSTCHECK_STATE_CAP` environment
/// variable if set, otherwise 100000.
pub fn state_cap() -> usize {
    std::env::var("JUSTCHECK_STATE_CAP")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_STATE_CAP)
}

pub fn build_lts(net: &Network, semantics: Semantics) -> Result<Lts, SemanticsError> {
    build_lts_capped(net, semantics, state_cap())
}

pub fn build_lts_capped(
    net: &Network,
    semantics: Semantics,
    cap: usize,
) -> Result<Lts, SemanticsError> {
    let init = initial_state(net);
    let mut index: HashMap<NetState, usize> = HashMap::new();
    let mut states = vec![init.clone()];
    index.insert(init, 0);
    let mut transitions = Vec::new();
    let mut outgoing: Vec<Vec<usize>> = vec![Vec::new()];
    let mut frontier = VecDeque::from([0usize]);

    while let Some(sid) = frontier.pop_front() {
        for step in enabled_transitions(&states[sid], semantics) {
            let tid = match index.get(&step.target) {
                Some(&tid) => tid,
                None => {
                    if states.len() >= cap {
                        return Err(SemanticsError::StateCapExceeded { cap });
                    }
                    let tid = states.len();
                    index.insert(step.target.clone(), tid);
                    states.push(step.target.clone());
                    outgoing.push(Vec::new());
                    frontier.push_back(tid);
                    tid
                }
            };
            outgoing[sid].push(transitions.len());
            transitions.push(Transition {
                source: sid,
                action: step.action,
                target: tid,
                comp: step.comp,
                instr: step.instr,
            });
        }
    }

    Ok(Lts {
        semantics,
        locations: net.locations.keys().cloned().collect(),
        states,
        initial: 0,
        transitions,
        outgoing,
    })
}

/// Whether no location carries a top-level recursion, i.e. no silent
/// unfolding step applies.
pub fn is_unfolded(state: &NetState) -> bool {
    !state
        .values()
        .any(|t| matches!(t, TermState::Plain(Thread::Rec { .. })))
}

/// Exhaust the recursion-unfolding silent steps. Choice-resolving steps are
/// not taken: their successors carry a committed marker and are not
/// networks.
pub fn unfold_network(state: &NetState) -> NetState {
    state
        .iter()
        .map(|(loc, term)| {
            let term = match term {
                TermState::Plain(t @ Thread::Rec { .. }) => TermState::Plain(head(t)),
                other => other.clone(),
            };
            (loc.clone(), term)
        })
        .collect()
}

/// Locations whose internal choice can fire on every branch: each send has
/// a matching receive branch at its addressee. Matching uses the reactive
/// reading, so recursion on either side is unfolded first.
pub fn ready_locations(state: &NetState) -> Vec<(String, usize)> {
    let u = unfold_network(state);
    let mut out = Vec::new();
    for (loc, term) in &u {
        let TermState::Plain(Thread::Internal(branches)) = term else {
            continue;
        };
        let all_fire = branches.iter().all(|b| match u.get(&b.target) {
            Some(TermState::Plain(t)) => match head(t) {
                Thread::External(rbs) => rbs
                    .iter()
                    .any(|rb| rb.source == *loc && rb.label == b.label),
                _ => false,
            },
            _ => false,
        });
        if all_fire {
            out.push((loc.clone(), branches.len()));
        }
    }
    out
}

/// States reachable by performing exactly the given synchronisations in
/// order, with any number of silent steps in between. Useful for steering
/// onto a specific execution and inspecting where it ends up.
pub fn states_after_comms(lts: &Lts, comms: &[(&str, &str, &str)]) -> Vec<usize> {
    let mut seen = vec![vec![false; comms.len() + 1]; lts.states.len()];
    let mut frontier = VecDeque::from([(lts.initial, 0usize)]);
    seen[lts.initial][0] = true;
    let mut out = Vec::new();
    while let Some((sid, pos)) = frontier.pop_front() {
        if pos == comms.len() && !out.contains(&sid) {
            out.push(sid);
        }
        for t in lts.steps_from(sid) {
            let next_pos = match &t.action {
                Action::Tau => pos,
                Action::Comm { sender, label, receiver } => {
                    if pos < comms.len()
                        && comms[pos] == (sender.as_str(), label.as_str(), receiver.as_str())
                    {
                        pos + 1
                    } else {
                        continue;
                    }
                }
            };
            if !seen[t.target][next_pos] {
                seen[t.target][next_pos] = true;
                frontier.push_back((t.target, next_pos));
            }
        }
    }
    out
}

pub fn lts_to_json(lts: &Lts) -> serde_json::Value {
    serde_json::json!({
        "semantics": lts.semantics.to_string(),
        "initial": lts.initial,
        "states": lts
            .states
            .iter()
            .enumerate()
            .map(|(id, st)| {
                serde_json::json!({
                    "id": id,
                    "threads": st
                        .iter()
                        .map(|(loc, t)| (loc.clone(), serde_json::Value::from(t.to_string())))
                        .collect::<serde_json::Map<_, _>>(),
                })
            })
            .collect::<Vec<_>>(),
        "transitions": lts
            .transitions
            .iter()
            .map(|t| {
                serde_json::json!({
                    "src": t.source,
                    "dst": t.target,
                    "action": t.action.to_string(),
                    "comp": t.comp,
                    "instr": t.instr.iter().map(|i| i.0).collect::<Vec<_>>(),
                })
            })
            .collect::<Vec<_>>(),
    })
}

//! Global protocol types and the typing of networks against them.
//!
//! A global type scripts the conversation from a bird's eye view. Each
//! location sees only its own slice of the script, obtained by projection;
//! a network is well typed when every thread follows its slice, decided by
//! a coinductive judgement over regular trees. Global types also step:
//! their transition relation lets a choice be resolved later than the
//! messages of uninvolved locations, which is what session fidelity
//! exercises transition by transition.

use std::collections::BTreeSet;
use std::collections::HashMap;
use std::collections::HashSet;
use std::collections::VecDeque;
use std::fmt;

use crate::semantics::{build_lts, Action, Semantics, SemanticsError, TermState};
use crate::syntax::{unfold, unfold_g, GBranch, GlobalType, Network, Thread};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TypeError {
    #[error("the deadlock marker is a synthesis diagnostic, not a typable protocol")]
    DeadlockInType,
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

/// A location's slice of a global type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ProjType {
    End,
    /// Choice between send prefixes, mirroring a thread's internal choice.
    Internal(Vec<ProjBranch>),
    /// A single receive prefix.
    In {
        source: String,
        label: String,
        cont: Box<ProjType>,
    },
    /// All operands must be followed at once; arises when a choice the
    /// location does not lead gives it several possible slices.
    Merge(Vec<ProjType>),
    Var(String),
    Rec { var: String, body: Box<ProjType> },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProjBranch {
    pub target: String,
    pub label: String,
    pub cont: ProjType,
}

fn fmt_proj(t: &ProjType, seq: bool, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match t {
        ProjType::End => write!(f, "end"),
        ProjType::Var(x) => write!(f, "{x}"),
        ProjType::Rec { var, body } => {
            if seq {
                write!(f, "(rec {var}. ")?;
                fmt_proj(body, false, f)?;
                write!(f, ")")
            } else {
                write!(f, "rec {var}. ")?;
                fmt_proj(body, false, f)
            }
        }
        ProjType::Internal(branches) => {
            let wrap = seq && branches.len() > 1;
            if wrap {
                write!(f, "(")?;
            }
            for (i, b) in branches.iter().enumerate() {
                if i > 0 {
                    write!(f, " (+) ")?;
                }
                write!(f, "{}!{}; ", b.target, b.label)?;
                fmt_proj(&b.cont, true, f)?;
            }
            if wrap {
                write!(f, ")")?;
            }
            Ok(())
        }
        ProjType::In { source, label, cont } => {
            write!(f, "{source}?{label}; ")?;
            fmt_proj(cont, true, f)
        }
        ProjType::Merge(ops) => {
            let wrap = seq;
            if wrap {
                write!(f, "(")?;
            }
            for (i, op) in ops.iter().enumerate() {
                if i > 0 {
                    write!(f, " /\\ ")?;
                }
                fmt_proj(op, true, f)?;
            }
            if wrap {
                write!(f, ")")?;
            }
            Ok(())
        }
    }
}

impl fmt::Display for ProjType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_proj(self, false, f)
    }
}

fn pt(g: &GlobalType) -> BTreeSet<String> {
    match g {
        GlobalType::End | GlobalType::Deadlock | GlobalType::Var(_) => BTreeSet::new(),
        GlobalType::Rec { body, .. } => pt(body),
        GlobalType::Comm { sender, branches } => {
            let mut out = BTreeSet::from([sender.clone()]);
            for b in branches {
                out.insert(b.receiver.clone());
                out.extend(pt(&b.cont));
            }
            out
        }
    }
}

/// The locations a global type talks about.
pub fn participants(g: &GlobalType) -> Result<BTreeSet<String>, TypeError> {
    if g.mentions_deadlock() {
        return Err(TypeError::DeadlockInType);
    }
    Ok(pt(g))
}

fn proj(g: &GlobalType, r: &str) -> ProjType {
    match g {
        GlobalType::End | GlobalType::Deadlock => ProjType::End,
        GlobalType::Var(x) => ProjType::Var(x.clone()),
        GlobalType::Rec { var, body } => {
            // A recursion the location plays no part in projects to end,
            // but only when the subterm stands on its own; an open body
            // still owes its context the variables it mentions.
            if !pt(body).contains(r) && g.is_closed() {
                ProjType::End
            } else {
                ProjType::Rec {
                    var: var.clone(),
                    body: Box::new(proj(body, r)),
                }
            }
        }
        GlobalType::Comm { sender, branches } => {
            if sender == r {
                ProjType::Internal(
                    branches
                        .iter()
                        .map(|b| ProjBranch {
                            target: b.receiver.clone(),
                            label: b.label.clone(),
                            cont: proj(&b.cont, r),
                        })
                        .collect(),
                )
            } else {
                let ops: Vec<ProjType> = branches
                    .iter()
                    .map(|b| {
                        if b.receiver == r {
                            ProjType::In {
                                source: sender.clone(),
                                label: b.label.clone(),
                                cont: Box::new(proj(&b.cont, r)),
                            }
                        } else {
                            proj(&b.cont, r)
                        }
                    })
                    .collect();
                let mut ops = ops;
                if ops.len() == 1 {
                    ops.pop().unwrap()
                } else {
                    ProjType::Merge(ops)
                }
            }
        }
    }
}

pub fn project(g: &GlobalType, r: &str) -> Result<ProjType, TypeError> {
    if g.mentions_deadlock() {
        return Err(TypeError::DeadlockInType);
    }
    Ok(proj(g, r))
}

pub fn subst_p(t: &ProjType, var: &str, rep: &ProjType) -> ProjType {
    match t {
        ProjType::End => ProjType::End,
        ProjType::Var(x) => {
            if x == var {
                rep.clone()
            } else {
                t.clone()
            }
        }
        ProjType::Rec { var: v, body } => {
            if v == var {
                t.clone()
            } else {
                ProjType::Rec {
                    var: v.clone(),
                    body: Box::new(subst_p(body, var, rep)),
                }
            }
        }
        ProjType::In { source, label, cont } => ProjType::In {
            source: source.clone(),
            label: label.clone(),
            cont: Box::new(subst_p(cont, var, rep)),
        },
        ProjType::Internal(bs) => ProjType::Internal(
            bs.iter()
                .map(|b| ProjBranch {
                    target: b.target.clone(),
                    label: b.label.clone(),
                    cont: subst_p(&b.cont, var, rep),
                })
                .collect(),
        ),
        ProjType::Merge(ops) => {
            ProjType::Merge(ops.iter().map(|o| subst_p(o, var, rep)).collect())
        }
    }
}

pub fn unfold_p(t: &ProjType) -> ProjType {
    match t {
        ProjType::Rec { var, body } => subst_p(body, var, t),
        _ => t.clone(),
    }
}

pub fn proj_free_vars(t: &ProjType) -> BTreeSet<String> {
    match t {
        ProjType::End => BTreeSet::new(),
        ProjType::Var(x) => BTreeSet::from([x.clone()]),
        ProjType::Rec { var, body } => {
            let mut fv = proj_free_vars(body);
            fv.remove(var);
            fv
        }
        ProjType::In { cont, .. } => proj_free_vars(cont),
        ProjType::Internal(bs) => bs.iter().flat_map(|b| proj_free_vars(&b.cont)).collect(),
        ProjType::Merge(ops) => ops.iter().flat_map(proj_free_vars).collect(),
    }
}

/// Every recursion variable occurrence sits under at least one message
/// prefix. A merge does not count as a prefix, so a variable directly
/// under one is exposed.
pub fn proj_guarded(t: &ProjType) -> bool {
    fn var_ok(var: &str, t: &ProjType, shielded: bool) -> bool {
        match t {
            ProjType::Var(x) => x != var || shielded,
            ProjType::End => true,
            ProjType::In { cont, .. } => var_ok(var, cont, true),
            ProjType::Internal(bs) => bs.iter().all(|b| var_ok(var, &b.cont, true)),
            ProjType::Merge(ops) => ops.iter().all(|o| var_ok(var, o, shielded)),
            ProjType::Rec { var: v, body } => v == var || var_ok(var, body, shielded),
        }
    }
    match t {
        ProjType::End | ProjType::Var(_) => true,
        ProjType::In { cont, .. } => proj_guarded(cont),
        ProjType::Internal(bs) => bs.iter().all(|b| proj_guarded(&b.cont)),
        ProjType::Merge(ops) => ops.iter().all(proj_guarded),
        ProjType::Rec { var, body } => var_ok(var, body, false) && proj_guarded(body),
    }
}

/// All slices of the type are guarded.
pub fn projection_guarded(g: &GlobalType) -> Result<bool, TypeError> {
    let parts = participants(g)?;
    Ok(parts.iter().all(|r| proj_guarded(&proj(g, r))))
}

/// Read a thread verbatim as its own slice. Only single-branch receives
/// translate, since a slice never offers an input choice directly.
pub fn thread_as_projection(t: &Thread) -> Option<ProjType> {
    match t {
        Thread::End => Some(ProjType::End),
        Thread::Var(x) => Some(ProjType::Var(x.clone())),
        Thread::Rec { var, body, .. } => Some(ProjType::Rec {
            var: var.clone(),
            body: Box::new(thread_as_projection(body)?),
        }),
        Thread::Internal(bs) => {
            let mut out = Vec::new();
            for b in bs {
                out.push(ProjBranch {
                    target: b.target.clone(),
                    label: b.label.clone(),
                    cont: thread_as_projection(&b.cont)?,
                });
            }
            Some(ProjType::Internal(out))
        }
        Thread::External(bs) => match bs.as_slice() {
            [b] => Some(ProjType::In {
                source: b.source.clone(),
                label: b.label.clone(),
                cont: Box::new(thread_as_projection(&b.cont)?),
            }),
            _ => None,
        },
    }
}

type Pair = (TermState, ProjType);

/// The premises justifying a pair, as alternatives of conjunctions. No
/// alternative means no rule applies.
fn expand(p: &TermState, t: &ProjType) -> Vec<Vec<Pair>> {
    if let TermState::Plain(th @ Thread::Rec { .. }) = p {
        return vec![vec![(TermState::Plain(unfold(th)), t.clone())]];
    }
    if let ProjType::Rec { .. } = t {
        return vec![vec![(p.clone(), unfold_p(t))]];
    }
    if let ProjType::Merge(ops) = t {
        return vec![ops.iter().map(|o| (p.clone(), o.clone())).collect()];
    }
    match (p, t) {
        (TermState::Plain(Thread::End), ProjType::End) => vec![vec![]],
        (TermState::Plain(Thread::External(bs)), ProjType::In { source, label, cont }) => bs
            .iter()
            .filter(|b| b.source == *source && b.label == *label)
            .map(|b| vec![(TermState::Plain(b.cont.clone()), (**cont).clone())])
            .collect(),
        (TermState::Plain(Thread::Internal(bs)), ProjType::Internal(ts)) => {
            // Each send branch picks a type branch with its target and
            // label; picks are independent, so alternatives multiply out.
            let mut alts: Vec<Vec<Pair>> = vec![vec![]];
            for b in bs {
                let picks: Vec<&ProjBranch> = ts
                    .iter()
                    .filter(|s| s.target == b.target && s.label == b.label)
                    .collect();
                if picks.is_empty() {
                    return vec![];
                }
                let mut next = Vec::new();
                for alt in &alts {
                    for pick in &picks {
                        let mut ext = alt.clone();
                        ext.push((TermState::Plain(b.cont.clone()), pick.cont.clone()));
                        next.push(ext);
                    }
                }
                alts = next;
            }
            alts
        }
        (TermState::Committed { target, label, cont, .. }, ProjType::Internal(ts)) => ts
            .iter()
            .filter(|s| s.target == *target && s.label == *label)
            .map(|s| vec![(TermState::Plain(cont.clone()), s.cont.clone())])
            .collect(),
        _ => vec![],
    }
}

fn rule_name(p: &TermState, t: &ProjType) -> &'static str {
    if matches!(p, TermState::Plain(Thread::Rec { .. })) {
        return "unfold-left";
    }
    match t {
        ProjType::Rec { .. } => "unfold-right",
        ProjType::Merge(_) => "merge",
        ProjType::End => "end",
        ProjType::In { .. } => "in",
        ProjType::Internal(_) => match p {
            TermState::Committed { .. } => "commit",
            _ => "out",
        },
        ProjType::Var(_) => "var",
    }
}

struct JudgeRun {
    pairs: Vec<Pair>,
    exp: Vec<Vec<Vec<usize>>>,
    val: Vec<bool>,
}

/// Greatest fixpoint over the finite set of pairs reachable from the
/// root: assume everything, then strike out pairs no rule sustains until
/// nothing changes.
fn run_judge(root: Pair) -> JudgeRun {
    let mut index: HashMap<Pair, usize> = HashMap::new();
    let mut pairs: Vec<Pair> = Vec::new();
    let mut raw: Vec<Vec<Vec<Pair>>> = Vec::new();
    let mut queue = VecDeque::from([root]);
    while let Some(pair) = queue.pop_front() {
        if index.contains_key(&pair) {
            continue;
        }
        index.insert(pair.clone(), pairs.len());
        let e = expand(&pair.0, &pair.1);
        for alt in &e {
            for child in alt {
                queue.push_back(child.clone());
            }
        }
        pairs.push(pair);
        raw.push(e);
    }
    let exp: Vec<Vec<Vec<usize>>> = raw
        .iter()
        .map(|alts| {
            alts.iter()
                .map(|alt| alt.iter().map(|c| index[c]).collect())
                .collect()
        })
        .collect();
    let mut val = vec![true; pairs.len()];
    loop {
        let mut changed = false;
        for i in 0..pairs.len() {
            let now = exp[i]
                .iter()
                .any(|alt| alt.iter().all(|&j| val[j]));
            if now != val[i] {
                val[i] = now;
                changed = true;
            }
        }
        if !changed {
            return JudgeRun { pairs, exp, val };
        }
    }
}

pub fn judge_term(term: &TermState, ty: &ProjType) -> bool {
    let run = run_judge((term.clone(), ty.clone()));
    run.val[0]
}

/// Does the thread follow the slice?
pub fn judge(thread: &Thread, ty: &ProjType) -> bool {
    judge_term(&TermState::Plain(thread.clone()), ty)
}

/// The judgement's settled pair table, for inspection: every pair visited,
/// the rule applied, its verdict, and the premise pairs per alternative.
pub fn judge_proof_json(thread: &Thread, ty: &ProjType) -> serde_json::Value {
    let run = run_judge((TermState::Plain(thread.clone()), ty.clone()));
    let entries: Vec<serde_json::Value> = run
        .pairs
        .iter()
        .enumerate()
        .map(|(i, (p, t))| {
            serde_json::json!({
                "id": i,
                "term": p.to_string(),
                "type": t.to_string(),
                "rule": rule_name(p, t),
                "holds": run.val[i],
                "premises": &run.exp[i],
            })
        })
        .collect();
    serde_json::json!({ "root": 0, "holds": run.val[0], "pairs": entries })
}

/// Every participant of the type has a thread and every thread follows
/// its slice.
pub fn well_typed(net: &Network, g: &GlobalType) -> Result<bool, TypeError> {
    let parts = participants(g)?;
    if !parts.iter().all(|p| net.locations.contains_key(p)) {
        return Ok(false);
    }
    for (loc, thread) in &net.locations {
        if !judge(thread, &proj(g, loc)) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Well typed against a type all of whose slices are guarded.
pub fn guardedly_well_typed(net: &Network, g: &GlobalType) -> Result<bool, TypeError> {
    Ok(well_typed(net, g)? && projection_guarded(g)?)
}

/// One step of a global type: sender, label, receiver, successor.
pub type GStep = (String, String, String, GlobalType);

/// The transition relation of global types. Besides resolving the leading
/// choice, a step by locations foreign to that choice may fire first,
/// narrowing the choice to the branches that admit it.
pub fn gtype_step(g: &GlobalType) -> Vec<GStep> {
    // Close the term under unfolding and branch continuations; these are
    // the only terms whose steps feed other steps.
    let mut universe: Vec<GlobalType> = Vec::new();
    let mut stack = vec![g.clone()];
    while let Some(h) = stack.pop() {
        if universe.contains(&h) {
            continue;
        }
        match &h {
            GlobalType::Rec { .. } => stack.push(unfold_g(&h)),
            GlobalType::Comm { branches, .. } => {
                for b in branches {
                    stack.push(b.cont.clone());
                }
            }
            _ => {}
        }
        universe.push(h);
    }
    let pos = |h: &GlobalType| universe.iter().position(|u| u == h).unwrap();

    let mut table: Vec<Vec<GStep>> = vec![Vec::new(); universe.len()];
    loop {
        let mut changed = false;
        for i in 0..universe.len() {
            let fresh = match &universe[i] {
                GlobalType::Rec { .. } => table[pos(&unfold_g(&universe[i]))].clone(),
                GlobalType::Comm { sender, branches } => {
                    let mut out: Vec<GStep> = Vec::new();
                    for b in branches {
                        out.push((
                            sender.clone(),
                            b.label.clone(),
                            b.receiver.clone(),
                            b.cont.clone(),
                        ));
                    }
                    let cont_steps: Vec<&Vec<GStep>> =
                        branches.iter().map(|b| &table[pos(&b.cont)]).collect();
                    let mut actions: Vec<(String, String, String)> = Vec::new();
                    for steps in &cont_steps {
                        for (r, m, s, _) in steps.iter() {
                            let a = (r.clone(), m.clone(), s.clone());
                            if r != sender && s != sender && !actions.contains(&a) {
                                actions.push(a);
                            }
                        }
                    }
                    for (r, m, s) in actions {
                        let eligible: Vec<usize> = (0..branches.len())
                            .filter(|&k| {
                                branches[k].receiver != r
                                    && branches[k].receiver != s
                                    && cont_steps[k].iter().any(|(a, b2, c, _)| {
                                        *a == r && *b2 == m && *c == s
                                    })
                            })
                            .collect();
                        for mask in 1u32..(1 << eligible.len()) {
                            let retained: Vec<usize> = eligible
                                .iter()
                                .enumerate()
                                .filter(|(bit, _)| mask & (1 << bit) != 0)
                                .map(|(_, &k)| k)
                                .collect();
                            let mut combos: Vec<Vec<GBranch>> = vec![Vec::new()];
                            for &k in &retained {
                                let succs: Vec<&GlobalType> = cont_steps[k]
                                    .iter()
                                    .filter(|(a, b2, c, _)| *a == r && *b2 == m && *c == s)
                                    .map(|(_, _, _, g2)| g2)
                                    .collect();
                                let mut next = Vec::new();
                                for combo in &combos {
                                    for succ in &succs {
                                        let mut ext = combo.clone();
                                        ext.push(GBranch {
                                            receiver: branches[k].receiver.clone(),
                                            label: branches[k].label.clone(),
                                            cont: (*succ).clone(),
                                        });
                                        next.push(ext);
                                    }
                                }
                                combos = next;
                            }
                            for combo in combos {
                                out.push((
                                    r.clone(),
                                    m.clone(),
                                    s.clone(),
                                    GlobalType::Comm {
                                        sender: sender.clone(),
                                        branches: combo,
                                    },
                                ));
                            }
                        }
                    }
                    out
                }
                _ => Vec::new(),
            };
            for step in fresh {
                if !table[i].contains(&step) {
                    table[i].push(step);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    table[pos(g)].clone()
}

#[derive(Debug, Clone)]
pub struct FidelityFailure {
    pub state: usize,
    pub transition: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct FidelityReport {
    pub transitions_checked: usize,
    pub failure: Option<FidelityFailure>,
}

impl FidelityReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

fn state_typed(state: &crate::semantics::NetState, g: &GlobalType) -> bool {
    state
        .iter()
        .all(|(loc, term)| judge_term(term, &proj(g, loc)))
}

/// Walk the default-semantics graph and confirm that the type can follow
/// it: silent steps must leave the state typed by the same type, and each
/// synchronisation must match some step of the type whose successor types
/// the new state with guarded slices. Each transition is verified once,
/// under the first type that reaches its source; callers are expected to
/// supply a race-free, guardedly well-typed pair.
pub fn session_fidelity_check(
    net: &Network,
    g: &GlobalType,
) -> Result<FidelityReport, TypeError> {
    if g.mentions_deadlock() {
        return Err(TypeError::DeadlockInType);
    }
    let lts = build_lts(net, Semantics::Default)?;
    if !state_typed(&lts.states[lts.initial], g) {
        return Ok(FidelityReport {
            transitions_checked: 0,
            failure: Some(FidelityFailure {
                state: lts.initial,
                transition: None,
                reason: "initial state is not typed by the given type".into(),
            }),
        });
    }
    let mut done: HashSet<usize> = HashSet::new();
    let mut queue: VecDeque<(usize, GlobalType)> = VecDeque::from([(lts.initial, g.clone())]);
    let mut checked = 0usize;
    while let Some((sid, ty)) = queue.pop_front() {
        for &tid in &lts.outgoing[sid] {
            if !done.insert(tid) {
                continue;
            }
            checked += 1;
            let t = &lts.transitions[tid];
            match &t.action {
                Action::Tau => {
                    if !state_typed(&lts.states[t.target], &ty) {
                        return Ok(FidelityReport {
                            transitions_checked: checked,
                            failure: Some(FidelityFailure {
                                state: sid,
                                transition: Some(tid),
                                reason: "silent step broke the typing".into(),
                            }),
                        });
                    }
                    queue.push_back((t.target, ty.clone()));
                }
                Action::Comm { sender, label, receiver } => {
                    let next = gtype_step(&ty).into_iter().find(|(r, m, s, g2)| {
                        r == sender
                            && m == label
                            && s == receiver
                            && state_typed(&lts.states[t.target], g2)
                            && projection_guarded(g2).unwrap_or(false)
                    });
                    match next {
                        Some((_, _, _, g2)) => queue.push_back((t.target, g2)),
                        None => {
                            return Ok(FidelityReport {
                                transitions_checked: checked,
                                failure: Some(FidelityFailure {
                                    state: sid,
                                    transition: Some(tid),
                                    reason: format!(
                                        "no type step matches {sender} -> {receiver}: {label} with a typed successor"
                                    ),
                                }),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(FidelityReport {
        transitions_checked: checked,
        failure: None,
    })
}

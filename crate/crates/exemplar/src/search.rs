//! Alternating-variable local search over instance models.
//!
//! The candidate solution is an object graph; the search flattens it into a
//! vector of variables — one per concrete-class population, one per
//! association end per object, one per tweakable attribute slot — and
//! optimizes the variables one at a time against the branch-distance
//! objective from [`crate::fitness`]. Numeric and structural variables go
//! through *iterated pattern search*: two one-step exploratory probes pick a
//! direction, then the step size doubles while the objective keeps strictly
//! improving, falling back to exploration after an overshoot. Nominal
//! variables (booleans, enums, strings) simply try a bounded set of
//! alternatives and keep the best.
//!
//! Because the structure itself evolves (objects appear and disappear), the
//! vector is rebuilt after every variable; a full pass over it is one
//! *search iteration*. A pass that improves nothing while the instance is
//! still invalid triggers a restart from a fresh random instance.
//!
//! In hybrid mode the search is fenced in by [`AllowedFeatures`]: it may
//! only instantiate classes, rewire associations, and tweak attributes that
//! appear under `search`- or `both`-labeled constraint nodes. Attributes
//! referenced only by SMT-labeled nodes belong to the solver — they receive
//! random initial values when an object is created but are never moved by
//! search. The baseline mode lifts the fence and lets search touch
//! everything.

use std::collections::BTreeSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::eval::Evaluator;
use crate::fitness::distance;
use crate::label::LabeledOps;
use crate::model::{AttrDecl, AttrType, DataModel, InstanceModel, Link, ObjectId, Value};
use crate::ocl::ast::{Expr, ExprKind, Label, Type};
use crate::ocl::types::OpTable;

/// Safety valve: accepted moves per variable per pass. Pattern moves double
/// in amplitude, so any realistic optimum is reached long before this; the
/// cap only stops adversarial objectives that improve forever without
/// reaching zero.
const MOVE_CAP: usize = 256;

/// Tunables for one search run.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Upper bound on full passes over the variable vector.
    pub max_iterations: usize,
    /// Seed for every random choice the run makes.
    pub seed: u64,
    /// Nominal variables with more alternatives than this get a random
    /// sample of this size (without replacement) instead of the full domain.
    pub nominal_sample_size: usize,
    /// Abandon the instance for a fresh random one when a full pass brings
    /// no improvement and the instance is still invalid.
    pub restart_on_plateau: bool,
    /// Per-class object-count bound for freshly created random instances
    /// (initial instance and restarts). Search moves themselves are not
    /// capped: a constraint may legitimately demand more objects.
    pub class_cap: u32,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            max_iterations: 1000,
            seed: 0,
            nominal_sample_size: 10,
            restart_on_plateau: true,
            class_cap: 30,
        }
    }
}

/// The model elements search may manipulate: concrete classes whose
/// populations may grow or shrink, associations whose links may be rewired,
/// and `(declaring class, attribute)` slots that may be tweaked.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AllowedFeatures {
    pub classes: BTreeSet<String>,
    pub assocs: BTreeSet<String>,
    pub attrs: BTreeSet<(String, String)>,
}

impl AllowedFeatures {
    /// Baseline mode: everything is fair game.
    pub fn everything(m: &DataModel) -> AllowedFeatures {
        let mut out = AllowedFeatures::default();
        for c in &m.classes {
            if !c.is_abstract {
                out.classes.insert(c.name.clone());
            }
            for a in &c.attributes {
                if !a.is_static {
                    out.attrs.insert((c.name.clone(), a.name.clone()));
                }
            }
        }
        for a in &m.associations {
            out.assocs.insert(a.name.clone());
        }
        out
    }

    /// Hybrid mode: exactly the element types referenced by `search`- or
    /// `both`-labeled nodes of the labeled constraint or of a labeled
    /// operation body. Class references close over concrete subclasses
    /// (instantiating an abstract class means instantiating one of them).
    pub fn from_labels(m: &DataModel, root: &Expr, labeled: &LabeledOps) -> AllowedFeatures {
        let mut out = AllowedFeatures::default();
        let mut collect = |e: &Expr| {
            e.walk(&mut |n| {
                if !matches!(n.label, Some(Label::Search | Label::Both)) {
                    return;
                }
                match &n.kind {
                    ExprKind::AllInstances { class } => add_class(m, &mut out.classes, class),
                    ExprKind::TypeCheckOp { ty_name, .. } => add_class(m, &mut out.classes, ty_name),
                    ExprKind::Nav { recv, role } => {
                        if let Some(c) = class_of(&recv.ty) {
                            if let Some((a, far, _)) = m.navigation(c, role) {
                                out.assocs.insert(a.name.clone());
                                add_class(m, &mut out.classes, &far.class);
                            }
                        }
                    }
                    ExprKind::Attr { recv, attr } => {
                        if let Some(c) = class_of(&recv.ty) {
                            if let Some(d) = declaring_class(m, c, attr) {
                                out.attrs.insert((d, attr.clone()));
                            }
                        }
                    }
                    _ => {}
                }
            });
        };
        collect(root);
        for def in labeled.smt.ops.values() {
            collect(&def.body);
        }
        for def in labeled.search.ops.values() {
            collect(&def.body);
        }
        out
    }
}

fn add_class(m: &DataModel, set: &mut BTreeSet<String>, name: &str) {
    for c in m.concrete_subclasses(name) {
        set.insert(c.name.clone());
    }
}

/// The class name carried by an object- or collection-of-objects type.
fn class_of(ty: &Type) -> Option<&str> {
    match ty {
        Type::Class(c) => Some(c),
        Type::Collection(_, inner) => match inner.as_ref() {
            Type::Class(c) => Some(c),
            _ => None,
        },
        _ => None,
    }
}

/// The class along `class`'s inheritance chain that declares `attr`
/// (non-static attributes only).
fn declaring_class(m: &DataModel, class: &str, attr: &str) -> Option<String> {
    chain(m, class)
        .into_iter()
        .find(|c| c.attributes.iter().any(|a| a.name == attr && !a.is_static))
        .map(|c| c.name.clone())
}

/// Inheritance chain of `class`, root-most ancestor first.
fn chain<'m>(m: &'m DataModel, class: &str) -> Vec<&'m crate::model::ClassDecl> {
    let mut out = Vec::new();
    let mut cur = Some(class.to_string());
    while let Some(name) = cur {
        match m.class(&name) {
            Some(c) => {
                out.push(c);
                cur = c.superclass.clone();
            }
            None => break,
        }
        if out.len() > m.classes.len() {
            break; // defensive: inheritance cycle
        }
    }
    out.reverse();
    out
}

/// Non-static attributes visible on `class`, with their declaring class,
/// inherited ones first.
fn attrs_of<'m>(m: &'m DataModel, class: &str) -> Vec<(&'m str, &'m AttrDecl)> {
    chain(m, class)
        .into_iter()
        .flat_map(|c| {
            c.attributes
                .iter()
                .filter(|a| !a.is_static)
                .map(move |a| (c.name.as_str(), a))
        })
        .collect()
}

/// One coordinate of the search vector.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum SearchVar {
    /// The population of one concrete class, explored by adding or
    /// deleting objects.
    Objects { class: String },
    /// The links of one association at one object, explored by adding or
    /// deleting links; `far_is_b` says which end the partners live on.
    Links { obj: ObjectId, assoc: String, far_is_b: bool },
    /// One attribute slot of one object.
    Slot { obj: ObjectId, attr: String },
}

/// Flatten the current instance into the variable vector: class populations
/// first (alphabetical), then per object (in id order) its link ends and
/// its tweakable attribute slots.
pub fn build_vector(m: &DataModel, inst: &InstanceModel, allowed: &AllowedFeatures) -> Vec<SearchVar> {
    let mut v: Vec<SearchVar> =
        allowed.classes.iter().map(|c| SearchVar::Objects { class: c.clone() }).collect();
    for o in &inst.objects {
        for name in &allowed.assocs {
            let Some(a) = m.association(name) else { continue };
            if m.conforms_class(&o.class, &a.end_a.class) {
                v.push(SearchVar::Links { obj: o.id.clone(), assoc: name.clone(), far_is_b: true });
            }
            if m.conforms_class(&o.class, &a.end_b.class) {
                v.push(SearchVar::Links { obj: o.id.clone(), assoc: name.clone(), far_is_b: false });
            }
        }
        for (declaring, a) in attrs_of(m, &o.class) {
            if allowed.attrs.contains(&(declaring.to_string(), a.name.clone())) {
                v.push(SearchVar::Slot { obj: o.id.clone(), attr: a.name.clone() });
            }
        }
    }
    v
}

/// Direction of a non-nominal move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    Up,
    Down,
}

fn signed(dir: Dir, amp: u64) -> f64 {
    match dir {
        Dir::Up => amp as f64,
        Dir::Down => -(amp as f64),
    }
}

/// One search run: owns the RNG and the feature fence, borrows the model
/// and the labeled constraint.
pub struct Searcher<'a> {
    m: &'a DataModel,
    ops: &'a OpTable,
    root: &'a Expr,
    allowed: AllowedFeatures,
    cfg: SearchConfig,
    rng: ChaCha8Rng,
    /// Fresh instances created after plateaus, for reports.
    pub restarts: usize,
}

impl<'a> Searcher<'a> {
    pub fn new(
        m: &'a DataModel,
        ops: &'a OpTable,
        root: &'a Expr,
        allowed: AllowedFeatures,
        cfg: SearchConfig,
    ) -> Searcher<'a> {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Searcher { m, ops, root, allowed, cfg, rng, restarts: 0 }
    }

    /// Raw branch distance of the constraint on `inst`; zero means valid.
    pub fn objective(&self, inst: &InstanceModel) -> f64 {
        distance(&Evaluator::new(self.m, self.ops, inst), self.root).raw
    }

    /// A fresh random instance: a few objects per allowed class (within the
    /// configured cap), coin-flip links, random attribute values, and a
    /// greedy pass that links objects up to the lower multiplicity bounds
    /// of their association ends (creating partners when none exist).
    /// Without that pass, restarts on models with mandatory ends would
    /// almost always begin deep in an infeasible region.
    pub fn random_instance(&mut self) -> InstanceModel {
        let mut inst = InstanceModel::new();
        let classes: Vec<String> = self.allowed.classes.iter().cloned().collect();
        for class in &classes {
            let n = self.rng.gen_range(0..=self.cfg.class_cap.min(2));
            for _ in 0..n {
                let id = inst.create_object(self.m, class);
                self.randomize_attrs(&mut inst, &id);
            }
        }
        let assocs: Vec<String> = self.allowed.assocs.iter().cloned().collect();
        for name in &assocs {
            let Some(a) = self.m.association(name) else { continue };
            for src in inst.objects_of(self.m, &a.end_a.class.clone()) {
                if self.rng.gen_bool(0.5) {
                    self.add_random_link(&mut inst, &src, name, true, false);
                }
            }
        }
        self.satisfy_lower_bounds(&mut inst);
        inst
    }

    /// For every association end with a lower bound, link each deficient
    /// object to random free partners, creating partner objects (within the
    /// cap) when no free one is available.
    fn satisfy_lower_bounds(&mut self, inst: &mut InstanceModel) {
        let assocs: Vec<String> = self.allowed.assocs.iter().cloned().collect();
        for name in &assocs {
            let Some(a) = self.m.association(name) else { continue };
            for far_is_b in [true, false] {
                let (near, far) = if far_is_b { (&a.end_a, &a.end_b) } else { (&a.end_b, &a.end_a) };
                let (near_class, far_class, need) = (near.class.clone(), far.class.clone(), far.lower);
                if need == 0 {
                    continue;
                }
                for obj in inst.objects_of(self.m, &near_class) {
                    for _ in 0..need {
                        let a = self.m.association(name).expect("association exists");
                        if inst.navigate(a, far_is_b, &obj).len() as u32 >= need {
                            break;
                        }
                        if !self.add_random_link(inst, &obj, name, far_is_b, true)
                            && !(self.create_partner(inst, &far_class)
                                && self.add_random_link(inst, &obj, name, far_is_b, true))
                        {
                            break;
                        }
                    }
                }
            }
        }
    }

    /// Create one object of a random allowed concrete subclass of `class`,
    /// respecting the per-class cap. Returns false when no subclass has
    /// room.
    fn create_partner(&mut self, inst: &mut InstanceModel, class: &str) -> bool {
        let subs: Vec<String> = self
            .m
            .concrete_subclasses(class)
            .into_iter()
            .map(|c| c.name.clone())
            .filter(|n| {
                self.allowed.classes.contains(n)
                    && (inst.objects.iter().filter(|o| &o.class == n).count() as u32)
                        < self.cfg.class_cap
            })
            .collect();
        if subs.is_empty() {
            return false;
        }
        let class = subs[self.rng.gen_range(0..subs.len())].clone();
        let id = inst.create_object(self.m, &class);
        self.randomize_attrs(inst, &id);
        true
    }

    /// One full pass over the variable vector. The vector is rebuilt after
    /// every variable so structural changes show up immediately; each
    /// variable is optimized at most once per pass. Returns whether the
    /// pass improved the objective.
    pub fn iteration(&mut self, inst: &mut InstanceModel) -> bool {
        let start = self.objective(inst);
        let mut best = start;
        let mut done: BTreeSet<SearchVar> = BTreeSet::new();
        while best > 0.0 {
            let vector = build_vector(self.m, inst, &self.allowed);
            let Some(var) = vector.into_iter().find(|v| !done.contains(v)) else { break };
            done.insert(var.clone());
            self.optimize(inst, &mut best, &var);
        }
        best < start
    }

    /// The plateau heuristic: a pass with no improvement on a still-invalid
    /// instance abandons it for a fresh random one. Returns whether a
    /// restart happened.
    pub fn restart_if_stuck(&mut self, inst: &mut InstanceModel, improved: bool) -> bool {
        if !self.cfg.restart_on_plateau || improved || self.objective(inst) == 0.0 {
            return false;
        }
        *inst = self.random_instance();
        self.restarts += 1;
        true
    }

    fn optimize(&mut self, inst: &mut InstanceModel, best: &mut f64, var: &SearchVar) {
        match var {
            SearchVar::Objects { class } => {
                let class = class.clone();
                self.ips(inst, best, |s, cur, dir, k| s.object_move(cur, &class, dir, k));
            }
            SearchVar::Links { obj, assoc, far_is_b } => {
                let (obj, assoc, far_is_b) = (obj.clone(), assoc.clone(), *far_is_b);
                self.ips(inst, best, |s, cur, dir, k| s.link_move(cur, &obj, &assoc, far_is_b, dir, k));
            }
            SearchVar::Slot { obj, attr } => {
                let Some(o) = inst.object(obj) else { return };
                let Some(decl) = self.m.attribute(&o.class, attr) else { return };
                let (obj, attr) = (obj.clone(), attr.clone());
                match decl.ty.clone() {
                    AttrType::Integer => {
                        self.ips(inst, best, |s, cur, dir, k| s.int_move(cur, &obj, &attr, dir, k));
                    }
                    AttrType::Real => {
                        self.ips(inst, best, |s, cur, dir, k| s.real_move(cur, &obj, &attr, dir, k));
                    }
                    AttrType::Boolean => {
                        let cur = inst.object(&obj).and_then(|o| o.attrs.get(&attr)).cloned();
                        let flipped = !matches!(cur, Some(Value::Boolean(true)));
                        self.try_alternatives(inst, best, &obj, &attr, vec![Value::Boolean(flipped)]);
                    }
                    AttrType::Enum(name) => {
                        let cur = inst.object(&obj).and_then(|o| o.attrs.get(&attr)).cloned();
                        let alts = self.enum_alternatives(&name, cur.as_ref());
                        self.try_alternatives(inst, best, &obj, &attr, alts);
                    }
                    AttrType::String => {
                        let alts = (0..self.cfg.nominal_sample_size)
                            .map(|_| self.random_value(&AttrType::String))
                            .collect();
                        self.try_alternatives(inst, best, &obj, &attr, alts);
                    }
                }
            }
        }
    }

    /// Iterated pattern search over one variable. `mover` builds a trial
    /// instance for a signed amplitude, or `None` when the move is
    /// unavailable (deleting from an empty set, arithmetic overflow). A
    /// move is accepted only when it strictly improves the objective.
    /// Returns the log of applied moves `(signed amplitude, accepted)` for
    /// instrumentation.
    fn ips<F>(&mut self, inst: &mut InstanceModel, best: &mut f64, mut mover: F) -> Vec<(f64, bool)>
    where
        F: FnMut(&mut Self, &InstanceModel, Dir, u64) -> Option<InstanceModel>,
    {
        let mut log = Vec::new();
        let mut accepted = 0usize;
        while *best > 0.0 && accepted < MOVE_CAP {
            // Exploratory phase: probe one step each way; take the strictly
            // better direction, ties broken toward decrement.
            let up = mover(self, inst, Dir::Up, 1).map(|i| (self.objective(&i), i));
            let down = mover(self, inst, Dir::Down, 1).map(|i| (self.objective(&i), i));
            let fu = up.as_ref().map(|(f, _)| *f);
            let fd = down.as_ref().map(|(f, _)| *f);
            let dir = match (fu.is_some_and(|f| f < *best), fd.is_some_and(|f| f < *best)) {
                (true, true) if fd <= fu => Dir::Down,
                (true, _) => Dir::Up,
                (_, true) => Dir::Down,
                _ => break,
            };
            let (f1, i1) = match dir {
                Dir::Up => up.unwrap(),
                Dir::Down => down.unwrap(),
            };
            *best = f1;
            *inst = i1;
            accepted += 1;
            log.push((signed(dir, 1), true));

            // Pattern phase: double the amplitude while it keeps improving.
            let mut amp: u64 = 2;
            while *best > 0.0 && accepted < MOVE_CAP {
                let Some(trial) = mover(self, inst, dir, amp) else { break };
                let f = self.objective(&trial);
                if f < *best {
                    *best = f;
                    *inst = trial;
                    accepted += 1;
                    log.push((signed(dir, amp), true));
                } else {
                    log.push((signed(dir, amp), false));
                    break;
                }
                let Some(next) = amp.checked_mul(2) else { break };
                amp = next;
            }
        }
        log
    }

    /// Try each alternative value for a nominal slot; keep the best strict
    /// improvement, otherwise leave the slot as it is.
    fn try_alternatives(
        &mut self,
        inst: &mut InstanceModel,
        best: &mut f64,
        obj: &ObjectId,
        attr: &str,
        alternatives: Vec<Value>,
    ) {
        let mut winner = None;
        for v in alternatives {
            let mut trial = inst.clone();
            let Some(o) = trial.object_mut(obj) else { return };
            o.attrs.insert(attr.to_string(), v);
            let f = self.objective(&trial);
            if f < *best {
                *best = f;
                winner = Some(trial);
            }
        }
        if let Some(w) = winner {
            *inst = w;
        }
    }

    fn enum_alternatives(&mut self, name: &str, cur: Option<&Value>) -> Vec<Value> {
        let Some(e) = self.m.enumeration(name) else { return Vec::new() };
        let cur_lit = match cur {
            Some(Value::Enum { literal, .. }) => Some(literal.as_str()),
            _ => None,
        };
        let others: Vec<&String> =
            e.literals.iter().filter(|l| Some(l.as_str()) != cur_lit).collect();
        let picks: Vec<usize> = if others.len() <= self.cfg.nominal_sample_size {
            (0..others.len()).collect()
        } else {
            rand::seq::index::sample(&mut self.rng, others.len(), self.cfg.nominal_sample_size)
                .into_vec()
        };
        picks
            .into_iter()
            .map(|i| Value::Enum { enumeration: name.to_string(), literal: others[i].clone() })
            .collect()
    }

    // --- trial moves ------------------------------------------------------

    fn int_move(
        &mut self,
        cur: &InstanceModel,
        obj: &ObjectId,
        attr: &str,
        dir: Dir,
        k: u64,
    ) -> Option<InstanceModel> {
        let base = match cur.object(obj)?.attrs.get(attr) {
            Some(Value::Integer(n)) => *n,
            _ => 0,
        };
        let delta = i64::try_from(k).ok()?;
        let next = match dir {
            Dir::Up => base.checked_add(delta)?,
            Dir::Down => base.checked_sub(delta)?,
        };
        let mut out = cur.clone();
        out.object_mut(obj)?.attrs.insert(attr.to_string(), Value::Integer(next));
        Some(out)
    }

    fn real_move(
        &mut self,
        cur: &InstanceModel,
        obj: &ObjectId,
        attr: &str,
        dir: Dir,
        k: u64,
    ) -> Option<InstanceModel> {
        let base = match cur.object(obj)?.attrs.get(attr) {
            Some(Value::Real(x)) => *x,
            Some(Value::Integer(n)) => *n as f64,
            _ => 0.0,
        };
        let next = base + signed(dir, k);
        if !next.is_finite() {
            return None;
        }
        let mut out = cur.clone();
        out.object_mut(obj)?.attrs.insert(attr.to_string(), Value::Real(next));
        Some(out)
    }

    fn object_move(
        &mut self,
        cur: &InstanceModel,
        class: &str,
        dir: Dir,
        k: u64,
    ) -> Option<InstanceModel> {
        let mut out = cur.clone();
        for _ in 0..k {
            match dir {
                Dir::Up => {
                    let id = out.create_object(self.m, class);
                    self.randomize_attrs(&mut out, &id);
                }
                Dir::Down => {
                    let ids: Vec<ObjectId> = out
                        .objects
                        .iter()
                        .filter(|o| o.class == class)
                        .map(|o| o.id.clone())
                        .collect();
                    if ids.is_empty() {
                        return None;
                    }
                    let id = ids[self.rng.gen_range(0..ids.len())].clone();
                    out.delete_object(&id);
                }
            }
        }
        Some(out)
    }

    fn link_move(
        &mut self,
        cur: &InstanceModel,
        obj: &ObjectId,
        assoc: &str,
        far_is_b: bool,
        dir: Dir,
        k: u64,
    ) -> Option<InstanceModel> {
        let mut out = cur.clone();
        for _ in 0..k {
            let ok = match dir {
                Dir::Up => self.add_random_link(&mut out, obj, assoc, far_is_b, false),
                Dir::Down => self.remove_random_link(&mut out, obj, assoc, far_is_b),
            };
            if !ok {
                return None;
            }
        }
        Some(out)
    }

    /// Link `from` to one random eligible partner on the far end. On
    /// unordered ends a partner already linked to `from` is not eligible
    /// (duplicate links are only legal on ordered ends). Partners that
    /// still have room under their own upper bound are preferred; with
    /// `require_capacity` they are the only ones considered. Returns false
    /// when no partner is available.
    fn add_random_link(
        &mut self,
        inst: &mut InstanceModel,
        from: &ObjectId,
        assoc: &str,
        far_is_b: bool,
        require_capacity: bool,
    ) -> bool {
        let Some(a) = self.m.association(assoc) else { return false };
        let (near, far) = if far_is_b { (&a.end_a, &a.end_b) } else { (&a.end_b, &a.end_a) };
        let ordered = a.end_a.ordered || a.end_b.ordered;
        let mut pool = inst.objects_of(self.m, &far.class);
        if !ordered {
            let linked: BTreeSet<ObjectId> = inst.navigate(a, far_is_b, from).into_iter().collect();
            pool.retain(|t| !linked.contains(t));
        }
        // A partner is free while its own partner count on the near end is
        // below that end's upper bound.
        let free: Vec<ObjectId> = match near.upper {
            None => pool.clone(),
            Some(u) => pool
                .iter()
                .filter(|t| (inst.navigate(a, !far_is_b, t).len() as u32) < u)
                .cloned()
                .collect(),
        };
        let pool = if require_capacity || !free.is_empty() { free } else { pool };
        if pool.is_empty() {
            return false;
        }
        let target = pool[self.rng.gen_range(0..pool.len())].clone();
        let (src, dst) = if far_is_b { (from.clone(), target) } else { (target, from.clone()) };
        let position = ordered
            .then(|| 1 + inst.links_of(assoc).filter_map(|l| l.position).max().unwrap_or(0));
        inst.links.push(Link { assoc: assoc.to_string(), src, dst, position });
        inst.normalize();
        true
    }

    /// Remove one random link of `assoc` at `from`'s end. Returns false
    /// when there is none.
    fn remove_random_link(
        &mut self,
        inst: &mut InstanceModel,
        from: &ObjectId,
        assoc: &str,
        far_is_b: bool,
    ) -> bool {
        let at_end: Vec<usize> = inst
            .links
            .iter()
            .enumerate()
            .filter(|(_, l)| {
                l.assoc == assoc && if far_is_b { &l.src == from } else { &l.dst == from }
            })
            .map(|(i, _)| i)
            .collect();
        if at_end.is_empty() {
            return false;
        }
        let i = at_end[self.rng.gen_range(0..at_end.len())];
        inst.links.remove(i);
        true
    }

    /// Give every non-static attribute of `id` a random value. This runs on
    /// freshly created objects regardless of the feature fence: creation
    /// must initialize all slots, the fence only forbids *tweaking* them
    /// afterwards.
    fn randomize_attrs(&mut self, inst: &mut InstanceModel, id: &ObjectId) {
        let Some(class) = inst.object(id).map(|o| o.class.clone()) else { return };
        let decls: Vec<(String, AttrType)> = self
            .m
            .all_attributes(&class)
            .into_iter()
            .filter(|a| !a.is_static)
            .map(|a| (a.name.clone(), a.ty.clone()))
            .collect();
        for (name, ty) in decls {
            let v = self.random_value(&ty);
            if let Some(o) = inst.object_mut(id) {
                o.attrs.insert(name, v);
            }
        }
    }

    fn random_value(&mut self, ty: &AttrType) -> Value {
        match ty {
            AttrType::Boolean => Value::Boolean(self.rng.gen_bool(0.5)),
            AttrType::Integer => Value::Integer(self.rng.gen_range(0..=100)),
            AttrType::Real => Value::Real(f64::from(self.rng.gen_range(0..=1000)) / 10.0),
            AttrType::String => {
                let n = self.rng.gen_range(0..=6);
                Value::Str((0..n).map(|_| char::from(self.rng.gen_range(b'a'..=b'z'))).collect())
            }
            AttrType::Enum(name) => match self.m.enumeration(name) {
                Some(e) if !e.literals.is_empty() => {
                    let i = self.rng.gen_range(0..e.literals.len());
                    Value::Enum { enumeration: name.clone(), literal: e.literals[i].clone() }
                }
                _ => Value::Null,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::{label_ast, label_user_ops};
    use crate::model::conforms_to;
    use crate::nnf::normalize;
    use crate::ocl::parser::parse_constraint;
    use crate::ocl::types::{compile, Compiled};
    use crate::smt::fixtures;

    /// Compile `src` against `m` with `ne` as the non-emptiness formula;
    /// returns the labeled constraint and the normalized operations.
    fn prepared_on(m: &DataModel, src: &str, ne: &str) -> (Expr, OpTable) {
        let Compiled { invariants, ops } = compile(m, src).unwrap();
        let ne = parse_constraint(ne, m, &ops).unwrap();
        let n = normalize(m, &invariants, &ops, &ne).unwrap();
        let mut e = n.constraint;
        label_ast(&mut e, &n.ops);
        (e, n.ops)
    }

    fn one_person(age: i64) -> InstanceModel {
        let mut inst = InstanceModel::new();
        let m = fixtures::model();
        let id = inst.create_object(&m, "Person");
        inst.object_mut(&id).unwrap().attrs.insert("age".into(), Value::Integer(age));
        inst
    }

    fn person1() -> ObjectId {
        ObjectId::new("Person1")
    }

    #[test]
    fn ips_converges_to_an_equality_target() {
        let m = fixtures::model();
        let (e, ops) = prepared_on(&m, "context Person inv t: self.age = 100", "Person.allInstances()->size() >= 1");
        let allowed = AllowedFeatures::everything(&m);
        let mut s = Searcher::new(&m, &ops, &e, allowed, SearchConfig::default());

        let mut inst = one_person(20);
        let mut best = s.objective(&inst);
        let (obj, attr) = (person1(), "age".to_string());
        s.ips(&mut inst, &mut best, |s, cur, dir, k| s.int_move(cur, &obj, &attr, dir, k));

        assert_eq!(inst.object(&person1()).unwrap().attrs["age"], Value::Integer(100));
        assert_eq!(best, 0.0);

        // Oracle: exhaustive scan confirms 100 is the unique optimum.
        let scan = |x: i64| {
            let mut i = one_person(x);
            i.object_mut(&person1()).unwrap().attrs.insert("age".into(), Value::Integer(x));
            s.objective(&i)
        };
        for x in 0..=200 {
            if x == 100 {
                assert_eq!(scan(x), 0.0);
            } else {
                assert!(scan(x) > 0.0, "x = {x} should not satisfy age = 100");
            }
        }
    }

    #[test]
    fn already_optimal_variables_accept_no_moves() {
        let m = fixtures::model();
        let (e, ops) = prepared_on(&m, "context Person inv t: self.age = 100", "Person.allInstances()->size() >= 1");
        let mut s = Searcher::new(&m, &ops, &e, AllowedFeatures::everything(&m), SearchConfig::default());

        let mut inst = one_person(100);
        let before = inst.clone();
        let mut best = s.objective(&inst);
        assert_eq!(best, 0.0);
        let (obj, attr) = (person1(), "age".to_string());
        let log = s.ips(&mut inst, &mut best, |s, cur, dir, k| s.int_move(cur, &obj, &attr, dir, k));
        assert!(log.is_empty());
        assert_eq!(inst, before);
    }

    #[test]
    fn overshoot_resets_the_amplitude() {
        let m = fixtures::model();
        let (e, ops) = prepared_on(&m, "context Person inv t: self.age = 21", "Person.allInstances()->size() >= 1");
        let mut s = Searcher::new(&m, &ops, &e, AllowedFeatures::everything(&m), SearchConfig::default());

        let mut inst = one_person(0);
        let mut best = s.objective(&inst);
        let (obj, attr) = (person1(), "age".to_string());
        let log = s.ips(&mut inst, &mut best, |s, cur, dir, k| s.int_move(cur, &obj, &attr, dir, k));

        // Doubling from 0 toward 21: +1, +2, +4, +8 accepted, +16 overshoots.
        assert_eq!(&log[..5], &[(1.0, true), (2.0, true), (4.0, true), (8.0, true), (16.0, false)]);
        // Every rejection throws IPS back to a one-step exploratory move.
        for w in log.windows(2) {
            if !w[0].1 {
                assert_eq!(w[1].0.abs(), 1.0, "no amplitude reset after overshoot: {log:?}");
            }
        }
        assert_eq!(inst.object(&person1()).unwrap().attrs["age"], Value::Integer(21));
        assert_eq!(best, 0.0);
    }

    #[test]
    fn enum_variables_try_every_literal() {
        let mut m = fixtures::model();
        m.enumerations[0].literals = vec!["Calm".into(), "Wild".into(), "Grim".into(), "Sunny".into()];
        let (e, ops) = prepared_on(&m, "context Person inv t: self.mood = Mood::Sunny", "Person.allInstances()->size() >= 1");
        let mut s = Searcher::new(&m, &ops, &e, AllowedFeatures::everything(&m), SearchConfig::default());

        let mut inst = one_person(20);
        inst.object_mut(&person1())
            .unwrap()
            .attrs
            .insert("mood".into(), Value::Enum { enumeration: "Mood".into(), literal: "Calm".into() });
        let mut best = s.objective(&inst);
        s.optimize(&mut inst, &mut best, &SearchVar::Slot { obj: person1(), attr: "mood".into() });

        assert_eq!(
            inst.object(&person1()).unwrap().attrs["mood"],
            Value::Enum { enumeration: "Mood".into(), literal: "Sunny".into() }
        );
        assert_eq!(best, 0.0);
    }

    #[test]
    fn object_sets_grow_with_doubling_amplitude() {
        let m = fixtures::model();
        let (e, ops) = prepared_on(&m, "", "Person.allInstances()->size() = 7");
        let labeled = label_user_ops(&e, &ops);
        let allowed = AllowedFeatures::from_labels(&m, &e, &labeled);
        assert!(allowed.classes.contains("Person"));
        let mut s = Searcher::new(&m, &ops, &e, allowed, SearchConfig::default());

        let mut inst = InstanceModel::new();
        let mut best = s.objective(&inst);
        let log = s.ips(&mut inst, &mut best, |s, cur, dir, k| s.object_move(cur, "Person", dir, k));

        assert_eq!(&log[..3], &[(1.0, true), (2.0, true), (4.0, true)]);
        assert_eq!(inst.objects.len(), 7);
        assert_eq!(best, 0.0);
        assert!(conforms_to(&inst, &m).is_empty());
    }

    #[test]
    fn links_are_added_to_satisfy_structure() {
        let m = fixtures::model();
        let (e, ops) =
            prepared_on(&m, "context Person inv t: self.clubs->size() >= 1", "Person.allInstances()->size() >= 1");
        let labeled = label_user_ops(&e, &ops);
        let allowed = AllowedFeatures::from_labels(&m, &e, &labeled);
        assert!(allowed.assocs.contains("membership"));
        assert!(allowed.classes.contains("Club"), "navigation target class is allowed");
        let mut s = Searcher::new(&m, &ops, &e, allowed, SearchConfig::default());

        let mut inst = InstanceModel::new();
        for _ in 0..2 {
            inst.create_object(&m, "Person");
        }
        inst.create_object(&m, "Club");
        let improved = s.iteration(&mut inst);

        assert!(improved);
        assert_eq!(s.objective(&inst), 0.0);
        let a = m.association("membership").unwrap();
        for p in inst.objects_of(&m, "Person") {
            assert!(!inst.navigate(a, false, &p).is_empty(), "{p} has no club");
        }
        assert!(conforms_to(&inst, &m).is_empty());
    }

    #[test]
    fn smt_only_attributes_are_never_touched() {
        let m = fixtures::model();
        let (e, ops) = prepared_on(
            &m,
            "context Person inv t: self.age >= 18 and self.clubs->size() >= 1",
            "Person.allInstances()->size() >= 1",
        );
        let labeled = label_user_ops(&e, &ops);
        let allowed = AllowedFeatures::from_labels(&m, &e, &labeled);
        assert!(allowed.attrs.is_empty(), "age is referenced only by SMT-labeled nodes: {allowed:?}");

        let mut s = Searcher::new(
            &m,
            &ops,
            &e,
            allowed.clone(),
            SearchConfig { restart_on_plateau: false, ..SearchConfig::default() },
        );
        let mut inst = fixtures::instance();
        let vector = build_vector(&m, &inst, &allowed);
        assert!(
            vector.iter().all(|v| !matches!(v, SearchVar::Slot { .. })),
            "no attribute slots in the vector: {vector:?}"
        );

        // Deleting an object is fair game (it is a structure move); what the
        // fence forbids is changing the age of an object that stays.
        let ages_before: Vec<(ObjectId, Value)> = inst
            .objects
            .iter()
            .filter_map(|o| o.attrs.get("age").map(|v| (o.id.clone(), v.clone())))
            .collect();
        for _ in 0..3 {
            s.iteration(&mut inst);
        }
        for (id, age) in &ages_before {
            if let Some(o) = inst.object(id) {
                assert_eq!(&o.attrs["age"], age, "search must not move SMT-owned attribute of {id}");
            }
        }
    }

    #[test]
    fn both_labeled_attributes_are_searchable() {
        let m = fixtures::model();
        let (e, ops) = prepared_on(
            &m,
            "context Person inv t: Person.allInstances()->exists(p | p.age >= 18)",
            "Person.allInstances()->size() >= 1",
        );
        let labeled = label_user_ops(&e, &ops);
        let allowed = AllowedFeatures::from_labels(&m, &e, &labeled);
        assert!(allowed.attrs.contains(&("Person".to_string(), "age".to_string())));
    }

    #[test]
    fn search_labeled_operation_bodies_open_their_features() {
        let m = fixtures::model();
        // clubCount calls into structure; the call in an SMT context still
        // lets search rewire the membership links the body reads.
        let (e, ops) = prepared_on(
            &m,
            "context Person inv t: self.clubCount() >= 2",
            "Person.allInstances()->size() >= 1",
        );
        let labeled = label_user_ops(&e, &ops);
        let allowed = AllowedFeatures::from_labels(&m, &e, &labeled);
        assert!(allowed.assocs.contains("membership"));
    }

    #[test]
    fn restart_abandons_a_plateaued_invalid_instance() {
        let m = fixtures::model();
        let (e, ops) = prepared_on(&m, "context Person inv t: self.age = 100", "Person.allInstances()->size() >= 1");
        let mut s = Searcher::new(&m, &ops, &e, AllowedFeatures::everything(&m), SearchConfig::default());

        let mut inst = fixtures::instance();
        let original = inst.clone();
        assert!(!s.restart_if_stuck(&mut inst, true), "an improving pass never restarts");
        assert_eq!(inst, original);

        assert!(s.restart_if_stuck(&mut inst, false));
        assert_eq!(s.restarts, 1);
        assert_ne!(inst.to_json(), original.to_json());

        let mut valid = one_person(100);
        assert!(!s.restart_if_stuck(&mut valid, false), "a valid instance is never abandoned");
    }

    #[test]
    fn seeded_runs_are_identical() {
        let m = fixtures::model();
        let run = |seed: u64| {
            let (e, ops) = prepared_on(
                &m,
                "context Person inv t: self.clubs->size() >= 1",
                "Person.allInstances()->size() >= 2",
            );
            let labeled = label_user_ops(&e, &ops);
            let allowed = AllowedFeatures::from_labels(&m, &e, &labeled);
            let mut s =
                Searcher::new(&m, &ops, &e, allowed, SearchConfig { seed, ..SearchConfig::default() });
            let mut inst = s.random_instance();
            for _ in 0..3 {
                let improved = s.iteration(&mut inst);
                s.restart_if_stuck(&mut inst, improved);
            }
            inst.to_json()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn passes_keep_instances_conformant_and_never_worsen() {
        let m = fixtures::model();
        let (e, ops) = prepared_on(
            &m,
            "context Person inv t: self.clubs->size() >= 1 and self.vip = true",
            "Person.allInstances()->size() >= 2",
        );
        let mut s = Searcher::new(
            &m,
            &ops,
            &e,
            AllowedFeatures::everything(&m),
            SearchConfig { seed: 5, restart_on_plateau: false, ..SearchConfig::default() },
        );
        let mut inst = fixtures::instance();
        let mut last = s.objective(&inst);
        for _ in 0..4 {
            s.iteration(&mut inst);
            let now = s.objective(&inst);
            assert!(now <= last, "objective worsened: {now} > {last}");
            assert!(conforms_to(&inst, &m).is_empty());
            last = now;
        }
        assert_eq!(last, 0.0, "this fixture is solvable by pure search");
    }

    #[test]
    fn greedy_initialization_meets_lower_bounds() {
        let mut m = fixtures::model();
        // Make membership mandatory on both sides: every person needs a
        // club and every club exactly one member.
        m.associations[0].end_a.lower = 1; // each person: >= 1 club
        m.associations[0].end_b.lower = 1; // each club: exactly one member
        m.associations[0].end_b.upper = Some(1);
        let (e, ops) = prepared_on(&m, "", "Person.allInstances()->size() >= 1");
        let labeled = label_user_ops(&e, &ops);
        let allowed = AllowedFeatures::from_labels(&m, &e, &labeled);
        let mut s = Searcher::new(&m, &ops, &e, allowed, SearchConfig { seed: 9, ..SearchConfig::default() });

        let a = m.association("membership").unwrap().clone();
        for seed in 0..20 {
            s.rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = s.random_instance();
            for p in inst.objects_of(&m, "Person") {
                assert!(!inst.navigate(&a, false, &p).is_empty(), "seed {seed}: {p} clubless");
            }
            for c in inst.objects_of(&m, "Club") {
                assert_eq!(inst.navigate(&a, true, &c).len(), 1, "seed {seed}: {c} members");
            }
            assert!(conforms_to(&inst, &m).is_empty());
        }
    }
}

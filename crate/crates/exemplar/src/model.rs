//! Class models (the schema being instantiated), instance models (candidate
//! solutions), and runtime values.
//!
//! A [`DataModel`] is immutable after loading and validation. An
//! [`InstanceModel`] is the evolving candidate the solver mutates; it only
//! ever contains *structurally* well-formed content (no abstract instances,
//! no non-conforming link ends) — multiplicities are deliberately *not*
//! enforced here. They are turned into ordinary constraints by
//! [`multiplicity_to_constraint`] and handled by the solver like any other
//! invariant, so that a partially built instance is representable.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use crate::ocl::ast::{CollOp, Expr, ExprKind, IterKind, RelOp};

// ---------------------------------------------------------------------------
// Data model (schema)
// ---------------------------------------------------------------------------

/// Type of an attribute: one of the four primitive types or a declared
/// enumeration (referenced by name).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum AttrType {
    Boolean,
    Integer,
    Real,
    String,
    Enum(String),
}

impl From<AttrType> for String {
    fn from(t: AttrType) -> String {
        match t {
            AttrType::Boolean => "Boolean".into(),
            AttrType::Integer => "Integer".into(),
            AttrType::Real => "Real".into(),
            AttrType::String => "String".into(),
            AttrType::Enum(n) => n,
        }
    }
}

impl TryFrom<String> for AttrType {
    type Error = std::convert::Infallible;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Ok(match s.as_str() {
            "Boolean" => AttrType::Boolean,
            "Integer" => AttrType::Integer,
            "Real" => AttrType::Real,
            "String" => AttrType::String,
            _ => AttrType::Enum(s),
        })
    }
}

impl fmt::Display for AttrType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrType::Enum(n) => write!(f, "{n}"),
            other => write!(f, "{other:?}"),
        }
    }
}

/// An attribute declaration. Static attributes with a constant value act as
/// named literals (`Constants::YEAR`) and never occupy instance slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AttrDecl {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: AttrType,
    #[serde(default)]
    pub is_static: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<Value>,
}

/// A class declaration with single inheritance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassDecl {
    pub name: String,
    #[serde(default)]
    pub is_abstract: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superclass: Option<String>,
    #[serde(default)]
    pub attributes: Vec<AttrDecl>,
}

/// One end of a binary association. `upper: None` means unbounded (`*`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssocEnd {
    pub class: String,
    pub role_name: String,
    #[serde(default)]
    pub lower: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<u32>,
    #[serde(default)]
    pub ordered: bool,
}

/// A binary association. Navigating `a.role` from an object of `end_a.class`
/// using `end_b.role_name` reaches the linked `end_b.class` objects, and vice
/// versa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssocDecl {
    pub name: String,
    pub end_a: AssocEnd,
    pub end_b: AssocEnd,
}

/// An enumeration declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumDecl {
    pub name: String,
    pub literals: Vec<String>,
}

/// A user-defined side-effect-free operation. The body is kept as source
/// text here; it is parsed and type-checked together with the invariants
/// (the body may refer to other operations, including mutually).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UserOpDecl {
    pub name: String,
    /// Class providing the implicit `self` receiver.
    pub context: String,
    #[serde(default)]
    pub params: Vec<ParamDecl>,
    pub return_type: AttrType,
    pub body: String,
}

/// A parameter of a user-defined operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParamDecl {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: AttrType,
}

/// The complete schema: classes, associations, enumerations and operations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataModel {
    #[serde(default)]
    pub classes: Vec<ClassDecl>,
    #[serde(default)]
    pub associations: Vec<AssocDecl>,
    #[serde(default)]
    pub enumerations: Vec<EnumDecl>,
    #[serde(default)]
    pub operations: Vec<UserOpDecl>,
}

impl DataModel {
    pub fn from_json(text: &str) -> Result<DataModel, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("data model serializes")
    }

    pub fn class(&self, name: &str) -> Option<&ClassDecl> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn enumeration(&self, name: &str) -> Option<&EnumDecl> {
        self.enumerations.iter().find(|e| e.name == name)
    }

    pub fn association(&self, name: &str) -> Option<&AssocDecl> {
        self.associations.iter().find(|a| a.name == name)
    }

    pub fn operation(&self, name: &str) -> Option<&UserOpDecl> {
        self.operations.iter().find(|o| o.name == name)
    }

    /// `sub` equals `sup` or inherits from it (transitively).
    pub fn conforms_class(&self, sub: &str, sup: &str) -> bool {
        let mut cur = Some(sub);
        let mut guard = 0usize;
        while let Some(name) = cur {
            if name == sup {
                return true;
            }
            cur = self.class(name).and_then(|c| c.superclass.as_deref());
            guard += 1;
            if guard > self.classes.len() + 1 {
                return false; // defensive: cycle (reported by validate_model)
            }
        }
        false
    }

    /// All concrete classes conforming to `name`, in declaration order.
    pub fn concrete_subclasses(&self, name: &str) -> Vec<&ClassDecl> {
        self.classes
            .iter()
            .filter(|c| !c.is_abstract && self.conforms_class(&c.name, name))
            .collect()
    }

    /// Attribute lookup along the inheritance chain.
    pub fn attribute(&self, class: &str, attr: &str) -> Option<&AttrDecl> {
        let mut cur = Some(class);
        let mut guard = 0usize;
        while let Some(name) = cur {
            let c = self.class(name)?;
            if let Some(a) = c.attributes.iter().find(|a| a.name == attr) {
                return Some(a);
            }
            cur = c.superclass.as_deref();
            guard += 1;
            if guard > self.classes.len() + 1 {
                return None;
            }
        }
        None
    }

    /// All attributes of `class`, inherited first, in declaration order.
    pub fn all_attributes(&self, class: &str) -> Vec<&AttrDecl> {
        let mut chain = Vec::new();
        let mut cur = Some(class);
        let mut guard = 0usize;
        while let Some(name) = cur {
            match self.class(name) {
                Some(c) => {
                    chain.push(c);
                    cur = c.superclass.as_deref();
                }
                None => break,
            }
            guard += 1;
            if guard > self.classes.len() + 1 {
                break;
            }
        }
        chain.reverse();
        chain.iter().flat_map(|c| c.attributes.iter()).collect()
    }

    /// Resolve a role name navigable *from* `class`: returns the association
    /// together with the far end carrying `role` and the near end.
    pub fn navigation(&self, class: &str, role: &str) -> Option<(&AssocDecl, &AssocEnd, &AssocEnd)> {
        for a in &self.associations {
            if a.end_b.role_name == role && self.conforms_class(class, &a.end_a.class) {
                return Some((a, &a.end_b, &a.end_a));
            }
            if a.end_a.role_name == role && self.conforms_class(class, &a.end_b.class) {
                return Some((a, &a.end_a, &a.end_b));
            }
        }
        None
    }
}

// ---------------------------------------------------------------------------
// Values
// ---------------------------------------------------------------------------

/// Identifier of an object in an instance model. Cheap to clone; ordering is
/// plain lexicographic on the underlying string, which fixes the iteration
/// order of object sets everywhere (evaluation, expansion, serialization).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId(pub Arc<str>);

impl ObjectId {
    pub fn new(s: impl AsRef<str>) -> Self {
        ObjectId(Arc::from(s.as_ref()))
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for ObjectId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for ObjectId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(ObjectId::new(String::deserialize(d)?))
    }
}

/// Collection kind, mirroring the constraint language's collection types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollKind {
    Set,
    Bag,
    Sequence,
    OrderedSet,
}

/// A runtime value. `Null` is a legal attribute value; `Invalid` is the
/// evaluation-error value and is never stored in an instance model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Value {
    Boolean(bool),
    Integer(i64),
    Real(f64),
    #[serde(rename = "String")]
    Str(String),
    Enum { enumeration: String, literal: String },
    Object(ObjectId),
    Collection { kind: CollKind, elements: Vec<Value> },
    Null,
    Invalid,
}

impl Value {
    pub fn is_invalid(&self) -> bool {
        matches!(self, Value::Invalid)
    }
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Boolean(b) => Some(*b),
            _ => None,
        }
    }
    /// Numeric view used by arithmetic and branch distances.
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    /// Structural equality with OCL's flavor: `null = null` is true, numeric
    /// values compare across Integer/Real, collections compare per kind
    /// (order-sensitive only for Sequence/OrderedSet, multiplicity-sensitive
    /// for Bag). Returns `None` if either side is Invalid.
    pub fn ocl_eq(&self, other: &Value) -> Option<bool> {
        use Value::*;
        match (self, other) {
            (Invalid, _) | (_, Invalid) => None,
            (Null, Null) => Some(true),
            (Null, _) | (_, Null) => Some(false),
            (Boolean(a), Boolean(b)) => Some(a == b),
            (Integer(a), Integer(b)) => Some(a == b),
            (Real(_), _) | (_, Real(_)) => match (self.as_num(), other.as_num()) {
                (Some(a), Some(b)) => Some(a == b),
                _ => Some(false),
            },
            (Integer(_), _) | (_, Integer(_)) => Some(false),
            (Str(a), Str(b)) => Some(a == b),
            (
                Enum { enumeration: ea, literal: la },
                Enum { enumeration: eb, literal: lb },
            ) => Some(ea == eb && la == lb),
            (Object(a), Object(b)) => Some(a == b),
            (
                Collection { kind: ka, elements: xs },
                Collection { kind: kb, elements: ys },
            ) => {
                if ka != kb {
                    return Some(false);
                }
                match ka {
                    CollKind::Sequence | CollKind::OrderedSet => {
                        if xs.len() != ys.len() {
                            return Some(false);
                        }
                        for (x, y) in xs.iter().zip(ys) {
                            match x.ocl_eq(y) {
                                Some(true) => {}
                                other => return other,
                            }
                        }
                        Some(true)
                    }
                    CollKind::Set | CollKind::Bag => {
                        if xs.len() != ys.len() {
                            return Some(false);
                        }
                        // Multiset comparison by counting (quadratic; values
                        // are small). Invalid inside elements propagates.
                        let count = |needle: &Value, hay: &[Value]| -> Option<usize> {
                            let mut n = 0;
                            for h in hay {
                                match needle.ocl_eq(h) {
                                    Some(true) => n += 1,
                                    Some(false) => {}
                                    None => return None,
                                }
                            }
                            Some(n)
                        };
                        for x in xs {
                            let (a, b) = (count(x, xs)?, count(x, ys)?);
                            if a != b {
                                return Some(false);
                            }
                        }
                        Some(true)
                    }
                }
            }
            _ => Some(false),
        }
    }
}

// ---------------------------------------------------------------------------
// Instance model
// ---------------------------------------------------------------------------

/// An object with its attribute slots. Static attributes never appear in
/// `attrs`; every non-static attribute (including inherited ones) has a slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInst {
    pub id: ObjectId,
    pub class: String,
    #[serde(default)]
    pub attrs: BTreeMap<String, Value>,
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.ocl_eq(other) == Some(true)
            || (matches!(self, Value::Invalid) && matches!(other, Value::Invalid))
    }
}

/// A typed link. `position` is present exactly when the *target* end of the
/// link's association is ordered (its value orders the sequence seen from the
/// source side).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Link {
    pub assoc: String,
    pub src: ObjectId,
    pub dst: ObjectId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<u32>,
}

/// The evolving candidate solution: an object graph.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InstanceModel {
    pub objects: Vec<ObjectInst>,
    pub links: Vec<Link>,
    /// Per-class counters making freshly assigned ids stable within a run.
    #[serde(skip)]
    next_id: HashMap<String, u32>,
}

impl InstanceModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_json(text: &str) -> Result<InstanceModel, serde_json::Error> {
        let mut inst: InstanceModel = serde_json::from_str(text)?;
        inst.normalize();
        // Rebuild counters past any loaded ids of the form Class<N>.
        let ids: Vec<(String, u32)> = inst
            .objects
            .iter()
            .filter_map(|o| {
                o.id.as_str()
                    .strip_prefix(o.class.as_str())
                    .and_then(|rest| rest.parse::<u32>().ok())
                    .map(|n| (o.class.clone(), n))
            })
            .collect();
        for (class, n) in ids {
            let next = inst.next_id.entry(class).or_insert(0);
            *next = (*next).max(n);
        }
        Ok(inst)
    }

    pub fn to_json(&self) -> String {
        let mut sorted = self.clone();
        sorted.normalize();
        serde_json::to_string_pretty(&sorted).expect("instance model serializes")
    }

    /// Deterministic ordering of objects and links, for diffable output and
    /// reproducible iteration.
    pub fn normalize(&mut self) {
        self.objects.sort_by(|a, b| a.id.cmp(&b.id));
        self.links.sort();
    }

    pub fn object(&self, id: &ObjectId) -> Option<&ObjectInst> {
        self.objects.iter().find(|o| &o.id == id)
    }

    pub fn object_mut(&mut self, id: &ObjectId) -> Option<&mut ObjectInst> {
        self.objects.iter_mut().find(|o| &o.id == id)
    }

    /// Ids of all objects whose class conforms to `class`, sorted.
    pub fn objects_of(&self, m: &DataModel, class: &str) -> Vec<ObjectId> {
        let mut ids: Vec<ObjectId> = self
            .objects
            .iter()
            .filter(|o| m.conforms_class(&o.class, class))
            .map(|o| o.id.clone())
            .collect();
        ids.sort();
        ids
    }

    /// Create an object of concrete class `class` with every non-static
    /// attribute initialized to its type default. Returns the fresh id.
    pub fn create_object(&mut self, m: &DataModel, class: &str) -> ObjectId {
        // The counters are not serialized, so an instance built by hand or
        // read from disk starts with empty ones; skip over any id that is
        // already taken.
        let n = self.next_id.entry(class.to_string()).or_insert(0);
        let id = loop {
            *n += 1;
            let candidate = ObjectId::new(format!("{class}{n}"));
            if !self.objects.iter().any(|o| o.id == candidate) {
                break candidate;
            }
        };
        let attrs = m
            .all_attributes(class)
            .into_iter()
            .filter(|a| !a.is_static)
            .map(|a| (a.name.clone(), default_value(m, &a.ty)))
            .collect();
        self.objects.push(ObjectInst { id: id.clone(), class: class.to_string(), attrs });
        self.normalize();
        id
    }

    /// Remove an object and all links touching it.
    pub fn delete_object(&mut self, id: &ObjectId) -> Option<ObjectInst> {
        let idx = self.objects.iter().position(|o| &o.id == id)?;
        let obj = self.objects.remove(idx);
        self.links.retain(|l| &l.src != id && &l.dst != id);
        Some(obj)
    }

    /// Links of association `assoc` as (src, dst, position) triples.
    pub fn links_of<'a>(&'a self, assoc: &'a str) -> impl Iterator<Item = &'a Link> {
        self.links.iter().filter(move |l| l.assoc == assoc)
    }

    /// Navigate from `from` over the association end `far` (the end whose
    /// role was used). Returns target ids; ordered ends sort by position,
    /// unordered by id.
    pub fn navigate(&self, assoc: &AssocDecl, far_is_b: bool, from: &ObjectId) -> Vec<ObjectId> {
        let mut out: Vec<(Option<u32>, ObjectId)> = Vec::new();
        for l in self.links_of(&assoc.name) {
            if far_is_b && &l.src == from {
                out.push((l.position, l.dst.clone()));
            } else if !far_is_b && &l.dst == from {
                out.push((l.position, l.src.clone()));
            }
        }
        let far = if far_is_b { &assoc.end_b } else { &assoc.end_a };
        if far.ordered {
            out.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        } else {
            out.sort_by(|a, b| a.1.cmp(&b.1));
        }
        out.into_iter().map(|(_, id)| id).collect()
    }
}

/// Default value used for freshly created attribute slots: `false`, `0`,
/// `0.0`, `""`, or the first literal of the enumeration.
pub fn default_value(m: &DataModel, ty: &AttrType) -> Value {
    match ty {
        AttrType::Boolean => Value::Boolean(false),
        AttrType::Integer => Value::Integer(0),
        AttrType::Real => Value::Real(0.0),
        AttrType::String => Value::Str(String::new()),
        AttrType::Enum(name) => match m.enumeration(name).and_then(|e| e.literals.first()) {
            Some(first) => Value::Enum { enumeration: name.clone(), literal: first.clone() },
            None => Value::Null,
        },
    }
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

/// Machine-matchable category of a model or conformance problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagKind {
    DuplicateName,
    InheritanceCycle,
    UnknownType,
    UnknownClass,
    UnknownSuperclass,
    BadBounds,
    DuplicateRole,
    RoleShadowsAttribute,
    StaticWithoutConstant,
    ConstantTypeMismatch,
    AbstractInstantiated,
    UnknownAssociation,
    UnknownObject,
    NonConformingLink,
    MissingAttrSlot,
    UnknownAttrSlot,
    AttrTypeMismatch,
    DuplicateLink,
    BadPosition,
    DuplicateId,
}

/// A single validation finding: what rule was violated, on which element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagKind,
    pub detail: String,
}

impl Diagnostic {
    fn new(kind: DiagKind, detail: impl Into<String>) -> Self {
        Diagnostic { kind, detail: detail.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}

/// Check every well-formedness rule of the schema itself. An empty result
/// means the model can be used by the rest of the pipeline.
pub fn validate_model(m: &DataModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut names = HashSet::new();
    for c in &m.classes {
        if !names.insert(c.name.as_str()) {
            out.push(Diagnostic::new(DiagKind::DuplicateName, format!("class {}", c.name)));
        }
    }
    for e in &m.enumerations {
        if !names.insert(e.name.as_str()) {
            out.push(Diagnostic::new(DiagKind::DuplicateName, format!("enumeration {}", e.name)));
        }
        let mut lits = HashSet::new();
        for l in &e.literals {
            if !lits.insert(l.as_str()) {
                out.push(Diagnostic::new(
                    DiagKind::DuplicateName,
                    format!("literal {} in enumeration {}", l, e.name),
                ));
            }
        }
    }
    let mut assoc_names = HashSet::new();
    for a in &m.associations {
        if !assoc_names.insert(a.name.as_str()) {
            out.push(Diagnostic::new(DiagKind::DuplicateName, format!("association {}", a.name)));
        }
    }

    // Inheritance: resolvable superclasses, no cycles.
    for c in &m.classes {
        if let Some(sup) = &c.superclass {
            if m.class(sup).is_none() {
                out.push(Diagnostic::new(
                    DiagKind::UnknownSuperclass,
                    format!("class {} extends undeclared {}", c.name, sup),
                ));
            }
        }
    }
    for c in &m.classes {
        let mut seen = HashSet::new();
        let mut cur = Some(c.name.as_str());
        while let Some(name) = cur {
            if !seen.insert(name) {
                out.push(Diagnostic::new(
                    DiagKind::InheritanceCycle,
                    format!("inheritance cycle through {}", name),
                ));
                break;
            }
            cur = m.class(name).and_then(|k| k.superclass.as_deref());
        }
    }

    // Attribute types, statics, constants.
    for c in &m.classes {
        let mut attr_names = HashSet::new();
        for a in &c.attributes {
            if !attr_names.insert(a.name.as_str()) {
                out.push(Diagnostic::new(
                    DiagKind::DuplicateName,
                    format!("attribute {}::{}", c.name, a.name),
                ));
            }
            if let AttrType::Enum(en) = &a.ty {
                if m.enumeration(en).is_none() {
                    out.push(Diagnostic::new(
                        DiagKind::UnknownType,
                        format!("attribute {}::{} has unknown type {}", c.name, a.name, en),
                    ));
                }
            }
            match (&a.is_static, &a.constant) {
                (true, None) => out.push(Diagnostic::new(
                    DiagKind::StaticWithoutConstant,
                    format!(
                        "static attribute {}::{} needs a constant value (mutable statics are unsupported)",
                        c.name, a.name
                    ),
                )),
                (_, Some(v)) => {
                    if !constant_matches_type(m, v, &a.ty) {
                        out.push(Diagnostic::new(
                            DiagKind::ConstantTypeMismatch,
                            format!("constant of {}::{} does not match type {}", c.name, a.name, a.ty),
                        ));
                    }
                }
                _ => {}
            }
        }
    }

    // Associations: known end classes, sane bounds, unambiguous roles.
    let mut roles: HashMap<(String, String), String> = HashMap::new();
    for a in &m.associations {
        for (end, far) in [(&a.end_a, &a.end_b), (&a.end_b, &a.end_a)] {
            if m.class(&end.class).is_none() {
                out.push(Diagnostic::new(
                    DiagKind::UnknownClass,
                    format!("association {} references undeclared class {}", a.name, end.class),
                ));
            }
            if let Some(u) = far.upper {
                if far.lower > u {
                    out.push(Diagnostic::new(
                        DiagKind::BadBounds,
                        format!("association {} end {}: lower {} > upper {}", a.name, far.role_name, far.lower, u),
                    ));
                }
            }
            // The far role must be unique among everything navigable from the
            // near class (other far roles and the class's own attributes).
            if m.class(&end.class).is_some() {
                let key = (end.class.clone(), far.role_name.clone());
                if let Some(prev) = roles.insert(key, a.name.clone()) {
                    if prev != a.name {
                        out.push(Diagnostic::new(
                            DiagKind::DuplicateRole,
                            format!("role {} reachable from {} declared by {} and {}", far.role_name, end.class, prev, a.name),
                        ));
                    }
                }
                if m.attribute(&end.class, &far.role_name).is_some() {
                    out.push(Diagnostic::new(
                        DiagKind::RoleShadowsAttribute,
                        format!("role {} collides with an attribute of {}", far.role_name, end.class),
                    ));
                }
            }
        }
    }
    out
}

fn constant_matches_type(m: &DataModel, v: &Value, ty: &AttrType) -> bool {
    match (v, ty) {
        (Value::Boolean(_), AttrType::Boolean)
        | (Value::Integer(_), AttrType::Integer)
        | (Value::Real(_), AttrType::Real)
        | (Value::Str(_), AttrType::String) => true,
        (Value::Integer(_), AttrType::Real) => true,
        (Value::Enum { enumeration, literal }, AttrType::Enum(en)) => {
            enumeration == en
                && m.enumeration(en).map(|e| e.literals.contains(literal)).unwrap_or(false)
        }
        _ => false,
    }
}

/// Structural conformance of an instance against its schema. Multiplicity
/// violations are *not* reported here — they are ordinary constraints, see
/// [`multiplicity_to_constraint`].
pub fn conforms_to(i: &InstanceModel, m: &DataModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for o in &i.objects {
        if !ids.insert(o.id.clone()) {
            out.push(Diagnostic::new(DiagKind::DuplicateId, format!("object id {}", o.id)));
        }
        let Some(c) = m.class(&o.class) else {
            out.push(Diagnostic::new(
                DiagKind::UnknownClass,
                format!("object {} has undeclared class {}", o.id, o.class),
            ));
            continue;
        };
        if c.is_abstract {
            out.push(Diagnostic::new(
                DiagKind::AbstractInstantiated,
                format!("object {} instantiates abstract class {}", o.id, o.class),
            ));
        }
        let declared: BTreeMap<&str, &AttrDecl> = m
            .all_attributes(&o.class)
            .into_iter()
            .filter(|a| !a.is_static)
            .map(|a| (a.name.as_str(), a))
            .collect();
        for (name, decl) in &declared {
            match o.attrs.get(*name) {
                None => out.push(Diagnostic::new(
                    DiagKind::MissingAttrSlot,
                    format!("object {} lacks a slot for attribute {}", o.id, name),
                )),
                Some(Value::Null) => {}
                Some(v) => {
                    if !constant_matches_type(m, v, &decl.ty) {
                        out.push(Diagnostic::new(
                            DiagKind::AttrTypeMismatch,
                            format!("object {} attribute {} does not match type {}", o.id, name, decl.ty),
                        ));
                    }
                }
            }
        }
        for name in o.attrs.keys() {
            if !declared.contains_key(name.as_str()) {
                out.push(Diagnostic::new(
                    DiagKind::UnknownAttrSlot,
                    format!("object {} has a slot for undeclared attribute {}", o.id, name),
                ));
            }
        }
    }

    let mut seen_links: BTreeSet<(&str, &ObjectId, &ObjectId)> = BTreeSet::new();
    for l in &i.links {
        let Some(a) = m.association(&l.assoc) else {
            out.push(Diagnostic::new(
                DiagKind::UnknownAssociation,
                format!("link references undeclared association {}", l.assoc),
            ));
            continue;
        };
        let mut end_ok = true;
        for (id, end) in [(&l.src, &a.end_a), (&l.dst, &a.end_b)] {
            match i.object(id) {
                None => {
                    out.push(Diagnostic::new(
                        DiagKind::UnknownObject,
                        format!("link {} references missing object {}", l.assoc, id),
                    ));
                    end_ok = false;
                }
                Some(o) => {
                    if !m.conforms_class(&o.class, &end.class) {
                        out.push(Diagnostic::new(
                            DiagKind::NonConformingLink,
                            format!(
                                "link {}: object {} of class {} does not conform to end class {}",
                                l.assoc, id, o.class, end.class
                            ),
                        ));
                        end_ok = false;
                    }
                }
            }
        }
        if a.end_a.ordered || a.end_b.ordered {
            if l.position.is_none() {
                out.push(Diagnostic::new(
                    DiagKind::BadPosition,
                    format!("link {} {}->{} on an ordered end needs a position", l.assoc, l.src, l.dst),
                ));
            }
        } else {
            if l.position.is_some() {
                out.push(Diagnostic::new(
                    DiagKind::BadPosition,
                    format!("link {} {}->{} has a position but the end is unordered", l.assoc, l.src, l.dst),
                ));
            }
            // Duplicate (same pair, same association) links are only allowed
            // on ordered ends, where repetition is observable.
            if end_ok && !seen_links.insert((l.assoc.as_str(), &l.src, &l.dst)) {
                out.push(Diagnostic::new(
                    DiagKind::DuplicateLink,
                    format!("duplicate link {} {}->{}", l.assoc, l.src, l.dst),
                ));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Multiplicities as constraints
// ---------------------------------------------------------------------------

/// Lower/upper bounds of the association's ends, phrased as ordinary
/// invariant formulas over role navigation:
///
/// ```text
/// C.allInstances()->forAll(v | v.role->size() >= lower)   -- lower > 0
/// C.allInstances()->forAll(v | v.role->size() <= upper)   -- upper finite
/// ```
///
/// Unbounded uppers and zero lowers produce nothing. The produced formulas
/// are untyped here; callers run them through the regular type checker.
pub fn multiplicity_to_constraint(a: &AssocDecl) -> Vec<Expr> {
    let mut out = Vec::new();
    for (near, far) in [(&a.end_a, &a.end_b), (&a.end_b, &a.end_a)] {
        let mut push = |op: RelOp, bound: u32| {
            let v = format!("{}_{}", a.name, far.role_name);
            let nav = Expr::untyped(ExprKind::Nav {
                recv: Box::new(Expr::untyped(ExprKind::Var(v.clone()))),
                role: far.role_name.clone(),
            });
            let size = Expr::untyped(ExprKind::CollectionOp {
                recv: Box::new(nav),
                op: CollOp::Size,
                args: vec![],
            });
            let cmp = Expr::untyped(ExprKind::Rel {
                op,
                lhs: Box::new(size),
                rhs: Box::new(Expr::untyped(ExprKind::IntLit(bound as i64))),
            });
            let all = Expr::untyped(ExprKind::AllInstances { class: near.class.clone() });
            out.push(Expr::untyped(ExprKind::Iterate {
                recv: Box::new(all),
                kind: IterKind::ForAll,
                var: v,
                body: Box::new(cmp),
            }));
        };
        if far.lower > 0 {
            push(RelOp::Ge, far.lower);
        }
        if let Some(u) = far.upper {
            push(RelOp::Le, u);
        }
    }
    out
}

/// Convenience used by tests and the brute-force oracle: the link count an
/// object has on a given far end.
pub fn link_count(i: &InstanceModel, m: &DataModel, obj: &ObjectId, role: &str) -> Option<usize> {
    let o = i.object(obj)?;
    let (a, far, _near) = m.navigation(&o.class, role)?;
    let far_is_b = std::ptr::eq(far, &a.end_b);
    Some(i.navigate(a, far_is_b, obj).len())
}

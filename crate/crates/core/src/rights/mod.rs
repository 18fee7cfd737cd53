//! The rights-function language: a loop-free expression language whose
//! programs are embedded in certificates and decide whether a request is
//! allowed.
//!
//! A program is a sequence of `var name = expr;` bindings followed by one
//! final expression (or `if (c) a; else b;`). The same form may appear in
//! parentheses as a block whose bindings are local to it, so any program
//! can be wrapped as `(isLast) && (program)`. The final value is coerced to
//! a decision by truthiness. Evaluation is pure and charged in steps: every
//! AST node costs one step and size-dependent string work costs one extra
//! step per 64 bytes. Any parse error, runtime error or budget exhaustion
//! denies.
//!
//! ```
//! use codecaps::rights::{evaluate_source, EvalContext, Verdict};
//! use codecaps::rights::Value;
//! use std::collections::BTreeMap;
//!
//! let mut req = BTreeMap::new();
//! req.insert("type".to_string(), Value::str("READ"));
//! req.insert("offset".to_string(), Value::Int(300));
//! let ctx = EvalContext::from_values(vec![Value::record(BTreeMap::new())], 0, Value::record(req), 0, None);
//! let out = evaluate_source(r#"request.type == "READ" && request.offset >= 256"#, &ctx, 10_000);
//! assert_eq!(out.decision, Verdict::Allow);
//! ```

mod eval;
mod lexer;
mod parser;
mod value;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::certchain::{
    Certificate, Heritage, RequestCert, ATTR_ISSUER_NAME, ATTR_ISSUER_PUBKEY, ATTR_PUBKEY,
    ATTR_SUBJECT_NAME,
};
pub use value::Value;

/// Default step budget for one rights-function evaluation.
pub const DEFAULT_STEP_BUDGET: u64 = 10_000;
/// Largest accepted program source.
pub const MAX_SOURCE_BYTES: usize = 64 * 1024;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Builtin {
    Len,
    Int,
    Str,
    StartsWith,
    IsLast,
}

impl Builtin {
    pub const ALL: [Builtin; 5] = [
        Builtin::Len,
        Builtin::Int,
        Builtin::Str,
        Builtin::StartsWith,
        Builtin::IsLast,
    ];

    pub fn from_name(name: &str) -> Option<Builtin> {
        Some(match name {
            "len" => Builtin::Len,
            "int" => Builtin::Int,
            "str" => Builtin::Str,
            "startsWith" => Builtin::StartsWith,
            "isLast" => Builtin::IsLast,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Len => "len",
            Builtin::Int => "int",
            Builtin::Str => "str",
            Builtin::StartsWith => "startsWith",
            Builtin::IsLast => "isLast",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Builtin::StartsWith => 2,
            Builtin::IsLast => 0,
            _ => 1,
        }
    }

    pub fn semantics(self) -> &'static str {
        match self {
            Builtin::Len => "length of a string (characters), list or record",
            Builtin::Int => "parse a decimal string into an integer; error if not numeric",
            Builtin::Str => "render any value as a string",
            Builtin::StartsWith => "true iff the first string starts with the second",
            Builtin::IsLast => "true iff idx == len(heritage) - 1; usable bare as `isLast`",
        }
    }
}

/// `(name, arity, semantics)` for every builtin.
pub fn builtin_table() -> Vec<(&'static str, usize, &'static str)> {
    Builtin::ALL
        .iter()
        .map(|b| (b.name(), b.arity(), b.semantics()))
        .collect()
}

/// A parsed rights function. Cheap to share between threads.
#[derive(Clone)]
pub struct RightsProgram {
    source: String,
    ast: parser::Ast,
}

impl RightsProgram {
    pub fn parse(source: &str) -> Result<Self, ParseError> {
        Ok(RightsProgram {
            source: source.to_string(),
            ast: parser::parse(source)?,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

impl fmt::Debug for RightsProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("RightsProgram").field(&self.source).finish()
    }
}

pub fn parse_program(source: &str) -> Result<RightsProgram, ParseError> {
    RightsProgram::parse(source)
}

/// Everything a rights function can see.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalContext {
    /// List of certificate records.
    pub heritage: Value,
    /// 0-based position of the certificate being evaluated.
    pub idx: usize,
    pub request: Value,
    /// Server clock, seconds since the epoch.
    pub now: i64,
    /// Read-only object snapshot, when the hosting service provides one.
    pub state: Option<Value>,
}

impl EvalContext {
    pub fn new(
        heritage: &Heritage,
        idx: usize,
        request: &RequestCert,
        now: i64,
        state: Option<Value>,
    ) -> Self {
        EvalContext {
            heritage: heritage_value(heritage),
            idx,
            request: attrs_record(request.attrs()),
            now,
            state,
        }
    }

    pub fn from_values(
        heritage: Vec<Value>,
        idx: usize,
        request: Value,
        now: i64,
        state: Option<Value>,
    ) -> Self {
        EvalContext {
            heritage: Value::list(heritage),
            idx,
            request,
            now,
            state,
        }
    }

    pub fn heritage_len(&self) -> usize {
        match &self.heritage {
            Value::List(l) => l.len(),
            _ => 0,
        }
    }

    pub fn with_idx(&self, idx: usize) -> Self {
        EvalContext {
            idx,
            ..self.clone()
        }
    }
}

pub fn attrs_record(attrs: &crate::certchain::AttrMap) -> Value {
    Value::record(
        attrs
            .iter()
            .map(|(k, v)| (k.clone(), Value::from(v)))
            .collect(),
    )
}

/// Record view of a certificate: all attributes, plus `subject` and
/// `issuer` (the display names when present, otherwise the key hex).
pub fn certificate_value(cert: &Certificate) -> Value {
    let mut fields: BTreeMap<String, Value> = cert
        .attrs()
        .iter()
        .map(|(k, v)| (k.clone(), Value::from(v)))
        .collect();
    let subject = cert
        .str_attr(ATTR_SUBJECT_NAME)
        .or_else(|| cert.str_attr(ATTR_PUBKEY))
        .unwrap_or("");
    let issuer = cert
        .str_attr(ATTR_ISSUER_NAME)
        .or_else(|| cert.str_attr(ATTR_ISSUER_PUBKEY))
        .unwrap_or("");
    fields.insert("subject".into(), Value::str(subject));
    fields.insert("issuer".into(), Value::str(issuer));
    Value::record(fields)
}

pub fn heritage_value(h: &Heritage) -> Value {
    Value::list(h.certs().iter().map(certificate_value).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Verdict {
    Allow,
    Deny,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cause {
    Normal,
    ParseError,
    RuntimeError,
    StepBudgetExceeded,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalOutcome {
    pub decision: Verdict,
    pub cause: Cause,
    pub steps_used: u64,
    /// Diagnostic for non-normal causes.
    pub message: Option<String>,
}

impl EvalOutcome {
    pub fn allowed(&self) -> bool {
        self.decision == Verdict::Allow
    }

    fn denied(cause: Cause, steps_used: u64, message: String) -> Self {
        EvalOutcome {
            decision: Verdict::Deny,
            cause,
            steps_used,
            message: Some(message),
        }
    }
}

/// Runs `program` against `ctx` within `budget` steps.
pub fn evaluate(program: &RightsProgram, ctx: &EvalContext, budget: u64) -> EvalOutcome {
    if ctx.idx >= ctx.heritage_len() {
        return EvalOutcome::denied(
            Cause::RuntimeError,
            0,
            format!("idx {} outside heritage of length {}", ctx.idx, ctx.heritage_len()),
        );
    }
    let mut machine = eval::Machine::new(ctx, budget);
    match machine.run(&program.ast) {
        Ok(v) => EvalOutcome {
            decision: if v.truthy() { Verdict::Allow } else { Verdict::Deny },
            cause: Cause::Normal,
            steps_used: machine.steps,
            message: None,
        },
        Err(eval::Fault::Runtime(msg)) => {
            EvalOutcome::denied(Cause::RuntimeError, machine.steps, msg)
        }
        Err(eval::Fault::Budget) => EvalOutcome::denied(
            Cause::StepBudgetExceeded,
            machine.steps,
            format!("step budget of {budget} exhausted"),
        ),
    }
}

/// Parses and evaluates in one go; parse failures deny with
/// [`Cause::ParseError`].
pub fn evaluate_source(source: &str, ctx: &EvalContext, budget: u64) -> EvalOutcome {
    match RightsProgram::parse(source) {
        Ok(p) => evaluate(&p, ctx, budget),
        Err(e) => EvalOutcome::denied(Cause::ParseError, 0, e.to_string()),
    }
}

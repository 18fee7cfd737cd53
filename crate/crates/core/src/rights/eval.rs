use std::cmp::Ordering;

use super::parser::{Ast, BinOp, CtxVar, Expr, Kind};
use super::value::Value;
use super::{Builtin, EvalContext};

/// Bytes of string or structure work covered by one step.
const BYTES_PER_STEP: usize = 64;

pub(crate) enum Fault {
    Runtime(String),
    Budget,
}

fn runtime<T>(msg: impl Into<String>) -> Result<T, Fault> {
    Err(Fault::Runtime(msg.into()))
}

pub(crate) struct Machine<'a> {
    ctx: &'a EvalContext,
    locals: Vec<Value>,
    pub steps: u64,
    budget: u64,
}

impl<'a> Machine<'a> {
    pub fn new(ctx: &'a EvalContext, budget: u64) -> Self {
        Machine {
            ctx,
            locals: Vec::new(),
            steps: 0,
            budget,
        }
    }

    fn charge(&mut self, n: u64) -> Result<(), Fault> {
        self.steps = self.steps.saturating_add(n);
        if self.steps > self.budget {
            self.steps = self.budget;
            return Err(Fault::Budget);
        }
        Ok(())
    }

    fn charge_size(&mut self, bytes: usize) -> Result<(), Fault> {
        self.charge((bytes / BYTES_PER_STEP) as u64)
    }

    pub fn run(&mut self, ast: &Ast) -> Result<Value, Fault> {
        for binding in &ast.bindings {
            let v = self.eval(binding)?;
            self.locals.push(v);
        }
        self.eval(&ast.result)
    }

    fn eval(&mut self, e: &Expr) -> Result<Value, Fault> {
        self.charge(1)?;
        match &e.kind {
            Kind::Lit(v) => Ok(v.clone()),
            Kind::Local(slot) => Ok(self.locals[*slot].clone()),
            Kind::Ctx(var) => Ok(match var {
                CtxVar::Heritage => self.ctx.heritage.clone(),
                CtxVar::Idx => Value::Int(self.ctx.idx as i64),
                CtxVar::Request => self.ctx.request.clone(),
                CtxVar::Now => Value::Int(self.ctx.now),
                CtxVar::State => self.ctx.state.clone().unwrap_or(Value::Null),
            }),
            Kind::Field(target, name) => match self.eval(target)? {
                Value::Record(fields) => match fields.get(name) {
                    Some(v) => Ok(v.clone()),
                    None => runtime(format!("record has no field `{name}`")),
                },
                other => runtime(format!("cannot read field `{name}` of {}", other.type_name())),
            },
            Kind::Index(target, index) => {
                let target = self.eval(target)?;
                let index = self.eval(index)?;
                match (&target, &index) {
                    (Value::List(items), Value::Int(i)) => usize::try_from(*i)
                        .ok()
                        .and_then(|i| items.get(i))
                        .cloned()
                        .map_or_else(|| runtime(format!("index {i} out of range")), Ok),
                    (Value::Record(fields), Value::Str(k)) => match fields.get(&**k) {
                        Some(v) => Ok(v.clone()),
                        None => runtime(format!("record has no field `{k}`")),
                    },
                    _ => runtime(format!(
                        "cannot index {} with {}",
                        target.type_name(),
                        index.type_name()
                    )),
                }
            }
            Kind::Call(builtin, args) => self.call(*builtin, args),
            Kind::Not(inner) => Ok(Value::Bool(!self.eval(inner)?.truthy())),
            Kind::Neg(inner) => match self.eval(inner)? {
                Value::Int(i) => i
                    .checked_neg()
                    .map(Value::Int)
                    .map_or_else(|| runtime("integer overflow"), Ok),
                other => runtime(format!("cannot negate {}", other.type_name())),
            },
            Kind::And(a, b) => {
                if !self.eval(a)?.truthy() {
                    return Ok(Value::Bool(false));
                }
                Ok(Value::Bool(self.eval(b)?.truthy()))
            }
            Kind::Or(a, b) => {
                if self.eval(a)?.truthy() {
                    return Ok(Value::Bool(true));
                }
                Ok(Value::Bool(self.eval(b)?.truthy()))
            }
            Kind::Cond(c, a, b) => {
                if self.eval(c)?.truthy() {
                    self.eval(a)
                } else {
                    self.eval(b)
                }
            }
            Kind::Block(bindings, result) => {
                let scope = self.locals.len();
                for binding in bindings {
                    let v = self.eval(binding)?;
                    self.locals.push(v);
                }
                let v = self.eval(result);
                self.locals.truncate(scope);
                v
            }
            Kind::Binary(op, a, b) => {
                let a = self.eval(a)?;
                let b = self.eval(b)?;
                self.binary(*op, a, b)
            }
        }
    }

    fn binary(&mut self, op: BinOp, a: Value, b: Value) -> Result<Value, Fault> {
        let mismatch = |a: &Value, b: &Value| {
            runtime(format!(
                "operator {op:?} not defined for {} and {}",
                a.type_name(),
                b.type_name()
            ))
        };
        match op {
            BinOp::Eq | BinOp::Ne => {
                self.charge_size(a.weight().min(b.weight()))?;
                let eq = a == b;
                Ok(Value::Bool(if op == BinOp::Eq { eq } else { !eq }))
            }
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                let ord = match (&a, &b) {
                    (Value::Int(x), Value::Int(y)) => x.cmp(y),
                    (Value::Str(x), Value::Str(y)) => {
                        self.charge_size(x.len().min(y.len()))?;
                        x.as_bytes().cmp(y.as_bytes())
                    }
                    _ => return mismatch(&a, &b),
                };
                Ok(Value::Bool(match op {
                    BinOp::Lt => ord == Ordering::Less,
                    BinOp::Le => ord != Ordering::Greater,
                    BinOp::Gt => ord == Ordering::Greater,
                    _ => ord != Ordering::Less,
                }))
            }
            BinOp::Add => match (&a, &b) {
                (Value::Int(x), Value::Int(y)) => checked(x.checked_add(*y)),
                (Value::Str(x), Value::Str(y)) => {
                    self.charge_size(x.len() + y.len())?;
                    let mut s = String::with_capacity(x.len() + y.len());
                    s.push_str(x);
                    s.push_str(y);
                    Ok(Value::str(&s))
                }
                _ => mismatch(&a, &b),
            },
            BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Rem => {
                let (Value::Int(x), Value::Int(y)) = (&a, &b) else {
                    return mismatch(&a, &b);
                };
                if matches!(op, BinOp::Div | BinOp::Rem) && *y == 0 {
                    return runtime("division by zero");
                }
                checked(match op {
                    BinOp::Sub => x.checked_sub(*y),
                    BinOp::Mul => x.checked_mul(*y),
                    BinOp::Div => x.checked_div(*y),
                    _ => x.checked_rem(*y),
                })
            }
        }
    }

    fn call(&mut self, builtin: Builtin, args: &[Expr]) -> Result<Value, Fault> {
        let mut vals = Vec::with_capacity(args.len());
        for a in args {
            vals.push(self.eval(a)?);
        }
        match builtin {
            Builtin::Len => match &vals[0] {
                Value::Str(s) => Ok(Value::Int(s.chars().count() as i64)),
                Value::List(l) => Ok(Value::Int(l.len() as i64)),
                Value::Record(r) => Ok(Value::Int(r.len() as i64)),
                other => runtime(format!("len() not defined for {}", other.type_name())),
            },
            Builtin::Int => match &vals[0] {
                Value::Int(i) => Ok(Value::Int(*i)),
                Value::Str(s) => {
                    let t = s.trim();
                    let digits = t.strip_prefix(['-', '+']).unwrap_or(t);
                    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                        return runtime(format!("int(): `{s}` is not an integer"));
                    }
                    t.parse::<i64>()
                        .map(Value::Int)
                        .map_or_else(|_| runtime(format!("int(): `{s}` out of range")), Ok)
                }
                other => runtime(format!("int() not defined for {}", other.type_name())),
            },
            Builtin::Str => {
                let v = &vals[0];
                self.charge_size(v.weight())?;
                Ok(match v {
                    Value::Str(_) => v.clone(),
                    other => Value::str(&other.to_string()),
                })
            }
            Builtin::StartsWith => match (&vals[0], &vals[1]) {
                (Value::Str(s), Value::Str(p)) => {
                    self.charge_size(p.len())?;
                    Ok(Value::Bool(s.starts_with(&**p)))
                }
                (a, b) => runtime(format!(
                    "startsWith() not defined for {} and {}",
                    a.type_name(),
                    b.type_name()
                )),
            },
            Builtin::IsLast => match &self.ctx.heritage {
                Value::List(items) => Ok(Value::Bool(self.ctx.idx + 1 == items.len())),
                _ => runtime("heritage is not a list"),
            },
        }
    }
}

fn checked(v: Option<i64>) -> Result<Value, Fault> {
    v.map(Value::Int)
        .map_or_else(|| runtime("integer overflow"), Ok)
}

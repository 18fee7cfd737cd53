use super::lexer::{tokenize, Pos, Tok, Token};
use super::value::Value;
use super::{Builtin, ParseError, MAX_SOURCE_BYTES};

const MAX_NESTING: usize = 64;
const MAX_HEIGHT: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum CtxVar {
    Heritage,
    Idx,
    Request,
    Now,
    State,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
    Rem,
}

#[derive(Clone, Debug)]
pub(crate) enum Kind {
    Lit(Value),
    Ctx(CtxVar),
    Local(usize),
    Field(Box<Expr>, String),
    Index(Box<Expr>, Box<Expr>),
    Call(Builtin, Vec<Expr>),
    Not(Box<Expr>),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Cond(Box<Expr>, Box<Expr>, Box<Expr>),
    /// Parenthesized program: bindings scoped to the block, then a result.
    Block(Vec<Expr>, Box<Expr>),
}

/// AST node with its cached height, which is capped at parse time so
/// evaluation and drop recursion stay shallow.
#[derive(Clone, Debug)]
pub(crate) struct Expr {
    pub kind: Kind,
    pub height: usize,
}

impl Expr {
    fn leaf(kind: Kind) -> Expr {
        Expr { kind, height: 1 }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Ast {
    /// `var` bindings, evaluated in order into slots `0..n`.
    pub bindings: Vec<Expr>,
    pub result: Expr,
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    depth: usize,
    locals: Vec<String>,
}

pub(crate) fn parse(src: &str) -> Result<Ast, ParseError> {
    if src.len() > MAX_SOURCE_BYTES {
        return Err(ParseError {
            line: 1,
            column: 1,
            message: format!("source exceeds {MAX_SOURCE_BYTES} bytes"),
        });
    }
    let mut p = Parser {
        tokens: tokenize(src)?,
        pos: 0,
        depth: 0,
        locals: Vec::new(),
    };
    p.program()
}

fn is_reserved(name: &str) -> bool {
    matches!(name, "heritage" | "idx" | "request" | "now" | "state") || Builtin::from_name(name).is_some()
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn here(&self) -> Pos {
        self.tokens[self.pos].pos
    }

    fn advance(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if t != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        let pos = self.here();
        Err(ParseError {
            line: pos.line,
            column: pos.column,
            message: message.into(),
        })
    }

    fn unexpected<T>(&self, wanted: &str) -> Result<T, ParseError> {
        let found = match self.peek() {
            Tok::Eof => "end of input".to_string(),
            t => format!("{t:?}"),
        };
        self.error(format!("expected {wanted}, found {found}"))
    }

    fn node(&self, kind: Kind) -> Result<Expr, ParseError> {
        let child_height = match &kind {
            Kind::Lit(_) | Kind::Ctx(_) | Kind::Local(_) => 0,
            Kind::Field(e, _) | Kind::Not(e) | Kind::Neg(e) => e.height,
            Kind::Index(a, b) | Kind::Binary(_, a, b) | Kind::And(a, b) | Kind::Or(a, b) => {
                a.height.max(b.height)
            }
            Kind::Call(_, args) => args.iter().map(|a| a.height).max().unwrap_or(0),
            Kind::Cond(a, b, c) => a.height.max(b.height).max(c.height),
            Kind::Block(bindings, result) => bindings
                .iter()
                .map(|b| b.height)
                .fold(result.height, usize::max),
        };
        if child_height >= MAX_HEIGHT {
            return self.error("expression nested too deeply");
        }
        Ok(Expr {
            kind,
            height: child_height + 1,
        })
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, wanted: &str) -> Result<(), ParseError> {
        if self.eat(&tok) {
            Ok(())
        } else {
            self.unexpected(wanted)
        }
    }

    fn program(&mut self) -> Result<Ast, ParseError> {
        let (bindings, result) = self.sequence()?;
        self.eat(&Tok::Semi);
        if *self.peek() != Tok::Eof {
            return self.unexpected("end of program");
        }
        Ok(Ast { bindings, result })
    }

    /// `var` bindings followed by a final expression or `if` statement.
    /// Bound names stay in scope; callers that open a block drop them.
    fn sequence(&mut self) -> Result<(Vec<Expr>, Expr), ParseError> {
        let mut bindings = Vec::new();
        while self.eat(&Tok::Var) {
            let Tok::Ident(name) = self.peek().clone() else {
                return self.unexpected("identifier after `var`");
            };
            if is_reserved(&name) {
                return self.error(format!("`{name}` is reserved and cannot be rebound"));
            }
            self.advance();
            self.expect(Tok::Assign, "`=`")?;
            let value = self.expr()?;
            self.expect(Tok::Semi, "`;`")?;
            bindings.push(value);
            self.locals.push(name);
        }
        let result = if self.eat(&Tok::If) {
            self.expect(Tok::LParen, "`(`")?;
            let cond = self.expr()?;
            self.expect(Tok::RParen, "`)`")?;
            let then = self.expr()?;
            self.expect(Tok::Semi, "`;`")?;
            self.expect(Tok::Else, "`else`")?;
            let otherwise = self.expr()?;
            self.node(Kind::Cond(Box::new(cond), Box::new(then), Box::new(otherwise)))?
        } else {
            self.expr()?
        };
        Ok((bindings, result))
    }

    fn block(&mut self) -> Result<Expr, ParseError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return self.error("expression nested too deeply");
        }
        let scope = self.locals.len();
        let seq = self.sequence();
        self.locals.truncate(scope);
        self.depth -= 1;
        let (bindings, result) = seq?;
        self.eat(&Tok::Semi);
        self.expect(Tok::RParen, "`)`")?;
        if bindings.is_empty() {
            return Ok(result);
        }
        self.node(Kind::Block(bindings, Box::new(result)))
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return self.error("expression nested too deeply");
        }
        let e = self.ternary();
        self.depth -= 1;
        e
    }

    fn ternary(&mut self) -> Result<Expr, ParseError> {
        let cond = self.or()?;
        if self.eat(&Tok::Question) {
            let then = self.expr()?;
            self.expect(Tok::Colon, "`:`")?;
            let otherwise = self.expr()?;
            return self.node(Kind::Cond(Box::new(cond), Box::new(then), Box::new(otherwise)));
        }
        Ok(cond)
    }

    fn or(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and()?;
        while self.eat(&Tok::OrOr) {
            let rhs = self.and()?;
            lhs = self.node(Kind::Or(Box::new(lhs), Box::new(rhs)))?;
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.comparison()?;
        while self.eat(&Tok::AndAnd) {
            let rhs = self.comparison()?;
            lhs = self.node(Kind::And(Box::new(lhs), Box::new(rhs)))?;
        }
        Ok(lhs)
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.additive()?;
        loop {
            let op = match self.peek() {
                Tok::Eq => BinOp::Eq,
                Tok::Ne => BinOp::Ne,
                Tok::Lt => BinOp::Lt,
                Tok::Le => BinOp::Le,
                Tok::Gt => BinOp::Gt,
                Tok::Ge => BinOp::Ge,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.additive()?;
            lhs = self.node(Kind::Binary(op, Box::new(lhs), Box::new(rhs)))?;
        }
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.multiplicative()?;
            lhs = self.node(Kind::Binary(op, Box::new(lhs), Box::new(rhs)))?;
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                Tok::Percent => BinOp::Rem,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.unary()?;
            lhs = self.node(Kind::Binary(op, Box::new(lhs), Box::new(rhs)))?;
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return self.error("expression nested too deeply");
        }
        let e = match self.peek() {
            Tok::Bang => {
                self.advance();
                self.unary().and_then(|e| self.node(Kind::Not(Box::new(e))))
            }
            Tok::Minus => {
                self.advance();
                self.unary().and_then(|e| self.node(Kind::Neg(Box::new(e))))
            }
            _ => self.postfix(),
        };
        self.depth -= 1;
        e
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.primary()?;
        loop {
            match self.peek() {
                Tok::Dot => {
                    self.advance();
                    let Tok::Ident(name) = self.peek().clone() else {
                        return self.unexpected("field name after `.`");
                    };
                    self.advance();
                    e = self.node(Kind::Field(Box::new(e), name))?;
                }
                Tok::LBracket => {
                    self.advance();
                    let index = self.expr()?;
                    self.expect(Tok::RBracket, "`]`")?;
                    e = self.node(Kind::Index(Box::new(e), Box::new(index)))?;
                }
                Tok::LParen => return self.error("only builtin functions can be called"),
                _ => return Ok(e),
            }
        }
    }

    fn call_args(&mut self) -> Result<Vec<Expr>, ParseError> {
        let mut args = Vec::new();
        if self.eat(&Tok::RParen) {
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            if self.eat(&Tok::RParen) {
                return Ok(args);
            }
            self.expect(Tok::Comma, "`,` or `)`")?;
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let start = self.here();
        if matches!(
            self.peek(),
            Tok::Eof | Tok::RParen | Tok::RBracket | Tok::Comma | Tok::Semi | Tok::Colon
        ) {
            return self.unexpected("an expression");
        }
        match self.advance() {
            Tok::Int(i) => Ok(Expr::leaf(Kind::Lit(Value::Int(i)))),
            Tok::Str(s) => Ok(Expr::leaf(Kind::Lit(Value::str(&s)))),
            Tok::True => Ok(Expr::leaf(Kind::Lit(Value::Bool(true)))),
            Tok::False => Ok(Expr::leaf(Kind::Lit(Value::Bool(false)))),
            Tok::Null => Ok(Expr::leaf(Kind::Lit(Value::Null))),
            Tok::LParen => {
                if matches!(self.peek(), Tok::Var | Tok::If) {
                    return self.block();
                }
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    let Some(builtin) = Builtin::from_name(&name) else {
                        return Err(ParseError {
                            line: start.line,
                            column: start.column,
                            message: format!("unknown function `{name}`"),
                        });
                    };
                    self.advance();
                    let args = self.call_args()?;
                    if args.len() != builtin.arity() {
                        return Err(ParseError {
                            line: start.line,
                            column: start.column,
                            message: format!(
                                "`{name}` takes {} argument(s), got {}",
                                builtin.arity(),
                                args.len()
                            ),
                        });
                    }
                    return self.node(Kind::Call(builtin, args));
                }
                if let Some(slot) = self.locals.iter().rposition(|l| *l == name) {
                    return Ok(Expr::leaf(Kind::Local(slot)));
                }
                let ctx = match name.as_str() {
                    "heritage" => CtxVar::Heritage,
                    "idx" => CtxVar::Idx,
                    "request" => CtxVar::Request,
                    "now" => CtxVar::Now,
                    "state" => CtxVar::State,
                    "isLast" => return Ok(Expr::leaf(Kind::Call(Builtin::IsLast, Vec::new()))),
                    _ => {
                        let message = if Builtin::from_name(&name).is_some() {
                            format!("builtin `{name}` must be called")
                        } else {
                            format!("unknown identifier `{name}`")
                        };
                        return Err(ParseError {
                            line: start.line,
                            column: start.column,
                            message,
                        });
                    }
                };
                Ok(Expr::leaf(Kind::Ctx(ctx)))
            }
            _ => {
                self.pos -= 1;
                self.unexpected("an expression")
            }
        }
    }
}

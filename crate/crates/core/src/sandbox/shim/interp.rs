//! A deliberately small Python-flavoured interpreter for the desk-scale
//! worker.
//!
//! Supported: one statement per logical line (brackets may span lines),
//! `import`/`from … import`, assignment (names, attributes, subscripts),
//! `raise Name("msg")`, `pass`, `#` comments, and expressions over ints,
//! floats, strings, booleans, `None`, lists, `+ - * / // % **`, calls with
//! keyword arguments, attribute access and subscripts. Control flow and
//! function definitions are not supported.

use std::collections::HashMap;
use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{load_dataset, Dataset};
use crate::sandbox::protocol::StreamName;

/// A 1×1 transparent PNG written by `savefig`.
const TINY_PNG: &[u8] = &[
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00,
    0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1f, 0x15, 0xc4, 0x89, 0x00, 0x00, 0x00,
    0x0d, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x00, 0x01, 0x00, 0x00, 0x05, 0x00, 0x01, 0x0d, 0x0a, 0x2d,
    0xb4, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82,
];

const BUILTINS: &[&str] = &[
    "print",
    "str",
    "int",
    "float",
    "len",
    "round",
    "abs",
    "min",
    "max",
    "sleep",
    "savefig",
    "write_file",
    "read_dataset",
    "seeded_uniform",
    "warn",
];

#[derive(Debug, Clone)]
pub enum Value {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<Value>),
    Module(String),
    /// Result of a stub tool or of an operation on an opaque object.
    Opaque(String),
    Dataset(Arc<Dataset>),
    Builtin(&'static str),
    Tool(String),
}

impl Value {
    fn type_name(&self) -> &'static str {
        match self {
            Value::None => "NoneType",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Str(_) => "str",
            Value::List(_) => "list",
            Value::Module(_) => "module",
            Value::Opaque(_) => "object",
            Value::Dataset(_) => "AnnData",
            Value::Builtin(_) | Value::Tool(_) => "builtin_function_or_method",
        }
    }

    fn repr(&self) -> String {
        match self {
            Value::Str(s) => {
                let q = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
                let mut out = String::from(q);
                for c in s.chars() {
                    match c {
                        '\n' => out.push_str("\\n"),
                        '\t' => out.push_str("\\t"),
                        '\\' => out.push_str("\\\\"),
                        c if c == q => {
                            out.push('\\');
                            out.push(c);
                        }
                        c => out.push(c),
                    }
                }
                out.push(q);
                out
            }
            other => other.to_string(),
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            Value::Bool(b) => Some(f64::from(u8::from(*b))),
            _ => None,
        }
    }
}

pub fn format_float(f: f64) -> String {
    if f.is_nan() {
        return "nan".into();
    }
    if f.is_infinite() {
        return if f > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let a = f.abs();
    if a != 0.0 && !(1e-4..1e16).contains(&a) {
        let s = format!("{f:e}");
        let (mant, exp) = s.split_once('e').expect("exponent form");
        let exp: i32 = exp.parse().expect("exponent parses");
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mant}e{sign}{:02}", exp.abs());
    }
    let s = format!("{f}");
    if s.contains('.') {
        s
    } else {
        format!("{s}.0")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::None => f.write_str("None"),
            Value::Bool(b) => f.write_str(if *b { "True" } else { "False" }),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => f.write_str(&format_float(*x)),
            Value::Str(s) => f.write_str(s),
            Value::List(items) => {
                let parts: Vec<String> = items.iter().map(Value::repr).collect();
                write!(f, "[{}]", parts.join(", "))
            }
            Value::Module(m) => write!(f, "<module '{m}'>"),
            Value::Opaque(d) => f.write_str(d),
            Value::Dataset(d) => write!(f, "AnnData object with n_obs × n_vars = {} × {}", d.n_obs(), d.n_var()),
            Value::Builtin(n) => write!(f, "<built-in function {n}>"),
            Value::Tool(n) => write!(f, "<function {n}>"),
        }
    }
}

/// A Python-style exception raised by a cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PyError {
    pub name: String,
    pub message: String,
    /// 1-based line within the cell.
    pub line: usize,
}

#[derive(Debug)]
pub enum Interrupt {
    Error(PyError),
    /// The virtual clock ran past the cell budget.
    Timeout,
}

type Flow<T> = Result<T, Interrupt>;

fn err<T>(name: &str, message: impl Into<String>) -> Flow<T> {
    Err(Interrupt::Error(PyError { name: name.into(), message: message.into(), line: 0 }))
}

#[derive(Debug, Clone, Copy)]
pub enum Clock {
    /// `sleep` blocks the thread.
    Real,
    /// `sleep` advances a counter; exceeding the budget interrupts the cell.
    Virtual { budget_secs: f64 },
}

// ---------------------------------------------------------------- lexing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(i64),
    Float(f64),
    Str(String),
    Ident(String),
    Op(&'static str),
}

const OPS: &[&str] = &["**", "//", "==", "!=", "<=", ">=", "+=", "-=", "+", "-", "*", "/", "%", "(", ")", "[", "]", ",", "=", ".", ":", "<", ">", "{", "}"];

fn lex(src: &str) -> Flow<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) {
            let start = i;
            let mut is_float = false;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '_' || chars[i] == '.') {
                is_float |= chars[i] == '.';
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                is_float = true;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let text: String = chars[start..i].iter().filter(|&&c| c != '_').collect();
            let tok = if is_float {
                text.parse().map(Tok::Float).ok()
            } else {
                text.parse().map(Tok::Int).ok()
            };
            match tok {
                Some(t) => out.push(t),
                None => return err("SyntaxError", format!("invalid number literal '{text}'")),
            }
        } else if c == '"' || c == '\'' {
            let q = c;
            i += 1;
            let mut s = String::new();
            loop {
                let Some(&c) = chars.get(i) else {
                    return err("SyntaxError", "unterminated string literal");
                };
                i += 1;
                if c == q {
                    break;
                }
                if c == '\n' {
                    return err("SyntaxError", "unterminated string literal");
                }
                if c != '\\' {
                    s.push(c);
                    continue;
                }
                let Some(&e) = chars.get(i) else {
                    return err("SyntaxError", "unterminated string literal");
                };
                i += 1;
                match e {
                    'n' => s.push('\n'),
                    't' => s.push('\t'),
                    'r' => s.push('\r'),
                    '0' => s.push('\0'),
                    '\\' | '\'' | '"' => s.push(e),
                    'u' => {
                        let hex: String = chars.get(i..i + 4).map(|h| h.iter().collect()).unwrap_or_default();
                        match u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32) {
                            Some(ch) if hex.len() == 4 => {
                                s.push(ch);
                                i += 4;
                            }
                            _ => return err("SyntaxError", "truncated \\uXXXX escape"),
                        }
                    }
                    other => {
                        s.push('\\');
                        s.push(other);
                    }
                }
            }
            out.push(Tok::Str(s));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else {
            let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
            match OPS.iter().find(|op| rest.starts_with(**op)) {
                Some(op) => {
                    out.push(Tok::Op(op));
                    i += op.len();
                }
                None => return err("SyntaxError", format!("invalid character '{c}'")),
            }
        }
    }
    Ok(out)
}

/// Splits a cell into logical lines `(first physical line, text)`, joining
/// physical lines while brackets are open.
fn logical_lines(code: &str) -> Flow<Vec<(usize, String)>> {
    let mut out = Vec::new();
    let mut buf = String::new();
    let mut start = 0;
    let mut depth: i32 = 0;
    for (idx, line) in code.lines().enumerate() {
        if buf.is_empty() {
            start = idx + 1;
        } else {
            buf.push('\n');
        }
        buf.push_str(line);
        let mut quote: Option<char> = None;
        let mut escaped = false;
        for c in line.chars() {
            match quote {
                Some(q) => {
                    if escaped {
                        escaped = false;
                    } else if c == '\\' {
                        escaped = true;
                    } else if c == q {
                        quote = None;
                    }
                }
                None => match c {
                    '#' => break,
                    '"' | '\'' => quote = Some(c),
                    '(' | '[' | '{' => depth += 1,
                    ')' | ']' | '}' => depth -= 1,
                    _ => {}
                },
            }
        }
        if depth <= 0 {
            out.push((start, std::mem::take(&mut buf)));
            depth = 0;
        }
    }
    if !buf.is_empty() {
        return Err(Interrupt::Error(PyError {
            name: "SyntaxError".into(),
            message: "unexpected EOF while parsing".into(),
            line: start,
        }));
    }
    Ok(out)
}

// ---------------------------------------------------------------- parsing

#[derive(Debug, Clone)]
enum Expr {
    Lit(Value),
    Name(String),
    List(Vec<Expr>),
    Neg(Box<Expr>),
    Bin(&'static str, Box<Expr>, Box<Expr>),
    Attr(Box<Expr>, String),
    Index(Box<Expr>, Box<Expr>),
    Call(Box<Expr>, Vec<Expr>, Vec<(String, Expr)>),
}

enum Stmt {
    Import(Vec<(String, String)>),
    Assign(Expr, Expr),
    AugAssign(&'static str, Expr, Expr),
    Raise(Expr),
    Expr(Expr),
    Pass,
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn is_op(&self, op: &str) -> bool {
        matches!(self.peek(), Some(Tok::Op(o)) if *o == op)
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.is_op(op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_op(&mut self, op: &str) -> Flow<()> {
        if self.eat_op(op) {
            Ok(())
        } else {
            err("SyntaxError", format!("expected '{op}'"))
        }
    }

    fn ident(&mut self) -> Flow<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => err("SyntaxError", "expected a name"),
        }
    }

    fn dotted(&mut self) -> Flow<String> {
        let mut name = self.ident()?;
        while self.eat_op(".") {
            name.push('.');
            name.push_str(&self.ident()?);
        }
        Ok(name)
    }

    fn statement(&mut self) -> Flow<Stmt> {
        let stmt = match self.peek() {
            Some(Tok::Ident(k)) if k == "import" => {
                self.pos += 1;
                let mut binds = Vec::new();
                loop {
                    let module = self.dotted()?;
                    let alias = if matches!(self.peek(), Some(Tok::Ident(a)) if a == "as") {
                        self.pos += 1;
                        self.ident()?
                    } else {
                        module.split('.').next().unwrap_or_default().to_string()
                    };
                    // `import a.b` binds `a`; `import a.b as c` binds the submodule.
                    let target = if alias.contains('.') || module.starts_with(&format!("{alias}.")) {
                        module.split('.').next().unwrap_or_default().to_string()
                    } else {
                        module
                    };
                    binds.push((alias, target));
                    if !self.eat_op(",") {
                        break;
                    }
                }
                Stmt::Import(binds)
            }
            Some(Tok::Ident(k)) if k == "from" => {
                self.pos += 1;
                let module = self.dotted()?;
                match self.peek() {
                    Some(Tok::Ident(k)) if k == "import" => self.pos += 1,
                    _ => return err("SyntaxError", "expected 'import'"),
                }
                let mut binds = Vec::new();
                loop {
                    let name = self.ident()?;
                    let alias = if matches!(self.peek(), Some(Tok::Ident(a)) if a == "as") {
                        self.pos += 1;
                        self.ident()?
                    } else {
                        name.clone()
                    };
                    binds.push((alias, format!("{module}.{name}")));
                    if !self.eat_op(",") {
                        break;
                    }
                }
                Stmt::Import(binds)
            }
            Some(Tok::Ident(k)) if k == "raise" => {
                self.pos += 1;
                Stmt::Raise(self.expr()?)
            }
            Some(Tok::Ident(k)) if k == "pass" => {
                self.pos += 1;
                Stmt::Pass
            }
            Some(Tok::Ident(k))
                if matches!(
                    k.as_str(),
                    "if" | "for" | "while" | "def" | "class" | "with" | "try" | "return" | "lambda" | "elif" | "else"
                ) =>
            {
                return err("SyntaxError", format!("'{k}' blocks are not supported by this worker"));
            }
            _ => {
                let lhs = self.expr()?;
                if self.eat_op("=") {
                    if !matches!(lhs, Expr::Name(_) | Expr::Attr(..) | Expr::Index(..)) {
                        return err("SyntaxError", "cannot assign to expression");
                    }
                    Stmt::Assign(lhs, self.expr()?)
                } else if self.eat_op("+=") {
                    Stmt::AugAssign("+", lhs, self.expr()?)
                } else if self.eat_op("-=") {
                    Stmt::AugAssign("-", lhs, self.expr()?)
                } else {
                    Stmt::Expr(lhs)
                }
            }
        };
        if self.pos != self.toks.len() {
            return err("SyntaxError", "invalid syntax");
        }
        Ok(stmt)
    }

    fn expr(&mut self) -> Flow<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat_op("+") {
                "+"
            } else if self.eat_op("-") {
                "-"
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Flow<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = ["*", "//", "/", "%"].into_iter().find(|op| self.is_op(op));
            let Some(op) = op else { return Ok(lhs) };
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Flow<Expr> {
        if self.eat_op("-") {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat_op("+") {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Flow<Expr> {
        let base = self.postfix()?;
        if self.eat_op("**") {
            return Ok(Expr::Bin("**", Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn postfix(&mut self) -> Flow<Expr> {
        let mut e = self.atom()?;
        loop {
            if self.eat_op(".") {
                e = Expr::Attr(Box::new(e), self.ident()?);
            } else if self.eat_op("[") {
                let idx = self.expr()?;
                self.expect_op("]")?;
                e = Expr::Index(Box::new(e), Box::new(idx));
            } else if self.eat_op("(") {
                let (mut args, mut kwargs) = (Vec::new(), Vec::new());
                while !self.is_op(")") {
                    let is_kw = matches!(self.peek(), Some(Tok::Ident(_)))
                        && matches!(self.toks.get(self.pos + 1), Some(Tok::Op("=")));
                    if is_kw {
                        let k = self.ident()?;
                        self.pos += 1;
                        kwargs.push((k, self.expr()?));
                    } else if kwargs.is_empty() {
                        args.push(self.expr()?);
                    } else {
                        return err("SyntaxError", "positional argument follows keyword argument");
                    }
                    if !self.eat_op(",") {
                        break;
                    }
                }
                self.expect_op(")")?;
                e = Expr::Call(Box::new(e), args, kwargs);
            } else {
                return Ok(e);
            }
        }
    }

    fn atom(&mut self) -> Flow<Expr> {
        let Some(tok) = self.peek().cloned() else {
            return err("SyntaxError", "unexpected end of line");
        };
        self.pos += 1;
        Ok(match tok {
            Tok::Int(i) => Expr::Lit(Value::Int(i)),
            Tok::Float(f) => Expr::Lit(Value::Float(f)),
            Tok::Str(mut s) => {
                // Adjacent literals concatenate.
                while let Some(Tok::Str(next)) = self.peek() {
                    s.push_str(next);
                    self.pos += 1;
                }
                Expr::Lit(Value::Str(s))
            }
            Tok::Ident(n) => match n.as_str() {
                "True" => Expr::Lit(Value::Bool(true)),
                "False" => Expr::Lit(Value::Bool(false)),
                "None" => Expr::Lit(Value::None),
                _ => Expr::Name(n),
            },
            Tok::Op("(") => {
                let e = self.expr()?;
                self.expect_op(")")?;
                e
            }
            Tok::Op("[") => {
                let mut items = Vec::new();
                while !self.is_op("]") {
                    items.push(self.expr()?);
                    if !self.eat_op(",") {
                        break;
                    }
                }
                self.expect_op("]")?;
                Expr::List(items)
            }
            Tok::Op(op) => return err("SyntaxError", format!("invalid syntax near '{op}'")),
        })
    }
}

// ---------------------------------------------------------------- evaluation

pub struct Interpreter {
    vars: HashMap<String, Value>,
    artifact_dir: PathBuf,
    clock: Clock,
    slept_secs: f64,
    output: Vec<(StreamName, String)>,
}

/// Everything one cell produced.
#[derive(Debug)]
pub struct CellRun {
    /// Writes in order, consecutive writes to the same stream merged.
    pub output: Vec<(StreamName, String)>,
    pub result: Result<(), Interrupt>,
}

impl Interpreter {
    pub fn new(artifact_dir: impl Into<PathBuf>, clock: Clock) -> Self {
        let artifact_dir = artifact_dir.into();
        let mut vars = HashMap::new();
        vars.insert("ARTIFACTS".to_string(), Value::Str(artifact_dir.display().to_string()));
        Self { vars, artifact_dir, clock, slept_secs: 0.0, output: Vec::new() }
    }

    pub fn set_clock(&mut self, clock: Clock) {
        self.clock = clock;
    }

    pub fn run_cell(&mut self, code: &str) -> CellRun {
        self.slept_secs = 0.0;
        let result = self.run_lines(code);
        CellRun { output: std::mem::take(&mut self.output), result }
    }

    fn run_lines(&mut self, code: &str) -> Flow<()> {
        for (line, text) in logical_lines(code)? {
            if text.trim().is_empty() || text.trim_start().starts_with('#') {
                continue;
            }
            let at_line = |i: Interrupt| match i {
                Interrupt::Error(mut e) => {
                    if e.line == 0 {
                        e.line = line;
                    }
                    Interrupt::Error(e)
                }
                t => t,
            };
            if text.starts_with([' ', '\t']) {
                return Err(at_line(Interrupt::Error(PyError {
                    name: "IndentationError".into(),
                    message: "unexpected indent".into(),
                    line,
                })));
            }
            let toks = lex(&text).map_err(at_line)?;
            let stmt = Parser { toks, pos: 0 }.statement().map_err(at_line)?;
            self.exec(stmt).map_err(at_line)?;
        }
        Ok(())
    }

    fn write(&mut self, stream: StreamName, text: &str) {
        if text.is_empty() {
            return;
        }
        match self.output.last_mut() {
            Some((s, buf)) if *s == stream => buf.push_str(text),
            _ => self.output.push((stream, text.to_string())),
        }
    }

    fn exec(&mut self, stmt: Stmt) -> Flow<()> {
        match stmt {
            Stmt::Pass => Ok(()),
            Stmt::Import(binds) => {
                for (alias, module) in binds {
                    self.vars.insert(alias, Value::Module(module));
                }
                Ok(())
            }
            Stmt::Raise(e) => {
                let (name, message) = match e {
                    Expr::Call(f, args, _) => match *f {
                        Expr::Name(n) => {
                            let msg = match args.into_iter().next() {
                                Some(a) => self.eval(&a)?.to_string(),
                                None => String::new(),
                            };
                            (n, msg)
                        }
                        _ => return err("TypeError", "exceptions must derive from BaseException"),
                    },
                    Expr::Name(n) => (n, String::new()),
                    _ => return err("TypeError", "exceptions must derive from BaseException"),
                };
                err(&name, message)
            }
            Stmt::Assign(target, value) => {
                let v = self.eval(&value)?;
                self.assign(&target, v)
            }
            Stmt::AugAssign(op, target, value) => {
                let cur = self.eval(&target)?;
                let rhs = self.eval(&value)?;
                let v = binary(op, cur, rhs)?;
                self.assign(&target, v)
            }
            Stmt::Expr(e) => self.eval(&e).map(drop),
        }
    }

    fn assign(&mut self, target: &Expr, v: Value) -> Flow<()> {
        match target {
            Expr::Name(n) => {
                self.vars.insert(n.clone(), v);
                Ok(())
            }
            // Attribute and item stores on opaque objects are accepted and dropped.
            Expr::Attr(base, attr) => match self.eval(base)? {
                Value::Opaque(_) | Value::Module(_) | Value::Dataset(_) => Ok(()),
                other => err("AttributeError", format!("'{}' object has no attribute '{attr}'", other.type_name())),
            },
            Expr::Index(base, idx) => {
                self.eval(idx)?;
                match self.eval(base)? {
                    Value::Opaque(_) | Value::Module(_) | Value::Dataset(_) => Ok(()),
                    other => err("TypeError", format!("'{}' object does not support item assignment", other.type_name())),
                }
            }
            _ => err("SyntaxError", "cannot assign to expression"),
        }
    }

    fn lookup(&self, name: &str) -> Flow<Value> {
        if let Some(v) = self.vars.get(name) {
            return Ok(v.clone());
        }
        if let Some(b) = BUILTINS.iter().find(|b| **b == name) {
            return Ok(Value::Builtin(b));
        }
        if name.ends_with("_like") && name.len() > 5 {
            return Ok(Value::Tool(name.to_string()));
        }
        err("NameError", format!("name '{name}' is not defined"))
    }

    fn eval(&mut self, e: &Expr) -> Flow<Value> {
        match e {
            Expr::Lit(v) => Ok(v.clone()),
            Expr::Name(n) => self.lookup(n),
            Expr::List(items) => Ok(Value::List(items.iter().map(|i| self.eval(i)).collect::<Flow<_>>()?)),
            Expr::Neg(inner) => match self.eval(inner)? {
                Value::Int(i) => Ok(Value::Int(i.checked_neg().ok_or_else(overflow)?)),
                Value::Float(f) => Ok(Value::Float(-f)),
                Value::Bool(b) => Ok(Value::Int(-i64::from(b))),
                v => err("TypeError", format!("bad operand type for unary -: '{}'", v.type_name())),
            },
            Expr::Bin(op, l, r) => {
                let l = self.eval(l)?;
                let r = self.eval(r)?;
                binary(op, l, r)
            }
            Expr::Attr(base, attr) => match self.eval(base)? {
                Value::Module(m) => Ok(Value::Module(format!("{m}.{attr}"))),
                Value::Opaque(d) => Ok(Value::Opaque(format!("{d}.{attr}"))),
                Value::Dataset(d) => Ok(match attr.as_str() {
                    "n_obs" => Value::Int(d.n_obs() as i64),
                    "n_vars" => Value::Int(d.n_var() as i64),
                    _ => Value::Opaque(format!("<AnnData.{attr}>")),
                }),
                other => err("AttributeError", format!("'{}' object has no attribute '{attr}'", other.type_name())),
            },
            Expr::Index(base, idx) => {
                let base = self.eval(base)?;
                let idx = self.eval(idx)?;
                index(base, idx)
            }
            Expr::Call(f, args, kwargs) => {
                let f = self.eval(f)?;
                let args: Vec<Value> = args.iter().map(|a| self.eval(a)).collect::<Flow<_>>()?;
                let mut kw = Vec::with_capacity(kwargs.len());
                for (k, v) in kwargs {
                    kw.push((k.clone(), self.eval(v)?));
                }
                self.call(f, args, kw)
            }
        }
    }

    fn call(&mut self, f: Value, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> Flow<Value> {
        match f {
            Value::Builtin(name) => self.builtin(name, args, kwargs),
            Value::Tool(name) => Ok(Value::Opaque(format!("<{name} result>"))),
            Value::Module(m) => Ok(Value::Opaque(format!("<{m}(...)>"))),
            Value::Opaque(d) => Ok(Value::Opaque(format!("{d}(...)"))),
            other => err("TypeError", format!("'{}' object is not callable", other.type_name())),
        }
    }

    fn artifact_path(&self, raw: &str) -> Flow<PathBuf> {
        let p = Path::new(raw);
        let p = p.strip_prefix(&self.artifact_dir).unwrap_or(p);
        if p.is_absolute() || p.components().any(|c| !matches!(c, Component::Normal(_))) || raw.is_empty() {
            return err("PermissionError", format!("path must stay inside the artifact directory: '{raw}'"));
        }
        Ok(self.artifact_dir.join(p))
    }

    fn builtin(&mut self, name: &str, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> Flow<Value> {
        let kw = |k: &str| kwargs.iter().find(|(n, _)| n == k).map(|(_, v)| v.clone());
        let arity = |n: usize| -> Flow<()> {
            if args.len() == n {
                Ok(())
            } else {
                err("TypeError", format!("{name}() takes {n} positional argument(s) but {} were given", args.len()))
            }
        };
        let string = |v: &Value| -> Flow<String> {
            match v {
                Value::Str(s) => Ok(s.clone()),
                other => err("TypeError", format!("expected str, got {}", other.type_name())),
            }
        };
        let number = |v: &Value| -> Flow<f64> {
            v.as_f64().map_or_else(
                || err("TypeError", format!("must be real number, not {}", v.type_name())),
                Ok,
            )
        };
        let io_err = |e: std::io::Error| Interrupt::Error(PyError { name: "OSError".into(), message: e.to_string(), line: 0 });
        match name {
            "print" => {
                let sep = kw("sep").map_or_else(|| " ".to_string(), |v| v.to_string());
                let end = kw("end").map_or_else(|| "\n".to_string(), |v| v.to_string());
                let stream = match kw("file") {
                    Some(Value::Str(s)) if s == "stderr" => StreamName::Stderr,
                    Some(Value::Module(m)) if m == "sys.stderr" => StreamName::Stderr,
                    _ => StreamName::Stdout,
                };
                let text: Vec<String> = args.iter().map(Value::to_string).collect();
                let text = format!("{}{end}", text.join(&sep));
                self.write(stream, &text);
                Ok(Value::None)
            }
            "warn" => {
                arity(1)?;
                let text = format!("UserWarning: {}\n", args[0]);
                self.write(StreamName::Stderr, &text);
                Ok(Value::None)
            }
            "str" => {
                arity(1)?;
                Ok(Value::Str(args[0].to_string()))
            }
            "int" => {
                arity(1)?;
                match &args[0] {
                    Value::Int(i) => Ok(Value::Int(*i)),
                    Value::Bool(b) => Ok(Value::Int(i64::from(*b))),
                    Value::Float(f) if f.is_finite() => Ok(Value::Int(f.trunc() as i64)),
                    Value::Str(s) => s.trim().parse().map(Value::Int).or_else(|_| {
                        err("ValueError", format!("invalid literal for int() with base 10: {}", args[0].repr()))
                    }),
                    v => err("TypeError", format!("int() argument must be a string or a number, not '{}'", v.type_name())),
                }
            }
            "float" => {
                arity(1)?;
                match &args[0] {
                    Value::Str(s) => s.trim().parse().map(Value::Float).or_else(|_| {
                        err("ValueError", format!("could not convert string to float: {}", args[0].repr()))
                    }),
                    v => Ok(Value::Float(number(v)?)),
                }
            }
            "len" => {
                arity(1)?;
                match &args[0] {
                    Value::Str(s) => Ok(Value::Int(s.chars().count() as i64)),
                    Value::List(l) => Ok(Value::Int(l.len() as i64)),
                    Value::Dataset(d) => Ok(Value::Int(d.n_obs() as i64)),
                    v => err("TypeError", format!("object of type '{}' has no len()", v.type_name())),
                }
            }
            "abs" => {
                arity(1)?;
                match &args[0] {
                    Value::Int(i) => Ok(Value::Int(i.checked_abs().ok_or_else(overflow)?)),
                    v => Ok(Value::Float(number(v)?.abs())),
                }
            }
            "min" | "max" => {
                let items = match args.as_slice() {
                    [Value::List(l)] => l.clone(),
                    _ => args.clone(),
                };
                if items.is_empty() {
                    return err("ValueError", format!("{name}() arg is an empty sequence"));
                }
                let mut best = items[0].clone();
                for v in &items[1..] {
                    let (a, b) = (number(&best)?, number(v)?);
                    if (name == "min" && b < a) || (name == "max" && b > a) {
                        best = v.clone();
                    }
                }
                Ok(best)
            }
            "round" => {
                if args.is_empty() || args.len() > 2 {
                    return err("TypeError", "round() takes 1 or 2 arguments");
                }
                let x = number(&args[0])?;
                match args.get(1).or(kw("ndigits").as_ref()) {
                    None | Some(Value::None) => Ok(Value::Int(x.round_ties_even() as i64)),
                    Some(Value::Int(n)) => {
                        let n = (*n).clamp(0, 15) as usize;
                        Ok(Value::Float(format!("{x:.n$}").parse().unwrap_or(x)))
                    }
                    Some(v) => err("TypeError", format!("'{}' object cannot be interpreted as an integer", v.type_name())),
                }
            }
            "sleep" => {
                arity(1)?;
                let secs = number(&args[0])?;
                if secs < 0.0 || !secs.is_finite() {
                    return err("ValueError", "sleep length must be non-negative");
                }
                match self.clock {
                    Clock::Real => std::thread::sleep(Duration::from_secs_f64(secs)),
                    Clock::Virtual { budget_secs } => {
                        self.slept_secs += secs;
                        if self.slept_secs > budget_secs {
                            return Err(Interrupt::Timeout);
                        }
                    }
                }
                Ok(Value::None)
            }
            "savefig" => {
                arity(1)?;
                let path = self.artifact_path(&string(&args[0])?)?;
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir).map_err(io_err)?;
                }
                std::fs::write(&path, TINY_PNG).map_err(io_err)?;
                Ok(Value::None)
            }
            "write_file" => {
                arity(2)?;
                let path = self.artifact_path(&string(&args[0])?)?;
                let text = string(&args[1])?;
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir).map_err(io_err)?;
                }
                std::fs::write(&path, text).map_err(io_err)?;
                Ok(Value::None)
            }
            "read_dataset" => {
                arity(1)?;
                let path = string(&args[0])?;
                match load_dataset(Path::new(&path)) {
                    Ok(ds) => Ok(Value::Dataset(Arc::new(ds))),
                    Err(e) => err("ValueError", e.to_string()),
                }
            }
            "seeded_uniform" => {
                arity(1)?;
                let seed = match &args[0] {
                    Value::Int(i) => *i as u64,
                    v => return err("TypeError", format!("seed must be int, not {}", v.type_name())),
                };
                Ok(Value::Float(ChaCha8Rng::seed_from_u64(seed).random::<f64>()))
            }
            _ => err("NameError", format!("name '{name}' is not defined")),
        }
    }
}

fn overflow() -> Interrupt {
    Interrupt::Error(PyError { name: "OverflowError".into(), message: "integer overflow".into(), line: 0 })
}

fn index(base: Value, idx: Value) -> Flow<Value> {
    match (base, idx) {
        (Value::List(l), Value::Int(i)) => {
            let n = l.len() as i64;
            let j = if i < 0 { i + n } else { i };
            if (0..n).contains(&j) {
                Ok(l[j as usize].clone())
            } else {
                err("IndexError", "list index out of range")
            }
        }
        (Value::Str(s), Value::Int(i)) => {
            let chars: Vec<char> = s.chars().collect();
            let n = chars.len() as i64;
            let j = if i < 0 { i + n } else { i };
            if (0..n).contains(&j) {
                Ok(Value::Str(chars[j as usize].to_string()))
            } else {
                err("IndexError", "string index out of range")
            }
        }
        (Value::Opaque(d), i) => Ok(Value::Opaque(format!("{d}[{}]", i.repr()))),
        (Value::Module(m), i) => Ok(Value::Opaque(format!("{m}[{}]", i.repr()))),
        (Value::Dataset(_), i) => Ok(Value::Opaque(format!("<AnnData[{}]>", i.repr()))),
        (b, i) => err(
            "TypeError",
            format!("'{}' object is not subscriptable with '{}'", b.type_name(), i.type_name()),
        ),
    }
}

fn binary(op: &str, l: Value, r: Value) -> Flow<Value> {
    use Value::{Float, Int, List, Str};
    let unsupported = |l: &Value, r: &Value| {
        err(
            "TypeError",
            format!("unsupported operand type(s) for {op}: '{}' and '{}'", l.type_name(), r.type_name()),
        )
    };
    let li = match &l {
        Value::Bool(b) => Some(i64::from(*b)),
        Int(i) => Some(*i),
        _ => None,
    };
    let ri = match &r {
        Value::Bool(b) => Some(i64::from(*b)),
        Int(i) => Some(*i),
        _ => None,
    };
    match (op, &l, &r) {
        ("+", Str(a), Str(b)) => return Ok(Str(format!("{a}{b}"))),
        ("+", List(a), List(b)) => return Ok(List(a.iter().chain(b).cloned().collect())),
        ("*", Str(s), _) | ("*", _, Str(s)) => {
            let n = if matches!(l, Str(_)) { ri } else { li };
            return match n {
                Some(n) => Ok(Str(s.repeat(n.max(0) as usize))),
                None => err("TypeError", "can't multiply sequence by non-int"),
            };
        }
        ("%", Str(_), _) => return err("TypeError", "printf-style formatting is not supported by this worker"),
        _ => {}
    }
    if let (Some(a), Some(b)) = (li, ri) {
        return match op {
            "+" => a.checked_add(b).map(Int).ok_or_else(overflow),
            "-" => a.checked_sub(b).map(Int).ok_or_else(overflow),
            "*" => a.checked_mul(b).map(Int).ok_or_else(overflow),
            "/" if b == 0 => err("ZeroDivisionError", "division by zero"),
            "/" => Ok(Float(a as f64 / b as f64)),
            "//" | "%" if b == 0 => err("ZeroDivisionError", "integer division or modulo by zero"),
            "//" => Ok(Int(a.div_euclid(b) - i64::from(b < 0 && a.rem_euclid(b) != 0))),
            "%" => Ok(Int(a - b * (a.div_euclid(b) - i64::from(b < 0 && a.rem_euclid(b) != 0)))),
            "**" if b >= 0 => u32::try_from(b).ok().and_then(|e| a.checked_pow(e)).map(Int).ok_or_else(overflow),
            "**" => Ok(Float((a as f64).powf(b as f64))),
            _ => unsupported(&l, &r),
        };
    }
    let (Some(a), Some(b)) = (l.as_f64(), r.as_f64()) else {
        return unsupported(&l, &r);
    };
    match op {
        "+" => Ok(Float(a + b)),
        "-" => Ok(Float(a - b)),
        "*" => Ok(Float(a * b)),
        "/" | "//" | "%" if b == 0.0 => err("ZeroDivisionError", "float division by zero"),
        "/" => Ok(Float(a / b)),
        "//" => Ok(Float((a / b).floor())),
        "%" => Ok(Float(a - b * (a / b).floor())),
        "**" => Ok(Float(a.powf(b))),
        _ => unsupported(&l, &r),
    }
}

//! Export of forests as nested conditionals, plus an interpreter for the
//! exported text.
//!
//! The output is C-like: one `double tree_<i>(...)` function per tree and a
//! `predict` wrapper that sums the trees in order and divides by their count.
//! Literals use shortest round-trip formatting and comparisons are
//! `feature <= threshold`, so interpreting the text reproduces in-memory
//! predictions bit for bit. The accepted grammar:
//!
//! ```text
//! program  := function+
//! function := "double" IDENT "(" "double" IDENT ("," "double" IDENT)* ")" block
//! block    := "{" stmt* "}"
//! stmt     := "if" "(" IDENT "<=" NUMBER ")" block "else" block
//!           | "return" expr ";"
//!           | "double" IDENT "=" expr ";"
//!           | IDENT "+=" expr ";"
//! expr     := term ("/" term)?
//! term     := NUMBER | IDENT | IDENT "(" IDENT ("," IDENT)* ")"
//! ```
//!
//! `//` starts a line comment.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;

use super::{Node, RandomForest, RegressionTree};
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use crate::trace::{FeatureVector, FEATURE_COUNT, FEATURE_NAMES};

const ENTRY: &str = "predict";
const MAX_CALL_DEPTH: usize = 64;

fn parameter_names(n_features: usize) -> Vec<String> {
    if n_features == FEATURE_COUNT {
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..n_features).map(|i| format!("x{i}")).collect()
    }
}

pub fn export_conditional_code(forest: &RandomForest) -> String {
    let names = parameter_names(forest.n_features());
    let params = names.iter().map(|n| format!("double {n}")).collect::<Vec<_>>().join(", ");
    let args = names.join(", ");

    let mut out = String::new();
    writeln!(
        out,
        "// Random forest data-rate predictor: {} trees over {} features.",
        forest.trees().len(),
        names.len()
    )
    .unwrap();
    for (i, tree) in forest.trees().iter().enumerate() {
        writeln!(out, "\ndouble tree_{i}({params}) {{").unwrap();
        emit_node(&mut out, tree, 0, 1, &names);
        out.push_str("}\n");
    }
    writeln!(out, "\ndouble {ENTRY}({params}) {{").unwrap();
    out.push_str("    double sum = 0.0;\n");
    for i in 0..forest.trees().len() {
        writeln!(out, "    sum += tree_{i}({args});").unwrap();
    }
    writeln!(out, "    return sum / {:?};", forest.trees().len() as f64).unwrap();
    out.push_str("}\n");
    out
}

fn emit_node(out: &mut String, tree: &RegressionTree, index: usize, depth: usize, names: &[String]) {
    let pad = "    ".repeat(depth);
    match tree.nodes()[index] {
        Node::Leaf { value, .. } => writeln!(out, "{pad}return {value:?};").unwrap(),
        Node::Split {
            feature, threshold, left, right,
        } => {
            writeln!(out, "{pad}if ({} <= {threshold:?}) {{", names[feature]).unwrap();
            emit_node(out, tree, left, depth + 1, names);
            writeln!(out, "{pad}}} else {{").unwrap();
            emit_node(out, tree, right, depth + 1, names);
            writeln!(out, "{pad}}}").unwrap();
        }
    }
}

/// Parses `src` and evaluates its `predict` function at `x`.
pub fn eval_exported(src: &str, x: &FeatureVector) -> Result<f64> {
    ExportedModel::parse(src)?.eval(&x.to_array())
}

/// `n` random inputs for exercising a forest: each feature is drawn
/// uniformly from the span of that feature's split thresholds, widened by
/// one unit on both sides, so every branch is reachable.
pub fn random_inputs(forest: &RandomForest, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let width = forest.n_features();
    let mut lo = vec![f64::INFINITY; width];
    let mut hi = vec![f64::NEG_INFINITY; width];
    for tree in forest.trees() {
        for node in tree.nodes() {
            if let Node::Split {
                feature, threshold, ..
            } = *node
            {
                lo[feature] = lo[feature].min(threshold);
                hi[feature] = hi[feature].max(threshold);
            }
        }
    }
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            (0..width)
                .map(|f| {
                    if lo[f].is_finite() {
                        rng.random_range(lo[f] - 1.0..=hi[f] + 1.0)
                    } else {
                        rng.random_range(-1.0..=1.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// Checks that `src` reproduces `forest` bit for bit on `n` random inputs.
pub fn verify_export(forest: &RandomForest, src: &str, n: usize, seed: u64) -> Result<()> {
    let model = ExportedModel::parse(src)?;
    if model.arity() != forest.n_features() {
        return Err(Error::Format(format!(
            "exported code takes {} features, forest has {}",
            model.arity(),
            forest.n_features()
        )));
    }
    for x in random_inputs(forest, n, seed) {
        let expected = forest.predict_row(&x);
        let got = model.eval(&x)?;
        if got.to_bits() != expected.to_bits() {
            return Err(Error::Format(format!(
                "export mismatch at {x:?}: exported {got}, in-memory {expected}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Sym(&'static str),
}

#[derive(Debug, Clone)]
enum Expr {
    Number(f64),
    Var(String),
    Call(String, Vec<String>),
    Div(Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone)]
enum Stmt {
    If {
        var: String,
        threshold: f64,
        then: Vec<Stmt>,
        otherwise: Vec<Stmt>,
    },
    Return(Expr),
    Declare(String, Expr),
    AddAssign(String, Expr),
}

#[derive(Debug, Clone)]
struct Function {
    params: Vec<String>,
    body: Vec<Stmt>,
}

/// A parsed export, reusable across many evaluations.
#[derive(Debug, Clone)]
pub struct ExportedModel {
    functions: HashMap<String, Function>,
}

const SYMBOLS: [&str; 10] = ["<=", "+=", "(", ")", "{", "}", ";", ",", "=", "/"];

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>> {
    let mut tokens = Vec::new();
    for (line_idx, raw) in src.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = raw.split("//").next().unwrap_or("");
        let bytes = line.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                tokens.push((line_no, Token::Ident(line[start..i].to_string())));
            } else if c.is_ascii_digit() || c == '-' || c == '.' {
                let start = i;
                i += 1;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    let exp_sign = (d == '-' || d == '+') && matches!(bytes[i - 1], b'e' | b'E');
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let text = &line[start..i];
                let v: f64 = text.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("invalid number `{text}`"),
                })?;
                tokens.push((line_no, Token::Number(v)));
            } else if let Some(sym) = SYMBOLS.iter().find(|s| line[i..].starts_with(**s)) {
                tokens.push((line_no, Token::Sym(sym)));
                i += sym.len();
            } else {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unexpected character `{c}`"),
                });
            }
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
}

impl Parser {
    fn line(&self) -> usize {
        self.tokens
            .get(self.pos)
            .or(self.tokens.last())
            .map_or(1, |(l, _)| *l)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            line: self.line(),
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn sym(&mut self, s: &'static str) -> Result<()> {
        match self.next() {
            Some(Token::Sym(x)) if x == s => Ok(()),
            other => {
                self.pos -= 1;
                self.err(format!("expected `{s}`, found {other:?}"))
            }
        }
    }

    fn keyword(&mut self, k: &str) -> Result<()> {
        match self.next() {
            Some(Token::Ident(x)) if x == k => Ok(()),
            other => {
                self.pos -= 1;
                self.err(format!("expected `{k}`, found {other:?}"))
            }
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.next() {
            Some(Token::Ident(x)) if !matches!(x.as_str(), "double" | "if" | "else" | "return") => Ok(x),
            other => {
                self.pos -= 1;
                self.err(format!("expected identifier, found {other:?}"))
            }
        }
    }

    fn number(&mut self) -> Result<f64> {
        match self.next() {
            Some(Token::Number(v)) => Ok(v),
            other => {
                self.pos -= 1;
                self.err(format!("expected number, found {other:?}"))
            }
        }
    }

    fn function(&mut self) -> Result<(String, Function)> {
        self.keyword("double")?;
        let name = self.ident()?;
        self.sym("(")?;
        let mut params = Vec::new();
        loop {
            self.keyword("double")?;
            params.push(self.ident()?);
            if self.peek() == Some(&Token::Sym(",")) {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.sym(")")?;
        let body = self.block()?;
        Ok((name, Function { params, body }))
    }

    fn block(&mut self) -> Result<Vec<Stmt>> {
        self.sym("{")?;
        let mut stmts = Vec::new();
        while self.peek() != Some(&Token::Sym("}")) {
            if self.peek().is_none() {
                return self.err("unterminated block");
            }
            stmts.push(self.statement()?);
        }
        self.sym("}")?;
        Ok(stmts)
    }

    fn statement(&mut self) -> Result<Stmt> {
        match self.peek() {
            Some(Token::Ident(k)) if k == "if" => {
                self.pos += 1;
                self.sym("(")?;
                let var = self.ident()?;
                self.sym("<=")?;
                let threshold = self.number()?;
                self.sym(")")?;
                let then = self.block()?;
                self.keyword("else")?;
                let otherwise = self.block()?;
                Ok(Stmt::If {
                    var,
                    threshold,
                    then,
                    otherwise,
                })
            }
            Some(Token::Ident(k)) if k == "return" => {
                self.pos += 1;
                let e = self.expr()?;
                self.sym(";")?;
                Ok(Stmt::Return(e))
            }
            Some(Token::Ident(k)) if k == "double" => {
                self.pos += 1;
                let name = self.ident()?;
                self.sym("=")?;
                let e = self.expr()?;
                self.sym(";")?;
                Ok(Stmt::Declare(name, e))
            }
            _ => {
                let name = self.ident()?;
                self.sym("+=")?;
                let e = self.expr()?;
                self.sym(";")?;
                Ok(Stmt::AddAssign(name, e))
            }
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let lhs = self.term()?;
        if self.peek() == Some(&Token::Sym("/")) {
            self.pos += 1;
            let rhs = self.term()?;
            return Ok(Expr::Div(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        if let Some(Token::Number(v)) = self.peek() {
            let v = *v;
            self.pos += 1;
            return Ok(Expr::Number(v));
        }
        let name = self.ident()?;
        if self.peek() != Some(&Token::Sym("(")) {
            return Ok(Expr::Var(name));
        }
        self.pos += 1;
        let mut args = vec![self.ident()?];
        while self.peek() == Some(&Token::Sym(",")) {
            self.pos += 1;
            args.push(self.ident()?);
        }
        self.sym(")")?;
        Ok(Expr::Call(name, args))
    }
}

impl ExportedModel {
    pub fn parse(src: &str) -> Result<Self> {
        let mut parser = Parser {
            tokens: tokenize(src)?,
            pos: 0,
        };
        let mut functions = HashMap::new();
        while parser.peek().is_some() {
            let (name, f) = parser.function()?;
            if functions.insert(name.clone(), f).is_some() {
                return parser.err(format!("duplicate function `{name}`"));
            }
        }
        if !functions.contains_key(ENTRY) {
            return Err(Error::Parse {
                line: parser.line(),
                message: format!("no `{ENTRY}` function"),
            });
        }
        Ok(ExportedModel { functions })
    }

    /// Number of parameters of the entry function.
    pub fn arity(&self) -> usize {
        self.functions[ENTRY].params.len()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.call(ENTRY, x, 0)
    }

    fn call(&self, name: &str, args: &[f64], depth: usize) -> Result<f64> {
        if depth > MAX_CALL_DEPTH {
            return Err(Error::Format("exported code: call depth exceeded".into()));
        }
        let f = self
            .functions
            .get(name)
            .ok_or_else(|| Error::Format(format!("exported code: unknown function `{name}`")))?;
        if f.params.len() != args.len() {
            return Err(Error::Format(format!(
                "exported code: `{name}` takes {} arguments, got {}",
                f.params.len(),
                args.len()
            )));
        }
        let mut env: HashMap<&str, f64> = f.params.iter().map(String::as_str).zip(args.iter().copied()).collect();
        match self.run(&f.body, &mut env, depth)? {
            Some(v) => Ok(v),
            None => Err(Error::Format(format!("exported code: `{name}` returned nothing"))),
        }
    }

    fn run<'a>(&self, body: &'a [Stmt], env: &mut HashMap<&'a str, f64>, depth: usize) -> Result<Option<f64>> {
        for stmt in body {
            match stmt {
                Stmt::If {
                    var,
                    threshold,
                    then,
                    otherwise,
                } => {
                    let v = lookup(env, var)?;
                    let branch = if v <= *threshold { then } else { otherwise };
                    if let Some(r) = self.run(branch, env, depth)? {
                        return Ok(Some(r));
                    }
                }
                Stmt::Return(e) => return self.expr(e, env, depth).map(Some),
                Stmt::Declare(name, e) => {
                    let v = self.expr(e, env, depth)?;
                    env.insert(name, v);
                }
                Stmt::AddAssign(name, e) => {
                    let v = self.expr(e, env, depth)?;
                    let slot = env
                        .get_mut(name.as_str())
                        .ok_or_else(|| Error::Format(format!("exported code: undefined variable `{name}`")))?;
                    *slot += v;
                }
            }
        }
        Ok(None)
    }

    fn expr(&self, e: &Expr, env: &HashMap<&str, f64>, depth: usize) -> Result<f64> {
        match e {
            Expr::Number(v) => Ok(*v),
            Expr::Var(name) => lookup(env, name),
            Expr::Div(a, b) => Ok(self.expr(a, env, depth)? / self.expr(b, env, depth)?),
            Expr::Call(name, args) => {
                let values = args.iter().map(|a| lookup(env, a)).collect::<Result<Vec<_>>>()?;
                self.call(name, &values, depth + 1)
            }
        }
    }
}

fn lookup(env: &HashMap<&str, f64>, name: &str) -> Result<f64> {
    env.get(name)
        .copied()
        .ok_or_else(|| Error::Format(format!("exported code: undefined variable `{name}`")))
}

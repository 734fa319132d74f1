//! Admissible weights `Q`: a small expression language over point
//! coordinates, plus tabulated weights defined on a finite point set.
//!
//! Grammar (ASCII, whitespace ignored):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := number | var | func '(' expr ')' | factor '^' number | '(' expr ')' | '-' factor
//! var    := x | y | r | x1..xn | y1..yn        (x = Re z, y = Im z, r = |z|)
//! func   := log | exp | abs
//! ```

use std::collections::HashMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
enum Expr {
    Num(f64),
    Re(usize),
    Im(usize),
    Abs,
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
    Neg(Box<Expr>),
    Log(Box<Expr>),
    Exp(Box<Expr>),
    AbsOf(Box<Expr>),
}

impl Expr {
    fn eval<T: Real>(&self, z: &Point<T>) -> T {
        match self {
            Expr::Num(v) => T::lit(*v),
            Expr::Re(i) => z.coords().get(*i).map_or(T::nan(), |c| c.re),
            Expr::Im(i) => z.coords().get(*i).map_or(T::nan(), |c| c.im),
            Expr::Abs => z.norm(),
            Expr::Add(a, b) => a.eval(z) + b.eval(z),
            Expr::Sub(a, b) => a.eval(z) - b.eval(z),
            Expr::Mul(a, b) => a.eval(z) * b.eval(z),
            Expr::Div(a, b) => a.eval(z) / b.eval(z),
            Expr::Pow(a, e) => {
                let base = a.eval(z);
                if e.fract() == 0.0 && e.abs() <= 64.0 {
                    base.powi(*e as i32)
                } else {
                    base.powf(T::lit(*e))
                }
            }
            Expr::Neg(a) => -a.eval(z),
            Expr::Log(a) => a.eval(z).ln(),
            Expr::Exp(a) => a.eval(z).exp(),
            Expr::AbsOf(a) => a.eval(z).abs(),
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Re(i) | Expr::Im(i) => Some(*i),
            Expr::Num(_) | Expr::Abs => None,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                match (a.max_var(), b.max_var()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
            Expr::Pow(a, _) | Expr::Neg(a) | Expr::Log(a) | Expr::Exp(a) | Expr::AbsOf(a) => a.max_var(),
        }
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Expr(Expr),
    Table(Arc<HashMap<Vec<u64>, f64>>),
}

/// An admissible weight `Q`. Pointwise values may be `+inf`; `NaN` is read
/// as `+inf`.
#[derive(Clone, Debug)]
pub struct Weight {
    kind: Kind,
    source: String,
    hash: String,
}

impl PartialEq for Weight {
    fn eq(&self, other: &Self) -> bool {
        self.hash == other.hash
    }
}

/// Parse a weight expression.
pub fn parse_weight(source: &str) -> Result<Weight> {
    let mut p = Parser { src: source.as_bytes(), pos: 0 };
    p.skip_ws();
    if p.pos >= p.src.len() {
        return Err(Error::Syntax { offset: p.pos, message: "empty weight expression".into() });
    }
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(Error::Syntax { offset: p.pos, message: format!("unexpected `{}`", p.src[p.pos] as char) });
    }
    Ok(Weight { kind: Kind::Expr(e), source: source.to_string(), hash: digest(source.as_bytes()) })
}

fn digest(bytes: &[u8]) -> String {
    let h = Sha256::digest(bytes);
    hex::encode(&h[..8])
}

impl Weight {
    /// `Q = 0`.
    pub fn zero() -> Self {
        parse_weight("0").expect("constant weight parses")
    }

    /// A weight defined only on `points`; `+inf` elsewhere.
    pub fn tabulated<T: Real>(points: &[Point<T>], values: &[T]) -> Self {
        assert_eq!(points.len(), values.len());
        let mut map = HashMap::with_capacity(points.len());
        let mut hasher = Sha256::new();
        for (p, v) in points.iter().zip(values) {
            let key = p.key();
            for k in &key {
                hasher.update(k.to_le_bytes());
            }
            hasher.update(v.as_f64().to_bits().to_le_bytes());
            map.insert(key, v.as_f64());
        }
        let hash = hex::encode(&hasher.finalize()[..8]);
        Weight { kind: Kind::Table(Arc::new(map)), source: format!("<table:{hash}>"), hash }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Short identifier used to tag cached weighted quantities.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn is_zero(&self) -> bool {
        matches!(&self.kind, Kind::Expr(Expr::Num(v)) if *v == 0.0)
    }

    pub fn eval<T: Real>(&self, z: &Point<T>) -> T {
        let v = match &self.kind {
            Kind::Expr(e) => e.eval(z),
            Kind::Table(map) => map.get(&z.key()).map_or(T::infinity(), |&v| T::lit(v)),
        };
        if v.is_nan() {
            T::infinity()
        } else {
            v
        }
    }

    /// Values on a point list. `-inf` anywhere is rejected since `e^{-kQ}`
    /// would be unbounded.
    pub fn values_on<T: Real>(&self, points: &[Point<T>]) -> Result<Vec<T>> {
        if let Some(n) = points.first().map(|p| p.dim()) {
            self.check_dim(n)?;
        }
        let vals: Vec<T> = points.iter().map(|p| self.eval(p)).collect();
        if vals.iter().any(|v| *v == T::neg_infinity()) {
            return Err(Error::InvalidArgument(format!("weight `{}` is -inf on the point set", self.source)));
        }
        Ok(vals)
    }

    /// Fraction of `points` where `Q` is finite.
    pub fn admissibility_fraction<T: Real>(&self, points: &[Point<T>]) -> f64 {
        if points.is_empty() {
            return 0.0;
        }
        let finite = points.iter().filter(|p| self.eval(*p).is_finite()).count();
        finite as f64 / points.len() as f64
    }

    /// Reject weights referring to coordinates beyond `n`.
    pub fn check_dim(&self, n: usize) -> Result<()> {
        if let Kind::Expr(e) = &self.kind {
            if let Some(i) = e.max_var() {
                if i >= n {
                    return Err(Error::Dimension { expected: n, found: i + 1 });
                }
            }
        }
        Ok(())
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        match self.peek() {
            Some(x) if x == c => {
                self.pos += 1;
                Ok(())
            }
            Some(x) => Err(Error::Syntax { offset: self.pos, message: format!("expected `{}`, found `{}`", c as char, x as char) }),
            None => Err(Error::Syntax { offset: self.pos, message: format!("expected `{}`, found end of input", c as char) }),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == b'+' { Expr::Add(Box::new(lhs), Box::new(rhs)) } else { Expr::Sub(Box::new(lhs), Box::new(rhs)) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = if op == b'*' { Expr::Mul(Box::new(lhs), Box::new(rhs)) } else { Expr::Div(Box::new(lhs), Box::new(rhs)) };
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr> {
        let mut base = self.primary()?;
        while let Some(b'^') = self.peek() {
            self.pos += 1;
            self.skip_ws();
            let neg = if self.src.get(self.pos) == Some(&b'-') {
                self.pos += 1;
                true
            } else {
                false
            };
            let e = self.number()?;
            base = Expr::Pow(Box::new(base), if neg { -e } else { e });
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek() {
            None => Err(Error::Syntax { offset: self.pos, message: "unexpected end of input".into() }),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.factor()?)))
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => Ok(Expr::Num(self.number()?)),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => Err(Error::Syntax { offset: self.pos, message: format!("unexpected `{}`", c as char) }),
        }
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        text.parse::<f64>()
            .map_err(|_| Error::Syntax { offset: start, message: if text.is_empty() { "expected a number".into() } else { format!("malformed number `{text}`") } })
    }

    fn ident(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii identifier");
        let func = |p: &mut Self, wrap: fn(Box<Expr>) -> Expr| -> Result<Expr> {
            p.expect(b'(')?;
            let e = p.expr()?;
            p.expect(b')')?;
            Ok(wrap(Box::new(e)))
        };
        match name {
            "log" => func(self, Expr::Log),
            "exp" => func(self, Expr::Exp),
            "abs" => func(self, Expr::AbsOf),
            "x" => Ok(Expr::Re(0)),
            "y" => Ok(Expr::Im(0)),
            "r" => Ok(Expr::Abs),
            _ => {
                let (head, tail) = name.split_at(1);
                match (head, tail.parse::<usize>()) {
                    ("x", Ok(i)) if i >= 1 => Ok(Expr::Re(i - 1)),
                    ("y", Ok(i)) if i >= 1 => Ok(Expr::Im(i - 1)),
                    _ => Err(Error::UnknownIdentifier { name: name.to_string(), offset: start }),
                }
            }
        }
    }
}

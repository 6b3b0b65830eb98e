//! A small arithmetic expression grammar for coefficient definitions in
//! config files: `+ - * / ^`, unary minus, `ln exp cos sin abs`, constants
//! and the coordinates `x1 x2 x3`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Coord(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Fn1(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Ln,
    Exp,
    Cos,
    Sin,
    Abs,
    Sqrt,
}

impl Expr {
    pub fn eval(&self, x: [f64; 3]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Coord(i) => x[*i],
            Expr::Neg(e) => -e.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => a.eval(x).powf(b.eval(x)),
            Expr::Fn1(f, e) => {
                let v = e.eval(x);
                match f {
                    Func::Ln => v.ln(),
                    Func::Exp => v.exp(),
                    Func::Cos => v.cos(),
                    Func::Sin => v.sin(),
                    Func::Abs => v.abs(),
                    Func::Sqrt => v.sqrt(),
                }
            }
        }
    }
}

pub fn parse(text: &str) -> Result<Expr> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0 };
    let e = p.expr(0)?;
    if p.pos != p.tokens.len() {
        return Err(Error::Expr(format!(
            "unexpected trailing input at token {}",
            p.pos
        )));
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<Tok>> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Tok::Plus);
                i += 1;
            }
            '-' => {
                out.push(Tok::Minus);
                i += 1;
            }
            '*' => {
                out.push(Tok::Star);
                i += 1;
            }
            '/' => {
                out.push(Tok::Slash);
                i += 1;
            }
            '^' => {
                out.push(Tok::Caret);
                i += 1;
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || chars[i] == 'e'
                        || chars[i] == 'E'
                        || ((chars[i] == '+' || chars[i] == '-')
                            && i > start
                            && (chars[i - 1] == 'e' || chars[i - 1] == 'E')))
                {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let v = s
                    .parse::<f64>()
                    .map_err(|_| Error::Expr(format!("bad number literal '{s}'")))?;
                out.push(Tok::Num(v));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Tok::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(Error::Expr(format!("unexpected character '{other}'"))),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    // Pratt parser; `^` binds tightest and is right-associative
    fn expr(&mut self, min_bp: u8) -> Result<Expr> {
        let mut lhs = match self.next() {
            Some(Tok::Num(v)) => Expr::Num(v),
            Some(Tok::Ident(name)) => self.ident(name)?,
            Some(Tok::Minus) => Expr::Neg(Box::new(self.expr(5)?)),
            Some(Tok::Plus) => self.expr(5)?,
            Some(Tok::LParen) => {
                let e = self.expr(0)?;
                match self.next() {
                    Some(Tok::RParen) => e,
                    _ => return Err(Error::Expr("missing closing parenthesis".into())),
                }
            }
            other => return Err(Error::Expr(format!("unexpected token {other:?}"))),
        };
        loop {
            let (lbp, rbp, op): (u8, u8, fn(Box<Expr>, Box<Expr>) -> Expr) = match self.peek() {
                Some(Tok::Plus) => (1, 2, Expr::Add),
                Some(Tok::Minus) => (1, 2, Expr::Sub),
                Some(Tok::Star) => (3, 4, Expr::Mul),
                Some(Tok::Slash) => (3, 4, Expr::Div),
                Some(Tok::Caret) => (7, 6, Expr::Pow),
                _ => break,
            };
            if lbp < min_bp {
                break;
            }
            self.pos += 1;
            let rhs = self.expr(rbp)?;
            lhs = op(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn ident(&mut self, name: String) -> Result<Expr> {
        match name.as_str() {
            "x1" | "x" => return Ok(Expr::Coord(0)),
            "x2" | "y" => return Ok(Expr::Coord(1)),
            "x3" | "z" => return Ok(Expr::Coord(2)),
            "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
            "e" => return Ok(Expr::Num(std::f64::consts::E)),
            _ => {}
        }
        let f = match name.as_str() {
            "ln" => Func::Ln,
            "exp" => Func::Exp,
            "cos" => Func::Cos,
            "sin" => Func::Sin,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            _ => return Err(Error::Expr(format!("unknown identifier '{name}'"))),
        };
        match self.next() {
            Some(Tok::LParen) => {
                let arg = self.expr(0)?;
                match self.next() {
                    Some(Tok::RParen) => Ok(Expr::Fn1(f, Box::new(arg))),
                    _ => Err(Error::Expr(format!("missing ')' after {name}(..."))),
                }
            }
            _ => Err(Error::Expr(format!("expected '(' after function {name}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_evaluates() {
        let cases: Vec<(&str, [f64; 3], f64)> = vec![
            ("1 + 2 * 3", [0.0; 3], 7.0),
            ("(1 + 2) * 3", [0.0; 3], 9.0),
            ("2 ^ 3 ^ 2", [0.0; 3], 512.0),
            ("-x1 + x2 * x3", [1.0, 2.0, 3.0], 5.0),
            ("cos(pi * x1)", [1.0, 0.0, 0.0], -1.0),
            ("abs(-2) / 4", [0.0; 3], 0.5),
            ("exp(ln(5))", [0.0; 3], 5.0),
            ("1e-3 + 2.5e2", [0.0; 3], 250.001),
        ];
        for (text, x, want) in cases {
            let e = parse(text).unwrap();
            let got = e.eval(x);
            assert!(
                (got - want).abs() <= 1e-15 * want.abs().max(1.0),
                "{text}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse("1 +").is_err());
        assert!(parse("foo(2)").is_err());
        assert!(parse("(1").is_err());
        assert!(parse("1 2").is_err());
        assert!(parse("ln 3").is_err());
    }

    #[test]
    fn singular_drift_profile() {
        // the radial drift -x/(|x|^2 ln|x|) expressed componentwise
        let e = parse("-x1 / ((x1^2 + x2^2 + x3^2) * ln(sqrt(x1^2 + x2^2 + x3^2)))").unwrap();
        let x = [0.1, 0.05, 0.02];
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let want = -x[0] / (r2 * r2.sqrt().ln());
        assert!((e.eval(x) - want).abs() < 1e-15 * want.abs());
    }
}

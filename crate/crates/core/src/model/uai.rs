//! UAI competition text formats for models and evidence.
//!
//! Model file: a `MARKOV` or `BAYES` keyword, the variable count, one
//! cardinality per variable, the factor count, one scope line per factor
//! (arity followed by variable ids), then one table per factor in declaration
//! order (entry count followed by the entries, last scope variable fastest).
//!
//! Evidence file: the number of observations followed by `variable value` pairs.

use std::fmt::Write as _;
use std::str::FromStr;

use super::{Evidence, Factor, Model, ModelKind, VarId};
use crate::error::{Error, Result};

struct Token<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

struct Tokens<'a> {
    items: Vec<Token<'a>>,
    next: usize,
    end: (usize, usize),
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        let mut end = (1, 1);
        for (ln, line) in text.lines().enumerate() {
            let mut rest = line;
            let mut col = 0;
            while let Some(start) = rest.find(|c: char| !c.is_whitespace()) {
                let len = rest[start..]
                    .find(char::is_whitespace)
                    .unwrap_or(rest.len() - start);
                items.push(Token {
                    text: &rest[start..start + len],
                    line: ln + 1,
                    column: col + start + 1,
                });
                col += start + len;
                rest = &rest[start + len..];
            }
            end = (ln + 1, line.len() + 1);
        }
        Tokens {
            items,
            next: 0,
            end,
        }
    }

    fn error_here(&self, message: impl Into<String>) -> Error {
        let (line, column) = match self.items.get(self.next) {
            Some(t) => (t.line, t.column),
            None => self.end,
        };
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }

    fn next<T: FromStr>(&mut self, what: &str) -> Result<T> {
        let Some(tok) = self.items.get(self.next) else {
            return Err(self.error_here(format!("unexpected end of input, expected {what}")));
        };
        let value = tok.text.parse::<T>().map_err(|_| Error::Parse {
            line: tok.line,
            column: tok.column,
            message: format!("expected {what}, found `{}`", tok.text),
        })?;
        self.next += 1;
        Ok(value)
    }

    fn keyword(&mut self) -> Result<&'a str> {
        let Some(tok) = self.items.get(self.next) else {
            return Err(self.error_here("empty input, expected MARKOV or BAYES"));
        };
        self.next += 1;
        Ok(tok.text)
    }

    fn at_end(&self) -> bool {
        self.next >= self.items.len()
    }
}

/// Parses a model in UAI format.
pub fn parse_uai(text: &str) -> Result<Model> {
    let mut toks = Tokens::new(text);
    let kind = match toks.keyword()?.to_ascii_uppercase().as_str() {
        "MARKOV" => ModelKind::Markov,
        "BAYES" => ModelKind::Bayes,
        other => {
            toks.next -= 1;
            return Err(toks.error_here(format!("unknown model kind `{other}`")));
        }
    };
    let n: usize = toks.next("variable count")?;
    let mut cards = Vec::with_capacity(n);
    for v in 0..n {
        let k: usize = toks.next("cardinality")?;
        if k == 0 {
            return Err(Error::Structure(format!("variable {v} has cardinality 0")));
        }
        cards.push(k);
    }
    let nf: usize = toks.next("factor count")?;
    let mut scopes = Vec::with_capacity(nf);
    for i in 0..nf {
        let arity: usize = toks.next("scope size")?;
        let mut scope = Vec::with_capacity(arity);
        for _ in 0..arity {
            let v: VarId = toks.next("variable id")?;
            if v >= n {
                return Err(Error::Structure(format!(
                    "factor {i} references variable {v}, only {n} declared"
                )));
            }
            if scope.contains(&v) {
                return Err(Error::Structure(format!("factor {i} repeats variable {v}")));
            }
            scope.push(v);
        }
        scopes.push(scope);
    }
    let mut factors = Vec::with_capacity(nf);
    for (i, scope) in scopes.into_iter().enumerate() {
        let fcards: Vec<usize> = scope.iter().map(|&v| cards[v]).collect();
        let expected = super::table_size(&fcards)?;
        let count: usize = toks.next("table entry count")?;
        if count != expected {
            return Err(Error::Structure(format!(
                "factor {i} declares {count} entries, its scope needs {expected}"
            )));
        }
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            table.push(toks.next::<f64>("table entry")?);
        }
        factors.push(Factor::new(scope, fcards, table).map_err(|e| match e {
            Error::Structure(m) => Error::Structure(format!("factor {i}: {m}")),
            other => other,
        })?);
    }
    if !toks.at_end() {
        return Err(toks.error_here("trailing tokens after the last table"));
    }
    Model::new(cards, factors, kind)
}

/// Parses a UAI evidence file.
pub fn parse_evidence(text: &str) -> Result<Evidence> {
    let mut toks = Tokens::new(text);
    if toks.at_end() {
        return Ok(Evidence::new());
    }
    let count: usize = toks.next("observation count")?;
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let v: VarId = toks.next("variable id")?;
        let x: usize = toks.next("observed value")?;
        pairs.push((v, x));
    }
    if !toks.at_end() {
        return Err(toks.error_here("trailing tokens after the last observation"));
    }
    Evidence::from_pairs(pairs)
}

/// Renders `model` in UAI format. Values use Rust's shortest round-trip float
/// formatting, so parsing the output reproduces the tables bit for bit.
pub fn write_uai(model: &Model) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", model.kind().keyword());
    let _ = writeln!(out, "{}", model.num_vars());
    let cards: Vec<String> = model.cards().iter().map(usize::to_string).collect();
    let _ = writeln!(out, "{}", cards.join(" "));
    let _ = writeln!(out, "{}", model.factors().len());
    for f in model.factors() {
        let mut line = f.scope().len().to_string();
        for v in f.scope() {
            let _ = write!(line, " {v}");
        }
        let _ = writeln!(out, "{line}");
    }
    for f in model.factors() {
        let _ = writeln!(out, "\n{}", f.len());
        let vals: Vec<String> = f.table().iter().map(|x| format!("{x:?}")).collect();
        let _ = writeln!(out, " {}", vals.join(" "));
    }
    out
}

pub fn write_evidence(e: &Evidence) -> String {
    let mut out = e.len().to_string();
    for (v, x) in e.iter() {
        let _ = write!(out, " {v} {x}");
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_unary_markov() {
        let m = parse_uai("MARKOV\n1\n2\n1\n1 0\n\n2\n 0.3 0.7\n").unwrap();
        assert_eq!(m.kind(), ModelKind::Markov);
        assert_eq!(m.factors().len(), 1);
        assert_eq!(m.factors()[0].table(), &[0.3, 0.7]);
    }

    #[test]
    fn table_order_follows_declared_scope() {
        // f(X1, X2) ternary declared as scope "2 0 1"; entry <0,1> is index 1.
        let vals: Vec<String> = (0..9).map(|i| i.to_string()).collect();
        let text = format!("MARKOV\n2\n3 3\n1\n2 0 1\n9\n{}\n", vals.join(" "));
        let m = parse_uai(&text).unwrap();
        let a = [(0, 0), (1, 1)].into_iter().collect();
        assert_eq!(m.factors()[0].value(&a).unwrap(), 1.0);
    }

    #[test]
    fn malformed_token_reports_position() {
        let err = parse_uai("MARKOV\n1\nx\n").unwrap_err();
        match err {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (3, 1)),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_uai("MARKOV\n1\n2\n1\n1 0\n2\n0.5").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 7, .. }), "{err:?}");
        assert!(matches!(
            parse_uai("GRAPH\n1\n2\n0\n"),
            Err(Error::Parse {
                line: 1,
                column: 1,
                ..
            })
        ));
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(
            parse_uai("MARKOV\n1\n2\n1\n1 0\n3\n0.1 0.2 0.7\n"),
            Err(Error::Structure(_))
        ));
        assert!(matches!(
            parse_uai("MARKOV\n1\n0\n0\n"),
            Err(Error::Structure(_))
        ));
        assert!(matches!(
            parse_uai("MARKOV\n1\n2\n1\n1 4\n2\n0.5 0.5\n"),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn evidence_file() {
        let e = parse_evidence("2 0 1 3 0\n").unwrap();
        assert_eq!(e.get(0), Some(1));
        assert_eq!(e.get(3), Some(0));
        assert!(parse_evidence("").unwrap().is_empty());
        assert!(parse_evidence("2 0 1").is_err());
        assert!(parse_evidence("2 0 1 0 0").is_err());
    }

    #[test]
    fn writer_round_trips() {
        let text = "BAYES\n2\n2 3\n2\n1 0\n2 0 1\n2\n0.25 0.75\n6\n0.1 0.2 0.7 0.3 0.3 0.4\n";
        let m = parse_uai(text).unwrap();
        assert_eq!(parse_uai(&write_uai(&m)).unwrap(), m);
        let e = Evidence::from_pairs([(1, 2)]).unwrap();
        assert_eq!(parse_evidence(&write_evidence(&e)).unwrap(), e);
    }
}

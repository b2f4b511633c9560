//! Parser for kernel structure strings.
//!
//! Grammar: `structure := term ('+' term)*`, `term := factor ('*' factor)*`,
//! `factor := ('se' | 'ca') '(' name ')'`. Examples:
//! `se(age)`, `se(age) + ca(id)*se(age) + ca(sex)*se(age)`.

use super::{Factor, FactorKind, KernelComponent, KernelError, KernelStructure};
use crate::data::{CovariateKind, Schema};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Open,
    Close,
    Star,
    Plus,
    End,
}

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::Ident(s) => s.clone(),
            Token::Open => "(".into(),
            Token::Close => ")".into(),
            Token::Star => "*".into(),
            Token::Plus => "+".into(),
            Token::End => "end of input".into(),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<Token>, KernelError> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            ' ' | '\t' | '\n' => {
                chars.next();
            }
            '(' => {
                chars.next();
                tokens.push(Token::Open);
            }
            ')' => {
                chars.next();
                tokens.push(Token::Close);
            }
            '*' => {
                chars.next();
                tokens.push(Token::Star);
            }
            '+' => {
                chars.next();
                tokens.push(Token::Plus);
            }
            c if c.is_alphanumeric() || c == '_' || c == '.' || c == '-' => {
                let mut ident = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_alphanumeric() || c == '_' || c == '.' || c == '-' {
                        ident.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push(Token::Ident(ident));
            }
            other => {
                return Err(KernelError::Parse {
                    token: other.to_string(),
                    detail: "unexpected character".into(),
                })
            }
        }
    }
    tokens.push(Token::End);
    Ok(tokens)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    schema: &'a Schema,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Token, detail: &str) -> Result<(), KernelError> {
        let got = self.advance();
        if got == want {
            Ok(())
        } else {
            Err(KernelError::Parse { token: got.describe(), detail: detail.into() })
        }
    }

    fn factor(&mut self) -> Result<Factor, KernelError> {
        let got = self.advance();
        let kind = match &got {
            Token::Ident(s) if s == "se" => FactorKind::SquaredExponential,
            Token::Ident(s) if s == "ca" => FactorKind::Categorical,
            other => {
                return Err(KernelError::Parse {
                    token: other.describe(),
                    detail: "expected a factor ('se' or 'ca')".into(),
                })
            }
        };
        self.expect(Token::Open, "expected '(' after factor kind")?;
        let name = match self.advance() {
            Token::Ident(s) => s,
            other => {
                return Err(KernelError::Parse {
                    token: other.describe(),
                    detail: "expected a covariate name".into(),
                })
            }
        };
        self.expect(Token::Close, "expected ')' after covariate name")?;
        let covariate = self
            .schema
            .covariate_index(&name)
            .ok_or_else(|| KernelError::UnknownCovariate(name.clone()))?;
        let spec = &self.schema.covariates[covariate];
        match (kind, spec.kind) {
            (FactorKind::SquaredExponential, CovariateKind::Continuous) => {}
            (FactorKind::Categorical, CovariateKind::Categorical)
            | (FactorKind::Categorical, CovariateKind::Binary) => {}
            (FactorKind::SquaredExponential, _) => {
                return Err(KernelError::Invalid(format!(
                    "se({name}) needs a continuous covariate"
                )))
            }
            (FactorKind::Categorical, CovariateKind::Continuous) => {
                return Err(KernelError::Invalid(format!(
                    "ca({name}) needs a categorical or binary covariate"
                )))
            }
        }
        Ok(Factor { kind, covariate, name })
    }

    fn term(&mut self) -> Result<Vec<Factor>, KernelError> {
        let mut factors = vec![self.factor()?];
        while *self.peek() == Token::Star {
            self.advance();
            factors.push(self.factor()?);
        }
        Ok(factors)
    }
}

/// Parses a kernel structure string against a schema, resolving covariate
/// names and flagging the individual-specific interaction component.
pub fn parse_structure(text: &str, schema: &Schema) -> Result<KernelStructure, KernelError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser { tokens, pos: 0, schema };
    let mut components = Vec::new();
    loop {
        let factors = parser.term()?;
        let mut seen = Vec::new();
        for f in &factors {
            if seen.contains(&f.covariate) {
                return Err(KernelError::Invalid(format!(
                    "covariate {} appears twice in one component",
                    f.name
                )));
            }
            seen.push(f.covariate);
        }
        components.push(KernelComponent { factors, individual: false });
        match parser.advance() {
            Token::Plus => continue,
            Token::End => break,
            other => {
                return Err(KernelError::Parse {
                    token: other.describe(),
                    detail: "expected '+' or end of input".into(),
                })
            }
        }
    }

    // Flag the interaction carrying the instance id as individual-specific.
    let id_cov = schema.instance_id_index();
    let mut flagged = None;
    for (i, comp) in components.iter().enumerate() {
        let touches_id = comp
            .factors
            .iter()
            .any(|f| f.kind == FactorKind::Categorical && f.covariate == id_cov);
        if touches_id && comp.factors.len() >= 2 {
            if flagged.is_some() {
                return Err(KernelError::Invalid(
                    "at most one component may be the instance-id interaction".into(),
                ));
            }
            flagged = Some(i);
        }
    }
    if let Some(i) = flagged {
        components[i].individual = true;
    }
    Ok(KernelStructure { components })
}

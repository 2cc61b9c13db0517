//! Tiny polynomial expressions for config fields.
//!
//! Obstacles, densities, and probe directions in config files are written as
//! polynomials in `x` (and `y` on square grids):
//!
//! ```text
//! 4*x - 4*x^2
//! 0.5
//! x*y - 2*x^2*y
//! ```
//!
//! Grammar: a sum of terms; a term is a `*`-joined product of factors; a
//! factor is a number literal, `x`, `y`, or a variable with an integer power
//! (`x^3`).  No parentheses, no functions — anything fancier belongs in a
//! nodal file.  The expression is normalized once into a coefficient list so
//! evaluation at every grid node is a few multiplies.

use crate::error::{CliError, Result};

/// One monomial `coeff · x^px · y^py`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Term {
    coeff: f64,
    px: u32,
    py: u32,
}

/// A parsed polynomial, ready for nodal evaluation.
#[derive(Debug, Clone)]
pub struct Polynomial {
    terms: Vec<Term>,
    uses_y: bool,
}

/// Powers above this are almost certainly a typo and would start to lose
/// accuracy to repeated squaring anyway.
const MAX_POWER: u32 = 16;

impl Polynomial {
    /// Parse `text`; `field` names the config key in error messages.
    pub fn parse(text: &str, field: &str) -> Result<Self> {
        let tokens = tokenize(text, field)?;
        let terms = parse_terms(&tokens, field)?;
        let uses_y = terms.iter().any(|t| t.py > 0);
        Ok(Polynomial { terms, uses_y })
    }

    /// Whether the expression mentions `y` (only legal on square grids).
    pub fn uses_y(&self) -> bool {
        self.uses_y
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * x.powi(t.px as i32) * y.powi(t.py as i32))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Var(char),
    Caret,
    Star,
    Plus,
    Minus,
}

fn tokenize(text: &str, field: &str) -> Result<Vec<Token>> {
    let bytes: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            ' ' | '\t' => i += 1,
            'x' | 'y' => {
                tokens.push(Token::Var(c));
                i += 1;
            }
            '^' => {
                tokens.push(Token::Caret);
                i += 1;
            }
            '*' => {
                tokens.push(Token::Star);
                i += 1;
            }
            '+' => {
                tokens.push(Token::Plus);
                i += 1;
            }
            '-' => {
                tokens.push(Token::Minus);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == '.') {
                    i += 1;
                }
                // Exponent part: 1e-3, 2.5E+4.
                if i < bytes.len() && (bytes[i] == 'e' || bytes[i] == 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == '+' || bytes[j] == '-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let lit: String = bytes[start..i].iter().collect();
                let value = lit.parse::<f64>().map_err(|_| {
                    CliError::validation(format!("{field}: bad number literal '{lit}'"))
                })?;
                tokens.push(Token::Number(value));
            }
            other => {
                return Err(CliError::validation(format!(
                    "{field}: unexpected character '{other}' (expressions are \
                     polynomials in x and y: numbers, x, y, ^, *, +, -)"
                )));
            }
        }
    }
    if tokens.is_empty() {
        return Err(CliError::validation(format!("{field}: empty expression")));
    }
    Ok(tokens)
}

/// Parse `expr := ['+'|'-'] term (('+'|'-') term)*`.
fn parse_terms(tokens: &[Token], field: &str) -> Result<Vec<Term>> {
    let mut terms = Vec::new();
    let mut pos = 0;
    let mut sign = 1.0;
    // Leading sign.
    match tokens.first() {
        Some(Token::Plus) => pos = 1,
        Some(Token::Minus) => {
            sign = -1.0;
            pos = 1;
        }
        _ => {}
    }
    loop {
        let (term, next) = parse_term(tokens, pos, field)?;
        terms.push(Term {
            coeff: sign * term.coeff,
            ..term
        });
        pos = next;
        match tokens.get(pos) {
            None => break,
            Some(Token::Plus) => {
                sign = 1.0;
                pos += 1;
            }
            Some(Token::Minus) => {
                sign = -1.0;
                pos += 1;
            }
            Some(_) => {
                return Err(CliError::validation(format!(
                    "{field}: expected '+' or '-' between terms (write products \
                     with an explicit '*')"
                )));
            }
        }
    }
    Ok(terms)
}

/// Parse `term := factor ('*' factor)*`, folding numbers into the
/// coefficient and variables into powers.
fn parse_term(tokens: &[Token], mut pos: usize, field: &str) -> Result<(Term, usize)> {
    let mut term = Term {
        coeff: 1.0,
        px: 0,
        py: 0,
    };
    loop {
        pos = parse_factor(tokens, pos, &mut term, field)?;
        if let Some(Token::Star) = tokens.get(pos) {
            pos += 1;
        } else {
            return Ok((term, pos));
        }
    }
}

fn parse_factor(tokens: &[Token], pos: usize, term: &mut Term, field: &str) -> Result<usize> {
    match tokens.get(pos) {
        Some(Token::Number(v)) => {
            term.coeff *= v;
            Ok(pos + 1)
        }
        Some(Token::Var(var)) => {
            let mut power = 1u32;
            let mut next = pos + 1;
            if let Some(Token::Caret) = tokens.get(next) {
                match tokens.get(next + 1) {
                    Some(Token::Number(p)) if p.fract() == 0.0 && *p >= 0.0 => {
                        power = *p as u32;
                        next += 2;
                    }
                    _ => {
                        return Err(CliError::validation(format!(
                            "{field}: '^' must be followed by a non-negative integer"
                        )));
                    }
                }
            }
            if power > MAX_POWER {
                return Err(CliError::validation(format!(
                    "{field}: power {power} exceeds the supported maximum {MAX_POWER}"
                )));
            }
            match var {
                'x' => term.px += power,
                _ => term.py += power,
            }
            Ok(next)
        }
        _ => Err(CliError::validation(format!(
            "{field}: expected a number, x, or y"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str) -> Polynomial {
        Polynomial::parse(text, "test").unwrap()
    }

    #[test]
    fn constants_and_signs() {
        assert_eq!(p("0.5").eval(0.3, 0.0), 0.5);
        assert_eq!(p("-2").eval(0.0, 0.0), -2.0);
        assert_eq!(p("1e-3").eval(0.0, 0.0), 1e-3);
        assert_eq!(p("- 1 + 2").eval(0.0, 0.0), 1.0);
    }

    #[test]
    fn bump_profile() {
        let poly = p("4*x - 4*x^2");
        assert!((poly.eval(0.5, 0.0) - 1.0).abs() < 1e-15);
        assert!(poly.eval(0.0, 0.0).abs() < 1e-15);
        assert!(!poly.uses_y());
    }

    #[test]
    fn two_variable_products() {
        let poly = p("x*y - 2*x^2*y");
        assert!(poly.uses_y());
        let x = 0.25;
        let y = 0.75;
        let want = x * y - 2.0 * x * x * y;
        assert!((poly.eval(x, y) - want).abs() < 1e-15);
    }

    #[test]
    fn repeated_variables_accumulate_power() {
        let poly = p("x*x*x");
        assert!((poly.eval(0.5, 0.0) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Polynomial::parse("4x", "f").is_err()); // implicit product
        assert!(Polynomial::parse("sin(x)", "f").is_err());
        assert!(Polynomial::parse("x^-1", "f").is_err());
        assert!(Polynomial::parse("x^1.5", "f").is_err());
        assert!(Polynomial::parse("", "f").is_err());
        assert!(Polynomial::parse("x +", "f").is_err());
    }

    #[test]
    fn error_names_the_field() {
        let err = Polynomial::parse("z", "psi.expr").unwrap_err();
        assert!(err.to_string().contains("psi.expr"));
    }
}

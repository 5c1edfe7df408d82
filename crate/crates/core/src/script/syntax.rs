//! Lexer, statement parser and canonical rendering for PrepScript.
//!
//! ```text
//! program := stmt*
//! stmt    := IDENT "=" call | "#" comment
//! call    := NAME "(" args? ")"
//! args    := arg ("," arg)*
//! arg     := literal | IDENT | NAME "=" literal
//! literal := float | int | string | "[" literal ("," literal)* "]"
//! ```

use std::fmt;

use super::ScriptError;

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<Literal>),
}

impl Literal {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Literal::Int(i) => Some(*i as f64),
            Literal::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Literal::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Literal]> {
        match self {
            Literal::List(l) => Some(l),
            _ => None,
        }
    }

    /// Text used inside prompts: strings bare, lists comma separated in brackets.
    pub fn prose(&self) -> String {
        match self {
            Literal::Str(s) => s.clone(),
            Literal::List(items) => {
                let inner: Vec<String> = items.iter().map(Literal::to_string).collect();
                format!("[{}]", inner.join(", "))
            }
            other => other.to_string(),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Float(x) => write!(f, "{x:?}"),
            Literal::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
            Literal::List(items) => {
                f.write_str("[")?;
                for (i, it) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{it}")?;
                }
                f.write_str("]")
            }
        }
    }
}

/// Positional argument as written in source.
#[derive(Debug, Clone, PartialEq)]
pub enum SynArg {
    Lit(Literal),
    Ident(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Call {
    pub name: String,
    pub args: Vec<SynArg>,
    pub kwargs: Vec<(String, Literal)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statement {
    pub target: String,
    pub call: Call,
    /// 1-based source line.
    pub line: usize,
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args = self.call.args.iter().map(|a| match a {
            SynArg::Lit(l) => l.to_string(),
            SynArg::Ident(n) => n.clone(),
        });
        f.write_str(&render(&self.target, &self.call.name, args, &self.call.kwargs))
    }
}

pub(crate) fn render(
    target: &str,
    op: &str,
    args: impl Iterator<Item = String>,
    kwargs: &[(String, Literal)],
) -> String {
    let mut parts: Vec<String> = args.collect();
    parts.extend(kwargs.iter().map(|(k, v)| format!("{k}={v}")));
    format!("{target} = {op}({})", parts.join(", "))
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Token {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Eq,
}

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::Ident(s) => format!("identifier '{s}'"),
            Token::Int(i) => format!("number {i}"),
            Token::Float(x) => format!("number {x}"),
            Token::Str(_) => "string".into(),
            Token::LParen => "'('".into(),
            Token::RParen => "')'".into(),
            Token::LBracket => "'['".into(),
            Token::RBracket => "']'".into(),
            Token::Comma => "','".into(),
            Token::Eq => "'='".into(),
        }
    }
}

fn syntax(line: usize, message: impl Into<String>) -> ScriptError {
    ScriptError::Syntax {
        line,
        message: message.into(),
    }
}

pub(crate) fn tokenize(text: &str, line: usize) -> Result<Vec<Token>, ScriptError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '#' => break,
            '(' => { out.push(Token::LParen); i += 1; }
            ')' => { out.push(Token::RParen); i += 1; }
            '[' => { out.push(Token::LBracket); i += 1; }
            ']' => { out.push(Token::RBracket); i += 1; }
            ',' => { out.push(Token::Comma); i += 1; }
            '=' => { out.push(Token::Eq); i += 1; }
            '"' | '\'' => {
                let quote = c;
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(syntax(line, "unterminated string literal")),
                        Some(&q) if q == quote => { i += 1; break; }
                        Some('\\') => {
                            let esc = chars.get(i + 1).ok_or_else(|| syntax(line, "unterminated string literal"))?;
                            s.push(match esc {
                                'n' => '\n',
                                't' => '\t',
                                other => *other,
                            });
                            i += 2;
                        }
                        Some(&ch) => { s.push(ch); i += 1; }
                    }
                }
                out.push(Token::Str(s));
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let start = i;
                if c == '-' || c == '+' {
                    i += 1;
                }
                let mut is_float = false;
                while i < chars.len() {
                    let d = chars[i];
                    if d.is_ascii_digit() {
                        i += 1;
                    } else if d == '.' {
                        is_float = true;
                        i += 1;
                    } else if d == 'e' || d == 'E' {
                        is_float = true;
                        i += 1;
                        if matches!(chars.get(i), Some('-') | Some('+')) {
                            i += 1;
                        }
                    } else {
                        break;
                    }
                }
                let lexeme: String = chars[start..i].iter().collect();
                let tok = if is_float {
                    lexeme.parse::<f64>().ok().filter(|x| x.is_finite()).map(Token::Float)
                } else {
                    lexeme.parse::<i64>().ok().map(Token::Int)
                };
                out.push(tok.ok_or_else(|| syntax(line, format!("malformed number '{lexeme}'")))?);
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(syntax(line, format!("unexpected character '{other}'"))),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    line: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Token) -> Result<(), ScriptError> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(syntax(self.line, format!("expected {} but found {}", want.describe(), t.describe()))),
            None => Err(syntax(self.line, format!("expected {} at end of line", want.describe()))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ScriptError> {
        match self.next() {
            Some(Token::Ident(s)) => Ok(s),
            Some(t) => Err(syntax(self.line, format!("expected {what} but found {}", t.describe()))),
            None => Err(syntax(self.line, format!("expected {what} at end of line"))),
        }
    }

    fn literal(&mut self) -> Result<Literal, ScriptError> {
        match self.next() {
            Some(Token::Int(i)) => Ok(Literal::Int(i)),
            Some(Token::Float(x)) => Ok(Literal::Float(x)),
            Some(Token::Str(s)) => Ok(Literal::Str(s)),
            Some(Token::LBracket) => {
                let mut items = vec![self.literal()?];
                loop {
                    match self.next() {
                        Some(Token::Comma) => items.push(self.literal()?),
                        Some(Token::RBracket) => break,
                        Some(t) => return Err(syntax(self.line, format!("expected ',' or ']' in list but found {}", t.describe()))),
                        None => return Err(syntax(self.line, "unterminated list literal")),
                    }
                }
                Ok(Literal::List(items))
            }
            Some(t) => Err(syntax(self.line, format!("expected a literal but found {}", t.describe()))),
            None => Err(syntax(self.line, "expected a literal at end of line")),
        }
    }

    fn statement(&mut self) -> Result<Statement, ScriptError> {
        let target = self.ident("an assignment target")?;
        self.expect(Token::Eq)?;
        let name = self.ident("a function name")?;
        self.expect(Token::LParen)?;
        let mut args = Vec::new();
        let mut kwargs: Vec<(String, Literal)> = Vec::new();
        if self.peek() == Some(&Token::RParen) {
            self.pos += 1;
        } else {
            loop {
                let is_kw = matches!(
                    (self.toks.get(self.pos), self.toks.get(self.pos + 1)),
                    (Some(Token::Ident(_)), Some(Token::Eq))
                );
                if is_kw {
                    let k = self.ident("a keyword")?;
                    self.pos += 1;
                    let v = self.literal()?;
                    if kwargs.iter().any(|(n, _)| *n == k) {
                        return Err(syntax(self.line, format!("duplicate keyword argument '{k}'")));
                    }
                    kwargs.push((k, v));
                } else {
                    if !kwargs.is_empty() {
                        return Err(syntax(self.line, "positional argument after keyword argument"));
                    }
                    match self.peek() {
                        Some(Token::Ident(_)) => {
                            let n = self.ident("an argument")?;
                            args.push(SynArg::Ident(n));
                        }
                        _ => args.push(SynArg::Lit(self.literal()?)),
                    }
                }
                match self.next() {
                    Some(Token::Comma) => continue,
                    Some(Token::RParen) => break,
                    Some(t) => return Err(syntax(self.line, format!("expected ',' or ')' but found {}", t.describe()))),
                    None => return Err(syntax(self.line, "missing ')'")),
                }
            }
        }
        if let Some(t) = self.peek() {
            return Err(syntax(self.line, format!("unexpected {} after call", t.describe())));
        }
        Ok(Statement {
            target,
            call: Call { name, args, kwargs },
            line: self.line,
        })
    }
}

/// Parses one source line. Blank and comment lines yield `None`.
pub fn parse_line(text: &str, line: usize) -> Result<Option<Statement>, ScriptError> {
    let toks = tokenize(text, line)?;
    if toks.is_empty() {
        return Ok(None);
    }
    Parser { toks, pos: 0, line }.statement().map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_call() {
        let s = parse_line("df = load_csv(\"d.csv\")", 1).unwrap().unwrap();
        assert_eq!(s.target, "df");
        assert_eq!(s.call.name, "load_csv");
        assert_eq!(s.call.args, vec![SynArg::Lit(Literal::Str("d.csv".into()))]);
    }

    #[test]
    fn mixed_args() {
        let s = parse_line("X = custom_bins(X, [0, 18.5, 25], [\"a\", 'b'], columns=[\"BMI\"], k=-3)", 4)
            .unwrap()
            .unwrap();
        assert_eq!(s.call.args.len(), 3);
        assert_eq!(s.call.kwargs[1], ("k".to_string(), Literal::Int(-3)));
        assert_eq!(
            s.to_string(),
            "X = custom_bins(X, [0, 18.5, 25], [\"a\", \"b\"], columns=[\"BMI\"], k=-3)"
        );
    }

    #[test]
    fn comments_and_blanks() {
        assert_eq!(parse_line("   # hello", 1).unwrap(), None);
        assert_eq!(parse_line("", 1).unwrap(), None);
        assert!(parse_line("x = f(y) # trailing", 1).unwrap().is_some());
    }

    #[test]
    fn syntax_errors_carry_line() {
        for bad in ["x = ", "x f(y)", "x = f(y", "x = f(y,)", "x = f(a=1, y)", "x = f(1) y", "x = f(\"abc)", "x = f(1.2.3)", "x = f(a=1, a=2)", "x = f(y) + 1"] {
            let err = parse_line(bad, 7).unwrap_err();
            assert!(matches!(err, ScriptError::Syntax { line: 7, .. }), "{bad}: {err}");
            assert!(err.to_string().starts_with("SyntaxError: "));
            assert!(err.to_string().ends_with("at line 7"));
        }
    }

    #[test]
    fn literal_display_round_trips() {
        for lit in [
            Literal::Float(0.0),
            Literal::Float(1e-5),
            Literal::Float(-2.5e20),
            Literal::Int(-7),
            Literal::Str("a \"q\" \\ b".into()),
            Literal::List(vec![Literal::Int(1), Literal::Str("x".into())]),
        ] {
            let line = format!("x = f({lit})");
            let s = parse_line(&line, 1).unwrap().unwrap();
            assert_eq!(s.call.args, vec![SynArg::Lit(lit)]);
        }
    }
}

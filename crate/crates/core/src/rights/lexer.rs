use super::ParseError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Tok {
    Int(i64),
    Str(String),
    Ident(String),
    Var,
    If,
    Else,
    True,
    False,
    Null,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Dot,
    Comma,
    Semi,
    Question,
    Colon,
    Assign,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Bang,
    AndAnd,
    OrOr,
    Eof,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Pos {
    pub line: usize,
    pub column: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut chars = src.chars().peekable();
    let (mut line, mut column) = (1usize, 1usize);

    macro_rules! bump {
        () => {{
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                column = 1;
            } else if c.is_some() {
                column += 1;
            }
            c
        }};
    }

    loop {
        while let Some(&c) = chars.peek() {
            if c.is_whitespace() {
                bump!();
            } else {
                break;
            }
        }
        let pos = Pos { line, column };
        let err = |message: String| ParseError {
            line: pos.line,
            column: pos.column,
            message,
        };
        let Some(c) = bump!() else {
            out.push(Token { tok: Tok::Eof, pos });
            return Ok(out);
        };
        let tok = match c {
            '0'..='9' => {
                let mut digits = String::from(c);
                while let Some(&d) = chars.peek() {
                    if d.is_ascii_digit() {
                        digits.push(d);
                        bump!();
                    } else {
                        break;
                    }
                }
                if matches!(chars.peek(), Some(d) if d.is_alphanumeric() || *d == '_') {
                    return Err(err(format!("malformed number `{digits}...`")));
                }
                Tok::Int(
                    digits
                        .parse()
                        .map_err(|_| err(format!("integer literal `{digits}` out of range")))?,
                )
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let mut ident = String::from(c);
                while let Some(&d) = chars.peek() {
                    if d.is_ascii_alphanumeric() || d == '_' {
                        ident.push(d);
                        bump!();
                    } else {
                        break;
                    }
                }
                match ident.as_str() {
                    "var" => Tok::Var,
                    "if" => Tok::If,
                    "else" => Tok::Else,
                    "true" => Tok::True,
                    "false" => Tok::False,
                    "null" => Tok::Null,
                    _ => Tok::Ident(ident),
                }
            }
            '"' => {
                let mut s = String::new();
                loop {
                    match bump!() {
                        None => return Err(err("unterminated string literal".into())),
                        Some('"') => break,
                        Some('\\') => match bump!() {
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            Some('n') => s.push('\n'),
                            Some(other) => {
                                return Err(err(format!("unknown escape `\\{other}`")))
                            }
                            None => return Err(err("unterminated string literal".into())),
                        },
                        Some(ch) => s.push(ch),
                    }
                }
                Tok::Str(s)
            }
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            '.' => Tok::Dot,
            ',' => Tok::Comma,
            ';' => Tok::Semi,
            '?' => Tok::Question,
            ':' => Tok::Colon,
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '%' => Tok::Percent,
            '=' | '!' | '<' | '>' => {
                let followed_by_eq = chars.peek() == Some(&'=');
                if followed_by_eq {
                    bump!();
                }
                match (c, followed_by_eq) {
                    ('=', true) => Tok::Eq,
                    ('=', false) => Tok::Assign,
                    ('!', true) => Tok::Ne,
                    ('!', false) => Tok::Bang,
                    ('<', true) => Tok::Le,
                    ('<', false) => Tok::Lt,
                    ('>', true) => Tok::Ge,
                    _ => Tok::Gt,
                }
            }
            '&' | '|' => {
                if chars.peek() != Some(&c) {
                    return Err(err(format!("unexpected character `{c}`")));
                }
                bump!();
                if c == '&' {
                    Tok::AndAnd
                } else {
                    Tok::OrOr
                }
            }
            other => return Err(err(format!("unexpected character `{other}`"))),
        };
        out.push(Token { tok, pos });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn operators_and_literals() {
        assert_eq!(
            toks(r#"a.b >= 256 && "x\"y" != null"#),
            vec![
                Tok::Ident("a".into()),
                Tok::Dot,
                Tok::Ident("b".into()),
                Tok::Ge,
                Tok::Int(256),
                Tok::AndAnd,
                Tok::Str("x\"y".into()),
                Tok::Ne,
                Tok::Null,
                Tok::Eof
            ]
        );
    }

    #[test]
    fn positions_track_lines() {
        let t = tokenize("1\n  foo").unwrap();
        assert_eq!(t[1].pos, Pos { line: 2, column: 3 });
    }

    #[test]
    fn errors() {
        assert!(tokenize("99999999999999999999").is_err());
        assert!(tokenize("\"open").is_err());
        assert!(tokenize("a & b").is_err());
        assert!(tokenize("{").is_err());
        assert!(tokenize(r#""\t""#).is_err());
    }
}

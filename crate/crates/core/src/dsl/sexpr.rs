//! S-expression reader for programs and abstraction bodies.

use super::{DslError, Expr, Library};

enum Token<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token::Atom(&text[s..i]));
            }
            match c {
                '(' => out.push(Token::Open),
                ')' => out.push(Token::Close),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token::Atom(&text[s..]));
    }
    out
}

/// Parses `text` against `lib`. Holes (`#0`, `#1`, ...) are accepted only
/// when `allow_holes` is set. Arity is checked here; types are not.
pub fn parse_expr(text: &str, lib: &Library, allow_holes: bool) -> Result<Expr, DslError> {
    let tokens = tokenize(text);
    let mut pos = 0;
    let expr = parse_one(&tokens, &mut pos, lib, allow_holes)?;
    if pos != tokens.len() {
        return Err(DslError::Parse(format!("trailing input in `{text}`")));
    }
    Ok(expr)
}

fn atom(name: &str, lib: &Library, allow_holes: bool) -> Result<Expr, DslError> {
    if let Some(index) = name.strip_prefix('#') {
        if !allow_holes {
            return Err(DslError::Parse(format!("unexpected parameter `{name}`")));
        }
        return index
            .parse()
            .map(Expr::Hole)
            .map_err(|_| DslError::Parse(format!("bad parameter `{name}`")));
    }
    lib.id_of(name)
        .map(Expr::leaf)
        .ok_or_else(|| DslError::UnknownPrimitive(name.to_string()))
}

fn parse_one(
    tokens: &[Token<'_>],
    pos: &mut usize,
    lib: &Library,
    allow_holes: bool,
) -> Result<Expr, DslError> {
    let token = tokens
        .get(*pos)
        .ok_or_else(|| DslError::Parse("unexpected end of input".into()))?;
    *pos += 1;
    let (expr, nargs) = match token {
        Token::Close => return Err(DslError::Parse("unexpected `)`".into())),
        Token::Atom(name) => (atom(name, lib, allow_holes)?, 0),
        Token::Open => {
            let head = match tokens.get(*pos) {
                Some(Token::Atom(name)) => *name,
                _ => return Err(DslError::Parse("expected a primitive after `(`".into())),
            };
            *pos += 1;
            let prim = lib
                .id_of(head)
                .ok_or_else(|| DslError::UnknownPrimitive(head.to_string()))?;
            let mut args = Vec::new();
            loop {
                match tokens.get(*pos) {
                    Some(Token::Close) => {
                        *pos += 1;
                        break;
                    }
                    Some(_) => args.push(parse_one(tokens, pos, lib, allow_holes)?),
                    None => return Err(DslError::Parse("missing `)`".into())),
                }
            }
            let n = args.len();
            (Expr::app(prim, args), n)
        }
    };
    if let Expr::App { prim, .. } = &expr {
        let p = &lib.primitives()[*prim];
        if p.arity() != nargs {
            return Err(DslError::Arity {
                name: p.name.clone(),
                expected: p.arity(),
                got: nargs,
            });
        }
    }
    Ok(expr)
}

//! SQL-subset frontend: tokenizer, parser, and binder.
//!
//! Grammar (keywords case-insensitive, statements optionally `;`-terminated):
//!
//! ```text
//! CREATE TABLE t (col type, ...) [WITH STORAGE = FLAT|INDEX(col)|BOTH(col)[, CAPACITY = n]]
//! INSERT INTO t VALUES (lit, ...) [, (lit, ...)]...
//! UPDATE t SET col = lit | col = col ± n [, ...] [WHERE pred]
//! DELETE FROM t [WHERE pred]
//! SELECT * | cols | aggs FROM t [JOIN u ON a = b] [WHERE pred] [GROUP BY col]
//! ```
//!
//! Types are `INT`, `DATE`, `TEXT(n)`. Date literals are strings
//! (`'2024-05-01'`) coerced where a DATE column is expected. Predicates
//! compare a column against a constant and combine with AND/OR/NOT.
//! Parsing reports byte positions; binding resolves names and types
//! against the catalog and yields a `LogicalPlan`.

use crate::error::{EngineError, Result};
use crate::rows::{
    parse_date, AggFunc, AggSpec, Assign, Cmp, ColType, Column, Predicate, Schema, Value,
};
use crate::table::{MutateAction, StorageMethod};

// ---------------------------------------------------------------- tokens

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    LParen,
    RParen,
    Comma,
    Star,
    Dot,
    Semi,
    Plus,
    Minus,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn err_at(pos: usize, msg: impl std::fmt::Display) -> EngineError {
    EngineError::Sql(format!("position {pos}: {msg}"))
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let pos = i;
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'(' => out.push(Token { tok: Tok::LParen, pos }),
            b')' => out.push(Token { tok: Tok::RParen, pos }),
            b',' => out.push(Token { tok: Tok::Comma, pos }),
            b'*' => out.push(Token { tok: Tok::Star, pos }),
            b'.' => out.push(Token { tok: Tok::Dot, pos }),
            b';' => out.push(Token { tok: Tok::Semi, pos }),
            b'+' => out.push(Token { tok: Tok::Plus, pos }),
            b'-' => out.push(Token { tok: Tok::Minus, pos }),
            b'=' => out.push(Token { tok: Tok::Eq, pos }),
            b'!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push(Token { tok: Tok::Ne, pos });
                    i += 1;
                } else {
                    return Err(err_at(pos, "expected '=' after '!'"));
                }
            }
            b'<' => match bytes.get(i + 1) {
                Some(b'=') => {
                    out.push(Token { tok: Tok::Le, pos });
                    i += 1;
                }
                Some(b'>') => {
                    out.push(Token { tok: Tok::Ne, pos });
                    i += 1;
                }
                _ => out.push(Token { tok: Tok::Lt, pos }),
            },
            b'>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    out.push(Token { tok: Tok::Ge, pos });
                    i += 1;
                } else {
                    out.push(Token { tok: Tok::Gt, pos });
                }
            }
            b'\'' => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    match bytes.get(j) {
                        None => return Err(err_at(pos, "unterminated string literal")),
                        Some(b'\'') if bytes.get(j + 1) == Some(&b'\'') => {
                            s.push('\'');
                            j += 2;
                        }
                        Some(b'\'') => {
                            j += 1;
                            break;
                        }
                        Some(_) => {
                            // Step over one UTF-8 scalar.
                            let rest = &text[j..];
                            let ch = rest.chars().next().unwrap();
                            s.push(ch);
                            j += ch.len_utf8();
                        }
                    }
                }
                out.push(Token { tok: Tok::Str(s), pos });
                i = j;
                continue;
            }
            b'0'..=b'9' => {
                let mut j = i;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                let n: i64 = text[i..j]
                    .parse()
                    .map_err(|_| err_at(pos, "integer literal out of range"))?;
                out.push(Token { tok: Tok::Int(n), pos });
                i = j;
                continue;
            }
            _ if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(text[i..j].to_string()),
                    pos,
                });
                i = j;
                continue;
            }
            _ => return Err(err_at(pos, format!("unexpected character {:?}", text[pos..].chars().next().unwrap()))),
        }
        i += 1;
    }
    Ok(out)
}

// ------------------------------------------------------------------- AST

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Int(i64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColRef {
    pub table: Option<String>,
    pub column: String,
    pub pos: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredAst {
    Cmp { col: ColRef, cmp: Cmp, lit: Literal },
    And(Box<PredAst>, Box<PredAst>),
    Or(Box<PredAst>, Box<PredAst>),
    Not(Box<PredAst>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssignAst {
    Const(Literal),
    /// `col = src ± delta`.
    Incr { src: ColRef, delta: i64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Proj {
    Col(ColRef),
    Agg { func: AggFunc, arg: Option<ColRef>, pos: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum StorageAst {
    Flat,
    Index(String),
    Both(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    CreateTable {
        name: String,
        columns: Vec<(String, ColType)>,
        storage: StorageAst,
        capacity: Option<u64>,
    },
    Insert {
        table: String,
        rows: Vec<Vec<Literal>>,
    },
    Update {
        table: String,
        sets: Vec<(ColRef, AssignAst)>,
        pred: Option<PredAst>,
    },
    Delete {
        table: String,
        pred: Option<PredAst>,
    },
    Select {
        projs: Option<Vec<Proj>>,
        table: String,
        join: Option<(String, ColRef, ColRef)>,
        pred: Option<PredAst>,
        group_by: Option<ColRef>,
    },
}

// ---------------------------------------------------------------- parser

struct Parser {
    toks: Vec<Token>,
    at: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|t| &t.tok)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |t| t.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.toks.get(self.at).cloned();
        if t.is_some() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        match self.next() {
            Some(t) if t.tok == want => Ok(()),
            Some(t) => Err(err_at(t.pos, format!("expected {what}"))),
            None => Err(err_at(self.end, format!("expected {what}"))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize)> {
        match self.next() {
            Some(Token {
                tok: Tok::Ident(s),
                pos,
            }) => Ok((s, pos)),
            Some(t) => Err(err_at(t.pos, format!("expected {what}"))),
            None => Err(err_at(self.end, format!("expected {what}"))),
        }
    }

    /// Consume an identifier if it equals `kw` case-insensitively.
    fn eat_kw(&mut self, kw: &str) -> bool {
        if let Some(Tok::Ident(s)) = self.peek() {
            if s.eq_ignore_ascii_case(kw) {
                self.at += 1;
                return true;
            }
        }
        false
    }

    fn expect_kw(&mut self, kw: &str) -> Result<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(err_at(self.pos(), format!("expected {kw}")))
        }
    }

    fn uint(&mut self, what: &str) -> Result<u64> {
        match self.next() {
            Some(Token { tok: Tok::Int(n), pos }) => {
                u64::try_from(n).map_err(|_| err_at(pos, format!("{what} must be non-negative")))
            }
            Some(t) => Err(err_at(t.pos, format!("expected {what}"))),
            None => Err(err_at(self.end, format!("expected {what}"))),
        }
    }

    fn literal(&mut self) -> Result<Literal> {
        match self.next() {
            Some(Token { tok: Tok::Int(n), .. }) => Ok(Literal::Int(n)),
            Some(Token { tok: Tok::Minus, .. }) => match self.next() {
                Some(Token { tok: Tok::Int(n), .. }) => Ok(Literal::Int(-n)),
                Some(t) => Err(err_at(t.pos, "expected integer after '-'")),
                None => Err(err_at(self.end, "expected integer after '-'")),
            },
            Some(Token { tok: Tok::Str(s), .. }) => Ok(Literal::Str(s)),
            Some(t) => Err(err_at(t.pos, "expected literal")),
            None => Err(err_at(self.end, "expected literal")),
        }
    }

    fn colref(&mut self) -> Result<ColRef> {
        let (first, pos) = self.ident("column name")?;
        if self.peek() == Some(&Tok::Dot) {
            self.at += 1;
            let (col, _) = self.ident("column name after '.'")?;
            Ok(ColRef {
                table: Some(first),
                column: col,
                pos,
            })
        } else {
            Ok(ColRef {
                table: None,
                column: first,
                pos,
            })
        }
    }

    fn cmp_op(&mut self) -> Result<Cmp> {
        match self.next() {
            Some(Token { tok: Tok::Eq, .. }) => Ok(Cmp::Eq),
            Some(Token { tok: Tok::Ne, .. }) => Ok(Cmp::Ne),
            Some(Token { tok: Tok::Lt, .. }) => Ok(Cmp::Lt),
            Some(Token { tok: Tok::Le, .. }) => Ok(Cmp::Le),
            Some(Token { tok: Tok::Gt, .. }) => Ok(Cmp::Gt),
            Some(Token { tok: Tok::Ge, .. }) => Ok(Cmp::Ge),
            Some(t) => Err(err_at(t.pos, "expected comparison operator")),
            None => Err(err_at(self.end, "expected comparison operator")),
        }
    }

    fn predicate(&mut self) -> Result<PredAst> {
        let mut left = self.pred_and()?;
        while self.eat_kw("OR") {
            let right = self.pred_and()?;
            left = PredAst::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn pred_and(&mut self) -> Result<PredAst> {
        let mut left = self.pred_unary()?;
        while self.eat_kw("AND") {
            let right = self.pred_unary()?;
            left = PredAst::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn pred_unary(&mut self) -> Result<PredAst> {
        if self.eat_kw("NOT") {
            return Ok(PredAst::Not(Box::new(self.pred_unary()?)));
        }
        if self.peek() == Some(&Tok::LParen) {
            self.at += 1;
            let inner = self.predicate()?;
            self.expect(Tok::RParen, "')'")?;
            return Ok(inner);
        }
        let col = self.colref()?;
        let cmp = self.cmp_op()?;
        let lit = self.literal()?;
        Ok(PredAst::Cmp { col, cmp, lit })
    }

    fn opt_where(&mut self) -> Result<Option<PredAst>> {
        if self.eat_kw("WHERE") {
            Ok(Some(self.predicate()?))
        } else {
            Ok(None)
        }
    }

    fn col_type(&mut self) -> Result<ColType> {
        let (name, pos) = self.ident("column type")?;
        if name.eq_ignore_ascii_case("INT") {
            Ok(ColType::Int64)
        } else if name.eq_ignore_ascii_case("DATE") {
            Ok(ColType::Date)
        } else if name.eq_ignore_ascii_case("TEXT") {
            self.expect(Tok::LParen, "'(' after TEXT")?;
            let w = self.uint("text width")?;
            self.expect(Tok::RParen, "')'")?;
            let w = u16::try_from(w).map_err(|_| err_at(pos, "text width too large"))?;
            if w == 0 {
                return Err(err_at(pos, "text width must be positive"));
            }
            Ok(ColType::Utf8(w))
        } else {
            Err(err_at(pos, format!("unknown type {name}, want INT, DATE or TEXT(n)")))
        }
    }

    fn create(&mut self) -> Result<Ast> {
        self.expect_kw("TABLE")?;
        let (name, _) = self.ident("table name")?;
        self.expect(Tok::LParen, "'('")?;
        let mut columns = Vec::new();
        loop {
            let (col, _) = self.ident("column name")?;
            let ty = self.col_type()?;
            columns.push((col, ty));
            match self.next() {
                Some(Token { tok: Tok::Comma, .. }) => continue,
                Some(Token { tok: Tok::RParen, .. }) => break,
                Some(t) => return Err(err_at(t.pos, "expected ',' or ')'")),
                None => return Err(err_at(self.end, "expected ',' or ')'")),
            }
        }
        let mut storage = StorageAst::Flat;
        let mut capacity = None;
        if self.eat_kw("WITH") {
            loop {
                if self.eat_kw("STORAGE") {
                    self.expect(Tok::Eq, "'=' after STORAGE")?;
                    let (kind, kpos) = self.ident("storage kind")?;
                    storage = if kind.eq_ignore_ascii_case("FLAT") {
                        StorageAst::Flat
                    } else if kind.eq_ignore_ascii_case("INDEX") {
                        self.expect(Tok::LParen, "'(' after INDEX")?;
                        let (col, _) = self.ident("key column")?;
                        self.expect(Tok::RParen, "')'")?;
                        StorageAst::Index(col)
                    } else if kind.eq_ignore_ascii_case("BOTH") {
                        self.expect(Tok::LParen, "'(' after BOTH")?;
                        let (col, _) = self.ident("key column")?;
                        self.expect(Tok::RParen, "')'")?;
                        StorageAst::Both(col)
                    } else {
                        return Err(err_at(kpos, "expected FLAT, INDEX(col) or BOTH(col)"));
                    };
                } else if self.eat_kw("CAPACITY") {
                    self.expect(Tok::Eq, "'=' after CAPACITY")?;
                    capacity = Some(self.uint("capacity")?);
                } else {
                    return Err(err_at(self.pos(), "expected STORAGE or CAPACITY"));
                }
                if self.peek() == Some(&Tok::Comma) {
                    self.at += 1;
                } else {
                    break;
                }
            }
        }
        Ok(Ast::CreateTable {
            name,
            columns,
            storage,
            capacity,
        })
    }

    fn insert(&mut self) -> Result<Ast> {
        self.expect_kw("INTO")?;
        let (table, _) = self.ident("table name")?;
        self.expect_kw("VALUES")?;
        let mut rows = Vec::new();
        loop {
            self.expect(Tok::LParen, "'('")?;
            let mut row = Vec::new();
            loop {
                row.push(self.literal()?);
                match self.next() {
                    Some(Token { tok: Tok::Comma, .. }) => continue,
                    Some(Token { tok: Tok::RParen, .. }) => break,
                    Some(t) => return Err(err_at(t.pos, "expected ',' or ')'")),
                    None => return Err(err_at(self.end, "expected ',' or ')'")),
                }
            }
            rows.push(row);
            if self.peek() == Some(&Tok::Comma) {
                self.at += 1;
            } else {
                break;
            }
        }
        Ok(Ast::Insert { table, rows })
    }

    fn update(&mut self) -> Result<Ast> {
        let (table, _) = self.ident("table name")?;
        self.expect_kw("SET")?;
        let mut sets = Vec::new();
        loop {
            let target = self.colref()?;
            self.expect(Tok::Eq, "'='")?;
            // `col = src + n` / `col = src - n`, else a literal.
            let assign = if matches!(self.peek(), Some(Tok::Ident(_))) {
                let src = self.colref()?;
                let sign = match self.next() {
                    Some(Token { tok: Tok::Plus, .. }) => 1i64,
                    Some(Token { tok: Tok::Minus, .. }) => -1i64,
                    Some(t) => return Err(err_at(t.pos, "expected '+' or '-'")),
                    None => return Err(err_at(self.end, "expected '+' or '-'")),
                };
                let delta = match self.literal()? {
                    Literal::Int(n) => n,
                    Literal::Str(_) => {
                        return Err(err_at(self.pos(), "increment must be an integer"))
                    }
                };
                AssignAst::Incr {
                    src,
                    delta: sign * delta,
                }
            } else {
                AssignAst::Const(self.literal()?)
            };
            sets.push((target, assign));
            if self.peek() == Some(&Tok::Comma) {
                self.at += 1;
            } else {
                break;
            }
        }
        let pred = self.opt_where()?;
        Ok(Ast::Update { table, sets, pred })
    }

    fn delete(&mut self) -> Result<Ast> {
        self.expect_kw("FROM")?;
        let (table, _) = self.ident("table name")?;
        let pred = self.opt_where()?;
        Ok(Ast::Delete { table, pred })
    }

    fn agg_func(name: &str) -> Option<AggFunc> {
        for (kw, f) in [
            ("COUNT", AggFunc::Count),
            ("SUM", AggFunc::Sum),
            ("MIN", AggFunc::Min),
            ("MAX", AggFunc::Max),
            ("AVG", AggFunc::Avg),
        ] {
            if name.eq_ignore_ascii_case(kw) {
                return Some(f);
            }
        }
        None
    }

    fn select(&mut self) -> Result<Ast> {
        let projs = if self.peek() == Some(&Tok::Star) {
            self.at += 1;
            None
        } else {
            let mut list = Vec::new();
            loop {
                let save = self.at;
                let (name, pos) = self.ident("column or aggregate")?;
                if let (Some(func), Some(&Tok::LParen)) = (Self::agg_func(&name), self.peek()) {
                    self.at += 1;
                    let arg = if self.peek() == Some(&Tok::Star) {
                        self.at += 1;
                        None
                    } else {
                        Some(self.colref()?)
                    };
                    self.expect(Tok::RParen, "')'")?;
                    list.push(Proj::Agg { func, arg, pos });
                } else {
                    self.at = save;
                    list.push(Proj::Col(self.colref()?));
                }
                if self.peek() == Some(&Tok::Comma) {
                    self.at += 1;
                } else {
                    break;
                }
            }
            Some(list)
        };
        self.expect_kw("FROM")?;
        let (table, _) = self.ident("table name")?;
        let join = if self.eat_kw("JOIN") {
            let (right, _) = self.ident("table name after JOIN")?;
            self.expect_kw("ON")?;
            let a = self.colref()?;
            self.expect(Tok::Eq, "'=' in join condition")?;
            let b = self.colref()?;
            Some((right, a, b))
        } else {
            None
        };
        let pred = self.opt_where()?;
        let group_by = if self.eat_kw("GROUP") {
            self.expect_kw("BY")?;
            Some(self.colref()?)
        } else {
            None
        };
        Ok(Ast::Select {
            projs,
            table,
            join,
            pred,
            group_by,
        })
    }
}

pub fn parse_sql(text: &str) -> Result<Ast> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        at: 0,
        end: text.len(),
    };
    if p.peek().is_none() {
        return Err(err_at(0, "empty statement"));
    }
    let (kw, pos) = p.ident("statement keyword")?;
    let ast = if kw.eq_ignore_ascii_case("CREATE") {
        p.create()?
    } else if kw.eq_ignore_ascii_case("INSERT") {
        p.insert()?
    } else if kw.eq_ignore_ascii_case("UPDATE") {
        p.update()?
    } else if kw.eq_ignore_ascii_case("DELETE") {
        p.delete()?
    } else if kw.eq_ignore_ascii_case("SELECT") {
        p.select()?
    } else {
        return Err(err_at(
            pos,
            format!("unknown statement {kw}, want CREATE, INSERT, UPDATE, DELETE or SELECT"),
        ));
    };
    if p.peek() == Some(&Tok::Semi) {
        p.at += 1;
    }
    if let Some(t) = p.toks.get(p.at) {
        return Err(err_at(t.pos, "trailing input after statement"));
    }
    Ok(ast)
}

// ---------------------------------------------------------------- binder

/// Bound, well-typed statement ready for the executor.
#[derive(Debug, Clone)]
pub enum LogicalPlan {
    CreateTable {
        name: String,
        schema: Schema,
        method: StorageMethod,
        key_col: Option<usize>,
        capacity: u64,
    },
    Insert {
        table: String,
        rows: Vec<Vec<Value>>,
    },
    Mutate {
        table: String,
        pred: Predicate,
        action: MutateAction,
    },
    Query(QueryPlan),
}

#[derive(Debug, Clone)]
pub struct QueryPlan {
    pub table: String,
    pub join: Option<JoinSpec>,
    /// Filter over the scan schema (the joined schema when `join` is set).
    pub pred: Predicate,
    pub shape: QueryShape,
    /// Result inflation target; attached by the executor in padding mode.
    pub pad: Option<u64>,
}

/// Foreign-key equi-join: the FROM table is the primary side (unique keys),
/// the JOIN table the foreign side.
#[derive(Debug, Clone)]
pub struct JoinSpec {
    pub table: String,
    pub left_col: usize,
    pub right_col: usize,
}

#[derive(Debug, Clone)]
pub enum QueryShape {
    /// Output columns by index into the scan schema.
    Project(Vec<usize>),
    Aggregate(Vec<AggSpec>),
    GroupBy { col: usize, specs: Vec<AggSpec> },
}

impl QueryPlan {
    /// Shape fingerprint: everything the logical plan reveals, nothing else.
    pub fn shape_tag(&self) -> String {
        let shape = match &self.shape {
            QueryShape::Project(cols) => format!("project({})", cols.len()),
            QueryShape::Aggregate(specs) => format!("aggregate({})", specs.len()),
            QueryShape::GroupBy { specs, .. } => format!("group-by({})", specs.len()),
        };
        match &self.join {
            Some(j) => format!("scan({})+join({})+filter+{}", self.table, j.table, shape),
            None => format!("scan({})+filter+{}", self.table, shape),
        }
    }
}

/// Catalog view the binder resolves names against.
pub trait CatalogView {
    fn schema_of(&self, table: &str) -> Option<&Schema>;
}

fn coerce(lit: &Literal, ty: ColType, at: usize) -> Result<Value> {
    match (lit, ty) {
        (Literal::Int(n), ColType::Int64) => Ok(Value::Int(*n)),
        (Literal::Int(n), ColType::Date) => Ok(Value::Date(*n)),
        (Literal::Str(s), ColType::Date) => Ok(Value::Date(parse_date(s)?)),
        (Literal::Str(s), ColType::Utf8(w)) => {
            if s.len() > w as usize {
                Err(err_at(at, format!("text literal exceeds column width {w}")))
            } else {
                Ok(Value::Text(s.clone()))
            }
        }
        (Literal::Int(_), ColType::Utf8(_)) => {
            Err(err_at(at, "integer literal against a text column"))
        }
        (Literal::Str(_), ColType::Int64) => {
            Err(err_at(at, "string literal against an integer column"))
        }
    }
}

/// Resolve a possibly qualified column against a scan schema. Joined
/// schemas use `table.column` names; unqualified references must be
/// unambiguous.
fn resolve(schema: &Schema, scan_table: &str, col: &ColRef) -> Result<usize> {
    let cols = schema.columns();
    if let Some(t) = &col.table {
        let qualified = format!("{t}.{}", col.column);
        if let Some(i) = cols.iter().position(|c| c.name == qualified) {
            return Ok(i);
        }
        // Single-table scans keep bare column names; accept the scan
        // table as qualifier.
        if t == scan_table {
            if let Some(i) = cols.iter().position(|c| c.name == col.column) {
                return Ok(i);
            }
        }
        return Err(err_at(col.pos, format!("unknown column {qualified}")));
    }
    let mut hits = cols.iter().enumerate().filter(|(_, c)| {
        c.name == col.column
            || c.name
                .rsplit_once('.')
                .is_some_and(|(_, base)| base == col.column)
    });
    match (hits.next(), hits.next()) {
        (Some((i, _)), None) => Ok(i),
        (Some(_), Some(_)) => Err(err_at(
            col.pos,
            format!("ambiguous column {}", col.column),
        )),
        (None, _) => Err(err_at(col.pos, format!("unknown column {}", col.column))),
    }
}

fn bind_pred(
    pred: &Option<PredAst>,
    schema: &Schema,
    scan_table: &str,
) -> Result<Predicate> {
    match pred {
        None => Ok(Predicate::True),
        Some(p) => bind_pred_node(p, schema, scan_table),
    }
}

fn bind_pred_node(p: &PredAst, schema: &Schema, scan_table: &str) -> Result<Predicate> {
    match p {
        PredAst::Cmp { col, cmp, lit } => {
            let idx = resolve(schema, scan_table, col)?;
            let ty = schema.columns()[idx].ty;
            let value = coerce(lit, ty, col.pos)?;
            Ok(Predicate::Atom {
                col: idx,
                cmp: *cmp,
                value,
            })
        }
        PredAst::And(a, b) => Ok(Predicate::And(
            Box::new(bind_pred_node(a, schema, scan_table)?),
            Box::new(bind_pred_node(b, schema, scan_table)?),
        )),
        PredAst::Or(a, b) => Ok(Predicate::Or(
            Box::new(bind_pred_node(a, schema, scan_table)?),
            Box::new(bind_pred_node(b, schema, scan_table)?),
        )),
        PredAst::Not(a) => Ok(Predicate::Not(Box::new(bind_pred_node(
            a, schema, scan_table,
        )?))),
    }
}

const DEFAULT_CAPACITY: u64 = 1024;

pub fn bind(ast: &Ast, catalog: &dyn CatalogView) -> Result<LogicalPlan> {
    match ast {
        Ast::CreateTable {
            name,
            columns,
            storage,
            capacity,
        } => {
            let schema = Schema::new(
                columns
                    .iter()
                    .map(|(n, ty)| Column {
                        name: n.clone(),
                        ty: *ty,
                    })
                    .collect(),
            )?;
            let (method, key_name) = match storage {
                StorageAst::Flat => (StorageMethod::Flat, None),
                StorageAst::Index(c) => (StorageMethod::Indexed, Some(c)),
                StorageAst::Both(c) => (StorageMethod::Both, Some(c)),
            };
            let key_col = key_name.map(|c| schema.col_index(c)).transpose()?;
            Ok(LogicalPlan::CreateTable {
                name: name.clone(),
                schema,
                method,
                key_col,
                capacity: capacity.unwrap_or(DEFAULT_CAPACITY),
            })
        }
        Ast::Insert { table, rows } => {
            let schema = catalog
                .schema_of(table)
                .ok_or_else(|| EngineError::UnknownTable(table.clone()))?;
            let mut bound = Vec::with_capacity(rows.len());
            for row in rows {
                if row.len() != schema.columns().len() {
                    return Err(EngineError::TypeError(format!(
                        "insert has {} values, table {table} has {} columns",
                        row.len(),
                        schema.columns().len()
                    )));
                }
                bound.push(
                    row.iter()
                        .zip(schema.columns())
                        .map(|(lit, col)| coerce(lit, col.ty, 0))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            Ok(LogicalPlan::Insert {
                table: table.clone(),
                rows: bound,
            })
        }
        Ast::Update { table, sets, pred } => {
            let schema = catalog
                .schema_of(table)
                .ok_or_else(|| EngineError::UnknownTable(table.clone()))?;
            let pred = bind_pred(pred, schema, table)?;
            let mut assigns = Vec::with_capacity(sets.len());
            for (target, assign) in sets {
                let idx = resolve(schema, table, target)?;
                let ty = schema.columns()[idx].ty;
                let bound = match assign {
                    AssignAst::Const(lit) => Assign::Const(coerce(lit, ty, target.pos)?),
                    AssignAst::Incr { src, delta } => {
                        let src_idx = resolve(schema, table, src)?;
                        let src_ty = schema.columns()[src_idx].ty;
                        if !matches!(src_ty, ColType::Int64 | ColType::Date) || src_ty != ty {
                            return Err(EngineError::TypeError(format!(
                                "increment needs matching integer or date columns, \
                                 got {} = {} ± n",
                                target.column, src.column
                            )));
                        }
                        Assign::Incr {
                            src: src_idx,
                            delta: *delta,
                        }
                    }
                };
                assigns.push((idx, bound));
            }
            Ok(LogicalPlan::Mutate {
                table: table.clone(),
                pred,
                action: MutateAction::Update(assigns),
            })
        }
        Ast::Delete { table, pred } => {
            let schema = catalog
                .schema_of(table)
                .ok_or_else(|| EngineError::UnknownTable(table.clone()))?;
            let pred = bind_pred(pred, schema, table)?;
            Ok(LogicalPlan::Mutate {
                table: table.clone(),
                pred,
                action: MutateAction::Delete,
            })
        }
        Ast::Select {
            projs,
            table,
            join,
            pred,
            group_by,
        } => bind_select(projs, table, join, pred, group_by, catalog),
    }
}

fn bind_select(
    projs: &Option<Vec<Proj>>,
    table: &str,
    join: &Option<(String, ColRef, ColRef)>,
    pred: &Option<PredAst>,
    group_by: &Option<ColRef>,
    catalog: &dyn CatalogView,
) -> Result<LogicalPlan> {
    let left_schema = catalog
        .schema_of(table)
        .ok_or_else(|| EngineError::UnknownTable(table.to_string()))?;
    let (scan_schema, join_spec) = match join {
        None => (left_schema.clone(), None),
        Some((right, a, b)) => {
            let right_schema = catalog
                .schema_of(right)
                .ok_or_else(|| EngineError::UnknownTable(right.clone()))?;
            // Assign the ON sides to tables by qualifier, defaulting to
            // (left, right) order for bare names.
            let (lref, rref) = match (&a.table, &b.table) {
                (Some(t), _) if *t == *right => (b, a),
                (_, Some(t)) if *t == *table => (b, a),
                _ => (a, b),
            };
            let left_col = resolve(left_schema, table, &strip_qualifier(lref, table))?;
            let right_col = resolve(right_schema, right, &strip_qualifier(rref, right))?;
            let lt = left_schema.columns()[left_col].ty;
            let rt = right_schema.columns()[right_col].ty;
            if lt != rt {
                return Err(EngineError::TypeError(format!(
                    "join columns have different types ({lt:?} vs {rt:?})"
                )));
            }
            let joined = left_schema.joined(table, right_schema, right)?;
            (
                joined,
                Some(JoinSpec {
                    table: right.clone(),
                    left_col,
                    right_col,
                }),
            )
        }
    };
    let pred = bind_pred(pred, &scan_schema, table)?;
    let shape = bind_shape(projs, group_by, &scan_schema, table)?;
    Ok(LogicalPlan::Query(QueryPlan {
        table: table.to_string(),
        join: join_spec,
        pred,
        shape,
        pad: None,
    }))
}

/// The per-table schemas of a join keep bare column names; drop a qualifier
/// that names the table being resolved against.
fn strip_qualifier(col: &ColRef, table: &str) -> ColRef {
    let mut c = col.clone();
    if c.table.as_deref() == Some(table) {
        c.table = None;
    }
    c
}

fn bind_shape(
    projs: &Option<Vec<Proj>>,
    group_by: &Option<ColRef>,
    schema: &Schema,
    scan_table: &str,
) -> Result<QueryShape> {
    let group_col = group_by
        .as_ref()
        .map(|c| resolve(schema, scan_table, c))
        .transpose()?;
    let Some(list) = projs else {
        // SELECT *
        if group_col.is_some() {
            return Err(EngineError::Sql(
                "GROUP BY needs explicit aggregate projections, not *".into(),
            ));
        }
        return Ok(QueryShape::Project((0..schema.columns().len()).collect()));
    };
    let mut specs = Vec::new();
    let mut plain = Vec::new();
    for p in list {
        match p {
            Proj::Col(c) => plain.push(resolve(schema, scan_table, c)?),
            Proj::Agg { func, arg, pos } => {
                let col = arg
                    .as_ref()
                    .map(|c| resolve(schema, scan_table, c))
                    .transpose()?;
                match (func, col) {
                    (AggFunc::Count, c) => specs.push(AggSpec {
                        func: AggFunc::Count,
                        col: c,
                    }),
                    (_, None) => {
                        return Err(err_at(*pos, "only COUNT may take *"));
                    }
                    (f, Some(c)) => {
                        let ty = schema.columns()[c].ty;
                        if matches!(f, AggFunc::Sum | AggFunc::Avg)
                            && !matches!(ty, ColType::Int64)
                        {
                            return Err(EngineError::TypeError(format!(
                                "{} needs an integer column",
                                schema.columns()[c].name
                            )));
                        }
                        specs.push(AggSpec { func: *f, col: Some(c) });
                    }
                }
            }
        }
    }
    match group_col {
        Some(col) => {
            if specs.is_empty() {
                return Err(EngineError::Sql(
                    "GROUP BY needs at least one aggregate".into(),
                ));
            }
            if plain.iter().any(|&c| c != col) {
                return Err(EngineError::Sql(
                    "plain projections under GROUP BY must be the grouping column".into(),
                ));
            }
            Ok(QueryShape::GroupBy { col, specs })
        }
        None => {
            if !specs.is_empty() && !plain.is_empty() {
                return Err(EngineError::Sql(
                    "cannot mix plain columns and aggregates without GROUP BY".into(),
                ));
            }
            if !specs.is_empty() {
                Ok(QueryShape::Aggregate(specs))
            } else {
                Ok(QueryShape::Project(plain))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    struct Cat(BTreeMap<String, Schema>);

    impl CatalogView for Cat {
        fn schema_of(&self, table: &str) -> Option<&Schema> {
            self.0.get(table)
        }
    }

    fn catalog() -> Cat {
        let mut m = BTreeMap::new();
        m.insert(
            "r".to_string(),
            Schema::new(vec![
                Column { name: "id".into(), ty: ColType::Int64 },
                Column { name: "pageRank".into(), ty: ColType::Int64 },
                Column { name: "day".into(), ty: ColType::Date },
                Column { name: "tag".into(), ty: ColType::Utf8(8) },
            ])
            .unwrap(),
        );
        m.insert(
            "u".to_string(),
            Schema::new(vec![
                Column { name: "id".into(), ty: ColType::Int64 },
                Column { name: "score".into(), ty: ColType::Int64 },
            ])
            .unwrap(),
        );
        Cat(m)
    }

    fn bind_text(text: &str) -> Result<LogicalPlan> {
        bind(&parse_sql(text)?, &catalog())
    }

    #[test]
    fn create_with_storage_and_capacity() {
        let plan = bind_text(
            "CREATE TABLE t (k INT, name TEXT(12), d DATE) \
             WITH STORAGE = BOTH(k), CAPACITY = 64",
        )
        .unwrap();
        match plan {
            LogicalPlan::CreateTable { name, schema, method, key_col, capacity } => {
                assert_eq!(name, "t");
                assert_eq!(schema.columns().len(), 3);
                assert_eq!(method, StorageMethod::Both);
                assert_eq!(key_col, Some(0));
                assert_eq!(capacity, 64);
            }
            other => panic!("wrong plan {other:?}"),
        }
    }

    #[test]
    fn filter_plus_aggregate_shape() {
        let plan = bind_text("SELECT COUNT(*) FROM r WHERE pageRank > 1000").unwrap();
        let LogicalPlan::Query(q) = plan else { panic!() };
        assert!(q.join.is_none());
        assert!(matches!(q.pred, Predicate::Atom { col: 1, cmp: Cmp::Gt, .. }));
        let QueryShape::Aggregate(specs) = &q.shape else { panic!() };
        assert_eq!(specs.len(), 1);
        assert!(specs[0].col.is_none());
        assert_eq!(q.shape_tag(), "scan(r)+filter+aggregate(1)");
    }

    #[test]
    fn group_by_shape() {
        let plan = bind_text("SELECT tag, SUM(pageRank) FROM r GROUP BY tag").unwrap();
        let LogicalPlan::Query(q) = plan else { panic!() };
        let QueryShape::GroupBy { col, specs } = &q.shape else { panic!() };
        assert_eq!(*col, 3);
        assert_eq!(specs.len(), 1);
    }

    #[test]
    fn join_resolves_sides_by_qualifier() {
        for text in [
            "SELECT * FROM r JOIN u ON r.id = u.id WHERE u.score > 5",
            "SELECT * FROM r JOIN u ON u.id = r.id WHERE u.score > 5",
        ] {
            let LogicalPlan::Query(q) = bind_text(text).unwrap() else { panic!() };
            let j = q.join.as_ref().unwrap();
            assert_eq!(j.table, "u");
            assert_eq!(j.left_col, 0);
            assert_eq!(j.right_col, 0);
            // Predicate binds against the joined schema: u.score is col 5.
            assert!(matches!(q.pred, Predicate::Atom { col: 5, .. }));
        }
    }

    #[test]
    fn predicate_precedence_and_parens() {
        let LogicalPlan::Query(q) =
            bind_text("SELECT * FROM r WHERE NOT id = 1 AND pageRank < 2 OR tag = 'x'").unwrap()
        else {
            panic!()
        };
        // ((NOT a) AND b) OR c
        let Predicate::Or(l, r) = q.pred else { panic!("want OR at top") };
        assert!(matches!(*l, Predicate::And(_, _)));
        assert!(matches!(*r, Predicate::Atom { col: 3, .. }));
        let Predicate::And(nl, _) = *l else { panic!() };
        assert!(matches!(*nl, Predicate::Not(_)));
    }

    #[test]
    fn date_literals_coerce() {
        let LogicalPlan::Query(q) =
            bind_text("SELECT * FROM r WHERE day >= '1970-01-11'").unwrap()
        else {
            panic!()
        };
        assert!(matches!(q.pred, Predicate::Atom { value: Value::Date(10), .. }));

        let LogicalPlan::Insert { rows, .. } =
            bind_text("INSERT INTO r VALUES (1, 2, '1970-01-02', 'a')").unwrap()
        else {
            panic!()
        };
        assert_eq!(rows[0][2], Value::Date(1));
    }

    #[test]
    fn update_and_delete_bind_to_mutations() {
        let LogicalPlan::Mutate { pred, action, .. } =
            bind_text("UPDATE r SET pageRank = pageRank + 1, tag = 'hot' WHERE id = 7").unwrap()
        else {
            panic!()
        };
        assert!(matches!(pred, Predicate::Atom { col: 0, .. }));
        let MutateAction::Update(assigns) = action else { panic!() };
        assert_eq!(assigns.len(), 2);
        assert!(matches!(assigns[0], (1, Assign::Incr { src: 1, delta: 1 })));
        assert!(matches!(assigns[1], (3, Assign::Const(Value::Text(_)))));

        let LogicalPlan::Mutate { action, .. } = bind_text("DELETE FROM r").unwrap() else {
            panic!()
        };
        assert!(matches!(action, MutateAction::Delete));
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let e = parse_sql("SELECT FROM r").unwrap_err().to_string();
        assert!(e.contains("position 12") && e.contains("FROM"), "{e}");
        let e = parse_sql("SELECT * FROM r WHERE id ~ 3").unwrap_err().to_string();
        assert!(e.contains("position"), "{e}");
        assert!(parse_sql("").unwrap_err().to_string().contains("empty"));
        let e = parse_sql("SELECT * FROM r extra").unwrap_err().to_string();
        assert!(e.contains("trailing"), "{e}");
    }

    #[test]
    fn bind_errors() {
        assert!(matches!(
            bind_text("SELECT * FROM nope"),
            Err(EngineError::UnknownTable(_))
        ));
        let e = bind_text("SELECT * FROM r WHERE ghost = 1").unwrap_err().to_string();
        assert!(e.contains("unknown column"), "{e}");
        let e = bind_text("SELECT * FROM r WHERE id = 'x'").unwrap_err().to_string();
        assert!(e.contains("integer column"), "{e}");
        let e = bind_text("SELECT id, SUM(pageRank) FROM r").unwrap_err().to_string();
        assert!(e.contains("mix"), "{e}");
        let e = bind_text("SELECT * FROM r JOIN u ON r.id = u.id WHERE id = 1")
            .unwrap_err()
            .to_string();
        assert!(e.contains("ambiguous"), "{e}");
        let e = bind_text("SELECT MIN(*) FROM r").unwrap_err().to_string();
        assert!(e.contains("COUNT"), "{e}");
    }

    #[test]
    fn strings_escape_quotes() {
        let Ast::Insert { rows, .. } = parse_sql("INSERT INTO r VALUES (1, 2, 3, 'a''b')").unwrap()
        else {
            panic!()
        };
        assert_eq!(rows[0][3], Literal::Str("a'b".into()));
    }
}

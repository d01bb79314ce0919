//! Parameter expressions.
//!
//! Expressions are evaluated one component at a time. A scalar operand broadcasts against a
//! vector one; `dot` and `lookup` always produce scalars.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Const(f64),
    Parent(String),
    Covariate(String),
    /// Entry of a vector-valued parent selected by an integer covariate.
    Lookup { table: String, index: String },
    Dot(Box<Expr>, Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Exp(Box<Expr>),
    Sigmoid(Box<Expr>),
    Sqrt(Box<Expr>),
}

impl Expr {
    pub fn c(v: f64) -> Self {
        Expr::Const(v)
    }

    pub fn parent(name: &str) -> Self {
        Expr::Parent(name.to_string())
    }

    pub fn cov(name: &str) -> Self {
        Expr::Covariate(name.to_string())
    }

    pub fn lookup(table: &str, index: &str) -> Self {
        Expr::Lookup { table: table.to_string(), index: index.to_string() }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, o: Expr) -> Self {
        Expr::Add(Box::new(self), Box::new(o))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, o: Expr) -> Self {
        Expr::Sub(Box::new(self), Box::new(o))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, o: Expr) -> Self {
        Expr::Mul(Box::new(self), Box::new(o))
    }

    pub fn dot(self, o: Expr) -> Self {
        Expr::Dot(Box::new(self), Box::new(o))
    }

    pub fn exp(self) -> Self {
        Expr::Exp(Box::new(self))
    }

    pub fn sigmoid(self) -> Self {
        Expr::Sigmoid(Box::new(self))
    }

    pub fn sqrt(self) -> Self {
        Expr::Sqrt(Box::new(self))
    }

    /// `exp(e / 2)`: the standard deviation for a log-variance `e`.
    pub fn std_from_log_var(e: Expr) -> Self {
        e.mul(Expr::c(0.5)).exp()
    }

    /// Calls `f` on every symbol: `(is_covariate, name)`.
    pub fn visit_symbols(&self, f: &mut impl FnMut(bool, &str)) {
        match self {
            Expr::Const(_) => {}
            Expr::Parent(n) => f(false, n),
            Expr::Covariate(n) => f(true, n),
            Expr::Lookup { table, index } => {
                f(false, table);
                f(true, index);
            }
            Expr::Dot(a, b) | Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.visit_symbols(f);
                b.visit_symbols(f);
            }
            Expr::Exp(a) | Expr::Sigmoid(a) | Expr::Sqrt(a) => a.visit_symbols(f),
        }
    }
}

/// Expression with symbols resolved to slots of the evaluation environment.
#[derive(Clone, Debug)]
pub(crate) enum CExpr {
    Const(f64),
    Parent(usize),
    Cov(usize),
    Lookup { table: usize, index: usize },
    Dot(Box<CExpr>, Box<CExpr>, usize),
    Add(Box<CExpr>, Box<CExpr>),
    Sub(Box<CExpr>, Box<CExpr>),
    Mul(Box<CExpr>, Box<CExpr>),
    Exp(Box<CExpr>),
    Sigmoid(Box<CExpr>),
    Sqrt(Box<CExpr>),
}

pub(crate) struct Env<'a> {
    pub parents: &'a [&'a [f64]],
    pub covs: &'a [&'a [f64]],
}

#[inline]
fn comp(s: &[f64], c: usize) -> f64 {
    if s.len() == 1 {
        s[0]
    } else {
        s[c]
    }
}

impl CExpr {
    pub fn eval(&self, c: usize, env: &Env) -> f64 {
        match self {
            CExpr::Const(v) => *v,
            CExpr::Parent(j) => comp(env.parents[*j], c),
            CExpr::Cov(j) => comp(env.covs[*j], c),
            CExpr::Lookup { table, index } => {
                let i = env.covs[*index][0] as usize;
                env.parents[*table][i]
            }
            CExpr::Dot(a, b, d) => (0..*d).map(|i| a.eval(i, env) * b.eval(i, env)).sum(),
            CExpr::Add(a, b) => a.eval(c, env) + b.eval(c, env),
            CExpr::Sub(a, b) => a.eval(c, env) - b.eval(c, env),
            CExpr::Mul(a, b) => a.eval(c, env) * b.eval(c, env),
            CExpr::Exp(a) => a.eval(c, env).exp(),
            CExpr::Sigmoid(a) => super::dist::sigmoid(a.eval(c, env)),
            CExpr::Sqrt(a) => a.eval(c, env).sqrt(),
        }
    }
}

/// Symbol information needed to compile an expression.
pub(crate) trait Scope {
    /// Slot and dimension of a parent visible to this expression.
    fn parent(&self, name: &str) -> Option<(usize, usize)>;
    /// Slot and dimension of a covariate visible to this expression.
    fn covariate(&self, name: &str) -> Option<(usize, usize)>;
}

/// Resolves symbols and infers the component count of `e`.
pub(crate) fn compile(e: &Expr, scope: &dyn Scope) -> Result<(CExpr, usize), String> {
    let bin = |a: &Expr, b: &Expr, op: &str| -> Result<(CExpr, CExpr, usize), String> {
        let (ca, da) = compile(a, scope)?;
        let (cb, db) = compile(b, scope)?;
        if da != db && da != 1 && db != 1 {
            return Err(format!("`{op}` of operands with {da} and {db} components"));
        }
        Ok((ca, cb, da.max(db)))
    };
    let un = |a: &Expr| compile(a, scope);
    Ok(match e {
        Expr::Const(v) => {
            if !v.is_finite() {
                return Err(format!("constant {v} is not finite"));
            }
            (CExpr::Const(*v), 1)
        }
        Expr::Parent(n) => {
            let (s, d) = scope.parent(n).ok_or_else(|| format!("`{n}` is not a parent"))?;
            (CExpr::Parent(s), d)
        }
        Expr::Covariate(n) => {
            let (s, d) = scope
                .covariate(n)
                .ok_or_else(|| format!("`{n}` is not an available covariate"))?;
            (CExpr::Cov(s), d)
        }
        Expr::Lookup { table, index } => {
            let (t, _) = scope.parent(table).ok_or_else(|| format!("`{table}` is not a parent"))?;
            let (i, di) = scope
                .covariate(index)
                .ok_or_else(|| format!("`{index}` is not an available covariate"))?;
            if di != 1 {
                return Err(format!("lookup index `{index}` must be scalar"));
            }
            (CExpr::Lookup { table: t, index: i }, 1)
        }
        Expr::Dot(a, b) => {
            let (ca, da) = compile(a, scope)?;
            let (cb, db) = compile(b, scope)?;
            if da != db {
                return Err(format!("`dot` of operands with {da} and {db} components"));
            }
            (CExpr::Dot(Box::new(ca), Box::new(cb), da), 1)
        }
        Expr::Add(a, b) => {
            let (x, y, d) = bin(a, b, "add")?;
            (CExpr::Add(Box::new(x), Box::new(y)), d)
        }
        Expr::Sub(a, b) => {
            let (x, y, d) = bin(a, b, "sub")?;
            (CExpr::Sub(Box::new(x), Box::new(y)), d)
        }
        Expr::Mul(a, b) => {
            let (x, y, d) = bin(a, b, "mul")?;
            (CExpr::Mul(Box::new(x), Box::new(y)), d)
        }
        Expr::Exp(a) => {
            let (x, d) = un(a)?;
            (CExpr::Exp(Box::new(x)), d)
        }
        Expr::Sigmoid(a) => {
            let (x, d) = un(a)?;
            (CExpr::Sigmoid(Box::new(x)), d)
        }
        Expr::Sqrt(a) => {
            let (x, d) = un(a)?;
            (CExpr::Sqrt(Box::new(x)), d)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct S;
    impl Scope for S {
        fn parent(&self, name: &str) -> Option<(usize, usize)> {
            match name {
                "a" => Some((0, 1)),
                "v" => Some((1, 3)),
                _ => None,
            }
        }
        fn covariate(&self, name: &str) -> Option<(usize, usize)> {
            match name {
                "x" => Some((0, 3)),
                "idx" => Some((1, 1)),
                _ => None,
            }
        }
    }

    #[test]
    fn evaluates_vocabulary() {
        let parents: [&[f64]; 2] = [&[2.0], &[1.0, -1.0, 0.5]];
        let covs: [&[f64]; 2] = [&[1.0, 0.0, 2.0], &[2.0]];
        let env = Env { parents: &parents, covs: &covs };
        let run = |e: Expr, c: usize| compile(&e, &S).unwrap().0.eval(c, &env);

        assert_eq!(run(Expr::parent("v").dot(Expr::cov("x")), 0), 2.0);
        assert_eq!(run(Expr::lookup("v", "idx"), 0), 0.5);
        assert_eq!(run(Expr::parent("a").add(Expr::parent("v")), 1), 1.0);
        assert_eq!(run(Expr::parent("a").mul(Expr::c(3.0)).sub(Expr::c(1.0)), 0), 5.0);
        assert_eq!(run(Expr::c(0.0).sigmoid(), 0), 0.5);
        assert_eq!(run(Expr::c(9.0).sqrt(), 0), 3.0);
        assert!((run(Expr::std_from_log_var(Expr::c(2.0)), 0) - 1f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn infers_components_and_rejects_mismatches() {
        assert_eq!(compile(&Expr::parent("v").add(Expr::c(1.0)), &S).unwrap().1, 3);
        assert_eq!(compile(&Expr::parent("v").dot(Expr::cov("x")), &S).unwrap().1, 1);
        assert!(compile(&Expr::parent("v").dot(Expr::parent("a")), &S).is_err());
        assert!(compile(&Expr::parent("zz"), &S).unwrap_err().contains("zz"));
        assert!(compile(&Expr::lookup("v", "x"), &S).is_err());
    }

    #[test]
    fn json_shape() {
        let e = Expr::parent("a").add(Expr::c(1.0));
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, r#"{"add":[{"parent":"a"},{"const":1.0}]}"#);
        assert_eq!(serde_json::from_str::<Expr>(&s).unwrap(), e);
    }
}

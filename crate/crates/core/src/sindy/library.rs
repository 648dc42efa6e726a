use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One candidate function. Variable indices refer to the augmented state
/// `[x, phi]`; forcing indices refer to the exogenous inputs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Constant,
    /// Exponent per augmented-state variable.
    Monomial(Vec<u32>),
    /// Linear in one forcing channel.
    Forcing(usize),
    Sin(usize),
    Cos(usize),
}

impl Term {
    pub fn degree(&self) -> u32 {
        match self {
            Term::Monomial(e) => e.iter().sum(),
            Term::Constant => 0,
            _ => 1,
        }
    }

    /// Value at augmented state `z` and forcing `b`.
    pub fn eval(&self, z: &[f64], b: &[f64]) -> f64 {
        match self {
            Term::Constant => 1.0,
            Term::Monomial(e) => e
                .iter()
                .zip(z)
                .filter(|(&p, _)| p > 0)
                .map(|(&p, &v)| v.powi(p as i32))
                .product(),
            Term::Forcing(i) => b[*i],
            Term::Sin(i) => z[*i].sin(),
            Term::Cos(i) => z[*i].cos(),
        }
    }

    /// Partial derivative with respect to augmented variable `var`.
    pub fn derivative(&self, z: &[f64], var: usize) -> f64 {
        match self {
            Term::Constant | Term::Forcing(_) => 0.0,
            Term::Monomial(e) => {
                let p = e[var];
                if p == 0 {
                    return 0.0;
                }
                let mut acc = p as f64 * z[var].powi(p as i32 - 1);
                for (k, (&q, &v)) in e.iter().zip(z).enumerate() {
                    if k != var && q > 0 {
                        acc *= v.powi(q as i32);
                    }
                }
                acc
            }
            Term::Sin(i) if *i == var => z[var].cos(),
            Term::Cos(i) if *i == var => -z[var].sin(),
            Term::Sin(_) | Term::Cos(_) => 0.0,
        }
    }

    /// Human-readable label given variable and forcing names.
    pub fn label(&self, vars: &[String], forcing: &[String]) -> String {
        match self {
            Term::Constant => "1".into(),
            Term::Monomial(e) => {
                let parts: Vec<String> = e
                    .iter()
                    .zip(vars)
                    .filter(|(&p, _)| p > 0)
                    .map(|(&p, v)| if p == 1 { v.clone() } else { format!("{v}^{p}") })
                    .collect();
                parts.join(" ")
            }
            Term::Forcing(i) => forcing[*i].clone(),
            Term::Sin(i) => format!("sin({})", vars[*i]),
            Term::Cos(i) => format!("cos({})", vars[*i]),
        }
    }
}

/// Ordered candidate-function library over `[x, phi]` and forcing `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionLibrary {
    pub n_state: usize,
    pub n_param: usize,
    pub n_forcing: usize,
    pub max_degree: u32,
    pub include_constant: bool,
    pub include_forcing_linear: bool,
    #[serde(default)]
    pub include_trig: bool,
    pub terms: Vec<Term>,
}

/// Exponent vectors of total degree `d` over `nvars` variables in graded
/// lexicographic order (`x1^2, x1 x2, ..., x2^2, ...`).
fn monomials_of_degree(nvars: usize, d: u32) -> Vec<Vec<u32>> {
    fn rec(start: usize, nvars: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for v in start..nvars {
            cur[v] += 1;
            rec(v, nvars, left - 1, cur, out);
            cur[v] -= 1;
        }
    }
    let mut out = Vec::new();
    rec(0, nvars, d, &mut vec![0; nvars], &mut out);
    out
}

impl FunctionLibrary {
    /// Polynomial library of degrees `1..=max_degree` over the augmented
    /// state, optionally with a constant column first and linear forcing
    /// columns last.
    pub fn polynomial(
        n_state: usize,
        n_param: usize,
        n_forcing: usize,
        max_degree: u32,
        include_constant: bool,
        include_forcing_linear: bool,
    ) -> Result<Self> {
        if n_state == 0 {
            return Err(Error::invalid("library needs at least one state variable"));
        }
        if max_degree == 0 {
            return Err(Error::invalid("library max_degree must be at least 1"));
        }
        let nvars = n_state + n_param;
        let mut terms = Vec::new();
        if include_constant {
            terms.push(Term::Constant);
        }
        for d in 1..=max_degree {
            terms.extend(monomials_of_degree(nvars, d).into_iter().map(Term::Monomial));
        }
        if include_forcing_linear {
            terms.extend((0..n_forcing).map(Term::Forcing));
        }
        Ok(Self {
            n_state,
            n_param,
            n_forcing,
            max_degree,
            include_constant,
            include_forcing_linear,
            include_trig: false,
            terms,
        })
    }

    /// Appends `sin` and `cos` of every augmented variable.
    pub fn with_trig(mut self) -> Self {
        if !self.include_trig {
            let nvars = self.n_aug();
            self.terms.extend((0..nvars).map(Term::Sin));
            self.terms.extend((0..nvars).map(Term::Cos));
            self.include_trig = true;
        }
        self
    }

    pub fn n_aug(&self) -> usize {
        self.n_state + self.n_param
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Checks that explicit terms are consistent with the declared sizes.
    pub fn validate(&self) -> Result<()> {
        let nvars = self.n_aug();
        for t in &self.terms {
            let ok = match t {
                Term::Constant => true,
                Term::Monomial(e) => e.len() == nvars && e.iter().any(|&p| p > 0),
                Term::Forcing(i) => *i < self.n_forcing,
                Term::Sin(i) | Term::Cos(i) => *i < nvars,
            };
            if !ok {
                return Err(Error::invalid(format!("library term {t:?} inconsistent with {nvars} variables")));
            }
        }
        Ok(())
    }

    /// Evaluates every term at one point into `out`.
    pub fn eval_row(&self, z: &[f64], b: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.terms) {
            *o = t.eval(z, b);
        }
    }

    pub fn variable_names(&self) -> Vec<String> {
        (1..=self.n_state)
            .map(|i| format!("x{i}"))
            .chain((1..=self.n_param).map(|i| format!("p{i}")))
            .collect()
    }

    pub fn forcing_names(&self) -> Vec<String> {
        (1..=self.n_forcing).map(|i| format!("b{i}")).collect()
    }
}

/// Applies the library to every row of `[states, forcing]`.
///
/// `states` is `T x (n + l)`, `forcing` is `T x m`. Returns `T x p`.
pub fn build_theta(states: &DMatrix<f64>, forcing: Option<&DMatrix<f64>>, library: &FunctionLibrary) -> Result<DMatrix<f64>> {
    let t = states.nrows();
    if states.ncols() != library.n_aug() {
        return Err(Error::shape(format!(
            "state matrix has {} columns, library expects {}",
            states.ncols(),
            library.n_aug()
        )));
    }
    let m = forcing.map_or(0, |f| f.ncols());
    if m != library.n_forcing || forcing.is_some_and(|f| f.nrows() != t) {
        return Err(Error::shape(format!(
            "forcing has {m} columns, library expects {}",
            library.n_forcing
        )));
    }
    let p = library.len();
    let mut theta = DMatrix::zeros(t, p);
    let mut z = vec![0.0; library.n_aug()];
    let mut b = vec![0.0; m];
    let mut row = vec![0.0; p];
    for j in 0..t {
        for (i, v) in z.iter_mut().enumerate() {
            *v = states[(j, i)];
        }
        if let Some(f) = forcing {
            for (i, v) in b.iter_mut().enumerate() {
                *v = f[(j, i)];
            }
        }
        library.eval_row(&z, &b, &mut row);
        for (k, &v) in row.iter().enumerate() {
            theta[(j, k)] = v;
        }
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn two_variable_quadratic_row() {
        let lib = FunctionLibrary::polynomial(2, 0, 0, 2, false, false).unwrap();
        let theta = build_theta(&DMatrix::from_row_slice(1, 2, &[2.0, 3.0]), None, &lib).unwrap();
        assert_eq!(theta.row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn cardinalities() {
        assert_eq!(FunctionLibrary::polynomial(4, 1, 0, 3, false, false).unwrap().len(), 55);
        assert_eq!(FunctionLibrary::polynomial(4, 2, 0, 3, false, false).unwrap().len(), 83);
        for nv in 1..7 {
            for d in 1..4u32 {
                let lib = FunctionLibrary::polynomial(nv, 0, 2, d, true, true).unwrap();
                let expect = binom(nv + d as usize, d as usize) - 1 + 1 + 2;
                assert_eq!(lib.len(), expect);
            }
        }
    }

    #[test]
    fn quadratic_block_includes_parameter_crosses() {
        let lib = FunctionLibrary::polynomial(2, 1, 0, 2, false, false).unwrap();
        let names = lib.variable_names();
        let labels: Vec<String> = lib.terms.iter().map(|t| t.label(&names, &[])).collect();
        assert_eq!(labels, ["x1", "x2", "p1", "x1^2", "x1 x2", "x1 p1", "x2^2", "x2 p1", "p1^2"]);
    }

    #[test]
    fn forcing_and_constant_positions() {
        let lib = FunctionLibrary::polynomial(1, 0, 2, 1, true, true).unwrap();
        assert_eq!(lib.terms, vec![Term::Constant, Term::Monomial(vec![1]), Term::Forcing(0), Term::Forcing(1)]);
        let f = DMatrix::from_row_slice(1, 2, &[5.0, 6.0]);
        let theta = build_theta(&DMatrix::from_row_slice(1, 1, &[2.0]), Some(&f), &lib).unwrap();
        assert_eq!(theta.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn shape_errors() {
        let lib = FunctionLibrary::polynomial(2, 0, 1, 2, false, true).unwrap();
        assert!(build_theta(&DMatrix::zeros(3, 3), Some(&DMatrix::zeros(3, 1)), &lib).is_err());
        assert!(build_theta(&DMatrix::zeros(3, 2), None, &lib).is_err());
    }

    #[test]
    fn product_rule() {
        let t = Term::Monomial(vec![1, 1]);
        assert_eq!(t.derivative(&[2.0, 3.0], 0), 3.0);
        assert_eq!(t.derivative(&[2.0, 3.0], 1), 2.0);
        let s = Term::Sin(0);
        assert_eq!(s.derivative(&[0.0], 0), 1.0);
    }
}

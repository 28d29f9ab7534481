//! The model class `f(x) = c(x) + Σ_n v_n ρ(A_n x - t_n)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, Error, Result};
use crate::greens::{rho, ActivationAlias, GreensProfile};
use crate::operator::OperatorSpec;
use crate::polyspace::{enumerate_multi_indices, monomial_eval, MultiIndex, PolyCoeffs};
use crate::stiefel::stiefel_violation;

/// Largest `‖AAᵀ - I‖_F` a stored atom may have.
pub const ATOM_STIEFEL_TOL: f64 = 1e-10;
/// Largest violation accepted when assembling a dictionary.
pub const DICTIONARY_STIEFEL_TOL: f64 = 1e-8;
/// Two atoms are the same when their invariant keys agree to this tolerance.
pub const MERGE_TOL: f64 = 1e-9;

type InvariantKey = (DMatrix<f64>, DVector<f64>);

/// One neuron `v ρ(A x - t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub v: f64,
    pub a: DMatrix<f64>,
    pub t: Vec<f64>,
}

impl Atom {
    /// `(AᵀA, Aᵀt)`, unchanged by `(A, t) -> (UA, Ut)` for orthogonal `U`.
    pub fn invariant_key(&self) -> (DMatrix<f64>, DVector<f64>) {
        let at = self.a.transpose();
        let t = DVector::from_column_slice(&self.t);
        (&at * &self.a, at * t)
    }

    fn projection(&self, x: &[f64]) -> Vec<f64> {
        (0..self.a.nrows())
            .map(|r| self.a.row(r).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - self.t[r])
            .collect()
    }
}

/// Training data: rows of `x` are inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return dimension("a dataset needs at least one row and one feature");
        }
        if x.nrows() != y.len() {
            return dimension(format!("{} inputs but {} targets", x.nrows(), y.len()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return domain("dataset entries must be finite");
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, m: usize) -> Vec<f64> {
        self.x.row(m).iter().copied().collect()
    }
}

/// A fitted network. Immutable once built; all checks happen in [`Model::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: OperatorSpec,
    profile: GreensProfile,
    atoms: Vec<Atom>,
    poly: PolyCoeffs,
    activation_alias: Option<ActivationAlias>,
}

impl Model {
    pub fn new(
        spec: OperatorSpec,
        atoms: Vec<Atom>,
        poly: PolyCoeffs,
        activation_alias: Option<ActivationAlias>,
    ) -> Result<Self> {
        let profile = GreensProfile::for_spec(&spec)?;
        let (d, m) = (spec.d, spec.m());
        for (i, atom) in atoms.iter().enumerate() {
            if atom.a.shape() != (m, d) || atom.t.len() != m {
                return dimension(format!(
                    "atom {i}: A is {}x{} and t has {} entries, expected {m}x{d} and {m}",
                    atom.a.nrows(),
                    atom.a.ncols(),
                    atom.t.len()
                ));
            }
            if !atom.v.is_finite() || atom.a.iter().chain(&atom.t).any(|v| !v.is_finite()) {
                return domain(format!("atom {i} has non-finite entries"));
            }
            let violation = stiefel_violation(&atom.a);
            if !(violation <= ATOM_STIEFEL_TOL) {
                return domain(format!("atom {i}: ‖AAᵀ - I‖ = {violation:.3e} exceeds {ATOM_STIEFEL_TOL:e}"));
            }
        }
        if poly.d != d {
            return dimension(format!("polynomial has {} variables, model has {d}", poly.d));
        }
        if poly.degree > spec.n_l() {
            return domain(format!("polynomial degree {} exceeds n_L = {}", poly.degree, spec.n_l()));
        }
        if let Some(alias) = activation_alias {
            alias.check(&profile)?;
        }
        Ok(Self { spec, profile, atoms, poly, activation_alias })
    }

    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn profile(&self) -> &GreensProfile {
        &self.profile
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn poly(&self) -> &PolyCoeffs {
        &self.poly
    }

    pub fn activation_alias(&self) -> Option<ActivationAlias> {
        self.activation_alias
    }

    fn activation(&self, z: &[f64]) -> f64 {
        match self.activation_alias {
            Some(alias) => alias.eval(z),
            None => rho(&self.profile, z),
        }
    }

    /// The same function written with an alias activation: weights flip
    /// sign and the null-space difference moves into the polynomial.
    pub fn with_alias(&self, alias: ActivationAlias) -> Result<Self> {
        alias.check(&self.profile)?;
        if self.activation_alias.is_some() {
            return domain("model already uses an activation alias");
        }
        let s = alias.sign_relative_to_rho();
        // ρ(z) = s·relu(z) + z/2 with z = a·x - t, m = 1.
        let d = self.spec.d;
        let mut poly = PolyCoeffs::zeros(d, self.spec.n_l().max(1));
        for (n, b) in self.poly.indices().iter().zip(self.poly.values()) {
            poly.set(n, *b)?;
        }
        let mut atoms = self.atoms.clone();
        for atom in &mut atoms {
            let half_v = atom.v / 2.0;
            let mut n = MultiIndex(vec![0; d]);
            poly.set(&n, poly.get(&n).unwrap_or(0.0) - half_v * atom.t[0])?;
            for j in 0..d {
                n.0.iter_mut().enumerate().for_each(|(i, e)| *e = u32::from(i == j));
                poly.set(&n, poly.get(&n).unwrap_or(0.0) + half_v * atom.a[(0, j)])?;
            }
            atom.v *= s;
        }
        Self::new(self.spec, atoms, poly, Some(alias))
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.spec.d {
            return dimension(format!("input has {} entries, model expects {}", x.len(), self.spec.d));
        }
        let mut out = self.poly.eval(x);
        for atom in &self.atoms {
            out += atom.v * self.activation(&atom.projection(x));
        }
        Ok(out)
    }

    /// Predictions for every row of `x`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.spec.d {
            return dimension(format!("inputs have {} columns, model expects {}", x.ncols(), self.spec.d));
        }
        let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
        let out: Result<Vec<f64>> = rows.par_iter().map(|r| self.forward(r)).collect();
        Ok(DVector::from_vec(out?))
    }

    /// Copy with equivalent atoms merged (weights added, first
    /// representative kept) and zero-weight atoms dropped.
    pub fn merged(&self) -> Self {
        let mut out = self.clone();
        out.atoms = merge_atoms(&self.atoms).into_iter().filter(|a| a.v != 0.0).collect();
        out
    }

    /// Copy without zero-weight atoms.
    pub fn without_zero_atoms(&self) -> Self {
        let mut out = self.clone();
        out.atoms.retain(|a| a.v != 0.0);
        out
    }
}

fn keys_match(a: &(DMatrix<f64>, DVector<f64>), b: &(DMatrix<f64>, DVector<f64>)) -> bool {
    (&a.0 - &b.0).amax() <= MERGE_TOL && (&a.1 - &b.1).amax() <= MERGE_TOL
}

/// Groups atoms whose invariant keys agree within [`MERGE_TOL`], in order of
/// first appearance, summing their weights.
pub fn merge_atoms(atoms: &[Atom]) -> Vec<Atom> {
    let mut groups: Vec<(Atom, InvariantKey)> = Vec::new();
    for atom in atoms {
        let key = atom.invariant_key();
        match groups.iter_mut().find(|(_, k)| keys_match(k, &key)) {
            Some((rep, _)) => rep.v += atom.v,
            None => groups.push((atom.clone(), key)),
        }
    }
    groups.into_iter().map(|(a, _)| a).collect()
}

/// `Σ |v_n|` after merging equivalent atoms.
pub fn reg_cost(model: &Model) -> f64 {
    merge_atoms(model.atoms()).iter().map(|a| a.v.abs()).sum()
}

/// `G[m, i] = ρ(A_i x_m - t_i)` and `P[m, j] = m_{n_j}(x_m)` over the
/// graded-lex basis of degree `<= n_L`.
pub fn dictionary_matrix(
    spec: &OperatorSpec,
    params: &[(DMatrix<f64>, Vec<f64>)],
    x: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let profile = GreensProfile::for_spec(spec)?;
    let (d, m) = (spec.d, spec.m());
    if x.ncols() != d {
        return dimension(format!("inputs have {} columns, operator has d = {d}", x.ncols()));
    }
    for (i, (a, t)) in params.iter().enumerate() {
        if a.shape() != (m, d) || t.len() != m {
            return dimension(format!("atom {i} has the wrong shape for (d, k) = ({d}, {})", spec.k));
        }
        let violation = stiefel_violation(a);
        if !(violation < DICTIONARY_STIEFEL_TOL) {
            return domain(format!("atom {i}: ‖AAᵀ - I‖ = {violation:.3e} exceeds {DICTIONARY_STIEFEL_TOL:e}"));
        }
    }
    let rows = x.nrows();
    let n = params.len();
    let g_rows: Vec<Vec<f64>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let xr: Vec<f64> = x.row(r).iter().copied().collect();
            params
                .iter()
                .map(|(a, t)| {
                    let z: Vec<f64> = (0..m)
                        .map(|q| a.row(q).iter().zip(&xr).map(|(u, v)| u * v).sum::<f64>() - t[q])
                        .collect();
                    rho(&profile, &z)
                })
                .collect()
        })
        .collect();
    let g = DMatrix::from_fn(rows, n, |r, c| g_rows[r][c]);
    Ok((g, poly_matrix(d, spec.n_l(), x)))
}

/// Monomial matrix over the graded-lex basis of degree `<= degree`.
pub fn poly_matrix(d: usize, degree: i64, x: &DMatrix<f64>) -> DMatrix<f64> {
    let indices = enumerate_multi_indices(d, degree);
    DMatrix::from_fn(x.nrows(), indices.len(), |r, c| {
        let xr: Vec<f64> = x.row(r).iter().copied().collect();
        monomial_eval(&indices[c], &xr)
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomJson {
    v: f64,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    t: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolyJson {
    degree: i64,
    coeffs: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    spec: OperatorSpec,
    atoms: Vec<AtomJson>,
    poly: PolyJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation_alias: Option<String>,
}

impl Model {
    pub fn to_json_value(&self) -> serde_json::Value {
        let atoms = self
            .atoms
            .iter()
            .map(|a| AtomJson {
                v: a.v,
                a: a.a.row_iter().map(|r| r.iter().copied().collect()).collect(),
                t: a.t.clone(),
            })
            .collect();
        let coeffs = self
            .poly
            .indices()
            .iter()
            .zip(self.poly.values())
            .map(|(n, b)| (n.to_string(), *b))
            .collect();
        let doc = ModelJson {
            spec: self.spec,
            atoms,
            poly: PolyJson { degree: self.poly.degree, coeffs },
            activation_alias: self.activation_alias.map(|a| a.name().to_string()),
        };
        serde_json::to_value(doc).expect("model serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelJson = serde_json::from_str(text).map_err(|e| Error::Schema(format!("model JSON: {e}")))?;
        let d = doc.spec.d;
        let mut atoms = Vec::with_capacity(doc.atoms.len());
        for (i, a) in doc.atoms.into_iter().enumerate() {
            let ncols = a.a.first().map_or(0, Vec::len);
            if a.a.is_empty() || a.a.iter().any(|r| r.len() != ncols) {
                return Err(Error::Schema(format!("atom {i}: A must be a nonempty rectangular matrix")));
            }
            let flat: Vec<f64> = a.a.iter().flatten().copied().collect();
            atoms.push(Atom { v: a.v, a: DMatrix::from_row_slice(a.a.len(), ncols, &flat), t: a.t });
        }
        let mut poly = PolyCoeffs::zeros(d, doc.poly.degree);
        for (key, value) in doc.poly.coeffs {
            let n: MultiIndex = key.parse()?;
            if n.dim() != d {
                return Err(Error::Schema(format!("coefficient {key} has {} entries, expected {d}", n.dim())));
            }
            poly.set(&n, value).map_err(|e| Error::Schema(e.to_string()))?;
        }
        let alias = doc.activation_alias.as_deref().map(ActivationAlias::parse).transpose()?;
        Self::new(doc.spec, atoms, poly, alias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::stiefel::stiefel_project;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn spec(alpha: f64, d: usize, k: usize) -> OperatorSpec {
        OperatorSpec::fractional_laplacian(alpha, d, k).unwrap()
    }

    fn unit_atom(v: f64, a: &[f64], t: f64) -> Atom {
        Atom { v, a: DMatrix::from_row_slice(1, a.len(), a), t: vec![t] }
    }

    #[test]
    fn forward_examples() {
        let s = spec(2.0, 2, 1);
        let m = Model::new(s, vec![unit_atom(1.0, &[1.0, 0.0], 0.0)], PolyCoeffs::zeros(2, 1), None).unwrap();
        assert_eq!(m.forward(&[2.0, 5.0]).unwrap(), -1.0);
        assert!(m.forward(&[2.0]).is_err());

        let poly = PolyCoeffs::from_values(2, 1, vec![3.0, 0.0, 1.0]).unwrap();
        let m = Model::new(s, vec![], poly, None).unwrap();
        assert_eq!(m.forward(&[0.25, -7.0]).unwrap(), 3.25);
    }

    #[test]
    fn k0_atoms_are_shifted_radial_functions() {
        let s = spec(4.0, 2, 0);
        let profile = GreensProfile::for_spec(&s).unwrap();
        let mut rng = stream(11, "test");
        for _ in 0..20 {
            let g = DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let a = stiefel_project(&g, &mut rng).unwrap();
            let t: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let x: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let tau = a.transpose() * DVector::from_column_slice(&t);
            let lhs = rho(&profile, (&a * DVector::from_column_slice(&x) - DVector::from_column_slice(&t)).as_slice());
            let rhs = rho(&profile, &[x[0] - tau[0], x[1] - tau[1]]);
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn reg_cost_examples() {
        let s = spec(2.0, 2, 1);
        let atoms = vec![
            unit_atom(1.0, &[1.0, 0.0], 0.0),
            unit_atom(-2.0, &[0.0, 1.0], 0.0),
            unit_atom(3.0, &[0.6, 0.8], 1.0),
        ];
        let m = Model::new(s, atoms, PolyCoeffs::zeros(2, 1), None).unwrap();
        assert_eq!(reg_cost(&m), 6.0);
        let pair = vec![unit_atom(1.0, &[0.6, 0.8], 0.5), unit_atom(-1.0, &[-0.6, -0.8], -0.5)];
        let m = Model::new(s, pair, PolyCoeffs::zeros(2, 1), None).unwrap();
        assert_eq!(reg_cost(&m), 0.0);
        assert!(m.merged().atoms().is_empty());
        let m = Model::new(s, vec![], PolyCoeffs::zeros(2, 1), None).unwrap();
        assert_eq!(reg_cost(&m), 0.0);
    }

    #[test]
    fn dictionary_examples() {
        let s = spec(2.0, 2, 1);
        let x = DMatrix::from_row_slice(1, 2, &[2.0, 5.0]);
        let (g, p) = dictionary_matrix(&s, &[(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), vec![0.5])], &x).unwrap();
        assert_eq!(g.shape(), (1, 1));
        assert_eq!(g[(0, 0)], -0.75);
        assert_eq!(p.column(0).iter().copied().collect::<Vec<_>>(), vec![1.0]);
        let bad = DMatrix::from_row_slice(1, 2, &[1.0, 1e-3]);
        assert!(matches!(dictionary_matrix(&s, &[(bad, vec![0.0])], &x), Err(Error::Domain(_))));

        let s0 = spec(4.0, 2, 0);
        let profile = GreensProfile::for_spec(&s0).unwrap();
        let r = 0.5f64.sqrt();
        let a = DMatrix::from_row_slice(2, 2, &[r, r, -r, r]);
        let t = vec![0.3, -1.1];
        let xs = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 2.0, -0.5, 0.7]);
        let (g, p) = dictionary_matrix(&s0, &[(a.clone(), t.clone())], &xs).unwrap();
        let tau = a.transpose() * DVector::from_column_slice(&t);
        for r in 0..3 {
            let exact = rho(&profile, &[xs[(r, 0)] - tau[0], xs[(r, 1)] - tau[1]]);
            assert!((g[(r, 0)] - exact).abs() <= 1e-12);
            assert_eq!(p[(r, 0)], 1.0);
        }
    }

    #[test]
    fn relu_alias_preserves_the_function() {
        let s = spec(2.0, 2, 1);
        let atoms = vec![unit_atom(1.5, &[0.6, 0.8], 0.2), unit_atom(-0.7, &[1.0, 0.0], -1.0)];
        let poly = PolyCoeffs::from_values(2, 1, vec![0.1, -0.2, 0.3]).unwrap();
        let m = Model::new(s, atoms, poly, None).unwrap();
        let relu = m.with_alias(ActivationAlias::Relu).unwrap();
        assert_eq!(reg_cost(&relu), reg_cost(&m));
        for x in [[0.0, 0.0], [1.0, -2.0], [-3.0, 0.5]] {
            assert!((m.forward(&x).unwrap() - relu.forward(&x).unwrap()).abs() < 1e-14);
        }
        let back = Model::from_json(&relu.to_json()).unwrap();
        assert_eq!(back, relu);
        assert!(spec(3.0, 2, 1).n_l() >= 1);
        let m3 = Model::new(spec(3.0, 2, 1), vec![], PolyCoeffs::zeros(2, 1), None).unwrap();
        assert!(m3.with_alias(ActivationAlias::Relu).is_err());
    }

    #[test]
    fn json_round_trip_and_rejections() {
        let s = spec(3.0, 3, 1);
        let mut rng = stream(2, "test");
        let atoms = (0..4)
            .map(|_| {
                let g = DMatrix::from_fn(2, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
                let a = stiefel_project(&g, &mut rng).unwrap();
                Atom { v: rng.sample(StandardNormal), a, t: vec![rng.sample(StandardNormal), 0.1] }
            })
            .collect();
        let poly = PolyCoeffs::from_values(3, 2, (0..10).map(|i| (i as f64).sqrt() / 3.0).collect()).unwrap();
        let model = Model::new(s, atoms, poly, None).unwrap();
        let back = Model::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);

        let mut doc = model.to_json_value();
        doc["atoms"][0]["A"][0][0] = serde_json::json!(doc["atoms"][0]["A"][0][0].as_f64().unwrap() + 1e-3);
        assert!(matches!(Model::from_json(&doc.to_string()), Err(Error::Domain(_))));
        let mut doc = model.to_json_value();
        doc["spec"]["family"] = serde_json::json!("bilaplacian");
        assert!(Model::from_json(&doc.to_string()).is_err());
    }
}

//! Combinatorial IFS descriptions and the named spec registry.
//!
//! A [`FractalSpec`] is a Cartesian product of one or more [`Primitive`]
//! self-similar sets. Every primitive uses maps of the form
//! `x -> x / m + t_i`, so the contraction ratio is always `1/m` and each
//! translation `t_i` is stored as an integer digit vector `m * t_i`.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::SpecError;

/// Shape of the reference cell that the maps act on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellShape {
    /// Axis-aligned unit cube `[0,1]^dim`; closed cells meet when the boxes touch.
    Cube,
    /// Standard simplex in barycentric coordinates; cells meet at shared corners.
    Simplex,
}

/// A single (non-product) self-similar set.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Primitive {
    pub name: String,
    /// `m` in the contraction ratio `1/m`.
    pub denominator: u32,
    pub shape: CellShape,
    /// Coordinate dimension (barycentric dimension for simplices).
    pub dim: usize,
    /// Translation digits per letter, each entry in `0..m`.
    pub digits: Vec<Vec<i64>>,
    /// Cells meet only in finitely many points (enables junction-graph forms).
    pub finitely_ramified: bool,
}

impl Primitive {
    pub fn new(
        name: &str,
        denominator: u32,
        shape: CellShape,
        digits: Vec<Vec<i64>>,
    ) -> Result<Self, SpecError> {
        if denominator < 2 {
            return Err(SpecError::InvalidSpec(format!(
                "{name}: contraction ratio 1/{denominator} is not in (0,1)"
            )));
        }
        let dim = digits.first().map(Vec::len).unwrap_or(0);
        if digits.is_empty() || dim == 0 {
            return Err(SpecError::InvalidSpec(format!("{name}: empty alphabet")));
        }
        for d in &digits {
            if d.len() != dim {
                return Err(SpecError::InvalidSpec(format!("{name}: ragged digit vectors")));
            }
            if d.iter().any(|&x| x < 0 || x >= denominator as i64) {
                return Err(SpecError::InvalidSpec(format!(
                    "{name}: digit {d:?} outside 0..{denominator}"
                )));
            }
            if shape == CellShape::Simplex && d.iter().sum::<i64>() > denominator as i64 - 1 {
                return Err(SpecError::InvalidSpec(format!(
                    "{name}: simplex translation {d:?} leaves the reference simplex"
                )));
            }
        }
        let mut sorted = digits.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != digits.len() {
            return Err(SpecError::InvalidSpec(format!("{name}: geometry_model letters collide")));
        }
        let finitely_ramified = match shape {
            CellShape::Simplex => true,
            CellShape::Cube => dim == 1,
        };
        Ok(Self { name: name.to_string(), denominator, shape, dim, digits, finitely_ramified })
    }

    pub fn alphabet_size(&self) -> usize {
        self.digits.len()
    }

    /// Number of reference-cell corners (junction points owned by one cell).
    pub fn corner_count(&self) -> usize {
        match self.shape {
            CellShape::Cube => 1 << self.dim,
            CellShape::Simplex => self.dim,
        }
    }

    pub fn interval() -> Self {
        Self::new("interval", 2, CellShape::Cube, vec![vec![0], vec![1]]).expect("valid")
    }

    pub fn carpet() -> Self {
        let mut digits = Vec::new();
        for a in 0..3 {
            for b in 0..3 {
                if (a, b) != (1, 1) {
                    digits.push(vec![a, b]);
                }
            }
        }
        Self::new("carpet", 3, CellShape::Cube, digits).expect("valid")
    }

    pub fn sponge() -> Self {
        let mut digits = Vec::new();
        for a in 0..3i64 {
            for b in 0..3i64 {
                for c in 0..3i64 {
                    let centered = [a, b, c].iter().filter(|&&x| x == 1).count();
                    if centered < 2 {
                        digits.push(vec![a, b, c]);
                    }
                }
            }
        }
        Self::new("sponge", 3, CellShape::Cube, digits).expect("valid")
    }

    pub fn gasket() -> Self {
        Self::new(
            "gasket",
            2,
            CellShape::Simplex,
            vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]],
        )
        .expect("valid")
    }
}

/// A combinatorial IFS description, possibly a product of primitives.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FractalSpec {
    pub name: String,
    pub factors: Vec<Primitive>,
}

impl FractalSpec {
    pub fn primitive(p: Primitive) -> Self {
        Self { name: p.name.clone(), factors: vec![p] }
    }

    pub fn interval() -> Self {
        Self::primitive(Primitive::interval())
    }

    pub fn carpet() -> Self {
        Self::primitive(Primitive::carpet())
    }

    pub fn gasket() -> Self {
        Self::primitive(Primitive::gasket())
    }

    pub fn sponge() -> Self {
        Self::primitive(Primitive::sponge())
    }

    /// `[0,1]^2` as the product of two intervals (l-infinity metric).
    pub fn square() -> Self {
        let mut s = product_spec(&Self::interval(), &Self::interval()).expect("equal ratios");
        s.name = "square".into();
        s
    }

    pub fn alphabet_size(&self) -> usize {
        self.factors.iter().map(Primitive::alphabet_size).product()
    }

    /// Denominator `m` of the shared contraction ratio `1/m`.
    pub fn denominator(&self) -> u32 {
        self.factors[0].denominator
    }

    pub fn contraction_ratio(&self) -> Ratio<u32> {
        Ratio::new(1, self.denominator())
    }

    pub fn ratio_f64(&self) -> f64 {
        1.0 / self.denominator() as f64
    }

    pub fn hausdorff_dim(&self) -> f64 {
        (self.alphabet_size() as f64).ln() / (self.denominator() as f64).ln()
    }

    pub fn is_product(&self) -> bool {
        self.factors.len() > 1
    }

    pub fn finitely_ramified(&self) -> bool {
        self.factors.len() == 1 && self.factors[0].finitely_ramified
    }

    /// Total coordinate dimension of the concatenated geometry model.
    pub fn coord_dim(&self) -> usize {
        self.factors.iter().map(|f| f.dim).sum()
    }

    /// Canonical content key: identical geometry gives identical keys.
    pub fn canonical_key(&self) -> String {
        self.factors.iter().map(|f| f.name.as_str()).collect::<Vec<_>>().join("*")
    }

    /// First 8 bytes of SHA-256 over the canonical key and the geometry model.
    pub fn content_hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.canonical_key().as_bytes());
        for f in &self.factors {
            h.update(f.denominator.to_le_bytes());
            h.update([f.shape as u8]);
            for d in &f.digits {
                for x in d {
                    h.update(x.to_le_bytes());
                }
            }
        }
        let out = h.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
    }

    /// Splits a product letter into per-factor letters (first factor most significant).
    pub fn split_letter(&self, mut letter: usize, out: &mut [usize]) {
        for (j, f) in self.factors.iter().enumerate().rev() {
            let k = f.alphabet_size();
            out[j] = letter % k;
            letter /= k;
        }
    }

    pub fn join_letters(&self, letters: &[usize]) -> usize {
        self.factors
            .iter()
            .zip(letters)
            .fold(0, |acc, (f, &l)| acc * f.alphabet_size() + l)
    }

    /// Resolves a registry name or product expression.
    ///
    /// Grammar: `term ('*' term)*` with `term = name ('^' k)?`; `AxB` is
    /// accepted when every `x`-separated piece is itself a registry name.
    pub fn from_name(expr: &str) -> Result<Self, SpecError> {
        let expr = expr.trim();
        if expr.is_empty() {
            return Err(SpecError::UnknownSpec(expr.to_string()));
        }
        let pieces: Vec<&str> = if expr.contains('*') || expr.contains('×') {
            expr.split(['*', '×']).map(str::trim).collect()
        } else if lookup(expr).is_none() && expr.contains('x') {
            expr.split('x').map(str::trim).collect()
        } else {
            vec![expr]
        };
        let mut acc: Option<FractalSpec> = None;
        for piece in &pieces {
            let term = parse_term(piece)?;
            acc = Some(match acc {
                None => term,
                Some(a) => product_spec(&a, &term)?,
            });
        }
        let mut spec = acc.expect("at least one piece");
        if pieces.len() > 1 || expr.contains('^') {
            spec.name = expr.replace(' ', "");
        }
        Ok(spec)
    }
}

fn lookup(name: &str) -> Option<FractalSpec> {
    match name {
        "interval" => Some(FractalSpec::interval()),
        "square" => Some(FractalSpec::square()),
        "carpet" => Some(FractalSpec::carpet()),
        "gasket" => Some(FractalSpec::gasket()),
        "sponge" => Some(FractalSpec::sponge()),
        _ => None,
    }
}

fn parse_term(term: &str) -> Result<FractalSpec, SpecError> {
    let (base, power) = match term.split_once('^') {
        Some((b, k)) => {
            let k: usize = k
                .trim()
                .parse()
                .map_err(|_| SpecError::UnknownSpec(term.to_string()))?;
            if k == 0 {
                return Err(SpecError::UnknownSpec(term.to_string()));
            }
            (b.trim(), k)
        }
        None => (term, 1),
    };
    let one = lookup(base).ok_or_else(|| SpecError::UnknownSpec(base.to_string()))?;
    let mut acc = one.clone();
    for _ in 1..power {
        acc = product_spec(&acc, &one)?;
    }
    if power > 1 {
        acc.name = format!("{base}^{power}");
    }
    Ok(acc)
}

/// Cartesian product of two specs with equal contraction ratios.
pub fn product_spec(a: &FractalSpec, b: &FractalSpec) -> Result<FractalSpec, SpecError> {
    if a.denominator() != b.denominator() {
        return Err(SpecError::RatioMismatch {
            left: a.contraction_ratio(),
            right: b.contraction_ratio(),
        });
    }
    let mut factors = a.factors.clone();
    factors.extend(b.factors.iter().cloned());
    Ok(FractalSpec { name: format!("{}*{}", a.name, b.name), factors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn carpet_dimensions() {
        let c = FractalSpec::carpet();
        assert_eq!(c.alphabet_size(), 8);
        assert_eq!(c.contraction_ratio(), Ratio::new(1, 3));
        assert_eq!(c.hausdorff_dim(), 8f64.ln() / 3f64.ln());
    }

    #[test]
    fn sponge_has_twenty_maps() {
        assert_eq!(FractalSpec::sponge().alphabet_size(), 20);
    }

    #[test]
    fn products() {
        let sq = product_spec(&FractalSpec::interval(), &FractalSpec::interval()).unwrap();
        assert_eq!(sq.alphabet_size(), 4);
        assert_eq!(sq.contraction_ratio(), Ratio::new(1, 2));
        assert!((sq.hausdorff_dim() - 2.0).abs() < 1e-15);

        let cc = product_spec(&FractalSpec::carpet(), &FractalSpec::carpet()).unwrap();
        assert_eq!(cc.alphabet_size(), 64);
        assert!((cc.hausdorff_dim() - 64f64.ln() / 3f64.ln()).abs() < 1e-15);

        let err = product_spec(&FractalSpec::interval(), &FractalSpec::carpet()).unwrap_err();
        assert!(matches!(err, SpecError::RatioMismatch { .. }));
        // interval and gasket share the ratio 1/2
        assert!(product_spec(&FractalSpec::interval(), &FractalSpec::gasket()).is_ok());
    }

    #[test]
    fn registry_expressions() {
        assert_eq!(FractalSpec::from_name("carpet^2").unwrap().alphabet_size(), 64);
        assert_eq!(FractalSpec::from_name("carpet^3").unwrap().alphabet_size(), 512);
        assert_eq!(FractalSpec::from_name("interval*gasket").unwrap().alphabet_size(), 6);
        assert_eq!(FractalSpec::from_name("intervalxinterval").unwrap().alphabet_size(), 4);
        assert_eq!(FractalSpec::from_name("gasket^2*interval").unwrap().alphabet_size(), 18);
        assert!(matches!(
            FractalSpec::from_name("interval*carpet"),
            Err(SpecError::RatioMismatch { .. })
        ));
        assert!(matches!(FractalSpec::from_name("cantor"), Err(SpecError::UnknownSpec(_))));
        assert_eq!(
            FractalSpec::from_name("square").unwrap().canonical_key(),
            FractalSpec::from_name("interval*interval").unwrap().canonical_key()
        );
    }

    #[test]
    fn colliding_letters_rejected() {
        let err = Primitive::new("bad", 2, CellShape::Cube, vec![vec![0], vec![0]]).unwrap_err();
        assert!(matches!(err, SpecError::InvalidSpec(_)));
    }

    #[test]
    fn letter_split_roundtrip() {
        let s = FractalSpec::from_name("carpet*sponge").unwrap();
        let mut parts = [0usize; 2];
        for l in 0..s.alphabet_size() {
            s.split_letter(l, &mut parts);
            assert_eq!(s.join_letters(&parts), l);
        }
    }
}

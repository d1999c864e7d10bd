//! The discrete domain V^d, packed state indices and dense pmfs.
//!
//! States are packed in mixed radix with coordinate 0 as the least
//! significant digit. Tokens occupy `0..S`; when the alphabet carries a
//! mask, MASK is symbol `S`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Packed index of a point in V^d.
pub type StateIndex = usize;

/// Default upper bound on |V|^d for dense storage.
pub const DEFAULT_DENSE_CAP: usize = 1 << 21;

/// Absolute tolerance on the total mass of a [`DensePmf`].
pub const PMF_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    pub vocab_size: usize,
    pub has_mask: bool,
}

impl Alphabet {
    pub fn new(vocab_size: usize, has_mask: bool) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::Domain(format!(
                "vocabulary size must be at least 2, got {vocab_size}"
            )));
        }
        Ok(Self {
            vocab_size,
            has_mask,
        })
    }

    pub fn plain(vocab_size: usize) -> Result<Self> {
        Self::new(vocab_size, false)
    }

    pub fn masked(vocab_size: usize) -> Result<Self> {
        Self::new(vocab_size, true)
    }

    /// |V|: S, or S+1 with a mask.
    pub fn n_symbols(&self) -> usize {
        self.vocab_size + usize::from(self.has_mask)
    }

    pub fn mask(&self) -> Option<usize> {
        self.has_mask.then_some(self.vocab_size)
    }

    pub fn is_mask(&self, c: usize) -> bool {
        self.has_mask && c == self.vocab_size
    }
}

/// V^d together with its packing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    dim: usize,
    alphabet: Alphabet,
    len: usize,
}

impl StateSpace {
    pub fn new(dim: usize, alphabet: Alphabet) -> Result<Self> {
        Self::with_cap(dim, alphabet, DEFAULT_DENSE_CAP)
    }

    /// Like [`StateSpace::new`] with an explicit cap on |V|^d.
    pub fn with_cap(dim: usize, alphabet: Alphabet, cap: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("dimension must be positive".into()));
        }
        let base = alphabet.n_symbols();
        let mut len: usize = 1;
        for _ in 0..dim {
            len = len
                .checked_mul(base)
                .filter(|&l| l <= cap)
                .ok_or_else(|| {
                    Error::Resource(format!(
                        "state space {base}^{dim} exceeds dense cap {cap}"
                    ))
                })?;
        }
        Ok(Self { dim, alphabet, len })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn vocab_size(&self) -> usize {
        self.alphabet.vocab_size
    }

    pub fn n_symbols(&self) -> usize {
        self.alphabet.n_symbols()
    }

    /// Number of states |V|^d.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Same dimension with the mask symbol added.
    pub fn with_mask(&self) -> Result<Self> {
        Self::new(self.dim, Alphabet::masked(self.alphabet.vocab_size)?)
    }

    /// Place value of coordinate `i`.
    pub fn stride(&self, i: usize) -> usize {
        self.n_symbols().pow(i as u32)
    }

    pub fn pack(&self, symbols: &[usize]) -> Result<StateIndex> {
        if symbols.len() != self.dim {
            return Err(Error::Domain(format!(
                "expected {} coordinates, got {}",
                self.dim,
                symbols.len()
            )));
        }
        let base = self.n_symbols();
        let mut idx = 0;
        for &c in symbols.iter().rev() {
            if c >= base {
                return Err(Error::Domain(format!("symbol {c} outside alphabet of size {base}")));
            }
            idx = idx * base + c;
        }
        Ok(idx)
    }

    pub fn unpack(&self, x: StateIndex) -> Vec<usize> {
        let base = self.n_symbols();
        let mut out = Vec::with_capacity(self.dim);
        let mut r = x;
        for _ in 0..self.dim {
            out.push(r % base);
            r /= base;
        }
        out
    }

    /// Symbol at coordinate `i`.
    pub fn digit(&self, x: StateIndex, i: usize) -> usize {
        (x / self.stride(i)) % self.n_symbols()
    }

    fn check_coord(&self, i: usize) -> Result<()> {
        if i >= self.dim {
            return Err(Error::Domain(format!(
                "coordinate {i} out of range for dimension {}",
                self.dim
            )));
        }
        Ok(())
    }

    /// x ⊙_i c: coordinate `i` replaced by `c`.
    pub fn substitute(&self, x: StateIndex, i: usize, c: usize) -> Result<StateIndex> {
        self.check_coord(i)?;
        if c >= self.n_symbols() {
            return Err(Error::Domain(format!("symbol {c} outside alphabet")));
        }
        Ok(self.substitute_unchecked(x, i, c))
    }

    #[inline]
    pub(crate) fn substitute_unchecked(&self, x: StateIndex, i: usize, c: usize) -> StateIndex {
        let s = self.stride(i);
        let old = (x / s) % self.n_symbols();
        x - old * s + c * s
    }

    /// x ⊕_i c: coordinate `i` advanced by `c` modulo S.
    pub fn shift(&self, x: StateIndex, i: usize, c: usize) -> Result<StateIndex> {
        if self.alphabet.has_mask {
            return Err(Error::Unsupported(
                "shift needs an additive alphabet without MASK".into(),
            ));
        }
        self.check_coord(i)?;
        let s = self.vocab_size();
        if c == 0 || c >= s {
            return Err(Error::Domain(format!("increment {c} must lie in 1..{s}")));
        }
        let a = self.digit(x, i);
        Ok(self.substitute_unchecked(x, i, (a + c) % s))
    }

    pub fn hamming(&self, x: StateIndex, y: StateIndex) -> usize {
        let base = self.n_symbols();
        let (mut a, mut b) = (x, y);
        let mut n = 0;
        for _ in 0..self.dim {
            n += usize::from(a % base != b % base);
            a /= base;
            b /= base;
        }
        n
    }

    /// Coordinates of `x` equal to MASK.
    pub fn masked_set(&self, x: StateIndex) -> Result<Vec<usize>> {
        let mask = self
            .alphabet
            .mask()
            .ok_or_else(|| Error::Domain("alphabet has no MASK symbol".into()))?;
        Ok((0..self.dim).filter(|&i| self.digit(x, i) == mask).collect())
    }

    /// Number of masked coordinates (0 for unmasked alphabets).
    pub fn mask_count(&self, x: StateIndex) -> usize {
        match self.alphabet.mask() {
            Some(m) => (0..self.dim).filter(|&i| self.digit(x, i) == m).count(),
            None => 0,
        }
    }

    pub fn all_masked(&self) -> Option<StateIndex> {
        let m = self.alphabet.mask()?;
        Some((0..self.dim).map(|i| m * self.stride(i)).sum())
    }
}

/// Exact probability mass function over a [`StateSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensePmf {
    space: StateSpace,
    mass: Vec<f64>,
}

impl DensePmf {
    /// Validates nonnegativity and normalization.
    pub fn new(space: StateSpace, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != space.len() {
            return Err(Error::Validation(format!(
                "mass vector has length {}, state space has {}",
                mass.len(),
                space.len()
            )));
        }
        if let Some(p) = mass.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::Validation(format!("invalid mass entry {p}")));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > PMF_SUM_TOL {
            return Err(Error::Validation(format!("masses sum to {total}, not 1")));
        }
        Ok(Self { space, mass })
    }

    /// Divides a raw nonnegative vector by its total.
    pub fn normalize(space: StateSpace, raw: Vec<f64>) -> Result<Self> {
        if let Some(p) = raw.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::Validation(format!("invalid raw mass {p}")));
        }
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Validation("total mass must be positive".into()));
        }
        let mass = raw.into_iter().map(|p| p / total).collect();
        Self::new(space, mass)
    }

    pub fn uniform(space: StateSpace) -> Self {
        let n = space.len();
        Self {
            space,
            mass: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(space: StateSpace, x: StateIndex) -> Result<Self> {
        if x >= space.len() {
            return Err(Error::Domain(format!("state {x} out of range")));
        }
        let mut mass = vec![0.0; space.len()];
        mass[x] = 1.0;
        Ok(Self { space, mass })
    }

    /// Independent coordinates with the given per-coordinate laws.
    pub fn product(space: StateSpace, marginals: &[Vec<f64>]) -> Result<Self> {
        if marginals.len() != space.dim()
            || marginals.iter().any(|m| m.len() != space.n_symbols())
        {
            return Err(Error::Validation("marginal shapes do not match the space".into()));
        }
        let mass = (0..space.len())
            .map(|x| {
                (0..space.dim())
                    .map(|i| marginals[i][space.digit(x, i)])
                    .product()
            })
            .collect();
        Self::normalize(space, mass)
    }

    pub(crate) fn from_parts_unchecked(space: StateSpace, mass: Vec<f64>) -> Self {
        Self { space, mass }
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn prob(&self, x: StateIndex) -> f64 {
        self.mass[x]
    }

    pub fn into_mass(self) -> Vec<f64> {
        self.mass
    }

    /// Number of states with positive mass.
    pub fn support_size(&self) -> usize {
        self.mass.iter().filter(|&&p| p > 0.0).count()
    }

    /// True when no mass sits on a state containing MASK.
    pub fn is_unmasked(&self) -> bool {
        self.mass
            .iter()
            .enumerate()
            .all(|(x, &p)| p == 0.0 || self.space.mask_count(x) == 0)
    }

    /// Re-embeds a pmf on [S]^d into ([S] ∪ {MASK})^d.
    pub fn to_masked_alphabet(&self) -> Result<Self> {
        if self.space.alphabet().has_mask {
            return Ok(self.clone());
        }
        let target = self.space.with_mask()?;
        let mut mass = vec![0.0; target.len()];
        for (x, &p) in self.mass.iter().enumerate() {
            if p > 0.0 {
                let y = target.pack(&self.space.unpack(x))?;
                mass[y] = p;
            }
        }
        Ok(Self {
            space: target,
            mass,
        })
    }

    /// Restricts a mask-free pmf on a masked alphabet back to [S]^d.
    pub fn to_plain_alphabet(&self) -> Result<Self> {
        if !self.space.alphabet().has_mask {
            return Ok(self.clone());
        }
        if !self.is_unmasked() {
            return Err(Error::Validation("pmf puts mass on masked states".into()));
        }
        let target = StateSpace::new(
            self.space.dim(),
            Alphabet::plain(self.space.vocab_size())?,
        )?;
        let mut mass = vec![0.0; target.len()];
        for (y, m) in mass.iter_mut().enumerate() {
            let x = self.space.pack(&target.unpack(y))?;
            *m = self.mass[x];
        }
        Ok(Self {
            space: target,
            mass,
        })
    }

    /// Marginal law of the coordinates in `coords`, packed in the order given.
    pub fn marginal(&self, coords: &[usize]) -> Vec<f64> {
        let base = self.space.n_symbols();
        let mut out = vec![0.0; base.pow(coords.len() as u32)];
        for (x, &p) in self.mass.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let mut idx = 0;
            for &c in coords.iter().rev() {
                idx = idx * base + self.space.digit(x, c);
            }
            out[idx] += p;
        }
        out
    }

    pub fn to_file(&self) -> DistributionFile {
        DistributionFile {
            dim: self.space.dim(),
            vocab_size: self.space.vocab_size(),
            has_mask: self.space.alphabet().has_mask,
            entries: self
                .mass
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(x, &p)| (self.space.unpack(x), p))
                .collect(),
        }
    }

    pub fn from_file(file: &DistributionFile) -> Result<Self> {
        let space = StateSpace::new(file.dim, Alphabet::new(file.vocab_size, file.has_mask)?)?;
        let mut raw = vec![0.0; space.len()];
        for (symbols, p) in &file.entries {
            raw[space.pack(symbols)?] += *p;
        }
        Self::normalize(space, raw)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: DistributionFile = serde_json::from_str(&text)?;
        Self::from_file(&file)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// On-disk distribution format; omitted states carry zero mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionFile {
    pub dim: usize,
    pub vocab_size: usize,
    pub has_mask: bool,
    pub entries: Vec<(Vec<usize>, f64)>,
}

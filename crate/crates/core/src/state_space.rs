//! Truncated configuration space: lattice boxes, oscillator configurations and
//! the combined tracer ⊗ Fock basis.
//!
//! States are ordered configuration-major: configurations are graded by their
//! total excitation number and, inside a grade, ordered lexicographically by
//! the non-decreasing list of excited site indices (equivalently, reverse
//! lexicographic in the occupancy vector). The tracer site is the fast index,
//! so every excitation-number truncation `N < K` is an index prefix.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{invalid, Error, Result};

/// The box `{u ∈ ℤ^d : |u|_∞ < L}` with sites in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lattice {
    dim: usize,
    radius: u32,
    coords: Vec<i32>,
    index: HashMap<Vec<i32>, usize>,
}

impl Lattice {
    pub fn new(dim: usize, radius: u32) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("d", "dimension must be positive"));
        }
        if radius == 0 {
            return Err(invalid("L", "radius must be positive"));
        }
        let side = 2 * radius as usize - 1;
        let count = side
            .checked_pow(dim as u32)
            .ok_or_else(|| invalid("L", "lattice too large"))?;
        let lo = -(radius as i32 - 1);
        let mut coords = Vec::with_capacity(count * dim);
        let mut cur = vec![lo; dim];
        for _ in 0..count {
            coords.extend_from_slice(&cur);
            // odometer with the first coordinate most significant
            for k in (0..dim).rev() {
                if cur[k] < radius as i32 - 1 {
                    cur[k] += 1;
                    break;
                }
                cur[k] = lo;
            }
        }
        let index = coords
            .chunks(dim)
            .enumerate()
            .map(|(i, c)| (c.to_vec(), i))
            .collect();
        Ok(Self {
            dim,
            radius,
            coords,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn site(&self, i: usize) -> &[i32] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn sites(&self) -> impl Iterator<Item = &[i32]> {
        self.coords.chunks(self.dim)
    }

    pub fn index_of(&self, site: &[i32]) -> Option<usize> {
        self.index.get(site).copied()
    }

    /// Index of the origin.
    pub fn origin(&self) -> usize {
        self.index_of(&vec![0; self.dim]).expect("origin is always inside the box")
    }

    /// Sup-norm of site `i`.
    pub fn sup_norm(&self, i: usize) -> u32 {
        self.site(i).iter().map(|c| c.unsigned_abs()).max().unwrap_or(0)
    }

    /// Sup-norm distance between sites `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> u32 {
        self.site(i)
            .iter()
            .zip(self.site(j))
            .map(|(a, b)| a.abs_diff(*b))
            .max()
            .unwrap_or(0)
    }

    /// Nearest neighbours (ℓ¹ distance one) of site `i` inside the box.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * self.dim);
        let mut probe = self.site(i).to_vec();
        for k in 0..self.dim {
            for step in [-1, 1] {
                probe[k] += step;
                if let Some(j) = self.index_of(&probe) {
                    out.push(j);
                }
                probe[k] -= step;
            }
        }
        out
    }

    /// Sites with `|u|_∞ < radius`; the radius may be fractional.
    pub fn sites_within(&self, radius: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| (self.sup_norm(i) as f64) < radius)
            .collect()
    }
}

/// Oscillator configuration `ξ: Λ → ℕ`, stored sparsely by site index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Config {
    occupancy: BTreeMap<usize, u32>,
    total: u32,
}

impl Config {
    pub fn vacuum() -> Self {
        Self::default()
    }

    /// One excitation on `site`.
    pub fn single(site: usize) -> Self {
        Self::vacuum().with_occupancy(site, 1)
    }

    /// Builds a configuration from a dense occupancy vector indexed by site.
    pub fn from_occupancies(occ: &[u32]) -> Self {
        let mut c = Self::vacuum();
        for (site, &n) in occ.iter().enumerate() {
            c = c.with_occupancy(site, n);
        }
        c
    }

    /// Builds a configuration from a non-decreasing multiset of sites.
    fn from_multiset(sites: &[usize]) -> Self {
        let mut occupancy = BTreeMap::new();
        for &s in sites {
            *occupancy.entry(s).or_insert(0) += 1;
        }
        Self {
            occupancy,
            total: sites.len() as u32,
        }
    }

    pub fn occupancy(&self, site: usize) -> u32 {
        self.occupancy.get(&site).copied().unwrap_or(0)
    }

    /// Returns a copy with `ξ_site` replaced by `n`.
    pub fn with_occupancy(&self, site: usize, n: u32) -> Self {
        let mut next = self.clone();
        let old = next.occupancy(site);
        if n == 0 {
            next.occupancy.remove(&site);
        } else {
            next.occupancy.insert(site, n);
        }
        next.total = next.total - old + n;
        next
    }

    /// `N_ξ`.
    pub fn total(&self) -> u32 {
        self.total
    }

    /// Occupied sites with their occupancies, ascending by site.
    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.occupancy.iter().map(|(&s, &n)| (s, n))
    }

    /// Excited sites with multiplicity, non-decreasing.
    pub fn multiset(&self) -> Vec<usize> {
        self.iter()
            .flat_map(|(s, n)| std::iter::repeat_n(s, n as usize))
            .collect()
    }

    pub fn is_supported_in(&self, sites: &[usize]) -> bool {
        self.occupancy.keys().all(|s| sites.contains(s))
    }

    /// Largest site index carrying an excitation.
    pub fn max_site(&self) -> Option<usize> {
        self.occupancy.keys().next_back().copied()
    }
}

impl PartialOrd for Config {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Config {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total
            .cmp(&other.total)
            .then_with(|| self.multiset().cmp(&other.multiset()))
    }
}

/// Rank of a `(tracer site, configuration)` pair in the combined basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BasisIndex(pub usize);

pub(crate) fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Number of multisets of size `k` drawn from `m` types.
fn multichoose(m: u64, k: u64) -> Option<u128> {
    if m == 0 {
        return Some(u128::from(k == 0));
    }
    binomial(m + k - 1, k)
}

fn to_usize(x: u128) -> Result<usize> {
    usize::try_from(x).map_err(|_| Error::Overflow)
}

/// Number of configurations on `n_sites` sites with fewer than `cap` excitations.
pub fn config_count(n_sites: usize, cap: u32) -> Result<usize> {
    if cap == 0 {
        return Ok(0);
    }
    let c = binomial(n_sites as u64 + cap as u64 - 1, cap as u64 - 1).ok_or(Error::Overflow)?;
    to_usize(c)
}

/// Every configuration on `n_sites` sites with `N_ξ < cap`, in canonical order.
pub fn enumerate_configs(n_sites: usize, cap: u32) -> Result<Vec<Config>> {
    if cap == 0 {
        return Err(invalid("K", "excitation cap must be at least 1"));
    }
    if n_sites == 0 {
        return Err(invalid("n_sites", "lattice must be non-empty"));
    }
    let mut out = Vec::with_capacity(config_count(n_sites, cap)?);
    for total in 0..cap as usize {
        let mut seq = vec![0usize; total];
        loop {
            out.push(Config::from_multiset(&seq));
            let Some(i) = seq.iter().rposition(|&a| a + 1 < n_sites) else {
                break;
            };
            let v = seq[i] + 1;
            seq[i..].iter_mut().for_each(|a| *a = v);
        }
    }
    Ok(out)
}

/// Canonical rank of a configuration among all configurations on `n_sites` sites.
pub fn rank_config(n_sites: usize, config: &Config) -> Result<usize> {
    let n = n_sites as u64;
    if config.max_site().is_some_and(|s| s >= n_sites) {
        return Err(Error::UnknownSite);
    }
    let total = config.total() as u64;
    let mut rank = if total == 0 {
        0
    } else {
        binomial(n + total - 1, total - 1).ok_or(Error::Overflow)?
    };
    let mut prev = 0u64;
    for (i, &a) in config.multiset().iter().enumerate() {
        let rest = total - i as u64 - 1;
        for c in prev..a as u64 {
            rank = rank
                .checked_add(multichoose(n - c, rest).ok_or(Error::Overflow)?)
                .ok_or(Error::Overflow)?;
        }
        prev = a as u64;
    }
    to_usize(rank)
}

/// Inverse of [`rank_config`].
pub fn unrank_config(n_sites: usize, rank: usize) -> Result<Config> {
    let n = n_sites as u64;
    let mut r = rank as u128;
    let mut total = 0u64;
    loop {
        let grade = multichoose(n, total).ok_or(Error::Overflow)?;
        if r < grade {
            break;
        }
        r -= grade;
        total += 1;
    }
    let mut seq = Vec::with_capacity(total as usize);
    let mut c = 0u64;
    for i in 0..total {
        let rest = total - i - 1;
        loop {
            let block = multichoose(n - c, rest).ok_or(Error::Overflow)?;
            if r < block {
                break;
            }
            r -= block;
            c += 1;
        }
        seq.push(c as usize);
    }
    Ok(Config::from_multiset(&seq))
}

/// The truncated tracer ⊗ Fock basis `{(u, ξ) : u ∈ Λ, N_ξ < cap}`.
#[derive(Debug, Clone)]
pub struct StateSpace {
    lattice: Lattice,
    cap: u32,
    configs: Vec<Config>,
}

impl StateSpace {
    pub fn new(lattice: Lattice, cap: u32) -> Result<Self> {
        let configs = enumerate_configs(lattice.len(), cap)?;
        Ok(Self {
            lattice,
            cap,
            configs,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// Exclusive excitation cap.
    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn configs(&self) -> &[Config] {
        &self.configs
    }

    pub fn dim(&self) -> usize {
        self.configs.len() * self.lattice.len()
    }

    pub fn rank_state(&self, site: usize, config: &Config) -> Result<BasisIndex> {
        let n = self.lattice.len();
        if site >= n {
            return Err(Error::OutOfRange {
                index: site,
                size: n,
            });
        }
        if config.total() >= self.cap {
            return Err(Error::ExceedsCap {
                total: config.total(),
                cap: self.cap,
            });
        }
        Ok(BasisIndex(rank_config(n, config)? * n + site))
    }

    pub fn unrank_state(&self, index: BasisIndex) -> Result<(usize, &Config)> {
        let n = self.lattice.len();
        if index.0 >= self.dim() {
            return Err(Error::OutOfRange {
                index: index.0,
                size: self.dim(),
            });
        }
        Ok((index.0 % n, &self.configs[index.0 / n]))
    }

    /// Number of leading basis vectors with fewer than `k` excitations.
    pub fn prefix_len(&self, k: u32) -> usize {
        config_count(self.lattice.len(), k.min(self.cap)).unwrap_or(0) * self.lattice.len()
    }
}

/// Exact and closed-form state counts for one tracer and `< cap` excitations.
#[derive(Debug, Clone, PartialEq)]
pub struct StateCount {
    pub n_sites: usize,
    pub cap: u32,
    /// `n · Σ_{k<cap} C(n+k−1, k)`, the multiset count.
    pub exact: BigUint,
    /// `Σ_{k<cap} n^{k+1}/k!`, a closed-form estimate of the trace of `R_{L,K}`.
    pub closed_form: BigRational,
}

impl StateCount {
    pub fn exact_f64(&self) -> f64 {
        self.exact.to_f64().unwrap_or(f64::INFINITY)
    }

    pub fn closed_form_f64(&self) -> f64 {
        self.closed_form.to_f64().unwrap_or(f64::INFINITY)
    }

    pub fn formula_agrees(&self) -> bool {
        self.closed_form.is_integer() && self.closed_form.to_integer().to_biguint() == Some(self.exact.clone())
    }
}

pub fn count_states(n_sites: usize, cap: u32) -> Result<StateCount> {
    if n_sites == 0 {
        return Err(invalid("n_sites", "must be at least 1"));
    }
    if cap == 0 {
        return Err(invalid("K", "must be at least 1"));
    }
    let n = BigUint::from(n_sites);
    // C(n+cap−1, cap−1) by the multiplicative formula
    let k = cap as usize - 1;
    let mut binom = BigUint::one();
    for i in 0..k {
        binom = binom * (n.clone() + BigUint::from(k - i)) / BigUint::from(i + 1);
    }
    let exact = n.clone() * binom;

    let mut formula = BigRational::zero();
    let mut power = BigUint::from(n_sites);
    let mut factorial = BigUint::one();
    for k in 0..cap as usize {
        if k > 0 {
            factorial *= BigUint::from(k);
            power *= &n;
        }
        formula += BigRational::new(power.clone().into(), factorial.clone().into());
    }
    Ok(StateCount {
        n_sites,
        cap,
        exact,
        closed_form: formula,
    })
}

/// `C · L^{dK}`.
pub fn count_bound(constant: f64, dim: usize, radius: u32, cap: u32) -> f64 {
    constant * (radius as f64).powi((dim as u32 * cap) as i32)
}

/// Smallest `C` with `exact ≤ C · L^{dK}` over a grid of `(d, L, K)`.
pub fn bound_constant(grid: &[(usize, u32, u32)]) -> Result<f64> {
    let mut c: f64 = 0.0;
    for &(d, l, k) in grid {
        let n = (2 * l as usize - 1).pow(d as u32);
        let exact = count_states(n, k)?.exact_f64();
        c = c.max(exact / count_bound(1.0, d, l, k));
    }
    Ok(c)
}

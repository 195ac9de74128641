//! Factor models over discrete site grids and their exact evaluation.
//!
//! A [`FactorModel`] is a product of small tables, each attached to a few sites, times
//! `exp(log_scale)`. Site values are indices into the site space's labels or nodes.
//! Evaluation is by parallel depth-first enumeration, or, for nearest-neighbour
//! models on a ring, by transfer-matrix contraction.

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_EXACT_CAP: u64 = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    pub sites: Vec<usize>,
    /// Row-major over `sites`, first site most significant.
    pub table: Vec<f64>,
}

impl Factor {
    pub fn constant(value: f64) -> Self {
        Factor { sites: Vec::new(), table: vec![value] }
    }

    pub fn site(site: usize, table: Vec<f64>) -> Self {
        Factor { sites: vec![site], table }
    }

    pub fn pair(a: usize, b: usize, table: Vec<f64>) -> Self {
        Factor { sites: vec![a, b], table }
    }

    #[inline]
    fn index(&self, x: &[usize], m: usize) -> usize {
        self.sites.iter().fold(0, |acc, &s| acc * m + x[s])
    }

    #[inline]
    pub fn value(&self, x: &[usize], m: usize) -> f64 {
        self.table[self.index(x, m)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorModel {
    n_sites: usize,
    m: usize,
    pub log_scale: f64,
    factors: Vec<Factor>,
}

impl FactorModel {
    /// The constant function 1.
    pub fn unit(n_sites: usize, m: usize) -> Self {
        FactorModel { n_sites, m, log_scale: 0.0, factors: Vec::new() }
    }

    pub fn new(n_sites: usize, m: usize, factors: Vec<Factor>) -> Result<Self> {
        let mut model = FactorModel::unit(n_sites, m);
        for f in factors {
            model.push(f)?;
        }
        Ok(model)
    }

    pub fn push(&mut self, f: Factor) -> Result<()> {
        if let Some(&s) = f.sites.iter().find(|&&s| s >= self.n_sites) {
            return Err(Error::OutOfRange(format!("factor site {s} of {}", self.n_sites)));
        }
        let want = self.m.checked_pow(f.sites.len() as u32).unwrap_or(usize::MAX);
        if f.table.len() != want {
            return Err(Error::Precondition(format!(
                "factor on {} sites needs {want} entries, got {}",
                f.sites.len(),
                f.table.len()
            )));
        }
        if let Some(v) = f.table.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("factor entry {v}")));
        }
        self.factors.push(f);
        Ok(())
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Values per site.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// Pointwise product of two models on the same grid.
    pub fn multiply(&self, other: &FactorModel) -> Result<FactorModel> {
        if self.n_sites != other.n_sites || self.m != other.m {
            return Err(Error::Precondition("factor models live on different grids".into()));
        }
        let mut out = self.clone();
        out.log_scale += other.log_scale;
        out.factors.extend(other.factors.iter().cloned());
        Ok(out)
    }

    pub fn scaled_log(mut self, log_c: f64) -> FactorModel {
        self.log_scale += log_c;
        self
    }

    /// Value without the `exp(log_scale)` prefactor.
    pub fn eval_unscaled(&self, x: &[usize]) -> f64 {
        self.factors.iter().map(|f| f.value(x, self.m)).product()
    }

    pub fn eval(&self, x: &[usize]) -> f64 {
        self.log_scale.exp() * self.eval_unscaled(x)
    }

    pub fn only_site_factors(&self) -> bool {
        self.factors.iter().all(|f| f.sites.len() <= 1)
    }

    /// True if every factor touches at most two sites that are neighbours on the ring
    /// `0, 1, .., n-1, 0`.
    pub fn is_ring(&self) -> bool {
        let n = self.n_sites;
        n >= 3
            && self.factors.iter().all(|f| match f.sites.as_slice() {
                [] | [_] => true,
                [a, b] => (a + 1) % n == *b || (b + 1) % n == *a,
                _ => false,
            })
    }

    /// Grid size `m^n` as a float.
    pub fn grid_size(&self) -> f64 {
        (self.m as f64).powi(self.n_sites as i32)
    }

    /// Product of the site factors touching only `site`, as an `m`-vector.
    pub(crate) fn site_vector(&self, site: usize) -> Vec<f64> {
        let mut v = vec![1.0; self.m];
        for f in self.factors.iter().filter(|f| f.sites == [site]) {
            for (a, b) in v.iter_mut().zip(&f.table) {
                *a *= b;
            }
        }
        v
    }

    pub(crate) fn constant_part(&self) -> f64 {
        self.factors.iter().filter(|f| f.sites.is_empty()).map(|f| f.table[0]).product()
    }

    /// Bond matrix from `i` to `i + 1` on the ring, oriented `[x_i][x_{i+1}]`.
    fn bond(&self, i: usize) -> Vec<f64> {
        let (n, m) = (self.n_sites, self.m);
        let j = (i + 1) % n;
        let mut k = vec![1.0; m * m];
        for f in &self.factors {
            match f.sites.as_slice() {
                [a, b] if *a == i && *b == j => {
                    for (x, t) in k.iter_mut().zip(&f.table) {
                        *x *= t;
                    }
                }
                [a, b] if *a == j && *b == i => {
                    for x in 0..m {
                        for y in 0..m {
                            k[x * m + y] *= f.table[y * m + x];
                        }
                    }
                }
                _ => {}
            }
        }
        k
    }
}

/// Check a grid against the exact-evaluation cap.
pub fn check_cap(m: usize, n: usize, cap: u64) -> Result<()> {
    let grid = (m as f64).powi(n as i32);
    if grid > cap as f64 {
        return Err(Error::ExactCap { grid, cap });
    }
    Ok(())
}

/// Depth-first enumeration of all index configurations, weighted by the model and a
/// per-site measure. `visit` sees `(x, weight)` with weight excluding `exp(log_scale)`.
/// Zero-weight subtrees are skipped. Work is split over a prefix of sites and merged
/// in a fixed order, so results do not depend on the thread count.
pub fn enumerate<A, I, V, M>(
    model: &FactorModel,
    measure: &[Vec<f64>],
    cap: u64,
    init: I,
    visit: V,
    merge: M,
) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    V: Fn(&mut A, &[usize], f64) + Sync,
    M: Fn(&mut A, A),
{
    let (n, m) = (model.n_sites, model.m);
    check_cap(m, n, cap)?;
    if measure.len() != n || measure.iter().any(|v| v.len() != m) {
        return Err(Error::Precondition("measure does not match the grid".into()));
    }
    let mut by_depth: Vec<Vec<&Factor>> = vec![Vec::new(); n];
    let mut root = 1.0;
    for f in &model.factors {
        match f.sites.iter().max() {
            Some(&d) => by_depth[d].push(f),
            None => root *= f.table[0],
        }
    }
    if n == 0 {
        let mut acc = init();
        if root != 0.0 {
            visit(&mut acc, &[], root);
        }
        return Ok(acc);
    }
    let mut prefix = 0;
    let mut tasks = 1usize;
    while prefix < n && tasks < 256 {
        tasks *= m;
        prefix += 1;
    }

    struct Walker<'a, A, V> {
        by_depth: &'a [Vec<&'a Factor>],
        measure: &'a [Vec<f64>],
        m: usize,
        visit: &'a V,
        x: Vec<usize>,
        acc: A,
    }

    impl<A, V: Fn(&mut A, &[usize], f64)> Walker<'_, A, V> {
        #[inline]
        fn weight_at(&self, depth: usize) -> f64 {
            let mut w = self.measure[depth][self.x[depth]];
            for f in &self.by_depth[depth] {
                w *= f.value(&self.x, self.m);
            }
            w
        }

        fn walk(&mut self, depth: usize, w: f64) {
            if depth == self.x.len() {
                (self.visit)(&mut self.acc, &self.x, w);
                return;
            }
            for v in 0..self.m {
                self.x[depth] = v;
                let wd = w * self.weight_at(depth);
                if wd != 0.0 {
                    self.walk(depth + 1, wd);
                }
            }
        }
    }

    let parts: Vec<A> = (0..tasks)
        .into_par_iter()
        .map(|t| {
            let mut walker = Walker { by_depth: &by_depth, measure, m, visit: &visit, x: vec![0; n], acc: init() };
            let mut r = t;
            for d in (0..prefix).rev() {
                walker.x[d] = r % m;
                r /= m;
            }
            let mut w = root;
            for d in 0..prefix {
                if w == 0.0 {
                    break;
                }
                w *= walker.weight_at(d);
            }
            if w != 0.0 {
                walker.walk(prefix, w);
            }
            walker.acc
        })
        .collect();
    let mut iter = parts.into_iter();
    let mut acc = iter.next().unwrap_or_else(&init);
    for p in iter {
        merge(&mut acc, p);
    }
    Ok(acc)
}

/// The same measure at every site.
pub fn uniform_measure(weights: &[f64], n: usize) -> Vec<Vec<f64>> {
    vec![weights.to_vec(); n]
}

fn mat_mul(a: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * m];
    for i in 0..m {
        for k in 0..m {
            let aik = a[i * m + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..m {
                c[i * m + j] += aik * b[k * m + j];
            }
        }
    }
    c
}

/// Divide by the largest absolute entry, returning its log.
fn normalize(k: &mut [f64]) -> f64 {
    let s = k.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if s > 0.0 && s.is_finite() {
        k.iter_mut().for_each(|v| *v /= s);
        s.ln()
    } else {
        0.0
    }
}

/// `B_i D_{i+1} B_{i+1} ... D_{j-1} B_{j-1}`: the kernel from ring site `i` to site `j`
/// with the sites strictly between them integrated against their measure.
fn segment_kernel(model: &FactorModel, measure: &[Vec<f64>], i: usize, j: usize) -> (Vec<f64>, f64) {
    let (n, m) = (model.n_sites, model.m);
    let mut k = model.bond(i);
    let mut log_s = normalize(&mut k);
    let mut q = (i + 1) % n;
    while q != j {
        let s = model.site_vector(q);
        let b = model.bond(q);
        let mut dk = vec![0.0; m * m];
        for x in 0..m {
            let dx = measure[q][x] * s[x];
            for y in 0..m {
                dk[x * m + y] = dx * b[x * m + y];
            }
        }
        k = mat_mul(&k, &dk, m);
        log_s += normalize(&mut k);
        q = (q + 1) % n;
    }
    (k, log_s)
}

/// Integrate every ring site not in `keep` against `measure`. The result is a model on
/// `keep.len()` sites (in the order given) with the kept site factors unchanged and a
/// segment kernel between consecutive kept sites.
pub fn contract_ring(model: &FactorModel, measure: &[Vec<f64>], keep: &[usize]) -> Result<FactorModel> {
    let (n, m) = (model.n_sites, model.m);
    if !model.is_ring() {
        return Err(Error::Unsupported("ring contraction needs nearest-neighbour factors".into()));
    }
    if keep.is_empty() || keep.windows(2).any(|w| w[0] >= w[1]) || keep[keep.len() - 1] >= n {
        return Err(Error::Precondition("kept sites must be increasing and in range".into()));
    }
    let t = keep.len();
    let mut out = FactorModel::unit(t, m);
    out.log_scale = model.log_scale;
    let c = model.constant_part();
    if c != 1.0 {
        out.push(Factor::constant(c))?;
    }
    for (o, &s) in keep.iter().enumerate() {
        let v = model.site_vector(s);
        if v.iter().any(|&x| x != 1.0) {
            out.push(Factor::site(o, v))?;
        }
    }
    let kernels: Vec<(Vec<f64>, f64)> = (0..t)
        .into_par_iter()
        .map(|o| segment_kernel(model, measure, keep[o], keep[(o + 1) % t]))
        .collect();
    for (o, (k, log_s)) in kernels.into_iter().enumerate() {
        out.log_scale += log_s;
        if t == 1 {
            out.push(Factor::site(0, (0..m).map(|x| k[x * m + x]).collect()))?;
        } else {
            out.push(Factor::pair(o, (o + 1) % t, k))?;
        }
    }
    Ok(out)
}

/// `ln |Σ_x measure(x) model(x)|` and the sign of the sum, for ring models.
pub fn ring_log_partition(model: &FactorModel, measure: &[Vec<f64>]) -> Result<(f64, f64)> {
    let reduced = contract_ring(model, measure, &[0])?;
    let v = reduced.site_vector(0);
    let s: f64 = v.iter().zip(&measure[0]).map(|(a, b)| a * b).sum::<f64>() * reduced.constant_part();
    Ok((reduced.log_scale + s.abs().ln(), s.signum()))
}

/// Measure-weighted total `Σ_x measure(x) model(x)` as `(ln |Σ|, sign)`, choosing the
/// cheapest exact strategy.
pub fn log_partition(model: &FactorModel, measure: &[Vec<f64>], cap: u64) -> Result<(f64, f64)> {
    if model.only_site_factors() {
        let mut log_z = model.log_scale;
        let mut sign = model.constant_part().signum();
        log_z += model.constant_part().abs().ln();
        for s in 0..model.n_sites {
            let v = model.site_vector(s);
            let t: f64 = v.iter().zip(&measure[s]).map(|(a, b)| a * b).sum();
            sign *= t.signum();
            log_z += t.abs().ln();
        }
        return Ok((log_z, sign));
    }
    if model.is_ring() {
        return ring_log_partition(model, measure);
    }
    let z = enumerate(model, measure, cap, || 0.0, |a, _, w| *a += w, |a, b| *a += b)?;
    Ok((model.log_scale + z.abs().ln(), z.signum()))
}

/// `ln sup_x |model(x)|` over the grid.
pub fn log_sup_abs(model: &FactorModel, cap: u64) -> Result<f64> {
    let (n, m) = (model.n_sites, model.m);
    if model.only_site_factors() {
        let mut total = model.log_scale + model.constant_part().abs().ln();
        for s in 0..n {
            total += model.site_vector(s).iter().fold(0.0f64, |a, v| a.max(v.abs())).ln();
        }
        return Ok(total);
    }
    if model.is_ring() {
        // Max-plus transfer matrices on log |entries|.
        let lg = |v: f64| v.abs().ln();
        let step = |i: usize| -> Vec<f64> {
            let s = model.site_vector(i);
            let b = model.bond(i);
            (0..m * m).map(|xy| lg(s[xy / m]) + lg(b[xy])).collect()
        };
        let mut best = f64::NEG_INFINITY;
        let mats: Vec<Vec<f64>> = (0..n).map(step).collect();
        for x0 in 0..m {
            let mut row: Vec<f64> = (0..m).map(|y| mats[0][x0 * m + y]).collect();
            for mat in &mats[1..] {
                row = (0..m)
                    .map(|y| (0..m).map(|x| row[x] + mat[x * m + y]).fold(f64::NEG_INFINITY, f64::max))
                    .collect();
            }
            best = best.max(row[x0]);
        }
        return Ok(model.log_scale + model.constant_part().abs().ln() + best);
    }
    let ones = uniform_measure(&vec![1.0; m], n);
    let sup = enumerate(model, &ones, cap, || 0.0f64, |a, _, w| *a = a.max(w.abs()), |a, b| *a = a.max(b))?;
    Ok(model.log_scale + sup.ln())
}

/// Mixed-radix decoding of a flat grid index, first site most significant.
pub fn decode(mut index: usize, m: usize, n: usize) -> Vec<usize> {
    let mut x = vec![0; n];
    for i in (0..n).rev() {
        x[i] = index % m;
        index /= m;
    }
    x
}

pub fn encode(x: &[usize], m: usize) -> usize {
    x.iter().fold(0, |acc, &v| acc * m + v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(model: &FactorModel, measure: &[Vec<f64>]) -> f64 {
        let (n, m) = (model.n_sites(), model.m());
        let mut total = 0.0;
        for i in 0..m.pow(n as u32) {
            let x = decode(i, m, n);
            let mu: f64 = x.iter().enumerate().map(|(s, &v)| measure[s][v]).product();
            total += mu * model.eval(&x);
        }
        total
    }

    fn random_ring(n: usize, m: usize, seed: u64, signed: bool) -> FactorModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| {
                    let v: f64 = rng.random::<f64>() + 0.1;
                    if signed && rng.random::<f64>() < 0.3 { -v } else { v }
                })
                .collect()
        };
        let mut f = Vec::new();
        for i in 0..n {
            f.push(Factor::site(i, draw(m)));
            if i % 2 == 0 {
                f.push(Factor::pair(i, (i + 1) % n, draw(m * m)));
            } else {
                f.push(Factor::pair((i + 1) % n, i, draw(m * m)));
            }
        }
        f.push(Factor::constant(0.7));
        FactorModel::new(n, m, f).unwrap()
    }

    #[test]
    fn enumeration_matches_brute_force() {
        let model = random_ring(7, 3, 1, true);
        let mu = uniform_measure(&[0.2, 0.5, 0.3], 7);
        let z = enumerate(&model, &mu, DEFAULT_EXACT_CAP, || 0.0, |a, _, w| *a += w, |a, b| *a += b).unwrap();
        assert!((z - brute(&model, &mu)).abs() < 1e-12 * brute(&model, &mu).abs().max(1.0));
    }

    #[test]
    fn cap_is_enforced() {
        let model = FactorModel::unit(25, 2);
        let mu = uniform_measure(&[0.5, 0.5], 25);
        let r = enumerate(&model, &mu, DEFAULT_EXACT_CAP, || 0.0, |a, _, w| *a += w, |a, b| *a += b);
        assert!(matches!(r, Err(Error::ExactCap { .. })));
    }

    #[test]
    fn ring_partition_matches_enumeration() {
        for seed in 0..5 {
            let model = random_ring(8, 2, seed, true);
            let mu = uniform_measure(&[0.4, 0.6], 8);
            let (lz, s) = ring_log_partition(&model, &mu).unwrap();
            let want = brute(&model, &mu);
            assert!((s * lz.exp() - want).abs() < 1e-12 * want.abs());
        }
    }

    #[test]
    fn contraction_matches_marginalization() {
        let n = 9;
        let model = random_ring(n, 2, 11, false);
        let mu = uniform_measure(&[0.5, 0.5], n);
        let keep = [1, 4, 7];
        let reduced = contract_ring(&model, &mu, &keep).unwrap();
        for c in 0..8 {
            let xc = decode(c, 2, 3);
            let mut want = 0.0;
            for i in 0..(1 << n) {
                let x = decode(i, 2, n);
                if keep.iter().zip(&xc).all(|(&k, &v)| x[k] == v) {
                    let w: f64 = (0..n).filter(|s| !keep.contains(s)).map(|s| mu[s][x[s]]).product();
                    want += w * model.eval(&x);
                }
            }
            let got = reduced.eval(&xc);
            assert!((got - want).abs() < 1e-12 * want.abs(), "{got} {want}");
        }
        let single = contract_ring(&model, &mu, &[4]).unwrap();
        let both: f64 = (0..2).map(|x| 0.5 * single.eval(&[x])).sum();
        assert!((both - brute(&model, &mu)).abs() < 1e-12 * both);
    }

    #[test]
    fn sup_strategies_agree() {
        for seed in 0..4 {
            let model = random_ring(6, 3, seed, true);
            let ring = log_sup_abs(&model, DEFAULT_EXACT_CAP).unwrap();
            let mut want = 0.0f64;
            for i in 0..3usize.pow(6) {
                want = want.max(model.eval(&decode(i, 3, 6)).abs());
            }
            assert!((ring.exp() - want).abs() < 1e-12 * want);
        }
        let sites = FactorModel::new(3, 2, vec![Factor::site(0, vec![0.5, -2.0]), Factor::site(2, vec![3.0, 1.0])]).unwrap();
        assert!((log_sup_abs(&sites, DEFAULT_EXACT_CAP).unwrap().exp() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn site_only_partition() {
        let model = FactorModel::new(2, 2, vec![Factor::site(0, vec![1.0, 3.0]), Factor::site(1, vec![-1.0, 2.0])]).unwrap();
        let mu = uniform_measure(&[0.5, 0.5], 2);
        let (lz, s) = log_partition(&model, &mu, DEFAULT_EXACT_CAP).unwrap();
        assert!((s * lz.exp() - brute(&model, &mu)).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn deterministic_merge(seed in 0u64..1000) {
            let model = random_ring(10, 2, seed, true);
            let mu = uniform_measure(&[0.3, 0.7], 10);
            let a = enumerate(&model, &mu, DEFAULT_EXACT_CAP, || 0.0, |a, _, w| *a += w, |a, b| *a += b).unwrap();
            let b = enumerate(&model, &mu, DEFAULT_EXACT_CAP, || 0.0, |a, _, w| *a += w, |a, b| *a += b).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

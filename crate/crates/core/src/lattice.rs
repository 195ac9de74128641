//! Periodic cubic lattices: cubes, faces, translations and the refinement tower.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale pair `(fine, volume)`. The lattice spacing is `b^-fine` and the torus has
/// `b^(fine + volume)` cubes per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scale {
    pub fine: i32,
    pub volume: i32,
}

impl Scale {
    pub const fn new(fine: i32, volume: i32) -> Self {
        Scale { fine, volume }
    }

    pub fn total(self) -> i32 {
        self.fine + self.volume
    }

    pub fn refine(self, k: RefinementStep) -> Scale {
        Scale::new(self.fine + k.fine as i32, self.volume + k.volume as i32)
    }

    /// Componentwise partial order.
    pub fn precedes(self, other: Scale) -> bool {
        self.fine <= other.fine && self.volume <= other.volume
    }
}

/// Refinement offset `k = (k0, k1)` between two scales `n ≺ n + k`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RefinementStep {
    pub fine: u32,
    pub volume: u32,
}

impl RefinementStep {
    pub const ZERO: RefinementStep = RefinementStep { fine: 0, volume: 0 };

    pub const fn new(fine: u32, volume: u32) -> Self {
        RefinementStep { fine, volume }
    }

    pub fn is_zero(self) -> bool {
        self.fine == 0 && self.volume == 0
    }

    pub fn precedes(self, other: RefinementStep) -> bool {
        self.fine <= other.fine && self.volume <= other.volume
    }

    /// `other - self`, if `self ≺ other`.
    pub fn difference(self, other: RefinementStep) -> Option<RefinementStep> {
        self.precedes(other)
            .then(|| RefinementStep::new(other.fine - self.fine, other.volume - self.volume))
    }
}

impl std::ops::Add for RefinementStep {
    type Output = RefinementStep;
    fn add(self, rhs: Self) -> Self {
        RefinementStep::new(self.fine + rhs.fine, self.volume + rhs.volume)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeSpec {
    base: u32,
    dim: usize,
    scale: Scale,
}

impl LatticeSpec {
    pub fn new(base: u32, dim: usize, scale: Scale) -> Result<Self> {
        if base < 3 || base % 2 == 0 {
            return Err(Error::InvalidLattice(format!("base must be odd and >= 3, got {base}")));
        }
        if dim == 0 {
            return Err(Error::InvalidLattice("dimension must be >= 1".into()));
        }
        if scale.total() < 1 {
            return Err(Error::InvalidLattice(format!(
                "need fine + volume >= 1, got ({}, {})",
                scale.fine, scale.volume
            )));
        }
        let spec = LatticeSpec { base, dim, scale };
        spec.checked_cube_count()?;
        Ok(spec)
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    fn checked_side(&self) -> Result<usize> {
        (self.base as usize)
            .checked_pow(self.scale.total() as u32)
            .ok_or_else(|| Error::SizeOverflow(format!("side {}^{}", self.base, self.scale.total())))
    }

    fn checked_cube_count(&self) -> Result<usize> {
        let side = self.checked_side()?;
        side.checked_pow(self.dim as u32)
            .and_then(|t| t.checked_mul(self.dim).map(|_| t))
            .ok_or_else(|| Error::SizeOverflow(format!("cube count {side}^{}", self.dim)))
    }

    /// Cubes per axis.
    pub fn side(&self) -> usize {
        (self.base as usize).pow(self.scale.total() as u32)
    }

    /// Total number of cubes.
    pub fn cube_count(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    pub fn face_count(&self) -> usize {
        self.dim * self.cube_count()
    }

    /// Physical spacing `b^-fine`.
    pub fn spacing(&self) -> f64 {
        (self.base as f64).powi(-self.scale.fine)
    }

    pub fn refined(&self, k: RefinementStep) -> Result<LatticeSpec> {
        LatticeSpec::new(self.base, self.dim, self.scale.refine(k))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CubeIndex {
    pub coords: Vec<usize>,
}

impl CubeIndex {
    pub fn new(coords: Vec<usize>) -> Self {
        CubeIndex { coords }
    }
}

/// The face shared by `base` and `base + e_axis`. Axes are numbered from 0.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaceIndex {
    pub base: CubeIndex,
    pub axis: usize,
}

/// A lattice with precomputed incidence. Cube ids are lexicographic with the first
/// coordinate most significant; face id is `cube_id * d + axis`.
#[derive(Clone, Debug)]
pub struct Torus {
    spec: LatticeSpec,
    side: usize,
    strides: Vec<usize>,
    face_cubes: Vec<[usize; 2]>,
}

impl Torus {
    pub fn new(spec: LatticeSpec) -> Self {
        let d = spec.dim();
        let side = spec.side();
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * side;
        }
        let mut torus = Torus { spec, side, strides, face_cubes: Vec::new() };
        let n = spec.cube_count();
        let mut faces = Vec::with_capacity(n * d);
        for c in 0..n {
            for axis in 0..d {
                faces.push([c, torus.step(c, axis, 1)]);
            }
        }
        torus.face_cubes = faces;
        torus
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn cube_count(&self) -> usize {
        self.face_cubes.len() / self.dim()
    }

    pub fn face_count(&self) -> usize {
        self.face_cubes.len()
    }

    pub fn check_cube(&self, cube: &CubeIndex) -> Result<()> {
        if cube.coords.len() != self.dim() || cube.coords.iter().any(|&c| c >= self.side) {
            return Err(Error::OutOfRange(format!("cube {:?} on side {}", cube.coords, self.side)));
        }
        Ok(())
    }

    pub fn id(&self, cube: &CubeIndex) -> usize {
        cube.coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    pub fn cube(&self, id: usize) -> CubeIndex {
        CubeIndex::new(self.strides.iter().map(|s| (id / s) % self.side).collect())
    }

    pub fn coord(&self, id: usize, axis: usize) -> usize {
        (id / self.strides[axis]) % self.side
    }

    /// Move `delta` steps along `axis`, wrapping around.
    pub fn step(&self, id: usize, axis: usize, delta: i64) -> usize {
        let c = self.coord(id, axis) as i64;
        let nc = (c + delta).rem_euclid(self.side as i64) as usize;
        id - c as usize * self.strides[axis] + nc * self.strides[axis]
    }

    pub fn cubes(&self) -> impl Iterator<Item = CubeIndex> + '_ {
        (0..self.cube_count()).map(|i| self.cube(i))
    }

    pub fn faces(&self) -> impl Iterator<Item = FaceIndex> + '_ {
        let d = self.dim();
        (0..self.face_count()).map(move |f| FaceIndex { base: self.cube(f / d), axis: f % d })
    }

    pub fn face_id(&self, face: &FaceIndex) -> usize {
        self.id(&face.base) * self.dim() + face.axis
    }

    /// Cube ids `(Δ0, Δ1)` joined by a face id.
    pub fn face_cubes(&self, face: usize) -> [usize; 2] {
        self.face_cubes[face]
    }

    pub fn face_table(&self) -> &[[usize; 2]] {
        &self.face_cubes
    }

    pub fn face_incidence(&self, face: &FaceIndex) -> Result<(CubeIndex, CubeIndex)> {
        self.check_cube(&face.base)?;
        if face.axis >= self.dim() {
            return Err(Error::OutOfRange(format!("axis {} in dimension {}", face.axis, self.dim())));
        }
        let [a, b] = self.face_cubes(self.face_id(face));
        Ok((self.cube(a), self.cube(b)))
    }

    /// Face ids on the boundary of a cube, ordered `(c, μ), (c - e_μ, μ)` per axis.
    pub fn boundary_face_ids(&self, id: usize) -> Vec<usize> {
        let d = self.dim();
        (0..d)
            .flat_map(|axis| [id * d + axis, self.step(id, axis, -1) * d + axis])
            .collect()
    }

    pub fn boundary_faces(&self, cube: &CubeIndex) -> Result<Vec<FaceIndex>> {
        self.check_cube(cube)?;
        let d = self.dim();
        Ok(self
            .boundary_face_ids(self.id(cube))
            .into_iter()
            .map(|f| FaceIndex { base: self.cube(f / d), axis: f % d })
            .collect())
    }

    pub fn translate(&self, cube: &CubeIndex, g: &[i64]) -> CubeIndex {
        let l = self.side as i64;
        CubeIndex::new(
            cube.coords
                .iter()
                .zip(g)
                .map(|(&c, &s)| (c as i64 + s).rem_euclid(l) as usize)
                .collect(),
        )
    }

    pub fn translate_id(&self, id: usize, g: &[i64]) -> usize {
        g.iter().enumerate().fold(id, |acc, (axis, &s)| self.step(acc, axis, s))
    }

    /// Euclidean distance between cube centres, torus-minimized per axis, in units of the
    /// physical spacing.
    pub fn distance(&self, a: &CubeIndex, b: &CubeIndex) -> f64 {
        self.spec.spacing() * self.index_distance(a, b)
    }

    /// Distance in lattice units.
    pub fn index_distance(&self, a: &CubeIndex, b: &CubeIndex) -> f64 {
        let l = self.side;
        a.coords
            .iter()
            .zip(&b.coords)
            .map(|(&x, &y)| {
                let dlt = x.abs_diff(y);
                let m = dlt.min(l - dlt) as f64;
                m * m
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Cubes and faces of a lattice in canonical order.
pub fn enumerate_cubes_and_faces(spec: &LatticeSpec) -> (Vec<CubeIndex>, Vec<FaceIndex>) {
    let torus = Torus::new(*spec);
    (torus.cubes().collect(), torus.faces().collect())
}

fn block_len(spec: &LatticeSpec, k: RefinementStep) -> usize {
    (spec.base() as usize).pow(k.fine)
}

/// Centre cube of the fine block covering `cube` after refining by `k`.
pub fn distinguished_subcube(
    coarse: &LatticeSpec,
    cube: &CubeIndex,
    k: RefinementStep,
) -> Result<CubeIndex> {
    Torus::new(*coarse).check_cube(cube)?;
    let m = block_len(coarse, k);
    Ok(CubeIndex::new(cube.coords.iter().map(|&c| c * m + (m - 1) / 2).collect()))
}

/// All fine cubes of the block covering `cube`, in lexicographic order.
pub fn refine_cover(coarse: &LatticeSpec, cube: &CubeIndex, k: RefinementStep) -> Result<Vec<CubeIndex>> {
    Torus::new(*coarse).check_cube(cube)?;
    let m = block_len(coarse, k);
    let d = coarse.dim();
    let count = m.pow(d as u32);
    Ok((0..count)
        .map(|mut r| {
            let mut coords = vec![0; d];
            for i in (0..d).rev() {
                coords[i] = cube.coords[i] * m + r % m;
                r /= m;
            }
            CubeIndex::new(coords)
        })
        .collect())
}

/// Index maps between a coarse lattice and its refinement by `k`.
#[derive(Clone, Debug)]
pub struct Refinement {
    coarse: Torus,
    fine: Torus,
    step: RefinementStep,
    distinguished: Vec<usize>,
    covers: Vec<Vec<usize>>,
    owner: Vec<Option<usize>>,
}

impl Refinement {
    pub fn new(coarse: &LatticeSpec, k: RefinementStep) -> Result<Self> {
        let fine_spec = coarse.refined(k)?;
        let coarse_t = Torus::new(*coarse);
        let fine_t = Torus::new(fine_spec);
        let mut distinguished = Vec::with_capacity(coarse_t.cube_count());
        let mut covers = Vec::with_capacity(coarse_t.cube_count());
        let mut owner = vec![None; fine_t.cube_count()];
        for (cid, cube) in coarse_t.cubes().enumerate() {
            distinguished.push(fine_t.id(&distinguished_subcube(coarse, &cube, k)?));
            let cover: Vec<usize> = refine_cover(coarse, &cube, k)?.iter().map(|c| fine_t.id(c)).collect();
            for &f in &cover {
                owner[f] = Some(cid);
            }
            covers.push(cover);
        }
        Ok(Refinement { coarse: coarse_t, fine: fine_t, step: k, distinguished, covers, owner })
    }

    pub fn coarse(&self) -> &Torus {
        &self.coarse
    }

    pub fn fine(&self) -> &Torus {
        &self.fine
    }

    pub fn step(&self) -> RefinementStep {
        self.step
    }

    /// Fine id of the distinguished cube of each coarse cube.
    pub fn distinguished(&self) -> &[usize] {
        &self.distinguished
    }

    pub fn cover(&self, coarse_id: usize) -> &[usize] {
        &self.covers[coarse_id]
    }

    /// Coarse cube whose block contains a fine cube; `None` for exterior cubes.
    pub fn owner(&self, fine_id: usize) -> Option<usize> {
        self.owner[fine_id]
    }

    /// Coarse cube for which the fine cube is the distinguished one.
    pub fn distinguished_owner(&self, fine_id: usize) -> Option<usize> {
        self.owner[fine_id].filter(|&c| self.distinguished[c] == fine_id)
    }
}

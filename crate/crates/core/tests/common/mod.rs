#![allow(dead_code)]

/// Nearest-neighbour Ising ring `exp(K Σ s_i s_{i+1})` evaluated with explicit 2×2
/// transfer-matrix products.
pub struct IsingRing {
    pub k: f64,
    pub len: usize,
}

type M2 = [[f64; 2]; 2];

fn mul(a: &M2, b: &M2) -> M2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn pow(a: &M2, n: usize) -> M2 {
    (0..n).fold([[1.0, 0.0], [0.0, 1.0]], |acc, _| mul(&acc, a))
}

const SIGMA: M2 = [[1.0, 0.0], [0.0, -1.0]];

impl IsingRing {
    fn t(&self) -> M2 {
        let (p, m) = (self.k.exp(), (-self.k).exp());
        [[p, m], [m, p]]
    }

    pub fn partition(&self) -> f64 {
        let t = pow(&self.t(), self.len);
        t[0][0] + t[1][1]
    }

    pub fn magnetization(&self) -> f64 {
        let t = mul(&SIGMA, &pow(&self.t(), self.len));
        (t[0][0] + t[1][1]) / self.partition()
    }

    /// `⟨s_0 s_r⟩`.
    pub fn two_point(&self, r: usize) -> f64 {
        let t = self.t();
        let m = mul(&mul(&SIGMA, &pow(&t, r)), &mul(&SIGMA, &pow(&t, self.len - r)));
        (m[0][0] + m[1][1]) / self.partition()
    }
}
